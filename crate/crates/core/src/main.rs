fn main() {
    env_logger::init();
    std::process::exit(statefuzz::cli::run(std::env::args_os()));
}
