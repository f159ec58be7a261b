//! Target execution over a transport channel: per-message send/reply
//! cycles, timeouts, crash/hang verdicts, and optional memory analysis.
//!
//! Two channels exist. In-process hands request bytes straight to the
//! target. TCP loopback runs the target behind a real socket with u32 LE
//! length-prefix framing; replies to one request are terminated by an
//! acknowledgment frame, and a missing acknowledgment (silent target) puts
//! the client on its reply-timeout path.

use crate::engine::coverage::CoverageMap;
use crate::runtime::HookEvent;
use crate::targets::{CrashSite, TargetCtx, TargetSpec};
use crate::tlsh::TlshDigest;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

pub const DEFAULT_REPLY_TIMEOUT: Duration = Duration::from_millis(50);
pub const DEFAULT_HANG_TIMEOUT: Duration = Duration::from_secs(1);

/// Frame tag closing the reply burst for one request.
const ACK_LEN: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    InProcess,
    TcpLoopback,
}

#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    /// Enables memory snapshots and digest computation (the analysis run).
    pub capture: bool,
    pub channel: ChannelKind,
    pub reply_timeout: Duration,
    pub hang_timeout: Duration,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            capture: false,
            channel: ChannelKind::InProcess,
            reply_timeout: DEFAULT_REPLY_TIMEOUT,
            hang_timeout: DEFAULT_HANG_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Crash(CrashSite),
    Hang,
}

pub struct ExecutionVerdict {
    pub outcome: Outcome,
    pub coverage: CoverageMap,
    /// Per-message reply bursts.
    pub replies: Vec<Vec<Vec<u8>>>,
    /// Per-iteration snapshot digests; present iff `capture` was set.
    pub digests: Option<Vec<TlshDigest>>,
    pub exec_time: Duration,
    pub events: Vec<HookEvent>,
}

pub fn execute_input(
    spec: &TargetSpec,
    messages: &[Vec<u8>],
    opts: &ExecOptions,
) -> ExecutionVerdict {
    match opts.channel {
        ChannelKind::InProcess => run_in_process(spec, messages, opts),
        ChannelKind::TcpLoopback => run_tcp(spec, messages, opts),
    }
}

fn run_in_process(spec: &TargetSpec, messages: &[Vec<u8>], opts: &ExecOptions) -> ExecutionVerdict {
    let start = Instant::now();
    let mut target = spec.instantiate();
    let mut ctx = TargetCtx::new(spec, opts.capture);
    target.start(&mut ctx);
    let mut replies = Vec::with_capacity(messages.len());
    let mut outcome = Outcome::Ok;
    for msg in messages {
        ctx.begin_request();
        target.handle(&mut ctx, msg);
        replies.push(ctx.take_replies());
        if let Some(site) = ctx.crashed() {
            outcome = Outcome::Crash(site);
            break;
        }
        if start.elapsed() > opts.hang_timeout {
            outcome = Outcome::Hang;
            break;
        }
    }
    target.end(&mut ctx);
    let digests = opts.capture.then(|| ctx.rt.finish());
    if !opts.capture {
        // Close the FSM anyway so the event trace is complete.
        ctx.rt.finish();
    }
    ExecutionVerdict {
        outcome,
        coverage: ctx.cov,
        replies,
        digests,
        exec_time: start.elapsed(),
        events: std::mem::take(&mut ctx.rt.events),
    }
}

fn write_frame(s: &mut TcpStream, bytes: &[u8]) -> std::io::Result<()> {
    s.write_all(&(bytes.len() as u32).to_le_bytes())?;
    s.write_all(bytes)
}

/// Reads one frame; Ok(None) on ack frame or clean EOF.
fn read_frame(s: &mut TcpStream) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match s.read_exact(&mut len) {
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        other => other?,
    }
    let len = u32::from_le_bytes(len);
    if len == ACK_LEN {
        return Ok(None);
    }
    let mut buf = vec![0u8; len as usize];
    s.read_exact(&mut buf)?;
    Ok(Some(buf))
}

fn run_tcp(spec: &TargetSpec, messages: &[Vec<u8>], opts: &ExecOptions) -> ExecutionVerdict {
    let start = Instant::now();
    let listener = match TcpListener::bind("127.0.0.1:0") {
        Ok(l) => l,
        Err(e) => return channel_failure(opts, start, &format!("bind: {e}")),
    };
    let addr = listener.local_addr().expect("loopback listener has an address");
    let server_spec = spec.clone();
    let capture = opts.capture;

    // The target runs behind the socket on its own thread; all hooks fire
    // there, and the runtime/coverage come back through the join.
    let server = std::thread::spawn(move || -> std::io::Result<(TargetCtx, Option<CrashSite>)> {
        let (mut sock, _) = listener.accept()?;
        let mut target = server_spec.instantiate();
        let mut ctx = TargetCtx::new(&server_spec, capture);
        target.start(&mut ctx);
        let mut crash = None;
        while let Some(request) = read_frame(&mut sock)? {
            ctx.begin_request();
            target.handle(&mut ctx, &request);
            for reply in ctx.take_replies() {
                write_frame(&mut sock, &reply)?;
            }
            if let Some(site) = ctx.crashed() {
                crash = Some(site);
                break; // crashed server: connection drops, no ack
            }
            if !ctx.ack_suppressed() {
                sock.write_all(&ACK_LEN.to_le_bytes())?;
            }
        }
        target.end(&mut ctx);
        Ok((ctx, crash))
    });

    let client = (|| -> std::io::Result<(Vec<Vec<Vec<u8>>>, bool)> {
        let mut sock = TcpStream::connect(addr)?;
        sock.set_read_timeout(Some(opts.reply_timeout))?;
        let mut all_replies = Vec::with_capacity(messages.len());
        let mut hang = false;
        'session: for msg in messages {
            if write_frame(&mut sock, msg).is_err() {
                // Server went away mid-session (e.g. a crash); keep what we
                // have rather than discarding the whole execution.
                break;
            }
            let mut burst = Vec::new();
            loop {
                match read_frame(&mut sock) {
                    Ok(Some(reply)) => burst.push(reply),
                    Ok(None) => break, // ack or server-side close
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut =>
                    {
                        // Reply never finished: move on to the next message.
                        break;
                    }
                    Err(_) => {
                        all_replies.push(burst);
                        break 'session;
                    }
                }
            }
            all_replies.push(burst);
            if start.elapsed() > opts.hang_timeout {
                hang = true;
                break;
            }
        }
        drop(sock); // close: server loop sees EOF and finishes
        Ok((all_replies, hang))
    })();

    let (replies, hang) = match client {
        Ok(r) => r,
        Err(e) => {
            let _ = server.join();
            return channel_failure(opts, start, &format!("client: {e}"));
        }
    };
    let (mut ctx, crash) = match server.join() {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => return channel_failure(opts, start, &format!("server: {e}")),
        Err(_) => return channel_failure(opts, start, "server thread panicked"),
    };

    let outcome = match crash {
        Some(site) => Outcome::Crash(site),
        None if hang => Outcome::Hang,
        None => Outcome::Ok,
    };
    let digests = capture.then(|| ctx.rt.finish());
    if !capture {
        ctx.rt.finish();
    }
    ExecutionVerdict {
        outcome,
        coverage: ctx.cov,
        replies,
        digests,
        exec_time: start.elapsed(),
        events: std::mem::take(&mut ctx.rt.events),
    }
}

/// Channel breakage is reported as a hang (conservative), logged distinctly.
fn channel_failure(opts: &ExecOptions, start: Instant, what: &str) -> ExecutionVerdict {
    log::error!("channel failure: {what}");
    ExecutionVerdict {
        outcome: Outcome::Hang,
        coverage: CoverageMap::new(),
        replies: Vec::new(),
        digests: opts.capture.then(Vec::new),
        exec_time: start.elapsed(),
        events: Vec::new(),
    }
}
