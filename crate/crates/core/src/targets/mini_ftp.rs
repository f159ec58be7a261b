//! A miniature FTP-like server. Protocol state lives in one long-lived
//! context area registered at session start; login progression, working
//! directory, and the data-connection argument are all written there as
//! chunky byte blocks so memory inference can tell the phases apart.
//!
//! One bug is planted deep in the state machine: STOR with an argument
//! longer than 64 bytes overruns its name buffer, but only when the
//! session is authenticated and a PORT command already succeeded.

use super::{PlantedBug, Target, TargetCtx, TargetSpec};
use crate::runtime::{AreaId, AreaKind};

const CTX_SIZE: usize = 512;
const USER_BLOCK: usize = 0; // 64 bytes: username
const STAGE_BLOCK: usize = 64; // 64 bytes: 0x11 after USER, 0x22 after PASS
const CWD_BLOCK: usize = 128; // 64 bytes: current directory
const DIR_BLOCK: usize = 192; // 64 bytes: last created directory
const PORT_BLOCK: usize = 256; // 32 bytes marker + 32 bytes argument text

const STAGE_USER: u8 = 0x11;
const STAGE_AUTH: u8 = 0x22;
const PORT_MARK: u8 = 0x33;

/// Maximum STOR argument the (simulated) name buffer can hold.
const STOR_NAME_MAX: usize = 64;

pub const BUG_STOR_OVERFLOW: u32 = 1;

pub fn target_mini_ftp() -> TargetSpec {
    let mut spec = TargetSpec::new("mini-ftp", || Box::new(MiniFtp::default()));
    spec.supports_response_codes = true;
    spec.response_code = Some(ftp_code);
    spec.planted_bugs = vec![PlantedBug {
        bug_id: BUG_STOR_OVERFLOW,
        trigger: "STOR with >64-byte argument while authenticated and after PORT",
    }];
    spec
}

/// Leading three ASCII digits of a reply, e.g. "230 Logged in" -> 230.
fn ftp_code(reply: &[u8]) -> Option<u32> {
    if reply.len() < 3 || !reply[..3].iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(&reply[..3]).ok()?.parse().ok()
}

#[derive(Default)]
pub struct MiniFtp {
    context: AreaId,
    closed: bool,
}

impl MiniFtp {
    fn stage(&self, ctx: &TargetCtx) -> u8 {
        ctx.read(self.context).map_or(0, |c| c[STAGE_BLOCK])
    }

    fn port_set(&self, ctx: &TargetCtx) -> bool {
        ctx.read(self.context).is_some_and(|c| c[PORT_BLOCK] == PORT_MARK)
    }

    fn write_block(&self, ctx: &mut TargetCtx, offset: usize, data: &[u8]) {
        ctx.fill(self.context, offset, 64, 0);
        ctx.write(self.context, offset, &data[..data.len().min(64)]);
    }
}

impl Target for MiniFtp {
    fn start(&mut self, ctx: &mut TargetCtx) {
        self.context = ctx.alloc(CTX_SIZE, AreaKind::Heap);
        ctx.branch("ftp_start");
    }

    fn handle(&mut self, ctx: &mut TargetCtx, request: &[u8]) {
        ctx.io_receive("recv");
        // Per-request scratch: allocated and freed within the iteration, so
        // the long-lived filter must never let it into a state hash.
        let scratch = ctx.alloc(128, AreaKind::Heap);
        ctx.write(scratch, 0, &request[..request.len().min(128)]);
        ctx.free(scratch);

        if self.closed {
            ctx.branch("ftp_closed");
            ctx.reply("send", b"421 Service closed");
            return;
        }

        let line = request.strip_suffix(b"\r\n").unwrap_or(request);
        let (verb, arg) = match line.iter().position(|&b| b == b' ') {
            Some(i) => (&line[..i], &line[i + 1..]),
            None => (line, &line[..0]),
        };

        match verb {
            b"USER" if !arg.is_empty() => {
                ctx.branch("cmd_user");
                self.write_block(ctx, USER_BLOCK, arg);
                ctx.fill(self.context, STAGE_BLOCK, 64, STAGE_USER);
                ctx.reply("send", b"331 Password required");
            }
            b"PASS" => {
                if self.stage(ctx) == STAGE_USER {
                    ctx.branch("cmd_pass_ok");
                    ctx.fill(self.context, STAGE_BLOCK, 64, STAGE_AUTH);
                    ctx.reply("send", b"230 Logged in");
                } else {
                    ctx.branch("cmd_pass_bad");
                    ctx.reply("send", b"503 Login with USER first");
                }
            }
            b"SYST" => {
                ctx.branch("cmd_syst");
                ctx.reply("send", b"215 UNIX Type: L8");
            }
            b"NOOP" => {
                ctx.branch("cmd_noop");
                ctx.reply("send", b"200 OK");
            }
            b"PWD" => {
                ctx.branch("cmd_pwd");
                let cwd: Vec<u8> = ctx
                    .read(self.context)
                    .map(|c| c[CWD_BLOCK..CWD_BLOCK + 64].to_vec())
                    .unwrap_or_default();
                let end = cwd.iter().position(|&b| b == 0).unwrap_or(cwd.len());
                let mut reply = b"257 \"/".to_vec();
                reply.extend_from_slice(&cwd[..end]);
                reply.push(b'"');
                ctx.reply("send", &reply);
            }
            b"CWD" if !arg.is_empty() => {
                if self.stage(ctx) == STAGE_AUTH {
                    ctx.branch("cmd_cwd_ok");
                    self.write_block(ctx, CWD_BLOCK, arg);
                    ctx.reply("send", b"250 Directory changed");
                } else {
                    ctx.branch("cmd_cwd_denied");
                    ctx.reply("send", b"530 Not logged in");
                }
            }
            b"MKD" if !arg.is_empty() => {
                if self.stage(ctx) == STAGE_AUTH {
                    ctx.branch("cmd_mkd_ok");
                    self.write_block(ctx, DIR_BLOCK, arg);
                    ctx.reply("send", b"257 Directory created");
                } else {
                    ctx.branch("cmd_mkd_denied");
                    ctx.reply("send", b"530 Not logged in");
                }
            }
            b"PORT" if !arg.is_empty() && arg.iter().all(|b| b.is_ascii_digit() || *b == b',') => {
                if self.stage(ctx) == STAGE_AUTH {
                    ctx.branch("cmd_port_ok");
                    // The argument text itself lands in the context, so its
                    // exact digits vary between inputs: deliberate
                    // near-duplicate states the hashing has to absorb.
                    ctx.fill(self.context, PORT_BLOCK, 32, PORT_MARK);
                    ctx.fill(self.context, PORT_BLOCK + 32, 32, 0);
                    ctx.write(self.context, PORT_BLOCK + 32, &arg[..arg.len().min(32)]);
                    ctx.reply("send", b"200 PORT command successful");
                } else {
                    ctx.branch("cmd_port_denied");
                    ctx.reply("send", b"530 Not logged in");
                }
            }
            b"STOR" if !arg.is_empty() => {
                if self.stage(ctx) != STAGE_AUTH {
                    ctx.branch("cmd_stor_denied");
                    ctx.reply("send", b"530 Not logged in");
                } else if !self.port_set(ctx) {
                    ctx.branch("cmd_stor_noport");
                    ctx.reply("send", b"425 Use PORT first");
                } else {
                    // Coverage gradient over the argument length, so the
                    // mutation loop gets feedback as it grows the name.
                    let len_bucket = (arg.len().min(STOR_NAME_MAX + 1) + 15) / 16;
                    ctx.branch(&format!("stor_len_{len_bucket}"));
                    if arg.len() > STOR_NAME_MAX {
                        ctx.crash(BUG_STOR_OVERFLOW, "stor_name_overflow");
                        return;
                    }
                    ctx.branch("cmd_stor_ok");
                    ctx.reply("send", b"150 Opening data connection");
                    ctx.reply("send", b"226 Transfer complete");
                }
            }
            b"QUIT" => {
                ctx.branch("cmd_quit");
                self.closed = true;
                ctx.reply("send", b"221 Goodbye");
            }
            _ => {
                ctx.branch("cmd_bad");
                ctx.reply("send", b"500 Syntax error");
            }
        }
    }
}
