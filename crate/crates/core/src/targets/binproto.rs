//! A binary TLV protocol with a three-phase handshake held in long-lived
//! state and no response status codes. Messages are [type u8][len u8]
//! [payload]; anything violating that framing resets the session state.

use super::{Target, TargetCtx, TargetSpec};
use crate::runtime::{AreaId, AreaKind};

const CTX_SIZE: usize = 320;
const HELLO_BLOCK: usize = 0; // 64 bytes marker + 64 bytes client hello
const KEY_BLOCK: usize = 128; // 64 bytes marker + 64 bytes key material

const MSG_HELLO: u8 = 0x01;
const MSG_KEY: u8 = 0x02;
const MSG_DATA: u8 = 0x03;

const MARK_HELLO: u8 = 0x41;
const MARK_KEY: u8 = 0x42;

const REPLY_ERR: &[u8] = &[0xEE, 0x00];

pub fn target_binproto() -> TargetSpec {
    // No status codes anywhere in the protocol, so response-code mode has
    // nothing to extract; the spec says so and the engine rejects the mode.
    TargetSpec::new("binproto", || Box::new(BinProto::default()))
}

#[derive(Default)]
pub struct BinProto {
    context: AreaId,
}

#[derive(PartialEq, Clone, Copy, Debug)]
enum Phase {
    Fresh,
    Hello,
    Keyed,
}

impl BinProto {
    fn phase(&self, ctx: &TargetCtx) -> Phase {
        match ctx.read(self.context) {
            Some(c) if c[KEY_BLOCK] == MARK_KEY => Phase::Keyed,
            Some(c) if c[HELLO_BLOCK] == MARK_HELLO => Phase::Hello,
            _ => Phase::Fresh,
        }
    }

    fn reset(&self, ctx: &mut TargetCtx) {
        ctx.fill(self.context, 0, CTX_SIZE, 0);
    }
}

impl Target for BinProto {
    fn start(&mut self, ctx: &mut TargetCtx) {
        self.context = ctx.alloc(CTX_SIZE, AreaKind::Heap);
        ctx.branch("bp_start");
    }

    fn handle(&mut self, ctx: &mut TargetCtx, request: &[u8]) {
        ctx.io_receive("recv");
        // Framing: exactly [type][len][payload of len bytes].
        if request.len() < 2 || request.len() != 2 + request[1] as usize {
            ctx.branch("bp_framing_err");
            self.reset(ctx);
            ctx.reply("send", REPLY_ERR);
            return;
        }
        let (ty, payload) = (request[0], &request[2..]);
        match (ty, self.phase(ctx)) {
            (MSG_HELLO, Phase::Fresh) => {
                ctx.branch("bp_hello");
                ctx.fill(self.context, HELLO_BLOCK, 64, MARK_HELLO);
                ctx.fill(self.context, HELLO_BLOCK + 64, 64, 0);
                ctx.write(self.context, HELLO_BLOCK + 64, &payload[..payload.len().min(64)]);
                ctx.reply("send", &[MSG_HELLO, 1, 0x01]);
            }
            (MSG_KEY, Phase::Hello) => {
                ctx.branch("bp_key");
                ctx.fill(self.context, KEY_BLOCK, 64, MARK_KEY);
                ctx.fill(self.context, KEY_BLOCK + 64, 64, 0);
                ctx.write(self.context, KEY_BLOCK + 64, &payload[..payload.len().min(64)]);
                ctx.reply("send", &[MSG_KEY, 1, 0x01]);
            }
            (MSG_DATA, Phase::Keyed) => {
                ctx.branch("bp_data");
                let mut reply = vec![MSG_DATA, payload.len() as u8];
                reply.extend_from_slice(payload);
                ctx.reply("send", &reply);
            }
            _ => {
                // Out-of-order handshake: back to a fresh session state.
                ctx.branch("bp_out_of_order");
                self.reset(ctx);
                ctx.reply("send", REPLY_ERR);
            }
        }
    }
}
