//! Echo server: replies with the request bytes, and its long-lived context
//! is written only at startup. Every iteration therefore snapshots the same
//! bytes and the inferred machine collapses to the dummy state plus one
//! real state.

use super::{Target, TargetCtx, TargetSpec};
use crate::runtime::{AreaId, AreaKind};

pub fn target_echo() -> TargetSpec {
    TargetSpec::new("echo", || Box::new(Echo::default()))
}

#[derive(Default)]
pub struct Echo {
    context: AreaId,
}

impl Target for Echo {
    fn start(&mut self, ctx: &mut TargetCtx) {
        self.context = ctx.alloc(256, AreaKind::Static);
        ctx.write(self.context, 0, b"echo session context");
        ctx.branch("echo_start");
    }

    fn handle(&mut self, ctx: &mut TargetCtx, request: &[u8]) {
        ctx.io_receive("recv");
        if request.is_empty() {
            ctx.branch("echo_empty");
        } else {
            ctx.branch("echo_reply");
        }
        ctx.reply("send", request);
    }
}
