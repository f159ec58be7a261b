//! HTTP-like toy target whose request parsing and reply writing go through
//! named internal routines ("http_read"/"http_reply"). With the default
//! socket hooks those routines are inert; wiring them as custom I/O hooks
//! moves the iteration boundaries onto them instead.

use super::{Target, TargetCtx, TargetSpec};
use crate::runtime::{AreaId, AreaKind};

pub fn target_toy_http() -> TargetSpec {
    let mut spec = TargetSpec::new("toy-http", || Box::new(ToyHttp::default()));
    spec.hook_points = vec!["recv", "send", "http_read", "http_reply"];
    spec
}

#[derive(Default)]
pub struct ToyHttp {
    context: AreaId,
}

impl Target for ToyHttp {
    fn start(&mut self, ctx: &mut TargetCtx) {
        self.context = ctx.alloc(128, AreaKind::Static);
        ctx.branch("http_start");
    }

    fn handle(&mut self, ctx: &mut TargetCtx, request: &[u8]) {
        // Raw socket read, then the parsing routine sees the request.
        ctx.io_receive("recv");
        ctx.io_receive("http_read");
        let ok = request.starts_with(b"GET ");
        if ok {
            ctx.branch("http_get");
            ctx.write(self.context, 0, b"last=GET");
        } else {
            ctx.branch("http_bad");
        }
        // The reply routine runs, then the bytes hit the socket.
        ctx.io_send("http_reply");
        ctx.reply(
            "send",
            if ok {
                b"HTTP/1.0 200 OK".as_slice()
            } else {
                b"HTTP/1.0 400 Bad Request".as_slice()
            },
        );
    }
}
