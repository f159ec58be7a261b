//! Simulated message-oriented servers and the hook API they call into.
//!
//! A target is a single-session server. It registers its long-lived memory
//! as explicit byte areas through [`TargetCtx`] (area ids are opaque — raw
//! process memory is never exposed) and reports request/reply boundaries,
//! coverage edges, and planted-bug triggers through the same context.

mod binproto;
mod echo;
mod mini_ftp;
mod toy_http;

pub use binproto::target_binproto;
pub use echo::target_echo;
pub use mini_ftp::target_mini_ftp;
pub use toy_http::target_toy_http;

use crate::engine::coverage::{site_hash, CoverageMap};
use crate::runtime::{AreaId, AreaKind, RuntimeState};
use std::collections::BTreeSet;

/// One simulated server session.
pub trait Target: Send {
    /// Session startup: register long-lived areas, send banners.
    fn start(&mut self, ctx: &mut TargetCtx);
    /// Process one request message.
    fn handle(&mut self, ctx: &mut TargetCtx, request: &[u8]);
    /// Session teardown.
    fn end(&mut self, _ctx: &mut TargetCtx) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrashSite {
    pub bug_id: u32,
    pub site: u32,
}

impl CrashSite {
    pub fn group_key(&self) -> String {
        format!("bug{:02}_{:08x}", self.bug_id, self.site)
    }
}

/// Per-execution context handed to a target: runtime hooks, coverage map,
/// reply collection, and the active I/O hook names.
pub struct TargetCtx {
    pub rt: RuntimeState,
    pub cov: CoverageMap,
    prev_loc: u16,
    replies: Vec<Vec<u8>>,
    crash: Option<CrashSite>,
    ack_suppressed: bool,
    recv_hooks: BTreeSet<String>,
    send_hooks: BTreeSet<String>,
    next_area: AreaId,
}

impl TargetCtx {
    pub fn new(spec: &TargetSpec, capture: bool) -> Self {
        let mut rt = RuntimeState::new();
        rt.capture = capture;
        rt.on_process_start();
        TargetCtx {
            rt,
            cov: CoverageMap::new(),
            prev_loc: 0,
            replies: Vec::new(),
            crash: None,
            ack_suppressed: false,
            recv_hooks: spec.recv_hooks.clone(),
            send_hooks: spec.send_hooks.clone(),
            next_area: 1,
        }
    }

    /// Fires the receive boundary iff `name` is an active receive hook.
    pub fn io_receive(&mut self, name: &str) {
        if self.recv_hooks.contains(name) {
            self.rt.on_receive();
        }
    }

    /// Fires the send boundary iff `name` is an active send hook.
    pub fn io_send(&mut self, name: &str) {
        if self.send_hooks.contains(name) {
            self.rt.on_send();
        }
    }

    /// Records reply bytes for the current request without an I/O event.
    pub fn push_reply(&mut self, bytes: &[u8]) {
        self.replies.push(bytes.to_vec());
    }

    /// Send boundary plus reply bytes in one call — the common case.
    pub fn reply(&mut self, name: &str, bytes: &[u8]) {
        self.io_send(name);
        self.push_reply(bytes);
    }

    pub fn alloc(&mut self, size: usize, kind: AreaKind) -> AreaId {
        let id = self.next_area;
        self.next_area += 1;
        self.rt.on_allocate(id, size, kind);
        id
    }

    pub fn free(&mut self, id: AreaId) {
        self.rt.on_free(id);
    }

    pub fn write(&mut self, id: AreaId, offset: usize, data: &[u8]) {
        self.rt.write(id, offset, data);
    }

    pub fn fill(&mut self, id: AreaId, offset: usize, len: usize, value: u8) {
        self.rt.fill(id, offset, len, value);
    }

    pub fn read(&self, id: AreaId) -> Option<&[u8]> {
        self.rt.read_area(id)
    }

    /// Marks one control-flow edge hit at a named site.
    pub fn branch(&mut self, site: &str) {
        let cur = site_hash(site);
        self.cov.hit((self.prev_loc >> 1) ^ cur);
        self.prev_loc = cur;
    }

    /// Signals a planted-bug trigger; the session aborts after this request.
    pub fn crash(&mut self, bug_id: u32, site: &str) {
        self.crash = Some(CrashSite {
            bug_id,
            site: site_hash(site) as u32,
        });
    }

    pub fn crashed(&self) -> Option<CrashSite> {
        self.crash
    }

    /// Suppresses the engine's end-of-request acknowledgment on the TCP
    /// channel, forcing the client onto its reply-timeout path. Used by
    /// silent test fixtures.
    pub fn suppress_ack(&mut self) {
        self.ack_suppressed = true;
    }

    /// Clears per-request reply state; the engine calls this before each
    /// message is handed to the target.
    pub fn begin_request(&mut self) {
        self.ack_suppressed = false;
        self.replies.clear();
    }

    pub fn take_replies(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.replies)
    }

    pub fn ack_suppressed(&self) -> bool {
        self.ack_suppressed
    }
}

#[derive(Debug, Clone)]
pub struct PlantedBug {
    pub bug_id: u32,
    pub trigger: &'static str,
}

/// Factory and capabilities of one registered target.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub name: &'static str,
    pub supports_response_codes: bool,
    /// Reply bytes → protocol response code, where the protocol has one.
    pub response_code: Option<fn(&[u8]) -> Option<u32>>,
    pub planted_bugs: Vec<PlantedBug>,
    /// I/O routine names that can be wired as custom hooks.
    pub hook_points: Vec<&'static str>,
    pub recv_hooks: BTreeSet<String>,
    pub send_hooks: BTreeSet<String>,
    factory: fn() -> Box<dyn Target>,
}

impl TargetSpec {
    pub fn new(name: &'static str, factory: fn() -> Box<dyn Target>) -> Self {
        TargetSpec {
            name,
            supports_response_codes: false,
            response_code: None,
            planted_bugs: Vec::new(),
            hook_points: vec!["recv", "send"],
            recv_hooks: BTreeSet::from(["recv".to_string()]),
            send_hooks: BTreeSet::from(["send".to_string()]),
            factory,
        }
    }

    pub fn instantiate(&self) -> Box<dyn Target> {
        (self.factory)()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown hook point {name:?}; available: {available:?}")]
pub struct UnknownHook {
    pub name: String,
    pub available: Vec<&'static str>,
}

/// Rewires the iteration FSM to named internal I/O routines. Non-empty
/// lists replace the corresponding default set; empty lists leave it
/// unchanged.
pub fn register_custom_io_hooks(
    mut spec: TargetSpec,
    send_fn_names: &[&str],
    recv_fn_names: &[&str],
) -> Result<TargetSpec, UnknownHook> {
    for name in send_fn_names.iter().chain(recv_fn_names.iter()) {
        if !spec.hook_points.contains(name) {
            return Err(UnknownHook {
                name: name.to_string(),
                available: spec.hook_points.clone(),
            });
        }
    }
    if !send_fn_names.is_empty() {
        spec.send_hooks = send_fn_names.iter().map(|s| s.to_string()).collect();
    }
    if !recv_fn_names.is_empty() {
        spec.recv_hooks = recv_fn_names.iter().map(|s| s.to_string()).collect();
    }
    Ok(spec)
}

pub fn registry() -> Vec<TargetSpec> {
    vec![
        target_mini_ftp(),
        target_echo(),
        target_binproto(),
        target_toy_http(),
    ]
}

pub fn lookup(name: &str) -> Option<TargetSpec> {
    registry().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names() {
        let names: Vec<&str> = registry().iter().map(|s| s.name).collect();
        assert!(names.contains(&"mini-ftp"));
        assert!(names.contains(&"echo"));
        assert!(names.contains(&"binproto"));
        assert!(lookup("no-such-target").is_none());
    }

    #[test]
    fn custom_hooks_validate_names() {
        let spec = target_toy_http();
        let err = register_custom_io_hooks(spec.clone(), &["nope"], &[]).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert!(err.to_string().contains("recv"));

        let wired = register_custom_io_hooks(spec, &["http_reply"], &["http_read"]).unwrap();
        assert!(wired.send_hooks.contains("http_reply"));
        assert!(!wired.send_hooks.contains("send"));
    }

    #[test]
    fn empty_hook_lists_keep_defaults() {
        let spec = target_echo();
        let same = register_custom_io_hooks(spec.clone(), &[], &[]).unwrap();
        assert_eq!(same.send_hooks, spec.send_hooks);
        assert_eq!(same.recv_hooks, spec.recv_hooks);
    }

    #[test]
    fn group_key_depends_on_site_not_input() {
        let a = CrashSite { bug_id: 1, site: 42 };
        let b = CrashSite { bug_id: 1, site: 42 };
        let c = CrashSite { bug_id: 2, site: 42 };
        assert_eq!(a.group_key(), b.group_key());
        assert_ne!(a.group_key(), c.group_key());
    }
}
