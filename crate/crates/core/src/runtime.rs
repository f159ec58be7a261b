//! Instrumentation runtime the targets call into: allocation tracking, the
//! request/reply iteration state machine, per-iteration snapshots of
//! long-lived memory, and the state-sequence computation at process end.
//!
//! Targets do not expose raw process memory. They register explicit byte
//! areas (opaque ids) and write their protocol state through this runtime,
//! which is what makes the inference algorithms testable in-process.

use crate::mvp::{StateRegistry, DUMMY_STATE};
use crate::tlsh::{pad_stream, TlshDigest, TlshStream};
use std::collections::HashMap;

pub type AreaId = u64;

/// Default minimum size for tracking stack-kind areas.
pub const STACK_AREA_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaKind {
    Heap,
    /// Tracked only when at least as large as the stack threshold.
    Stack,
    /// Globals/TLS analogue: lifetime spans the whole execution.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Fresh,
    Receiving,
    Sending,
}

/// Lifetime metadata of a tracked area. Records outlive deallocation.
#[derive(Debug, Clone)]
pub struct AllocRecord {
    pub iter_no_init: u64,
    /// Iteration of deallocation, -1 while live.
    pub iter_no_end: i64,
    pub addr: AreaId,
    pub size: usize,
    /// Allocation sequence number; fixes the hashing order of dumps.
    pub seq: u64,
}

#[derive(Debug, Clone)]
struct AllocDump {
    iter_no_dumped: u64,
    record: usize,
    contents: Vec<u8>,
}

/// Hook events, recorded for replay tracing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HookEvent {
    ProcessStart,
    Receive { phase_was: Phase },
    Send { phase_was: Phase, iter_closed: Option<u64> },
    Allocate { addr: AreaId, size: usize, tracked: bool },
    Free { addr: AreaId, tracked: bool },
    ProcessEnd { total_iterations: u64 },
}

impl std::fmt::Display for HookEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HookEvent::ProcessStart => write!(f, "process_start"),
            HookEvent::Receive { phase_was } => write!(f, "receive phase_was={phase_was:?}"),
            HookEvent::Send { phase_was, iter_closed } => match iter_closed {
                Some(i) => write!(f, "send phase_was={phase_was:?} iter_closed={i}"),
                None => write!(f, "send phase_was={phase_was:?} noop"),
            },
            HookEvent::Allocate { addr, size, tracked } => {
                write!(f, "allocate addr={addr} size={size} tracked={tracked}")
            }
            HookEvent::Free { addr, tracked } => {
                write!(f, "free addr={addr} tracked={tracked}")
            }
            HookEvent::ProcessEnd { total_iterations } => {
                write!(f, "process_end total_iterations={total_iterations}")
            }
        }
    }
}

pub struct RuntimeState {
    records: Vec<AllocRecord>,
    /// addr -> index into `records`, live tracked areas only.
    live: HashMap<AreaId, usize>,
    /// Live contents of every registered area (tracked or not).
    areas: HashMap<AreaId, Vec<u8>>,
    dumps: Vec<AllocDump>,
    phase: Phase,
    current_iter_no: u64,
    total_iterations: u64,
    next_seq: u64,
    /// When false, snapshot capture and hashing are skipped entirely
    /// (the throughput path for executions that need no analysis).
    pub capture: bool,
    pub stack_threshold: usize,
    pub events: Vec<HookEvent>,
    /// Directory for the optional raw-dump spool (`iter_<n>.bin` files with
    /// the padded per-iteration snapshot bytes, for offline oracle hashing).
    pub spool_dir: Option<std::path::PathBuf>,
}

impl Default for RuntimeState {
    fn default() -> Self {
        Self::new()
    }
}

impl RuntimeState {
    pub fn new() -> Self {
        RuntimeState {
            records: Vec::new(),
            live: HashMap::new(),
            areas: HashMap::new(),
            dumps: Vec::new(),
            phase: Phase::Fresh,
            current_iter_no: 0,
            total_iterations: 0,
            next_seq: 0,
            capture: true,
            stack_threshold: STACK_AREA_THRESHOLD,
            events: Vec::new(),
            spool_dir: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn current_iter_no(&self) -> u64 {
        self.current_iter_no
    }

    pub fn records(&self) -> &[AllocRecord] {
        &self.records
    }

    /// Resets to a fresh runtime; safe to call again for re-execution.
    pub fn on_process_start(&mut self) {
        let capture = self.capture;
        let stack_threshold = self.stack_threshold;
        let spool_dir = self.spool_dir.take();
        *self = RuntimeState::new();
        self.capture = capture;
        self.stack_threshold = stack_threshold;
        self.spool_dir = spool_dir;
        self.events.push(HookEvent::ProcessStart);
    }

    pub fn on_allocate(&mut self, addr: AreaId, size: usize, kind: AreaKind) {
        self.areas.insert(addr, vec![0u8; size]);
        let track = self.current_iter_no == 0
            && match kind {
                AreaKind::Heap | AreaKind::Static => true,
                AreaKind::Stack => size >= self.stack_threshold,
            };
        if track {
            if let Some(&old) = self.live.get(&addr) {
                // Target reused a live id; tolerate it but keep the trace.
                log::warn!("duplicate live allocation of area {addr}, replacing record {old}");
            }
            let idx = self.records.len();
            self.records.push(AllocRecord {
                iter_no_init: self.current_iter_no,
                iter_no_end: -1,
                addr,
                size,
                seq: self.next_seq,
            });
            self.next_seq += 1;
            self.live.insert(addr, idx);
        }
        self.events.push(HookEvent::Allocate { addr, size, tracked: track });
    }

    pub fn on_free(&mut self, addr: AreaId) {
        self.areas.remove(&addr);
        let tracked = match self.live.remove(&addr) {
            Some(idx) => {
                self.records[idx].iter_no_end = self.current_iter_no as i64;
                true
            }
            None => false,
        };
        self.events.push(HookEvent::Free { addr, tracked });
    }

    pub fn on_receive(&mut self) {
        let phase_was = self.phase;
        match self.phase {
            Phase::Fresh | Phase::Sending => self.phase = Phase::Receiving,
            Phase::Receiving => {}
        }
        self.events.push(HookEvent::Receive { phase_was });
    }

    /// The first send after receives closes the iteration: the snapshot is
    /// taken and the iteration counter moves on. Sends in any other phase
    /// (banners, consecutive sends) are no-ops.
    pub fn on_send(&mut self) {
        let phase_was = self.phase;
        let mut iter_closed = None;
        if self.phase == Phase::Receiving {
            self.phase = Phase::Sending;
            self.current_iter_no += 1;
            iter_closed = Some(self.current_iter_no);
            if self.capture {
                self.dump_current_state();
            }
        }
        self.events.push(HookEvent::Send { phase_was, iter_closed });
    }

    /// Snapshots every live tracked area, in allocation order. Dump
    /// iteration numbers are 1-based: the counter has already advanced.
    fn dump_current_state(&mut self) {
        let mut live: Vec<usize> = self.live.values().copied().collect();
        live.sort_unstable_by_key(|&idx| self.records[idx].seq);
        for idx in live {
            let rec = &self.records[idx];
            let contents = self.areas.get(&rec.addr).cloned().unwrap_or_default();
            debug_assert_eq!(contents.len(), rec.size);
            self.dumps.push(AllocDump {
                iter_no_dumped: self.current_iter_no,
                record: idx,
                contents,
            });
        }
    }

    pub fn write(&mut self, addr: AreaId, offset: usize, data: &[u8]) {
        if let Some(area) = self.areas.get_mut(&addr) {
            let end = (offset + data.len()).min(area.len());
            if offset < end {
                area[offset..end].copy_from_slice(&data[..end - offset]);
            }
        }
    }

    pub fn fill(&mut self, addr: AreaId, offset: usize, len: usize, value: u8) {
        if let Some(area) = self.areas.get_mut(&addr) {
            let end = (offset + len).min(area.len());
            for b in &mut area[offset..end] {
                *b = value;
            }
        }
    }

    pub fn read_area(&self, addr: AreaId) -> Option<&[u8]> {
        self.areas.get(&addr).map(|v| v.as_slice())
    }

    /// Closes the run: fixes `total_iterations` and computes one digest per
    /// completed iteration from the long-lived dumps. Iterations with no
    /// surviving dumps yield an invalid digest (mapped to state 0 later).
    pub fn finish(&mut self) -> Vec<TlshDigest> {
        self.total_iterations = self.current_iter_no;
        self.events.push(HookEvent::ProcessEnd {
            total_iterations: self.total_iterations,
        });
        if !self.capture {
            return Vec::new();
        }
        self.digest_sequence()
    }

    fn long_lived(&self, record: usize) -> bool {
        let r = &self.records[record];
        if r.iter_no_init > 0 {
            return false;
        }
        // Freed before the final iteration completed => short-lived.
        !(r.iter_no_end != -1 && (r.iter_no_end as u64) < self.total_iterations)
    }

    fn digest_sequence(&self) -> Vec<TlshDigest> {
        let total = self.total_iterations;
        let mut out = Vec::with_capacity(total as usize);
        for iter in 1..=total {
            let mut stream = TlshStream::new();
            let mut spool: Vec<u8> = Vec::new();
            let mut any = false;
            for d in self.dumps.iter().filter(|d| d.iter_no_dumped == iter) {
                if !self.long_lived(d.record) {
                    continue; // short-lived data never feed the state hash
                }
                stream.update(&d.contents);
                if self.spool_dir.is_some() {
                    spool.extend_from_slice(&d.contents);
                }
                any = true;
            }
            if !any {
                out.push(TlshDigest::invalid());
                continue;
            }
            pad_stream(&mut stream);
            if let Some(dir) = &self.spool_dir {
                if spool.len() < crate::tlsh::MIN_INPUT_LEN as usize {
                    spool.resize(crate::tlsh::MIN_INPUT_LEN as usize, 0);
                }
                let _ = std::fs::create_dir_all(dir);
                let _ = std::fs::write(dir.join(format!("iter_{iter}.bin")), &spool);
            }
            out.push(stream.finalize());
        }
        out
    }

    /// Runs the digest computation and maps each per-iteration digest to a
    /// state id through the shared registry.
    pub fn on_process_end(&mut self, registry: &mut StateRegistry, epsilon: u32) -> Vec<u32> {
        let digests = self.finish();
        assign_states(&digests, registry, epsilon)
    }
}

/// Maps a digest sequence onto state ids; invalid digests become state 0.
pub fn assign_states(
    digests: &[TlshDigest],
    registry: &mut StateRegistry,
    epsilon: u32,
) -> Vec<u32> {
    digests
        .iter()
        .map(|d| {
            if d.valid {
                registry.get_state_id(d, epsilon)
            } else {
                DUMMY_STATE
            }
        })
        .collect()
}
