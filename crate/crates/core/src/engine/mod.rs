//! The campaign orchestrator: seed dry-run, threshold calibration, the
//! fuzzing loop (state selection → mutation → execution), lazy
//! post-execution analysis, crash deduplication, and artifact output.

pub mod corpus;
pub mod coverage;
pub mod exec;

pub use corpus::{Corpus, CorpusEntry};
pub use exec::{execute_input, ChannelKind, ExecOptions, ExecutionVerdict, Outcome};

use crate::calibration::{calibrate, CalibrationConfig, CalibrationReport, EpsilonState};
use crate::ipsm::{Ipsm, IpsmExport};
use crate::mutation::{
    stacked_mutation, DeterministicPass, Dictionary, FuzzInput, StackedConfig,
};
use crate::mvp::StateRegistry;
use crate::targets::{CrashSite, TargetSpec};
use coverage::VirginMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Memory-snapshot state inference guides selection.
    Stateful,
    /// AFL-style queue cycling; all state logic bypassed.
    Stateless,
    /// State ids come from the target's response-code extractor.
    ResponseCode,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Budget {
    pub execs: Option<u64>,
    pub wall: Option<Duration>,
}

#[derive(Clone)]
pub struct EngineConfig {
    pub mode: Mode,
    pub budget: Budget,
    pub rng_seed: u64,
    pub channel: ChannelKind,
    /// Skips calibration and fixes the threshold.
    pub epsilon_override: Option<u32>,
    pub calibration: CalibrationConfig,
    pub dictionary: Dictionary,
    pub stacked: StackedConfig,
    /// Stacked mutants generated per queue selection.
    pub stacked_batch: usize,
    /// Messages longer than this skip the deterministic pass (it walks
    /// every bit; unbounded messages would eat the whole budget).
    pub det_pass_max_message_len: usize,
    pub reply_timeout: Duration,
    pub hang_timeout: Duration,
    pub out_dir: Option<PathBuf>,
    pub stats_interval: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: Mode::Stateful,
            budget: Budget {
                execs: Some(10_000),
                wall: None,
            },
            rng_seed: 1,
            channel: ChannelKind::InProcess,
            epsilon_override: None,
            calibration: CalibrationConfig::default(),
            dictionary: Dictionary::empty(),
            stacked: StackedConfig::default(),
            stacked_batch: 64,
            det_pass_max_message_len: 128,
            reply_timeout: exec::DEFAULT_REPLY_TIMEOUT,
            hang_timeout: exec::DEFAULT_HANG_TIMEOUT,
            out_dir: None,
            stats_interval: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrashGroup {
    pub group_key: String,
    pub site: CrashSite,
    pub count: u64,
    /// Replay did not reproduce the same crash site.
    pub flaky: bool,
    /// Fuzz-execution counter value when first seen.
    pub first_exec: u64,
    pub reproducer: FuzzInput,
}

#[derive(Debug)]
pub struct CampaignReport {
    pub execs: u64,
    /// Analysis re-executions (each corresponds to a saved corpus entry).
    pub analysis_runs: u64,
    pub hangs: u64,
    pub corpus_entries: usize,
    pub states: usize,
    pub transitions: usize,
    pub crash_groups: Vec<CrashGroup>,
    pub first_crash_exec: Option<u64>,
    pub epsilon: u32,
    pub calibration: Option<CalibrationReport>,
    pub elapsed: Duration,
    /// Sum of fuzz-execution wall times (analysis runs excluded).
    pub total_exec_time: Duration,
    pub ipsm: IpsmExport,
    /// State sequence of each accepted seed, in seed order.
    pub seed_state_seqs: Vec<Vec<u32>>,
}

impl CampaignReport {
    pub fn unique_crashes(&self) -> usize {
        self.crash_groups.iter().filter(|g| !g.flaky).count()
    }
}

#[derive(Serialize)]
struct StatsRecord {
    t: f64,
    execs: u64,
    execs_per_sec: f64,
    corpus: usize,
    states: usize,
    transitions: usize,
    crashes_unique: usize,
    epsilon: u32,
}

pub fn run_campaign(
    spec: &TargetSpec,
    seeds: &[FuzzInput],
    cfg: &EngineConfig,
) -> anyhow::Result<CampaignReport> {
    if cfg.mode == Mode::ResponseCode && !spec.supports_response_codes {
        anyhow::bail!("target {} lacks response codes", spec.name);
    }
    if seeds.is_empty() {
        anyhow::bail!("no seeds provided");
    }
    let mut c = Campaign::new(spec.clone(), cfg.clone())?;
    c.run(seeds)
}

struct Campaign {
    spec: TargetSpec,
    cfg: EngineConfig,
    rng: ChaCha8Rng,
    registry: StateRegistry,
    ipsm: Ipsm,
    corpus: Corpus,
    virgin: VirginMap,
    eps: EpsilonState,
    crash_groups: Vec<CrashGroup>,
    det_done: HashSet<(u64, usize)>,
    cycle_cursor: usize,
    execs: u64,
    analysis_runs: u64,
    hangs: u64,
    first_crash_exec: Option<u64>,
    total_exec_time: Duration,
    started: Instant,
    stats_file: Option<std::fs::File>,
    last_stats: Instant,
}

impl Campaign {
    fn new(spec: TargetSpec, cfg: EngineConfig) -> anyhow::Result<Self> {
        let stats_file = match &cfg.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("queue"))?;
                std::fs::create_dir_all(dir.join("crashes"))?;
                Some(std::fs::File::create(dir.join("stats.jsonl"))?)
            }
            None => None,
        };
        Ok(Campaign {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            registry: StateRegistry::new(),
            ipsm: Ipsm::new(),
            corpus: Corpus::new(),
            virgin: VirginMap::new(),
            eps: EpsilonState::new(cfg.calibration.eps_min),
            crash_groups: Vec::new(),
            det_done: HashSet::new(),
            cycle_cursor: 0,
            execs: 0,
            analysis_runs: 0,
            hangs: 0,
            first_crash_exec: None,
            total_exec_time: Duration::ZERO,
            started: Instant::now(),
            stats_file,
            last_stats: Instant::now(),
            spec,
            cfg,
        })
    }

    fn exec_opts(&self, capture: bool) -> ExecOptions {
        ExecOptions {
            capture,
            channel: self.cfg.channel,
            reply_timeout: self.cfg.reply_timeout,
            hang_timeout: self.cfg.hang_timeout,
        }
    }

    fn run(&mut self, seeds: &[FuzzInput]) -> anyhow::Result<CampaignReport> {
        let good_seeds = self.dry_run(seeds)?;
        let calibration = self.calibrate_epsilon(&good_seeds)?;
        let seed_state_seqs = self.ingest_seeds(&good_seeds);
        self.emit_stats(true);

        while !self.budget_exhausted() {
            self.fuzz_round();
        }

        self.emit_stats(true);
        if let Some(dir) = &self.cfg.out_dir {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs();
            std::fs::write(dir.join(format!("ipsm-{ts}.dot")), self.ipsm.to_dot())?;
        }

        Ok(CampaignReport {
            execs: self.execs,
            analysis_runs: self.analysis_runs,
            hangs: self.hangs,
            corpus_entries: self.corpus.len(),
            states: self.ipsm.n_states(),
            transitions: self.ipsm.n_transitions(),
            crash_groups: std::mem::take(&mut self.crash_groups),
            first_crash_exec: self.first_crash_exec,
            epsilon: self.eps.epsilon,
            calibration,
            elapsed: self.started.elapsed(),
            total_exec_time: self.total_exec_time,
            ipsm: self.ipsm.export(),
            seed_state_seqs,
        })
    }

    /// Rejects seeds that crash or hang outright.
    fn dry_run(&mut self, seeds: &[FuzzInput]) -> anyhow::Result<Vec<FuzzInput>> {
        let opts = self.exec_opts(false);
        let mut good = Vec::new();
        for (i, seed) in seeds.iter().enumerate() {
            let v = execute_input(&self.spec, &seed.messages, &opts);
            match v.outcome {
                Outcome::Ok => good.push(seed.clone()),
                other => log::warn!("seed {i} rejected: {other:?}"),
            }
        }
        if good.is_empty() {
            anyhow::bail!("all {} seeds rejected during dry run", seeds.len());
        }
        Ok(good)
    }

    fn calibrate_epsilon(
        &mut self,
        seeds: &[FuzzInput],
    ) -> anyhow::Result<Option<CalibrationReport>> {
        if self.cfg.mode != Mode::Stateful {
            return Ok(None);
        }
        if let Some(eps) = self.cfg.epsilon_override {
            self.eps = EpsilonState::new(eps);
            return Ok(None);
        }
        let opts = self.exec_opts(true);
        let spec = self.spec.clone();
        let report = calibrate(
            seeds,
            |seed: &FuzzInput| {
                execute_input(&spec, &seed.messages, &opts)
                    .digests
                    .unwrap_or_default()
            },
            &self.cfg.calibration,
        );
        self.eps = EpsilonState::new(report.epsilon);
        if let Some(dir) = &self.cfg.out_dir {
            std::fs::write(
                dir.join("calibration.json"),
                serde_json::to_vec_pretty(&report)?,
            )?;
        }
        Ok(Some(report))
    }

    /// Runs each seed with analysis and saves it; seeds are the roots every
    /// mutant derives from.
    fn ingest_seeds(&mut self, seeds: &[FuzzInput]) -> Vec<Vec<u32>> {
        let mut seqs = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let v = execute_input(&self.spec, &seed.messages, &self.exec_opts(true));
            self.analysis_runs += 1;
            let classified = v.coverage.classify();
            self.virgin.has_new_bits(&classified);
            let seq = self.state_sequence(&v);
            self.save_entry(seed.clone(), seq.clone(), classified.signature(), v.exec_time, false);
            seqs.push(seq);
        }
        seqs
    }

    /// Maps an analysis verdict onto a state sequence for the active mode.
    fn state_sequence(&mut self, v: &ExecutionVerdict) -> Vec<u32> {
        match self.cfg.mode {
            Mode::Stateful => crate::runtime::assign_states(
                v.digests.as_deref().unwrap_or(&[]),
                &mut self.registry,
                self.eps.epsilon,
            ),
            Mode::ResponseCode => {
                let extract = self.spec.response_code.expect("mode checked at startup");
                v.replies
                    .iter()
                    .map(|burst| burst.first().and_then(|r| extract(r)).unwrap_or(0))
                    .collect()
            }
            Mode::Stateless => Vec::new(),
        }
    }

    fn save_entry(
        &mut self,
        input: FuzzInput,
        state_seq: Vec<u32>,
        cov_signature: u64,
        exec_time: Duration,
        nondeterministic: bool,
    ) -> Vec<u32> {
        let entry = CorpusEntry {
            input_id: 0,
            input,
            state_seq: state_seq.clone(),
            cov_signature,
            exec_time,
            found_at: self.started.elapsed(),
            nondeterministic,
        };
        let id = self.corpus.add(entry);
        if let Some(dir) = &self.cfg.out_dir {
            let path = dir.join("queue").join(format!("id_{id}.safl"));
            if let Err(e) = crate::safl::write_file(&path, &self.corpus.get(id).unwrap().input) {
                log::error!("queue write failed: {e}");
            }
        }
        let mut new_states = Vec::new();
        if self.cfg.mode != Mode::Stateless {
            new_states = self.ipsm.ingest_sequence(id, &state_seq, true);
            // Every state on this entry's path gained a saved path.
            let mut seen = HashSet::new();
            for &s in std::iter::once(&0u32).chain(state_seq.iter()) {
                if seen.insert(s) {
                    if let Some(st) = self.ipsm.stats_mut(s) {
                        st.paths += 1;
                    }
                }
            }
        }
        new_states
    }

    fn budget_exhausted(&self) -> bool {
        if let Some(max) = self.cfg.budget.execs {
            if self.execs >= max {
                return true;
            }
        }
        if let Some(wall) = self.cfg.budget.wall {
            if self.started.elapsed() >= wall {
                return true;
            }
        }
        // A crashed campaign with an exec budget keeps going (more bugs may
        // exist); only budget ends the loop.
        false
    }

    /// One queue selection: a (corpus entry, message position) pair, its
    /// deterministic pass if still pending, then a stacked batch.
    fn fuzz_round(&mut self) {
        let Some((input_id, pos, targeted)) = self.select() else {
            return;
        };
        let mut parent = match self.corpus.get(input_id) {
            Some(e) => e.input.clone(),
            None => return,
        };
        parent.provenance.parent_id = Some(input_id);
        parent.provenance.state_targeted = targeted;

        if let Some(state) = targeted {
            if let Some(st) = self.ipsm.stats_mut(state) {
                st.fuzzs += 1;
            }
        }

        // Deterministic pass, once per (entry, position).
        if pos < parent.messages.len()
            && parent.messages[pos].len() <= self.cfg.det_pass_max_message_len
            && self.det_done.insert((input_id, pos))
        {
            let donors = self.sample_donors(input_id);
            let donor_refs: Vec<&FuzzInput> = donors.iter().collect();
            let dict = self.cfg.dictionary.clone();
            for (_stage, mutant) in DeterministicPass::new(&parent, pos, &dict, donor_refs) {
                self.run_one(mutant);
                if self.budget_exhausted() {
                    return;
                }
            }
        }

        let donors = self.sample_donors(input_id);
        for _ in 0..self.cfg.stacked_batch {
            let mutant = stacked_mutation(
                &parent,
                pos,
                &donors,
                &self.cfg.dictionary,
                &self.cfg.stacked,
                &mut self.rng,
            );
            self.run_one(mutant);
            if self.budget_exhausted() {
                return;
            }
        }
    }

    /// Picks the next (entry, position). Stateful modes go through the
    /// inferred machine; stateless (and any stale-corpus fallback) cycles
    /// the queue AFL-style.
    fn select(&mut self) -> Option<(u64, usize, Option<u32>)> {
        if self.corpus.is_empty() {
            return None;
        }
        if self.cfg.mode != Mode::Stateless {
            let state = self.ipsm.select_state(&mut self.rng);
            if let Ok((id, pos)) =
                self.ipsm
                    .pick_input_and_position(state, &self.corpus, &mut self.rng)
            {
                return Some((id, pos, Some(state)));
            }
        }
        let entry = self.corpus.nth(self.cycle_cursor % self.corpus.len());
        self.cycle_cursor += 1;
        let n = entry.input.messages.len();
        let pos = if n == 0 { 0 } else { self.rng.gen_range(0..n) };
        Some((entry.input_id, pos, None))
    }

    fn sample_donors(&mut self, exclude: u64) -> Vec<FuzzInput> {
        let mut donors = Vec::new();
        for _ in 0..2 {
            let e = self.corpus.nth(self.rng.gen_range(0..self.corpus.len()));
            if e.input_id != exclude {
                donors.push(e.input.clone());
            }
        }
        donors
    }

    fn run_one(&mut self, mutant: FuzzInput) {
        let v = execute_input(&self.spec, &mutant.messages, &self.exec_opts(false));
        self.execs += 1;
        self.total_exec_time += v.exec_time;
        self.process_verdict(mutant, v);
        if self.last_stats.elapsed() >= self.cfg.stats_interval {
            self.emit_stats(false);
        }
    }

    fn process_verdict(&mut self, mutant: FuzzInput, v: ExecutionVerdict) {
        match v.outcome {
            Outcome::Crash(site) => {
                self.handle_crash(mutant, site);
                return;
            }
            Outcome::Hang => {
                self.hangs += 1;
                return;
            }
            Outcome::Ok => {}
        }
        let classified = v.coverage.classify();
        if !self.virgin.has_new_bits(&classified) {
            // The common case: nothing new, no analysis, full throughput.
            if self.cfg.mode == Mode::Stateful {
                self.eps.observe_input_result(false, &self.cfg.calibration);
            }
            return;
        }
        // Lazy analysis: only now is the input re-executed with capture.
        let av = execute_input(&self.spec, &mutant.messages, &self.exec_opts(true));
        self.analysis_runs += 1;
        let nondet = av.coverage.classify().signature() != classified.signature();
        if nondet {
            log::warn!("analysis re-run diverged from original coverage");
        }
        let seq = self.state_sequence(&av);
        let new_states = self.save_entry(mutant, seq, classified.signature(), v.exec_time, nondet);
        if self.cfg.mode == Mode::Stateful {
            self.eps
                .observe_input_result(!new_states.is_empty(), &self.cfg.calibration);
        }
    }

    fn handle_crash(&mut self, mutant: FuzzInput, site: CrashSite) {
        let key = site.group_key();
        if let Some(g) = self.crash_groups.iter_mut().find(|g| g.group_key == key) {
            g.count += 1;
            return;
        }
        // Replay before listing the group as a real bug.
        let rv = execute_input(&self.spec, &mutant.messages, &self.exec_opts(false));
        let flaky = rv.outcome != Outcome::Crash(site);
        if flaky {
            log::warn!("crash {key} did not reproduce on replay; quarantined");
        } else if self.first_crash_exec.is_none() {
            self.first_crash_exec = Some(self.execs);
        }
        if let Some(dir) = &self.cfg.out_dir {
            let crash_dir = dir.join("crashes").join(&key);
            let _ = std::fs::create_dir_all(&crash_dir);
            let n = self.crash_groups.len();
            let _ = crate::safl::write_file(&crash_dir.join(format!("id_{n}.safl")), &mutant);
        }
        self.crash_groups.push(CrashGroup {
            group_key: key,
            site,
            count: 1,
            flaky,
            first_exec: self.execs,
            reproducer: mutant,
        });
    }

    fn emit_stats(&mut self, force: bool) {
        if !force && self.last_stats.elapsed() < self.cfg.stats_interval {
            return;
        }
        self.last_stats = Instant::now();
        let t = self.started.elapsed().as_secs_f64();
        let record = StatsRecord {
            t,
            execs: self.execs,
            execs_per_sec: if t > 0.0 { self.execs as f64 / t } else { 0.0 },
            corpus: self.corpus.len(),
            states: self.ipsm.n_states(),
            transitions: self.ipsm.n_transitions(),
            crashes_unique: self.crash_groups.iter().filter(|g| !g.flaky).count(),
            epsilon: self.eps.epsilon,
        };
        let line = serde_json::to_string(&record).expect("stats record serializes");
        log::info!("{line}");
        if let Some(f) = &mut self.stats_file {
            let _ = writeln!(f, "{line}");
        }
    }
}
