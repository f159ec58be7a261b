//! Distance-threshold calibration from repeated seed executions, plus the
//! runtime adjustment rule that grows the threshold when new states keep
//! appearing.

use crate::tlsh::{distance, TlshDigest};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Extra runs per seed beyond the reference execution.
    pub repetitions: u32,
    pub percentile: f64,
    pub eps_min: u32,
    pub eps_max: u32,
    pub adjust_step: u32,
    /// Consecutive new-state inputs that trigger a threshold bump.
    pub adjust_trigger: u32,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            repetitions: 3,
            percentile: 0.90,
            eps_min: 5,
            eps_max: 100,
            adjust_step: 10,
            adjust_trigger: 5,
        }
    }
}

/// Mutable threshold state during a campaign. The threshold never
/// decreases after calibration.
#[derive(Debug, Clone)]
pub struct EpsilonState {
    pub epsilon: u32,
    pub consecutive_new_states: u32,
}

impl EpsilonState {
    pub fn new(epsilon: u32) -> Self {
        EpsilonState {
            epsilon,
            consecutive_new_states: 0,
        }
    }

    /// Feeds one fuzz-input outcome into the adjustment rule: a streak of
    /// `adjust_trigger` new-state inputs bumps the threshold by
    /// `adjust_step`, capped at `eps_max`.
    pub fn observe_input_result(&mut self, produced_new_state: bool, cfg: &CalibrationConfig) {
        if !produced_new_state {
            self.consecutive_new_states = 0;
            return;
        }
        self.consecutive_new_states += 1;
        if self.consecutive_new_states >= cfg.adjust_trigger {
            self.epsilon = (self.epsilon + cfg.adjust_step).min(cfg.eps_max);
            self.consecutive_new_states = 0;
        }
    }
}

/// Nearest-rank percentile: `sorted[ceil(p * n)]`, 1-indexed.
pub fn nearest_rank_percentile(sorted: &[u32], p: f64) -> u32 {
    assert!(!sorted.is_empty());
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedCalibrationStats {
    pub seed_index: usize,
    pub reference_iterations: usize,
    pub distances: usize,
    pub max_distance: u32,
    pub length_mismatches: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub per_seed: Vec<SeedCalibrationStats>,
    pub pool_size: usize,
    pub raw_percentile: Option<u32>,
    pub epsilon: u32,
    pub clamp_applied: bool,
    pub empty_pool: bool,
}

/// Calibrates the threshold: one reference run plus `cfg.repetitions`
/// repeats per seed; distances between digests at matching iteration
/// indices feed the pool; the configured percentile of the pool, clamped
/// into `[eps_min, eps_max]`, is the threshold.
///
/// `run` executes one seed and returns its per-iteration digest sequence.
pub fn calibrate<S, F>(seeds: &[S], mut run: F, cfg: &CalibrationConfig) -> CalibrationReport
where
    F: FnMut(&S) -> Vec<TlshDigest>,
{
    let mut pool: Vec<u32> = Vec::new();
    let mut per_seed = Vec::new();
    for (seed_index, seed) in seeds.iter().enumerate() {
        let reference = run(seed);
        let mut stats = SeedCalibrationStats {
            seed_index,
            reference_iterations: reference.len(),
            distances: 0,
            max_distance: 0,
            length_mismatches: 0,
        };
        for _ in 0..cfg.repetitions {
            let repeat = run(seed);
            if repeat.len() != reference.len() {
                log::warn!(
                    "calibration seed {seed_index}: sequence length {} != reference {}",
                    repeat.len(),
                    reference.len()
                );
                stats.length_mismatches += 1;
            }
            for (a, b) in reference.iter().zip(repeat.iter()) {
                let d = match (a.valid, b.valid) {
                    (true, true) => distance(a, b),
                    // Two empty iterations are the same (dummy) state.
                    (false, false) => 0,
                    _ => {
                        log::warn!("calibration seed {seed_index}: digest validity mismatch");
                        continue;
                    }
                };
                stats.max_distance = stats.max_distance.max(d);
                stats.distances += 1;
                pool.push(d);
            }
        }
        per_seed.push(stats);
    }

    if pool.is_empty() {
        log::warn!("calibration distance pool empty; falling back to eps_min");
        return CalibrationReport {
            per_seed,
            pool_size: 0,
            raw_percentile: None,
            epsilon: cfg.eps_min,
            clamp_applied: true,
            empty_pool: true,
        };
    }

    pool.sort_unstable();
    let raw = nearest_rank_percentile(&pool, cfg.percentile);
    let epsilon = raw.clamp(cfg.eps_min, cfg.eps_max);
    CalibrationReport {
        per_seed,
        pool_size: pool.len(),
        raw_percentile: Some(raw),
        epsilon,
        clamp_applied: epsilon != raw,
        empty_pool: false,
    }
}
