//! Python bindings: fuzzy hashing, the state registry, state-machine
//! inference, target replay, and whole campaigns, importable as
//! `statefuzz_py`.

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use statefuzz::engine::{
    self, Budget, ChannelKind, EngineConfig, ExecOptions, Mode, Outcome,
};
use statefuzz::mutation::FuzzInput;
use statefuzz::tlsh::TlshDigest;

fn parse_digest(hex: &str) -> PyResult<TlshDigest> {
    TlshDigest::from_hex(hex)
        .ok_or_else(|| PyValueError::new_err(format!("not a digest hex string: {hex:?}")))
}

/// Fuzzy-hash `data` (zero-padded to the minimum input length) and return
/// the digest as a hex string; empty string if the input cannot be hashed.
#[pyfunction]
fn tlsh_hash(data: Vec<u8>) -> String {
    TlshDigest::hash_padded(&data).to_hex()
}

/// Distance between two digest hex strings.
#[pyfunction]
fn tlsh_distance(a: &str, b: &str) -> PyResult<u32> {
    Ok(statefuzz::tlsh::distance(&parse_digest(a)?, &parse_digest(b)?))
}

/// Names of the bundled targets.
#[pyfunction]
fn targets() -> Vec<&'static str> {
    statefuzz::targets::registry()
        .iter()
        .map(|s| s.name)
        .collect()
}

/// Maps memory-snapshot digests onto state ids under a distance threshold.
#[pyclass]
struct StateRegistry {
    inner: statefuzz::mvp::StateRegistry,
}

#[pymethods]
impl StateRegistry {
    #[new]
    fn new() -> Self {
        StateRegistry {
            inner: statefuzz::mvp::StateRegistry::new(),
        }
    }

    /// Existing state id within `epsilon`, or a fresh id for a new state.
    fn get_state_id(&mut self, digest_hex: &str, epsilon: u32) -> PyResult<u32> {
        Ok(self.inner.get_state_id(&parse_digest(digest_hex)?, epsilon))
    }

    fn lookup(&self, digest_hex: &str, radius: u32) -> PyResult<Option<u32>> {
        Ok(self.inner.lookup(&parse_digest(digest_hex)?, radius))
    }

    fn count(&self) -> u32 {
        self.inner.count()
    }

    /// `[(state_id, digest_hex)]` snapshot of the registry.
    fn export(&self) -> Vec<(u32, String)> {
        self.inner
            .export()
            .into_iter()
            .map(|e| (e.state_id, e.digest_hex))
            .collect()
    }
}

/// The inferred protocol state machine.
#[pyclass]
struct Ipsm {
    inner: statefuzz::ipsm::Ipsm,
}

#[pymethods]
impl Ipsm {
    #[new]
    fn new() -> Self {
        Ipsm {
            inner: statefuzz::ipsm::Ipsm::new(),
        }
    }

    /// Feeds one observed state sequence; returns the states seen for the
    /// first time.
    fn ingest(&mut self, input_id: u64, seq: Vec<u32>, interesting: bool) -> Vec<u32> {
        self.inner.ingest_sequence(input_id, &seq, interesting)
    }

    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn n_transitions(&self) -> usize {
        self.inner.n_transitions()
    }

    fn has_transition(&self, from: u32, to: u32) -> bool {
        self.inner.has_transition(from, to)
    }

    fn to_dot(&self) -> String {
        self.inner.to_dot()
    }
}

fn lookup_target(name: &str) -> PyResult<statefuzz::targets::TargetSpec> {
    statefuzz::targets::lookup(name)
        .ok_or_else(|| PyKeyError::new_err(format!("unknown target {name:?}")))
}

/// Executes one message session against a bundled target with memory
/// analysis, assigning state ids through a fresh registry at `epsilon`.
/// Returns {"outcome", "replies", "state_seq", "digests"}.
#[pyfunction]
#[pyo3(signature = (target, messages, epsilon = 5, tcp = false))]
fn replay<'py>(
    py: Python<'py>,
    target: &str,
    messages: Vec<Vec<u8>>,
    epsilon: u32,
    tcp: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = lookup_target(target)?;
    let opts = ExecOptions {
        capture: true,
        channel: if tcp {
            ChannelKind::TcpLoopback
        } else {
            ChannelKind::InProcess
        },
        ..ExecOptions::default()
    };
    let v = engine::execute_input(&spec, &messages, &opts);
    let digests = v.digests.unwrap_or_default();
    let mut reg = statefuzz::mvp::StateRegistry::new();
    let seq = statefuzz::runtime::assign_states(&digests, &mut reg, epsilon);

    let out = PyDict::new(py);
    out.set_item(
        "outcome",
        match v.outcome {
            Outcome::Ok => "ok".to_string(),
            Outcome::Hang => "hang".to_string(),
            Outcome::Crash(site) => format!("crash:{}", site.group_key()),
        },
    )?;
    out.set_item("replies", v.replies)?;
    out.set_item("state_seq", seq)?;
    out.set_item(
        "digests",
        digests.iter().map(TlshDigest::to_hex).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Runs a fuzzing campaign and returns a summary dict.
#[pyfunction]
#[pyo3(signature = (target, seeds, execs, mode = "stateful", rng_seed = 1))]
fn run_campaign<'py>(
    py: Python<'py>,
    target: &str,
    seeds: Vec<Vec<Vec<u8>>>,
    execs: u64,
    mode: &str,
    rng_seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = lookup_target(target)?;
    let seeds: Vec<FuzzInput> = seeds.into_iter().map(FuzzInput::new).collect();
    let cfg = EngineConfig {
        mode: match mode {
            "stateful" => Mode::Stateful,
            "stateless" => Mode::Stateless,
            "response-code" => Mode::ResponseCode,
            other => {
                return Err(PyValueError::new_err(format!("unknown mode {other:?}")))
            }
        },
        budget: Budget {
            execs: Some(execs),
            wall: None,
        },
        rng_seed,
        ..EngineConfig::default()
    };
    let r = engine::run_campaign(&spec, &seeds, &cfg)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("execs", r.execs)?;
    out.set_item("corpus", r.corpus_entries)?;
    out.set_item("states", r.states)?;
    out.set_item("transitions", r.transitions)?;
    out.set_item("crashes_unique", r.unique_crashes())?;
    out.set_item(
        "crash_groups",
        r.crash_groups
            .iter()
            .map(|g| g.group_key.clone())
            .collect::<Vec<_>>(),
    )?;
    out.set_item("first_crash_exec", r.first_crash_exec)?;
    out.set_item("epsilon", r.epsilon)?;
    out.set_item(
        "ipsm",
        serde_json::to_string(&r.ipsm).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
    )?;
    Ok(out)
}

/// Serializes a message session to the on-disk input format.
#[pyfunction]
fn safl_encode(messages: Vec<Vec<u8>>) -> Vec<u8> {
    statefuzz::safl::encode(&FuzzInput::new(messages))
}

/// Parses the on-disk input format back into a message list.
#[pyfunction]
fn safl_decode(bytes: Vec<u8>) -> PyResult<Vec<Vec<u8>>> {
    statefuzz::safl::decode(&bytes)
        .map(|i| i.messages)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
pub fn statefuzz_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tlsh_hash, m)?)?;
    m.add_function(wrap_pyfunction!(tlsh_distance, m)?)?;
    m.add_function(wrap_pyfunction!(targets, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(safl_encode, m)?)?;
    m.add_function(wrap_pyfunction!(safl_decode, m)?)?;
    m.add_class::<StateRegistry>()?;
    m.add_class::<Ipsm>()?;
    Ok(())
}
