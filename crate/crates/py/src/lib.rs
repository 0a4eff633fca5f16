//! Python bindings: run time-frames, verify transcripts, query the analysis.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mpr_core::analysis::{self, CaptureQuery, Estimate, Mode};
use mpr_core::audit::{self, Verdict};
use mpr_core::board::{transcript_group, BulletinBoard};
use mpr_core::crypto::{Group, GroupId, ModP768, Ristretto};
use mpr_core::engine::{self, TimeFrameConfig, TimeFrameResult};
use mpr_core::routing::{self, Capacity};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "mpr" => Ok(Mode::Mpr),
        "baseline" => Ok(Mode::Baseline),
        other => Err(PyValueError::new_err(format!(
            "unknown mode {other:?}, expected 'mpr' or 'baseline'"
        ))),
    }
}

/// Time-frame configuration. Unset fields take the TOML defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: TimeFrameConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (messages, seed=0, layers=None, mixes_per_layer=2, soundness=40))]
    fn new(messages: usize, seed: u64, layers: Option<u32>, mixes_per_layer: u32, soundness: u32) -> Self {
        let mut inner = TimeFrameConfig::new(messages);
        inner.seed = seed;
        inner.layers = layers;
        inner.mixes_per_layer = mixes_per_layer;
        inner.soundness = soundness;
        Self { inner }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        TimeFrameConfig::from_toml(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn layer_count(&self) -> u32 {
        self.inner.layer_count()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn messages(&self) -> usize {
        self.inner.messages
    }

    #[getter]
    fn soundness(&self) -> u32 {
        self.inner.soundness
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(messages={}, seed={}, layers={})",
            self.inner.messages,
            self.inner.seed,
            self.inner.layer_count()
        )
    }
}

/// Outcome of one simulated time-frame.
#[pyclass(name = "TimeFrame")]
struct PyTimeFrame {
    inner: TimeFrameResult,
}

#[pymethods]
impl PyTimeFrame {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn layers(&self) -> u32 {
        self.inner.layers
    }

    /// `(receiver, message)` pairs in submission order.
    #[getter]
    fn submitted(&self) -> Vec<(String, String)> {
        self.inner
            .submitted
            .iter()
            .map(|d| (d.receiver.clone(), d.message.clone()))
            .collect()
    }

    #[getter]
    fn delivered(&self) -> Vec<(String, String)> {
        self.inner
            .delivered
            .iter()
            .map(|d| (d.receiver.clone(), d.message.clone()))
            .collect()
    }

    /// `(layer, mix, batch, verdict)` as the auditors reported them.
    #[getter]
    fn verdicts(&self) -> Vec<(u32, u32, u32, String)> {
        self.inner
            .verdicts
            .iter()
            .map(|v| (v.layer, v.mix, v.batch, v.verdict.clone()))
            .collect()
    }

    #[getter]
    fn log(&self) -> Vec<String> {
        self.inner.log.clone()
    }

    #[getter]
    fn failure(&self) -> Option<String> {
        self.inner.failure.clone()
    }

    #[getter]
    fn reassignments(&self) -> usize {
        self.inner.reassignments
    }

    /// The bulletin board as JSON lines.
    #[getter]
    fn transcript(&self) -> String {
        self.inner.transcript.clone()
    }

    fn conserved(&self) -> bool {
        self.inner.conserved()
    }

    fn flagged(&self) -> Vec<u32> {
        self.inner.flagged().into_iter().collect()
    }

    fn summary_csv(&self) -> String {
        self.inner.summary_csv()
    }
}

#[pyclass(name = "AuditReport")]
struct PyAuditReport {
    inner: audit::AuditReport,
}

#[pymethods]
impl PyAuditReport {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    #[getter]
    fn misbehaving(&self) -> Vec<u32> {
        self.inner.misbehaving().into_iter().collect()
    }

    /// `(batch, verdict)` strings, one per batch.
    #[getter]
    fn verdicts(&self) -> Vec<(String, String)> {
        self.inner
            .batches
            .iter()
            .map(|b| (b.key.to_string(), b.verdict.to_string()))
            .collect()
    }

    #[getter]
    fn issues(&self) -> Vec<String> {
        let sessions = self.inner.sessions.iter().map(|(k, why)| format!("{k}: {why}"));
        sessions.chain(self.inner.issues.iter().cloned()).collect()
    }

    #[getter]
    fn final_outputs(&self) -> usize {
        self.inner.final_outputs
    }

    fn rejected(&self) -> Vec<(String, String)> {
        self.inner
            .batches
            .iter()
            .filter(|b| !matches!(b.verdict, Verdict::Accept))
            .map(|b| (b.key.to_string(), b.verdict.to_string()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "AuditReport(passed={}, batches={}, misbehaving={:?})",
            self.inner.passed(),
            self.inner.batches.len(),
            self.inner.misbehaving()
        )
    }
}

/// Run one time-frame.
#[pyfunction]
fn simulate(py: Python<'_>, config: PyConfig) -> PyResult<PyTimeFrame> {
    let result = py
        .detach(|| engine::run_timeframe(&config.inner))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyTimeFrame { inner: result })
}

fn import_and_audit<G: Group>(group: G, text: &str) -> PyResult<audit::AuditReport> {
    let board = BulletinBoard::import_jsonl(group, text.as_bytes()).map_err(value_err)?;
    Ok(audit::audit(&board))
}

/// Re-check a JSON-lines transcript. Malformed or badly signed entries
/// raise `ValueError`.
#[pyfunction]
fn verify(py: Python<'_>, transcript: &str) -> PyResult<PyAuditReport> {
    let report = py.detach(|| match transcript_group(transcript).map_err(value_err)? {
        GroupId::Ristretto255 => import_and_audit(Ristretto, transcript),
        GroupId::Modp768 => import_and_audit(ModP768, transcript),
    })?;
    Ok(PyAuditReport { inner: report })
}

#[pyfunction]
fn layer_count(messages: usize) -> u32 {
    engine::layer_count(messages)
}

/// Capture probability with share `f` in each of `layers` layers, or with
/// explicit per-layer `fractions`.
#[pyfunction]
#[pyo3(signature = (f=None, layers=4, mode="mpr", fractions=None))]
fn capture_probability(f: Option<f64>, layers: u32, mode: &str, fractions: Option<Vec<f64>>) -> PyResult<f64> {
    let mode = parse_mode(mode)?;
    let query = match (fractions, f) {
        (Some(fractions), _) => CaptureQuery { fractions, mode },
        (None, Some(f)) => CaptureQuery::uniform(f, layers, mode),
        (None, None) => return Err(PyValueError::new_err("pass f or fractions")),
    };
    analysis::capture_probability(&query).map_err(value_err)
}

/// The two capture tables as CSV text: by fraction, then by layer count.
#[pyfunction]
fn figure_tables() -> (String, String) {
    let (a, b) = analysis::figure_tables();
    (a.to_csv(), b.to_csv())
}

fn estimate_dict<'py>(py: Python<'py>, est: &Estimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("trials", est.trials)?;
    d.set_item("successes", est.successes)?;
    d.set_item("rate", est.rate)?;
    d.set_item("ci_low", est.ci_low)?;
    d.set_item("ci_high", est.ci_high)?;
    d.set_item("analytic", est.analytic)?;
    d.set_item("warning", est.warning.clone())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (f, layers, messages, seed=0))]
fn monte_carlo_capture<'py>(
    py: Python<'py>,
    f: f64,
    layers: u32,
    messages: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let est = py
        .detach(|| analysis::monte_carlo_capture(f, layers, messages, seed))
        .map_err(value_err)?;
    estimate_dict(py, &est)
}

/// Grinding success rate; mix ids are 1-based positions in `throughputs`.
#[pyfunction]
#[pyo3(signature = (throughputs, adversary_mix, attempts, sessions, seed=0))]
fn grind_experiment<'py>(
    py: Python<'py>,
    throughputs: Vec<u64>,
    adversary_mix: u32,
    attempts: u64,
    sessions: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let caps: Vec<Capacity> = throughputs
        .iter()
        .enumerate()
        .map(|(i, &throughput)| Capacity {
            mix: i as u32 + 1,
            throughput,
        })
        .collect();
    let est = py
        .detach(|| analysis::grind_experiment(&caps, adversary_mix, attempts, sessions, seed))
        .map_err(value_err)?;
    estimate_dict(py, &est)
}

/// The routing permutation of `1..=w` for 32 bytes of joint randomness.
#[pyfunction]
fn permute_indices(rand: [u8; 32], w: usize) -> Vec<usize> {
    routing::permute_indices(&rand, w)
}

#[pyfunction]
fn quotas(w: usize, throughputs: Vec<u64>) -> PyResult<Vec<usize>> {
    routing::quotas(w, &throughputs).map_err(value_err)
}

#[pymodule]
fn mpr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTimeFrame>()?;
    m.add_class::<PyAuditReport>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(layer_count, m)?)?;
    m.add_function(wrap_pyfunction!(capture_probability, m)?)?;
    m.add_function(wrap_pyfunction!(figure_tables, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_capture, m)?)?;
    m.add_function(wrap_pyfunction!(grind_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(permute_indices, m)?)?;
    m.add_function(wrap_pyfunction!(quotas, m)?)?;
    Ok(())
}
