//! Capture probabilities, figure tables, Monte Carlo checks and load reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore};
use serde::Serialize;
use thiserror::Error;

use crate::audit::{BoardView, SessionState};
use crate::board::{BulletinBoard, InputSource};
use crate::crypto::Group;
use crate::engine::{adversary_grind, party_rng, GrindSession, LayerTopology, RouteSim};
use crate::routing::{Capacity, Rand, RoutingError};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.5758293035489;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("need at least one layer")]
    NoLayers,
    #[error("path has {got} hops for {layers} layers")]
    PathLength { got: usize, layers: usize },
    #[error("mix-{mix} is not in layer {layer}")]
    NotInLayer { mix: u32, layer: usize },
    #[error("throughput must satisfy 0 < b <= B (b={b}, B={total})")]
    Throughput { b: u64, total: u64 },
    #[error("rand_bits and w must be positive")]
    Degenerate,
    #[error("transcript incomplete: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mpr,
    Baseline,
}

/// Adversarial throughput share `f_i` of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureQuery {
    pub fractions: Vec<f64>,
    pub mode: Mode,
}

impl CaptureQuery {
    pub fn uniform(f: f64, layers: u32, mode: Mode) -> Self {
        Self {
            fractions: vec![f; layers as usize],
            mode,
        }
    }
}

/// Probability that a ciphertext follows `path` (one mix per layer).
pub fn path_probability(path: &[u32], topo: &LayerTopology) -> Result<f64, AnalysisError> {
    if path.len() != topo.layers.len() {
        return Err(AnalysisError::PathLength {
            got: path.len(),
            layers: topo.layers.len(),
        });
    }
    let total = topo.per_layer as f64;
    path.iter()
        .zip(&topo.layers)
        .enumerate()
        .try_fold(1.0, |acc, (i, (&mix, layer))| {
            let m = layer
                .iter()
                .find(|m| m.id == mix)
                .ok_or(AnalysisError::NotInLayer { mix, layer: i + 1 })?;
            Ok(acc * m.throughput as f64 / total)
        })
}

/// Stratified routing: every hop must land on the adversary, so the
/// fractions multiply. The parallel-mix baseline is the adversary's overall
/// share regardless of depth.
pub fn capture_probability(query: &CaptureQuery) -> Result<f64, AnalysisError> {
    if query.fractions.is_empty() {
        return Err(AnalysisError::NoLayers);
    }
    if let Some(&f) = query.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(AnalysisError::Fraction(f));
    }
    Ok(match query.mode {
        Mode::Mpr => query.fractions.iter().product(),
        Mode::Baseline => query.fractions.iter().sum::<f64>() / query.fractions.len() as f64,
    })
}

/// Capture probability after the adversary takes out `removed[i]` of layer
/// `i`'s honest throughput, so its share there becomes `f / (1 - removed)`.
pub fn capture_after_removal(query: &CaptureQuery, removed: &[f64]) -> Result<f64, AnalysisError> {
    let fractions = query
        .fractions
        .iter()
        .zip(removed.iter().chain(std::iter::repeat(&0.0)))
        .map(|(&f, &r)| {
            if !(0.0..=1.0).contains(&r) || r > 1.0 - f {
                return Err(AnalysisError::Fraction(r));
            }
            Ok(if r >= 1.0 { 1.0 } else { (f / (1.0 - r)).min(1.0) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    capture_probability(&CaptureQuery {
        fractions,
        mode: query.mode,
    })
}

/// One figure's data with its first column as the swept parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub header: [&'static str; 3],
    pub rows: Vec<(f64, f64, f64)>,
}

/// Fixed-point with ten significant digits.
pub fn format_probability(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(1) as usize;
    format!("{x:.decimals$}")
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for &(x, mpr, base) in &self.rows {
            let first = if x.fract() == 0.0 {
                format!("{x}")
            } else {
                format!("{x:.2}")
            };
            let _ = writeln!(out, "{first},{},{}", format_probability(mpr), format_probability(base));
        }
        out
    }
}

pub const FIGURE_FRACTIONS: [f64; 7] = [0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40];
pub const FIGURE_LAYERS: [u32; 5] = [3, 4, 5, 6, 7];

/// Capture vs adversarial share at four layers, and vs depth at 25%.
pub fn figure_tables() -> (Table, Table) {
    let by_fraction = FIGURE_FRACTIONS
        .iter()
        .map(|&f| {
            let mpr = capture_probability(&CaptureQuery::uniform(f, 4, Mode::Mpr)).expect("valid fraction");
            let base = capture_probability(&CaptureQuery::uniform(f, 4, Mode::Baseline)).expect("valid fraction");
            (f, mpr, base)
        })
        .collect();
    let by_layers = FIGURE_LAYERS
        .iter()
        .map(|&l| {
            let mpr = capture_probability(&CaptureQuery::uniform(0.25, l, Mode::Mpr)).expect("valid fraction");
            let base = capture_probability(&CaptureQuery::uniform(0.25, l, Mode::Baseline)).expect("valid fraction");
            (l as f64, mpr, base)
        })
        .collect();
    (
        Table {
            header: ["f", "mpr", "baseline"],
            rows: by_fraction,
        },
        Table {
            header: ["layers", "mpr", "baseline"],
            rows: by_layers,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytic: f64,
    pub warning: Option<String>,
}

impl Estimate {
    pub fn new(trials: u64, successes: u64, analytic: f64) -> Self {
        let (ci_low, ci_high) = wilson(successes, trials, Z99);
        let warning = (trials == 0 || (successes == 0 && analytic > 0.0) || (ci_low <= 0.0 && ci_high >= 1.0))
            .then(|| format!("{trials} trials are too few for an informative interval"));
        Self {
            trials,
            successes,
            rate: if trials == 0 {
                0.0
            } else {
                successes as f64 / trials as f64
            },
            ci_low,
            ci_high,
            analytic,
            warning,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Wilson score interval.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Layer of total throughput 100: one adversarial mix holding `f` of it and
/// up to two honest mixes sharing the rest.
pub fn capture_scenario(f: f64, layers: u32) -> Result<RouteSim, AnalysisError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(AnalysisError::Fraction(f));
    }
    if layers == 0 {
        return Err(AnalysisError::NoLayers);
    }
    let adv = (f * 100.0).round() as u64;
    let honest = 100 - adv;
    let mut capacities = Vec::new();
    let mut adversarial = std::collections::BTreeSet::new();
    if adv > 0 {
        capacities.push(Capacity {
            mix: 1,
            throughput: adv,
        });
        adversarial.insert(1);
    }
    for (i, share) in [honest.div_ceil(2), honest / 2].into_iter().enumerate() {
        if share > 0 {
            capacities.push(Capacity {
                mix: i as u32 + 2,
                throughput: share,
            });
        }
    }
    Ok(RouteSim {
        layers,
        capacities,
        adversarial,
        messages_per_frame: 1000,
        routing_entities: 3,
    })
}

/// Route at least `messages` messages through the capture scenario and
/// count those whose every hop was adversarial.
pub fn monte_carlo_capture(f: f64, layers: u32, messages: u64, seed: u64) -> Result<Estimate, AnalysisError> {
    let sim = capture_scenario(f, layers)?;
    let frames = messages.div_ceil(sim.messages_per_frame as u64).max(1) as usize;
    let count = sim.run(frames, seed)?;
    let analytic = capture_probability(&CaptureQuery::uniform(f, layers, Mode::Mpr))?;
    Ok(Estimate::new(count.messages, count.captured, analytic))
}

/// Success rate of a grinding routing entity with `attempts` candidates per
/// session, steering one random target position of a random-size batch.
pub fn grind_experiment(
    capacities: &[Capacity],
    adversary_mix: u32,
    attempts: u64,
    sessions: u64,
    seed: u64,
) -> Result<Estimate, AnalysisError> {
    let total: u64 = capacities.iter().map(|c| c.throughput).sum();
    let b = capacities
        .iter()
        .find(|c| c.mix == adversary_mix)
        .map_or(0, |c| c.throughput);
    let mut rng = party_rng(seed, "grind-experiment");
    let mut hits = 0;
    for _ in 0..sessions {
        let items = rng.gen_range(1..=64);
        let target = rng.gen_range(1..=items);
        let honest: Vec<Rand> = (0..2)
            .map(|_| {
                let mut r = [0; 32];
                rng.fill_bytes(&mut r);
                r
            })
            .collect();
        let session = GrindSession {
            honest: &honest,
            items,
            target,
            capacities,
            adversary_mix,
        };
        hits += adversary_grind(&session, attempts, &mut rng) as u64;
    }
    Ok(Estimate::new(sessions, hits, b as f64 / total as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasSuccess {
    pub probability: f64,
    pub valid_set_size: f64,
    pub note: &'static str,
}

/// Biasing success as the closed form is printed, `n / (2^bits * b/B)`,
/// plus the size of the valid set `(2^bits / w) * (b/B) * w`.
pub fn bias_success(n: u64, rand_bits: u32, b: u64, total: u64, w: u64) -> Result<BiasSuccess, AnalysisError> {
    if b == 0 || b > total {
        return Err(AnalysisError::Throughput { b, total });
    }
    if rand_bits == 0 || w == 0 {
        return Err(AnalysisError::Degenerate);
    }
    let space = 2f64.powi(rand_bits as i32);
    let share = b as f64 / total as f64;
    Ok(BiasSuccess {
        probability: n as f64 / (space * share),
        valid_set_size: space / w as f64 * share * w as f64,
        note: "published closed form, reproduced verbatim; n*|V|/2^bits would give n*b/B instead",
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadRow {
    pub layer: u32,
    pub mix: u32,
    pub throughput: u64,
    pub expected: f64,
    pub actual: u64,
    /// Routing sessions that could hand this mix ciphertexts.
    pub sources: u32,
}

impl LoadRow {
    pub fn deviation(&self) -> f64 {
        (self.actual as f64 - self.expected).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows: Vec<LoadRow>,
    pub max_deviation: f64,
}

impl LoadReport {
    /// Every mix is within one unit per source of its proportional share.
    pub fn within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.deviation() < r.sources.max(1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,mix,throughput,expected,actual,sources,deviation\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{},{:.6}",
                r.layer,
                r.mix,
                r.throughput,
                r.expected,
                r.actual,
                r.sources,
                r.deviation()
            );
        }
        out
    }
}

/// Per-mix routed load against each session's proportional share.
pub fn load_balance_report<G: Group>(board: &BulletinBoard<G>) -> Result<LoadReport, AnalysisError> {
    let view = BoardView::new(board);
    let mut rows: BTreeMap<(u32, u32), LoadRow> = BTreeMap::new();
    for key in view.sessions.keys() {
        let s = match view.session_state(key) {
            SessionState::Valid(s) => s,
            SessionState::CommitmentError(re) => {
                return Err(AnalysisError::Incomplete(format!(
                    "{key:?}: commitment error by re-{re}"
                )))
            }
            SessionState::Incomplete(why) => return Err(AnalysisError::Incomplete(format!("{key:?}: {why}"))),
        };
        let w = s.assignment.z.len() as f64;
        let total: u64 = s.plan.targets.iter().map(|c| c.throughput).sum();
        for cap in &s.plan.targets {
            let row = rows.entry((s.plan.target_ctr, cap.mix)).or_insert(LoadRow {
                layer: s.plan.target_ctr,
                mix: cap.mix,
                throughput: cap.throughput,
                expected: 0.0,
                actual: 0,
                sources: 0,
            });
            row.expected += w * cap.throughput as f64 / total as f64;
            row.sources += 1;
        }
    }
    for (key, record) in &view.inputs {
        if record.source == InputSource::Routed {
            if let Some(row) = rows.get_mut(&(key.ctr, key.mix)) {
                row.actual += record.ciphertexts.len() as u64;
            }
        }
    }
    let rows: Vec<LoadRow> = rows.into_values().collect();
    let max_deviation = rows.iter().map(LoadRow::deviation).fold(0.0, f64::max);
    Ok(LoadReport { rows, max_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_topology, MixSpec};

    fn topo(bs: &[&[u64]]) -> LayerTopology {
        let mut mixes = Vec::new();
        for (i, layer) in bs.iter().enumerate() {
            for &b in *layer {
                mixes.push(MixSpec {
                    throughput: b,
                    org: String::new(),
                    layer: Some(i as u32 + 1),
                });
            }
        }
        build_topology(&mixes, bs.len() as u32, 1).unwrap()
    }

    #[test]
    fn path_products() {
        let t = topo(&[&[1, 3], &[1, 3], &[1, 3], &[1, 3]]);
        assert_eq!(path_probability(&[1, 3, 5, 7], &t).unwrap(), 0.00390625);
        let t = topo(&[&[3, 7]]);
        assert!((path_probability(&[1], &t).unwrap() - 0.3).abs() < 1e-15);
        let t = topo(&[&[2, 8], &[3, 7], &[5, 5]]);
        assert!((path_probability(&[1, 3, 5], &t).unwrap() - 0.03).abs() < 1e-15);
        assert!(matches!(
            path_probability(&[1, 1, 5], &t),
            Err(AnalysisError::NotInLayer { mix: 1, layer: 2 })
        ));
        assert!(matches!(
            path_probability(&[1, 3], &t),
            Err(AnalysisError::PathLength { .. })
        ));
    }

    #[test]
    fn capture_modes() {
        let q = |f, l, m| capture_probability(&CaptureQuery::uniform(f, l, m)).unwrap();
        assert_eq!(q(0.25, 4, Mode::Mpr), 0.00390625);
        assert_eq!(q(0.25, 9, Mode::Baseline), 0.25);
        assert_eq!(q(0.0, 5, Mode::Mpr), 0.0);
        assert!(matches!(
            capture_probability(&CaptureQuery::uniform(1.5, 2, Mode::Mpr)),
            Err(AnalysisError::Fraction(f)) if f == 1.5
        ));
    }

    #[test]
    fn removal_raises_share() {
        let q = CaptureQuery::uniform(0.2, 2, Mode::Mpr);
        assert!((capture_after_removal(&q, &[0.5, 0.0]).unwrap() - 0.4 * 0.2).abs() < 1e-12);
        assert!(capture_after_removal(&q, &[0.9]).is_err());
    }

    #[test]
    fn figure_rows() {
        let (a, b) = figure_tables();
        assert_eq!(a.rows.len(), 7);
        assert_eq!(b.rows.len(), 5);
        assert_eq!((a.rows[6].0, a.rows[6].2), (0.40, 0.40));
        assert!((a.rows[6].1 - 0.0256).abs() < 1e-15);
        assert!((b.rows[4].1 - 6.103515625e-5).abs() < 1e-18);
        assert!(a
            .to_csv()
            .starts_with("f,mpr,baseline\n0.10,0.0001000000000,0.1000000000\n"));
        assert!(b.to_csv().contains("\n7,0.00006103515625,0.2500000000\n"));
    }

    #[test]
    fn probability_format_keeps_six_digits() {
        assert_eq!(format_probability(0.00390625), "0.003906250000");
        assert_eq!(format_probability(0.25), "0.2500000000");
        assert_eq!(format_probability(1.0), "1.000000000");
        assert_eq!(format_probability(0.0), "0");
    }

    #[test]
    fn wilson_brackets() {
        let (lo, hi) = wilson(50, 100, Z99);
        assert!(lo < 0.5 && hi > 0.5 && hi - lo < 0.3);
        assert_eq!(wilson(0, 10, Z99).0, 0.0);
        assert_eq!(wilson(10, 10, Z99).1, 1.0);
    }

    #[test]
    fn small_monte_carlo() {
        let e = monte_carlo_capture(0.5, 1, 10_000, 3).unwrap();
        assert!(e.contains(0.5), "{e:?}");
        let e = monte_carlo_capture(1.0, 3, 2000, 3).unwrap();
        assert_eq!(e.rate, 1.0);
    }

    #[test]
    fn bias_formula() {
        let r = bias_success(1, 256, 1, 4, 10).unwrap();
        assert_eq!(r.probability, 1.0 / (2f64.powi(256) * 0.25));
        assert_eq!(bias_success(0, 256, 1, 4, 10).unwrap().probability, 0.0);
        assert_eq!(bias_success(1, 8, 1, 2, 4).unwrap().valid_set_size, 128.0);
        assert!(bias_success(1, 8, 0, 2, 4).is_err());
    }

    #[test]
    fn grind_single_attempt_matches_share() {
        let caps = [Capacity { mix: 1, throughput: 1 }, Capacity { mix: 2, throughput: 1 }];
        let e = grind_experiment(&caps, 1, 1, 2000, 0).unwrap();
        assert!(e.contains(0.5), "{e:?}");
        assert_eq!(grind_experiment(&caps, 1, 0, 100, 0).unwrap().successes, 0);
    }
}
