//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use mpr_core::analysis::{figure_tables, grind_experiment, load_balance_report, monte_carlo_capture};
use mpr_core::audit::{audit, BatchKey, BoardView};
use mpr_core::board::{BulletinBoard, InputSource};
use mpr_core::crypto::{decrypt, Ciphertext, Ristretto};
use mpr_core::engine::{
    layer_count, party_rng, run_in, Fault, FaultTarget, MixBehavior, MixSpec, Outcome, Phase, TimeFrameConfig,
};
use mpr_core::routing::Capacity;

type Check = fn() -> Result<String, String>;

/// Exact rational values rounded to ten significant digits.
const BY_FRACTION: &str = "f,mpr,baseline
0.10,0.0001000000000,0.1000000000
0.15,0.0005062500000,0.1500000000
0.20,0.001600000000,0.2000000000
0.25,0.003906250000,0.2500000000
0.30,0.008100000000,0.3000000000
0.35,0.01500625000,0.3500000000
0.40,0.02560000000,0.4000000000
";

const BY_LAYERS: &str = "layers,mpr,baseline
3,0.01562500000,0.2500000000
4,0.003906250000,0.2500000000
5,0.0009765625000,0.2500000000
6,0.0002441406250,0.2500000000
7,0.00006103515625,0.2500000000
";

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn mpr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mpr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(cfg: &TimeFrameConfig) -> Result<Outcome<Ristretto>, String> {
    run_in(Ristretto, cfg).map_err(|e| format!("seed {}: {e}", cfg.seed))
}

fn figure_by_fraction() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let o = mpr(&["figures", "--out", dir.path().to_str().unwrap()]);
    ensure(o.status.success(), "mpr figures failed")?;
    let csv = fs::read_to_string(dir.path().join("capture_by_fraction.csv")).map_err(|e| e.to_string())?;
    ensure(csv == BY_FRACTION, format!("table differs:\n{csv}"))?;
    let (table, _) = figure_tables();
    for &(f, mpr, base) in &table.rows {
        ensure(base == f, format!("baseline at f={f} is {base}"))?;
        ensure(
            ((mpr - f.powi(4)) / f.powi(4)).abs() < 1e-15,
            format!("mpr at f={f} is {mpr}"),
        )?;
    }
    let est = monte_carlo_capture(0.25, 4, 100_000, 1).map_err(|e| e.to_string())?;
    ensure(
        est.trials >= 100_000 && est.contains(0.00390625),
        format!("monte carlo {est:?} misses 0.00390625"),
    )?;
    Ok(format!(
        "7 rows exact; monte carlo {}/{} = {:.6}, 99% [{:.6}, {:.6}]",
        est.successes, est.trials, est.rate, est.ci_low, est.ci_high
    ))
}

fn figure_by_layers() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    mpr(&["figures", "--out", dir.path().to_str().unwrap()]);
    let csv = fs::read_to_string(dir.path().join("capture_by_layers.csv")).map_err(|e| e.to_string())?;
    ensure(csv == BY_LAYERS, format!("table differs:\n{csv}"))?;
    let (_, table) = figure_tables();
    for &(l, mpr, base) in &table.rows {
        ensure(mpr == 0.25f64.powi(l as i32), format!("mpr at l={l} is {mpr}"))?;
        ensure(base == 0.25, format!("baseline at l={l} is {base}"))?;
    }
    ensure(
        table.rows.windows(2).all(|w| w[1].1 < w[0].1),
        "mpr column is not strictly decreasing",
    )?;
    Ok("5 rows exact, strictly decreasing, baseline constant".into())
}

fn layer_rule() -> Result<String, String> {
    let (a, b) = (layer_count(1000), layer_count(100_000));
    ensure(
        a == 3 && b == 5,
        format!("layer_count(1000)={a}, layer_count(100000)={b}"),
    )?;
    Ok("1000 -> 3, 100000 -> 5".into())
}

fn conservation() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let mut total = 0;
    for seed in 0..200u64 {
        let mut rng = party_rng(seed, "acceptance-shape");
        let mut cfg = TimeFrameConfig::new(rng.gen_range(1..=64));
        cfg.seed = seed;
        cfg.layers = Some(rng.gen_range(1..=4));
        cfg.mixes_per_layer = rng.gen_range(1..=3);
        cfg.soundness = 16;
        let out = run(&cfg)?;
        ensure(
            out.result.failure.is_none(),
            format!("seed {seed}: {:?}", out.result.failure),
        )?;
        ensure(
            out.result.conserved(),
            format!("seed {seed}: plaintext multiset changed"),
        )?;
        let path = dir.path().join(format!("seed-{seed}.jsonl"));
        fs::write(&path, out.board.to_jsonl()).map_err(|e| e.to_string())?;
        let v = mpr(&["verify", "--quiet", path.to_str().unwrap()]);
        ensure(
            v.status.code() == Some(0),
            format!(
                "seed {seed}: verify exited {:?}\n{}",
                v.status.code(),
                String::from_utf8_lossy(&v.stdout)
            ),
        )?;
        total += cfg.messages;
    }
    Ok(format!("200 runs, {total} messages, {:.0?}", started.elapsed()))
}

fn detection() -> Result<String, String> {
    let mut routing_misses = Vec::new();
    let mut tamper_misses = Vec::new();
    for trial in 0..200u64 {
        let wrong_routing = trial < 100;
        let mut rng = party_rng(trial, "acceptance-adversary");
        let mut cfg = TimeFrameConfig::new(12);
        cfg.seed = 1000 + trial;
        cfg.layers = Some(3);
        cfg.mixes_per_layer = 2;
        cfg.soundness = 16;
        // Wrong routing needs a routed batch, so it sits past the entry layer.
        let mix = if wrong_routing {
            rng.gen_range(3..=6)
        } else {
            rng.gen_range(1..=6)
        };
        cfg.adversary.mixes = vec![mix];
        cfg.adversary.behavior = if wrong_routing {
            MixBehavior::WrongRouting
        } else {
            MixBehavior::InvalidShuffle
        };
        let out = run(&cfg)?;
        let named = audit(&out.board).misbehaving() == BTreeSet::from([mix]);
        if !named {
            if wrong_routing {
                routing_misses.push(trial);
            } else {
                tamper_misses.push(trial);
            }
        }
    }
    ensure(
        routing_misses.is_empty(),
        format!("wrong routing missed in trials {routing_misses:?}"),
    )?;
    ensure(
        tamper_misses.len() <= 1,
        format!("tampering missed in trials {tamper_misses:?}"),
    )?;
    Ok(format!(
        "wrong routing 100/100 named, tampering {}/100 named",
        100 - tamper_misses.len()
    ))
}

fn fault(target: FaultTarget, phase: Phase) -> Fault {
    Fault { target, phase }
}

fn availability() -> Result<String, String> {
    let scenario = |name: &str, messages: usize, layers: u32, per_layer: u32, f: Fault| {
        let mut cfg = TimeFrameConfig::new(messages);
        cfg.layers = Some(layers);
        cfg.mixes_per_layer = per_layer;
        cfg.soundness = 16;
        cfg.faults = vec![f];
        let out = run(&cfg)?;
        ensure(
            out.result.failure.is_none(),
            format!("{name}: {:?}", out.result.failure),
        )?;
        ensure(
            out.result.delivered.len() == messages && out.result.conserved(),
            format!("{name}: delivered {}/{messages}", out.result.delivered.len()),
        )?;
        ensure(
            audit(&out.board).passed(),
            format!("{name}: transcript does not verify"),
        )?;
        Ok::<_, String>(out)
    };

    scenario(
        "entry mix out",
        24,
        3,
        3,
        fault(FaultTarget::Server("mix-1".parse().unwrap()), Phase::Input),
    )?;
    let out = scenario("entry layer out", 24, 3, 2, fault(FaultTarget::Layer(1), Phase::Input))?;
    let view = BoardView::new(&out.board);
    ensure(
        view.inputs
            .iter()
            .any(|(k, r)| k.ctr == 2 && r.source == InputSource::Users),
        "entry layer out: users never entered at layer 2",
    )?;

    let out = scenario(
        "mid-layer mix out",
        27,
        3,
        3,
        fault(FaultTarget::Server("mix-5".parse().unwrap()), Phase::Mix),
    )?;
    let view = BoardView::new(&out.board);
    let (_, re) = view
        .reassigns
        .iter()
        .find(|(k, _)| k.source == 5)
        .ok_or("mid-layer mix out: no reassignment posted")?;
    let posted = &view.inputs[&BatchKey {
        ctr: 2,
        mix: 5,
        batch: 0,
    }]
        .ciphertexts;
    let open = |cs: &[Ciphertext<Ristretto>]| {
        let mut v: Vec<Vec<u8>> = cs
            .iter()
            .map(|c| decrypt(&Ristretto, &out.secret, c).unwrap())
            .collect();
        v.sort();
        v
    };
    ensure(
        open(&re.items) == open(posted),
        "reassigned items differ from the failed mix's inputs",
    )?;

    let out = scenario("whole layer out", 24, 3, 2, fault(FaultTarget::Layer(2), Phase::Mix))?;
    ensure(
        out.result.log.iter().any(|l| l.contains("takes over")),
        "whole layer out: next layer never took over",
    )?;
    Ok(format!(
        "4 scenarios delivered; {} reassigned ciphertexts decrypt to the same multiset",
        re.items.len()
    ))
}

fn load_balance() -> Result<String, String> {
    let mut cfg = TimeFrameConfig::new(600);
    cfg.layers = Some(3);
    cfg.soundness = 4;
    cfg.mixes = (1..=3)
        .flat_map(|layer| {
            (1..=3u64).map(move |b| MixSpec {
                throughput: b,
                org: format!("l{layer}-b{b}"),
                layer: Some(layer),
            })
        })
        .collect();
    let out = run(&cfg)?;
    ensure(out.result.conserved(), "messages lost")?;
    let report = load_balance_report(&out.board).map_err(|e| e.to_string())?;
    ensure(!report.rows.is_empty(), "no routed load")?;
    for r in &report.rows {
        let ideal = 600.0 * r.throughput as f64 / 6.0;
        let dev = (r.actual as f64 - ideal).abs();
        ensure(
            dev < r.sources.max(1) as f64,
            format!(
                "mix-{} in layer {}: {} vs {ideal} over {} source(s)",
                r.mix, r.layer, r.actual, r.sources
            ),
        )?;
    }
    ensure(report.within_bound(), "per-session bound violated")?;
    Ok(format!(
        "{} mixes, max deviation {:.3}",
        report.rows.len(),
        report.max_deviation
    ))
}

fn no_advantage() -> Result<String, String> {
    let caps = [Capacity { mix: 1, throughput: 1 }, Capacity { mix: 2, throughput: 3 }];
    let est = grind_experiment(&caps, 1, 1, 10_000, 8).map_err(|e| e.to_string())?;
    ensure(est.contains(0.25), format!("{est:?} excludes 0.25"))?;
    Ok(format!(
        "{}/{} = {:.4}, 99% [{:.4}, {:.4}] contains b/B = 0.25",
        est.successes, est.trials, est.rate, est.ci_low, est.ci_high
    ))
}

fn determinism() -> Result<String, String> {
    let mut checked = 0;
    for (seed, adversarial) in [(5u64, false), (6, true)] {
        let mut cfg = TimeFrameConfig::new(20);
        cfg.seed = seed;
        cfg.layers = Some(3);
        cfg.soundness = 16;
        if adversarial {
            cfg.adversary.mixes = vec![4];
            cfg.adversary.behavior = MixBehavior::WrongRouting;
        }
        let a = run(&cfg)?;
        let b = run(&cfg)?;
        let (ta, tb) = (a.board.to_jsonl(), b.board.to_jsonl());
        ensure(ta == tb, format!("seed {seed}: transcripts differ"))?;
        let imported = BulletinBoard::import_jsonl(Ristretto, ta.as_bytes()).map_err(|e| e.to_string())?;
        ensure(
            imported.to_jsonl() == ta,
            format!("seed {seed}: export/import changed bytes"),
        )?;
        ensure(
            audit(&imported) == audit(&a.board),
            format!("seed {seed}: verdicts changed after import"),
        )?;
        checked += ta.len();
    }
    Ok(format!(
        "2 configs, {checked} transcript bytes identical, verdicts identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("capture by fraction", figure_by_fraction),
        ("capture by layers", figure_by_layers),
        ("layer rule", layer_rule),
        ("conservation over 200 runs", conservation),
        ("detection completeness", detection),
        ("availability scenarios", availability),
        ("load balance", load_balance),
        ("no grinding advantage", no_advantage),
        ("determinism and replay", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/9 passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
