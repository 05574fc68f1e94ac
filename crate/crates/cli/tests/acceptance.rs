//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion does. The heavy runs go through the `mquench`
//! binary so the artifacts on disk are what gets judged.

// Negated comparisons below count NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mquench::eigensolve::{full_spectrum, LanczosConfig};
use mquench::evolve::{
    magnetization_series, propagate, spectral_evolve, spectral_magnetization, PropagationMethod,
    PropagatorConfig, TimeGrid,
};
use mquench::hamiltonians::{HamiltonianSpec, Operator, PairConvention};
use mquench::pipeline::QuenchContext;
use mquench::quench::{collapse, collapse_in, MeasurementSpec};
use mquench::statespace::{expectation, Axis, StateVector};
use serde_json::{json, Value};

struct Outcome {
    passed: bool,
    detail: String,
}

struct Ledger {
    lines: Vec<(String, bool)>,
}

impl Ledger {
    /// Runs one criterion; a runtime over `limit_s` fails it.
    fn check(&mut self, name: &str, limit_s: Option<f64>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut out = f();
        let secs = start.elapsed().as_secs_f64();
        if let Some(limit) = limit_s {
            if secs >= limit {
                out.passed = false;
                out.detail.push_str(&format!("; runtime {secs:.0}s over the {limit:.0}s budget"));
            }
        }
        let line = format!(
            "[{}] {name} ({secs:.1}s): {}",
            if out.passed { "PASS" } else { "FAIL" },
            out.detail
        );
        println!("{line}");
        self.lines.push((line, out.passed));
    }
}

fn mquench(dir: &Path, command: &str, config: &Value, out: &str, jobs: usize) -> (i32, PathBuf) {
    let path = dir.join(format!("{out}.config.json"));
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mquench"))
        .current_dir(dir)
        .env_remove("MQUENCH_JOBS")
        .args([command, "--config", path.to_str().unwrap(), "--out", out])
        .args(["--jobs", &jobs.to_string()])
        .status()
        .expect("binary runs");
    (status.code().unwrap_or(-1), dir.join(out))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn lri(n: usize, alpha: f64) -> HamiltonianSpec {
    HamiltonianSpec::LongRangeIsing {
        n_sites: n,
        alpha,
        b_over_j: 1.0,
        pair_convention: PairConvention::Ordered,
    }
}

fn tfic(n: usize, lambda: f64) -> HamiltonianSpec {
    HamiltonianSpec::Tfic { n_sites: n, lambda }
}

fn normalization() -> Outcome {
    let kondo = HamiltonianSpec::KondoChain {
        n_sites: 8,
        j_prime: 0.5,
        j2_over_j1: 0.2412,
    };
    let mut worst = (0.0f64, 0.0f64);
    for spec in [lri(8, 1.0), tfic(8, 1.0), kondo] {
        let ctx = QuenchContext::new(&spec, Axis::X, &LanczosConfig::default()).unwrap();
        let target = ctx.evolution_operator().basis().clone();
        for site in 1..=8 {
            let c = collapse_in(&ctx.ground.state, &MeasurementSpec::x(site), &target).unwrap();
            let m0 = expectation(Axis::X, site, &c.state).unwrap();
            worst.0 = worst.0.max((m0 - 1.0).abs());
            worst.1 = worst.1.max((c.probability - 0.5).abs());
        }
    }
    Outcome {
        passed: worst.0 <= 1e-10 && worst.1 <= 1e-10,
        detail: format!("max |m(0) - 1| = {:.1e}, max |p - 1/2| = {:.1e} (tol 1e-10)", worst.0, worst.1),
    }
}

fn energy(op: &dyn Operator, psi: &StateVector) -> f64 {
    psi.inner(&op.apply(psi).unwrap()).unwrap().re
}

fn propagator_cross_validation() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for n in [8, 10] {
        let op = tfic(n, 0.9).build().unwrap();
        let spectrum = full_spectrum(&op).unwrap();
        let psi0 = collapse(&spectrum.ground().vector, &MeasurementSpec::x(1)).unwrap().state;
        let e0 = energy(&op, &psi0);
        let targets: Vec<f64> = (1..=100).map(|k| 0.2 * k as f64).collect();
        propagate(&op, psi0.amplitudes(), &targets, &PropagatorConfig::default(), |k, amps| {
            let got = StateVector::new(op.basis().clone(), amps.to_vec())?;
            let exact = spectral_evolve(&spectrum, &psi0, targets[k])?;
            worst.0 = worst.0.max(got.distance(&exact)?);
            worst.1 = worst.1.max((energy(&op, &got) - e0).abs());
            Ok(())
        })
        .unwrap();
    }
    Outcome {
        passed: worst.0 <= 1e-8 && worst.1 <= 1e-8,
        detail: format!(
            "TFIC N=8,10 to t=20: state distance {:.1e}, energy drift {:.1e} (tol 1e-8)",
            worst.0, worst.1
        ),
    }
}

fn spectral_identity() -> Outcome {
    let grid = TimeGrid::new(20.0, 0.05).unwrap();
    let exact = PropagatorConfig {
        method: PropagationMethod::Spectral,
        ..PropagatorConfig::default()
    };
    let mut worst = 0.0f64;
    for spec in [tfic(8, 0.9), lri(8, 0.5), lri(8, 3.0)] {
        let op = spec.build().unwrap();
        let spectrum = full_spectrum(&op).unwrap();
        let collapsed = collapse(&spectrum.ground().vector, &MeasurementSpec::x(1)).unwrap();
        let sum = spectral_magnetization(&spectrum, 1, &grid).unwrap();
        for config in [exact, PropagatorConfig::default()] {
            let direct = magnetization_series(&op, &collapsed, 1, &grid, &config).unwrap();
            for (a, b) in sum.series.values.iter().zip(&direct.values) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Outcome {
        passed: worst <= 1e-8,
        detail: format!("TFIC N=8, LRI N=8 alpha 0.5/3: max pointwise gap {worst:.1e} (tol 1e-8)"),
    }
}

fn spectroscopy(dir: &Path) -> Outcome {
    let mut matched = Vec::new();
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    for alpha in [0.5, 3.0] {
        let config = json!({
            "model": {"type": "long_range_ising", "n_sites": 10, "alpha": alpha, "b_over_j": 1.0},
            "measurement": {"site": 1},
            "grid": {"t_max": 200.0, "dt": 0.05},
            "spectroscopy": {}
        });
        let (code, out) = mquench(dir, "spectroscopy", &config, &format!("spectro_a{alpha}"), 1);
        if code != 0 {
            problems.push(format!("alpha {alpha}: exit {code}"));
            continue;
        }
        let peaks = read_json(&out.join("peaks.json"));
        let report = read_json(&out.join("match.json"));
        let total = peaks["total_weight"].as_f64().unwrap();
        let orphans = report["orphan_peaks"].as_array().unwrap().len();
        let count = report["matched_count"].as_u64().unwrap();
        if orphans > 0 {
            problems.push(format!("alpha {alpha}: {orphans} peak(s) farther than dE from any gap"));
        }
        if (total - 0.5).abs() > 0.025 {
            problems.push(format!("alpha {alpha}: total weight {total:.4} outside 0.5 +- 5%"));
        }
        summary.push(format!("alpha {alpha}: {count} matched, weight {total:.4}"));
        matched.push(count);
    }
    if matched.len() == 2 && matched[1] <= matched[0] {
        problems.push(format!(
            "alpha 3 matched {} peaks, not more than alpha 0.5 ({})",
            matched[1], matched[0]
        ));
    }
    Outcome {
        passed: problems.is_empty(),
        detail: [summary.join(", "), problems.join("; ")]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" | "),
    }
}

fn tfic_collapse(dir: &Path) -> Outcome {
    let family = |extra: Value| {
        let mut c = json!({"model": "tfic", "sizes": [10, 14, 18], "ratio": 1.0, "filter": 0.2, "window": [0.0, 2.0]});
        c.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        json!({ "collapse": c })
    };
    let nus = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0];
    let (code, out) = mquench(dir, "collapse", &family(json!({"nu_grid": nus})), "tfic_scan", 1);
    let (code_c, crit) = mquench(dir, "collapse", &family(json!({"fixed_control": 1.0})), "tfic_critical", 1);
    let (code_o, off) = mquench(dir, "collapse", &family(json!({"fixed_control": 0.9})), "tfic_control", 1);
    if code != 0 || code_c != 0 || code_o != 0 {
        return Outcome {
            passed: false,
            detail: format!("collapse runs exited {code}/{code_c}/{code_o}"),
        };
    }
    let scan = read_json(&out.join("metric.json"));
    let metrics = f64s(&scan["metrics"]);
    let at = |nu: f64| metrics[nus.iter().position(|&x| x == nu).unwrap()];
    let nu_best = scan["nu_best"].as_f64().unwrap_or(f64::NAN);
    let critical = read_json(&crit.join("metric.json"))["metric_raw"].as_f64().unwrap();
    let control = read_json(&off.join("metric.json"))["metric_raw"].as_f64().unwrap();
    let mut problems = Vec::new();
    if !(2.0 * at(1.0) <= at(0.5) && 2.0 * at(1.0) <= at(2.0)) {
        problems.push("metric at nu=1 not 2x below nu=0.5 and nu=2".to_string());
    }
    if !(0.8..=1.2).contains(&nu_best) {
        problems.push(format!("nu_best {nu_best} outside [0.8, 1.2]"));
    }
    if !(critical < control) {
        problems.push("critical family does not beat the lambda=0.9 control".into());
    }
    Outcome {
        passed: problems.is_empty(),
        detail: format!(
            "filtered metric nu=0.5/1/2: {:.4}/{:.4}/{:.4}, nu_best {nu_best}; raw metric at lambda_c {critical:.4} vs lambda=0.9 {control:.4}{}{}",
            at(0.5),
            at(1.0),
            at(2.0),
            if problems.is_empty() { "" } else { " | " },
            problems.join("; ")
        ),
    }
}

/// The measured ξ_K fits and law from the cloud run, if it got that far.
struct CloudTable {
    law: Option<(f64, f64)>,
}

fn kondo_cloud(dir: &Path, table: &mut CloudTable) -> Outcome {
    let j_primes = [0.3, 0.4, 0.5, 0.6, 0.7];
    let config = json!({"cloud": {"n_sites": 20, "j_primes": [0.3, 0.4, 0.5, 0.6, 0.7, 1.0]}});
    let (code, out) = mquench(dir, "cloud", &config, "cloud", 1);
    if !out.join("fits.json").exists() {
        return Outcome {
            passed: false,
            detail: format!("cloud run exited {code} without fits.json"),
        };
    }
    let mut problems = Vec::new();
    if code != 0 {
        problems.push(format!("exit {code}"));
    }
    let unit = fs::read_to_string(out.join("profiles/J1.csv")).unwrap_or_default();
    let unit_dm: Vec<f64> = unit
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    if unit_dm.is_empty() || unit_dm.iter().any(|&d| d != 0.0) {
        problems.push("J'=1 profile is not identically zero".into());
    }
    let fits = read_json(&out.join("fits.json"));
    let mut xi = Vec::new();
    let mut r2 = Vec::new();
    for jp in j_primes {
        let fit = fits["fits"]
            .as_array()
            .unwrap()
            .iter()
            .find(|f| f["j_prime"].as_f64() == Some(jp));
        match fit {
            Some(f) => {
                xi.push(f["xi"].as_f64().unwrap());
                r2.push(f["r2"].as_f64().unwrap());
            }
            None => problems.push(format!("no tail fit for J'={jp}")),
        }
    }
    let low: Vec<String> = r2
        .iter()
        .zip(j_primes)
        .filter(|(r, _)| **r < 0.9)
        .map(|(r, jp)| format!("J'={jp}: {r:.3}"))
        .collect();
    if !low.is_empty() {
        problems.push(format!("tail r2 below 0.9 ({})", low.join(", ")));
    }
    if xi.windows(2).any(|w| !(w[1] < w[0])) {
        problems.push("xi not strictly decreasing in J'".into());
    }
    let law = &fits["law"];
    let (a, law_r2) = (law["A"].as_f64(), law["r2"].as_f64());
    match (a, law_r2) {
        (Some(a), Some(r)) => {
            table.law = Some((a, law["intercept"].as_f64().unwrap()));
            if !(0.09..=0.27).contains(&a) {
                problems.push(format!("A = {a:.3} outside [0.09, 0.27]"));
            }
            if r < 0.9 {
                problems.push(format!("law r2 {r:.3} below 0.9"));
            }
        }
        _ => problems.push("no Kondo law fit".into()),
    }
    Outcome {
        passed: problems.is_empty(),
        detail: format!(
            "xi(J'=0.3..0.7) = [{}], tail r2 = [{}], A = {}, law r2 = {}{}{}",
            xi.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", "),
            r2.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", "),
            a.map_or("-".into(), |a| format!("{a:.3}")),
            law_r2.map_or("-".into(), |r| format!("{r:.3}")),
            if problems.is_empty() { "" } else { " | " },
            problems.join("; ")
        ),
    }
}

fn kondo_collapse(dir: &Path, table: &CloudTable) -> Outcome {
    let Some((a, intercept)) = table.law else {
        return Outcome {
            passed: false,
            detail: "no measured screening-length law to tune with".into(),
        };
    };
    let config = json!({"collapse": {
        "model": "kondo",
        "sizes": [12, 16, 20],
        "ratio": 2.0,
        "tuning": {"kind": "kondo_law", "a": a, "intercept": intercept}
    }});
    let (code, out) = mquench(dir, "collapse", &config, "kondo_collapse", 1);
    if code != 0 {
        return Outcome {
            passed: false,
            detail: format!("collapse exited {code}"),
        };
    }
    let metric = read_json(&out.join("metric.json"));
    let w = &metric["scaling_window"];
    let (pre, post) = (w["pre_metric"].as_f64().unwrap(), w["post_metric"].as_f64().unwrap());
    let controls: Vec<String> = metric["members"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| format!("{:.3}", m["control"].as_f64().unwrap()))
        .collect();
    Outcome {
        passed: pre < post,
        detail: format!(
            "J' = [{}] from the fitted law; filtered metric x<1/2 {pre:.4} vs x>1/2 {post:.4}",
            controls.join(", ")
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let parts = [
        ("builders", oracle::builder_deviation(100)),
        ("sectors", oracle::sector_deviation(100)),
        ("pauli/expectations", oracle::pauli_deviation(100)),
        ("projectors", oracle::projector_deviation(100)),
    ];
    let worst = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    Outcome {
        passed: worst <= 1e-10,
        detail: parts
            .iter()
            .map(|(name, err)| format!("{name} {err:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
            + " (tol 1e-10, 100 states each)",
    }
}

/// Every artifact of two runs, listed and compared byte for byte.
fn same_artifacts(a: &Path, b: &Path) -> Result<usize, String> {
    let list = |dir: &Path| {
        let m = read_json(&dir.join("manifest.json"));
        m["artifacts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x["path"].as_str().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    let (la, lb) = (list(a), list(b));
    if la != lb {
        return Err(format!("artifact lists differ: {la:?} vs {lb:?}"));
    }
    for rel in &la {
        if fs::read(a.join(rel)).unwrap() != fs::read(b.join(rel)).unwrap() {
            return Err(format!("{rel} differs"));
        }
    }
    Ok(la.len())
}

fn determinism(dir: &Path) -> Outcome {
    let runs = [
        (
            "quench",
            json!({"model": {"type": "kondo_chain", "n_sites": 10, "j_prime": 0.4},
                   "measurement": {"site": 3}, "grid": {"t_max": 5.0, "dt": 0.05}}),
        ),
        (
            "spectroscopy",
            json!({"model": {"type": "long_range_ising", "n_sites": 8, "alpha": 1.0, "b_over_j": 1.0},
                   "measurement": {"site": 1}, "grid": {"t_max": 60.0, "dt": 0.05}, "spectroscopy": {}}),
        ),
        (
            "collapse",
            json!({"collapse": {"model": "tfic", "sizes": [6, 8, 10], "ratio": 1.0, "nu_grid": [0.5, 1.0, 2.0]}}),
        ),
        ("cloud", json!({"cloud": {"n_sites": 10, "j_primes": [0.4, 0.6, 0.8, 1.0]}})),
        ("selftest", json!({})),
    ];
    let mut problems = Vec::new();
    let mut files = 0;
    for (command, config) in runs {
        // Different worker counts must not change a byte.
        let (ca, a) = mquench(dir, command, &config, &format!("det_{command}_a"), 1);
        let (cb, b) = mquench(dir, command, &config, &format!("det_{command}_b"), 2);
        if ca != cb {
            problems.push(format!("{command}: exit codes {ca} vs {cb}"));
            continue;
        }
        match same_artifacts(&a, &b) {
            Ok(n) => files += n,
            Err(e) => problems.push(format!("{command}: {e}")),
        }
    }
    Outcome {
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("5 subcommands rerun with 1 and 2 workers: {files} artifacts byte-identical")
        } else {
            problems.join("; ")
        },
    }
}

#[test]
fn primary_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut ledger = Ledger { lines: Vec::new() };
    let mut table = CloudTable { law: None };
    ledger.check("post-collapse normalization", Some(10.0), normalization);
    ledger.check("propagator cross-validation", Some(60.0), propagator_cross_validation);
    ledger.check("spectral sum identity", Some(60.0), spectral_identity);
    ledger.check("spectroscopy N=10", Some(300.0), || spectroscopy(dir));
    ledger.check("TFIC collapse", Some(900.0), || tfic_collapse(dir));
    ledger.check("Kondo cloud N=20", Some(1800.0), || kondo_cloud(dir, &mut table));
    ledger.check("Kondo collapse", Some(1200.0), || kondo_collapse(dir, &table));
    ledger.check("oracle equivalence", Some(60.0), oracle_equivalence);
    ledger.check("determinism", None, || determinism(dir));

    let failed: Vec<&str> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        ledger.lines.len() - failed.len(),
        ledger.lines.len()
    );
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
