use mquench::eigensolve::{full_spectrum, LanczosConfig};
use mquench::evolve::{
    magnetization_series, spectral_magnetization, PropagationMethod, PropagatorConfig, TimeGrid,
};
use mquench::hamiltonians::{HamiltonianSpec, PauliTerm};
use mquench::pipeline::run_quench;
use mquench::quench::{collapse, MeasurementSpec};
use mquench::statespace::Axis;
use serde::Serialize;

use super::Status;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::Output;

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    /// Largest deviation from the expected value.
    deviation: f64,
    tolerance: f64,
}

#[derive(Serialize)]
struct Report {
    passed: bool,
    checks: Vec<Check>,
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn single_spin(grid: &TimeGrid, config: &PropagatorConfig) -> mquench::Result<f64> {
    let spec = HamiltonianSpec::Custom {
        n_sites: 1,
        terms: vec![PauliTerm::new(1.0, vec![(Axis::Z, 1)])],
    };
    let run = run_quench(&spec, &MeasurementSpec::x(1), grid, config, &LanczosConfig::default())?;
    let exact: Vec<f64> = grid.times().iter().map(|t| (2.0 * t).cos()).collect();
    Ok(max_gap(&run.series.values, &exact))
}

fn tfic_paths(grid: &TimeGrid, config: &PropagatorConfig) -> mquench::Result<(f64, f64)> {
    let spec = HamiltonianSpec::Tfic {
        n_sites: 6,
        lambda: 0.7,
    };
    let op = spec.build()?;
    let spectrum = full_spectrum(&op)?;
    let collapsed = collapse(&spectrum.ground().vector, &MeasurementSpec::x(2))?;
    let krylov = magnetization_series(&op, &collapsed, 2, grid, config)?;
    let spectral_cfg = PropagatorConfig {
        method: PropagationMethod::Spectral,
        ..*config
    };
    let exact = magnetization_series(&op, &collapsed, 2, grid, &spectral_cfg)?;
    let eq6 = spectral_magnetization(&spectrum, 2, grid)?;
    Ok((
        max_gap(&krylov.values, &exact.values),
        max_gap(&eq6.series.values, &exact.values),
    ))
}

fn collapse_norm() -> mquench::Result<f64> {
    let spec = HamiltonianSpec::LongRangeIsing {
        n_sites: 6,
        alpha: 1.0,
        b_over_j: 1.0,
        pair_convention: Default::default(),
    };
    let spectrum = full_spectrum(&spec.build()?)?;
    let c = collapse(&spectrum.ground().vector, &MeasurementSpec::x(3))?;
    let m0 = mquench::statespace::expectation(Axis::X, 3, &c.state)?;
    Ok((c.probability - 0.5).abs().max((m0 - 1.0).abs()))
}

/// Seconds-scale internal consistency checks.
pub fn cmd_selftest(config: &RunConfig, out: &mut Output) -> CliResult<Status> {
    let propagator = config.propagator()?;
    let grid = TimeGrid::new(5.0, 0.05)?;
    let mut checks = Vec::new();
    let spin = out.time("single_spin", || single_spin(&grid, &propagator))?;
    checks.push(Check {
        name: "single spin precesses as cos 2t",
        passed: spin <= 1e-8,
        deviation: spin,
        tolerance: 1e-8,
    });
    let (krylov, eq6) = out.time("tfic_paths", || tfic_paths(&grid, &propagator))?;
    checks.push(Check {
        name: "krylov matches spectral evolution",
        passed: krylov <= 1e-8,
        deviation: krylov,
        tolerance: 1e-8,
    });
    checks.push(Check {
        name: "cosine sum over gaps matches evolution",
        passed: eq6 <= 1e-8,
        deviation: eq6,
        tolerance: 1e-8,
    });
    let norm = collapse_norm()?;
    checks.push(Check {
        name: "collapse gives p = 1/2 and m(0) = 1",
        passed: norm <= 1e-10,
        deviation: norm,
        tolerance: 1e-10,
    });
    let passed = checks.iter().all(|c| c.passed);
    out.write_json("selftest.json", &Report { passed, checks })?;
    if passed {
        Ok(Status::Complete)
    } else {
        Err(mquench::Error::Precondition("selftest failed, see selftest.json".into()).into())
    }
}
