//! Krylov propagation, spectral evolution and the collapse normalization.

use mquench::eigensolve::{full_spectrum, LanczosConfig};
use mquench::evolve::{
    magnetization_series, propagate, spectral_evolve, spectral_magnetization, PropagationMethod,
    PropagatorConfig, TimeGrid,
};
use mquench::hamiltonians::{HamiltonianSpec, Operator, PairConvention};
use mquench::pipeline::QuenchContext;
use mquench::quench::{collapse, MeasurementSpec};
use mquench::statespace::{expectation, Axis, StateVector};

fn energy(op: &dyn Operator, psi: &StateVector) -> f64 {
    psi.inner(&op.apply(psi).unwrap()).unwrap().re
}

fn lri(alpha: f64) -> HamiltonianSpec {
    HamiltonianSpec::LongRangeIsing {
        n_sites: 8,
        alpha,
        b_over_j: 1.0,
        pair_convention: PairConvention::Ordered,
    }
}

#[test]
fn krylov_matches_spectral_evolution() {
    for (n, lambda) in [(8, 0.8), (10, 1.0)] {
        let spec = HamiltonianSpec::Tfic { n_sites: n, lambda };
        let op = spec.build().unwrap();
        let spectrum = full_spectrum(&op).unwrap();
        let psi0 = collapse(&spectrum.ground().vector, &MeasurementSpec::x(2))
            .unwrap()
            .state;
        let e0 = energy(&op, &psi0);
        let targets: Vec<f64> = (1..=40).map(|k| 0.5 * k as f64).collect();
        let mut worst = (0.0f64, 0.0f64);
        propagate(&op, psi0.amplitudes(), &targets, &PropagatorConfig::default(), |k, amps| {
            let got = StateVector::new(op.basis().clone(), amps.to_vec())?;
            let exact = spectral_evolve(&spectrum, &psi0, targets[k])?;
            worst.0 = worst.0.max(got.distance(&exact)?);
            worst.1 = worst.1.max((energy(&op, &got) - e0).abs());
            Ok(())
        })
        .unwrap();
        assert!(worst.0 <= 1e-8, "N={n}: state distance {}", worst.0);
        assert!(worst.1 <= 1e-8, "N={n}: energy drift {}", worst.1);
    }
}

#[test]
fn spectral_sum_matches_direct_series() {
    let grid = TimeGrid::new(20.0, 0.05).unwrap();
    let exact = PropagatorConfig {
        method: PropagationMethod::Spectral,
        ..PropagatorConfig::default()
    };
    let tfic = HamiltonianSpec::Tfic {
        n_sites: 8,
        lambda: 0.9,
    };
    for spec in [tfic, lri(0.5), lri(3.0)] {
        let op = spec.build().unwrap();
        let spectrum = full_spectrum(&op).unwrap();
        let collapsed = collapse(&spectrum.ground().vector, &MeasurementSpec::x(3)).unwrap();
        let eq = spectral_magnetization(&spectrum, 3, &grid).unwrap();
        for config in [exact, PropagatorConfig::default()] {
            let direct = magnetization_series(&op, &collapsed, 3, &grid, &config).unwrap();
            let gap = eq
                .series
                .values
                .iter()
                .zip(&direct.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap <= 1e-8, "{spec:?} {:?}: {gap}", config.method);
        }
    }
}

#[test]
fn forced_up_collapse_is_normalized() {
    let kondo = HamiltonianSpec::KondoChain {
        n_sites: 8,
        j_prime: 0.5,
        j2_over_j1: 0.2412,
    };
    let tfic = HamiltonianSpec::Tfic {
        n_sites: 8,
        lambda: 1.0,
    };
    for spec in [tfic, lri(1.5), kondo] {
        let ctx = QuenchContext::new(&spec, Axis::X, &LanczosConfig::default()).unwrap();
        for site in 1..=8 {
            let target = ctx.evolution_operator().basis().clone();
            let c = mquench::quench::collapse_in(&ctx.ground.state, &MeasurementSpec::x(site), &target)
                .unwrap();
            assert!((c.probability - 0.5).abs() < 1e-10, "{spec:?} site {site}: p = {}", c.probability);
            let m0 = expectation(Axis::X, site, &c.state).unwrap();
            assert!((m0 - 1.0).abs() < 1e-10);
            assert!((c.state.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn sampled_series_start_at_one() {
    let spec = HamiltonianSpec::Tfic {
        n_sites: 8,
        lambda: 1.0,
    };
    let grid = TimeGrid::new(2.0, 0.1).unwrap();
    let run = mquench::pipeline::run_quench(
        &spec,
        &MeasurementSpec::x(4),
        &grid,
        &PropagatorConfig::default(),
        &LanczosConfig::default(),
    )
    .unwrap();
    assert!((run.series.values[0] - 1.0).abs() < 1e-10);
    assert!(run.series.values.iter().all(|v| v.abs() <= 1.0 + 1e-10));
}
