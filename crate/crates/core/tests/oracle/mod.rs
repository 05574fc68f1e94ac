//! Dense Kronecker-product constructions of every operator the crate builds,
//! with checks that return the largest deviation found.

use std::sync::Arc;

use mquench::hamiltonians::{HamiltonianSpec, Operator, PairConvention, PauliTerm};
use mquench::quench::{collapse, MeasurementSpec, OutcomePolicy};
use mquench::statespace::{apply_pauli, expectation, Axis, Basis, StateVector, C64};
use nalgebra::{DMatrix, DVector};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn pauli(axis: Axis) -> DMatrix<C64> {
    // |0⟩ = up, |1⟩ = down.
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    match axis {
        Axis::X => DMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        Axis::Y => DMatrix::from_row_slice(2, 2, &[z, c(0.0, -1.0), c(0.0, 1.0), z]),
        Axis::Z => DMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
    }
}

/// σ^axis on `site` (1-based); site 1 is the least significant factor.
fn site_op(n: usize, axis: Axis, site: usize) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(1, 1);
    for s in (1..=n).rev() {
        let factor = if s == site {
            pauli(axis)
        } else {
            DMatrix::identity(2, 2)
        };
        m = m.kronecker(&factor);
    }
    m
}

fn dense_hamiltonian(spec: &HamiltonianSpec) -> DMatrix<C64> {
    let n = spec.n_sites();
    let dim = 1 << n;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    let pair = |a: Axis, i: usize, j: usize, k: f64| site_op(n, a, i) * site_op(n, a, j) * c(k, 0.0);
    match *spec {
        HamiltonianSpec::LongRangeIsing {
            alpha,
            b_over_j,
            pair_convention,
            ..
        } => {
            let factor = match pair_convention {
                PairConvention::Ordered => 1.0,
                PairConvention::Unordered => 2.0,
            };
            for i in 1..=n {
                for j in i + 1..=n {
                    h += pair(Axis::X, i, j, factor * ((j - i) as f64).powf(-alpha));
                }
            }
            for i in 1..=n {
                h += site_op(n, Axis::Z, i) * c(b_over_j, 0.0);
            }
        }
        HamiltonianSpec::Tfic { lambda, .. } => {
            for i in 1..=n {
                h += pair(Axis::X, i, i % n + 1, 1.0);
                h += site_op(n, Axis::Z, i) * c(lambda, 0.0);
            }
        }
        HamiltonianSpec::KondoChain {
            j_prime,
            j2_over_j1,
            ..
        } => {
            for a in [Axis::X, Axis::Y, Axis::Z] {
                h += pair(a, 1, 2, j_prime);
                if n >= 3 {
                    h += pair(a, 1, 3, j_prime * j2_over_j1);
                }
                for i in 2..n {
                    h += pair(a, i, i + 1, 1.0);
                }
                for i in 2..n.saturating_sub(1) {
                    h += pair(a, i, i + 2, j2_over_j1);
                }
            }
        }
        HamiltonianSpec::Custom { ref terms, .. } => {
            for t in terms {
                let mut m = DMatrix::<C64>::identity(dim, dim);
                for &(a, s) in &t.factors {
                    m = site_op(n, a, s) * m;
                }
                h += m * c(t.coefficient, 0.0);
            }
        }
    }
    h
}

fn column(psi: &StateVector) -> DVector<C64> {
    DVector::from_column_slice(psi.amplitudes())
}

pub fn models() -> Vec<HamiltonianSpec> {
    vec![
        HamiltonianSpec::LongRangeIsing {
            n_sites: 5,
            alpha: 0.5,
            b_over_j: 1.0,
            pair_convention: PairConvention::Ordered,
        },
        HamiltonianSpec::LongRangeIsing {
            n_sites: 6,
            alpha: 3.0,
            b_over_j: 0.7,
            pair_convention: PairConvention::Unordered,
        },
        HamiltonianSpec::Tfic {
            n_sites: 3,
            lambda: 0.95,
        },
        HamiltonianSpec::Tfic {
            n_sites: 6,
            lambda: 1.0,
        },
        HamiltonianSpec::KondoChain {
            n_sites: 4,
            j_prime: 0.5,
            j2_over_j1: 0.2412,
        },
        HamiltonianSpec::KondoChain {
            n_sites: 6,
            j_prime: 0.3,
            j2_over_j1: 0.2412,
        },
        HamiltonianSpec::Custom {
            n_sites: 4,
            terms: vec![
                PauliTerm::new(0.7, vec![(Axis::X, 1), (Axis::Y, 3)]),
                PauliTerm::new(-1.3, vec![(Axis::Z, 2), (Axis::Z, 4)]),
                PauliTerm::new(0.4, vec![(Axis::Y, 4)]),
            ],
        },
    ]
}

/// Matrix-free and assembled builders against the dense Hamiltonian.
pub fn builder_deviation(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for spec in models() {
        let op = spec.build().unwrap();
        let dense = dense_hamiltonian(&spec);
        let assembled = op.assemble();
        for seed in 0..seeds {
            let psi = StateVector::random(op.basis().clone(), seed);
            let expect = &dense * column(&psi);
            for got in [op.apply(&psi).unwrap(), assembled.apply(&psi).unwrap()] {
                worst = worst.max((column(&got) - &expect).camax());
            }
        }
    }
    worst
}

/// Sector-restricted Kondo operators against blocks of the dense matrix.
pub fn sector_deviation(seeds: u64) -> f64 {
    let spec = HamiltonianSpec::KondoChain {
        n_sites: 6,
        j_prime: 0.4,
        j2_over_j1: 0.2412,
    };
    let dense = dense_hamiltonian(&spec);
    let full = Basis::full(6).unwrap();
    let mut worst = 0.0f64;
    for popcounts in [vec![3], vec![2, 3, 4], vec![0, 6]] {
        let basis = Basis::sector(6, &popcounts).unwrap();
        let op = spec.build_in(basis.clone()).unwrap();
        for seed in 0..seeds {
            let psi = StateVector::random(basis.clone(), seed);
            let wide = psi.embed(&full).unwrap();
            let expect = StateVector::new(full.clone(), (&dense * column(&wide)).as_slice().to_vec())
                .unwrap();
            let got = op.apply(&psi).unwrap().embed(&full).unwrap();
            worst = worst.max(got.distance(&expect).unwrap());
        }
    }
    worst
}

/// Single-site Pauli action and expectation values for N = 1..=6.
pub fn pauli_deviation(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for n in 1..=6 {
        let basis: Arc<Basis> = Basis::full(n).unwrap();
        for seed in 0..seeds {
            let psi = StateVector::random(basis.clone(), 1000 + seed);
            let site = 1 + (seed as usize) % n;
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let m = site_op(n, axis, site);
                let expect = &m * column(&psi);
                let got = apply_pauli(axis, site, &psi).unwrap();
                worst = worst.max((column(&got) - &expect).camax());
                let value = column(&psi).dotc(&expect);
                worst = worst.max(value.im.abs());
                worst = worst.max((expectation(axis, site, &psi).unwrap() - value.re).abs());
            }
        }
    }
    worst
}

/// Collapse against (1 ± σ)/2 applied densely, both outcomes, all axes.
pub fn projector_deviation(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for n in 1..=6 {
        let basis = Basis::full(n).unwrap();
        let dim = 1 << n;
        for seed in 0..seeds {
            let psi = StateVector::random(basis.clone(), 5000 + seed);
            let site = 1 + (seed as usize * 7) % n;
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                for (outcome, sign) in [(OutcomePolicy::ForcedUp, 1.0), (OutcomePolicy::ForcedDown, -1.0)] {
                    let projector = (DMatrix::<C64>::identity(dim, dim)
                        + site_op(n, axis, site) * c(sign, 0.0))
                        * c(0.5, 0.0);
                    let image = &projector * column(&psi);
                    let p = image.norm_squared();
                    let spec = MeasurementSpec { site, axis, outcome };
                    let got = collapse(&psi, &spec).unwrap();
                    worst = worst.max((got.probability - p).abs());
                    let expect = image / c(p.sqrt(), 0.0);
                    worst = worst.max((column(&got.state) - expect).camax());
                }
            }
        }
    }
    worst
}
