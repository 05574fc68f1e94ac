//! Ground states and low-lying spectra by Lanczos iteration; complete
//! spectra of small systems by dense diagonalization.
//!
//! The Lanczos basis is fully reorthogonalized (two classical Gram-Schmidt
//! passes per vector) and thick-restarted once it reaches
//! [`LanczosConfig::basis_cap`] vectors, which bounds memory for the larger
//! chains. Degenerate eigenvectors, invisible to a single Krylov sequence,
//! are recovered by re-running in the orthogonal complement of the vectors
//! found so far.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hamiltonians::Operator;
use crate::statespace::{dot, norm, Basis, StateVector, C64};

/// Seed of the Lanczos starting vector.
pub const START_SEED: u64 = 0x6d71_7565_6e63_6801;
pub const GROUND_TOL: f64 = 1e-10;
pub const EXCITED_TOL: f64 = 1e-8;
/// Largest dimension accepted by [`full_spectrum`].
pub const DENSE_CAP: usize = 1 << 14;
/// Eigenvalues closer than this are treated as one degenerate cluster.
pub const CLUSTER_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: StateVector,
    /// ‖Hv − Ev‖ measured after the solve.
    pub residual: f64,
}

/// Eigenpairs in ascending order of energy.
#[derive(Clone, Debug)]
pub struct SpectrumTable {
    pairs: Vec<EigenPair>,
    complete: bool,
}

impl SpectrumTable {
    pub fn new(pairs: Vec<EigenPair>, complete: bool) -> Result<Self> {
        // Degenerate clusters are ordered by phase convention, not value.
        if pairs.windows(2).any(|w| w[0].value > w[1].value + CLUSTER_TOL) {
            return Err(Error::InvalidArgument("energies must be non-decreasing".into()));
        }
        Ok(SpectrumTable { pairs, complete })
    }

    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    pub fn energies(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    pub fn ground(&self) -> &EigenPair {
        &self.pairs[0]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// True when the table holds every eigenpair of the operator.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.pairs[0].vector.basis()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosConfig {
    pub tol: f64,
    /// Maximum number of operator applications per Lanczos run.
    pub max_iter: usize,
    /// Basis size at which the iteration is thick-restarted.
    pub basis_cap: usize,
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig {
            tol: GROUND_TOL,
            max_iter: 5000,
            basis_cap: 120,
            seed: START_SEED,
        }
    }
}

/// Lowest eigenpair with residual ≤ `tol`.
pub fn ground_state(op: &dyn Operator, tol: f64, max_iter: usize) -> Result<EigenPair> {
    let config = LanczosConfig {
        tol,
        max_iter,
        ..LanczosConfig::default()
    };
    ground_state_with(op, &config)
}

pub fn ground_state_with(op: &dyn Operator, config: &LanczosConfig) -> Result<EigenPair> {
    check_args(op, config.tol)?;
    let mut found = lanczos_run(op, &[], 1, config, config.seed)?;
    found.truncate(1);
    found
        .pop()
        .ok_or_else(|| Error::InvalidArgument("empty operator".into()))
}

/// The `k` lowest eigenpairs. When the k-th energy belongs to a degenerate
/// cluster the whole cluster is returned, so the table may hold more than
/// `k` entries.
pub fn lowest_k(op: &dyn Operator, k: usize, tol: f64) -> Result<SpectrumTable> {
    let config = LanczosConfig {
        tol,
        ..LanczosConfig::default()
    };
    lowest_k_with(op, k, &config)
}

pub fn lowest_k_with(op: &dyn Operator, k: usize, config: &LanczosConfig) -> Result<SpectrumTable> {
    check_args(op, config.tol)?;
    if k == 0 || k > op.dim() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            op.dim()
        )));
    }
    let mut locked: Vec<EigenPair> = Vec::new();
    let mut round = 0u64;
    loop {
        let need = k.saturating_sub(locked.len()).max(1);
        let deflate: Vec<&[C64]> = locked.iter().map(|p| p.vector.amplitudes()).collect();
        let found = lanczos_run(op, &deflate, need, config, config.seed.wrapping_add(round))?;
        round += 1;
        if found.is_empty() {
            break;
        }
        if locked.len() >= k {
            let kth = kth_value(&locked, k);
            if found[0].value > kth + CLUSTER_TOL {
                break;
            }
            // A lower or degenerate state was missed: keep only those.
            locked.extend(found.into_iter().filter(|p| p.value <= kth + CLUSTER_TOL));
        } else {
            locked.extend(found);
        }
        if locked.len() == op.dim() {
            break;
        }
    }
    sort_pairs(&mut locked);
    let kth = locked[k.min(locked.len()) - 1].value;
    locked.retain(|p| p.value <= kth + CLUSTER_TOL);
    let complete = locked.len() == op.dim();
    SpectrumTable::new(locked, complete)
}

fn kth_value(pairs: &[EigenPair], k: usize) -> f64 {
    let mut values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    values.sort_by(f64::total_cmp);
    values[k - 1]
}

fn check_args(op: &dyn Operator, tol: f64) -> Result<()> {
    if op.dim() == 0 {
        return Err(Error::InvalidArgument("operator has dimension 0".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    Ok(())
}

/// Every eigenpair, by dense diagonalization.
pub fn full_spectrum(op: &dyn Operator) -> Result<SpectrumTable> {
    let dim = op.dim();
    if dim > DENSE_CAP {
        return Err(Error::DimensionCap {
            dim,
            cap: DENSE_CAP,
        });
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("operator has dimension 0".into()));
    }
    let dense = op.to_dense();
    let (values, vectors): (Vec<f64>, Vec<Vec<C64>>) = if op.is_real() {
        let real = dense.map(|z| z.re);
        let eig = SymmetricEigen::new(real);
        let vecs = (0..dim)
            .map(|c| eig.eigenvectors.column(c).iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        (eig.eigenvalues.iter().copied().collect(), vecs)
    } else {
        let eig = SymmetricEigen::new(dense);
        let vecs = (0..dim)
            .map(|c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        (eig.eigenvalues.iter().copied().collect(), vecs)
    };
    let basis = op.basis().clone();
    let mut pairs = Vec::with_capacity(dim);
    let mut h_v = vec![C64::new(0.0, 0.0); dim];
    for (value, mut v) in values.into_iter().zip(vectors) {
        fix_phase(&mut v);
        op.apply_into(&v, &mut h_v);
        let residual = residual_norm(&h_v, &v, value);
        pairs.push(EigenPair {
            value,
            vector: StateVector::new(basis.clone(), v)?,
            residual,
        });
    }
    sort_pairs(&mut pairs);
    SpectrumTable::new(pairs, true)
}

/// Ascending energy; inside a degenerate cluster, by the position of the
/// largest-magnitude amplitude.
fn sort_pairs(pairs: &mut [EigenPair]) {
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].value - pairs[end - 1].value < CLUSTER_TOL {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by_key(|p| peak_index(p.vector.amplitudes()));
        }
        start = end;
    }
}

fn peak_index(v: &[C64]) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        // Ties resolved towards the lower index, up to rounding.
        if m > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = m;
        }
    }
    best
}

/// Makes the largest-magnitude amplitude real and positive.
pub(crate) fn fix_phase(v: &mut [C64]) {
    let p = peak_index(v);
    let z = v[p];
    if z.norm() == 0.0 {
        return;
    }
    let rot = z.conj() / z.norm();
    v.iter_mut().for_each(|a| *a *= rot);
    v[p] = C64::new(v[p].norm(), 0.0);
}

fn residual_norm(h_v: &[C64], v: &[C64], value: f64) -> f64 {
    h_v.iter()
        .zip(v)
        .map(|(hv, x)| (hv - x * value).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn start_vector(dim: usize, real: bool, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| {
            let re = rng.gen_range(-1.0..1.0);
            let im = if real { 0.0 } else { rng.gen_range(-1.0..1.0) };
            C64::new(re, im)
        })
        .collect()
}

/// Two passes of classical Gram-Schmidt against `basis`; returns the
/// accumulated projection coefficients.
fn orthogonalize(w: &mut [C64], basis: &[Vec<C64>], deflate: &[&[C64]]) -> Vec<C64> {
    let mut coeffs = vec![C64::new(0.0, 0.0); basis.len()];
    for _ in 0..2 {
        for d in deflate {
            let h = dot(d, w);
            axpy(w, -h, d);
        }
        let hs: Vec<C64> = basis.iter().map(|v| dot(v, w)).collect();
        for (v, &h) in basis.iter().zip(&hs) {
            axpy(w, -h, v);
        }
        for (c, h) in coeffs.iter_mut().zip(hs) {
            *c += h;
        }
    }
    coeffs
}

#[inline]
pub(crate) fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Combines basis vectors with real coefficients.
fn combine(basis: &[Vec<C64>], coeffs: impl Iterator<Item = f64>, dim: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); dim];
    for (v, c) in basis.iter().zip(coeffs) {
        if c != 0.0 {
            axpy(&mut out, C64::new(c, 0.0), v);
        }
    }
    out
}

fn sorted_eigen(t: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(t.clone());
    let m = t.nrows();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// One thick-restarted Lanczos run in the complement of `deflate`. Returns
/// the `need` lowest eigenpairs there (fewer if the reachable Krylov space
/// is smaller), or an empty list when the complement is empty.
fn lanczos_run(
    op: &dyn Operator,
    deflate: &[&[C64]],
    need: usize,
    config: &LanczosConfig,
    seed: u64,
) -> Result<Vec<EigenPair>> {
    let dim = op.dim();
    let room = dim - deflate.len().min(dim);
    if room == 0 {
        return Ok(Vec::new());
    }
    let cap = config.basis_cap.max(need + 10).min(room);
    let keep = (need + 10).max(cap / 3).min(cap.saturating_sub(1)).max(need.min(cap));

    let mut v0 = start_vector(dim, op.is_real(), seed);
    orthogonalize(&mut v0, &[], deflate);
    let n0 = norm(&v0);
    if n0 < 1e-8 {
        return Ok(Vec::new());
    }
    v0.iter_mut().for_each(|z| *z /= n0);

    let mut basis: Vec<Vec<C64>> = vec![v0];
    // Projected matrix, grown as vectors are added.
    let mut t = DMatrix::<f64>::zeros(cap, cap);
    let mut w = vec![C64::new(0.0, 0.0); dim];
    let mut applications = 0usize;
    let mut accept = 0.5 * config.tol;
    let mut last_residual = f64::INFINITY;

    loop {
        let j = basis.len() - 1;
        op.apply_into(&basis[j], &mut w);
        applications += 1;
        let coeffs = orthogonalize(&mut w, &basis, deflate);
        for (i, c) in coeffs.iter().enumerate() {
            t[(i, j)] = c.re;
            t[(j, i)] = c.re;
        }
        let beta = norm(&w);
        let m = basis.len();
        let tm = t.view((0, 0), (m, m)).into_owned();
        let (theta, s) = sorted_eigen(&tm);
        let scale = theta.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        let exhausted = beta <= 1e-13 * scale || m == room;
        let n_want = need.min(m);
        let estimates: Vec<f64> = (0..n_want).map(|i| (beta * s[(m - 1, i)]).abs()).collect();
        last_residual = estimates.iter().cloned().fold(0.0, f64::max).min(last_residual);

        if exhausted || (m >= need && estimates.iter().all(|&e| e <= accept)) {
            let count = if exhausted { m.min(need) } else { need };
            let mut pairs = Vec::with_capacity(count);
            let mut h_x = vec![C64::new(0.0, 0.0); dim];
            let mut worst = 0.0f64;
            for i in 0..count {
                let mut x = combine(&basis, s.column(i).iter().copied(), dim);
                let nx = norm(&x);
                x.iter_mut().for_each(|z| *z /= nx);
                fix_phase(&mut x);
                op.apply_into(&x, &mut h_x);
                let value = dot(&x, &h_x).re;
                let residual = residual_norm(&h_x, &x, value);
                worst = worst.max(residual);
                pairs.push(EigenPair {
                    value,
                    vector: StateVector::new(op.basis().clone(), x)?,
                    residual,
                });
            }
            if worst <= config.tol || exhausted {
                sort_pairs(&mut pairs);
                return Ok(pairs);
            }
            // Estimated and true residuals disagree: tighten and continue.
            accept *= 0.1;
            if accept < 1e-6 * config.tol {
                return Err(Error::NoConvergence {
                    iterations: applications,
                    residual: worst,
                });
            }
        }
        if applications >= config.max_iter {
            return Err(Error::NoConvergence {
                iterations: applications,
                residual: last_residual,
            });
        }

        w.iter_mut().for_each(|z| *z /= beta);
        if m < cap {
            basis.push(w.clone());
            continue;
        }
        // Thick restart: keep the lowest Ritz vectors plus the residual direction.
        let mut kept: Vec<Vec<C64>> = (0..keep)
            .map(|i| combine(&basis, s.column(i).iter().copied(), dim))
            .collect();
        t.fill(0.0);
        for (i, &th) in theta.iter().take(keep).enumerate() {
            t[(i, i)] = th;
        }
        kept.push(w.clone());
        basis = kept;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{HamiltonianSpec, LinearOperator, PauliTerm, TermList};
    use crate::statespace::Axis;

    fn op(terms: Vec<PauliTerm>, n: usize) -> LinearOperator {
        LinearOperator::from_terms(TermList::new(n, terms).unwrap(), Basis::full(n).unwrap())
            .unwrap()
    }

    #[test]
    fn two_site_heisenberg_singlet() {
        let h = op(
            [Axis::X, Axis::Y, Axis::Z]
                .iter()
                .map(|&a| PauliTerm::new(1.0, vec![(a, 1), (a, 2)]))
                .collect(),
            2,
        );
        let gs = ground_state(&h, 1e-10, 100).unwrap();
        assert!((gs.value + 3.0).abs() < 1e-12);
        assert!(gs.residual <= 1e-10);
    }

    #[test]
    fn two_site_long_range_ising_closed_form() {
        let h = HamiltonianSpec::LongRangeIsing {
            n_sites: 2,
            alpha: 1.7,
            b_over_j: 1.0,
            pair_convention: Default::default(),
        }
        .build()
        .unwrap();
        let gs = ground_state(&h, 1e-10, 100).unwrap();
        assert!((gs.value + 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_sigma_z_spectrum() {
        let h = op(vec![PauliTerm::new(1.0, vec![(Axis::Z, 1)])], 1);
        let spec = full_spectrum(&h).unwrap();
        assert_eq!(spec.energies(), vec![-1.0, 1.0]);
        assert!(spec.is_complete());
    }

    #[test]
    fn lowest_k_recovers_degenerate_clusters() {
        // Heisenberg ring of 4: the triplet above the singlet is threefold degenerate.
        let mut terms = Vec::new();
        for i in 1..=4 {
            for a in [Axis::X, Axis::Y, Axis::Z] {
                terms.push(PauliTerm::new(1.0, vec![(a, i), (a, i % 4 + 1)]));
            }
        }
        let h = op(terms, 4);
        let full = full_spectrum(&h).unwrap();
        let low = lowest_k(&h, 2, 1e-9).unwrap();
        assert_eq!(low.len(), 4);
        for (a, b) in low.energies().iter().zip(full.energies()) {
            assert!((a - b).abs() < 1e-9);
        }
        let all = lowest_k(&h, 16, 1e-9).unwrap();
        assert!(all.is_complete());
        for (a, b) in all.energies().iter().zip(full.energies()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_cap_is_enforced() {
        let h = HamiltonianSpec::Tfic {
            n_sites: 15,
            lambda: 1.0,
        }
        .build()
        .unwrap();
        assert!(matches!(full_spectrum(&h), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn restarts_preserve_convergence() {
        let h = HamiltonianSpec::Tfic {
            n_sites: 10,
            lambda: 1.0,
        }
        .build()
        .unwrap();
        let small = LanczosConfig {
            basis_cap: 12,
            ..LanczosConfig::default()
        };
        let a = ground_state_with(&h, &small).unwrap();
        let b = ground_state(&h, 1e-10, 1000).unwrap();
        assert!((a.value - b.value).abs() < 1e-10);
        assert!(a.residual <= 1e-10);
    }

    #[test]
    fn phase_convention() {
        let mut v = vec![C64::new(0.0, 0.1), C64::new(0.0, -0.9)];
        fix_phase(&mut v);
        assert!(v[1].im == 0.0 && v[1].re > 0.0);
    }
}
