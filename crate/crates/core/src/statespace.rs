//! Computational basis, state vectors and single-site Pauli action.
//!
//! Site `i` (1-based in every public signature) lives in bit `i - 1` of a
//! basis bitmask. A clear bit is spin up along z (σ^z = +1), a set bit is
//! spin down.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest chain for which a full 2^N basis may be allocated.
pub const MAX_FULL_SITES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Bitmask of one computational basis state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState(pub u64);

impl BasisState {
    /// True when the spin at `site` (1-based) points down along z.
    #[inline]
    pub fn is_down(self, site: usize) -> bool {
        (self.0 >> (site - 1)) & 1 == 1
    }

    #[inline]
    pub fn flipped(self, site: usize) -> Self {
        BasisState(self.0 ^ (1 << (site - 1)))
    }

    #[inline]
    pub fn popcount(self) -> u32 {
        self.0.count_ones()
    }
}

/// Action of a single Pauli matrix on one bit: returns whether the bit is
/// flipped and the phase picked up.
#[inline]
pub fn pauli_on_bit(axis: Axis, down: bool) -> (bool, C64) {
    let sign = if down { -1.0 } else { 1.0 };
    match axis {
        Axis::X => (true, C64::new(1.0, 0.0)),
        Axis::Y => (true, C64::new(0.0, sign)),
        Axis::Z => (false, C64::new(sign, 0.0)),
    }
}

/// Union of fixed-popcount sectors, stored as a sorted list of bitmasks.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorBasis {
    n_sites: usize,
    popcounts: Vec<u32>,
    states: Vec<u64>,
}

impl SectorBasis {
    pub fn new(n_sites: usize, popcounts: &[u32]) -> Result<Self> {
        if popcounts.is_empty() {
            return Err(Error::InvalidArgument("empty popcount set".into()));
        }
        if n_sites == 0 || n_sites > 63 {
            return Err(Error::InvalidArgument(format!(
                "sector basis needs 1..=63 sites, got {n_sites}"
            )));
        }
        let mut ks: Vec<u32> = popcounts.to_vec();
        ks.sort_unstable();
        ks.dedup();
        if let Some(&k) = ks.iter().find(|&&k| k as usize > n_sites) {
            return Err(Error::InvalidArgument(format!(
                "popcount {k} exceeds {n_sites} sites"
            )));
        }
        let mut states = Vec::new();
        for &k in &ks {
            enumerate_popcount(n_sites, k, &mut states);
        }
        states.sort_unstable();
        Ok(SectorBasis {
            n_sites,
            popcounts: ks,
            states,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn popcounts(&self) -> &[u32] {
        &self.popcounts
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn index_of(&self, bits: u64) -> Option<usize> {
        self.states.binary_search(&bits).ok()
    }
}

/// Appends every `n`-bit mask with exactly `k` set bits, in increasing order.
fn enumerate_popcount(n: usize, k: u32, out: &mut Vec<u64>) {
    if k == 0 {
        out.push(0);
        return;
    }
    let limit = 1u64 << n;
    let mut v: u64 = (1u64 << k) - 1;
    while v < limit {
        out.push(v);
        // Gosper's hack: next integer with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
}

/// The space a state vector is expanded in.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis {
    Full { n_sites: usize },
    Sector(SectorBasis),
}

impl Basis {
    pub fn full(n_sites: usize) -> Result<Arc<Basis>> {
        if n_sites == 0 || n_sites > MAX_FULL_SITES {
            return Err(Error::InvalidArgument(format!(
                "full basis supports 1..={MAX_FULL_SITES} sites, got {n_sites}"
            )));
        }
        Ok(Arc::new(Basis::Full { n_sites }))
    }

    pub fn sector(n_sites: usize, popcounts: &[u32]) -> Result<Arc<Basis>> {
        Ok(Arc::new(Basis::Sector(SectorBasis::new(n_sites, popcounts)?)))
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Basis::Full { n_sites } => *n_sites,
            Basis::Sector(s) => s.n_sites(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Basis::Full { n_sites } => 1usize << n_sites,
            Basis::Sector(s) => s.len(),
        }
    }

    #[inline]
    pub fn state_at(&self, index: usize) -> u64 {
        match self {
            Basis::Full { .. } => index as u64,
            Basis::Sector(s) => s.states[index],
        }
    }

    #[inline]
    pub fn index_of(&self, bits: u64) -> Option<usize> {
        match self {
            Basis::Full { n_sites } => ((bits >> n_sites) == 0).then_some(bits as usize),
            Basis::Sector(s) => s.index_of(bits),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Basis::Full { .. })
    }

    fn check_site(&self, site: usize) -> Result<()> {
        let n_sites = self.n_sites();
        if site == 0 || site > n_sites {
            return Err(Error::SiteOutOfRange { site, n_sites });
        }
        Ok(())
    }
}

/// Complex amplitudes over a [`Basis`].
#[derive(Clone, Debug)]
pub struct StateVector {
    basis: Arc<Basis>,
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(basis: Arc<Basis>, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: amplitudes.len(),
            });
        }
        Ok(StateVector { basis, amplitudes })
    }

    /// A single computational basis state.
    pub fn basis_state(basis: Arc<Basis>, bits: u64) -> Result<Self> {
        let index = basis
            .index_of(bits)
            .ok_or(Error::MissingImage { state: bits })?;
        let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(StateVector { basis, amplitudes })
    }

    /// Normalized state with independent uniform real and imaginary parts,
    /// reproducible from `seed`.
    pub fn random(basis: Arc<Basis>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitudes = (0..basis.dim())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut psi = StateVector { basis, amplitudes };
        psi.normalize();
        psi
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn n_sites(&self) -> usize {
        self.basis.n_sites()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    /// Rescales to unit norm and returns the norm before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        }
        n
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.check_same_basis(other)?;
        Ok(dot(&self.amplitudes, &other.amplitudes))
    }

    /// ‖self − other‖ (phase sensitive).
    pub fn distance(&self, other: &StateVector) -> Result<f64> {
        self.check_same_basis(other)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }

    /// Re-expresses the state in `target`, which must contain every basis
    /// state carrying nonzero amplitude.
    pub fn embed(&self, target: &Arc<Basis>) -> Result<StateVector> {
        if Arc::ptr_eq(&self.basis, target) || *self.basis == **target {
            return Ok(StateVector {
                basis: target.clone(),
                amplitudes: self.amplitudes.clone(),
            });
        }
        if target.n_sites() != self.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites(),
                got: target.n_sites(),
            });
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); target.dim()];
        for (p, &a) in self.amplitudes.iter().enumerate() {
            let bits = self.basis.state_at(p);
            match target.index_of(bits) {
                Some(q) => amplitudes[q] = a,
                None if a == C64::new(0.0, 0.0) => {}
                None => return Err(Error::MissingImage { state: bits }),
            }
        }
        Ok(StateVector {
            basis: target.clone(),
            amplitudes,
        })
    }

    fn check_same_basis(&self, other: &StateVector) -> Result<()> {
        if self.dim() != other.dim()
            || !(Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis)
        {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

#[inline]
pub(crate) fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// σ_site^axis |ψ⟩.
pub fn apply_pauli(axis: Axis, site: usize, psi: &StateVector) -> Result<StateVector> {
    let basis = psi.basis();
    basis.check_site(site)?;
    let bit = 1u64 << (site - 1);
    let mut out = vec![C64::new(0.0, 0.0); psi.dim()];
    for (p, &a) in psi.amplitudes().iter().enumerate() {
        let bits = basis.state_at(p);
        let (flip, phase) = pauli_on_bit(axis, bits & bit != 0);
        let image = if flip { bits ^ bit } else { bits };
        match basis.index_of(image) {
            Some(q) => out[q] += phase * a,
            None if a == C64::new(0.0, 0.0) => {}
            None => return Err(Error::MissingImage { state: image }),
        }
    }
    StateVector::new(basis.clone(), out)
}

/// ⟨ψ|σ_site^axis|ψ⟩.
///
/// Basis states whose image falls outside the basis contribute nothing: the
/// state has no amplitude there.
pub fn expectation(axis: Axis, site: usize, psi: &StateVector) -> Result<f64> {
    let basis = psi.basis();
    basis.check_site(site)?;
    let bit = 1u64 << (site - 1);
    let amps = psi.amplitudes();
    let mut acc = C64::new(0.0, 0.0);
    for (p, &a) in amps.iter().enumerate() {
        let bits = basis.state_at(p);
        let (flip, phase) = pauli_on_bit(axis, bits & bit != 0);
        if !flip {
            acc += phase * a.norm_sqr();
            continue;
        }
        if let Some(q) = basis.index_of(bits ^ bit) {
            acc += amps[q].conj() * phase * a;
        }
    }
    Ok(acc.re)
}

/// σ_site^axis tabulated on a basis: the partner index of every basis state,
/// for repeated expectation values on the same basis.
#[derive(Clone, Debug)]
pub struct SitePauli {
    basis: Arc<Basis>,
    axis: Axis,
    bit: u64,
    partner: Vec<u32>,
}

impl SitePauli {
    const MISSING: u32 = u32::MAX;

    pub fn new(basis: Arc<Basis>, axis: Axis, site: usize) -> Result<Self> {
        basis.check_site(site)?;
        if basis.dim() >= Self::MISSING as usize {
            return Err(Error::InvalidArgument("basis too large to tabulate".into()));
        }
        let bit = 1u64 << (site - 1);
        let partner = (0..basis.dim())
            .map(|p| {
                let bits = basis.state_at(p);
                let (flip, _) = pauli_on_bit(axis, bits & bit != 0);
                let image = if flip { bits ^ bit } else { bits };
                basis.index_of(image).map_or(Self::MISSING, |q| q as u32)
            })
            .collect();
        Ok(SitePauli {
            basis,
            axis,
            bit,
            partner,
        })
    }

    /// Re⟨ψ|σ|ψ⟩ for amplitudes over this basis.
    pub fn expectation(&self, amps: &[C64]) -> f64 {
        debug_assert_eq!(amps.len(), self.partner.len());
        let mut acc = C64::new(0.0, 0.0);
        for (p, (&q, &a)) in self.partner.iter().zip(amps).enumerate() {
            if q == Self::MISSING {
                continue;
            }
            let down = self.basis.state_at(p) & self.bit != 0;
            let (_, phase) = pauli_on_bit(self.axis, down);
            acc += amps[q as usize].conj() * phase * a;
        }
        acc.re
    }
}

/// Builds the union of fixed-popcount sectors.
pub fn build_sector_basis(n_sites: usize, popcounts: &[u32]) -> Result<SectorBasis> {
    SectorBasis::new(n_sites, popcounts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn z_on_up_state_is_plus_one() {
        let basis = Basis::full(2).unwrap();
        let up = StateVector::basis_state(basis, 0b00).unwrap();
        let out = apply_pauli(Axis::Z, 1, &up).unwrap();
        assert_eq!(out.amplitudes()[0], c(1.0, 0.0));
        assert_eq!(expectation(Axis::Z, 1, &up).unwrap(), 1.0);
    }

    #[test]
    fn x_flips_the_addressed_bit() {
        let basis = Basis::full(2).unwrap();
        let up = StateVector::basis_state(basis, 0b00).unwrap();
        let out = apply_pauli(Axis::X, 1, &up).unwrap();
        assert_eq!(out.amplitudes()[0b01], c(1.0, 0.0));
        assert_eq!(out.norm(), 1.0);
    }

    #[test]
    fn expectation_on_x_eigenstate() {
        let basis = Basis::full(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::new(basis, vec![c(s, 0.0), c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        assert!((expectation(Axis::X, 1, &psi).unwrap() - 1.0).abs() < 1e-15);
        // |↑↓⟩ has σ^z_1 = +1.
        let ud = StateVector::basis_state(psi.basis().clone(), 0b10).unwrap();
        assert_eq!(expectation(Axis::Z, 1, &ud).unwrap(), 1.0);
        assert_eq!(expectation(Axis::Z, 2, &ud).unwrap(), -1.0);
    }

    #[test]
    fn site_out_of_range() {
        let basis = Basis::full(3).unwrap();
        let psi = StateVector::random(basis, 1);
        assert!(matches!(
            apply_pauli(Axis::X, 4, &psi),
            Err(Error::SiteOutOfRange { site: 4, n_sites: 3 })
        ));
        assert!(apply_pauli(Axis::X, 0, &psi).is_err());
    }

    #[test]
    fn sector_sizes_are_binomial() {
        assert_eq!(build_sector_basis(4, &[2]).unwrap().len(), 6);
        assert_eq!(build_sector_basis(4, &[1, 2, 3]).unwrap().len(), 14);
        assert!(build_sector_basis(4, &[]).is_err());
        assert!(build_sector_basis(4, &[5]).is_err());
    }

    #[test]
    fn large_union_sector_round_trips() {
        let basis = build_sector_basis(20, &[9, 10, 11]).unwrap();
        // C(20,9) + C(20,10) + C(20,11) = 167960 + 184756 + 167960
        assert_eq!(basis.len(), 520676);
        assert!(basis.states().windows(2).all(|w| w[0] < w[1]));
        for (p, &s) in basis.states().iter().enumerate() {
            assert_eq!(basis.index_of(s), Some(p));
        }
    }

    #[test]
    fn x_leaving_the_sector_is_an_error() {
        let basis = Basis::sector(4, &[2]).unwrap();
        let psi = StateVector::basis_state(basis, 0b0011).unwrap();
        assert!(matches!(
            apply_pauli(Axis::X, 1, &psi),
            Err(Error::MissingImage { .. })
        ));
        // Expectation stays defined: the off-sector image carries no amplitude.
        assert_eq!(expectation(Axis::X, 1, &psi).unwrap(), 0.0);
    }

    #[test]
    fn tabulated_pauli_matches_direct_expectation() {
        let basis = Basis::sector(6, &[2, 3, 4]).unwrap();
        let psi = StateVector::random(basis.clone(), 9);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for site in 1..=6 {
                let table = SitePauli::new(basis.clone(), axis, site).unwrap();
                let direct = expectation(axis, site, &psi).unwrap();
                assert!((table.expectation(psi.amplitudes()) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn embed_into_union() {
        let small = Basis::sector(4, &[2]).unwrap();
        let union = Basis::sector(4, &[1, 2, 3]).unwrap();
        let psi = StateVector::random(small, 3);
        let big = psi.embed(&union).unwrap();
        assert_eq!(big.dim(), 14);
        assert!((big.norm() - 1.0).abs() < 1e-14);
        let x = apply_pauli(Axis::X, 2, &big).unwrap();
        assert!((x.norm() - 1.0).abs() < 1e-14);
    }
}
