//! Model specifications and their Hamiltonians as sums of Pauli strings.
//!
//! Every model is lowered to a [`TermList`], which is compiled into a
//! matrix-free [`LinearOperator`] over a chosen [`Basis`]. A compressed-row
//! [`SparseMatrix`] can be assembled from it when memory allows; both
//! implement [`Operator`], the interface the solvers and propagators use.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::{pauli_on_bit, Axis, Basis, StateVector, C64};

/// Critical J₂/J₁ of the frustrated chain used for the Kondo emulation.
pub const KONDO_CRITICAL_J2: f64 = 0.2412;

const ROW_CHUNK: usize = 2048;

/// One Pauli string `coefficient · Π σ_site^axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauliTerm {
    pub coefficient: f64,
    pub factors: Vec<(Axis, usize)>,
}

impl PauliTerm {
    pub fn new(coefficient: f64, factors: Vec<(Axis, usize)>) -> Self {
        PauliTerm {
            coefficient,
            factors,
        }
    }
}

/// A Hamiltonian written as a sum of Pauli strings on `n_sites` sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermList {
    pub n_sites: usize,
    pub terms: Vec<PauliTerm>,
}

impl TermList {
    pub fn new(n_sites: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        let list = TermList { n_sites, terms };
        list.validate()?;
        Ok(list)
    }

    /// Sites must be in range and each site may appear at most once per
    /// string (products on one site are not reduced).
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::InvalidModel("term list needs at least one site".into()));
        }
        for term in &self.terms {
            if !term.coefficient.is_finite() {
                return Err(Error::InvalidModel("non-finite coefficient".into()));
            }
            let mut seen = 0u64;
            for &(_, site) in &term.factors {
                if site == 0 || site > self.n_sites {
                    return Err(Error::SiteOutOfRange {
                        site,
                        n_sites: self.n_sites,
                    });
                }
                let bit = 1u64 << (site - 1);
                if seen & bit != 0 {
                    return Err(Error::InvalidModel(format!(
                        "site {site} repeated within one term"
                    )));
                }
                seen |= bit;
            }
        }
        Ok(())
    }

    /// Sum of |coefficients|, an upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.abs()).sum()
    }

    /// Coupling of every two-site term with the given pair of axes, keyed by
    /// the ordered site pair. Used to inspect model construction.
    pub fn pair_couplings(&self, a: Axis, b: Axis) -> BTreeMap<(usize, usize), f64> {
        let mut out = BTreeMap::new();
        for term in &self.terms {
            if let [(ax, i), (bx, j)] = term.factors[..] {
                if ax == a && bx == b {
                    *out.entry((i.min(j), i.max(j))).or_insert(0.0) += term.coefficient;
                }
            }
        }
        out
    }

    fn push_pair(&mut self, coefficient: f64, axis: Axis, i: usize, j: usize) {
        self.terms
            .push(PauliTerm::new(coefficient, vec![(axis, i), (axis, j)]));
    }

    fn push_heisenberg(&mut self, coefficient: f64, i: usize, j: usize) {
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            self.push_pair(coefficient, axis, i, j);
        }
    }
}

/// Pair-sum reading of the long-range Ising coupling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairConvention {
    /// Each unordered pair once.
    #[default]
    #[serde(rename = "i<j")]
    Ordered,
    /// Each pair counted twice, as in a literal Σ_{i≠j}.
    #[serde(rename = "i!=j")]
    Unordered,
}

fn default_j2() -> f64 {
    KONDO_CRITICAL_J2
}

/// Declarative description of a model. Energies are in units of J (J₁ for
/// the Kondo chain).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    /// Open chain, H = Σ_pairs |i−j|^−α σ^x_i σ^x_j + B Σ σ^z_i.
    LongRangeIsing {
        n_sites: usize,
        alpha: f64,
        b_over_j: f64,
        #[serde(default)]
        pair_convention: PairConvention,
    },
    /// Periodic transverse-field Ising chain.
    Tfic { n_sites: usize, lambda: f64 },
    /// Open J₁–J₂ Heisenberg chain with an impurity bond J′ at site 1.
    KondoChain {
        n_sites: usize,
        j_prime: f64,
        #[serde(default = "default_j2")]
        j2_over_j1: f64,
    },
    /// Arbitrary sum of Pauli strings.
    Custom { n_sites: usize, terms: Vec<PauliTerm> },
}

impl HamiltonianSpec {
    pub fn n_sites(&self) -> usize {
        match self {
            HamiltonianSpec::LongRangeIsing { n_sites, .. }
            | HamiltonianSpec::Tfic { n_sites, .. }
            | HamiltonianSpec::KondoChain { n_sites, .. }
            | HamiltonianSpec::Custom { n_sites, .. } => *n_sites,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!("{name} must be finite")))
            }
        };
        match *self {
            HamiltonianSpec::LongRangeIsing {
                n_sites,
                alpha,
                b_over_j,
                ..
            } => {
                if n_sites < 2 {
                    return Err(Error::InvalidModel("long-range Ising needs N >= 2".into()));
                }
                finite("alpha", alpha)?;
                finite("b_over_j", b_over_j)?;
                if alpha < 0.0 {
                    return Err(Error::InvalidModel("alpha must be >= 0".into()));
                }
            }
            HamiltonianSpec::Tfic { n_sites, lambda } => {
                if n_sites < 3 {
                    return Err(Error::InvalidModel("periodic TFIC needs N >= 3".into()));
                }
                finite("lambda", lambda)?;
                if lambda < 0.0 {
                    return Err(Error::InvalidModel("lambda must be >= 0".into()));
                }
            }
            HamiltonianSpec::KondoChain {
                n_sites,
                j_prime,
                j2_over_j1,
            } => {
                if n_sites < 4 || n_sites % 2 != 0 {
                    return Err(Error::InvalidModel(format!(
                        "Kondo chain needs an even N >= 4, got {n_sites}"
                    )));
                }
                finite("j_prime", j_prime)?;
                finite("j2_over_j1", j2_over_j1)?;
                if !(j_prime > 0.0 && j_prime <= 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "j_prime must lie in (0, 1], got {j_prime}"
                    )));
                }
            }
            HamiltonianSpec::Custom { n_sites, ref terms } => {
                TermList {
                    n_sites,
                    terms: terms.clone(),
                }
                .validate()?;
            }
        }
        Ok(())
    }

    pub fn term_list(&self) -> Result<TermList> {
        self.validate()?;
        let n = self.n_sites();
        let mut list = TermList {
            n_sites: n,
            terms: Vec::new(),
        };
        match *self {
            HamiltonianSpec::LongRangeIsing {
                alpha,
                b_over_j,
                pair_convention,
                ..
            } => {
                let scale = match pair_convention {
                    PairConvention::Ordered => 1.0,
                    PairConvention::Unordered => 2.0,
                };
                for i in 1..=n {
                    for j in i + 1..=n {
                        let c = scale / ((j - i) as f64).powf(alpha);
                        list.push_pair(c, Axis::X, i, j);
                    }
                }
                for i in 1..=n {
                    list.terms.push(PauliTerm::new(b_over_j, vec![(Axis::Z, i)]));
                }
            }
            HamiltonianSpec::Tfic { lambda, .. } => {
                for i in 1..=n {
                    list.push_pair(1.0, Axis::X, i, i % n + 1);
                }
                for i in 1..=n {
                    list.terms.push(PauliTerm::new(lambda, vec![(Axis::Z, i)]));
                }
            }
            HamiltonianSpec::KondoChain {
                j_prime,
                j2_over_j1,
                ..
            } => {
                let (j1, j2) = (1.0, j2_over_j1);
                list.push_heisenberg(j_prime * j1, 1, 2);
                list.push_heisenberg(j_prime * j2, 1, 3);
                for i in 2..n {
                    list.push_heisenberg(j1, i, i + 1);
                }
                for i in 2..n - 1 {
                    list.push_heisenberg(j2, i, i + 2);
                }
            }
            HamiltonianSpec::Custom { ref terms, .. } => list.terms = terms.clone(),
        }
        Ok(list)
    }

    /// Whether the model conserves total S^z, i.e. may be restricted to
    /// popcount sectors.
    pub fn conserves_sz(&self) -> bool {
        matches!(self, HamiltonianSpec::KondoChain { .. })
    }

    /// Builds the operator on the full 2^N basis.
    pub fn build(&self) -> Result<LinearOperator> {
        LinearOperator::from_terms(self.term_list()?, Basis::full(self.n_sites())?)
            .map(|op| op.with_spec(self.clone()))
    }

    /// Builds the operator restricted to `basis`, which must be closed under H.
    pub fn build_in(&self, basis: Arc<Basis>) -> Result<LinearOperator> {
        LinearOperator::from_terms(self.term_list()?, basis).map(|op| op.with_spec(self.clone()))
    }
}

/// Interface shared by the matrix-free and assembled representations.
pub trait Operator: Sync {
    fn basis(&self) -> &Arc<Basis>;

    /// `output = H · input`.
    fn apply_into(&self, input: &[C64], output: &mut [C64]);

    /// True when every matrix element is real in the computational basis.
    fn is_real(&self) -> bool;

    /// Upper bound on the spectral radius.
    fn norm_bound(&self) -> f64;

    /// Model the operator was built from, when known.
    fn spec(&self) -> Option<&HamiltonianSpec> {
        None
    }

    fn dim(&self) -> usize {
        self.basis().dim()
    }

    fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi.dim(),
            });
        }
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        self.apply_into(psi.amplitudes(), &mut out);
        StateVector::new(self.basis().clone(), out)
    }

    /// ⟨ψ|H|ψ⟩.
    fn expectation(&self, psi: &StateVector) -> Result<f64> {
        let h_psi = self.apply(psi)?;
        Ok(psi.inner(&h_psi)?.re)
    }

    /// Dense matrix, built column by column.
    fn to_dense(&self) -> DMatrix<C64> {
        let dim = self.dim();
        let mut dense = DMatrix::zeros(dim, dim);
        let mut unit = vec![C64::new(0.0, 0.0); dim];
        let mut col = vec![C64::new(0.0, 0.0); dim];
        for c in 0..dim {
            unit[c] = C64::new(1.0, 0.0);
            self.apply_into(&unit, &mut col);
            unit[c] = C64::new(0.0, 0.0);
            for (r, v) in col.iter().enumerate() {
                dense[(r, c)] = *v;
            }
        }
        dense
    }
}

#[derive(Clone, Debug)]
struct SignedTerm {
    coefficient: C64,
    sign_mask: u64,
}

#[derive(Clone, Debug)]
struct FlipGroup {
    flip: u64,
    terms: Vec<SignedTerm>,
}

impl FlipGroup {
    /// ⟨bits ^ flip| H_group |bits⟩.
    #[inline]
    fn amplitude(&self, bits: u64) -> C64 {
        let mut a = C64::new(0.0, 0.0);
        for t in &self.terms {
            if (bits & t.sign_mask).count_ones() & 1 == 1 {
                a -= t.coefficient;
            } else {
                a += t.coefficient;
            }
        }
        a
    }
}

/// Matrix-free Hamiltonian on a given basis.
///
/// Diagonal elements are tabulated at build time; off-diagonal strings are
/// grouped by the set of bits they flip and evaluated on the fly.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    basis: Arc<Basis>,
    terms: TermList,
    spec: Option<HamiltonianSpec>,
    diagonal: Vec<f64>,
    groups: Vec<FlipGroup>,
    real: bool,
}

impl LinearOperator {
    pub fn from_terms(terms: TermList, basis: Arc<Basis>) -> Result<Self> {
        terms.validate()?;
        if terms.n_sites != basis.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: basis.n_sites(),
                got: terms.n_sites,
            });
        }
        let mut diag_terms = Vec::new();
        let mut by_flip: BTreeMap<u64, Vec<SignedTerm>> = BTreeMap::new();
        for term in &terms.terms {
            let mut flip = 0u64;
            let mut sign_mask = 0u64;
            let mut phase = C64::new(term.coefficient, 0.0);
            for &(axis, site) in &term.factors {
                let bit = 1u64 << (site - 1);
                // Phase on an up bit; a down bit contributes an extra −1 for y and z.
                let (flips, up_phase) = pauli_on_bit(axis, false);
                phase *= up_phase;
                if flips {
                    flip |= bit;
                }
                if axis != Axis::X {
                    sign_mask |= bit;
                }
            }
            let signed = SignedTerm {
                coefficient: phase,
                sign_mask,
            };
            if flip == 0 {
                diag_terms.push(signed);
            } else {
                by_flip.entry(flip).or_default().push(signed);
            }
        }
        let groups: Vec<FlipGroup> = by_flip
            .into_iter()
            .map(|(flip, terms)| FlipGroup { flip, terms })
            .collect();
        let real = groups
            .iter()
            .flat_map(|g| &g.terms)
            .all(|t| t.coefficient.im == 0.0);
        let diag_group = FlipGroup {
            flip: 0,
            terms: diag_terms,
        };
        let diagonal = (0..basis.dim())
            .into_par_iter()
            .map(|p| diag_group.amplitude(basis.state_at(p)).re)
            .collect();
        let op = LinearOperator {
            basis,
            terms,
            spec: None,
            diagonal,
            groups,
            real,
        };
        op.check_closure()?;
        Ok(op)
    }

    fn with_spec(mut self, spec: HamiltonianSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    pub fn terms(&self) -> &TermList {
        &self.terms
    }

    pub fn n_sites(&self) -> usize {
        self.basis.n_sites()
    }

    /// The same Hamiltonian on another basis.
    pub fn restricted_to(&self, basis: Arc<Basis>) -> Result<LinearOperator> {
        let op = LinearOperator::from_terms(self.terms.clone(), basis)?;
        Ok(LinearOperator {
            spec: self.spec.clone(),
            ..op
        })
    }

    /// Fails when some nonzero matrix element connects a basis state to a
    /// state outside the basis.
    fn check_closure(&self) -> Result<()> {
        if self.basis.is_full() {
            return Ok(());
        }
        for p in 0..self.basis.dim() {
            let bits = self.basis.state_at(p);
            for g in &self.groups {
                let image = bits ^ g.flip;
                if self.basis.index_of(image).is_none() && g.amplitude(bits) != C64::new(0.0, 0.0)
                {
                    return Err(Error::MissingImage { state: image });
                }
            }
        }
        Ok(())
    }

    /// Number of stored entries an assembled matrix would have (upper bound).
    pub fn nnz_bound(&self) -> usize {
        self.basis.dim() * (1 + self.groups.len())
    }

    #[inline]
    fn row(&self, p: usize, input: &[C64]) -> C64 {
        let bits = self.basis.state_at(p);
        let mut acc = input[p] * self.diagonal[p];
        match &*self.basis {
            Basis::Full { .. } => {
                for g in &self.groups {
                    let col = bits ^ g.flip;
                    acc += g.amplitude(col) * input[col as usize];
                }
            }
            Basis::Sector(s) => {
                for g in &self.groups {
                    let col = bits ^ g.flip;
                    if let Some(q) = s.index_of(col) {
                        acc += g.amplitude(col) * input[q];
                    }
                }
            }
        }
        acc
    }

    /// Assembles the compressed-row form.
    pub fn assemble(&self) -> SparseMatrix {
        let dim = self.basis.dim();
        let rows: Vec<Vec<(u32, C64)>> = (0..dim)
            .into_par_iter()
            .map(|p| {
                let bits = self.basis.state_at(p);
                let mut row = Vec::with_capacity(1 + self.groups.len());
                if self.diagonal[p] != 0.0 {
                    row.push((p as u32, C64::new(self.diagonal[p], 0.0)));
                }
                for g in &self.groups {
                    let col = bits ^ g.flip;
                    let a = g.amplitude(col);
                    if a == C64::new(0.0, 0.0) {
                        continue;
                    }
                    if let Some(q) = self.basis.index_of(col) {
                        row.push((q as u32, a));
                    }
                }
                row.sort_unstable_by_key(|e| e.0);
                row
            })
            .collect();
        let mut csr =
            SparseMatrix::from_rows(self.basis.clone(), rows, self.real, self.norm_bound());
        csr.spec = self.spec.clone();
        csr
    }
}

impl Operator for LinearOperator {
    fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    fn apply_into(&self, input: &[C64], output: &mut [C64]) {
        assert_eq!(input.len(), self.basis.dim());
        assert_eq!(output.len(), self.basis.dim());
        output
            .par_chunks_mut(ROW_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let start = c * ROW_CHUNK;
                for (k, out) in chunk.iter_mut().enumerate() {
                    *out = self.row(start + k, input);
                }
            });
    }

    fn is_real(&self) -> bool {
        self.real
    }

    fn norm_bound(&self) -> f64 {
        self.terms.norm_bound()
    }

    fn spec(&self) -> Option<&HamiltonianSpec> {
        self.spec.as_ref()
    }
}

#[derive(Clone, Debug)]
enum CsrValues {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

/// Compressed-row Hamiltonian.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    basis: Arc<Basis>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: CsrValues,
    norm_bound: f64,
    spec: Option<HamiltonianSpec>,
}

impl SparseMatrix {
    fn from_rows(
        basis: Arc<Basis>,
        rows: Vec<Vec<(u32, C64)>>,
        real: bool,
        norm_bound: f64,
    ) -> Self {
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut re = Vec::new();
        let mut cx = Vec::new();
        if real {
            re.reserve(nnz);
        } else {
            cx.reserve(nnz);
        }
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                if real {
                    re.push(v.re);
                } else {
                    cx.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            basis,
            row_ptr,
            cols,
            values: if real {
                CsrValues::Real(re)
            } else {
                CsrValues::Complex(cx)
            },
            norm_bound,
            spec: None,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Iterates over stored `(row, col, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.row_ptr.len() - 1).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| {
                let v = match &self.values {
                    CsrValues::Real(v) => C64::new(v[k], 0.0),
                    CsrValues::Complex(v) => v[k],
                };
                (r, self.cols[k] as usize, v)
            })
        })
    }
}

impl Operator for SparseMatrix {
    fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    fn apply_into(&self, input: &[C64], output: &mut [C64]) {
        let dim = self.basis.dim();
        assert_eq!(input.len(), dim);
        assert_eq!(output.len(), dim);
        let row_ptr = &self.row_ptr;
        let cols = &self.cols;
        match &self.values {
            CsrValues::Real(vals) => {
                output
                    .par_chunks_mut(ROW_CHUNK)
                    .enumerate()
                    .for_each(|(c, chunk)| {
                        let start = c * ROW_CHUNK;
                        for (k, out) in chunk.iter_mut().enumerate() {
                            let r = start + k;
                            let (mut re, mut im) = (0.0, 0.0);
                            for e in row_ptr[r]..row_ptr[r + 1] {
                                let x = input[cols[e] as usize];
                                re += vals[e] * x.re;
                                im += vals[e] * x.im;
                            }
                            *out = C64::new(re, im);
                        }
                    });
            }
            CsrValues::Complex(vals) => {
                output
                    .par_chunks_mut(ROW_CHUNK)
                    .enumerate()
                    .for_each(|(c, chunk)| {
                        let start = c * ROW_CHUNK;
                        for (k, out) in chunk.iter_mut().enumerate() {
                            let r = start + k;
                            let mut acc = C64::new(0.0, 0.0);
                            for e in row_ptr[r]..row_ptr[r + 1] {
                                acc += vals[e] * input[cols[e] as usize];
                            }
                            *out = acc;
                        }
                    });
            }
        }
    }

    fn is_real(&self) -> bool {
        matches!(self.values, CsrValues::Real(_))
    }

    fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    fn spec(&self) -> Option<&HamiltonianSpec> {
        self.spec.as_ref()
    }

    fn to_dense(&self) -> DMatrix<C64> {
        let dim = self.dim();
        let mut dense = DMatrix::zeros(dim, dim);
        for (r, c, v) in self.entries() {
            dense[(r, c)] += v;
        }
        dense
    }
}

pub fn build_long_range_ising(spec: &HamiltonianSpec) -> Result<LinearOperator> {
    match spec {
        HamiltonianSpec::LongRangeIsing { .. } => spec.build(),
        _ => Err(Error::InvalidModel("expected a long-range Ising spec".into())),
    }
}

pub fn build_tfic(spec: &HamiltonianSpec) -> Result<LinearOperator> {
    match spec {
        HamiltonianSpec::Tfic { .. } => spec.build(),
        _ => Err(Error::InvalidModel("expected a TFIC spec".into())),
    }
}

/// Kondo chain on the full basis; use [`HamiltonianSpec::build_in`] for a
/// sector-restricted operator.
pub fn build_kondo_chain(spec: &HamiltonianSpec) -> Result<LinearOperator> {
    match spec {
        HamiltonianSpec::KondoChain { .. } => spec.build(),
        _ => Err(Error::InvalidModel("expected a Kondo chain spec".into())),
    }
}

/// P = Π σ^z_i.
pub fn parity_operator(n_sites: usize) -> Result<LinearOperator> {
    let term = PauliTerm::new(1.0, (1..=n_sites).map(|i| (Axis::Z, i)).collect());
    LinearOperator::from_terms(TermList::new(n_sites, vec![term])?, Basis::full(n_sites)?)
}

/// Σ σ^z_i on the given basis.
pub fn total_sz(basis: Arc<Basis>) -> Result<LinearOperator> {
    let n = basis.n_sites();
    let terms = (1..=n).map(|i| PauliTerm::new(1.0, vec![(Axis::Z, i)])).collect();
    LinearOperator::from_terms(TermList::new(n, terms)?, basis)
}
