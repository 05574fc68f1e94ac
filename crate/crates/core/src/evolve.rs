//! Real-time evolution of a collapsed state and the magnetization traces
//! recorded along it.
//!
//! The default propagator builds a Lanczos subspace from the current state,
//! exponentiates the projected matrix exactly, and takes the longest step
//! for which the residual bound
//!
//! ```text
//! ‖ψ_exact(τ) − V c(τ)‖ ≤ β_m ∫_0^τ |e_mᵀ c(s)| ds
//! ```
//!
//! stays below `step_tol`. Sample times are served from inside a step, so
//! the sampling grid and the integration steps are independent.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::eigensolve::{axpy, full_spectrum, SpectrumTable};
use crate::error::{Error, Result};
use crate::hamiltonians::{HamiltonianSpec, Operator};
use crate::quench::CollapseResult;
use crate::statespace::{dot, norm, Axis, Basis, SitePauli, StateVector, C64};

/// Sampling grid `t_k = k·dt`, `k = 0..count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64) -> Result<Self> {
        let grid = TimeGrid { t_max, dt };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "t_max must be >= 0, got {}",
                self.t_max
            )));
        }
        Ok(())
    }

    /// floor(t_max/dt) + 1, with a relative slack so that t_max = k·dt is
    /// not lost to rounding.
    pub fn count(&self) -> usize {
        (self.t_max / self.dt * (1.0 + 1e-12) + 1e-9).floor() as usize + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.count()).map(|k| self.time(k)).collect()
    }

    /// Same dt and sample count.
    pub fn same_samples(&self, other: &TimeGrid) -> bool {
        (self.dt - other.dt).abs() <= 1e-12 * self.dt && self.count() == other.count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub model: Option<HamiltonianSpec>,
    /// Site whose magnetization is recorded (1-based).
    pub site: usize,
    pub n_sites: usize,
    /// Largest |‖ψ‖ − 1| removed by renormalization along the run.
    pub max_norm_drift: f64,
}

/// A sampled magnetization trace m_j^x(t_k).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub meta: SeriesMeta,
}

impl TimeSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>, meta: SeriesMeta) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.count() {
            return Err(Error::DimensionMismatch {
                expected: grid.count(),
                got: values.len(),
            });
        }
        Ok(TimeSeries { grid, values, meta })
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// The leading samples up to `t_max`.
    pub fn truncated(&self, t_max: f64) -> Result<TimeSeries> {
        let grid = TimeGrid::new(t_max.min(self.grid.t_max), self.grid.dt)?;
        let values = self.values[..grid.count()].to_vec();
        TimeSeries::new(grid, values, self.meta.clone())
    }

    /// CSV with `#` metadata lines, a `t,m_x` header and one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let model = match &self.meta.model {
            Some(m) => serde_json::to_string(m).expect("model spec serializes"),
            None => "null".into(),
        };
        let _ = writeln!(out, "# model: {model}");
        let _ = writeln!(out, "# site: {}", self.meta.site);
        let _ = writeln!(out, "# n_sites: {}", self.meta.n_sites);
        let _ = writeln!(out, "# dt: {}", self.grid.dt);
        let _ = writeln!(out, "# t_max: {}", self.grid.t_max);
        let _ = writeln!(out, "# max_norm_drift: {:e}", self.meta.max_norm_drift);
        out.push_str("t,m_x\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.grid.time(k), v);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<TimeSeries> {
        let mut meta = SeriesMeta::default();
        let (mut dt, mut t_max) = (None, None);
        let mut values = Vec::new();
        let mut header = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("bad metadata line {line:?}")))?;
                let value = value.trim();
                let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
                let int = |v: &str| v.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
                match key.trim() {
                    "model" => {
                        meta.model =
                            serde_json::from_str(value).map_err(|e| Error::Parse(e.to_string()))?
                    }
                    "site" => meta.site = int(value)?,
                    "n_sites" => meta.n_sites = int(value)?,
                    "dt" => dt = Some(num(value)?),
                    "t_max" => t_max = Some(num(value)?),
                    "max_norm_drift" => meta.max_norm_drift = num(value)?,
                    _ => {}
                }
                continue;
            }
            if !header {
                if line != "t,m_x" {
                    return Err(Error::Parse(format!("expected header t,m_x, got {line:?}")));
                }
                header = true;
                continue;
            }
            let (_, m) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad row {line:?}")))?;
            values.push(m.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
        }
        let grid = TimeGrid::new(
            t_max.ok_or_else(|| Error::Parse("missing t_max".into()))?,
            dt.ok_or_else(|| Error::Parse("missing dt".into()))?,
        )?;
        TimeSeries::new(grid, values, meta)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMethod {
    #[default]
    Krylov,
    /// Exact evolution in the eigenbasis from dense diagonalization.
    Spectral,
}

fn default_krylov_dim() -> usize {
    30
}

fn default_max_krylov_dim() -> usize {
    90
}

fn default_step_tol() -> f64 {
    1e-10
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorConfig {
    #[serde(default)]
    pub method: PropagationMethod,
    /// Initial subspace size; grown up to `max_krylov_dim` when steps stall.
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    #[serde(default = "default_max_krylov_dim")]
    pub max_krylov_dim: usize,
    /// Bound on the local error of one step.
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        PropagatorConfig {
            method: PropagationMethod::Krylov,
            krylov_dim: default_krylov_dim(),
            max_krylov_dim: default_max_krylov_dim(),
            step_tol: default_step_tol(),
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.krylov_dim < 2 {
            return Err(Error::InvalidArgument("krylov_dim must be >= 2".into()));
        }
        if self.max_krylov_dim < self.krylov_dim {
            return Err(Error::InvalidArgument(
                "max_krylov_dim must be >= krylov_dim".into(),
            ));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::InvalidArgument("step_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Bookkeeping of one propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PropagationStats {
    pub steps: usize,
    pub applications: usize,
    /// Sum of the per-step error bounds.
    pub error_bound: f64,
    pub max_norm_drift: f64,
    pub cumulative_norm_drift: f64,
}

/// Lanczos subspace around the current state, with the projected matrix
/// diagonalized once.
struct KrylovSubspace {
    vectors: Vec<Vec<C64>>,
    eigenvalues: Vec<f64>,
    /// Eigenvectors of the projected matrix, row-major by basis index.
    eigenvectors: DMatrix<f64>,
    /// Norm of the residual direction; 0 for an invariant subspace.
    beta: f64,
}

impl KrylovSubspace {
    fn build(op: &dyn Operator, psi: &[C64], max_dim: usize, stats: &mut PropagationStats) -> Self {
        let dim = psi.len();
        let m_cap = max_dim.min(dim).max(1);
        let mut vectors: Vec<Vec<C64>> = Vec::with_capacity(m_cap);
        let mut alphas = Vec::with_capacity(m_cap);
        let mut betas: Vec<f64> = Vec::with_capacity(m_cap);
        vectors.push(psi.to_vec());
        let mut w = vec![C64::new(0.0, 0.0); dim];
        let scale = op.norm_bound().max(1.0);
        let mut beta;
        loop {
            let j = vectors.len() - 1;
            op.apply_into(&vectors[j], &mut w);
            stats.applications += 1;
            // Three-term recurrence, repeated once against the two latest
            // vectors to keep the local orthogonality at rounding level.
            let mut alpha = 0.0;
            for _ in 0..2 {
                let a = dot(&vectors[j], &w);
                axpy(&mut w, -a, &vectors[j]);
                alpha += a.re;
                if j > 0 {
                    let b = dot(&vectors[j - 1], &w);
                    axpy(&mut w, -b, &vectors[j - 1]);
                }
            }
            alphas.push(alpha);
            beta = norm(&w);
            if beta <= 1e-14 * scale || vectors.len() == m_cap {
                if beta <= 1e-14 * scale {
                    beta = 0.0;
                }
                break;
            }
            betas.push(beta);
            let inv = 1.0 / beta;
            vectors.push(w.iter().map(|z| z * inv).collect());
        }
        let m = vectors.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alphas[r]
            } else if r + 1 == c {
                betas[r]
            } else if c + 1 == r {
                betas[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        KrylovSubspace {
            vectors,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
            beta,
        }
    }

    fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// e^{−iTτ} e₁ in the subspace basis.
    fn coefficients(&self, tau: f64) -> Vec<C64> {
        let m = self.dim();
        let weights: Vec<C64> = (0..m)
            .map(|k| C64::from_polar(self.eigenvectors[(0, k)], -self.eigenvalues[k] * tau))
            .collect();
        (0..m)
            .map(|r| {
                (0..m)
                    .map(|k| weights[k] * self.eigenvectors[(r, k)])
                    .sum::<C64>()
            })
            .collect()
    }

    fn last_coefficient(&self, tau: f64) -> f64 {
        let m = self.dim();
        (0..m)
            .map(|k| {
                C64::from_polar(
                    self.eigenvectors[(0, k)] * self.eigenvectors[(m - 1, k)],
                    -self.eigenvalues[k] * tau,
                )
            })
            .sum::<C64>()
            .norm()
    }

    /// Residual bound on the error of the subspace solution at `tau`.
    fn error_bound(&self, tau: f64) -> f64 {
        if self.beta == 0.0 || tau == 0.0 {
            return 0.0;
        }
        let spread = self.eigenvalues.iter().cloned().fold(f64::MIN, f64::max)
            - self.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        // Composite Simpson, resolving the fastest oscillation.
        let panels = ((tau.abs() * spread).ceil() as usize).clamp(8, 4096) * 2;
        let h = tau / panels as f64;
        let mut sum = self.last_coefficient(0.0) + self.last_coefficient(tau);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * self.last_coefficient(i as f64 * h);
        }
        self.beta * sum * h.abs() / 3.0
    }

    /// Longest step of magnitude ≤ |limit| (same sign) within `tol`.
    fn max_step(&self, tol: f64, limit: f64) -> f64 {
        if self.error_bound(limit) <= tol {
            return limit;
        }
        let (mut lo, mut hi) = (0.0, limit);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.error_bound(mid) <= tol {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() <= 1e-6 * hi.abs() {
                break;
            }
        }
        lo
    }

    fn state(&self, tau: f64) -> Vec<C64> {
        let c = self.coefficients(tau);
        let dim = self.vectors[0].len();
        let mut out = vec![C64::new(0.0, 0.0); dim];
        for (v, &ck) in self.vectors.iter().zip(&c) {
            axpy(&mut out, ck, v);
        }
        out
    }
}

fn renormalize(v: &mut [C64], stats: &mut PropagationStats) {
    let n = norm(v);
    let drift = (n - 1.0).abs();
    stats.max_norm_drift = stats.max_norm_drift.max(drift);
    stats.cumulative_norm_drift += drift;
    let inv = 1.0 / n;
    v.iter_mut().for_each(|z| *z *= inv);
}

/// Propagates `psi0` through the monotone (all ≥ 0 increasing, or all ≤ 0
/// decreasing) sequence `targets`, calling `on_sample(k, ψ(t_k))` for each.
pub fn propagate(
    op: &dyn Operator,
    psi0: &[C64],
    targets: &[f64],
    config: &PropagatorConfig,
    mut on_sample: impl FnMut(usize, &[C64]) -> Result<()>,
) -> Result<PropagationStats> {
    config.validate()?;
    if psi0.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: psi0.len(),
        });
    }
    let mut stats = PropagationStats::default();
    let Some(&last) = targets.last() else {
        return Ok(stats);
    };
    let direction = if last < 0.0 { -1.0 } else { 1.0 };
    if targets
        .windows(2)
        .any(|w| (w[1] - w[0]) * direction < 0.0)
        || targets[0] * direction < 0.0
    {
        return Err(Error::InvalidArgument("sample times must be monotone from 0".into()));
    }
    let mut psi = psi0.to_vec();
    renormalize(&mut psi, &mut stats);
    let mut t = 0.0f64;
    let mut k = 0;
    let slack = |t: f64| 1e-12 * t.abs().max(1.0);
    let mut m = config.krylov_dim;
    while k < targets.len() {
        if (targets[k] - t).abs() <= slack(t) {
            on_sample(k, &psi)?;
            k += 1;
            continue;
        }
        let remaining = last - t;
        let mut sub = KrylovSubspace::build(op, &psi, m, &mut stats);
        let mut tau = sub.max_step(config.step_tol, remaining);
        // A step shorter than the next sample gap means the subspace is too
        // small for the spectral width.
        while tau.abs() < (targets[k] - t).abs() && m < config.max_krylov_dim && sub.beta > 0.0 {
            m = (m + m / 2).min(config.max_krylov_dim);
            sub = KrylovSubspace::build(op, &psi, m, &mut stats);
            tau = sub.max_step(config.step_tol, remaining);
        }
        if tau.abs() <= 1e-12 * t.abs().max(1.0) {
            return Err(Error::Propagation {
                t,
                reason: format!(
                    "step underflow with a {}-dimensional subspace (bound {:e} at the smallest step)",
                    sub.dim(),
                    sub.error_bound(remaining * 1e-12)
                ),
            });
        }
        stats.steps += 1;
        stats.error_bound += sub.error_bound(tau);
        let t_next = t + tau;
        while k < targets.len() && (targets[k] - t_next) * direction < -slack(t_next) {
            let mut state = sub.state(targets[k] - t);
            renormalize(&mut state, &mut stats);
            on_sample(k, &state)?;
            k += 1;
        }
        psi = sub.state(tau);
        renormalize(&mut psi, &mut stats);
        t = t_next;
    }
    Ok(stats)
}

/// e^{−iHΔt}ψ by Krylov stepping (with adaptive substeps). Negative Δt
/// evolves backwards.
pub fn krylov_step(
    op: &dyn Operator,
    psi: &StateVector,
    delta_t: f64,
    config: &PropagatorConfig,
) -> Result<(StateVector, PropagationStats)> {
    let mut out = None;
    let stats = propagate(op, psi.amplitudes(), &[delta_t], config, |_, s| {
        out = Some(s.to_vec());
        Ok(())
    })?;
    let amps = out.expect("final sample is always produced");
    Ok((StateVector::new(op.basis().clone(), amps)?, stats))
}

fn check_complete(spectrum: &SpectrumTable) -> Result<()> {
    if !spectrum.is_complete() || spectrum.is_empty() {
        return Err(Error::IncompleteSpectrum(format!(
            "{} eigenpairs, full spectrum required",
            spectrum.len()
        )));
    }
    Ok(())
}

/// Overlaps ⟨E_n|ψ⟩.
fn eigen_overlaps(spectrum: &SpectrumTable, psi: &[C64]) -> Vec<C64> {
    spectrum
        .pairs()
        .iter()
        .map(|p| dot(p.vector.amplitudes(), psi))
        .collect()
}

fn spectral_state(spectrum: &SpectrumTable, overlaps: &[C64], t: f64) -> Vec<C64> {
    let dim = overlaps.len();
    let mut out = vec![C64::new(0.0, 0.0); dim];
    for (pair, &c) in spectrum.pairs().iter().zip(overlaps) {
        axpy(&mut out, c * C64::from_polar(1.0, -pair.value * t), pair.vector.amplitudes());
    }
    out
}

/// Σ_n e^{−iE_n t}|E_n⟩⟨E_n|ψ₀⟩ from a complete spectrum.
pub fn spectral_evolve(spectrum: &SpectrumTable, psi0: &StateVector, t: f64) -> Result<StateVector> {
    check_complete(spectrum)?;
    if psi0.dim() != spectrum.len() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.len(),
            got: psi0.dim(),
        });
    }
    let overlaps = eigen_overlaps(spectrum, psi0.amplitudes());
    StateVector::new(psi0.basis().clone(), spectral_state(spectrum, &overlaps, t))
}

fn series_meta(op: &dyn Operator, site: usize, drift: f64) -> SeriesMeta {
    SeriesMeta {
        model: op.spec().cloned(),
        site,
        n_sites: op.basis().n_sites(),
        max_norm_drift: drift,
    }
}

/// m^x_site(t_k) along the evolution of a collapsed state.
pub fn magnetization_series(
    op: &dyn Operator,
    collapsed: &CollapseResult,
    site: usize,
    grid: &TimeGrid,
    config: &PropagatorConfig,
) -> Result<TimeSeries> {
    grid.validate()?;
    let psi = collapsed.state.embed(op.basis())?;
    let observable = SitePauli::new(op.basis().clone(), Axis::X, site)?;
    let times = grid.times();
    let mut values = vec![0.0; times.len()];
    let drift = match config.method {
        PropagationMethod::Krylov => {
            let stats = propagate(op, psi.amplitudes(), &times, config, |k, state| {
                values[k] = observable.expectation(state);
                Ok(())
            })
            .map_err(|e| match e {
                Error::Propagation { .. } => e,
                other => Error::Propagation {
                    t: f64::NAN,
                    reason: other.to_string(),
                },
            })?;
            stats.max_norm_drift
        }
        PropagationMethod::Spectral => {
            let spectrum = full_spectrum(op)?;
            let overlaps = eigen_overlaps(&spectrum, psi.amplitudes());
            let mut drift = 0.0f64;
            for (k, &t) in times.iter().enumerate() {
                let mut state = spectral_state(&spectrum, &overlaps, t);
                let n = norm(&state);
                drift = drift.max((n - 1.0).abs());
                state.iter_mut().for_each(|z| *z /= n);
                values[k] = observable.expectation(&state);
            }
            drift
        }
    };
    TimeSeries::new(*grid, values, series_meta(op, site, drift))
}

/// Spectral line of the post-quench magnetization: gap E_n − E_0 and its
/// weight |⟨E_n|σ^x_j|E_0⟩|².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapWeight {
    pub index: usize,
    pub gap: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralMagnetization {
    pub series: TimeSeries,
    /// Every excited level with its weight, in spectrum order.
    pub weights: Vec<GapWeight>,
}

/// |⟨E_n|σ^x_site|E_0⟩|² for every level.
pub fn transition_weights(spectrum: &SpectrumTable, site: usize) -> Result<Vec<GapWeight>> {
    check_complete(spectrum)?;
    let ground = spectrum.ground();
    let basis: &Arc<Basis> = ground.vector.basis();
    let sigma = crate::statespace::apply_pauli(Axis::X, site, &ground.vector)?;
    Ok(spectrum
        .pairs()
        .iter()
        .enumerate()
        .map(|(n, p)| GapWeight {
            index: n,
            gap: p.value - ground.value,
            weight: dot(p.vector.amplitudes(), sigma.amplitudes()).norm_sqr(),
        })
        .filter(|_| basis.dim() > 0)
        .collect())
}

/// m^x_j(t) = Σ_n cos[(E_n − E_0)t] |⟨E_n|σ^x_j|E_0⟩|², valid for a
/// forced-up quench on a ground state with ⟨σ^x_j⟩ = 0.
pub fn spectral_magnetization(
    spectrum: &SpectrumTable,
    site: usize,
    grid: &TimeGrid,
) -> Result<SpectralMagnetization> {
    grid.validate()?;
    check_complete(spectrum)?;
    let ground = &spectrum.ground().vector;
    let mx = crate::statespace::expectation(Axis::X, site, ground)?;
    if mx.abs() > 1e-8 {
        return Err(Error::Precondition(format!(
            "ground state has <sigma^x_{site}> = {mx:e}; use the general propagation path"
        )));
    }
    let weights = transition_weights(spectrum, site)?;
    let values = grid
        .times()
        .iter()
        .map(|&t| weights.iter().map(|w| w.weight * (w.gap * t).cos()).sum())
        .collect();
    let meta = SeriesMeta {
        model: None,
        site,
        n_sites: ground.n_sites(),
        max_norm_drift: 0.0,
    };
    Ok(SpectralMagnetization {
        series: TimeSeries::new(*grid, values, meta)?,
        weights,
    })
}

/// (1/T) ∫_0^T |m_a(t) − m_b(t)| dt on the shared grid.
///
/// The signed difference is interpolated by local quintics through six
/// neighbouring samples; each piece is split at its sign changes and
/// integrated exactly, so the kinks of |·| cost no accuracy.
pub fn magnetization_difference(a: &TimeSeries, b: &TimeSeries, t_window: f64) -> Result<f64> {
    if !a.grid.same_samples(&b.grid) {
        return Err(Error::GridMismatch(format!(
            "dt {} / {} with {} / {} samples",
            a.grid.dt,
            b.grid.dt,
            a.grid.count(),
            b.grid.count()
        )));
    }
    let dt = a.grid.dt;
    if t_window < 2.0 * dt {
        return Err(Error::InvalidArgument(format!(
            "window {t_window} shorter than two samples (dt = {dt})"
        )));
    }
    let last_t = a.grid.time(a.grid.count() - 1);
    if t_window > last_t * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "window {t_window} exceeds the sampled range {last_t}"
        )));
    }
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let span = (t_window / dt).min((diff.len() - 1) as f64);
    Ok(abs_integral(&diff, span) * dt / t_window)
}

/// ∫_0^span |p(s)| ds in units of the sample spacing, p interpolating `d`.
fn abs_integral(d: &[f64], span: f64) -> f64 {
    let n = d.len();
    let mut total = 0.0;
    let mut k = 0usize;
    while (k as f64) < span - 1e-12 {
        let hi = (span - k as f64).min(1.0);
        // Stencil of (up to) six samples centred on the interval [k, k+1].
        let width = n.min(6);
        let start = k.saturating_sub(2).min(n - width);
        let nodes = &d[start..start + width];
        let p = |s: f64| lagrange(nodes, s + (k - start) as f64);
        total += abs_piece(&p, hi);
        k += 1;
    }
    total
}

/// Lagrange interpolant through `y[i]` at abscissae i, evaluated at x.
fn lagrange(y: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let mut w = 1.0;
        for j in 0..y.len() {
            if j != i {
                w *= (x - j as f64) / (i as f64 - j as f64);
            }
        }
        acc += w * yi;
    }
    acc
}

/// ∫_0^hi |p| for a polynomial of degree ≤ 5: split at sign changes, then
/// three-point Gauss–Legendre, exact on each piece.
fn abs_piece(p: &impl Fn(f64) -> f64, hi: f64) -> f64 {
    const SPLITS: usize = 8;
    let mut cuts = vec![0.0];
    let mut prev = p(0.0);
    for i in 1..=SPLITS {
        let x = hi * i as f64 / SPLITS as f64;
        let val = p(x);
        if prev * val < 0.0 {
            let (mut lo, mut up) = (x - hi / SPLITS as f64, x);
            for _ in 0..60 {
                let mid = 0.5 * (lo + up);
                if p(lo) * p(mid) <= 0.0 {
                    up = mid;
                } else {
                    lo = mid;
                }
            }
            cuts.push(0.5 * (lo + up));
        }
        prev = val;
    }
    cuts.push(hi);
    cuts.windows(2)
        .map(|w| {
            let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            let node = half * (0.6f64).sqrt();
            (half / 9.0 * (5.0 * p(mid - node) + 8.0 * p(mid) + 5.0 * p(mid + node))).abs()
        })
        .sum()
}
