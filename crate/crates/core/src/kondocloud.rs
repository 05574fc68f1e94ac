//! Kondo screening-cloud detection.
//!
//! For each measured site j the post-quench magnetization with the impurity
//! bond J′ is compared to the homogeneous chain (J′ = 1):
//!
//! ```text
//! Δm̄_j(J′) = (1/T) ∫_0^T |m_j(t; J′) − m_j(t; 1)| dt,   T = 1/J′
//! ```
//!
//! Outside the cloud the two agree at short times, so Δm̄_j decays like
//! e^{−j/ξ_K}. Fitting that tail gives ξ_K, and fitting ln ξ_K against 1/J′
//! gives the coefficient A of ξ_K ∼ e^{A/J′}.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigensolve::LanczosConfig;
use crate::error::{Error, Result};
use crate::evolve::{magnetization_difference, PropagatorConfig, TimeGrid, TimeSeries};
use crate::hamiltonians::{HamiltonianSpec, KONDO_CRITICAL_J2};
use crate::pipeline::QuenchContext;
use crate::quench::MeasurementSpec;
use crate::statespace::Axis;

/// Sites excluded at the far end of the chain.
pub const DEFAULT_MARGIN: usize = 2;
/// r² a tail window must reach to be accepted by [`auto_tail`].
pub const TAIL_R2: f64 = 0.99;
const MIN_FIT_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudOptions {
    pub dt: f64,
    pub margin: usize,
    pub propagator: PropagatorConfig,
    pub j2_over_j1: f64,
}

impl Default for CloudOptions {
    fn default() -> Self {
        CloudOptions {
            dt: 0.05,
            margin: DEFAULT_MARGIN,
            propagator: PropagatorConfig::default(),
            j2_over_j1: KONDO_CRITICAL_J2,
        }
    }
}

fn kondo(n_sites: usize, j_prime: f64, options: &CloudOptions) -> HamiltonianSpec {
    HamiltonianSpec::KondoChain {
        n_sites,
        j_prime,
        j2_over_j1: options.j2_over_j1,
    }
}

/// Sites 2..=N−margin.
pub fn profile_sites(n_sites: usize, margin: usize) -> Result<Vec<usize>> {
    if n_sites < margin + 2 {
        return Err(Error::InvalidArgument(format!(
            "no sites left for N = {n_sites} with margin {margin}"
        )));
    }
    Ok((2..=n_sites - margin).collect())
}

/// Smallest grid end at or beyond `t` on a dt lattice.
fn covering_grid(t: f64, dt: f64) -> Result<TimeGrid> {
    TimeGrid::new((t / dt * (1.0 - 1e-12)).ceil() * dt, dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudProfile {
    pub j_values: Vec<usize>,
    pub dm: Vec<f64>,
    pub j_prime: f64,
    pub n_sites: usize,
    pub t_window: f64,
    /// Sites whose evolution failed, with the reason; non-empty marks a
    /// partial profile.
    #[serde(default)]
    pub failures: Vec<(usize, String)>,
}

impl CloudProfile {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// `j,dm,J_prime,N` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,dm,J_prime,N\n");
        for (j, dm) in self.j_values.iter().zip(&self.dm) {
            let _ = writeln!(out, "{j},{dm},{},{}", self.j_prime, self.n_sites);
        }
        out
    }
}

/// Traces of the homogeneous chain (J′ = 1), one per site, reusable across
/// a J′ sweep.
pub struct ReferenceTraces {
    pub n_sites: usize,
    pub traces: BTreeMap<usize, TimeSeries>,
}

impl ReferenceTraces {
    /// Evolves the homogeneous chain up to `t_max` for each listed site.
    pub fn compute(
        n_sites: usize,
        sites: &[usize],
        t_max: f64,
        options: &CloudOptions,
        lanczos: &LanczosConfig,
    ) -> Result<Self> {
        let ctx = QuenchContext::new(&kondo(n_sites, 1.0, options), Axis::X, lanczos)?;
        let grid = covering_grid(t_max, options.dt)?;
        let traces = sites
            .par_iter()
            .map(|&j| {
                ctx.run(&MeasurementSpec::x(j), j, &grid, &options.propagator)
                    .map(|r| (j, r.series))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(ReferenceTraces { n_sites, traces })
    }
}

/// Δm̄_j(J′) for every site of the sweep, with its own reference run.
pub fn cloud_profile(
    n_sites: usize,
    j_prime: f64,
    options: &CloudOptions,
    lanczos: &LanczosConfig,
) -> Result<CloudProfile> {
    let sites = profile_sites(n_sites, options.margin)?;
    kondo(n_sites, j_prime, options).validate()?;
    if j_prime == 1.0 {
        return cloud_profile_against(None, n_sites, j_prime, options, lanczos);
    }
    let reference = ReferenceTraces::compute(n_sites, &sites, 1.0 / j_prime, options, lanczos)?;
    cloud_profile_against(Some(&reference), n_sites, j_prime, options, lanczos)
}

/// Δm̄_j(J′) against precomputed reference traces. Without a reference the
/// impurity chain is compared with itself, which is only meaningful at
/// J′ = 1.
pub fn cloud_profile_against(
    reference: Option<&ReferenceTraces>,
    n_sites: usize,
    j_prime: f64,
    options: &CloudOptions,
    lanczos: &LanczosConfig,
) -> Result<CloudProfile> {
    let spec = kondo(n_sites, j_prime, options);
    spec.validate()?;
    let sites = profile_sites(n_sites, options.margin)?;
    if reference.is_none() && j_prime != 1.0 {
        return Err(Error::InvalidArgument("a reference is required for J′ ≠ 1".into()));
    }
    if let Some(r) = reference {
        if r.n_sites != n_sites {
            return Err(Error::DimensionMismatch {
                expected: n_sites,
                got: r.n_sites,
            });
        }
    }
    let t_window = 1.0 / j_prime;
    let grid = covering_grid(t_window, options.dt)?;
    let ctx = QuenchContext::new(&spec, Axis::X, lanczos)?;
    let results: Vec<(usize, Result<f64>)> = sites
        .par_iter()
        .map(|&j| {
            let dm = (|| {
                let own = ctx
                    .run(&MeasurementSpec::x(j), j, &grid, &options.propagator)?
                    .series;
                let other = match reference {
                    Some(r) => r
                        .traces
                        .get(&j)
                        .ok_or_else(|| Error::InvalidArgument(format!("no reference trace at site {j}")))?
                        .truncated(grid.t_max)?,
                    None => own.clone(),
                };
                magnetization_difference(&own, &other, t_window)
            })();
            (j, dm)
        })
        .collect();
    let mut profile = CloudProfile {
        j_values: Vec::new(),
        dm: Vec::new(),
        j_prime,
        n_sites,
        t_window,
        failures: Vec::new(),
    };
    for (j, r) in results {
        match r {
            Ok(dm) => {
                profile.j_values.push(j);
                profile.dm.push(dm);
            }
            Err(e) => profile.failures.push((j, e.to_string())),
        }
    }
    Ok(profile)
}

/// Where the fitted tail of a profile begins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailStart {
    #[default]
    Auto,
    Explicit(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningFit {
    pub xi: f64,
    #[serde(rename = "window")]
    pub fit_window: (usize, usize),
    #[serde(rename = "r2")]
    pub r_squared: f64,
    pub intercept: f64,
    /// ln dm − fitted line, per site of the window.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LineFit {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    residuals: Vec<f64>,
}

fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| b - (intercept + slope * a))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        r_squared,
        residuals,
    }
}

fn tail_points(profile: &CloudProfile, j_lo: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut js = Vec::new();
    let mut dms = Vec::new();
    for (&j, &dm) in profile.j_values.iter().zip(&profile.dm) {
        if j >= j_lo {
            js.push(j as f64);
            dms.push(dm);
        }
    }
    let logs = dms.iter().map(|d| d.ln()).collect();
    (js, dms, logs)
}

/// Log-linear fit of the tail: ξ_K = −1/slope.
pub fn fit_screening_length(profile: &CloudProfile, tail: TailStart) -> Result<ScreeningFit> {
    let j_lo = match tail {
        TailStart::Auto => auto_tail(profile)?,
        TailStart::Explicit(j) => j,
    };
    let (js, dms, logs) = tail_points(profile, j_lo);
    if js.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "tail from j = {j_lo} has {} points, {MIN_FIT_POINTS} needed",
            js.len()
        )));
    }
    if dms.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Fit(format!("zeros in the tail from j = {j_lo}")));
    }
    let fit = line_fit(&js, &logs);
    if !(fit.slope < 0.0) {
        return Err(Error::Fit(format!(
            "non-negative slope {} (no decay away from the impurity)",
            fit.slope
        )));
    }
    Ok(ScreeningFit {
        xi: -1.0 / fit.slope,
        fit_window: (j_lo, *profile.j_values.last().expect("non-empty tail")),
        r_squared: fit.r_squared,
        intercept: fit.intercept,
        residuals: fit.residuals,
    })
}

/// Smallest j_lo ≥ 3 whose tail fit reaches r² ≥ [`TAIL_R2`] with a
/// decaying slope; failing that, the j_lo of best r².
pub fn auto_tail(profile: &CloudProfile) -> Result<usize> {
    if profile.j_values.len() < 6 {
        return Err(Error::Fit(format!(
            "profile has {} sites, at least 6 needed",
            profile.j_values.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for &j_lo in profile.j_values.iter().filter(|&&j| j >= 3) {
        let (js, dms, logs) = tail_points(profile, j_lo);
        if js.len() < MIN_FIT_POINTS {
            break;
        }
        if dms.iter().any(|&d| !(d > 0.0)) {
            continue;
        }
        let fit = line_fit(&js, &logs);
        if !(fit.slope < 0.0) {
            continue;
        }
        if fit.r_squared >= TAIL_R2 {
            return Ok(j_lo);
        }
        if best.is_none_or(|(_, r2)| fit.r_squared > r2) {
            best = Some((j_lo, fit.r_squared));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::Fit("no decaying, strictly positive tail window".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KondoLawFit {
    /// A in ln ξ_K = A/J′ + intercept.
    #[serde(rename = "A")]
    pub a_coefficient: f64,
    pub intercept: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
}

impl KondoLawFit {
    pub fn xi(&self, j_prime: f64) -> f64 {
        (self.a_coefficient / j_prime + self.intercept).exp()
    }
}

/// Least-squares line of ln ξ_K against 1/J′.
pub fn fit_kondo_law(pairs: &[(f64, f64)]) -> Result<KondoLawFit> {
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if pairs.len() < 3 || distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 distinct J′ values, got {}",
            distinct.len()
        )));
    }
    if pairs.iter().any(|&(jp, xi)| !(jp > 0.0 && xi > 0.0)) {
        return Err(Error::Fit("J′ and ξ_K must be positive".into()));
    }
    let x: Vec<f64> = pairs.iter().map(|p| 1.0 / p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let fit = line_fit(&x, &y);
    Ok(KondoLawFit {
        a_coefficient: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
    })
}
