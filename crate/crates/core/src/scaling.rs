//! Finite-size data collapse of post-quench magnetization traces.
//!
//! Traces of different chain lengths N are plotted against x = t/N with the
//! ratio N/ξ held fixed; the scaling hypothesis says they fall on one
//! curve. The quality of a collapse is measured by the mean pairwise RMS
//! distance between the curves over a window in x.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::TimeSeries;

/// Critical field of the transverse-field Ising chain.
pub const TFIC_CRITICAL_LAMBDA: f64 = 1.0;

/// A magnetization trace against rescaled time x = t/N.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    fn step(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// Linear interpolation; `x` must lie inside the sampled range.
    fn at(&self, x: f64) -> f64 {
        let dx = self.step();
        let k = ((x - self.x[0]) / dx).floor().max(0.0) as usize;
        let k = k.min(self.x.len() - 2);
        let f = (x - self.x[k]) / dx;
        self.y[k] + f * (self.y[k + 1] - self.y[k])
    }
}

pub fn rescale_time(series: &TimeSeries, n_sites: usize) -> Curve {
    let n = n_sites as f64;
    Curve {
        x: series.times().into_iter().map(|t| t / n).collect(),
        y: series.values.clone(),
    }
}

/// Inverse of [`rescale_time`]: the sample times t = N·x.
pub fn unrescale_time(curve: &Curve, n_sites: usize) -> Vec<f64> {
    curve.x.iter().map(|x| x * n_sites as f64).collect()
}

/// Centered moving average over `window` (in x units). Near the ends the
/// window is truncated to the available samples.
pub fn low_pass(curve: &Curve, window: f64) -> Result<Curve> {
    let n = curve.y.len();
    if n < 2 {
        return Err(Error::InvalidArgument("curve needs at least two samples".into()));
    }
    let span = (window / curve.step()).round() as usize;
    let half = span / 2;
    if 2 * half + 1 < 3 {
        return Err(Error::InvalidArgument(format!(
            "filter window {window} covers fewer than 3 samples"
        )));
    }
    if 2 * half + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "filter window {window} longer than the curve"
        )));
    }
    let mut prefix = vec![0.0; n + 1];
    for (k, y) in curve.y.iter().enumerate() {
        prefix[k + 1] = prefix[k] + y;
    }
    let y = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    Ok(Curve {
        x: curve.x.clone(),
        y,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseMember {
    pub series: TimeSeries,
    pub n_sites: usize,
    /// λ for the TFIC, J′ for the Kondo chain.
    pub control: f64,
    /// Length used for tuning; `None` at a critical point.
    pub xi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseFamily {
    pub members: Vec<CollapseMember>,
    pub target_ratio: f64,
}

impl CollapseFamily {
    pub fn new(members: Vec<CollapseMember>, target_ratio: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("collapse family has no members".into()));
        }
        let site = members[0].series.meta.site;
        if members.iter().any(|m| m.series.meta.site != site) {
            return Err(Error::InvalidArgument(
                "family members record different sites".into(),
            ));
        }
        if members.iter().any(|m| m.series.values.len() < 2) {
            return Err(Error::InvalidArgument("member series too short".into()));
        }
        Ok(CollapseFamily {
            members,
            target_ratio,
        })
    }

    /// Long-format CSV `x,m,N,control`, optionally low-pass filtered.
    pub fn to_csv(&self, filter: Option<f64>) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "# target_ratio: {}", self.target_ratio);
        if let Some(w) = filter {
            let _ = writeln!(out, "# low_pass: {w}");
        }
        out.push_str("x,m,N,control\n");
        for m in &self.members {
            let curve = member_curve(m, filter)?;
            for (x, y) in curve.x.iter().zip(&curve.y) {
                let _ = writeln!(out, "{x},{y},{},{}", m.n_sites, m.control);
            }
        }
        Ok(out)
    }
}

fn member_curve(member: &CollapseMember, filter: Option<f64>) -> Result<Curve> {
    let curve = rescale_time(&member.series, member.n_sites);
    match filter {
        Some(w) => low_pass(&curve, w),
        None => Ok(curve),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetric {
    /// Mean pairwise RMS distance over the window.
    pub value: f64,
    /// [x_min, x_max] actually compared.
    pub window: (f64, f64),
    /// Low-pass window in x units, if applied.
    pub filter: Option<f64>,
}

/// Mean over member pairs of sqrt((1/L)∫(f − g)² dx) on the overlap of the
/// curves with `window`, after optional low-pass filtering.
pub fn collapse_distance(
    family: &CollapseFamily,
    window: (f64, f64),
    filter: Option<f64>,
) -> Result<CollapseMetric> {
    let curves = family
        .members
        .iter()
        .map(|m| member_curve(m, filter))
        .collect::<Result<Vec<_>>>()?;
    let lo = curves.iter().map(|c| c.x[0]).fold(window.0, f64::max);
    let hi = curves
        .iter()
        .map(|c| *c.x.last().expect("non-empty"))
        .fold(window.1, f64::min);
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "empty overlap between the curves and window [{}, {}]",
            window.0, window.1
        )));
    }
    let step = curves.iter().map(Curve::step).fold(f64::INFINITY, f64::min);
    let points = ((hi - lo) / step).ceil() as usize + 1;
    let h = (hi - lo) / (points - 1) as f64;
    let sampled: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| (0..points).map(|k| c.at(lo + k as f64 * h)).collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..sampled.len() {
        for b in a + 1..sampled.len() {
            let sq: Vec<f64> = sampled[a]
                .iter()
                .zip(&sampled[b])
                .map(|(f, g)| (f - g).powi(2))
                .collect();
            let integral: f64 = sq.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
            total += (integral / (hi - lo)).sqrt();
            pairs += 1;
        }
    }
    Ok(CollapseMetric {
        value: if pairs == 0 { 0.0 } else { total / pairs as f64 },
        window: (lo, hi),
        filter,
    })
}

/// How the control parameter of each family member is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Tuning {
    /// λ with N|λ − λ_c|^ν = ratio, below λ_c unless `paramagnetic`.
    Tfic {
        nu: f64,
        #[serde(default)]
        paramagnetic: bool,
    },
    /// J′ with ξ_K(J′) = N/ratio, by log-linear interpolation of a measured
    /// table of (J′, ξ_K) pairs.
    KondoTable { table: Vec<(f64, f64)> },
    /// J′ from the fitted law ln ξ_K = A/J′ + intercept.
    KondoLaw { a: f64, intercept: f64 },
}

/// Control value putting an `n_sites` chain at N/ξ = `ratio`.
pub fn tune_control_for_ratio(tuning: &Tuning, n_sites: usize, ratio: f64) -> Result<f64> {
    let n = n_sites as f64;
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("ratio must be >= 0, got {ratio}")));
    }
    match tuning {
        Tuning::Tfic { nu, paramagnetic } => {
            if !(*nu > 0.0) {
                return Err(Error::InvalidArgument(format!("nu must be positive, got {nu}")));
            }
            let offset = (ratio / n).powf(1.0 / nu);
            if *paramagnetic {
                return Ok(TFIC_CRITICAL_LAMBDA + offset);
            }
            let lambda = TFIC_CRITICAL_LAMBDA - offset;
            if lambda < 0.0 {
                return Err(Error::Unreachable(format!(
                    "N|λ−1|^ν = {ratio} needs λ < 0 at N = {n_sites}"
                )));
            }
            Ok(lambda)
        }
        Tuning::KondoTable { table } => {
            if ratio == 0.0 {
                return Err(Error::Unreachable("N/ξ_K = 0 needs J′ → 0".into()));
            }
            kondo_from_table(table, n / ratio)
        }
        Tuning::KondoLaw { a, intercept } => {
            if ratio == 0.0 {
                return Err(Error::Unreachable("N/ξ_K = 0 needs J′ → 0".into()));
            }
            let denom = (n / ratio).ln() - intercept;
            let j_prime = a / denom;
            if !(denom > 0.0 && j_prime > 0.0 && j_prime <= 1.0) {
                return Err(Error::Unreachable(format!(
                    "ξ_K = {} outside the range of the fitted law",
                    n / ratio
                )));
            }
            Ok(j_prime)
        }
    }
}

fn kondo_from_table(table: &[(f64, f64)], xi: f64) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty ξ_K table".into()));
    }
    let mut rows: Vec<(f64, f64)> = table.to_vec();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(&(jp, _)) = rows.iter().find(|r| r.1 == xi) {
        return Ok(jp);
    }
    for w in rows.windows(2) {
        let ((j0, x0), (j1, x1)) = (w[0], w[1]);
        if (x0 - xi) * (x1 - xi) <= 0.0 && x0 != x1 {
            let f = (xi.ln() - x0.ln()) / (x1.ln() - x0.ln());
            return Ok(j0 + f * (j1 - j0));
        }
    }
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Err(Error::Unreachable(format!(
        "ξ_K = {xi} outside the tabulated range [{lo}, {hi}]"
    )))
}

/// Collapse metric against ν, with the minimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuScan {
    pub nu_grid: Vec<f64>,
    pub metrics: Vec<f64>,
    pub nu_best: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl NuScan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scan serializes")
    }
}

/// Tunes each size to N|λ − 1|^ν = `ratio` for every ν on the grid, runs
/// `runner(N, λ)` and returns the ν that minimizes the collapse metric.
pub fn estimate_nu<F>(
    runner: F,
    sizes: &[usize],
    ratio: f64,
    nu_grid: &[f64],
    window: (f64, f64),
    filter: Option<f64>,
) -> Result<NuScan>
where
    F: Fn(usize, f64) -> Result<TimeSeries> + Sync,
{
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument("ν estimation needs at least 3 sizes".into()));
    }
    if nu_grid.is_empty() {
        return Err(Error::InvalidArgument("empty ν grid".into()));
    }
    let jobs: Vec<(usize, usize, f64)> = nu_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &nu)| {
            sizes
                .iter()
                .map(move |&n| (i, n, tune_control_for_ratio(&Tuning::Tfic { nu, paramagnetic: false }, n, ratio)))
        })
        .map(|(i, n, lambda)| lambda.map(|l| (i, n, l)))
        .collect::<Result<_>>()?;
    let series: Vec<TimeSeries> = jobs
        .par_iter()
        .map(|&(_, n, lambda)| runner(n, lambda))
        .collect::<Result<_>>()?;
    let mut metrics = Vec::with_capacity(nu_grid.len());
    for (i, &nu) in nu_grid.iter().enumerate() {
        let members = jobs
            .iter()
            .zip(&series)
            .filter(|(job, _)| job.0 == i)
            .map(|(&(_, n, lambda), s)| CollapseMember {
                series: s.clone(),
                n_sites: n,
                control: lambda,
                xi: (lambda != TFIC_CRITICAL_LAMBDA)
                    .then(|| (TFIC_CRITICAL_LAMBDA - lambda).abs().powf(-nu)),
            })
            .collect();
        let family = CollapseFamily::new(members, ratio)?;
        metrics.push(collapse_distance(&family, window, filter)?.value);
    }
    let best = metrics
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok(NuScan {
        nu_grid: nu_grid.to_vec(),
        nu_best: nu_grid[best],
        warnings: scan_warnings(&metrics),
        metrics,
    })
}

fn scan_warnings(metrics: &[f64]) -> Vec<String> {
    let mut warnings = Vec::new();
    let top = metrics.iter().cloned().fold(0.0, f64::max);
    let bottom = metrics.iter().cloned().fold(f64::INFINITY, f64::min);
    if top - bottom <= 1e-12 * top.max(1.0) {
        warnings.push("metric is flat across the ν grid".into());
        return warnings;
    }
    let minima = (0..metrics.len())
        .filter(|&i| {
            let left = i == 0 || metrics[i - 1] > metrics[i];
            let right = i + 1 == metrics.len() || metrics[i + 1] > metrics[i];
            left && right
        })
        .count();
    if minima > 1 {
        warnings.push(format!("metric is not unimodal ({minima} local minima)"));
    }
    warnings
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingWindow {
    pub x_break: f64,
    pub pre_metric: f64,
    pub post_metric: f64,
}

impl ScalingWindow {
    /// post/pre, infinite when the early part collapses exactly.
    pub fn ratio(&self) -> f64 {
        self.post_metric / self.pre_metric
    }
}

/// Collapse metrics on [0, x_break] and [x_break, x_max] separately.
pub fn kondo_scaling_window(
    family: &CollapseFamily,
    x_break: f64,
    x_max: f64,
    filter: Option<f64>,
) -> Result<ScalingWindow> {
    let coarsest = family
        .members
        .iter()
        .map(|m| m.series.grid.dt / m.n_sites as f64)
        .fold(0.0, f64::max);
    if !(x_break >= 3.0 * coarsest && x_max - x_break >= 3.0 * coarsest) {
        return Err(Error::InvalidArgument(format!(
            "windows [0, {x_break}] and [{x_break}, {x_max}] too short for the sampling"
        )));
    }
    Ok(ScalingWindow {
        x_break,
        pre_metric: collapse_distance(family, (0.0, x_break), filter)?.value,
        post_metric: collapse_distance(family, (x_break, x_max), filter)?.value,
    })
}
