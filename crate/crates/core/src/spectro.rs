//! Quench spectroscopy: Fourier transform of a magnetization trace, peak
//! extraction and matching of the peaks against exact excitation gaps.
//!
//! The transform is the one-sided
//!
//! ```text
//! M(E) = (1/2π) ∫_0^T w(t) m(t) e^{−iEt} dt
//! ```
//!
//! evaluated by the trapezoidal rule, with |M| reported. A cosine of weight
//! `c` therefore appears as a peak of integrated weight `c/2` at +E (and its
//! mirror at −E).

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eigensolve::SpectrumTable;
use crate::error::{Error, Result};
use crate::evolve::{transition_weights, GapWeight, TimeSeries};
use crate::statespace::C64;

/// Default peak floor, as a fraction of the largest amplitude.
pub const PROMINENCE_FLOOR: f64 = 0.02;
/// Default minimum transition weight for a gap to count as excited.
pub const WEIGHT_FLOOR: f64 = 1e-3;
/// Half-width, in grid bins, of the region integrated for a peak weight.
pub const PEAK_BINS: usize = 3;
const MIN_SAMPLES: usize = 16;

/// Time window applied before the transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Window {
    /// Falling half of a Hann window: w(t) = (1 + cos(πt/T))/2.
    #[default]
    Hann,
    /// w(t) = exp(−t²/2σ²).
    Gaussian { sigma_t: f64 },
    None,
}

impl Window {
    fn weight(&self, t: f64, t_max: f64) -> f64 {
        match *self {
            Window::Hann => 0.5 * (1.0 + (PI * t / t_max).cos()),
            Window::Gaussian { sigma_t } => (-0.5 * (t / sigma_t).powi(2)).exp(),
            Window::None => 1.0,
        }
    }

    /// Duration that sets the resolution 2π/T_eff.
    fn effective_length(&self, t_max: f64) -> f64 {
        match *self {
            Window::Gaussian { sigma_t } => t_max.min(2.0 * sigma_t),
            _ => t_max,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Window::Gaussian { sigma_t } = *self {
            if !(sigma_t > 0.0 && sigma_t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "gaussian window needs sigma_t > 0, got {sigma_t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub energies: Vec<f64>,
    /// |M(E)| on `energies`.
    pub amplitude: Vec<f64>,
    pub window: Window,
    /// ΔE = 2π/T_eff; peaks closer than this are not resolved.
    pub resolution: f64,
    /// Transform of a unit-weight cosine at zero detuning, used to turn
    /// integrated amplitude into weight.
    #[serde(skip)]
    kernel: Kernel,
}

/// Window samples kept for computing the response of a reference cosine.
#[derive(Clone, Debug, Default, PartialEq)]
struct Kernel {
    dt: f64,
    w: Vec<f64>,
}

impl Kernel {
    /// |transform| of a unit-weight cosine at detuning δ, positive side only.
    fn response(&self, delta: f64) -> f64 {
        let n = self.w.len();
        let mut acc = C64::new(0.0, 0.0);
        for (k, &w) in self.w.iter().enumerate() {
            let t = k as f64 * self.dt;
            let end = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            acc += C64::from_polar(end * w, -delta * t);
        }
        0.5 * acc.norm() * self.dt / (2.0 * PI)
    }
}

impl SpectrumReport {
    /// `E,amplitude` CSV with the window and resolution as comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let window = serde_json::to_string(&self.window).expect("window serializes");
        let _ = writeln!(out, "# window: {window}");
        let _ = writeln!(out, "# resolution: {}", self.resolution);
        out.push_str("E,amplitude\n");
        for (e, a) in self.energies.iter().zip(&self.amplitude) {
            let _ = writeln!(out, "{e},{a}");
        }
        out
    }
}

/// Uniform grid of `count` energies spanning [lo, hi].
pub fn energy_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "energy grid needs hi > lo and >= 2 points, got [{lo}, {hi}] x {count}"
        )));
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

pub fn fourier_transform(series: &TimeSeries, e_grid: &[f64], window: Window) -> Result<SpectrumReport> {
    window.validate()?;
    let n = series.values.len();
    if n < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "series has {n} samples, at least {MIN_SAMPLES} needed"
        )));
    }
    if e_grid.is_empty() || e_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("energy grid must be strictly increasing".into()));
    }
    let dt = series.grid.dt;
    let nyquist = PI / dt;
    if let Some(&e) = e_grid.iter().find(|e| e.abs() > nyquist) {
        return Err(Error::InvalidArgument(format!(
            "energy {e} beyond the alias limit ±{nyquist}"
        )));
    }
    let t_last = (n - 1) as f64 * dt;
    let w: Vec<f64> = (0..n).map(|k| window.weight(k as f64 * dt, t_last)).collect();
    let samples: Vec<f64> = series
        .values
        .iter()
        .zip(&w)
        .enumerate()
        .map(|(k, (m, w))| {
            let end = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            end * m * w
        })
        .collect();
    let amplitude = e_grid
        .iter()
        .map(|&e| {
            // e^{−iE·k·dt} by recurrence, reseeded to bound rounding drift.
            let step = C64::from_polar(1.0, -e * dt);
            let mut phase = C64::new(1.0, 0.0);
            let mut acc = C64::new(0.0, 0.0);
            for (k, &s) in samples.iter().enumerate() {
                if k % 256 == 0 {
                    phase = C64::from_polar(1.0, -e * k as f64 * dt);
                }
                acc += phase * s;
                phase *= step;
            }
            acc.norm() * dt / (2.0 * PI)
        })
        .collect();
    Ok(SpectrumReport {
        energies: e_grid.to_vec(),
        amplitude,
        window,
        resolution: 2.0 * PI / window.effective_length(t_last),
        kernel: Kernel { dt, w },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub energy: f64,
    /// Integrated weight; a unit-weight cosine gives 1/2.
    pub weight: f64,
}

/// Height of `a[i]` above the higher of the two minima separating it from
/// taller points (or the ends of the grid).
fn prominence(a: &[f64], i: usize) -> f64 {
    let mut left = a[i];
    for &v in a[..i].iter().rev() {
        if v > a[i] {
            break;
        }
        left = left.min(v);
    }
    let mut right = a[i];
    for &v in &a[i + 1..] {
        if v > a[i] {
            break;
        }
        right = right.min(v);
    }
    a[i] - left.max(right)
}

/// Local maxima whose prominence reaches `prominence_floor · max`. Ripple
/// on the slowly decaying background of a one-sided transform stays below
/// the floor even where the background itself does not.
pub fn extract_peaks(report: &SpectrumReport, prominence_floor: f64) -> Vec<SpectralPeak> {
    let a = &report.amplitude;
    let e = &report.energies;
    let n = a.len();
    let top = a.iter().cloned().fold(0.0, f64::max);
    if n < 3 || top <= 0.0 {
        return Vec::new();
    }
    let floor = prominence_floor * top;
    let mut peaks = Vec::new();
    for i in 1..n - 1 {
        if !(a[i] > a[i - 1] && a[i] >= a[i + 1]) || prominence(a, i) < floor {
            continue;
        }
        // Vertex of the parabola through the three points.
        let denom = a[i - 1] - 2.0 * a[i] + a[i + 1];
        let shift = if denom < 0.0 {
            (0.5 * (a[i - 1] - a[i + 1]) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let step = e[i + 1] - e[i];
        let energy = e[i] + shift * step;
        let lo = i.saturating_sub(PEAK_BINS);
        let hi = (i + PEAK_BINS).min(n - 1);
        let measured = trapezoid(&e[lo..=hi], &a[lo..=hi]);
        let reference: Vec<f64> = e[lo..=hi]
            .iter()
            .map(|&x| report.kernel.response(x - energy))
            .collect();
        let unit = trapezoid(&e[lo..=hi], &reference);
        if unit > 0.0 && measured > 0.0 {
            peaks.push(SpectralPeak {
                energy,
                weight: 0.5 * measured / unit,
            });
        }
    }
    peaks
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakMatch {
    pub energy: f64,
    pub weight: f64,
    /// Index of the nearest eligible level in the spectrum table.
    pub gap_index: Option<usize>,
    pub gap: Option<f64>,
    /// |energy − gap|.
    pub error: Option<f64>,
    /// True when the nearest eligible gap lies within the resolution.
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub resolution: f64,
    pub weight_floor: f64,
    pub peaks: Vec<PeakMatch>,
    /// Indices into `peaks` with no eligible gap within the resolution.
    pub orphan_peaks: Vec<usize>,
    /// Eligible gaps with no peak within the resolution.
    pub unmatched_gaps: Vec<GapWeight>,
    pub matched_count: usize,
}

impl MatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("match report serializes")
    }
}

/// Pairs each peak with the nearest gap E_n − E_0 whose transition weight
/// from the ground state at `site` is at least `weight_floor`.
pub fn match_gaps(
    peaks: &[SpectralPeak],
    spectrum: &SpectrumTable,
    site: usize,
    resolution: f64,
    weight_floor: f64,
) -> Result<MatchReport> {
    let eligible: Vec<GapWeight> = transition_weights(spectrum, site)?
        .into_iter()
        .filter(|g| g.weight >= weight_floor)
        .collect();
    Ok(match_against(peaks, &eligible, resolution, weight_floor))
}

/// [`match_gaps`] against an explicit list of already filtered gaps.
pub fn match_against(
    peaks: &[SpectralPeak],
    gaps: &[GapWeight],
    resolution: f64,
    weight_floor: f64,
) -> MatchReport {
    let mut out = Vec::with_capacity(peaks.len());
    let mut orphans = Vec::new();
    for (i, p) in peaks.iter().enumerate() {
        let nearest = gaps
            .iter()
            .min_by(|a, b| (a.gap - p.energy).abs().total_cmp(&(b.gap - p.energy).abs()));
        let matched = nearest.is_some_and(|g| (g.gap - p.energy).abs() <= resolution);
        if !matched {
            orphans.push(i);
        }
        out.push(PeakMatch {
            energy: p.energy,
            weight: p.weight,
            gap_index: nearest.map(|g| g.index),
            gap: nearest.map(|g| g.gap),
            error: nearest.map(|g| (g.gap - p.energy).abs()),
            matched,
        });
    }
    let unmatched_gaps = gaps
        .iter()
        .filter(|g| !peaks.iter().any(|p| (g.gap - p.energy).abs() <= resolution))
        .copied()
        .collect();
    MatchReport {
        resolution,
        weight_floor,
        matched_count: out.iter().filter(|m| m.matched).count(),
        peaks: out,
        orphan_peaks: orphans,
        unmatched_gaps,
    }
}
