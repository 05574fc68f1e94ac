use mquench::eigensolve::{full_spectrum, DENSE_CAP};
use mquench::pipeline::{QuenchContext, QuenchRun};
use mquench::quench::Outcome;
use mquench::spectro::{energy_grid, extract_peaks, fourier_transform, match_gaps, SpectralPeak};
use serde::Serialize;

use super::Status;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::Output;

#[derive(Serialize)]
struct QuenchSummary {
    ground_energy: f64,
    ground_residual: f64,
    probability: f64,
    outcome: Outcome,
    measured_site: usize,
    observed_site: usize,
    evolution_dim: usize,
    max_norm_drift: f64,
}

fn quench(config: &RunConfig, out: &mut Output) -> CliResult<(QuenchRun, f64)> {
    let spec = config.model()?.clone();
    let measurement = config.measurement()?;
    let observe = config.observe()?;
    let grid = config.grid()?;
    let propagator = config.propagator()?;
    let lanczos = config.lanczos();
    let ctx = out.time("ground_state", || {
        QuenchContext::new(&spec, measurement.axis, &lanczos)
    })?;
    let run = out.time("evolution", || ctx.run(&measurement, observe, &grid, &propagator))?;
    out.write("series.csv", run.series.to_csv())?;
    out.write_json(
        "quench.json",
        &QuenchSummary {
            ground_energy: run.ground_energy,
            ground_residual: ctx.ground.residual,
            probability: run.probability,
            outcome: run.outcome,
            measured_site: measurement.site,
            observed_site: observe,
            evolution_dim: run.evolution_dim,
            max_norm_drift: run.series.meta.max_norm_drift,
        },
    )?;
    let bound = ctx.evolution_operator().norm_bound();
    Ok((run, bound))
}

/// Ground state, collapse and evolution of one configured model.
pub fn cmd_quench(config: &RunConfig, out: &mut Output) -> CliResult<Status> {
    config.validate_quench()?;
    quench(config, out)?;
    Ok(Status::Complete)
}

#[derive(Serialize)]
struct PeakFile<'a> {
    resolution: f64,
    total_weight: f64,
    peaks: &'a [SpectralPeak],
    matching: String,
}

/// Quench, Fourier transform and peak extraction; peaks are matched to
/// exact gaps when the full spectrum is within reach.
pub fn cmd_spectroscopy(config: &RunConfig, out: &mut Output) -> CliResult<Status> {
    let params = config.spectroscopy()?;
    let (run, bound) = quench(config, out)?;
    let dt = run.series.grid.dt;
    let e_max = params
        .e_max
        .unwrap_or_else(|| (2.0 * bound).min(0.95 * std::f64::consts::PI / dt));
    let e_grid = energy_grid(params.e_min, e_max, params.e_points)?;
    let report = out.time("transform", || fourier_transform(&run.series, &e_grid, params.window))?;
    out.write("spectrum.csv", report.to_csv())?;
    let peaks = extract_peaks(&report, params.prominence_floor);
    let total_weight = peaks.iter().map(|p| p.weight).sum();

    let spec = config.model()?;
    let site = config.measurement()?.site;
    let dim = 1usize << spec.n_sites();
    let matching = if dim <= DENSE_CAP {
        let table = out.time("full_spectrum", || full_spectrum(&spec.build()?))?;
        let matched = match_gaps(&peaks, &table, site, report.resolution, params.weight_floor)?;
        out.write("match.json", matched.to_json() + "\n")?;
        format!(
            "{} of {} peaks matched within {}",
            matched.matched_count,
            peaks.len(),
            report.resolution
        )
    } else {
        let notice = format!("skipped: dimension {dim} exceeds the dense cap {DENSE_CAP}");
        eprintln!("mquench: gap matching {notice}");
        notice
    };
    out.write_json(
        "peaks.json",
        &PeakFile {
            resolution: report.resolution,
            total_weight,
            peaks: &peaks,
            matching,
        },
    )?;
    Ok(Status::Complete)
}
