use std::collections::BTreeMap;
use std::sync::Mutex;

use mquench::evolve::{TimeGrid, TimeSeries};
use mquench::pipeline::run_quench;
use mquench::quench::MeasurementSpec;
use mquench::scaling::{
    collapse_distance, estimate_nu, kondo_scaling_window, tune_control_for_ratio, CollapseFamily,
    CollapseMember, NuScan, ScalingWindow,
};
use rayon::prelude::*;
use serde::Serialize;

use super::{tag, Status};
use crate::config::{CollapseModel, CollapseParams, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Serialize)]
struct MemberInfo {
    n_sites: usize,
    control: f64,
    xi: Option<f64>,
}

#[derive(Serialize)]
struct ScalingReport {
    x_break: f64,
    pre_metric: f64,
    post_metric: f64,
    ratio: f64,
}

impl From<ScalingWindow> for ScalingReport {
    fn from(w: ScalingWindow) -> Self {
        ScalingReport {
            x_break: w.x_break,
            pre_metric: w.pre_metric,
            post_metric: w.post_metric,
            ratio: w.ratio(),
        }
    }
}

#[derive(Serialize)]
struct MetricFile {
    model: CollapseModel,
    target_ratio: f64,
    members: Vec<MemberInfo>,
    window: (f64, f64),
    filter: f64,
    metric_raw: f64,
    metric_filtered: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling_window: Option<ScalingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling_window_raw: Option<ScalingReport>,
    #[serde(flatten)]
    nu_scan: Option<NuScan>,
}

/// Control value and tuning length of every member, fixed before any
/// evolution starts so that unreachable targets are reported as config
/// errors.
fn member_controls(p: &CollapseParams) -> CliResult<Vec<(usize, f64, Option<f64>)>> {
    p.sizes
        .iter()
        .map(|&n| match p.fixed_control {
            Some(c) => Ok((n, c, None)),
            None => {
                let tuning = p.tuning().expect("validated tuning");
                let c = tune_control_for_ratio(&tuning, n, p.ratio)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let xi = (p.ratio > 0.0).then(|| n as f64 / p.ratio);
                p.spec(n, c).validate().map_err(|e| CliError::Config(e.to_string()))?;
                Ok((n, c, xi))
            }
        })
        .collect()
}

/// Runs a family of quenches at fixed N/ξ, measures how well the curves
/// collapse against t/N and optionally scans the exponent ν.
pub fn cmd_collapse(config: &RunConfig, out: &mut Output) -> CliResult<Status> {
    let p = config.collapse()?;
    let controls = member_controls(&p)?;
    let propagator = config.propagator()?;
    let lanczos = config.lanczos();
    let measurement = MeasurementSpec::x(p.site);

    // Members are keyed by (N, control bits) so the ν scan reuses them.
    let cache: Mutex<BTreeMap<(usize, u64), TimeSeries>> = Mutex::new(BTreeMap::new());
    let runner = |n: usize, control: f64| -> mquench::Result<TimeSeries> {
        let key = (n, control.to_bits());
        if let Some(s) = cache.lock().expect("cache lock").get(&key) {
            return Ok(s.clone());
        }
        let grid = TimeGrid::new(p.t_over_n() * n as f64, p.dt)?;
        let series = run_quench(&p.spec(n, control), &measurement, &grid, &propagator, &lanczos)?.series;
        cache.lock().expect("cache lock").insert(key, series.clone());
        Ok(series)
    };

    let results: Vec<_> = out.time("family", || {
        controls
            .par_iter()
            .map(|&(n, c, xi)| (n, c, xi, runner(n, c)))
            .collect()
    });
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (n, control, xi, r) in results {
        match r {
            Ok(series) => {
                out.write(&format!("members/N{n}_c{}.csv", tag(control)), series.to_csv())?;
                members.push(CollapseMember {
                    series,
                    n_sites: n,
                    control,
                    xi,
                });
            }
            Err(e) => failures.push(format!("N = {n}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Ok(Status::Partial(format!(
            "collapse aborted, {} member(s) failed: {}",
            failures.len(),
            failures.join("; ")
        )));
    }

    let family = CollapseFamily::new(members, p.ratio)?;
    let window = p.window();
    let filter = p.filter();
    out.write("collapse.csv", family.to_csv(None)?)?;
    out.write("collapse_filtered.csv", family.to_csv(Some(filter))?)?;
    let metric_raw = collapse_distance(&family, window, None)?.value;
    let metric_filtered = collapse_distance(&family, window, Some(filter))?.value;
    let (scaling_window, scaling_window_raw) = match p.model {
        CollapseModel::Kondo => (
            Some(kondo_scaling_window(&family, p.x_break(), window.1, Some(filter))?.into()),
            Some(kondo_scaling_window(&family, p.x_break(), window.1, None)?.into()),
        ),
        CollapseModel::Tfic => (None, None),
    };

    let mut status = Status::Complete;
    let nu_scan = match &p.nu_grid {
        Some(grid) => {
            let scan = out.time("nu_scan", || {
                estimate_nu(runner, &p.sizes, p.ratio, grid, window, Some(filter))
            });
            match scan {
                Ok(s) => Some(s),
                Err(e) => {
                    status = Status::Partial(format!("ν scan failed: {e}"));
                    None
                }
            }
        }
        None => None,
    };

    out.write_json(
        "metric.json",
        &MetricFile {
            model: p.model,
            target_ratio: p.ratio,
            members: family
                .members
                .iter()
                .map(|m| MemberInfo {
                    n_sites: m.n_sites,
                    control: m.control,
                    xi: m.xi,
                })
                .collect(),
            window,
            filter,
            metric_raw,
            metric_filtered,
            scaling_window,
            scaling_window_raw,
            nu_scan,
        },
    )?;
    Ok(status)
}
