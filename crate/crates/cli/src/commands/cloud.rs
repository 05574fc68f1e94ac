use mquench::kondocloud::{
    cloud_profile_against, fit_kondo_law, fit_screening_length, profile_sites, CloudOptions,
    CloudProfile, KondoLawFit, ReferenceTraces, ScreeningFit,
};
use serde::Serialize;

use super::{tag, Status};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::Output;

#[derive(Serialize)]
struct FitEntry {
    j_prime: f64,
    #[serde(flatten)]
    fit: ScreeningFit,
}

#[derive(Serialize)]
struct Failure {
    j_prime: Option<f64>,
    message: String,
}

#[derive(Serialize)]
struct FitFile {
    n_sites: usize,
    tail: mquench::kondocloud::TailStart,
    fits: Vec<FitEntry>,
    /// (J′, ξ_K) pairs, ready to use as a collapse tuning table.
    xi_table: Vec<(f64, f64)>,
    /// J′ values left out of the fits; J′ = 1 has an identically zero profile.
    excluded: Vec<f64>,
    failures: Vec<Failure>,
    law: Option<KondoLawFit>,
}

/// One Δm̄_j profile per J′, a screening length per profile and the
/// exponential law through them.
pub fn cmd_cloud(config: &RunConfig, out: &mut Output) -> CliResult<Status> {
    let p = config.cloud()?;
    let options = CloudOptions {
        dt: p.dt,
        margin: p.margin,
        propagator: config.propagator()?,
        j2_over_j1: p.j2_over_j1,
    };
    let lanczos = config.lanczos();
    let sites = profile_sites(p.n_sites, p.margin)?;
    let t_max = p
        .j_primes
        .iter()
        .filter(|&&jp| jp != 1.0)
        .map(|jp| 1.0 / jp)
        .fold(0.0, f64::max);
    let reference = if t_max > 0.0 {
        Some(out.time("reference", || {
            ReferenceTraces::compute(p.n_sites, &sites, t_max, &options, &lanczos)
        })?)
    } else {
        None
    };

    let mut fits = Vec::new();
    let mut excluded = Vec::new();
    let mut failures = Vec::new();
    let mut combined = String::new();
    for &jp in &p.j_primes {
        let against = if jp == 1.0 { None } else { reference.as_ref() };
        let profile: CloudProfile = match out.time(&format!("profile J'={jp}"), || {
            cloud_profile_against(against, p.n_sites, jp, &options, &lanczos)
        }) {
            Ok(profile) => profile,
            Err(e) => {
                failures.push(Failure {
                    j_prime: Some(jp),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let csv = profile.to_csv();
        if combined.is_empty() {
            combined.push_str(&csv);
        } else {
            combined.push_str(csv.split_once('\n').map_or("", |(_, rows)| rows));
        }
        out.write(&format!("profiles/J{}.csv", tag(jp)), csv)?;
        for (j, reason) in &profile.failures {
            failures.push(Failure {
                j_prime: Some(jp),
                message: format!("site {j}: {reason}"),
            });
        }
        if jp == 1.0 {
            excluded.push(jp);
            continue;
        }
        match fit_screening_length(&profile, p.tail) {
            Ok(fit) => fits.push(FitEntry { j_prime: jp, fit }),
            Err(e) => failures.push(Failure {
                j_prime: Some(jp),
                message: e.to_string(),
            }),
        }
    }
    if !combined.is_empty() {
        out.write("profiles.csv", combined)?;
    }

    let xi_table: Vec<(f64, f64)> = fits.iter().map(|f| (f.j_prime, f.fit.xi)).collect();
    let law = if xi_table.len() >= 3 {
        match fit_kondo_law(&xi_table) {
            Ok(law) => Some(law),
            Err(e) => {
                failures.push(Failure {
                    j_prime: None,
                    message: format!("law fit: {e}"),
                });
                None
            }
        }
    } else {
        None
    };
    let wanted = p.j_primes.iter().filter(|&&jp| jp != 1.0).count();
    let status = if !failures.is_empty() {
        Status::Partial(format!("{} J′ value(s) or site(s) failed", failures.len()))
    } else if law.is_none() && wanted >= 3 {
        Status::Partial("fewer than 3 screening fits for the law".into())
    } else {
        Status::Complete
    };
    out.write_json(
        "fits.json",
        &FitFile {
            n_sites: p.n_sites,
            tail: p.tail,
            fits,
            xi_table,
            excluded,
            failures,
            law,
        },
    )?;
    Ok(status)
}
