//! Run configuration: one JSON document per run, with command-line flags
//! layered on top.
//!
//! Precedence, highest first: `--out`/`--jobs`/`--seed` flags, the config
//! keys `out`/`jobs`/`seed`, the `MQUENCH_JOBS` environment variable (jobs
//! only), built-in defaults.

use std::path::{Path, PathBuf};

use mquench::eigensolve::{LanczosConfig, START_SEED};
use mquench::evolve::{PropagatorConfig, TimeGrid};
use mquench::hamiltonians::{HamiltonianSpec, KONDO_CRITICAL_J2};
use mquench::kondocloud::{TailStart, DEFAULT_MARGIN};
use mquench::quench::MeasurementSpec;
use mquench::scaling::Tuning;
use mquench::spectro::{Window, PROMINENCE_FLOOR, WEIGHT_FLOOR};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CliError, CliResult};

pub const JOBS_ENV: &str = "MQUENCH_JOBS";
const DEFAULT_OUT: &str = "mquench-out";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<HamiltonianSpec>,
    pub measurement: Option<MeasurementSpec>,
    /// Site whose magnetization is recorded; defaults to the measured one.
    pub observe: Option<usize>,
    pub grid: Option<TimeGrid>,
    #[serde(default)]
    pub propagator: PropagatorConfig,
    pub spectroscopy: Option<SpectroscopyParams>,
    pub collapse: Option<CollapseParams>,
    pub cloud: Option<CloudParams>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopyParams {
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub e_min: f64,
    /// Defaults to the smaller of 2‖H‖ and 0.95 of the alias limit π/dt.
    pub e_max: Option<f64>,
    #[serde(default = "default_e_points")]
    pub e_points: usize,
    #[serde(default = "default_prominence")]
    pub prominence_floor: f64,
    #[serde(default = "default_weight_floor")]
    pub weight_floor: f64,
}

impl Default for SpectroscopyParams {
    fn default() -> Self {
        SpectroscopyParams {
            window: Window::default(),
            e_min: 0.0,
            e_max: None,
            e_points: default_e_points(),
            prominence_floor: default_prominence(),
            weight_floor: default_weight_floor(),
        }
    }
}

fn default_e_points() -> usize {
    4001
}

fn default_prominence() -> f64 {
    PROMINENCE_FLOOR
}

fn default_weight_floor() -> f64 {
    WEIGHT_FLOOR
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseModel {
    Tfic,
    Kondo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    pub model: CollapseModel,
    pub sizes: Vec<usize>,
    /// N/ξ held fixed across the family.
    pub ratio: f64,
    #[serde(default = "default_site")]
    pub site: usize,
    /// Evolution length per member, t_max = t_over_n · N.
    pub t_over_n: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Window in x = t/N; [0, 2] for the TFIC, [0, 1] for Kondo.
    pub window: Option<(f64, f64)>,
    /// Low-pass width in x units.
    pub filter: Option<f64>,
    /// Required for Kondo; defaults to ν = 1 on the ordered side for the TFIC.
    pub tuning: Option<Tuning>,
    /// Every member at this control value instead of a tuned one.
    pub fixed_control: Option<f64>,
    /// TFIC only: scan these exponents for the best collapse.
    pub nu_grid: Option<Vec<f64>>,
    /// Kondo only: where the scaling region is split, default 1/2.
    pub x_break: Option<f64>,
    #[serde(default = "default_j2")]
    pub j2_over_j1: f64,
}

impl CollapseParams {
    pub fn t_over_n(&self) -> f64 {
        self.t_over_n.unwrap_or(match self.model {
            CollapseModel::Tfic => 2.0,
            CollapseModel::Kondo => 1.0,
        })
    }

    pub fn window(&self) -> (f64, f64) {
        self.window.unwrap_or(match self.model {
            CollapseModel::Tfic => (0.0, 2.0),
            CollapseModel::Kondo => (0.0, 1.0),
        })
    }

    pub fn filter(&self) -> f64 {
        self.filter.unwrap_or(match self.model {
            CollapseModel::Tfic => 0.2,
            CollapseModel::Kondo => 0.1,
        })
    }

    pub fn x_break(&self) -> f64 {
        self.x_break.unwrap_or(0.5)
    }

    pub fn tuning(&self) -> Option<Tuning> {
        match (&self.tuning, self.model) {
            (Some(t), _) => Some(t.clone()),
            (None, CollapseModel::Tfic) => Some(Tuning::Tfic {
                nu: 1.0,
                paramagnetic: false,
            }),
            (None, CollapseModel::Kondo) => None,
        }
    }

    pub fn spec(&self, n_sites: usize, control: f64) -> HamiltonianSpec {
        match self.model {
            CollapseModel::Tfic => HamiltonianSpec::Tfic {
                n_sites,
                lambda: control,
            },
            CollapseModel::Kondo => HamiltonianSpec::KondoChain {
                n_sites,
                j_prime: control,
                j2_over_j1: self.j2_over_j1,
            },
        }
    }
}

fn default_site() -> usize {
    1
}

fn default_dt() -> f64 {
    0.05
}

fn default_j2() -> f64 {
    KONDO_CRITICAL_J2
}

fn default_margin() -> usize {
    DEFAULT_MARGIN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudParams {
    pub n_sites: usize,
    pub j_primes: Vec<f64>,
    #[serde(default = "default_margin")]
    pub margin: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_j2")]
    pub j2_over_j1: f64,
    #[serde(default)]
    pub tail: TailStart,
}

/// Flag values that override the config document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Folds flags and the environment into the document.
    pub fn apply(&mut self, overrides: &Overrides, env_jobs: Option<&str>) -> CliResult<()> {
        if overrides.out.is_some() {
            self.out = overrides.out.clone();
        }
        if overrides.seed.is_some() {
            self.seed = overrides.seed;
        }
        if overrides.jobs.is_some() {
            self.jobs = overrides.jobs;
        } else if self.jobs.is_none() {
            if let Some(raw) = env_jobs.filter(|s| !s.trim().is_empty()) {
                let jobs = raw
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{JOBS_ENV}={raw:?} is not a count")))?;
                self.jobs = Some(jobs);
            }
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn lanczos(&self) -> LanczosConfig {
        LanczosConfig {
            seed: self.seed.unwrap_or(START_SEED),
            ..LanczosConfig::default()
        }
    }

    /// Hash of the settings that determine the results: output location
    /// and parallelism are left out.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.jobs = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn model(&self) -> CliResult<&HamiltonianSpec> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `model`".into()))?;
        model.validate().map_err(invalid)?;
        Ok(model)
    }

    pub fn measurement(&self) -> CliResult<MeasurementSpec> {
        let n = self.model()?.n_sites();
        let m = self.measurement.clone().unwrap_or_else(|| MeasurementSpec::x(1));
        m.validate(n).map_err(invalid)?;
        Ok(m)
    }

    pub fn observe(&self) -> CliResult<usize> {
        let n = self.model()?.n_sites();
        let site = self.observe.unwrap_or(self.measurement()?.site);
        if site == 0 || site > n {
            return Err(invalid(mquench::Error::SiteOutOfRange { site, n_sites: n }));
        }
        Ok(site)
    }

    pub fn grid(&self) -> CliResult<TimeGrid> {
        let grid = self.grid.ok_or_else(|| CliError::Config("missing `grid`".into()))?;
        grid.validate().map_err(invalid)?;
        Ok(grid)
    }

    pub fn propagator(&self) -> CliResult<PropagatorConfig> {
        self.propagator.validate().map_err(invalid)?;
        Ok(self.propagator)
    }

    pub fn validate_quench(&self) -> CliResult<()> {
        self.model()?;
        self.measurement()?;
        self.observe()?;
        self.grid()?;
        self.propagator()?;
        Ok(())
    }

    pub fn spectroscopy(&self) -> CliResult<SpectroscopyParams> {
        self.validate_quench()?;
        let p = self.spectroscopy.clone().unwrap_or_default();
        if !(p.e_min >= 0.0 && p.e_min.is_finite()) {
            return Err(CliError::Config(format!("e_min must be >= 0, got {}", p.e_min)));
        }
        if let Some(e_max) = p.e_max {
            if !(e_max > p.e_min && e_max.is_finite()) {
                return Err(CliError::Config(format!("e_max must exceed e_min, got {e_max}")));
            }
        }
        if p.e_points < 3 {
            return Err(CliError::Config("e_points must be at least 3".into()));
        }
        if !(p.prominence_floor >= 0.0 && p.prominence_floor < 1.0) {
            return Err(CliError::Config("prominence_floor must lie in [0, 1)".into()));
        }
        if !(p.weight_floor >= 0.0) {
            return Err(CliError::Config("weight_floor must be >= 0".into()));
        }
        Ok(p)
    }

    pub fn collapse(&self) -> CliResult<CollapseParams> {
        self.propagator()?;
        let p = self
            .collapse
            .clone()
            .ok_or_else(|| CliError::Config("missing `collapse`".into()))?;
        if p.sizes.is_empty() {
            return Err(CliError::Config("collapse needs at least one size".into()));
        }
        let mut sorted = p.sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != p.sizes.len() {
            return Err(CliError::Config("collapse sizes must be distinct".into()));
        }
        if !(p.ratio >= 0.0 && p.ratio.is_finite()) {
            return Err(CliError::Config(format!("ratio must be >= 0, got {}", p.ratio)));
        }
        TimeGrid::new(p.t_over_n(), p.dt).map_err(invalid)?;
        let (lo, hi) = p.window();
        if !(hi > lo && lo >= 0.0) {
            return Err(CliError::Config(format!("bad window [{lo}, {hi}]")));
        }
        if hi > p.t_over_n() {
            return Err(CliError::Config(format!(
                "window end {hi} lies beyond t_over_n = {}",
                p.t_over_n()
            )));
        }
        if !(p.filter() > 0.0) {
            return Err(CliError::Config("filter must be positive".into()));
        }
        if p.fixed_control.is_none() && p.tuning().is_none() {
            return Err(CliError::Config(
                "kondo collapse needs `tuning` (a ξ_K table or law) or `fixed_control`".into(),
            ));
        }
        match (p.model, p.tuning()) {
            (CollapseModel::Tfic, Some(Tuning::KondoTable { .. } | Tuning::KondoLaw { .. }))
            | (CollapseModel::Kondo, Some(Tuning::Tfic { .. })) => {
                return Err(CliError::Config("tuning kind does not match the model".into()));
            }
            _ => {}
        }
        if let Some(nus) = &p.nu_grid {
            if p.model != CollapseModel::Tfic {
                return Err(CliError::Config("nu_grid applies to the tfic model only".into()));
            }
            if p.sizes.len() < 3 || nus.is_empty() || nus.iter().any(|&nu| !(nu > 0.0)) {
                return Err(CliError::Config(
                    "a ν scan needs at least 3 sizes and positive exponents".into(),
                ));
            }
        }
        if p.model == CollapseModel::Kondo {
            let xb = p.x_break();
            if !(xb > lo && xb < hi) {
                return Err(CliError::Config(format!("x_break {xb} outside the window")));
            }
        }
        for &n in &p.sizes {
            let probe = p.spec(n, p.fixed_control.unwrap_or(0.5));
            probe.validate().map_err(invalid)?;
            MeasurementSpec::x(p.site).validate(n).map_err(invalid)?;
        }
        Ok(p)
    }

    pub fn cloud(&self) -> CliResult<CloudParams> {
        self.propagator()?;
        let p = self
            .cloud
            .clone()
            .ok_or_else(|| CliError::Config("missing `cloud`".into()))?;
        if p.j_primes.is_empty() {
            return Err(CliError::Config("cloud needs at least one J′".into()));
        }
        if !(p.dt > 0.0) {
            return Err(CliError::Config("dt must be positive".into()));
        }
        mquench::kondocloud::profile_sites(p.n_sites, p.margin).map_err(invalid)?;
        for &jp in &p.j_primes {
            HamiltonianSpec::KondoChain {
                n_sites: p.n_sites,
                j_prime: jp,
                j2_over_j1: p.j2_over_j1,
            }
            .validate()
            .map_err(invalid)?;
            if !(jp > 0.0) {
                return Err(CliError::Config(format!("J′ must be positive, got {jp}")));
            }
        }
        Ok(p)
    }
}
