//! The quench pipeline end to end: ground state, collapse, evolution.
//!
//! Models that conserve total S^z are solved in the S^z = 0 sector and
//! evolved in the union of sectors reached by the measurement, which keeps
//! the 20-site Kondo chain at about half a million amplitudes.

use std::sync::Arc;

use crate::eigensolve::{ground_state_with, LanczosConfig};
use crate::error::{Error, Result};
use crate::evolve::{magnetization_series, PropagatorConfig, TimeGrid, TimeSeries};
use crate::hamiltonians::{HamiltonianSpec, Operator};
use crate::quench::{collapse_in, post_measurement_sector, MeasurementSpec, Outcome};
use crate::statespace::{Axis, Basis, StateVector};

/// Assembled matrices larger than this (in bytes) stay matrix-free.
pub const ASSEMBLY_BUDGET: usize = 1 << 30;

/// The operator used for repeated application: compressed rows when they
/// fit in [`ASSEMBLY_BUDGET`], matrix-free otherwise.
pub fn prepared_operator(spec: &HamiltonianSpec, basis: Arc<Basis>) -> Result<Box<dyn Operator>> {
    let op = spec.build_in(basis)?;
    let entry_bytes = if op.is_real() { 12 } else { 20 };
    if op.nnz_bound().saturating_mul(entry_bytes) <= ASSEMBLY_BUDGET {
        Ok(Box::new(op.assemble()))
    } else {
        Ok(Box::new(op))
    }
}

/// Basis the ground state is sought in.
pub fn ground_basis(spec: &HamiltonianSpec) -> Result<Arc<Basis>> {
    let n = spec.n_sites();
    if spec.conserves_sz() && n.is_multiple_of(2) {
        Basis::sector(n, &[n as u32 / 2])
    } else {
        Basis::full(n)
    }
}

/// Basis the post-measurement state is evolved in.
pub fn evolution_basis(ground: &Arc<Basis>, axis: Axis) -> Result<Arc<Basis>> {
    match &**ground {
        Basis::Full { .. } => Ok(ground.clone()),
        Basis::Sector(s) => {
            let probe = MeasurementSpec {
                axis,
                ..MeasurementSpec::x(1)
            };
            Ok(Arc::new(Basis::Sector(post_measurement_sector(&probe, s)?)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub residual: f64,
    pub state: StateVector,
}

/// Ground state of `spec` together with the evolution operator for
/// measurements along one axis, shared by every measured site.
pub struct QuenchContext {
    pub spec: HamiltonianSpec,
    pub axis: Axis,
    pub ground: GroundState,
    evolution: Box<dyn Operator>,
}

#[derive(Clone, Debug)]
pub struct QuenchRun {
    pub ground_energy: f64,
    pub probability: f64,
    pub outcome: Outcome,
    pub evolution_dim: usize,
    pub series: TimeSeries,
}

impl QuenchContext {
    pub fn new(spec: &HamiltonianSpec, axis: Axis, lanczos: &LanczosConfig) -> Result<Self> {
        spec.validate()?;
        let basis = ground_basis(spec)?;
        let target = evolution_basis(&basis, axis)?;
        let (ground, evolution) = if Arc::ptr_eq(&basis, &target) {
            let op = prepared_operator(spec, basis)?;
            (solve(&*op, lanczos)?, op)
        } else {
            let ground = solve(&*prepared_operator(spec, basis)?, lanczos)?;
            (ground, prepared_operator(spec, target)?)
        };
        Ok(QuenchContext {
            spec: spec.clone(),
            axis,
            ground,
            evolution,
        })
    }

    pub fn evolution_operator(&self) -> &dyn Operator {
        &*self.evolution
    }

    /// Collapses the ground state with `measurement` and records m^x at
    /// `observe` along the evolution.
    pub fn run(
        &self,
        measurement: &MeasurementSpec,
        observe: usize,
        grid: &TimeGrid,
        config: &PropagatorConfig,
    ) -> Result<QuenchRun> {
        if measurement.axis != self.axis {
            return Err(Error::InvalidArgument(format!(
                "context prepared for {:?} measurements, got {:?}",
                self.axis, measurement.axis
            )));
        }
        measurement.validate(self.spec.n_sites())?;
        let collapsed = collapse_in(&self.ground.state, measurement, self.evolution.basis())?;
        let series = magnetization_series(&*self.evolution, &collapsed, observe, grid, config)?;
        Ok(QuenchRun {
            ground_energy: self.ground.energy,
            probability: collapsed.probability,
            outcome: collapsed.outcome,
            evolution_dim: self.evolution.dim(),
            series,
        })
    }
}

fn solve(op: &dyn Operator, lanczos: &LanczosConfig) -> Result<GroundState> {
    let pair = ground_state_with(op, lanczos)?;
    Ok(GroundState {
        energy: pair.value,
        residual: pair.residual,
        state: pair.vector,
    })
}

/// One full quench, observing the measured site.
pub fn run_quench(
    spec: &HamiltonianSpec,
    measurement: &MeasurementSpec,
    grid: &TimeGrid,
    config: &PropagatorConfig,
    lanczos: &LanczosConfig,
) -> Result<QuenchRun> {
    QuenchContext::new(spec, measurement.axis, lanczos)?.run(measurement, measurement.site, grid, config)
}
