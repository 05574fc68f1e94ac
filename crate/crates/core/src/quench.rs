//! Projective single-site measurement: outcome probabilities and collapse.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::{apply_pauli, expectation, Axis, Basis, SectorBasis, StateVector};

/// Inputs whose norm deviates from 1 by more than this are rejected.
pub const NORM_TOL: f64 = 1e-8;
/// Forced outcomes below this probability are refused.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomePolicy {
    #[default]
    ForcedUp,
    ForcedDown,
    Sampled { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Up,
    Down,
}

impl Outcome {
    pub fn eigenvalue(self) -> f64 {
        match self {
            Outcome::Up => 1.0,
            Outcome::Down => -1.0,
        }
    }
}

fn default_axis() -> Axis {
    Axis::X
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    /// 1-based site.
    pub site: usize,
    #[serde(default = "default_axis")]
    pub axis: Axis,
    #[serde(default)]
    pub outcome: OutcomePolicy,
}

impl MeasurementSpec {
    /// Forced-up σ^x measurement, the default quench.
    pub fn x(site: usize) -> Self {
        MeasurementSpec {
            site,
            axis: Axis::X,
            outcome: OutcomePolicy::ForcedUp,
        }
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if self.site == 0 || self.site > n_sites {
            return Err(Error::SiteOutOfRange {
                site: self.site,
                n_sites,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CollapseResult {
    /// Probability of the selected outcome, reported even when forced.
    pub probability: f64,
    pub state: StateVector,
    pub outcome: Outcome,
}

fn check_normalized(psi: &StateVector) -> Result<()> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized { norm });
    }
    Ok(())
}

/// `(p_up, p_down)` for the measurement described by `spec`.
pub fn outcome_probability(psi: &StateVector, spec: &MeasurementSpec) -> Result<(f64, f64)> {
    check_normalized(psi)?;
    spec.validate(psi.n_sites())?;
    let m = expectation(spec.axis, spec.site, psi)?;
    let p_up = (0.5 * (1.0 + m)).clamp(0.0, 1.0);
    Ok((p_up, 1.0 - p_up))
}

/// Projects onto the selected outcome and renormalizes.
///
/// For sector bases the image of σ^x leaves the sector; embed `psi` into a
/// basis that contains it first (see [`post_measurement_sector`]).
pub fn collapse(psi: &StateVector, spec: &MeasurementSpec) -> Result<CollapseResult> {
    let (p_up, p_down) = outcome_probability(psi, spec)?;
    let outcome = match spec.outcome {
        OutcomePolicy::ForcedUp => Outcome::Up,
        OutcomePolicy::ForcedDown => Outcome::Down,
        OutcomePolicy::Sampled { seed } => {
            let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
            if u < p_up {
                Outcome::Up
            } else {
                Outcome::Down
            }
        }
    };
    let probability = match outcome {
        Outcome::Up => p_up,
        Outcome::Down => p_down,
    };
    if probability < PROBABILITY_FLOOR {
        return Err(Error::VanishingProbability { probability });
    }
    // Π^± = (1 ± σ)/2.
    let sigma_psi = apply_pauli(spec.axis, spec.site, psi)?;
    let sign = outcome.eigenvalue();
    let amplitudes = psi
        .amplitudes()
        .iter()
        .zip(sigma_psi.amplitudes())
        .map(|(a, s)| 0.5 * (a + s * sign))
        .collect();
    let mut state = StateVector::new(psi.basis().clone(), amplitudes)?;
    state.normalize();
    Ok(CollapseResult {
        probability,
        state,
        outcome,
    })
}

/// Embeds `psi` into `target` and collapses there.
pub fn collapse_in(
    psi: &StateVector,
    spec: &MeasurementSpec,
    target: &Arc<Basis>,
) -> Result<CollapseResult> {
    collapse(&psi.embed(target)?, spec)
}

/// Sector reached by the collapsed state: σ^x and σ^y change the popcount
/// by ±1, σ^z leaves it alone.
pub fn post_measurement_sector(
    spec: &MeasurementSpec,
    ground_sector: &SectorBasis,
) -> Result<SectorBasis> {
    let n = ground_sector.n_sites() as u32;
    let mut ks = Vec::new();
    for &k in ground_sector.popcounts() {
        match spec.axis {
            Axis::Z => ks.push(k),
            Axis::X | Axis::Y => {
                ks.extend([k.checked_sub(1), Some(k), (k < n).then_some(k + 1)].into_iter().flatten())
            }
        }
    }
    SectorBasis::new(ground_sector.n_sites(), &ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::C64;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn ghz2() -> StateVector {
        let basis = Basis::full(2).unwrap();
        let z = C64::new(0.0, 0.0);
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        StateVector::new(basis, vec![s, z, z, s]).unwrap()
    }

    #[test]
    fn bell_pair_collapse() {
        let r = collapse(&ghz2(), &MeasurementSpec::x(1)).unwrap();
        assert!((r.probability - 0.5).abs() < 1e-15);
        // |→→⟩ has all four amplitudes equal to 1/2.
        for a in r.state.amplitudes() {
            assert!((a - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        assert_eq!(r.outcome, Outcome::Up);
    }

    #[test]
    fn eigenstate_collapse_is_idempotent() {
        let basis = Basis::full(2).unwrap();
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let z = C64::new(0.0, 0.0);
        // |→⟩ on site 1 ⊗ |↓⟩ on site 2.
        let psi = StateVector::new(basis, vec![z, z, s, s]).unwrap();
        assert_eq!(outcome_probability(&psi, &MeasurementSpec::x(1)).unwrap(), (1.0, 0.0));
        let r = collapse(&psi, &MeasurementSpec::x(1)).unwrap();
        assert!((r.probability - 1.0).abs() < 1e-15);
        assert!(r.state.distance(&psi).unwrap() < 1e-15);

        let down = MeasurementSpec {
            outcome: OutcomePolicy::ForcedDown,
            ..MeasurementSpec::x(1)
        };
        assert!(matches!(
            collapse(&psi, &down),
            Err(Error::VanishingProbability { .. })
        ));
    }

    #[test]
    fn rejects_unnormalized_input() {
        let mut psi = ghz2();
        psi.amplitudes_mut()[0] *= 2.0;
        assert!(matches!(
            outcome_probability(&psi, &MeasurementSpec::x(1)),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn sampled_outcome_is_reproducible() {
        let spec = MeasurementSpec {
            outcome: OutcomePolicy::Sampled { seed: 11 },
            ..MeasurementSpec::x(2)
        };
        let a = collapse(&ghz2(), &spec).unwrap();
        let b = collapse(&ghz2(), &spec).unwrap();
        assert_eq!(a.outcome, b.outcome);
        assert!(a.state.distance(&b.state).unwrap() == 0.0);
        let m = expectation(Axis::X, 2, &a.state).unwrap();
        assert!((m - a.outcome.eigenvalue()).abs() < 1e-12);
    }

    #[test]
    fn union_sector_sizes() {
        let ground = SectorBasis::new(4, &[2]).unwrap();
        let union = post_measurement_sector(&MeasurementSpec::x(1), &ground).unwrap();
        assert_eq!(union.popcounts(), &[1, 2, 3]);
        assert_eq!(union.len(), 14);
        let ground = SectorBasis::new(12, &[6]).unwrap();
        let union = post_measurement_sector(&MeasurementSpec::x(1), &ground).unwrap();
        assert_eq!(union.len(), 792 + 924 + 792);
        let z = MeasurementSpec {
            axis: Axis::Z,
            ..MeasurementSpec::x(1)
        };
        assert_eq!(post_measurement_sector(&z, &ground).unwrap().len(), 924);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: MeasurementSpec = serde_json::from_str(r#"{"site": 3}"#).unwrap();
        assert_eq!(spec, MeasurementSpec::x(3));
        let sampled: MeasurementSpec =
            serde_json::from_str(r#"{"site": 1, "axis": "z", "outcome": {"sampled": {"seed": 4}}}"#)
                .unwrap();
        assert_eq!(sampled.outcome, OutcomePolicy::Sampled { seed: 4 });
        assert!(serde_json::from_str::<MeasurementSpec>(r#"{"site": 1, "extra": 0}"#).is_err());
    }
}
