//! Monte Carlo estimators and closed-form bounds built on the engine.
//!
//! Every estimator takes a base seed and derives replicate `i`'s stream with
//! [`crate::rng::replicate_seed`], so results do not depend on how many
//! workers ran the batch.

pub mod block;
pub mod coexist;
pub mod compare;
pub mod critical;
pub mod formulas;
pub mod gap;
pub mod runner;
pub mod shape;
pub mod source;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use block::{block_event_prob, BlockCriterionConfig, BlockOutcome};
pub use coexist::{coexistence_run, CoexistenceConfig, CoexistenceOutcome};
pub use compare::{flip_domination, zeta_contact_gap, FlipComparison, ZetaContactGap};
pub use critical::{estimate_lambda_c, survival_probability, CriticalMethod, LambdaCConfig};
pub use formulas::{block_unaffected_prob, fire_gap_probability, spread_success_bound};
pub use gap::{gap_experiment, GapExperimentConfig, GapOutcome};
pub use runner::Runner;
pub use shape::{richardson_duality, shape_measure, ShapeConfig, ShapeData};
pub use source::{source_propagation, SourceGridConfig, SourceOutcome};

/// Two-sided 97.5% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A Monte Carlo result with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub replicates: u64,
    pub ci95: (f64, f64),
    /// Standard error of `value` (bracket half-width for bisection results).
    pub std_error: f64,
    pub method: String,
    pub base_seed: u64,
}

impl Estimate {
    /// Fraction of successes with a Wilson score interval.
    pub fn proportion(successes: u64, trials: u64, method: &str, base_seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::Estimation(format!("{method}: no replicates")));
        }
        let p = successes as f64 / trials as f64;
        Ok(Estimate {
            value: p,
            replicates: trials,
            ci95: stats::wilson(successes, trials, Z95),
            std_error: (p * (1.0 - p) / trials as f64).sqrt(),
            method: method.to_string(),
            base_seed,
        })
    }

    /// Sample mean with a normal-theory interval.
    pub fn mean(values: &[f64], method: &str, base_seed: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Estimation(format!("{method}: no replicates")));
        }
        let m = stats::Moments::from_slice(values);
        let se = m.std_error();
        Ok(Estimate {
            value: m.mean(),
            replicates: values.len() as u64,
            ci95: (m.mean() - Z95 * se, m.mean() + Z95 * se),
            std_error: se,
            method: method.to_string(),
            base_seed,
        })
    }

    /// Midpoint of a bisection bracket.
    pub fn bracket(lo: f64, hi: f64, replicates: u64, method: &str, base_seed: u64) -> Self {
        Estimate {
            value: 0.5 * (lo + hi),
            replicates,
            ci95: (lo, hi),
            std_error: 0.5 * (hi - lo),
            method: method.to_string(),
            base_seed,
        }
    }

    /// Successes implied by a proportion estimate.
    pub fn successes(&self) -> u64 {
        (self.value * self.replicates as f64).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportion_interval_contains_value() {
        for (s, n) in [(0, 10), (10, 10), (3, 7), (500, 1000)] {
            let e = Estimate::proportion(s, n, "t", 1).unwrap();
            assert!(e.ci95.0 <= e.value && e.value <= e.ci95.1, "{e:?}");
            assert!(e.ci95.0 >= 0.0 && e.ci95.1 <= 1.0);
            assert_eq!(e.successes(), s);
        }
    }

    #[test]
    fn empty_estimates_are_errors() {
        assert!(Estimate::proportion(0, 0, "t", 1).is_err());
        assert!(Estimate::mean(&[], "t", 1).is_err());
    }

    #[test]
    fn mean_of_constant_has_zero_width() {
        let e = Estimate::mean(&[2.0; 5], "t", 0).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(e.ci95, (2.0, 2.0));
    }
}
