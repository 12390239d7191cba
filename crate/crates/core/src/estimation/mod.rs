//! Conditional maximum likelihood and GMM estimators.

mod cmle;
mod gmm;
pub mod optim;

pub use cmle::{cmle_dynamic_ar, cmle_network, cmle_pairwise, cmle_static, dynamic_log_likelihood, MAX_CLASS_T};
pub use gmm::{gmm, gmm_objective_identity, GmmOptions, Instrumented, Weighting};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{CovariatePath, ModelSpec, OutcomePath};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub path: OutcomePath,
    pub x: CovariatePath,
    #[serde(default = "one")]
    pub weight: f64,
}

/// Units sharing one model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub spec: ModelSpec,
    pub units: Vec<Unit>,
}

impl Sample {
    pub fn new(spec: ModelSpec, units: Vec<Unit>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            spec.check_path(&u.path).map_err(|e| crate::Error::InvalidInput(format!("unit {i}: {e}")))?;
            spec.check_x(&u.x).map_err(|e| crate::Error::InvalidInput(format!("unit {i}: {e}")))?;
            if !(u.weight.is_finite() && u.weight > 0.0) {
                return invalid(format!("unit {i}: weight must be positive"));
            }
            if u.x.as_slice().iter().any(|v| !v.is_finite()) {
                return invalid(format!("unit {i}: covariates must be finite"));
            }
        }
        Ok(Self { spec, units })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub theta_layout: Vec<String>,
    pub theta_hat: Vec<f64>,
    /// Sandwich standard errors; `None` where unavailable.
    pub std_errors: Vec<Option<f64>>,
    pub identified: Vec<bool>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// `converged` implies `gradient_norm < tolerance`.
    pub tolerance: f64,
    pub jacobian_rank: Option<usize>,
    pub n_units: usize,
    /// Units contributing a non-degenerate class or a nonzero moment.
    pub n_informative: usize,
    pub flags: Vec<String>,
}

impl EstimateReport {
    /// `|theta_hat_j - truth_j| / se_j`, `None` where no SE is available.
    pub fn z_scores(&self, truth: &[f64]) -> Vec<Option<f64>> {
        self.theta_hat
            .iter()
            .zip(truth)
            .zip(&self.std_errors)
            .map(|((e, t), se)| se.map(|s| (e - t).abs() / s))
            .collect()
    }
}
