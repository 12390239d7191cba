//! Randomised exact checks of the closed-form moments.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{closed_form_ar2_t3, closed_form_network_transition, closed_form_quarterly_t6, verify_moment, MomentFunction};
use crate::error::Result;
use crate::model::{path_from_index, CovariatePath, FixedEffect, IndexFamily, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    Ar2T3,
    QuarterlyT6,
    NetworkTransition,
}

impl std::str::FromStr for ClosedForm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar2_t3" => Ok(Self::Ar2T3),
            "quarterly_t6" => Ok(Self::QuarterlyT6),
            "network_transition" => Ok(Self::NetworkTransition),
            other => crate::error::invalid(format!(
                "unknown moment set {other:?}; expected ar2_t3, quarterly_t6 or network_transition"
            )),
        }
    }
}

/// One moment function checked at one random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub draw: usize,
    pub moment: String,
    /// Initial condition, oldest first, as a bit string.
    pub y0: String,
    /// `|E[m | Y0, X, A]|`, exact.
    pub residual: f64,
}

fn bits(v: &[u8]) -> String {
    v.iter().map(|b| b.to_string()).collect()
}

/// Model the closed form is written for; the network check uses `n = 3`
/// with one covariate.
pub fn closed_form_spec(which: ClosedForm) -> ModelSpec {
    match which {
        ClosedForm::Ar2T3 => ModelSpec::new(IndexFamily::Ar { p: 2 }, vec![vec![1.0; 3]], 0).unwrap(),
        ClosedForm::QuarterlyT6 => {
            let w = (0..4).map(|q| (0..6).map(|s| (s % 4 == q) as u8 as f64).collect()).collect();
            ModelSpec::new(IndexFamily::Ar { p: 1 }, w, 1).unwrap()
        }
        ClosedForm::NetworkTransition => ModelSpec::network(3, 3, 1).unwrap(),
    }
}

/// Draws `(A, X, theta)` and the initial condition at random and records
/// the exact expectation of every closed-form moment at each draw.
///
/// AR(2) cycles through all four initial conditions, quarterly through
/// both, the network check through every reference network.
pub fn verify_closed_form<R: Rng>(which: ClosedForm, draws: usize, rng: &mut R) -> Result<Vec<VerifyRow>> {
    let spec = closed_form_spec(which);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    for draw in 0..draws {
        let theta: Vec<f64> = (0..spec.theta_len()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x = {
            let rows: Vec<Vec<f64>> = (0..spec.t()).map(|_| (0..spec.dx()).map(|_| std.sample(rng)).collect()).collect();
            if spec.dx() == 0 { CovariatePath::zeros(0, spec.t()) } else { CovariatePath::from_rows(&rows)? }
        };
        let a = FixedEffect((0..spec.dw()).map(|_| 2.0 * std.sample(rng)).collect());
        let grid = [a];
        let mut check = |m: MomentFunction, y0: &[u8], name: String| -> Result<()> {
            let residual = verify_moment(&m, &spec, y0, &x, &theta, &grid)?;
            rows.push(VerifyRow { draw, moment: name, y0: bits(y0), residual });
            Ok(())
        };
        match which {
            ClosedForm::Ar2T3 => {
                let y0 = path_from_index(draw % 4, 2);
                check(closed_form_ar2_t3(&y0, &theta, true)?, &y0, "ar2_t3".into())?;
            }
            ClosedForm::QuarterlyT6 => {
                let y0 = (draw % 2) as u8;
                let (m1, m2) = closed_form_quarterly_t6(&spec, &theta, y0, &x)?;
                check(m1, &[y0], "quarterly_t6_m1".into())?;
                check(m2, &[y0], "quarterly_t6_m2".into())?;
            }
            ClosedForm::NetworkTransition => {
                let y0 = path_from_index(rng.random_range(0..8), 3);
                for r in 0..8 {
                    let yref = path_from_index(r, 3);
                    let m = closed_form_network_transition(&spec, &yref, &y0, &x, &theta)?;
                    check(m, &y0, format!("network_m_{}", bits(&yref)))?;
                }
            }
        }
    }
    Ok(rows)
}
