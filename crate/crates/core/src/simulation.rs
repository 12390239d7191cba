//! Data-generating processes and the Monte Carlo harness.
//!
//! Every unit draws from its own ChaCha stream `(seed, unit)`, so samples
//! are bit-reproducible and independent of the thread count. Replication
//! `r` of a Monte Carlo run uses a seed derived from stream `r` of the
//! master seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::differencing::WeightVector;
use crate::error::{invalid, Error, Result};
use crate::estimation::{
    cmle_dynamic_ar, cmle_network, cmle_pairwise, cmle_static, gmm, EstimateReport, GmmOptions, Instrumented,
    Sample, Unit, Weighting,
};
use crate::model::{logistic, CovariatePath, FixedEffect, IndexFamily, ModelSpec, OutcomePath};
use crate::moments::{Ar2T3Moments, MomentSet, NetworkTransitionMoments, QuarterlyT6Moments};
use crate::par;

/// Distribution of the fixed effect, applied to each component of `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ALaw {
    Normal { mean: f64, sd: f64 },
    /// `A_k = rho * mean_t x_{1t} + N(0, sd^2)`.
    Correlated { rho: f64, sd: f64 },
    /// `low` with probability `1 - p_high`, else `high`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum XLaw {
    Normal { sd: f64 },
    /// `x_t = rho x_{t-1} + N(0, sd^2)`, started from the stationary law.
    Ar { rho: f64, sd: f64 },
    /// One `N(0, sd^2)` draw per unit and covariate, repeated over `t`.
    Constant { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Y0Law {
    Fixed { value: Vec<u8> },
    /// Runs the model's kernel for `periods` pre-sample periods from an
    /// all-zero history, at the unit's `A` and with fresh covariate draws.
    BurnIn { periods: usize },
}

impl Default for Y0Law {
    fn default() -> Self {
        Y0Law::BurnIn { periods: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub a_law: ALaw,
    pub x_law: XLaw,
    #[serde(default)]
    pub y0_law: Y0Law,
    pub n: usize,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.spec.theta_len() {
            return invalid(format!("theta has {} entries, layout {:?}", self.theta.len(), self.spec.theta_layout()));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return invalid("theta must be finite");
        }
        match &self.a_law {
            ALaw::Correlated { rho, sd } if !(-1.0..=1.0).contains(rho) || *sd < 0.0 => {
                return invalid("correlated A law needs rho in [-1, 1] and sd >= 0")
            }
            ALaw::Normal { sd, .. } if *sd < 0.0 => return invalid("sd must be non-negative"),
            ALaw::TwoPoint { p_high, .. } if !(0.0..=1.0).contains(p_high) => {
                return invalid("p_high must lie in [0, 1]")
            }
            _ => {}
        }
        match &self.x_law {
            XLaw::Normal { sd } | XLaw::Constant { sd } if *sd < 0.0 => return invalid("sd must be non-negative"),
            XLaw::Ar { rho, sd } if rho.abs() >= 1.0 || *sd < 0.0 => {
                return invalid("AR covariate law needs |rho| < 1 and sd >= 0")
            }
            _ => {}
        }
        if let Y0Law::Fixed { value } = &self.y0_law {
            if value.len() != self.spec.y0_len() || value.iter().any(|&v| v > 1) {
                return invalid(format!("fixed y0 must be {} binary values", self.spec.y0_len()));
            }
        }
        Ok(())
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated sd")
}

/// Stream `stream` of the ChaCha generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_x(law: &XLaw, dx: usize, periods: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; dx]; periods];
    for k in 0..dx {
        match *law {
            XLaw::Normal { sd } => {
                for row in rows.iter_mut() {
                    row[k] = normal(sd).sample(rng);
                }
            }
            XLaw::Ar { rho, sd } => {
                let mut prev = normal(sd / (1.0 - rho * rho).sqrt()).sample(rng);
                for row in rows.iter_mut() {
                    prev = rho * prev + normal(sd).sample(rng);
                    row[k] = prev;
                }
            }
            XLaw::Constant { sd } => {
                let v = normal(sd).sample(rng);
                rows.iter_mut().for_each(|row| row[k] = v);
            }
        }
    }
    rows
}

fn draw_a(law: &ALaw, dw: usize, x: &[Vec<f64>], rng: &mut ChaCha8Rng) -> FixedEffect {
    let xbar = if x.first().is_some_and(|r| !r.is_empty()) {
        x.iter().map(|r| r[0]).sum::<f64>() / x.len() as f64
    } else {
        0.0
    };
    FixedEffect(
        (0..dw)
            .map(|_| match *law {
                ALaw::Normal { mean, sd } => mean + normal(sd).sample(rng),
                ALaw::Correlated { rho, sd } => rho * xbar + normal(sd).sample(rng),
                ALaw::TwoPoint { low, high, p_high } => {
                    if rng.random::<f64>() < p_high {
                        high
                    } else {
                        low
                    }
                }
            })
            .collect(),
    )
}

/// Outcomes of observations `0..len` given the history in `y0`, one
/// Bernoulli draw per observation.
fn run_kernel(
    spec: &ModelSpec,
    y0: &[u8],
    x: &CovariatePath,
    theta: &[f64],
    effect: &dyn Fn(usize) -> f64,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let mut y = Vec::with_capacity(len);
    for t in 0..len {
        let eta = spec.index_from_key(spec.lag_key(t, &y, y0), x.at(t), theta) + effect(t);
        y.push((rng.random::<f64>() < logistic(eta)) as u8);
    }
    y
}

/// Pre-sample burn-in: the model is run on a stretch of `periods` periods
/// (network: `periods` network periods) whose fixed-effect term is the
/// unit's average `w_t' A` (network: the dyad effect).
fn burn_in(
    cfg: &DgpConfig,
    a: &FixedEffect,
    periods: usize,
    unit_x: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let spec = &cfg.spec;
    let y0_len = spec.y0_len();
    if y0_len == 0 {
        return Vec::new();
    }
    let dx = spec.dx();
    match spec.family() {
        IndexFamily::Ar { p } => {
            let len = periods.max(p);
            let avg = (0..spec.t()).map(|t| spec.effect(t, a)).sum::<f64>() / spec.t() as f64;
            let xs = burn_in_x(cfg, unit_x, len, dx, rng);
            let burn = ModelSpec::new(IndexFamily::Ar { p }, vec![vec![1.0; len]], dx).expect("valid burn-in spec");
            let y = run_kernel(&burn, &vec![0; p], &xs, &cfg.theta, &|_| avg, len, rng);
            y[len - p..].to_vec()
        }
        IndexFamily::Network { n, .. } => {
            let m = y0_len;
            let len = periods.max(1);
            let xs = burn_in_x(cfg, unit_x, len * m, dx, rng);
            let burn = ModelSpec::network(n, len, dx).expect("valid burn-in spec");
            let y = run_kernel(&burn, &vec![0; m], &xs, &cfg.theta, &|t| a.0[t % m], len * m, rng);
            y[(len - 1) * m..].to_vec()
        }
        IndexFamily::Static => Vec::new(),
    }
}

fn burn_in_x(cfg: &DgpConfig, unit_x: &[Vec<f64>], len: usize, dx: usize, rng: &mut ChaCha8Rng) -> CovariatePath {
    let rows = match cfg.x_law {
        XLaw::Constant { .. } => vec![unit_x.first().cloned().unwrap_or_else(|| vec![0.0; dx]); len],
        _ => draw_x(&cfg.x_law, dx, len, rng),
    };
    CovariatePath::from_rows(&rows).unwrap_or_else(|_| CovariatePath::zeros(dx, len))
}

/// One unit from its own stream.
pub fn generate_unit(cfg: &DgpConfig, unit: usize) -> (Unit, FixedEffect) {
    let spec = &cfg.spec;
    let mut rng = stream_rng(cfg.seed, unit as u64);
    let x_rows = draw_x(&cfg.x_law, spec.dx(), spec.t(), &mut rng);
    let a = draw_a(&cfg.a_law, spec.dw(), &x_rows, &mut rng);
    let y0 = match &cfg.y0_law {
        Y0Law::Fixed { value } => value.clone(),
        Y0Law::BurnIn { periods } => burn_in(cfg, &a, *periods, &x_rows, &mut rng),
    };
    let x = CovariatePath::from_rows(&x_rows).unwrap_or_else(|_| CovariatePath::zeros(spec.dx(), spec.t()));
    let y = run_kernel(spec, &y0, &x, &cfg.theta, &|t| spec.effect(t, &a), spec.t(), &mut rng);
    (Unit { path: OutcomePath::new(y, y0), x, weight: 1.0 }, a)
}

pub fn generate(cfg: &DgpConfig) -> Result<Sample> {
    cfg.validate()?;
    let units = par::map_range(cfg.n, |i| generate_unit(cfg, i).0);
    Sample::new(cfg.spec.clone(), units)
}

/// Which estimator a Monte Carlo run applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Returns the truth with unit standard errors.
    Oracle,
    CmleStatic,
    CmlePairwise { wperp: Vec<Vec<i8>> },
    CmleDynamic,
    CmleNetwork { full: bool },
    Gmm {
        moments: MomentChoice,
        weighting: Weighting,
        /// Interact the moments with `(1, y0, X)`.
        #[serde(default)]
        instruments: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentChoice {
    Ar2T3,
    QuarterlyT6,
    NetworkTransition,
}

impl MomentChoice {
    pub fn build(self, spec: &ModelSpec) -> Result<Box<dyn MomentSet>> {
        match (self, spec.family()) {
            (MomentChoice::Ar2T3, IndexFamily::Ar { p: 2 }) if spec.t() == 3 && spec.dx() == 0 => {
                Ok(Box::new(Ar2T3Moments))
            }
            (MomentChoice::QuarterlyT6, IndexFamily::Ar { p: 1 }) if spec.t() == 6 => {
                crate::moments::closed_form_quarterly_t6(
                    spec,
                    &vec![0.0; spec.theta_len()],
                    0,
                    &CovariatePath::zeros(spec.dx(), 6),
                )?;
                Ok(Box::new(QuarterlyT6Moments))
            }
            (MomentChoice::NetworkTransition, IndexFamily::Network { n, periods: 3 }) => {
                Ok(Box::new(NetworkTransitionMoments::new(n)))
            }
            (choice, _) => invalid(format!("moment set {choice:?} does not fit this model")),
        }
    }
}

impl EstimatorSpec {
    pub fn run(&self, sample: &Sample, init: &[f64]) -> Result<EstimateReport> {
        match self {
            EstimatorSpec::Oracle => Ok(EstimateReport {
                method: "oracle".into(),
                theta_layout: sample.spec.theta_layout(),
                theta_hat: init.to_vec(),
                std_errors: vec![Some(1.0); init.len()],
                identified: vec![true; init.len()],
                objective: 0.0,
                converged: true,
                iterations: 0,
                gradient_norm: 0.0,
                tolerance: 0.0,
                jacobian_rank: None,
                n_units: sample.len(),
                n_informative: sample.len(),
                flags: Vec::new(),
            }),
            EstimatorSpec::CmleStatic => cmle_static(sample, init),
            EstimatorSpec::CmlePairwise { wperp } => {
                let ws: Vec<WeightVector> = wperp.iter().map(|w| WeightVector(w.clone())).collect();
                cmle_pairwise(sample, &ws, init)
            }
            EstimatorSpec::CmleDynamic => cmle_dynamic_ar(sample, init),
            EstimatorSpec::CmleNetwork { full } => cmle_network(sample, init, *full),
            EstimatorSpec::Gmm { moments, weighting, instruments } => {
                let set = moments.build(&sample.spec)?;
                let opts = GmmOptions { weighting: *weighting, ..Default::default() };
                if *instruments {
                    gmm(sample, &Instrumented::new(set.as_ref(), &sample.spec), init, opts)
                } else {
                    gmm(sample, set.as_ref(), init, opts)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub ok: bool,
    pub theta_hat: Vec<f64>,
    pub std_errors: Vec<Option<f64>>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub theta_layout: Vec<String>,
    pub truth: Vec<f64>,
    pub replications: usize,
    pub failures: usize,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mean_abs_error: Vec<f64>,
    /// Share of 95% intervals covering the truth, among rows with an SE.
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub rows: Vec<ReplicationRow>,
    pub summary: McSummary,
}

/// Seed of replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    stream_rng(seed, r as u64).next_u64()
}

/// Runs `generate -> estimate` per replication. The estimator starts from
/// the truth for `Oracle` and from zero otherwise.
pub fn monte_carlo(dgp: &DgpConfig, estimator: &EstimatorSpec, replications: usize) -> Result<McResult> {
    if replications == 0 {
        return invalid("replications must be at least 1");
    }
    dgp.validate()?;
    let truth = dgp.theta.clone();
    let rows = par::map_range(replications, |r| {
        let seed = replication_seed(dgp.seed, r);
        let cfg = DgpConfig { seed, ..dgp.clone() };
        let init = match estimator {
            EstimatorSpec::Oracle => truth.clone(),
            _ => vec![0.0; truth.len()],
        };
        let outcome = generate(&cfg).and_then(|s| estimator.run(&s, &init));
        match outcome {
            Ok(rep) => ReplicationRow {
                replication: r,
                seed,
                ok: true,
                theta_hat: rep.theta_hat,
                std_errors: rep.std_errors,
                converged: rep.converged,
                error: None,
            },
            Err(e) => ReplicationRow {
                replication: r,
                seed,
                ok: false,
                theta_hat: Vec::new(),
                std_errors: Vec::new(),
                converged: false,
                error: Some(e.to_string()),
            },
        }
    });
    let summary = summarise(&dgp.spec.theta_layout(), &truth, &rows);
    Ok(McResult { rows, summary })
}

fn summarise(layout: &[String], truth: &[f64], rows: &[ReplicationRow]) -> McSummary {
    let ok: Vec<&ReplicationRow> = rows.iter().filter(|r| r.ok).collect();
    let k = truth.len();
    let count = ok.len().max(1) as f64;
    let mut bias = vec![0.0; k];
    let mut mse = vec![0.0; k];
    let mut mae = vec![0.0; k];
    let mut covered = vec![0usize; k];
    let mut with_se = vec![0usize; k];
    for r in &ok {
        for j in 0..k {
            let e = r.theta_hat[j] - truth[j];
            bias[j] += e / count;
            mse[j] += e * e / count;
            mae[j] += e.abs() / count;
            if let Some(se) = r.std_errors[j] {
                with_se[j] += 1;
                covered[j] += (e.abs() <= 1.959963984540054 * se) as usize;
            }
        }
    }
    if ok.is_empty() {
        bias.fill(f64::NAN);
        mse.fill(f64::NAN);
        mae.fill(f64::NAN);
    }
    McSummary {
        theta_layout: layout.to_vec(),
        truth: truth.to_vec(),
        replications: rows.len(),
        failures: rows.len() - ok.len(),
        bias,
        rmse: mse.iter().map(|v| v.sqrt()).collect(),
        mean_abs_error: mae,
        coverage: (0..k).map(|j| if with_se[j] > 0 { covered[j] as f64 / with_se[j] as f64 } else { f64::NAN }).collect(),
    }
}

/// Convenience: fails with [`Error::NoInformation`] when every replication
/// failed.
pub fn require_success(result: &McResult) -> Result<()> {
    if result.summary.failures == result.summary.replications {
        let first = result.rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::NoInformation(format!("every replication failed: {first}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{all_path_probabilities, path_index};

    fn panel(t: usize, dx: usize) -> ModelSpec {
        ModelSpec::new(IndexFamily::Static, vec![vec![1.0; t]], dx).unwrap()
    }

    #[test]
    fn fair_coin_mean() {
        let cfg = DgpConfig {
            spec: panel(1, 0),
            theta: vec![],
            a_law: ALaw::Normal { mean: 0.0, sd: 0.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::Fixed { value: vec![] },
            n: 100_000,
            seed: 1,
        };
        let s = generate(&cfg).unwrap();
        let mean = s.units.iter().map(|u| u.path.y[0] as f64).sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn persistent_ar1_transition() {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 1 }, vec![vec![1.0; 4]], 0).unwrap();
        let cfg = DgpConfig {
            spec,
            theta: vec![5.0],
            a_law: ALaw::Normal { mean: 0.0, sd: 0.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::Fixed { value: vec![1] },
            n: 30_000,
            seed: 2,
        };
        let s = generate(&cfg).unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for u in &s.units {
            for t in 1..=4isize {
                if u.path.at(t - 1) == 1 {
                    total += 1;
                    hits += u.path.at(t) as usize;
                }
            }
        }
        let target = 5f64.exp() / (1.0 + 5f64.exp());
        assert!((hits as f64 / total as f64 - target).abs() < 0.01);
    }

    #[test]
    fn path_frequencies_match_probabilities() {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 1 }, vec![vec![1.0; 3]], 1).unwrap();
        let theta = vec![0.6, -0.8];
        let x = CovariatePath::from_rows(&[vec![0.3], vec![-1.0], vec![0.5]]).unwrap();
        let a = FixedEffect(vec![0.4]);
        let probs = all_path_probabilities(&spec, &[1], &x, &theta, &a).unwrap();
        let reps = 100_000;
        let mut counts = [0usize; 8];
        let mut rng = stream_rng(11, 0);
        for _ in 0..reps {
            let y = run_kernel(&spec, &[1], &x, &theta, &|t| spec.effect(t, &a), 3, &mut rng);
            counts[path_index(&y)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sd = (reps as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - reps as f64 * p).abs() < 3.0 * sd + 1.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DgpConfig {
            spec: panel(3, 2),
            theta: vec![1.0, -1.0],
            a_law: ALaw::Correlated { rho: 0.5, sd: 1.0 },
            x_law: XLaw::Ar { rho: 0.5, sd: 1.0 },
            y0_law: Y0Law::default(),
            n: 500,
            seed: 42,
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&DgpConfig { seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn oracle_has_no_error() {
        let cfg = DgpConfig {
            spec: panel(2, 1),
            theta: vec![1.0],
            a_law: ALaw::Normal { mean: 0.0, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::Fixed { value: vec![] },
            n: 10,
            seed: 3,
        };
        let r = monte_carlo(&cfg, &EstimatorSpec::Oracle, 5).unwrap();
        assert_eq!(r.summary.bias, vec![0.0]);
        assert_eq!(r.summary.rmse, vec![0.0]);
    }

    #[test]
    fn invalid_rho_is_rejected() {
        let cfg = DgpConfig {
            spec: panel(2, 1),
            theta: vec![1.0],
            a_law: ALaw::Correlated { rho: 1.5, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::Fixed { value: vec![] },
            n: 10,
            seed: 3,
        };
        assert!(generate(&cfg).is_err());
    }
}
