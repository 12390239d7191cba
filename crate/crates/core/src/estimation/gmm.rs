//! GMM on stacked fixed-effect-free moment functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{bfgs, fd_jacobian};
use super::{EstimateReport, Sample};
use crate::error::{invalid, Error, Result};
use crate::moments::MomentSet;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Identity,
    TwoStep,
}

#[derive(Debug, Clone, Copy)]
pub struct GmmOptions {
    pub weighting: Weighting,
    pub max_iter: usize,
    /// Convergence threshold on the gradient norm of the objective.
    pub tol: f64,
    /// Added to the moment covariance before inversion.
    pub ridge: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { weighting: Weighting::TwoStep, max_iter: 500, tol: 1e-10, ridge: 1e-10 }
    }
}

/// Conditional moments interacted with `h(y0, X) = (1, y0, x_1, ..., x_T)`.
///
/// Any function of the conditioning variables times a valid moment is again
/// valid; the interactions rule out roots that solve the unconditional
/// moments only because of how `(y0, X)` are distributed.
pub struct Instrumented<'a> {
    inner: &'a dyn MomentSet,
    y0_len: usize,
    x_len: usize,
}

impl<'a> Instrumented<'a> {
    pub fn new(inner: &'a dyn MomentSet, spec: &crate::model::ModelSpec) -> Self {
        Self { inner, y0_len: spec.y0_len(), x_len: spec.dx() * spec.t() }
    }

    fn n_instruments(&self) -> usize {
        1 + self.y0_len + self.x_len
    }
}

impl MomentSet for Instrumented<'_> {
    fn num_moments(&self) -> usize {
        self.inner.num_moments() * self.n_instruments()
    }

    fn eval(&self, path: &crate::model::OutcomePath, x: &crate::model::CovariatePath, theta: &[f64], out: &mut [f64]) {
        let q = self.inner.num_moments();
        let mut base = vec![0.0; q];
        self.inner.eval(path, x, theta, &mut base);
        let h = std::iter::once(1.0).chain(path.y0.iter().map(|&v| v as f64)).chain(x.as_slice().iter().copied());
        for (l, hv) in h.enumerate() {
            for (j, b) in base.iter().enumerate() {
                out[l * q + j] = hv * b;
            }
        }
    }
}

/// Relative singular-value threshold for the Jacobian rank.
const JACOBIAN_RANK_TOL: f64 = 1e-8;

struct Moments<'a> {
    sample: &'a Sample,
    set: &'a dyn MomentSet,
    total_weight: f64,
}

impl Moments<'_> {
    /// Weighted sample mean of the stacked moments.
    fn mean(&self, theta: &[f64]) -> Vec<f64> {
        let q = self.set.num_moments();
        let units = &self.sample.units;
        let mut s = par::chunked_sum(units.len(), q, |i, out| {
            self.set.eval(&units[i].path, &units[i].x, theta, out);
            out.iter_mut().for_each(|v| *v *= units[i].weight);
        });
        s.iter_mut().for_each(|v| *v /= self.total_weight);
        s
    }

    /// Weighted covariance of the unit moments about `mean`.
    fn covariance(&self, theta: &[f64], mean: &[f64]) -> DMatrix<f64> {
        let q = self.set.num_moments();
        let units = &self.sample.units;
        let acc = par::chunked_sum(units.len(), q * q, |i, out| {
            let mut g = vec![0.0; q];
            self.set.eval(&units[i].path, &units[i].x, theta, &mut g);
            for a in 0..q {
                for b in 0..q {
                    out[a * q + b] = units[i].weight * (g[a] - mean[a]) * (g[b] - mean[b]);
                }
            }
        });
        DMatrix::from_row_slice(q, q, &acc) / self.total_weight
    }
}

fn objective(gbar: &[f64], w: &DMatrix<f64>) -> f64 {
    let g = DVector::from_column_slice(gbar);
    g.dot(&(w * &g))
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    if top <= 1e-300 {
        return 0;
    }
    sv.iter().filter(|&&s| s > JACOBIAN_RANK_TOL * top).count()
}

/// Inverse of `S + ridge I`; flags numerical singularity of `S`.
fn weight_from_covariance(s: &DMatrix<f64>, ridge: f64, flags: &mut Vec<String>) -> Result<DMatrix<f64>> {
    let q = s.nrows();
    let sv = s.singular_values();
    let top = sv.max();
    if top <= 0.0 || sv.min() <= 1e-12 * top {
        flags.push("singular_weighting_ridge_applied".into());
    }
    let scale = top.max(1e-300);
    (s + DMatrix::identity(q, q) * (ridge * scale))
        .try_inverse()
        .ok_or_else(|| Error::Numerical("moment covariance is not invertible even with ridge".into()))
}

/// Minimises `gbar(theta)' W gbar(theta)`.
pub fn gmm(sample: &Sample, set: &dyn MomentSet, init: &[f64], opts: GmmOptions) -> Result<EstimateReport> {
    let spec = &sample.spec;
    if init.len() != spec.theta_len() {
        return invalid(format!("initial value has {} entries, layout {:?}", init.len(), spec.theta_layout()));
    }
    if sample.units.is_empty() {
        return Err(Error::NoInformation("sample is empty".into()));
    }
    let q = set.num_moments();
    let k = init.len();
    let m = Moments { sample, set, total_weight: sample.units.iter().map(|u| u.weight).sum() };
    let mut flags = Vec::new();
    let gbar_fn = |t: &[f64]| m.mean(t);

    let run = |w: &DMatrix<f64>, start: &[f64]| {
        let f = |t: &[f64]| objective(&m.mean(t), w);
        let reset = |t: &[f64]| {
            let g = fd_jacobian(&gbar_fn, t, q);
            let h = g.transpose() * w * &g * 2.0;
            h.try_inverse().filter(|inv| inv.iter().all(|v| v.is_finite()))
        };
        bfgs(&f, &reset, start, opts.tol, opts.max_iter)
    };

    let identity = DMatrix::<f64>::identity(q, q);
    let mut fit = run(&identity, init);
    let mut w = identity;
    let mut iterations = fit.iterations;
    if opts.weighting == Weighting::TwoStep {
        let gbar = m.mean(&fit.x);
        let s = m.covariance(&fit.x, &gbar);
        w = weight_from_covariance(&s, opts.ridge, &mut flags)?;
        let first = fit.x.clone();
        fit = run(&w, &first);
        iterations += fit.iterations;
    }
    if fit.restarts > 0 {
        flags.push(format!("bfgs_restarts_{}", fit.restarts));
    }
    if !fit.converged {
        flags.push("not_converged".into());
    }

    let theta = fit.x.clone();
    let gbar = m.mean(&theta);
    let s = m.covariance(&theta, &gbar);
    let g = fd_jacobian(&gbar_fn, &theta, q);
    let rank = numerical_rank(&g);
    if rank < k {
        flags.push("jacobian_rank_deficient".into());
    }
    let n = m.total_weight;
    let informative = par::map_slice(&sample.units, |u| {
        let mut out = vec![0.0; q];
        set.eval(&u.path, &u.x, &theta, &mut out);
        out.iter().any(|v| *v != 0.0)
    })
    .into_iter()
    .filter(|&b| b)
    .count();
    let mut std_errors = vec![None; k];
    let bread = (g.transpose() * &w * &g).try_inverse();
    if let (true, Some(bread)) = (rank == k, bread) {
        let v = &bread * g.transpose() * &w * &s * &w * &g * &bread / n;
        for (j, se) in std_errors.iter_mut().enumerate() {
            let var = v[(j, j)];
            *se = (var.is_finite() && var >= 0.0).then(|| var.sqrt());
        }
    }
    let method = match opts.weighting {
        Weighting::Identity => "gmm_identity",
        Weighting::TwoStep => "gmm_two_step",
    };
    Ok(EstimateReport {
        method: method.into(),
        theta_layout: spec.theta_layout(),
        theta_hat: theta,
        std_errors,
        identified: vec![rank == k; k],
        objective: fit.value,
        converged: fit.converged,
        iterations,
        gradient_norm: fit.grad_norm,
        tolerance: opts.tol,
        jacobian_rank: Some(rank),
        n_units: sample.units.len(),
        n_informative: informative,
        flags,
    })
}

/// GMM objective at `theta` under identity weighting (profiling helper).
pub fn gmm_objective_identity(sample: &Sample, set: &dyn MomentSet, theta: &[f64]) -> f64 {
    let m = Moments { sample, set, total_weight: sample.units.iter().map(|u| u.weight).sum() };
    m.mean(theta).iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovariatePath, IndexFamily, ModelSpec, OutcomePath};
    use crate::moments::Ar2T3Moments;
    use crate::simulation::{generate, ALaw, DgpConfig, XLaw, Y0Law};

    struct Zero;

    impl MomentSet for Zero {
        fn num_moments(&self) -> usize {
            2
        }

        fn eval(&self, _: &OutcomePath, _: &CovariatePath, _: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    fn ar2_sample(n: usize, seed: u64) -> Sample {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 2 }, vec![vec![1.0; 3]], 0).unwrap();
        generate(&DgpConfig {
            spec,
            theta: vec![0.5, -0.3],
            a_law: ALaw::Normal { mean: 0.0, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::BurnIn { periods: 20 },
            n,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_moments_have_rank_zero() {
        let s = ar2_sample(100, 1);
        let r = gmm(&s, &Zero, &[0.0, 0.0], GmmOptions { weighting: Weighting::Identity, ..Default::default() }).unwrap();
        assert_eq!(r.jacobian_rank, Some(0));
        assert!(r.flags.iter().any(|f| f == "jacobian_rank_deficient"));
        assert!(r.std_errors.iter().all(Option::is_none));
        assert_eq!(r.n_informative, 0);
    }

    #[test]
    fn ar2_objective_depends_on_first_lag() {
        let s = ar2_sample(5000, 2);
        let a = gmm_objective_identity(&s, &Ar2T3Moments, &[0.5, -0.3]);
        let b = gmm_objective_identity(&s, &Ar2T3Moments, &[-1.0, -0.3]);
        assert!(b > 10.0 * a, "{a} {b}");
    }

    #[test]
    fn instruments_multiply_each_moment() {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 2 }, vec![vec![1.0; 3]], 0).unwrap();
        let set = Instrumented::new(&Ar2T3Moments, &spec);
        assert_eq!(set.num_moments(), 4 * 3);
        let path = OutcomePath::new(vec![1, 0, 0], vec![0, 1]);
        let x = CovariatePath::zeros(0, 3);
        let mut base = vec![0.0; 4];
        Ar2T3Moments.eval(&path, &x, &[0.5, -0.3], &mut base);
        let mut out = vec![0.0; 12];
        set.eval(&path, &x, &[0.5, -0.3], &mut out);
        assert_eq!(&out[..4], &base[..]);
        assert!(out[4..8].iter().all(|&v| v == 0.0));
        assert_eq!(&out[8..], &base[..]);
    }

    #[test]
    fn ridge_is_relative_to_scale() {
        let s = DMatrix::from_row_slice(2, 2, &[1e6, 1e6, 1e6, 1e6]);
        let mut flags = Vec::new();
        let w = weight_from_covariance(&s, 1e-10, &mut flags).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert_eq!(flags, vec!["singular_weighting_ridge_applied".to_string()]);
    }
}
