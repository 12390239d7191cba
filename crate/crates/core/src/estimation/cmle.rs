//! Conditional maximum likelihood.
//!
//! Every estimator here conditions on a class of paths within which the
//! fixed effects cancel, leaving a conditional logit: the observed member
//! of a class has probability `exp(theta' f_obs) / sum_j exp(theta' f_j)`
//! where `f_j` collects the parameter-linear part of `sum_t y_t pi_t`.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{EstimateReport, Sample};
use crate::differencing::WeightVector;
use crate::error::{invalid, Error, Result};
use crate::model::{path_from_index, path_index, CovariatePath, IndexFamily, ModelSpec, OutcomePath};
use crate::par;
use crate::sufficiency::{canonicalize_design, network_cond_full, network_cond_star};

/// Largest `T` for which conditioning classes are enumerated.
pub const MAX_CLASS_T: usize = 16;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 200;

/// One conditioning event: feature rows of the class members and the
/// position of the observed one.
#[derive(Debug, Clone)]
struct Event {
    feats: Vec<f64>,
    members: usize,
    obs: usize,
}

/// Units with identical events are merged; `w` and `w2` carry the sums of
/// weights and squared weights.
struct Cell {
    events: Vec<Event>,
    w: f64,
    w2: f64,
}

struct Problem {
    k: usize,
    cells: Vec<Cell>,
    total_weight: f64,
    n_units: usize,
    n_informative: usize,
}

impl Problem {
    fn build(k: usize, units: Vec<(Vec<Event>, f64)>) -> Self {
        let n_units = units.len();
        let total_weight = units.iter().map(|u| u.1).sum();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut cells: Vec<Cell> = Vec::new();
        let mut n_informative = 0;
        for (events, w) in units {
            if events.is_empty() {
                continue;
            }
            n_informative += 1;
            let key: Vec<u64> = events
                .iter()
                .flat_map(|e| std::iter::once(e.obs as u64).chain(e.feats.iter().map(|v| (v + 0.0).to_bits())))
                .collect();
            match index.get(&key) {
                Some(&c) => {
                    cells[c].w += w;
                    cells[c].w2 += w * w;
                }
                None => {
                    index.insert(key, cells.len());
                    cells.push(Cell { events, w, w2: w * w });
                }
            }
        }
        Self { k, cells, total_weight, n_units, n_informative }
    }

    /// Parameters whose feature varies within at least one class.
    fn identified(&self) -> Vec<bool> {
        (0..self.k)
            .map(|j| {
                self.cells.iter().flat_map(|c| &c.events).any(|e| {
                    let first = e.feats[j];
                    (1..e.members).any(|m| e.feats[m * self.k + j] != first)
                })
            })
            .collect()
    }

    /// Sums of log likelihood, score, Hessian and score outer products.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let k = self.k;
        let dim = 1 + k + 2 * k * k;
        let acc = par::chunked_sum(self.cells.len(), dim, |c, out| {
            let cell = &self.cells[c];
            let mut g = vec![0.0; k];
            for e in &cell.events {
                let z: Vec<f64> = (0..e.members)
                    .map(|m| e.feats[m * k..(m + 1) * k].iter().zip(theta).map(|(f, t)| f * t).sum())
                    .collect();
                let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let p: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
                let s: f64 = p.iter().sum();
                out[0] += cell.w * (z[e.obs] - top - s.ln());
                let mut mean = vec![0.0; k];
                for m in 0..e.members {
                    for j in 0..k {
                        mean[j] += p[m] / s * e.feats[m * k + j];
                    }
                }
                for j in 0..k {
                    g[j] += e.feats[e.obs * k + j] - mean[j];
                }
                for m in 0..e.members {
                    let pm = p[m] / s;
                    for a in 0..k {
                        let da = e.feats[m * k + a] - mean[a];
                        for b in 0..k {
                            out[1 + k + a * k + b] -= cell.w * pm * da * (e.feats[m * k + b] - mean[b]);
                        }
                    }
                }
            }
            for a in 0..k {
                out[1 + a] += cell.w * g[a];
                for b in 0..k {
                    out[1 + k + k * k + a * k + b] += cell.w2 * g[a] * g[b];
                }
            }
        });
        let hess = DMatrix::from_row_slice(k, k, &acc[1 + k..1 + k + k * k]);
        let meat = DMatrix::from_row_slice(k, k, &acc[1 + k + k * k..]);
        (acc[0], acc[1..1 + k].to_vec(), hess, meat)
    }
}

fn sub(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Damped Newton ascent on the free (identified) coordinates.
fn maximise(problem: &Problem, init: &[f64], method: &str, layout: Vec<String>) -> Result<EstimateReport> {
    if problem.n_informative == 0 {
        return Err(Error::NoInformation("every conditioning class is a singleton".into()));
    }
    let identified = problem.identified();
    let free: Vec<usize> = (0..problem.k).filter(|&j| identified[j]).collect();
    if free.is_empty() {
        return Err(Error::NoInformation("no parameter varies within any conditioning class".into()));
    }
    let scale = problem.total_weight;
    let mut theta = init.to_vec();
    let (mut ll, mut g, mut h, mut meat) = problem.eval(&theta);
    let mut flags = Vec::new();
    let mut iterations = 0;
    let grad_norm = |g: &[f64]| free.iter().map(|&j| (g[j] / scale).powi(2)).sum::<f64>().sqrt();
    while grad_norm(&g) >= GRAD_TOL && iterations < MAX_NEWTON {
        iterations += 1;
        let neg_h = -sub(&h, &free);
        let gf = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&j| g[j]));
        let mut ridge = 0.0;
        let step = loop {
            let m = &neg_h + DMatrix::identity(free.len(), free.len()) * ridge;
            if let Some(ch) = m.cholesky() {
                break ch.solve(&gf);
            }
            ridge = if ridge == 0.0 { 1e-10 * scale.max(1.0) } else { ridge * 10.0 };
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut trial = theta.clone();
            for (a, &j) in free.iter().enumerate() {
                trial[j] += t * step[a];
            }
            let (lt, gt, ht, mt) = problem.eval(&trial);
            if lt.is_finite() && lt >= ll {
                theta = trial;
                (ll, g, h, meat) = (lt, gt, ht, mt);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !ll.is_finite() {
        flags.push("diverged".to_string());
    }
    let gn = grad_norm(&g);
    let converged = gn < GRAD_TOL && ll.is_finite();
    if !converged {
        flags.push("not_converged".into());
    }
    let mut std_errors = vec![None; problem.k];
    if let Some(inv) = (-sub(&h, &free)).try_inverse() {
        let v = &inv * sub(&meat, &free) * &inv;
        for (a, &j) in free.iter().enumerate() {
            let var = v[(a, a)];
            std_errors[j] = (var.is_finite() && var >= 0.0).then(|| var.sqrt());
        }
    } else {
        flags.push("singular_hessian".into());
    }
    for (j, name) in layout.iter().enumerate() {
        if !identified[j] {
            flags.push(format!("{name}_not_identified"));
        }
    }
    Ok(EstimateReport {
        method: method.into(),
        theta_layout: layout,
        theta_hat: theta,
        std_errors,
        identified,
        objective: ll / scale,
        converged,
        iterations,
        gradient_norm: gn,
        tolerance: GRAD_TOL,
        jacobian_rank: None,
        n_units: problem.n_units,
        n_informative: problem.n_informative,
        flags,
    })
}

fn check_init(spec: &ModelSpec, init: &[f64]) -> Result<()> {
    if init.len() != spec.theta_len() {
        return invalid(format!("initial value has {} entries, layout {:?}", init.len(), spec.theta_layout()));
    }
    Ok(())
}

fn check_t(spec: &ModelSpec) -> Result<()> {
    if spec.t() > MAX_CLASS_T {
        return Err(Error::TooLarge {
            what: "conditioning class enumeration".into(),
            estimate: 2f64.powi(spec.t() as i32),
            limit: 2f64.powi(MAX_CLASS_T as i32),
        });
    }
    Ok(())
}

fn wy_key(w_rows: &[Vec<f64>], y: &[u8]) -> Vec<i64> {
    w_rows.iter().map(|r| (r.iter().zip(y).map(|(w, &v)| w * v as f64).sum::<f64>() * 1e9).round() as i64).collect()
}

/// `sum_t y_t x_t`.
fn xsum(y: &[u8], x: &CovariatePath, out: &mut [f64]) {
    for (t, &v) in y.iter().enumerate() {
        if v == 1 {
            out.iter_mut().zip(x.at(t)).for_each(|(o, xv)| *o += xv);
        }
    }
}

/// Static CMLE conditioning on `W y`.
pub fn cmle_static(sample: &Sample, init: &[f64]) -> Result<EstimateReport> {
    let spec = &sample.spec;
    if spec.family() != IndexFamily::Static {
        return invalid("static CMLE needs the static family");
    }
    check_init(spec, init)?;
    check_t(spec)?;
    let t = spec.t();
    let w_rows = spec.w_rows();
    let mut classes: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for idx in 0..1usize << t {
        classes.entry(wy_key(&w_rows, &path_from_index(idx, t))).or_default().push(idx);
    }
    let k = spec.dx();
    let units = par::map_slice(&sample.units, |u| {
        let members = &classes[&wy_key(&w_rows, &u.path.y)];
        if members.len() < 2 {
            return (Vec::new(), u.weight);
        }
        let mut feats = vec![0.0; members.len() * k];
        for (m, &idx) in members.iter().enumerate() {
            xsum(&path_from_index(idx, t), &u.x, &mut feats[m * k..(m + 1) * k]);
        }
        let obs = members.iter().position(|&i| i == path_index(&u.path.y)).unwrap();
        (vec![Event { feats, members: members.len(), obs }], u.weight)
    });
    maximise(&Problem::build(k, units), init, "cmle_static", spec.theta_layout())
}

/// Logistic regression of `Y = y1` against `Y = y2` on `X (y1 - y2)` for
/// every pair with `y1 - y2` equal to one of the weight vectors.
pub fn cmle_pairwise(sample: &Sample, wperps: &[WeightVector], init: &[f64]) -> Result<EstimateReport> {
    let spec = &sample.spec;
    if spec.family() != IndexFamily::Static {
        return invalid("pairwise CMLE needs the static family");
    }
    check_init(spec, init)?;
    if wperps.is_empty() {
        return invalid("no weight vectors supplied");
    }
    let int_w = spec.integer_w();
    for w in wperps {
        if w.len() != spec.t() || w.is_zero() {
            return invalid(format!("weight vector {:?} does not fit T={}", w.0, spec.t()));
        }
        if let Some(iw) = &int_w {
            if w.apply(iw).iter().any(|&v| v != 0) {
                return invalid(format!("weight vector {:?} is not orthogonal to W", w.0));
            }
        }
    }
    let k = spec.dx();
    let units = par::map_slice(&sample.units, |u| {
        let events = wperps
            .iter()
            .filter_map(|w| {
                let hit = |sign: i8| w.0.iter().zip(&u.path.y).all(|(&c, &v)| c == 0 || (c == sign) == (v == 1));
                let obs = if hit(1) {
                    0
                } else if hit(-1) {
                    1
                } else {
                    return None;
                };
                // members y1 and y2 differ only where w is nonzero
                let mut feats = vec![0.0; 2 * k];
                for (t, &c) in w.0.iter().enumerate() {
                    let target = if c > 0 { 0 } else { 1 };
                    if c != 0 {
                        feats[target * k..(target + 1) * k].iter_mut().zip(u.x.at(t)).for_each(|(f, x)| *f += x);
                    }
                }
                Some(Event { feats, members: 2, obs })
            })
            .collect();
        (events, u.weight)
    });
    maximise(&Problem::build(k, units), init, "cmle_pairwise", spec.theta_layout())
}

/// Key of a path under the sufficiency conditions: `W y` and the sorted
/// `(class of w_t, lags read by pi_t, x_t bits)` for `t >= 2`.
type Signature = (Vec<i64>, Vec<(usize, u64, Vec<u64>)>);

fn signature(spec: &ModelSpec, w_rows: &[Vec<f64>], classes: &[usize], y: &[u8], y0: &[u8], x: &CovariatePath) -> Signature {
    let mut keys: Vec<_> = (1..spec.t())
        .map(|s| (classes[s], spec.lag_key(s, y, y0), x.at(s).iter().map(|v| (v + 0.0).to_bits()).collect()))
        .collect();
    keys.sort();
    (wy_key(w_rows, y), keys)
}

/// Parameter-linear features of `sum_t y_t pi_t`: lag products for AR
/// families, `(sum y y_lag, sum y r_lag)` for networks, then `sum y_t x_t`.
fn dynamic_features(spec: &ModelSpec, y: &[u8], y0: &[u8], x: &CovariatePath, out: &mut [f64]) {
    let lead = spec.theta_len() - spec.dx();
    for t in 0..spec.t() {
        if y[t] == 0 {
            continue;
        }
        let key = spec.lag_key(t, y, y0);
        match spec.family() {
            IndexFamily::Ar { p } => {
                for r in 0..p {
                    out[r] += (key >> r & 1) as f64;
                }
            }
            IndexFamily::Network { .. } => {
                out[0] += (key & 1) as f64;
                out[1] += (key >> 1) as f64;
            }
            IndexFamily::Static => {}
        }
        out[lead..].iter_mut().zip(x.at(t)).for_each(|(o, v)| *o += v);
    }
}

fn class_event(spec: &ModelSpec, members: &[Vec<u8>], obs: usize, y0: &[u8], x: &CovariatePath) -> Event {
    let k = spec.theta_len();
    let mut feats = vec![0.0; members.len() * k];
    for (m, y) in members.iter().enumerate() {
        dynamic_features(spec, y, y0, x, &mut feats[m * k..(m + 1) * k]);
    }
    Event { feats, members: members.len(), obs }
}

fn dynamic_problem(sample: &Sample) -> Result<Problem> {
    let spec = &sample.spec;
    match spec.family() {
        IndexFamily::Ar { p } if p >= 1 => {}
        _ => return invalid("dynamic CMLE needs an AR family with p >= 1"),
    }
    check_t(spec)?;
    let t = spec.t();
    let w_rows = spec.w_rows();
    let (binary, _) = canonicalize_design(&w_rows);
    let classes: Vec<usize> = (0..t).map(|s| binary.iter().position(|r| r[s] == 1.0).unwrap()).collect();
    // the outcome space is grouped once per distinct (y0, X)
    let cell_key = |u: &super::Unit| -> (Vec<u8>, Vec<u64>) {
        (u.path.y0.clone(), u.x.as_slice().iter().map(|v| (v + 0.0).to_bits()).collect())
    };
    let mut distinct: HashMap<(Vec<u8>, Vec<u64>), usize> = HashMap::new();
    let mut reps: Vec<usize> = Vec::new();
    for (i, u) in sample.units.iter().enumerate() {
        let next = distinct.len();
        if *distinct.entry(cell_key(u)).or_insert(next) == next {
            reps.push(i);
        }
    }
    let tables: Vec<HashMap<Signature, Vec<usize>>> = par::map_slice(&reps, |&i| {
        let u = &sample.units[i];
        let mut table: HashMap<Signature, Vec<usize>> = HashMap::new();
        for idx in 0..1usize << t {
            let y = path_from_index(idx, t);
            table.entry(signature(spec, &w_rows, &classes, &y, &u.path.y0, &u.x)).or_default().push(idx);
        }
        table
    });
    let units = par::map_slice(&sample.units, |u| {
        let table = &tables[distinct[&cell_key(u)]];
        let members = &table[&signature(spec, &w_rows, &classes, &u.path.y, &u.path.y0, &u.x)];
        if members.len() < 2 {
            return (Vec::new(), u.weight);
        }
        let paths: Vec<Vec<u8>> = members.iter().map(|&i| path_from_index(i, t)).collect();
        let obs = members.iter().position(|&i| i == path_index(&u.path.y)).unwrap();
        (vec![class_event(spec, &paths, obs, &u.path.y0, &u.x)], u.weight)
    });
    Ok(Problem::build(spec.theta_len(), units))
}

/// Dynamic AR(p) CMLE conditioning on the sufficiency classes. Parameters
/// whose feature is constant within every class (all lags but the last
/// for `p >= 2`) stay at their initial value and are flagged.
pub fn cmle_dynamic_ar(sample: &Sample, init: &[f64]) -> Result<EstimateReport> {
    check_init(&sample.spec, init)?;
    maximise(&dynamic_problem(sample)?, init, "cmle_dynamic_ar", sample.spec.theta_layout())
}

/// Three-period network CMLE over the full (or swap-only) conditioning set.
/// Covariates are not supported: the sets are derived for `gamma` and
/// `delta` alone.
pub fn cmle_network(sample: &Sample, init: &[f64], full: bool) -> Result<EstimateReport> {
    let spec = &sample.spec;
    if !matches!(spec.family(), IndexFamily::Network { periods: 3, .. }) {
        return invalid("network CMLE needs a three-period network model");
    }
    if spec.dx() != 0 {
        return invalid("network CMLE is defined without covariates");
    }
    check_init(spec, init)?;
    let sets: Vec<Result<Vec<OutcomePath>>> = par::map_slice(&sample.units, |u| {
        let set = if full { network_cond_full(spec, &u.path)? } else { network_cond_star(spec, &u.path)? };
        Ok(set.members)
    });
    let mut units = Vec::with_capacity(sets.len());
    for (u, set) in sample.units.iter().zip(sets) {
        let set = set?;
        if set.len() < 2 {
            units.push((Vec::new(), u.weight));
            continue;
        }
        let obs = set.iter().position(|m| m.y == u.path.y).unwrap();
        let paths: Vec<Vec<u8>> = set.into_iter().map(|m| m.y).collect();
        units.push((vec![class_event(spec, &paths, obs, &u.path.y0, &u.x)], u.weight));
    }
    let method = if full { "cmle_network_full" } else { "cmle_network_star" };
    maximise(&Problem::build(spec.theta_len(), units), init, method, spec.theta_layout())
}

/// Average conditional log-likelihood of the dynamic CMLE at `theta`.
pub fn dynamic_log_likelihood(sample: &Sample, theta: &[f64]) -> Result<f64> {
    check_init(&sample.spec, theta)?;
    let problem = dynamic_problem(sample)?;
    Ok(problem.eval(theta).0 / problem.total_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::Unit;
    use crate::simulation::{generate, ALaw, DgpConfig, XLaw, Y0Law};

    fn static_sample(w: Vec<Vec<f64>>, n: usize, seed: u64) -> Sample {
        let spec = ModelSpec::new(IndexFamily::Static, w, 1).unwrap();
        generate(&DgpConfig {
            spec,
            theta: vec![1.0],
            a_law: ALaw::Normal { mean: 0.0, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::Fixed { value: vec![] },
            n,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn analytic_score_and_hessian_match_differences() {
        let s = static_sample(vec![vec![1.0; 3]], 300, 1);
        let units: Vec<_> = s
            .units
            .iter()
            .map(|u| {
                let classes: Vec<Vec<u8>> = (0..8).map(|i| path_from_index(i, 3)).collect();
                let members: Vec<Vec<u8>> = classes
                    .into_iter()
                    .filter(|y| y.iter().sum::<u8>() == u.path.y.iter().sum::<u8>())
                    .collect();
                if members.len() < 2 {
                    return (Vec::new(), u.weight);
                }
                let obs = members.iter().position(|y| *y == u.path.y).unwrap();
                (vec![class_event(&s.spec, &members, obs, &[], &u.x)], u.weight)
            })
            .collect();
        let p = Problem::build(1, units);
        let th = [0.7];
        let (_, g, h, _) = p.eval(&th);
        let h_step = 1e-5;
        let f = |v: f64| p.eval(&[v]).0;
        let fd_g = (f(th[0] + h_step) - f(th[0] - h_step)) / (2.0 * h_step);
        assert!((g[0] - fd_g).abs() < 1e-5 * (1.0 + fd_g.abs()), "{} vs {fd_g}", g[0]);
        let g_at = |v: f64| p.eval(&[v]).1[0];
        let fd_h = (g_at(th[0] + h_step) - g_at(th[0] - h_step)) / (2.0 * h_step);
        assert!((h[(0, 0)] - fd_h).abs() < 1e-5 * (1.0 + fd_h.abs()));
        assert!(h[(0, 0)] < 0.0);
    }

    #[test]
    fn log_likelihood_is_concave_along_lines() {
        let s = static_sample(vec![vec![1.0; 4]], 200, 2);
        let r = cmle_static(&s, &[0.0]).unwrap();
        assert!(r.converged);
        let ll = |b: f64| {
            let mut total = 0.0;
            for u in &s.units {
                let k: u8 = u.path.y.iter().sum();
                let members: Vec<Vec<u8>> =
                    (0..16).map(|i| path_from_index(i, 4)).filter(|y| y.iter().sum::<u8>() == k).collect();
                let score = |y: &[u8]| b * y.iter().enumerate().map(|(t, &v)| v as f64 * u.x.at(t)[0]).sum::<f64>();
                let lse = members.iter().map(|y| score(y).exp()).sum::<f64>().ln();
                total += score(&u.path.y) - lse;
            }
            total
        };
        let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.2 * i as f64).collect();
        for w in grid.windows(3) {
            assert!(ll(w[0]) + ll(w[2]) <= 2.0 * ll(w[1]) + 1e-9);
        }
        let b = r.theta_hat[0];
        assert!(ll(b) >= ll(b + 1e-3) && ll(b) >= ll(b - 1e-3));
    }

    #[test]
    fn constant_covariates_carry_no_information() {
        let spec = ModelSpec::new(IndexFamily::Static, vec![vec![1.0; 2]], 1).unwrap();
        let units = (0..50)
            .map(|i| Unit {
                path: OutcomePath::static_path(vec![(i % 2) as u8, 1 - (i % 2) as u8]),
                x: CovariatePath::from_rows(&[vec![0.3], vec![0.3]]).unwrap(),
                weight: 1.0,
            })
            .collect();
        let s = Sample::new(spec, units).unwrap();
        assert!(matches!(cmle_static(&s, &[0.0]), Err(Error::NoInformation(_))));
    }

    #[test]
    fn uninformative_sample_is_reported() {
        let spec = ModelSpec::new(IndexFamily::Static, vec![vec![1.0; 2]], 1).unwrap();
        let units = (0..10)
            .map(|_| Unit {
                path: OutcomePath::static_path(vec![1, 1]),
                x: CovariatePath::from_rows(&[vec![0.1], vec![0.9]]).unwrap(),
                weight: 1.0,
            })
            .collect();
        let s = Sample::new(spec, units).unwrap();
        assert!(matches!(cmle_pairwise(&s, &[WeightVector(vec![1, -1])], &[0.0]), Err(Error::NoInformation(_))));
    }

    #[test]
    fn static_two_period_equals_pairwise() {
        let s = static_sample(vec![vec![1.0; 2]], 1000, 3);
        let a = cmle_static(&s, &[0.0]).unwrap();
        let b = cmle_pairwise(&s, &[WeightVector(vec![1, -1])], &[0.0]).unwrap();
        assert!((a.theta_hat[0] - b.theta_hat[0]).abs() < 1e-8);
        assert!((a.std_errors[0].unwrap() - b.std_errors[0].unwrap()).abs() < 1e-8);
    }

    #[test]
    fn two_way_two_by_two_static_equals_pairwise() {
        // observations (unit, time) unit-major: W has two unit rows and two time rows
        let w = vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ];
        let s = static_sample(w, 3000, 4);
        let a = cmle_static(&s, &[0.0]).unwrap();
        let b = cmle_pairwise(&s, &[WeightVector(vec![1, -1, -1, 1])], &[0.0]).unwrap();
        assert!((a.theta_hat[0] - b.theta_hat[0]).abs() < 1e-8, "{} {}", a.theta_hat[0], b.theta_hat[0]);
    }

    #[test]
    fn non_orthogonal_weight_vector_is_rejected() {
        let s = static_sample(vec![vec![1.0; 3]], 10, 5);
        assert!(cmle_pairwise(&s, &[WeightVector(vec![1, 1, 0])], &[0.0]).is_err());
    }

    #[test]
    fn ar2_first_lag_is_not_identified_by_the_conditional_likelihood() {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 2 }, vec![vec![1.0; 5]], 0).unwrap();
        let s = generate(&DgpConfig {
            spec,
            theta: vec![0.5, -0.3],
            a_law: ALaw::Normal { mean: 0.0, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::BurnIn { periods: 20 },
            n: 2000,
            seed: 6,
        })
        .unwrap();
        let vals: Vec<f64> =
            [-2.0, 0.0, 1.5].iter().map(|&g1| dynamic_log_likelihood(&s, &[g1, -0.3]).unwrap()).collect();
        let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-10, "{vals:?}");
        let r = cmle_dynamic_ar(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(r.identified, vec![false, true]);
        assert!(r.flags.iter().any(|f| f == "gamma1_not_identified"), "{:?}", r.flags);
    }
}
