//! Fixed-effect-free moment functions.
//!
//! With `a_t = exp(w_t' A)` and `b_{t,q} = exp(pi_{t,q})` over the distinct
//! index values at `t`, every path probability factors as
//! `kappa(A) * sum_d c_d(y) exp(d' A)` with `d` ranging over a finite set.
//! Moment functions are the vectors orthogonal to every `c_d`.

mod closed_form;
mod hiprec;
mod verify;

pub use closed_form::*;
pub use verify::*;

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    all_path_probabilities, dyads, path_from_index, CovariatePath, FixedEffect, IndexFamily, ModelSpec,
    OutcomePath,
};
use crate::par;
use hiprec::{dd, to_f64, Cdd, Dd};

/// Relative tolerance for merging index values.
pub const VALUE_TOL: f64 = 1e-12;
/// Relative pivot threshold for the rank of the coefficient matrix. True
/// pivots reach `1e-20` by `T = 6`; double-double rounding sits near `1e-31`.
pub const RANK_TOL: f64 = 1e-26;
/// Rank threshold for moment functions given in `f64`.
pub const FUNCTION_RANK_TOL: f64 = 1e-9;
/// Largest outcome space handled by the null-space construction.
pub const MAX_PATHS: usize = 1 << 14;
const MAX_DSET: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Provenance {
    NullSpace,
    ClosedForm(String),
}

/// Coefficients `m(y)` over all paths in lexicographic order, for one
/// `(Y0, X, theta)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFunction {
    pub coefficients: Vec<f64>,
    pub provenance: Provenance,
}

impl MomentFunction {
    /// Tabulates `f` over `{0,1}^t`.
    pub fn tabulate(t: usize, provenance: Provenance, f: impl Fn(&[u8]) -> f64) -> Self {
        let coefficients = (0..1usize << t).map(|i| f(&path_from_index(i, t))).collect();
        Self { coefficients, provenance }
    }

    pub fn value(&self, y: &[u8]) -> f64 {
        self.coefficients[crate::model::path_index(y)]
    }
}

/// Distinct values of `pi_t` across all histories compatible with `y0`,
/// sorted ascending.
pub fn index_values(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    spec.check_path(&OutcomePath::new(vec![0; spec.t()], y0.to_vec()))?;
    spec.check_x(x)?;
    spec.check_theta(theta)?;
    Ok((0..spec.t())
        .map(|s| {
            let mut vals: Vec<f64> =
                candidate_keys(spec, s, y0).into_iter().map(|k| spec.index_from_key(k, x.at(s), theta)).collect();
            vals.sort_by(f64::total_cmp);
            dedup_close(vals)
        })
        .collect())
}

fn dedup_close(vals: Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(vals.len());
    for v in vals {
        if out.last().is_none_or(|&u| !close(u, v)) {
            out.push(v);
        }
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Lag keys reachable at 0-based `s` given the initial condition.
fn candidate_keys(spec: &ModelSpec, s: usize, y0: &[u8]) -> Vec<u64> {
    match spec.family() {
        IndexFamily::Static => vec![0],
        IndexFamily::Ar { p } => {
            let free = p.min(s);
            let mut fixed = 0u64;
            for r in free + 1..=p {
                fixed |= (y0[y0.len() + s - r] as u64) << (r - 1);
            }
            (0..1u64 << free).map(|bits| fixed | bits).collect()
        }
        IndexFamily::Network { n, .. } => {
            let m = n * (n - 1) / 2;
            if s < m {
                vec![spec.lag_key(s, &[], y0)]
            } else {
                (0..=(n as u64).saturating_sub(2)).flat_map(|r| [2 * r, 2 * r + 1]).collect()
            }
        }
    }
}

/// `Q_t`: number of distinct index values at each observation.
pub fn qt_values(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<Vec<usize>> {
    Ok(index_values(spec, y0, x, theta)?.iter().map(Vec::len).collect())
}

/// Exact keys for vectors `d`: integer designs are keyed exactly, others on
/// a `1e-9` grid.
#[derive(Debug, Clone, Copy)]
struct Keyer {
    scale: f64,
}

impl Keyer {
    fn for_spec(spec: &ModelSpec) -> Self {
        Self { scale: if spec.integer_w().is_some() { 1.0 } else { 1e9 } }
    }

    fn key(&self, d: &[f64]) -> Vec<i64> {
        d.iter().map(|v| (v * self.scale).round() as i64).collect()
    }

    fn value(&self, key: &[i64]) -> Vec<f64> {
        key.iter().map(|&k| k as f64 / self.scale).collect()
    }
}

/// The set `{ sum_t k_t w_t : 0 <= k_t <= Q_t }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DSet {
    /// Sorted by exact key.
    pub elements: Vec<Vec<f64>>,
    pub caps: Vec<usize>,
    pub cardinality: usize,
}

/// `|D|` without materialising it where the design allows.
pub fn dset_cardinality(spec: &ModelSpec, caps: &[usize]) -> Result<u128> {
    check_caps(spec, caps)?;
    if let Ok(basis) = spec.basis_index() {
        let mut per_class = vec![0u128; spec.dw()];
        for (s, &j) in basis.iter().enumerate() {
            per_class[j] += caps[s] as u128;
        }
        return Ok(per_class.iter().map(|c| c + 1).product());
    }
    Ok(build_dset(spec, caps)?.cardinality as u128)
}

fn check_caps(spec: &ModelSpec, caps: &[usize]) -> Result<()> {
    if caps.len() != spec.t() {
        return crate::error::invalid(format!("{} caps for T={}", caps.len(), spec.t()));
    }
    Ok(())
}

/// Materialises `D` by incremental deduplication.
pub fn build_dset(spec: &ModelSpec, caps: &[usize]) -> Result<DSet> {
    check_caps(spec, caps)?;
    let keyer = Keyer::for_spec(spec);
    let dw = spec.dw();
    let mut keys: Vec<Vec<i64>> = vec![vec![0; dw]];
    for (s, &q) in caps.iter().enumerate() {
        let w = keyer.key(&spec.column(s));
        let w = &w;
        let mut next: Vec<Vec<i64>> = keys
            .iter()
            .flat_map(|d| (0..=q as i64).map(move |k| d.iter().zip(w).map(|(a, b)| a + k * b).collect()))
            .collect();
        next.sort_unstable();
        next.dedup();
        if next.len() > MAX_DSET {
            return Err(Error::TooLarge { what: "D set".into(), estimate: next.len() as f64, limit: MAX_DSET as f64 });
        }
        keys = next;
    }
    let elements: Vec<Vec<f64>> = keys.iter().map(|k| keyer.value(k)).collect();
    Ok(DSet { cardinality: elements.len(), elements, caps: caps.to_vec() })
}

/// `2^T - |D|`; non-positive values carry no existence guarantee.
pub fn moment_bound(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<i128> {
    let caps = qt_values(spec, y0, x, theta)?;
    let card = dset_cardinality(spec, &caps)?;
    if spec.t() > 120 {
        return Err(Error::TooLarge { what: "outcome space".into(), estimate: spec.t() as f64, limit: 120.0 });
    }
    Ok((1i128 << spec.t()) - card as i128)
}

/// Polynomial expansion of one path probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiExpansion {
    /// `c_{t,k}`: coefficient of `a_t^k` in `phi_t`.
    pub per_period: Vec<Vec<f64>>,
    /// `(d, c_d(y))` sorted by `d`, zero coefficients dropped.
    pub grouped: Vec<(Vec<f64>, f64)>,
}

struct PhiContext {
    values: Vec<Vec<f64>>,
    b: Vec<Vec<Dd>>,
    keyer: Keyer,
    w_keys: Vec<Vec<i64>>,
}

impl PhiContext {
    fn new(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<Self> {
        let values = index_values(spec, y0, x, theta)?;
        let b = values.iter().map(|vals| vals.iter().map(|v| dd(v.exp())).collect()).collect();
        let keyer = Keyer::for_spec(spec);
        let w_keys = (0..spec.t()).map(|s| keyer.key(&spec.column(s))).collect();
        Ok(Self { values, b, keyer, w_keys })
    }

    /// Position of the realised index value among `values[s]`.
    fn slots(&self, spec: &ModelSpec, y: &[u8], y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Vec<usize> {
        (0..spec.t())
            .map(|s| {
                let pi = spec.index_from_key(spec.lag_key(s, y, y0), x.at(s), theta);
                self.values[s].iter().position(|&v| close(v, pi)).expect("index value outside the enumerated set")
            })
            .collect()
    }

    fn per_period(&self, y: &[u8], slots: &[usize]) -> Vec<Vec<Dd>> {
        slots
            .iter()
            .enumerate()
            .map(|(s, &q)| {
                let bs = &self.b[s];
                let mut poly = if y[s] == 1 { vec![dd(0.0), bs[q]] } else { vec![dd(1.0)] };
                for (r, &b) in bs.iter().enumerate() {
                    if r != q {
                        let mut next = vec![dd(0.0); poly.len() + 1];
                        for (k, &c) in poly.iter().enumerate() {
                            next[k] += c;
                            next[k + 1] += c * b;
                        }
                        poly = next;
                    }
                }
                poly
            })
            .collect()
    }

    fn grouped(&self, per_period: &[Vec<Dd>]) -> HashMap<Vec<i64>, Dd> {
        let dw = self.w_keys.first().map_or(0, Vec::len);
        let mut acc: HashMap<Vec<i64>, Dd> = HashMap::from([(vec![0; dw], dd(1.0))]);
        for (s, poly) in per_period.iter().enumerate() {
            let mut next: HashMap<Vec<i64>, Dd> = HashMap::with_capacity(acc.len() * poly.len());
            for (d, &c) in &acc {
                for (k, &ck) in poly.iter().enumerate() {
                    if ck == dd(0.0) {
                        continue;
                    }
                    let key: Vec<i64> = d.iter().zip(&self.w_keys[s]).map(|(a, b)| a + k as i64 * b).collect();
                    *next.entry(key).or_insert(dd(0.0)) += c * ck;
                }
            }
            acc = next;
        }
        acc
    }
}

/// Expands `phi(y, A) = prod_t phi_t(y, a_t)` and groups it by `d`.
pub fn phi_expand(
    spec: &ModelSpec,
    path: &OutcomePath,
    x: &CovariatePath,
    theta: &[f64],
) -> Result<PhiExpansion> {
    spec.check_path(path)?;
    let ctx = PhiContext::new(spec, &path.y0, x, theta)?;
    let slots = ctx.slots(spec, &path.y, &path.y0, x, theta);
    let per_period = ctx.per_period(&path.y, &slots);
    let mut grouped: Vec<(Vec<i64>, Dd)> =
        ctx.grouped(&per_period).into_iter().filter(|(_, c)| *c != dd(0.0)).collect();
    grouped.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(PhiExpansion {
        per_period: per_period.iter().map(|p| p.iter().map(|&c| to_f64(c)).collect()).collect(),
        grouped: grouped.into_iter().map(|(k, c)| (ctx.keyer.value(&k), to_f64(c))).collect(),
    })
}

/// `log kappa(A) = -sum_t sum_q log(1 + b_{t,q} a_t)`.
pub fn log_kappa(spec: &ModelSpec, values: &[Vec<f64>], a: &FixedEffect) -> f64 {
    -values
        .iter()
        .enumerate()
        .map(|(s, vals)| {
            let e = spec.effect(s, a);
            vals.iter().map(|v| crate::model::softplus(v + e)).sum::<f64>()
        })
        .sum::<f64>()
}

/// Rows of `c_d(y)` in double-double, scaled to unit max-norm (row scaling
/// leaves the null space unchanged).
fn coefficient_rows(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<Vec<Vec<Dd>>> {
    let t = spec.t();
    check_paths(t)?;
    let ctx = PhiContext::new(spec, y0, x, theta)?;
    let caps: Vec<usize> = ctx.values.iter().map(Vec::len).collect();
    let dset = build_dset(spec, &caps)?;
    let row_of: HashMap<Vec<i64>, usize> =
        dset.elements.iter().enumerate().map(|(i, d)| (ctx.keyer.key(d), i)).collect();
    let columns = par::map_range(1 << t, |idx| {
        let y = path_from_index(idx, t);
        let per = ctx.per_period(&y, &ctx.slots(spec, &y, y0, x, theta));
        ctx.grouped(&per).into_iter().map(|(k, c)| (row_of[&k], c)).collect::<Vec<_>>()
    });
    let mut rows = vec![vec![dd(0.0); 1 << t]; dset.cardinality];
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col {
            rows[i][j] = v;
        }
    }
    Ok(hiprec::normalise_rows(rows))
}

/// The `|D| x 2^T` matrix of grouped coefficients, rows scaled to unit
/// max-norm, rounded to `f64`.
pub fn coefficient_matrix(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<DMatrix<f64>> {
    let rows = coefficient_rows(spec, y0, x, theta)?;
    let cols = 1usize << spec.t();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| to_f64(rows[i][j])))
}

fn check_paths(t: usize) -> Result<()> {
    if t >= usize::BITS as usize || 1usize << t > MAX_PATHS {
        return Err(Error::TooLarge { what: "outcome space".into(), estimate: 2f64.powi(t as i32), limit: MAX_PATHS as f64 });
    }
    Ok(())
}

/// Orthonormal basis of a numerical null space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullSpace {
    /// Basis vectors, each of length `2^T`.
    pub basis: Vec<Vec<f64>>,
    /// `|R_kk| / |R_00|` of the pivoted QR for the retained pivots.
    pub pivots: Vec<f64>,
    /// Same ratio for the first discarded pivot.
    pub first_discarded: Option<f64>,
    pub rank: usize,
    /// Set when the last retained / first discarded ratio is below 10.
    pub gap_warning: bool,
}

impl NullSpace {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }
}

fn null_from_rows(rows: &[Vec<Dd>], cols: usize) -> NullSpace {
    let q = hiprec::nullspace_dd(rows, cols, RANK_TOL);
    let gap_warning = match (q.pivots.last(), q.rejected) {
        (Some(&last), Some(rej)) => last < 10.0 * rej,
        _ => false,
    };
    let basis = q
        .basis
        .into_iter()
        .map(|mut v| {
            let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    NullSpace { basis, pivots: q.pivots, first_discarded: q.rejected, rank: q.rank, gap_warning }
}

/// Null space of `m`, rows scaled to unit max-norm first.
pub fn nullspace(m: &DMatrix<f64>) -> NullSpace {
    let rows: Vec<Vec<Dd>> = m.row_iter().map(|r| r.iter().map(|&v| dd(v)).collect()).collect();
    null_from_rows(&hiprec::normalise_rows(rows), m.ncols())
}

/// Null space of the grouped-coefficient matrix.
pub fn nullspace_moments(spec: &ModelSpec, y0: &[u8], x: &CovariatePath, theta: &[f64]) -> Result<NullSpace> {
    Ok(null_from_rows(&coefficient_rows(spec, y0, x, theta)?, 1 << spec.t()))
}

/// Null-space basis as tagged moment functions.
pub fn nullspace_functions(ns: &NullSpace) -> Vec<MomentFunction> {
    ns.basis
        .iter()
        .map(|b| MomentFunction { coefficients: b.clone(), provenance: Provenance::NullSpace })
        .collect()
}

/// Independent construction: null space of `[Pr(y | Y0, X, A_j)]` over
/// `rows` random draws, evaluated directly from the product of logistic
/// factors.
///
/// Draws sit on the imaginary axis, `exp(A_jk)` uniform on the unit
/// circle: real draws turn the system into a real-node Vandermonde matrix
/// in `exp(A)` whose conditioning is hopeless once `d` spans more than a
/// dozen values. Each draw contributes its real and imaginary parts as two
/// rows. Requires an integer design, so that `a_t = prod_k z_k^{w_kt}`
/// is formed exactly from one rounded `z_k` per component.
pub fn sampled_nullspace<R: Rng>(
    spec: &ModelSpec,
    y0: &[u8],
    x: &CovariatePath,
    theta: &[f64],
    rows: usize,
    rng: &mut R,
) -> Result<NullSpace> {
    let t = spec.t();
    check_paths(t)?;
    let Some(w) = spec.integer_w() else {
        return crate::error::invalid("sampled null space needs an integer design");
    };
    let ctx = PhiContext::new(spec, y0, x, theta)?;
    let paths: Vec<(Vec<u8>, Vec<usize>)> = (0..1usize << t)
        .map(|i| {
            let y = path_from_index(i, t);
            let s = ctx.slots(spec, &y, y0, x, theta);
            (y, s)
        })
        .collect();
    let draws: Vec<Vec<Cdd>> = (0..rows)
        .map(|_| {
            let z: Vec<Cdd> = (0..spec.dw())
                .map(|_| {
                    let om = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    Cdd { re: dd(om.cos()), im: dd(om.sin()) }
                })
                .collect();
            (0..t).map(|s| w.iter().zip(&z).fold(Cdd::one(), |acc, (wk, zk)| acc * zk.powi(wk[s]))).collect()
        })
        .collect();
    let prob_rows = par::map_slice(&draws, |a| {
        let mut re = Vec::with_capacity(paths.len());
        let mut im = Vec::with_capacity(paths.len());
        for (y, slots) in &paths {
            let p = (0..t).fold(Cdd::one(), |acc, s| {
                let ba = a[s].scale(ctx.b[s][slots[s]]);
                let num = if y[s] == 1 { ba } else { Cdd::one() };
                acc * num.div(Cdd::one() + ba)
            });
            re.push(p.re);
            im.push(p.im);
        }
        [re, im]
    });
    let m: Vec<Vec<Dd>> = prob_rows.into_iter().flatten().collect();
    Ok(null_from_rows(&hiprec::normalise_rows(m), 1 << t))
}

/// Largest distance from a basis vector of either space to the other space.
pub fn subspace_residual(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn one_way(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .map(|v| {
                let mut r = v.clone();
                for u in b {
                    let c: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
                    r.iter_mut().zip(u).for_each(|(ri, ui)| *ri -= c * ui);
                }
                r.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }
    one_way(a, b).max(one_way(b, a))
}

/// `max_A |sum_y m(y) Pr(y | Y0, X, A)|` over the grid, by exact enumeration.
pub fn verify_moment(
    m: &MomentFunction,
    spec: &ModelSpec,
    y0: &[u8],
    x: &CovariatePath,
    theta: &[f64],
    a_grid: &[FixedEffect],
) -> Result<f64> {
    if a_grid.is_empty() {
        return crate::error::invalid("A grid is empty");
    }
    check_paths(spec.t())?;
    if m.coefficients.len() != 1 << spec.t() {
        return crate::error::invalid(format!(
            "moment has {} coefficients, outcome space has {}",
            m.coefficients.len(),
            1usize << spec.t()
        ));
    }
    let mut worst = 0.0f64;
    for a in a_grid {
        let p = all_path_probabilities(spec, y0, x, theta, a)?;
        let e: f64 = p.iter().zip(&m.coefficients).map(|(p, c)| p * c).sum();
        worst = worst.max(e.abs());
    }
    Ok(worst)
}

/// Numerical rank of a set of moment functions viewed as vectors.
pub fn moment_rank(ms: &[MomentFunction]) -> usize {
    if ms.is_empty() {
        return 0;
    }
    let rows: Vec<Vec<Dd>> = ms.iter().map(|m| m.coefficients.iter().map(|&v| dd(v)).collect()).collect();
    hiprec::nullspace_dd(&hiprec::normalise_rows(rows), ms[0].coefficients.len(), FUNCTION_RANK_TOL).rank
}

/// Expected number of reference networks for the transition moments.
pub fn network_reference_count(n: usize) -> usize {
    1 << dyads(n).len()
}
