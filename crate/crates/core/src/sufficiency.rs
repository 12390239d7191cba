//! Sufficient statistics for dynamic models: permutation checks on the
//! index sequence, AR(1) statistics and pair enumeration, AR(p) condition
//! systems, and conditioning sets for three-period network transitions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    dyads, path_from_index, shared_neighbors_ij, CovariatePath, IndexFamily, ModelSpec, OutcomePath,
};
use crate::par;

/// `(W y, W y_lag)` for an AR(1) model with binary design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SuffStatAr1 {
    pub s_y: Vec<i64>,
    pub s_lag: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCertificate {
    pub y: OutcomePath,
    pub y_tilde: OutcomePath,
    /// `sum_t w_t y_t` agrees.
    pub condition_i: bool,
    /// The `(w_t, pi_t)` sequences for `t >= 2` are permutations of each other.
    pub condition_ii: bool,
    /// `sum_t y_t y_{t-1} - sum_t yt_t yt_{t-1}`, AR families only.
    pub transition_gap: Option<i64>,
    /// `sum_t [y_t pi_t(y) - yt_t pi_t(yt)]`; the log likelihood ratio when
    /// both conditions hold.
    pub log_ratio: f64,
}

impl PairCertificate {
    pub fn passes(&self) -> bool {
        self.condition_i && self.condition_ii
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningKind {
    StaticClass,
    NetworkFull,
    NetworkStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSet {
    pub kind: ConditioningKind,
    /// Sorted, without duplicates.
    pub members: Vec<OutcomePath>,
}

impl ConditioningSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, y: &OutcomePath) -> bool {
        self.members.binary_search(y).is_ok()
    }
}

/// Maps distinct columns of `W` to indicator rows, in order of first
/// appearance. Returns the binary design and the table of distinct columns.
pub fn canonicalize_design(w_rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t = w_rows.first().map_or(0, Vec::len);
    let classes = column_classes(w_rows);
    let omega: Vec<Vec<f64>> = {
        let mut seen = vec![false; classes.iter().max().map_or(0, |m| m + 1)];
        let mut out = Vec::new();
        for s in 0..t {
            if !seen[classes[s]] {
                seen[classes[s]] = true;
                out.push(w_rows.iter().map(|r| r[s]).collect());
            }
        }
        out
    };
    let binary = (0..omega.len())
        .map(|q| (0..t).map(|s| (classes[s] == q) as u8 as f64).collect())
        .collect();
    (binary, omega)
}

/// Same model with its design replaced by [`canonicalize_design`].
pub fn canonical_spec(spec: &ModelSpec) -> Result<ModelSpec> {
    let (binary, _) = canonicalize_design(&spec.w_rows());
    ModelSpec::new(spec.family(), binary, spec.dx())
}

/// Class id of each column of `W`; equal columns share an id.
fn column_classes(w_rows: &[Vec<f64>]) -> Vec<usize> {
    let t = w_rows.first().map_or(0, Vec::len);
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    (0..t)
        .map(|s| {
            // +0.0 and -0.0 must coincide
            let key: Vec<u64> = w_rows.iter().map(|r| (r[s] + 0.0).to_bits()).collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect()
}

fn check_pair(spec: &ModelSpec, y: &OutcomePath, y_tilde: &OutcomePath) -> Result<()> {
    spec.check_path(y)?;
    spec.check_path(y_tilde)?;
    if y.y0 != y_tilde.y0 {
        return Err(Error::Precondition("paths must share the initial condition".into()));
    }
    Ok(())
}

fn lag_gap(spec: &ModelSpec, y: &OutcomePath, y_tilde: &OutcomePath) -> Option<i64> {
    let IndexFamily::Ar { p } = spec.family() else { return None };
    if p == 0 {
        return Some(0);
    }
    let s = |path: &OutcomePath| -> i64 {
        (1..=path.len() as isize).map(|t| (path.at(t) * path.at(t - 1)) as i64).sum()
    };
    Some(s(y) - s(y_tilde))
}

/// Checks the two conditions under which the likelihood ratio of `y` and
/// `y_tilde` does not depend on `A`.
///
/// The permutation check compares exact keys (class of `w_t`, lag pattern
/// read by `pi_t`, and the bits of `x_t` when covariates are supplied).
pub fn lemma2_check(
    spec: &ModelSpec,
    y: &OutcomePath,
    y_tilde: &OutcomePath,
    x: Option<&CovariatePath>,
    theta: &[f64],
) -> Result<PairCertificate> {
    check_pair(spec, y, y_tilde)?;
    spec.check_theta(theta)?;
    let zeros;
    let x = match x {
        Some(x) => {
            spec.check_x(x)?;
            x
        }
        None => {
            zeros = CovariatePath::zeros(spec.dx(), spec.t());
            &zeros
        }
    };
    let t = spec.t();
    let w_rows = spec.w_rows();
    let condition_i = w_rows.iter().all(|row| {
        let a: f64 = row.iter().zip(&y.y).map(|(w, &v)| w * v as f64).sum();
        let b: f64 = row.iter().zip(&y_tilde.y).map(|(w, &v)| w * v as f64).sum();
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    });
    let classes = column_classes(&w_rows);
    let keys = |path: &OutcomePath| -> Vec<(usize, u64, Vec<u64>)> {
        let mut k: Vec<_> = (1..t)
            .map(|s| {
                let xb = x.at(s).iter().map(|v| (v + 0.0).to_bits()).collect();
                (classes[s], spec.lag_key(s, &path.y, &path.y0), xb)
            })
            .collect();
        k.sort();
        k
    };
    let condition_ii = keys(y) == keys(y_tilde);
    let score = |path: &OutcomePath| -> f64 {
        (0..t)
            .filter(|&s| path.y[s] == 1)
            .map(|s| spec.index_from_key(spec.lag_key(s, &path.y, &path.y0), x.at(s), theta))
            .sum()
    };
    Ok(PairCertificate {
        y: y.clone(),
        y_tilde: y_tilde.clone(),
        condition_i,
        condition_ii,
        transition_gap: lag_gap(spec, y, y_tilde),
        log_ratio: score(y) - score(y_tilde),
    })
}

fn require_ar(spec: &ModelSpec, want: Option<usize>) -> Result<usize> {
    match (spec.family(), want) {
        (IndexFamily::Ar { p }, None) if p >= 1 => Ok(p),
        (IndexFamily::Ar { p }, Some(q)) if p == q => Ok(p),
        (f, _) => Err(Error::Precondition(format!("operation needs an AR model, got {f:?}"))),
    }
}

/// `(W y, W y_lag)` with `y_lag = (y_0, ..., y_{T-1})`.
pub fn ar1_sufficient_stat(spec: &ModelSpec, path: &OutcomePath) -> Result<SuffStatAr1> {
    require_ar(spec, Some(1))?;
    spec.check_path(path)?;
    let basis = spec.basis_index()?;
    Ok(ar1_stat_unchecked(&basis, spec.dw(), path))
}

fn ar1_stat_unchecked(basis: &[usize], dw: usize, path: &OutcomePath) -> SuffStatAr1 {
    let mut s_y = vec![0i64; dw];
    let mut s_lag = vec![0i64; dw];
    for (s, &j) in basis.iter().enumerate() {
        s_y[j] += path.y[s] as i64;
        s_lag[j] += path.at(s as isize) as i64;
    }
    SuffStatAr1 { s_y, s_lag }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PairFilter {
    /// Keep only pairs whose transition counts differ.
    pub require_gap: bool,
    /// Stop after this many pairs.
    pub max_pairs: Option<usize>,
}

/// Paths sharing one value of the AR(1) statistic, and the pairs they form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairGroup {
    pub stat: SuffStatAr1,
    pub pairs: Vec<PairCertificate>,
}

/// Groups all paths `{0,1}^T` by the AR(1) statistic and lists the
/// unordered pairs within each group. Groups are ordered by statistic,
/// pairs lexicographically.
pub fn enumerate_pairs_ar1(spec: &ModelSpec, y0: &[u8], filter: PairFilter) -> Result<Vec<PairGroup>> {
    require_ar(spec, Some(1))?;
    let t = spec.t();
    if t > 20 {
        return Err(Error::TooLarge { what: "outcome space".into(), estimate: 2f64.powi(t as i32), limit: 2f64.powi(20) });
    }
    spec.check_path(&OutcomePath::new(vec![0; t], y0.to_vec()))?;
    let basis = spec.basis_index()?;
    let theta = vec![0.0; spec.theta_len()];
    let stats = par::map_range(1 << t, |idx| {
        ar1_stat_unchecked(&basis, spec.dw(), &OutcomePath::new(path_from_index(idx, t), y0.to_vec()))
    });
    let mut groups: HashMap<&SuffStatAr1, Vec<usize>> = HashMap::new();
    for (idx, s) in stats.iter().enumerate() {
        groups.entry(s).or_default().push(idx);
    }
    let mut keyed: Vec<(&SuffStatAr1, Vec<usize>)> = groups.into_iter().filter(|(_, v)| v.len() > 1).collect();
    keyed.sort();
    let mut out = Vec::new();
    let mut total = 0usize;
    'outer: for (stat, members) in keyed {
        let mut pairs = Vec::new();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                if filter.max_pairs.is_some_and(|m| total >= m) {
                    if !pairs.is_empty() {
                        out.push(PairGroup { stat: stat.clone(), pairs });
                    }
                    break 'outer;
                }
                let y = OutcomePath::new(path_from_index(i, t), y0.to_vec());
                let yt = OutcomePath::new(path_from_index(j, t), y0.to_vec());
                let cert = lemma2_check(spec, &y, &yt, None, &theta)?;
                if filter.require_gap && cert.transition_gap == Some(0) {
                    continue;
                }
                total += 1;
                pairs.push(cert);
            }
        }
        if !pairs.is_empty() {
            out.push(PairGroup { stat: stat.clone(), pairs });
        }
    }
    Ok(out)
}

/// Statistics `sum_t w_t prod_{r in S} y_{t-r}` for every nonempty
/// `S subset {1..p}` (bitmask order), preceded by `sum_t w_t y_t`.
pub fn arp_statistics(spec: &ModelSpec, path: &OutcomePath) -> Result<Vec<Vec<i64>>> {
    let p = require_ar(spec, None)?;
    spec.check_path(path)?;
    let basis = spec.basis_index()?;
    let mut out = vec![vec![0i64; spec.dw()]; 1 << p];
    for (s, &j) in basis.iter().enumerate() {
        let t = s as isize + 1;
        out[0][j] += path.at(t) as i64;
        for mask in 1..1usize << p {
            let prod = (1..=p).filter(|r| mask >> (r - 1) & 1 == 1).all(|r| path.at(t - r as isize) == 1);
            out[mask][j] += prod as i64;
        }
    }
    Ok(out)
}

/// Checks the AR(p) condition system for a pair with binary design.
pub fn arp_condition_check(spec: &ModelSpec, y: &OutcomePath, y_tilde: &OutcomePath) -> Result<PairCertificate> {
    require_ar(spec, None)?;
    check_pair(spec, y, y_tilde)?;
    let a = arp_statistics(spec, y)?;
    let b = arp_statistics(spec, y_tilde)?;
    let theta = vec![0.0; spec.theta_len()];
    let mut cert = lemma2_check(spec, y, y_tilde, None, &theta)?;
    cert.condition_i = a[0] == b[0];
    cert.condition_ii = a[1..] == b[1..];
    Ok(cert)
}

/// Network geometry for three-period conditioning.
fn network_dims(spec: &ModelSpec) -> Result<(usize, usize)> {
    match spec.family() {
        IndexFamily::Network { n, periods: 3 } => Ok((n, n * (n - 1) / 2)),
        IndexFamily::Network { periods, .. } => {
            Err(Error::Precondition(format!("conditioning sets need 3 periods, got {periods}")))
        }
        f => Err(Error::Precondition(format!("operation needs a network model, got {f:?}"))),
    }
}

/// `{y}` if the period-1 and period-2 networks agree, otherwise `y` and the
/// path with those two periods exchanged.
pub fn network_cond_star(spec: &ModelSpec, y: &OutcomePath) -> Result<ConditioningSet> {
    let (_, m) = network_dims(spec)?;
    spec.check_path(y)?;
    let mut swapped = y.clone();
    swapped.y[..m].copy_from_slice(&y.y[m..2 * m]);
    swapped.y[m..2 * m].copy_from_slice(&y.y[..m]);
    let mut members = vec![y.clone(), swapped];
    members.sort();
    members.dedup();
    Ok(ConditioningSet { kind: ConditioningKind::NetworkStar, members })
}

/// Largest `n` for which the full conditioning set is enumerated.
pub const NETWORK_FULL_MAX_N: usize = 5;

/// Per-dyad codes `2 r_ij + y_ij` for a network given as a bitmask over dyads.
fn z_codes(n: usize, net_mask: usize) -> Vec<u8> {
    let m = n * (n - 1) / 2;
    let net = path_from_index(net_mask, m);
    dyads(n)
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| (2 * shared_neighbors_ij(&net, n, i, j) + net[k] as u32) as u8)
        .collect()
}

/// Packed per-dyad multiset `{z(y_1), z(y_2)}`; codes fit in 4 bits for `n <= 9`.
fn pair_signature(z1: &[u8], z2: &[u8]) -> u128 {
    z1.iter().zip(z2).fold(0u128, |acc, (&a, &b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        (acc << 8) | ((lo as u128) << 4) | hi as u128
    })
}

fn check_full_size(n: usize) -> Result<()> {
    if n > NETWORK_FULL_MAX_N {
        let m = n * (n - 1) / 2;
        return Err(Error::TooLarge {
            what: format!("full conditioning set enumeration for n={n}"),
            estimate: 2f64.powi(2 * m as i32),
            limit: 2f64.powi((NETWORK_FULL_MAX_N * (NETWORK_FULL_MAX_N - 1)) as i32),
        });
    }
    Ok(())
}

/// All `yt` with the same period-3 network as `y` such that, for every
/// dyad, `{Z_ij(yt_1), Z_ij(yt_2)}` equals `{Z_ij(y_1), Z_ij(y_2)}` as a
/// multiset, where `Z_ij` is the (link, shared-neighbour count) pair.
pub fn network_cond_full(spec: &ModelSpec, y: &OutcomePath) -> Result<ConditioningSet> {
    let (n, m) = network_dims(spec)?;
    check_full_size(n)?;
    spec.check_path(y)?;
    let codes: Vec<Vec<u8>> = par::map_range(1 << m, |mask| z_codes(n, mask));
    let idx1 = crate::model::path_index(&y.y[..m]);
    let idx2 = crate::model::path_index(&y.y[m..2 * m]);
    let target = pair_signature(&codes[idx1], &codes[idx2]);
    let hits: Vec<Vec<usize>> = par::map_range(1 << m, |a| {
        (0..1usize << m).filter(|&b| pair_signature(&codes[a], &codes[b]) == target).collect()
    });
    let mut members = Vec::new();
    for (a, bs) in hits.into_iter().enumerate() {
        for b in bs {
            let mut yt = path_from_index(a, m);
            yt.extend(path_from_index(b, m));
            yt.extend_from_slice(&y.y[2 * m..]);
            members.push(OutcomePath::new(yt, y.y0.clone()));
        }
    }
    members.sort();
    Ok(ConditioningSet { kind: ConditioningKind::NetworkFull, members })
}

/// Share of `(y_1, y_2)` configurations whose full conditioning set equals
/// the two-element swap set. The sets depend on neither the initial network
/// nor period 3, so this is also the share over all `(Y0, y)`.
pub fn network_star_equality_fraction(n: usize) -> Result<f64> {
    if n < 2 {
        return invalid("network needs n >= 2");
    }
    check_full_size(n)?;
    let m = n * (n - 1) / 2;
    let codes: Vec<Vec<u8>> = par::map_range(1 << m, |mask| z_codes(n, mask));
    let sigs: Vec<Vec<u128>> =
        par::map_range(1 << m, |a| (0..1usize << m).map(|b| pair_signature(&codes[a], &codes[b])).collect());
    let mut sizes: HashMap<u128, u64> = HashMap::new();
    for row in &sigs {
        for &s in row {
            *sizes.entry(s).or_default() += 1;
        }
    }
    let equal: u64 = sigs
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter().enumerate().filter(|&(b, s)| sizes[s] == if a == b { 1 } else { 2 }).count() as u64
        })
        .sum();
    Ok(equal as f64 / (1u64 << (2 * m)) as f64)
}

/// `sum_tau sum_ij y_{ij,tau} (gamma y_{ij,tau-1} + delta R_{ij,tau-1})`
/// over all three periods, the first one lagging on the initial network.
fn network_score(n: usize, gamma: f64, delta: f64, path: &OutcomePath) -> f64 {
    let m = n * (n - 1) / 2;
    let ds = dyads(n);
    let mut total = 0.0;
    for tau in 0..path.y.len() / m {
        let prev = if tau == 0 { &path.y0[..] } else { &path.y[(tau - 1) * m..tau * m] };
        for (k, &(i, j)) in ds.iter().enumerate() {
            if path.y[tau * m + k] == 1 {
                total += gamma * prev[k] as f64 + delta * shared_neighbors_ij(prev, n, i, j) as f64;
            }
        }
    }
    total
}

/// Conditional probability of `y` within `set`, free of the dyad effects.
pub fn network_cond_likelihood(
    spec: &ModelSpec,
    gamma: f64,
    delta: f64,
    y: &OutcomePath,
    set: &ConditioningSet,
) -> Result<f64> {
    let (n, _) = network_dims(spec)?;
    spec.check_path(y)?;
    if !set.contains(y) {
        return Err(Error::Precondition("observed path is not in the conditioning set".into()));
    }
    Ok(network_cond_log_likelihood(n, gamma, delta, y, set).exp())
}

pub(crate) fn network_cond_log_likelihood(
    n: usize,
    gamma: f64,
    delta: f64,
    y: &OutcomePath,
    set: &ConditioningSet,
) -> f64 {
    let scores: Vec<f64> = set.members.iter().map(|m| network_score(n, gamma, delta, m)).collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
    network_score(n, gamma, delta, y) - lse
}
