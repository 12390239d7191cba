//! Differencing vectors `w` in `{-1,0,1}^T` with `W w = 0`, the outcome
//! pairs they generate, and the structured fixed-effect designs.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{dyad_index, dyads, CovariatePath, IndexFamily, ModelSpec};
use crate::par;

/// Structured fixed-effect designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum DesignFamily {
    /// Scalar unit effect: `W = (1, ..., 1)`.
    PanelFe { t: usize },
    /// Unit-specific polynomial trend of degree `p`: rows `t^0 .. t^p`.
    PolyTrend { p: usize, t: usize },
    /// The 2 x 3 overlapping design `[[1,1,0],[0,1,1]]`.
    Overlapping,
    /// Unit and time effects on an `n x periods` panel, unit-major order.
    TwoWay { n: usize, periods: usize },
    /// Undirected dyads with additive node effects `A_i + A_j`.
    Dyadic { n: usize },
    /// Three-partite triads with pairwise effects `A_ij + B_jk + C_ik`.
    Triadic { n1: usize, n2: usize, n3: usize },
    /// Quarter indicators, observation `t` in quarter `((t - 1) mod 4) + 1`.
    Quarterly { t: usize },
}

/// Integer vector with entries in `{-1, 0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<i8>);

/// Two outcome paths whose difference is a weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomePair {
    pub y1: Vec<u8>,
    pub y2: Vec<u8>,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Truncate the sorted result to this many vectors.
    pub max_solutions: Option<usize>,
    /// Exclude the zero vector.
    pub require_nonzero: bool,
    /// Only accept vectors with nonzero first and last entries.
    pub require_endpoints: bool,
    /// Abort with [`Error::TooLarge`] once this many solutions are found.
    pub collect_limit: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { max_solutions: None, require_nonzero: true, require_endpoints: false, collect_limit: 5_000_000 }
    }
}

/// Result of the identification rank check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankDiagnostic {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    /// Sign-normalised copy whose first nonzero entry is `+1`.
    pub fn canonical(&self) -> Self {
        match self.0.iter().find(|&&v| v != 0) {
            Some(&-1) => Self(self.0.iter().map(|v| -v).collect()),
            _ => self.clone(),
        }
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// `W w` in exact integer arithmetic.
    pub fn apply(&self, w: &[Vec<i64>]) -> Vec<i64> {
        w.iter().map(|row| row.iter().zip(&self.0).map(|(a, &b)| a * b as i64).sum()).collect()
    }
}

/// Builds the static model for a design, with one covariate.
pub fn build_design(family: DesignFamily) -> Result<ModelSpec> {
    let rows: Vec<Vec<f64>> = match family {
        DesignFamily::PanelFe { t } => {
            check_positive(t, "T")?;
            vec![vec![1.0; t]]
        }
        DesignFamily::PolyTrend { p, t } => {
            check_positive(t, "T")?;
            (0..=p).map(|k| (1..=t).map(|s| (s as f64).powi(k as i32)).collect()).collect()
        }
        DesignFamily::Overlapping => vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]],
        DesignFamily::TwoWay { n, periods } => {
            check_positive(n * periods, "n * periods")?;
            let t_all = n * periods;
            let mut rows = Vec::with_capacity(n + periods);
            for i in 0..n {
                rows.push((0..t_all).map(|t| (t / periods == i) as u8 as f64).collect());
            }
            for tau in 0..periods {
                rows.push((0..t_all).map(|t| (t % periods == tau) as u8 as f64).collect());
            }
            rows
        }
        DesignFamily::Dyadic { n } => {
            if n < 2 {
                return invalid("dyadic design needs n >= 2");
            }
            let ds = dyads(n);
            (0..n).map(|k| ds.iter().map(|&(i, j)| (i == k || j == k) as u8 as f64).collect()).collect()
        }
        DesignFamily::Triadic { n1, n2, n3 } => {
            check_positive(n1 * n2 * n3, "n1 * n2 * n3")?;
            let triads: Vec<(usize, usize, usize)> = (0..n1)
                .flat_map(|i| (0..n2).flat_map(move |j| (0..n3).map(move |k| (i, j, k))))
                .collect();
            let mut rows = Vec::new();
            for a in 0..n1 {
                for b in 0..n2 {
                    rows.push(triads.iter().map(|&(i, j, _)| (i == a && j == b) as u8 as f64).collect());
                }
            }
            for b in 0..n2 {
                for c in 0..n3 {
                    rows.push(triads.iter().map(|&(_, j, k)| (j == b && k == c) as u8 as f64).collect());
                }
            }
            for a in 0..n1 {
                for c in 0..n3 {
                    rows.push(triads.iter().map(|&(i, _, k)| (i == a && k == c) as u8 as f64).collect());
                }
            }
            rows
        }
        DesignFamily::Quarterly { t } => {
            check_positive(t, "T")?;
            (0..4).map(|q| (0..t).map(|s| (s % 4 == q) as u8 as f64).collect()).collect()
        }
    };
    ModelSpec::new(IndexFamily::Static, rows, 1)
}

fn check_positive(v: usize, what: &str) -> Result<()> {
    if v == 0 {
        return invalid(format!("design parameters give {what} = 0 observations"));
    }
    Ok(())
}

/// Integer rows of `W`, or an error for non-integral designs.
pub fn integer_design(spec: &ModelSpec) -> Result<Vec<Vec<i64>>> {
    spec.integer_w().ok_or_else(|| Error::InvalidInput("search needs an integer-valued W".into()))
}

struct Search<'a> {
    /// Columns of W in processing order: `cols[d][k]`.
    cols: Vec<Vec<i64>>,
    /// Original position of the `d`-th processed entry.
    order: Vec<usize>,
    /// `bound[d][k]`: sum of |W_k| over processing depths `>= d`.
    bound: Vec<Vec<i64>>,
    opts: &'a SearchOptions,
    found: AtomicUsize,
    t: usize,
}

#[derive(Clone)]
struct Node {
    depth: usize,
    sums: Vec<i64>,
    values: Vec<i8>,
    any_nonzero: bool,
}

impl Search<'_> {
    fn domain(&self, depth: usize, any_nonzero: bool) -> &'static [i8] {
        let pos = self.order[depth];
        let endpoint = self.opts.require_endpoints && (pos == 0 || pos + 1 == self.t);
        // Only one sign per +/- pair: the first nonzero in processing order is +1.
        match (endpoint, any_nonzero) {
            (true, false) => &[1],
            (true, true) => &[1, -1],
            (false, false) => &[1, 0],
            (false, true) => &[1, 0, -1],
        }
    }

    fn feasible(&self, sums: &[i64], depth: usize) -> bool {
        sums.iter().zip(&self.bound[depth]).all(|(s, b)| s.abs() <= *b)
    }

    fn children(&self, node: &Node) -> Vec<Node> {
        let mut out = Vec::with_capacity(3);
        for &v in self.domain(node.depth, node.any_nonzero) {
            let mut sums = node.sums.clone();
            if v != 0 {
                for (s, c) in sums.iter_mut().zip(&self.cols[node.depth]) {
                    *s += v as i64 * c;
                }
            }
            if !self.feasible(&sums, node.depth + 1) {
                continue;
            }
            let mut values = node.values.clone();
            values.push(v);
            out.push(Node { depth: node.depth + 1, sums, values, any_nonzero: node.any_nonzero || v != 0 });
        }
        out
    }

    fn emit(&self, values: &[i8], out: &mut Vec<WeightVector>) -> Result<()> {
        let mut w = vec![0i8; self.t];
        for (d, &v) in values.iter().enumerate() {
            w[self.order[d]] = v;
        }
        let w = WeightVector(w);
        if self.opts.require_nonzero && w.is_zero() {
            return Ok(());
        }
        if self.found.fetch_add(1, Ordering::Relaxed) >= self.opts.collect_limit {
            return Err(Error::TooLarge {
                what: "solution set".into(),
                estimate: self.opts.collect_limit as f64,
                limit: self.opts.collect_limit as f64,
            });
        }
        out.push(w.canonical());
        Ok(())
    }

    /// Depth-first enumeration below `node`; values are reused in place.
    fn dfs(&self, node: &Node, out: &mut Vec<WeightVector>) -> Result<()> {
        let mut sums = node.sums.clone();
        let mut values = node.values.clone();
        self.dfs_inner(node.depth, &mut sums, &mut values, node.any_nonzero, out)
    }

    fn dfs_inner(
        &self,
        depth: usize,
        sums: &mut Vec<i64>,
        values: &mut Vec<i8>,
        any_nonzero: bool,
        out: &mut Vec<WeightVector>,
    ) -> Result<()> {
        if depth == self.t {
            if sums.iter().all(|&s| s == 0) {
                self.emit(values, out)?;
            }
            return Ok(());
        }
        let col = &self.cols[depth];
        let next_bound = &self.bound[depth + 1];
        for &v in self.domain(depth, any_nonzero) {
            let mut ok = true;
            for ((s, c), b) in sums.iter_mut().zip(col).zip(next_bound) {
                *s += v as i64 * c;
                ok &= s.abs() <= *b;
            }
            if ok {
                values.push(v);
                self.dfs_inner(depth + 1, sums, values, any_nonzero || v != 0, out)?;
                values.pop();
            }
            for (s, c) in sums.iter_mut().zip(col) {
                *s -= v as i64 * c;
            }
        }
        Ok(())
    }
}

/// All vectors `w in {-1,0,1}^T` with `W w = 0`, up to global sign.
///
/// Exhaustive depth-first search with per-row bounds on the partial sums.
/// Positions carrying the largest entries of `W` are branched on first.
/// Returned vectors have leading nonzero entry `+1` and are sorted
/// lexicographically (`-1 < 0 < 1`).
pub fn find_wperp(w: &[Vec<i64>], opts: &SearchOptions) -> Result<Vec<WeightVector>> {
    let t = w.first().map_or(0, Vec::len);
    if t == 0 || w.iter().any(|r| r.len() != t) {
        return invalid("W must be a non-empty rectangular matrix");
    }
    if t > 64 {
        return Err(Error::TooLarge { what: "search length T".into(), estimate: t as f64, limit: 64.0 });
    }
    if opts.require_endpoints && t < 2 {
        return Ok(Vec::new());
    }
    let dw = w.len();
    let row_scale: Vec<f64> =
        w.iter().map(|r| r.iter().map(|v| v.abs()).max().unwrap_or(0).max(1) as f64).collect();
    let weight =
        |pos: usize| -> f64 { (0..dw).map(|k| w[k][pos].abs() as f64 / row_scale[k]).sum() };
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| weight(b).partial_cmp(&weight(a)).unwrap());

    let cols: Vec<Vec<i64>> = order.iter().map(|&pos| (0..dw).map(|k| w[k][pos]).collect()).collect();
    let mut bound = vec![vec![0i64; dw]; t + 1];
    for d in (0..t).rev() {
        for k in 0..dw {
            bound[d][k] = bound[d + 1][k] + cols[d][k].abs();
        }
    }
    let search = Search { cols, order, bound, opts, found: AtomicUsize::new(0), t };

    // Expand a frontier breadth-first, then hand subtrees to workers.
    let mut frontier = vec![Node { depth: 0, sums: vec![0; dw], values: Vec::new(), any_nonzero: false }];
    let target = if par::is_parallel() { 4096 } else { 1 };
    while frontier.len() < target && frontier.iter().any(|n| n.depth < t.saturating_sub(1)) {
        let mut next = Vec::with_capacity(frontier.len() * 3);
        for node in &frontier {
            if node.depth >= t.saturating_sub(1) {
                next.push(node.clone());
            } else {
                next.extend(search.children(node));
            }
        }
        frontier = next;
    }
    let parts = par::map_slice(&frontier, |node| {
        let mut out = Vec::new();
        search.dfs(node, &mut out).map(|_| out)
    });
    let mut all = Vec::new();
    for p in parts {
        all.extend(p?);
    }
    all.sort();
    all.dedup();
    if let Some(m) = opts.max_solutions {
        all.truncate(m);
    }
    Ok(all)
}

/// Rows `t^0 .. t^p` for `t = 1..=T`.
pub fn polytrend_rows(p: usize, t: usize) -> Vec<Vec<i64>> {
    (0..=p).map(|k| (1..=t as i64).map(|s| s.pow(k as u32)).collect()).collect()
}

/// Degree above which [`minimal_t_polytrend`] requires `allow_long`.
pub const POLYTREND_QUICK_MAX_P: usize = 5;

/// Smallest `T` admitting a nonzero `w` orthogonal to `t^0 .. t^p`, with
/// the lexicographically least canonical solution at that `T`.
pub fn minimal_t_polytrend(p: usize, allow_long: bool) -> Result<(usize, WeightVector)> {
    if p > POLYTREND_QUICK_MAX_P && !allow_long {
        return Err(Error::Precondition(format!(
            "degree p={p} runs for a long time; pass the long-run flag to allow it"
        )));
    }
    let opts = SearchOptions { require_endpoints: true, ..SearchOptions::default() };
    // A minimal solution has nonzero endpoints, otherwise it could be shifted
    // into a shorter window.
    for t in p + 2.. {
        let sols = find_wperp(&polytrend_rows(p, t), &opts)?;
        if let Some(first) = sols.into_iter().next() {
            return Ok((t, first));
        }
    }
    unreachable!()
}

/// Builds a degree-`p` trend-orthogonal vector by shifted self-differencing
/// of the degree-`p-1` vector, using the smallest shift that keeps entries in
/// `{-1,0,1}`. Not guaranteed minimal; exhaustive search is authoritative.
pub fn polytrend_by_shift(p: usize) -> WeightVector {
    let mut v: Vec<i8> = vec![1, -1];
    for _ in 0..p {
        let len = v.len();
        let next = (1..)
            .find_map(|s| {
                let mut u = vec![0i8; len + s];
                for (i, &x) in v.iter().enumerate() {
                    u[i] += x;
                    u[i + s] -= x;
                }
                u.iter().all(|x| x.abs() <= 1).then_some(u)
            })
            .unwrap();
        v = next;
    }
    WeightVector(v).canonical()
}

/// Outcome pair with `y1 - y2 = w`; `fill` supplies the shared outcomes at
/// the zero positions of `w`, in order.
pub fn pair_from_wperp(w: &WeightVector, fill: &[u8]) -> Result<OutcomePair> {
    let zeros = w.0.iter().filter(|&&v| v == 0).count();
    if fill.len() != zeros {
        return invalid(format!("fill has length {}, w has {zeros} zero entries", fill.len()));
    }
    if w.0.iter().any(|v| v.abs() > 1) || fill.iter().any(|&v| v > 1) {
        return invalid("entries out of range");
    }
    let mut fill = fill.iter();
    let mut y1 = Vec::with_capacity(w.len());
    let mut y2 = Vec::with_capacity(w.len());
    for &v in &w.0 {
        match v {
            1 => {
                y1.push(1);
                y2.push(0);
            }
            -1 => {
                y1.push(0);
                y2.push(1);
            }
            _ => {
                let f = *fill.next().unwrap();
                y1.push(f);
                y2.push(f);
            }
        }
    }
    Ok(OutcomePair { y1, y2 })
}

/// All pairs generated by `w` over every fill of its zero positions.
pub fn pairs_for_wperp(w: &WeightVector) -> Vec<OutcomePair> {
    let zeros = w.0.iter().filter(|&&v| v == 0).count();
    (0..1usize << zeros)
        .map(|f| pair_from_wperp(w, &crate::model::path_from_index(f, zeros)).unwrap())
        .collect()
}

/// Second-moment rank check of `X W_perp` across covariate draws.
///
/// Passes when the smallest eigenvalue of `mean(Z Z')`, `Z = X W_perp`,
/// exceeds `rel_tol` (default `1e-8`) times the largest.
pub fn rank_condition(
    samples: &[CovariatePath],
    wperp: &[WeightVector],
    rel_tol: Option<f64>,
) -> Result<RankDiagnostic> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("no covariate samples".into()))?;
    let (dx, t) = (first.dx(), first.periods());
    if samples.iter().any(|s| s.dx() != dx || s.periods() != t) {
        return invalid("covariate samples have different shapes");
    }
    if wperp.is_empty() || wperp.iter().any(|w| w.len() != t) {
        return invalid("weight vectors must be non-empty and of length T");
    }
    if dx == 0 {
        return invalid("rank condition needs at least one covariate");
    }
    let mut m = DMatrix::<f64>::zeros(dx, dx);
    for x in samples {
        for w in wperp {
            let z: Vec<f64> = (0..dx)
                .map(|k| (0..t).map(|s| x.at(s)[k] * w.0[s] as f64).sum())
                .collect();
            for a in 0..dx {
                for b in 0..dx {
                    m[(a, b)] += z[a] * z[b];
                }
            }
        }
    }
    m /= samples.len() as f64;
    let eig = m.symmetric_eigen().eigenvalues;
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tolerance = rel_tol.unwrap_or(1e-8) * max.max(0.0);
    Ok(RankDiagnostic { min_eigenvalue: min, max_eigenvalue: max, tolerance, pass: max > 0.0 && min > tolerance })
}

/// Tetrad vector on agents `a, b | c, d` for a dyadic design with `n` agents.
pub fn tetrad_vector(n: usize, a: usize, b: usize, c: usize, d: usize) -> WeightVector {
    let mut w = vec![0i8; n * (n - 1) / 2];
    w[dyad_index(n, a, c)] += 1;
    w[dyad_index(n, a, d)] -= 1;
    w[dyad_index(n, b, c)] -= 1;
    w[dyad_index(n, b, d)] += 1;
    WeightVector(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn search(family: DesignFamily) -> Vec<WeightVector> {
        let spec = build_design(family).unwrap();
        find_wperp(&integer_design(&spec).unwrap(), &SearchOptions::default()).unwrap()
    }

    #[test]
    fn panel_t2_has_single_difference() {
        assert_eq!(search(DesignFamily::PanelFe { t: 2 }), vec![WeightVector(vec![1, -1])]);
    }

    #[test]
    fn panel_t3_design_is_row_of_ones() {
        let spec = build_design(DesignFamily::PanelFe { t: 3 }).unwrap();
        assert_eq!(spec.w_rows(), vec![vec![1.0, 1.0, 1.0]]);
    }

    #[test]
    fn overlapping_design_and_solution() {
        let spec = build_design(DesignFamily::Overlapping).unwrap();
        assert_eq!(spec.w_rows(), vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]);
        assert_eq!(search(DesignFamily::Overlapping), vec![WeightVector(vec![1, -1, 1])]);
    }

    #[test]
    fn two_way_2x2_contains_did_vector() {
        let sols = search(DesignFamily::TwoWay { n: 2, periods: 2 });
        assert!(sols.contains(&WeightVector(vec![1, -1, -1, 1])));
    }

    #[test]
    fn two_way_3x3_contains_cycle() {
        let sols = search(DesignFamily::TwoWay { n: 3, periods: 3 });
        assert!(sols.contains(&WeightVector(vec![1, -1, 0, 0, 1, -1, -1, 0, 1])));
    }

    #[test]
    fn linear_trend_t3_has_no_solution() {
        assert!(search(DesignFamily::PolyTrend { p: 1, t: 3 }).is_empty());
    }

    #[test]
    fn dyadic4_design_shape() {
        let spec = build_design(DesignFamily::Dyadic { n: 4 }).unwrap();
        assert_eq!((spec.dw(), spec.t()), (4, 6));
        // column for dyad (2,3) selects agents 2 and 3 (1-based)
        assert_eq!(spec.column(3), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn dyadic4_contains_tetrad() {
        let sols = search(DesignFamily::Dyadic { n: 4 });
        assert!(sols.contains(&tetrad_vector(4, 0, 1, 2, 3).canonical()));
    }

    #[test]
    fn triadic_hexad() {
        let sols = search(DesignFamily::Triadic { n1: 2, n2: 2, n3: 2 });
        assert_eq!(sols, vec![WeightVector(vec![1, -1, -1, 1, -1, 1, 1, -1])]);
    }

    #[test]
    fn max_solutions_truncates_sorted_output() {
        let all = search(DesignFamily::PanelFe { t: 4 });
        let spec = build_design(DesignFamily::PanelFe { t: 4 }).unwrap();
        let some = find_wperp(
            &integer_design(&spec).unwrap(),
            &SearchOptions { max_solutions: Some(2), ..Default::default() },
        )
        .unwrap();
        assert_eq!(&all[..2], &some[..]);
        assert!(all.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn small_table_rows() {
        assert_eq!(minimal_t_polytrend(0, false).unwrap(), (2, WeightVector(vec![1, -1])));
        assert_eq!(minimal_t_polytrend(2, false).unwrap(), (7, WeightVector(vec![1, -1, -1, 0, 1, 1, -1])));
    }

    #[test]
    fn long_degree_needs_flag() {
        assert!(matches!(minimal_t_polytrend(6, false), Err(Error::Precondition(_))));
    }

    #[test]
    fn shift_construction_is_orthogonal() {
        for p in 0..=5 {
            let v = polytrend_by_shift(p);
            assert!(v.apply(&polytrend_rows(p, v.len())).iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn pair_examples() {
        let p = pair_from_wperp(&WeightVector(vec![1, -1]), &[]).unwrap();
        assert_eq!((p.y1, p.y2), (vec![1, 0], vec![0, 1]));
        let p = pair_from_wperp(&WeightVector(vec![1, -1, 0]), &[1]).unwrap();
        assert_eq!((p.y1, p.y2), (vec![1, 0, 1], vec![0, 1, 1]));
        let p = pair_from_wperp(&WeightVector(vec![1, -1, -1, 1]), &[]).unwrap();
        assert_eq!((p.y1, p.y2), (vec![1, 0, 0, 1], vec![0, 1, 1, 0]));
        assert!(pair_from_wperp(&WeightVector(vec![1, 0]), &[]).is_err());
    }

    #[test]
    fn rank_fails_for_time_constant_covariates() {
        let x: Vec<CovariatePath> = (0..20)
            .map(|i| CovariatePath::from_rows(&[vec![i as f64], vec![i as f64], vec![i as f64]]).unwrap())
            .collect();
        let d = rank_condition(&x, &[WeightVector(vec![1, -1, 0]), WeightVector(vec![0, 1, -1])], None).unwrap();
        assert!(!d.pass);
        assert!(d.min_eigenvalue.abs() < 1e-12);
    }

    #[test]
    fn rank_fails_with_single_sample() {
        let x = CovariatePath::from_rows(&[vec![0.3, -1.0], vec![1.2, 0.4]]).unwrap();
        let d = rank_condition(&[x], &[WeightVector(vec![1, -1])], None).unwrap();
        assert!(!d.pass);
        assert!(rank_condition(&[], &[WeightVector(vec![1, -1])], None).is_err());
    }
}
