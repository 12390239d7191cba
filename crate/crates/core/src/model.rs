//! Model specifications and exact outcome probabilities.
//!
//! A [`ModelSpec`] pairs a fixed-effect design `W` (one column `w_t` per
//! observation) with an index family that determines how past outcomes and
//! covariates enter the logit index. All probabilities are accumulated in
//! log space.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How the logit index `pi_t` depends on history and covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IndexFamily {
    /// `pi_t = x_t' beta`.
    Static,
    /// `pi_t = sum_r gamma_r y_{t-r} + x_t' beta` with `p` pre-sample outcomes.
    Ar { p: usize },
    /// Dyadic network transitions among `n` agents over `periods` periods:
    /// `pi_{ij,tau} = gamma y_{ij,tau-1} + delta r_{ij,tau-1} + x' beta`.
    Network { n: usize, periods: usize },
}

/// Declarative description of a fixed-effects logit model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    periods: usize,
    dw: usize,
    /// Row-major `dw x T`.
    w: Vec<f64>,
    dx: usize,
    family: IndexFamily,
}

/// Binary outcome path plus the initial-condition block.
///
/// `y0` is stored oldest first: for AR(p) it is `(y_{1-p}, ..., y_0)`; for
/// networks it is the initial network in dyad order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomePath {
    pub y: Vec<u8>,
    #[serde(default)]
    pub y0: Vec<u8>,
}

/// Covariates `x_t` for each observation, stored observation-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePath {
    dx: usize,
    periods: usize,
    data: Vec<f64>,
}

/// Unobserved effect `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect(pub Vec<f64>);

impl OutcomePath {
    pub fn new(y: Vec<u8>, y0: Vec<u8>) -> Self {
        Self { y, y0 }
    }

    pub fn static_path(y: Vec<u8>) -> Self {
        Self { y, y0: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Outcome `y_t` for `t` in `1-p..=T` using 1-based period labels.
    pub fn at(&self, t: isize) -> u8 {
        if t >= 1 {
            self.y[(t - 1) as usize]
        } else {
            let back = (-t) as usize;
            self.y0[self.y0.len() - 1 - back]
        }
    }
}

impl CovariatePath {
    pub fn zeros(dx: usize, periods: usize) -> Self {
        Self { dx, periods, data: vec![0.0; dx * periods] }
    }

    /// Builds from one vector per observation.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let periods = rows.len();
        let dx = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dx) {
            return invalid("covariate rows have unequal length");
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("covariates must be finite");
        }
        Ok(Self { dx, periods, data: rows.concat() })
    }

    /// Builds from a `dx x T` matrix given as `dx` rows of length `T`.
    pub fn from_matrix(dx: usize, periods: usize, by_covariate: &[Vec<f64>]) -> Result<Self> {
        if by_covariate.len() != dx || by_covariate.iter().any(|r| r.len() != periods) {
            return invalid("covariate matrix has wrong shape");
        }
        let mut data = vec![0.0; dx * periods];
        for (k, row) in by_covariate.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                data[t * dx + k] = v;
            }
        }
        Ok(Self { dx, periods, data })
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// `x_t` for 0-based observation `t`.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.dx..(t + 1) * self.dx]
    }

    pub fn at_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dx..(t + 1) * self.dx]
    }

    pub fn negated(&self) -> Self {
        Self { data: self.data.iter().map(|v| -v).collect(), ..self.clone() }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Lexicographic list of dyads `(i, j)` with `i < j`.
pub fn dyads(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Position of dyad `{i, j}` in [`dyads`] order.
pub fn dyad_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    // dyads before row i: sum_{r<i} (n-1-r)
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Number of common neighbours of the endpoints of dyad `k` in `net`.
pub fn shared_neighbors(net: &[u8], n: usize, k: usize) -> u32 {
    let (i, j) = dyads(n)[k];
    shared_neighbors_ij(net, n, i, j)
}

pub(crate) fn shared_neighbors_ij(net: &[u8], n: usize, i: usize, j: usize) -> u32 {
    (0..n)
        .filter(|&m| m != i && m != j)
        .map(|m| (net[dyad_index(n, i, m)] * net[dyad_index(n, j, m)]) as u32)
        .sum()
}

/// Path with index `idx` in lexicographic order (`y_1` most significant).
pub fn path_from_index(idx: usize, len: usize) -> Vec<u8> {
    (0..len).map(|t| ((idx >> (len - 1 - t)) & 1) as u8).collect()
}

pub fn path_index(y: &[u8]) -> usize {
    y.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `log Pr(y_t | index eta)` for a logit kernel.
pub(crate) fn log_bernoulli_logit(y: u8, eta: f64) -> f64 {
    if y == 1 {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ModelSpec {
    /// Builds a spec from the rows of `W` (`dw` rows, each of length `T`).
    pub fn new(family: IndexFamily, w_rows: Vec<Vec<f64>>, dx: usize) -> Result<Self> {
        let dw = w_rows.len();
        if dw == 0 {
            return invalid("W must have at least one row");
        }
        let periods = w_rows[0].len();
        if periods == 0 {
            return invalid("model has no observations (T = 0)");
        }
        if w_rows.iter().any(|r| r.len() != periods) {
            return invalid("rows of W have unequal length");
        }
        if w_rows.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("W must have finite entries");
        }
        let spec = Self { periods, dw, w: w_rows.concat(), dx, family };
        spec.check_family()?;
        Ok(spec)
    }

    /// Dynamic dyadic network model with dyad-specific effects.
    pub fn network(n: usize, periods: usize, dx: usize) -> Result<Self> {
        if n < 2 || periods == 0 {
            return invalid("network model needs n >= 2 and at least one period");
        }
        let m = n * (n - 1) / 2;
        let total = m * periods;
        let rows = (0..m)
            .map(|k| (0..total).map(|t| if t % m == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(IndexFamily::Network { n, periods }, rows, dx)
    }

    fn check_family(&self) -> Result<()> {
        if let IndexFamily::Network { n, periods } = self.family {
            if n < 2 {
                return invalid("network model needs n >= 2");
            }
            let m = n * (n - 1) / 2;
            if m * periods != self.periods {
                return invalid(format!(
                    "network model with n={n}, periods={periods} needs T={} observations, W has {}",
                    m * periods,
                    self.periods
                ));
            }
        }
        Ok(())
    }

    pub fn with_family(mut self, family: IndexFamily) -> Result<Self> {
        self.family = family;
        self.check_family()?;
        Ok(self)
    }

    pub fn with_dx(mut self, dx: usize) -> Self {
        self.dx = dx;
        self
    }

    /// Number of observations `T`.
    pub fn t(&self) -> usize {
        self.periods
    }

    pub fn dw(&self) -> usize {
        self.dw
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn family(&self) -> IndexFamily {
        self.family
    }

    pub fn w(&self, k: usize, t: usize) -> f64 {
        self.w[k * self.periods + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.dw).map(|k| self.w(k, t)).collect()
    }

    pub fn w_rows(&self) -> Vec<Vec<f64>> {
        self.w.chunks(self.periods).map(<[f64]>::to_vec).collect()
    }

    /// `W` as integers when every entry is integral.
    pub fn integer_w(&self) -> Option<Vec<Vec<i64>>> {
        if self.w.iter().all(|v| v.fract() == 0.0 && v.abs() < 9.0e15) {
            Some(self.w.chunks(self.periods).map(|r| r.iter().map(|&v| v as i64).collect()).collect())
        } else {
            None
        }
    }

    /// True when every `w_t` is a standard basis vector.
    pub fn binary_design(&self) -> bool {
        (0..self.periods).all(|t| {
            let col = self.column(t);
            col.iter().all(|&v| v == 0.0 || v == 1.0) && col.iter().sum::<f64>() == 1.0
        })
    }

    /// For binary designs, the row index `j_t` with `w_t = e_{j_t}`.
    pub fn basis_index(&self) -> Result<Vec<usize>> {
        if !self.binary_design() {
            return Err(Error::NotBinaryDesign);
        }
        Ok((0..self.periods)
            .map(|t| (0..self.dw).position(|k| self.w(k, t) == 1.0).unwrap())
            .collect())
    }

    /// Length of the initial-condition block.
    pub fn y0_len(&self) -> usize {
        match self.family {
            IndexFamily::Static => 0,
            IndexFamily::Ar { p } => p,
            IndexFamily::Network { n, .. } => n * (n - 1) / 2,
        }
    }

    pub fn n_gamma(&self) -> usize {
        match self.family {
            IndexFamily::Static => 0,
            IndexFamily::Ar { p } => p,
            IndexFamily::Network { .. } => 1,
        }
    }

    fn n_delta(&self) -> usize {
        matches!(self.family, IndexFamily::Network { .. }) as usize
    }

    /// Number of common parameters.
    pub fn theta_len(&self) -> usize {
        self.n_gamma() + self.n_delta() + self.dx
    }

    /// Slot names in the order of the flat parameter vector.
    pub fn theta_layout(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.theta_len());
        match self.family {
            IndexFamily::Static => {}
            IndexFamily::Ar { p } => names.extend((1..=p).map(|r| format!("gamma{r}"))),
            IndexFamily::Network { .. } => {
                names.push("gamma".into());
                names.push("delta".into());
            }
        }
        names.extend((1..=self.dx).map(|k| format!("beta{k}")));
        names
    }

    pub fn beta<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.n_gamma() + self.n_delta()..]
    }

    /// Edges per network period; `None` for panel families.
    pub fn dyads_per_period(&self) -> Option<usize> {
        match self.family {
            IndexFamily::Network { n, .. } => Some(n * (n - 1) / 2),
            _ => None,
        }
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_len() {
            return invalid(format!(
                "theta has {} entries, layout {:?} needs {}",
                theta.len(),
                self.theta_layout(),
                self.theta_len()
            ));
        }
        Ok(())
    }

    pub(crate) fn check_path(&self, path: &OutcomePath) -> Result<()> {
        if path.y.len() != self.periods {
            return invalid(format!("path has length {}, model has T={}", path.y.len(), self.periods));
        }
        if path.y0.len() != self.y0_len() {
            return invalid(format!(
                "initial condition has length {}, model needs {}",
                path.y0.len(),
                self.y0_len()
            ));
        }
        if path.y.iter().chain(&path.y0).any(|&v| v > 1) {
            return invalid("outcomes must be 0 or 1");
        }
        Ok(())
    }

    pub(crate) fn check_x(&self, x: &CovariatePath) -> Result<()> {
        if x.dx() != self.dx || x.periods() != self.periods {
            return invalid(format!(
                "covariates are {}x{}, model needs {}x{}",
                x.dx(),
                x.periods(),
                self.dx,
                self.periods
            ));
        }
        Ok(())
    }

    pub(crate) fn check_a(&self, a: &FixedEffect) -> Result<()> {
        if a.0.len() != self.dw {
            return invalid(format!("fixed effect has {} entries, W has {} rows", a.0.len(), self.dw));
        }
        if a.0.iter().any(|v| !v.is_finite()) {
            return invalid("fixed effect must be finite");
        }
        Ok(())
    }

    /// `w_t' A` for 0-based `t`.
    pub fn effect(&self, t: usize, a: &FixedEffect) -> f64 {
        (0..self.dw).map(|k| self.w(k, t) * a.0[k]).sum()
    }

    /// Exact key of the history features `pi_t` reads at 0-based `t`.
    ///
    /// AR(p): bit `r-1` holds `y_{t-r}`. Network: `2 * r + y_prev` where
    /// `y_prev` is the lagged link and `r` the shared-neighbour count.
    /// Static: always 0. `y` must hold at least the outcomes before `t`.
    pub fn lag_key(&self, t: usize, y: &[u8], y0: &[u8]) -> u64 {
        match self.family {
            IndexFamily::Static => 0,
            IndexFamily::Ar { p } => {
                let mut key = 0u64;
                for r in 1..=p {
                    let v = if t >= r { y[t - r] } else { y0[y0.len() + t - r] };
                    key |= (v as u64) << (r - 1);
                }
                key
            }
            IndexFamily::Network { n, .. } => {
                let m = n * (n - 1) / 2;
                let tau = t / m;
                let k = t % m;
                let prev = if tau == 0 { y0 } else { &y[(tau - 1) * m..tau * m] };
                let (i, j) = dyads(n)[k];
                2 * shared_neighbors_ij(prev, n, i, j) as u64 + prev[k] as u64
            }
        }
    }

    /// Index value for a lag key (see [`ModelSpec::lag_key`]).
    pub fn index_from_key(&self, key: u64, x_t: &[f64], theta: &[f64]) -> f64 {
        let xb: f64 = x_t.iter().zip(self.beta(theta)).map(|(x, b)| x * b).sum();
        match self.family {
            IndexFamily::Static => xb,
            IndexFamily::Ar { p } => {
                (1..=p).filter(|r| key >> (r - 1) & 1 == 1).map(|r| theta[r - 1]).sum::<f64>() + xb
            }
            IndexFamily::Network { .. } => {
                theta[0] * (key & 1) as f64 + theta[1] * (key >> 1) as f64 + xb
            }
        }
    }
}

/// Logit index at 1-based period `t`, excluding the `w_t' A` term.
///
/// `history` must contain at least `y_1..y_{t-1}`; `y0` supplies the
/// pre-sample lags.
pub fn index_pi(
    spec: &ModelSpec,
    t: usize,
    history: &[u8],
    y0: &[u8],
    x_t: &[f64],
    theta: &[f64],
) -> Result<f64> {
    if t == 0 || t > spec.t() {
        return Err(Error::Precondition(format!("period {t} outside 1..={}", spec.t())));
    }
    if history.len() < t - 1 {
        return Err(Error::Precondition(format!(
            "history has {} outcomes, period {t} needs {}",
            history.len(),
            t - 1
        )));
    }
    if y0.len() != spec.y0_len() {
        return Err(Error::Precondition(format!(
            "initial condition has length {}, model needs {}",
            y0.len(),
            spec.y0_len()
        )));
    }
    if x_t.len() != spec.dx() {
        return Err(Error::Precondition(format!("x_t has {} entries, model needs {}", x_t.len(), spec.dx())));
    }
    spec.check_theta(theta)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let key = spec.lag_key(t - 1, history, y0);
    Ok(spec.index_from_key(key, x_t, theta))
}

/// `log Pr(Y = y | Y0, X, A)`.
pub fn log_path_probability(
    spec: &ModelSpec,
    path: &OutcomePath,
    x: &CovariatePath,
    theta: &[f64],
    a: &FixedEffect,
) -> Result<f64> {
    spec.check_path(path)?;
    spec.check_x(x)?;
    spec.check_theta(theta)?;
    spec.check_a(a)?;
    Ok(log_path_probability_unchecked(spec, &path.y, &path.y0, x, theta, a))
}

pub(crate) fn log_path_probability_unchecked(
    spec: &ModelSpec,
    y: &[u8],
    y0: &[u8],
    x: &CovariatePath,
    theta: &[f64],
    a: &FixedEffect,
) -> f64 {
    (0..spec.t())
        .map(|t| {
            let eta = spec.index_from_key(spec.lag_key(t, y, y0), x.at(t), theta) + spec.effect(t, a);
            log_bernoulli_logit(y[t], eta)
        })
        .sum()
}

/// `Pr(Y = y | Y0, X, A)`, a value in `(0, 1)`.
pub fn path_probability(
    spec: &ModelSpec,
    path: &OutcomePath,
    x: &CovariatePath,
    theta: &[f64],
    a: &FixedEffect,
) -> Result<f64> {
    log_path_probability(spec, path, x, theta, a).map(f64::exp)
}

/// One-step kernel `Pr(Y_t = y_t | Y^{t-1}, X, A)` at 1-based `t`.
pub fn transition_probability(
    spec: &ModelSpec,
    t: usize,
    path: &OutcomePath,
    x: &CovariatePath,
    theta: &[f64],
    a: &FixedEffect,
) -> Result<f64> {
    let eta = index_pi(spec, t, &path.y, &path.y0, x.at(t - 1), theta)? + spec.effect(t - 1, a);
    let p1 = logistic(eta);
    Ok(if path.y[t - 1] == 1 { p1 } else { 1.0 - p1 })
}

/// `Pr(Y = y1 | ...) / Pr(Y = y2 | ...)` for two paths sharing `y0`.
pub fn likelihood_ratio(
    spec: &ModelSpec,
    y1: &OutcomePath,
    y2: &OutcomePath,
    x: &CovariatePath,
    theta: &[f64],
    a: &FixedEffect,
) -> Result<f64> {
    if y1.y0 != y2.y0 {
        return Err(Error::Precondition("paths must share the initial condition".into()));
    }
    let l1 = log_path_probability(spec, y1, x, theta, a)?;
    let l2 = log_path_probability(spec, y2, x, theta, a)?;
    Ok((l1 - l2).exp())
}

/// Probabilities of all `2^T` paths in lexicographic order.
pub fn all_path_probabilities(
    spec: &ModelSpec,
    y0: &[u8],
    x: &CovariatePath,
    theta: &[f64],
    a: &FixedEffect,
) -> Result<Vec<f64>> {
    let t = spec.t();
    if t > 24 {
        return Err(Error::TooLarge { what: "outcome space".into(), estimate: 2f64.powi(t as i32), limit: 2f64.powi(24) });
    }
    spec.check_path(&OutcomePath::new(vec![0; t], y0.to_vec()))?;
    spec.check_x(x)?;
    spec.check_theta(theta)?;
    spec.check_a(a)?;
    Ok(crate::par::map_range(1 << t, |idx| {
        let y = path_from_index(idx, t);
        log_path_probability_unchecked(spec, &y, y0, x, theta, a).exp()
    }))
}

#[derive(Serialize, Deserialize)]
struct ModelSpecJson {
    family: String,
    #[serde(rename = "T")]
    t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<usize>,
    dx: usize,
    dw: usize,
    /// Row-major `dw x T`.
    #[serde(rename = "W")]
    w: Vec<f64>,
    #[serde(default)]
    theta_layout: Vec<String>,
}

impl Serialize for ModelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (family, p, n, tau) = match self.family {
            IndexFamily::Static => ("static", None, None, None),
            IndexFamily::Ar { p } => ("ar", Some(p), None, None),
            IndexFamily::Network { n, periods } => ("network", None, Some(n), Some(periods)),
        };
        ModelSpecJson {
            family: family.into(),
            t: self.periods,
            p,
            n,
            tau,
            dx: self.dx,
            dw: self.dw,
            w: self.w.clone(),
            theta_layout: self.theta_layout(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ModelSpecJson::deserialize(d)?;
        let family = match raw.family.as_str() {
            "static" => IndexFamily::Static,
            "ar" => IndexFamily::Ar { p: raw.p.ok_or_else(|| D::Error::custom("ar family needs p"))? },
            "network" => IndexFamily::Network {
                n: raw.n.ok_or_else(|| D::Error::custom("network family needs n"))?,
                periods: raw.tau.ok_or_else(|| D::Error::custom("network family needs tau"))?,
            },
            other => return Err(D::Error::custom(format!("unknown family {other:?}"))),
        };
        if raw.dw == 0 || raw.w.len() != raw.dw * raw.t {
            return Err(D::Error::custom(format!(
                "W has {} entries, expected dw*T = {}",
                raw.w.len(),
                raw.dw * raw.t
            )));
        }
        let rows = raw.w.chunks(raw.t).map(<[f64]>::to_vec).collect();
        let spec = ModelSpec::new(family, rows, raw.dx).map_err(D::Error::custom)?;
        if !raw.theta_layout.is_empty() && raw.theta_layout != spec.theta_layout() {
            return Err(D::Error::custom(format!(
                "theta_layout {:?} does not match model layout {:?}",
                raw.theta_layout,
                spec.theta_layout()
            )));
        }
        Ok(spec)
    }
}
