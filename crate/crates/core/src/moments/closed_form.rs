//! Closed-form moment functions and the evaluator interface used by GMM.

use super::{MomentFunction, Provenance};
use crate::error::{invalid, Result};
use crate::model::{dyads, path_from_index, shared_neighbors_ij, CovariatePath, IndexFamily, ModelSpec, OutcomePath};

/// Stacked moment functions `m(y, y0, x, theta)` evaluated unit by unit.
pub trait MomentSet: Sync {
    fn num_moments(&self) -> usize;

    /// Writes the moments of one unit into `out` (length `num_moments`).
    fn eval(&self, path: &OutcomePath, x: &CovariatePath, theta: &[f64], out: &mut [f64]);
}

/// AR(2), `T = 3`, no covariates, `y0 = (y_{-1}, y_0) = (0, 0)`.
fn ar2_m00(y: &[u8], g1: f64) -> f64 {
    match y {
        [0, 1, 1] => (-g1).exp(),
        [0, 1, 0] => 1.0,
        [1, 0, _] => -1.0,
        _ => 0.0,
    }
}

/// AR(2), `T = 3`, no covariates, `y0 = (0, 1)`.
fn ar2_m01(y: &[u8], g1: f64, g2: f64) -> f64 {
    match y {
        [1, 0, 0] => (g2 - g1).exp(),
        [1, 0, 1] => g2.exp(),
        [0, 1, _] => -1.0,
        _ => 0.0,
    }
}

fn flip(y: &[u8]) -> Vec<u8> {
    y.iter().map(|v| 1 - v).collect()
}

/// Moment value for the AR(2) `T = 3` model at any initial condition
/// (`y0` oldest first). The cases `(1,1)` and `(1,0)` use the outcome flip,
/// which maps the model onto itself with `A -> -A - gamma1 - gamma2`.
pub fn ar2_t3_value(y: &[u8], y0: &[u8], g1: f64, g2: f64) -> f64 {
    match y0 {
        [0, 0] => ar2_m00(y, g1),
        [0, 1] => ar2_m01(y, g1, g2),
        [1, 1] => ar2_m00(&flip(y), g1),
        [1, 0] => ar2_m01(&flip(y), g1, g2),
        _ => 0.0,
    }
}

/// The AR(2) `T = 3` moment function for one initial condition.
pub fn closed_form_ar2_t3(y0: &[u8], theta: &[f64], allow_symmetry: bool) -> Result<MomentFunction> {
    if theta.len() != 2 {
        return invalid("theta must be (gamma1, gamma2)");
    }
    match y0 {
        [0, 0] | [0, 1] => {}
        [1, 1] | [1, 0] if allow_symmetry => {}
        [1, 1] | [1, 0] => return invalid("initial condition needs the symmetry transform; enable it explicitly"),
        _ => return invalid("initial condition must be two binary values"),
    }
    let (g1, g2) = (theta[0], theta[1]);
    Ok(MomentFunction::tabulate(3, Provenance::ClosedForm(format!("ar2_t3_y0_{}{}", y0[0], y0[1])), |y| {
        ar2_t3_value(y, y0, g1, g2)
    }))
}

/// First quarterly moment with `xb[t-1] = x_t' beta`.
fn quarterly_m1_core(y: &[u8], y0: u8, xb: &[f64; 6], gamma: f64) -> f64 {
    let f = |v: u8| v as f64;
    let (y1, y2, y4, y5, y6) = (f(y[0]), f(y[1]), f(y[3]), f(y[4]), f(y[5]));
    let x26 = xb[1] - xb[5];
    let x51 = xb[4] - xb[0];
    // the weight selected by the indicator over (y3, y4)
    let w = 1.0 - (-gamma * f(y0) + gamma * y4 + x51).exp();
    let phi_a = (1.0 - y2) * (1.0 - y5) * (y6 * (gamma * y1 + x26)).exp();
    let phi_b = y2 * (1.0 - y5) * ((1.0 - y6) * (-gamma * y1 - x26)).exp();
    (phi_a + phi_b) * (1.0 - w * y1) - (1.0 - y1)
}

/// `(m1, m2)` for the quarterly AR(1) model with `T = 6`; `m2` is `m1` at
/// `(1 - y, 1 - y0, -x)`.
pub fn quarterly_t6_values(y: &[u8], y0: u8, x: &CovariatePath, theta: &[f64]) -> (f64, f64) {
    let gamma = theta[0];
    let beta = &theta[1..];
    let mut xb = [0.0; 6];
    for (t, v) in xb.iter_mut().enumerate() {
        *v = x.at(t).iter().zip(beta).map(|(a, b)| a * b).sum();
    }
    let neg = xb.map(|v| -v);
    (quarterly_m1_core(y, y0, &xb, gamma), quarterly_m1_core(&flip(y), 1 - y0, &neg, gamma))
}

fn check_quarterly(spec: &ModelSpec) -> Result<()> {
    let quarterly: Vec<Vec<f64>> = (0..4).map(|q| (0..6).map(|s| (s % 4 == q) as u8 as f64).collect()).collect();
    if spec.family() != (IndexFamily::Ar { p: 1 }) || spec.w_rows() != quarterly {
        return invalid("quarterly moments need an AR(1) model with T = 6 and quarter indicators");
    }
    Ok(())
}

/// The two quarterly moment functions for one `(y0, X)` cell.
pub fn closed_form_quarterly_t6(
    spec: &ModelSpec,
    theta: &[f64],
    y0: u8,
    x: &CovariatePath,
) -> Result<(MomentFunction, MomentFunction)> {
    check_quarterly(spec)?;
    spec.check_x(x)?;
    spec.check_theta(theta)?;
    if y0 > 1 {
        return invalid("y0 must be 0 or 1");
    }
    let m1 = MomentFunction::tabulate(6, Provenance::ClosedForm("quarterly_t6_m1".into()), |y| {
        quarterly_t6_values(y, y0, x, theta).0
    });
    let m2 = MomentFunction::tabulate(6, Provenance::ClosedForm("quarterly_t6_m2".into()), |y| {
        quarterly_t6_values(y, y0, x, theta).1
    });
    Ok((m1, m2))
}

/// Transition moment `m_y` for reference network `yref` in a three-period
/// network model. `theta = (gamma, delta, beta)`.
pub fn network_transition_value(n: usize, yref: &[u8], path: &OutcomePath, x: &CovariatePath, theta: &[f64]) -> f64 {
    let m = n * (n - 1) / 2;
    let (gamma, delta, beta) = (theta[0], theta[1], &theta[2..]);
    let net = |tau: usize| -> &[u8] { if tau == 0 { &path.y0 } else { &path.y[(tau - 1) * m..tau * m] } };
    let xb = |tau: usize, k: usize| -> f64 {
        x.at((tau - 1) * m + k).iter().zip(beta).map(|(a, b)| a * b).sum()
    };
    let ds = dyads(n);
    let r = |g: &[u8], k: usize| shared_neighbors_ij(g, n, ds[k].0, ds[k].1) as f64;
    let ind1 = (net(1) == yref) as u8 as f64;
    if net(2) != yref {
        return -ind1;
    }
    let (y0, y1, y3) = (net(0), net(1), net(3));
    let mut e = 0.0;
    for k in 0..m {
        let yk = yref[k] as f64;
        let rk = r(yref, k);
        e += (y3[k] as f64 - yk) * (gamma * (y1[k] as f64 - yk) + delta * (r(y1, k) - rk) - (xb(3, k) - xb(2, k)));
        e -= (y1[k] as f64 - yk) * (gamma * (y0[k] as f64 - yk) + delta * (r(y0, k) - rk) - (xb(3, k) - xb(1, k)));
    }
    e.exp() - ind1
}

fn check_network3(spec: &ModelSpec) -> Result<usize> {
    match spec.family() {
        IndexFamily::Network { n, periods: 3 } => Ok(n),
        _ => invalid("transition moments need a three-period network model"),
    }
}

/// `m_y` tabulated over all paths for one `(Y0, X)` cell.
pub fn closed_form_network_transition(
    spec: &ModelSpec,
    yref: &[u8],
    y0: &[u8],
    x: &CovariatePath,
    theta: &[f64],
) -> Result<MomentFunction> {
    let n = check_network3(spec)?;
    spec.check_x(x)?;
    spec.check_theta(theta)?;
    let m = n * (n - 1) / 2;
    if yref.len() != m || y0.len() != m {
        return invalid(format!("networks must have {m} dyads"));
    }
    super::check_paths(spec.t())?;
    let name = format!("network_m_{}", yref.iter().map(|v| v.to_string()).collect::<String>());
    Ok(MomentFunction::tabulate(spec.t(), Provenance::ClosedForm(name), |y| {
        network_transition_value(n, yref, &OutcomePath::new(y.to_vec(), y0.to_vec()), x, theta)
    }))
}

/// AR(2), `T = 3`: one moment per initial condition, zero unless the unit's
/// `y0` matches. Order `(0,0), (0,1), (1,0), (1,1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ar2T3Moments;

impl MomentSet for Ar2T3Moments {
    fn num_moments(&self) -> usize {
        4
    }

    fn eval(&self, path: &OutcomePath, _x: &CovariatePath, theta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let slot = 2 * path.y0[0] as usize + path.y0[1] as usize;
        out[slot] = ar2_t3_value(&path.y, &path.y0, theta[0], theta[1]);
    }
}

/// Quarterly AR(1), `T = 6`: `(m1, m2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuarterlyT6Moments;

impl MomentSet for QuarterlyT6Moments {
    fn num_moments(&self) -> usize {
        2
    }

    fn eval(&self, path: &OutcomePath, x: &CovariatePath, theta: &[f64], out: &mut [f64]) {
        let (a, b) = quarterly_t6_values(&path.y, path.y0[0], x, theta);
        out[0] = a;
        out[1] = b;
    }
}

/// Three-period network: `m_y` for every reference network `y`.
#[derive(Debug, Clone)]
pub struct NetworkTransitionMoments {
    n: usize,
    refs: Vec<Vec<u8>>,
}

impl NetworkTransitionMoments {
    pub fn new(n: usize) -> Self {
        let m = n * (n - 1) / 2;
        Self { n, refs: (0..1usize << m).map(|i| path_from_index(i, m)).collect() }
    }
}

impl MomentSet for NetworkTransitionMoments {
    fn num_moments(&self) -> usize {
        self.refs.len()
    }

    fn eval(&self, path: &OutcomePath, x: &CovariatePath, theta: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.refs) {
            *o = network_transition_value(self.n, r, path, x, theta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{moment_rank, verify_moment};
    use super::*;
    use crate::model::FixedEffect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ar2_spec() -> ModelSpec {
        ModelSpec::new(IndexFamily::Ar { p: 2 }, vec![vec![1.0; 3]], 0).unwrap()
    }

    fn quarterly_spec(dx: usize) -> ModelSpec {
        let w = (0..4).map(|q| (0..6).map(|s| (s % 4 == q) as u8 as f64).collect()).collect();
        ModelSpec::new(IndexFamily::Ar { p: 1 }, w, dx).unwrap()
    }

    fn grid(rng: &mut ChaCha8Rng, dw: usize, k: usize) -> Vec<FixedEffect> {
        (0..k).map(|_| FixedEffect((0..dw).map(|_| rng.random_range(-5.0..5.0)).collect())).collect()
    }

    #[test]
    fn ar2_printed_values() {
        let m = closed_form_ar2_t3(&[0, 0], &[0.5, -0.3], false).unwrap();
        assert_eq!(m.value(&[0, 1, 0]), 1.0);
        assert_eq!(m.value(&[1, 0, 0]), -1.0);
        assert_eq!(m.value(&[1, 0, 1]), -1.0);
        let m = closed_form_ar2_t3(&[0, 1], &[0.5, -0.3], false).unwrap();
        assert_eq!(m.value(&[1, 0, 1]), (-0.3f64).exp());
        assert!(closed_form_ar2_t3(&[1, 1], &[0.5, -0.3], false).is_err());
    }

    #[test]
    fn ar2_moments_hold_for_all_initial_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ar2_spec();
        let x = CovariatePath::zeros(0, 3);
        for y0 in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            for _ in 0..20 {
                let theta = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let m = closed_form_ar2_t3(&y0, &theta, true).unwrap();
                let e = verify_moment(&m, &spec, &y0, &x, &theta, &grid(&mut rng, 1, 10)).unwrap();
                assert!(e < 1e-12, "y0={y0:?} e={e}");
            }
        }
    }

    #[test]
    fn ar2_fair_coin_expectation_is_zero() {
        let m = closed_form_ar2_t3(&[0, 0], &[0.0, 0.0], false).unwrap();
        let total: f64 = m.coefficients.iter().sum::<f64>() / 8.0;
        assert!(total.abs() < 1e-15);
    }

    /// The explicit thirteen-case form of `m1`.
    fn m1_display(y: &[u8], y0: u8, xb: &[f64; 6], g: f64) -> f64 {
        let y0 = y0 as f64;
        let x51 = xb[4] - xb[0];
        let x26 = xb[1] - xb[5];
        let x62 = -x26;
        let key5 = (y[0], y[1], y[3], y[4], y[5]);
        match key5 {
            (1, 0, 1, 0, 1) => (g * ((1.0 - y0) + 1.0) + x51 + x26).exp(),
            (1, 0, 0, 0, 1) => (g * (1.0 - y0) + x51 + x26).exp(),
            (1, 0, 1, 0, 0) => (g * (1.0 - y0) + x51).exp(),
            (1, 0, 0, 0, 0) => (-g * y0 + x51).exp(),
            (1, 1, 1, 0, 0) => (-g * y0 + x51 + x62).exp(),
            (1, 1, 0, 0, 0) => (-g * (1.0 + y0) + x51 + x62).exp(),
            (1, 1, 1, 0, 1) => (g * (1.0 - y0) + x51).exp(),
            (1, 1, 0, 0, 1) => (-g * y0 + x51).exp(),
            _ => match (y[0], y[1], y[4], y[5]) {
                (0, 0, 0, 1) => x26.exp() - 1.0,
                (0, 0, 1, _) => -1.0,
                (0, 1, 0, 0) => x62.exp() - 1.0,
                (0, 1, 1, _) => -1.0,
                _ => 0.0,
            },
        }
    }

    #[test]
    fn quarterly_components_match_case_display() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let xb: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let g = rng.random_range(-2.0..2.0);
            for idx in 0..64 {
                let y = path_from_index(idx, 6);
                for y0 in 0..2 {
                    let a = quarterly_m1_core(&y, y0, &xb, g);
                    let b = m1_display(&y, y0, &xb, g);
                    assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "y={y:?} y0={y0}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn quarterly_moments_valid_and_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = quarterly_spec(1);
        for _ in 0..10 {
            let x = CovariatePath::from_rows(&(0..6).map(|_| vec![rng.random_range(-1.0..1.0)]).collect::<Vec<_>>())
                .unwrap();
            let theta = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            for y0 in 0..2u8 {
                let (m1, m2) = closed_form_quarterly_t6(&spec, &theta, y0, &x).unwrap();
                let g = grid(&mut rng, 4, 10);
                assert!(verify_moment(&m1, &spec, &[y0], &x, &theta, &g).unwrap() < 1e-10);
                assert!(verify_moment(&m2, &spec, &[y0], &x, &theta, &g).unwrap() < 1e-10);
                assert_eq!(moment_rank(&[m1, m2]), 2);
            }
        }
    }

    #[test]
    fn quarterly_m2_is_flipped_m1() {
        let spec = quarterly_spec(1);
        let x = CovariatePath::from_rows(&(0..6).map(|t| vec![0.1 * t as f64]).collect::<Vec<_>>()).unwrap();
        let theta = [0.4, 0.8];
        let (m1, _) = closed_form_quarterly_t6(&spec, &theta, 1, &x.negated()).unwrap();
        let (_, m2) = closed_form_quarterly_t6(&spec, &theta, 0, &x).unwrap();
        for idx in 0..64 {
            let y = path_from_index(idx, 6);
            assert_eq!(m2.value(&y), m1.value(&flip(&y)));
        }
    }

    #[test]
    fn network_moment_null_parameters() {
        let spec = ModelSpec::network(3, 3, 1).unwrap();
        let x = CovariatePath::from_rows(&vec![vec![0.7]; 9]).unwrap();
        let yref = [1, 0, 1];
        let m = closed_form_network_transition(&spec, &yref, &[0, 0, 1], &x, &[0.0, 0.0, 0.0]).unwrap();
        for idx in 0..512 {
            let y = path_from_index(idx, 9);
            let expect = (y[3..6] == yref) as u8 as f64 - (y[0..3] == yref) as u8 as f64;
            assert_eq!(m.value(&y), expect);
        }
    }

    #[test]
    fn network_moments_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ModelSpec::network(3, 3, 1).unwrap();
        for _ in 0..5 {
            let x = CovariatePath::from_rows(&(0..9).map(|_| vec![rng.random_range(-1.0..1.0)]).collect::<Vec<_>>())
                .unwrap();
            let theta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y0: Vec<u8> = (0..3).map(|_| rng.random_range(0..2)).collect();
            for r in 0..8 {
                let yref = path_from_index(r, 3);
                let m = closed_form_network_transition(&spec, &yref, &y0, &x, &theta).unwrap();
                assert!(verify_moment(&m, &spec, &y0, &x, &theta, &grid(&mut rng, 3, 5)).unwrap() < 1e-10);
            }
        }
    }
}
