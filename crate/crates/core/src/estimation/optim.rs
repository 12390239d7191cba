//! Small dense optimisers: finite differences and a BFGS minimiser.

use nalgebra::{DMatrix, DVector};

/// Central-difference step for coordinate value `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = fd_step(x[j]);
            p[j] = x[j] + h;
            let up = f(&p);
            p[j] = x[j] - h;
            let down = f(&p);
            p[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of a vector function, `rows = f(x).len()`.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], rows: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut p = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        p[j] = x[j] + h;
        let up = f(&p);
        p[j] = x[j] - h;
        let down = f(&p);
        p[j] = x[j];
        for i in 0..rows {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// BFGS on `f` with finite-difference gradients and Armijo backtracking.
///
/// `reset` supplies the inverse-Hessian guess at a point (identity when it
/// returns `None`); it is used at start and on every restart, which happens
/// when the search direction is not a descent direction or the line search
/// fails.
pub fn bfgs(
    f: &dyn Fn(&[f64]) -> f64,
    reset: &dyn Fn(&[f64]) -> Option<DMatrix<f64>>,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Minimum {
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = fd_gradient(f, &x);
    let fresh = |x: &[f64]| reset(x).unwrap_or_else(|| DMatrix::identity(k, k));
    let mut hinv = fresh(&x);
    let mut restarts = 0;
    let mut just_reset = true;
    let mut iterations = 0;
    while iterations < max_iter && norm(&g) >= tol && fx.is_finite() {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        let mut slope = dir.dot(&gv);
        if !(slope < 0.0) {
            if !just_reset {
                hinv = fresh(&x);
                restarts += 1;
                just_reset = true;
                continue;
            }
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if just_reset {
                break;
            }
            hinv = fresh(&x);
            restarts += 1;
            just_reset = true;
            continue;
        };
        let gn = fd_gradient(f, &xn);
        let s = DVector::from_iterator(k, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(k, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - rho * &s * yv.transpose();
            let right = &i - rho * &yv * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let stalled = (fx - fnew).abs() <= 1e-15 * fx.abs().max(1e-300) && norm(s.as_slice()) <= 1e-14;
        x = xn;
        fx = fnew;
        g = gn;
        just_reset = false;
        if stalled {
            break;
        }
    }
    let grad_norm = norm(&g);
    Minimum { converged: grad_norm < tol && fx.is_finite(), x, value: fx, grad_norm, iterations, restarts }
}
