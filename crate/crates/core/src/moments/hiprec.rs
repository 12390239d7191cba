//! Double-double linear algebra for the null-space constructions.
//!
//! The coefficient vectors `c_d` are typically ill-conditioned: relative
//! singular values of `1e-15` occur at `T = 6`, below what a double
//! precision factorisation can separate from rounding noise.

use std::ops::{Add, Mul, Sub};

use twofloat::TwoFloat;

pub(crate) type Dd = TwoFloat;

pub(crate) fn dd(x: f64) -> Dd {
    Dd::from(x)
}

pub(crate) fn to_f64(x: Dd) -> f64 {
    x.hi() + x.lo()
}

/// Full double-double quotient; `TwoFloat`'s own division is only accurate
/// to about `1e-17`.
pub(crate) fn ddiv(a: Dd, b: Dd) -> Dd {
    let bh = b.hi();
    let q1 = a.hi() / bh;
    let r = a - b * q1;
    let q2 = r.hi() / bh;
    let r = r - b * q2;
    let q3 = r.hi() / bh;
    dd(q1) + dd(q2) + dd(q3)
}

fn sqrt(x: Dd) -> Dd {
    if x <= dd(0.0) {
        return dd(0.0);
    }
    let s = x.sqrt();
    s + ddiv(x - s * s, dd(2.0) * s)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Cdd {
    pub re: Dd,
    pub im: Dd,
}

impl Cdd {
    pub fn real(x: Dd) -> Self {
        Self { re: x, im: dd(0.0) }
    }

    pub fn one() -> Self {
        Self::real(dd(1.0))
    }

    pub fn norm_sqr(self) -> Dd {
        self.re * self.re + self.im * self.im
    }

    pub fn div(self, o: Self) -> Self {
        let den = o.norm_sqr();
        Self { re: ddiv(self.re * o.re + self.im * o.im, den), im: ddiv(self.im * o.re - self.re * o.im, den) }
    }

    pub fn inv(self) -> Self {
        Self::one().div(self)
    }

    pub fn scale(self, s: Dd) -> Self {
        Self { re: self.re * s, im: self.im * s }
    }

    pub fn powi(self, k: i64) -> Self {
        let mut base = if k < 0 { self.inv() } else { self };
        let mut e = k.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
}

impl Add for Cdd {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, im: self.im + o.im }
    }
}

impl Sub for Cdd {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, im: self.im - o.im }
    }
}

impl Mul for Cdd {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re - self.im * o.im, im: self.re * o.im + self.im * o.re }
    }
}

/// Scales every row to unit max-norm; zero rows are dropped.
pub(crate) fn normalise_rows(rows: Vec<Vec<Dd>>) -> Vec<Vec<Dd>> {
    rows.into_iter()
        .filter_map(|mut r| {
            let s = r.iter().map(|v| v.abs()).fold(dd(0.0), |a, b| if b > a { b } else { a });
            if s == dd(0.0) {
                return None;
            }
            r.iter_mut().for_each(|v| *v = ddiv(*v, s));
            Some(r)
        })
        .collect()
}

pub(crate) struct QrNull {
    /// Orthonormal null-space vectors.
    pub basis: Vec<Vec<f64>>,
    pub rank: usize,
    /// `|R_kk| / |R_00|` for the retained pivots.
    pub pivots: Vec<f64>,
    /// Same ratio for the first rejected pivot.
    pub rejected: Option<f64>,
}

/// Null space of the matrix with the given rows (each of length `cols`),
/// from a column-pivoted Householder QR of its transpose.
pub(crate) fn nullspace_dd(rows: &[Vec<Dd>], cols: usize, rel_tol: f64) -> QrNull {
    let mut a: Vec<Vec<Dd>> = rows.to_vec();
    let n = a.len();
    let m = cols;
    let mut reflectors: Vec<(Vec<Dd>, Dd)> = Vec::new();
    let mut pivots = Vec::new();
    let mut rejected = None;
    let mut top = dd(0.0);
    for k in 0..n.min(m) {
        let norm2 = |v: &[Dd]| v[k..].iter().fold(dd(0.0), |acc, &x| acc + x * x);
        let (best, best_norm2) = (k..n)
            .map(|j| (j, norm2(&a[j])))
            .fold((k, dd(-1.0)), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        a.swap(k, best);
        let nk = sqrt(best_norm2);
        if k == 0 {
            top = nk;
        }
        if top == dd(0.0) || to_f64(nk / top) <= rel_tol {
            rejected = Some(if top == dd(0.0) { 0.0 } else { to_f64(nk / top) });
            break;
        }
        pivots.push(to_f64(nk / top));
        let x0 = a[k][k];
        let alpha = if x0 > dd(0.0) { -nk } else { nk };
        let mut v: Vec<Dd> = a[k][k..].to_vec();
        v[0] = v[0] - alpha;
        let vn2 = v.iter().fold(dd(0.0), |acc, &x| acc + x * x);
        let beta = ddiv(dd(2.0), vn2);
        for col in a.iter_mut().skip(k + 1) {
            let s = v.iter().zip(&col[k..]).fold(dd(0.0), |acc, (&p, &q)| acc + p * q) * beta;
            for (c, &vi) in col[k..].iter_mut().zip(&v) {
                *c = *c - s * vi;
            }
        }
        reflectors.push((v, beta));
    }
    let rank = reflectors.len();
    let basis = (rank..m)
        .map(|j| {
            let mut e = vec![dd(0.0); m];
            e[j] = dd(1.0);
            for (k, (v, beta)) in reflectors.iter().enumerate().rev() {
                let s = v.iter().zip(&e[k..]).fold(dd(0.0), |acc, (&p, &q)| acc + p * q) * *beta;
                for (c, &vi) in e[k..].iter_mut().zip(v) {
                    *c = *c - s * vi;
                }
            }
            e.into_iter().map(to_f64).collect()
        })
        .collect();
    QrNull { basis, rank, pivots, rejected }
}
