//! One-dimensional reference solvers for data that depend on `x` only.
//!
//! For such data the periodic 5-point problem reduces exactly to the periodic
//! 3-point problem along `x`, so these solvers give an independent check of
//! the 2-D code, and at high resolution an oracle for the continuum problem.
//! They share no code with the library: the obstacle problem is solved as a
//! convex hull and Newton systems by a direct cyclic tridiagonal solve.

#![allow(dead_code)]

pub const KAPPA: f64 = 1.0 / (4.0 * std::f64::consts::PI);

pub fn sample(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..n).map(|i| f(i as f64 / n as f64)).collect()
}

/// Solves the tridiagonal system `a x_{i-1} + b x_i + c x_{i+1} = d` (non-periodic).
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve with constant off-diagonal `off` (Sherman-Morrison).
fn cyclic(diag: &[f64], off: f64, d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= off * off / gamma;
    let a = vec![off; n];
    let c = vec![off; n];
    let y = thomas(&a, &b, &c, d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = off;
    let z = thomas(&a, &b, &c, &u);
    let fact = (y[0] + off * y[n - 1] / gamma) / (1.0 + z[0] + off * z[n - 1] / gamma);
    y.iter().zip(&z).map(|(y, z)| y - fact * z).collect()
}

fn second_difference(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| (u[(i + n - 1) % n] - 2.0 * u[i] + u[(i + 1) % n]) / (h * h))
        .collect()
}

pub struct Obstacle1d {
    pub u: Vec<f64>,
    pub contact: Vec<bool>,
    /// `f + KAPPA u''`.
    pub ma: Vec<f64>,
}

/// Largest `u <= 0` with `f + KAPPA u'' >= 0` on the periodic 1-D grid.
///
/// Writing `u = U0 + v` with `U0'' = -f / KAPPA` (discretely, on the integers),
/// the constraint says `v` is a convex sequence, so the answer is the lower
/// convex hull of `-U0`. The hull is taken over three periods; `-U0` differs
/// between periods by an affine function, so the middle period is periodic.
pub fn obstacle_1d(f: &[f64]) -> Obstacle1d {
    let n = f.len();
    let h = 1.0 / n as f64;
    let s = h * h / KAPPA;
    let total = 3 * n;
    // U0 on indices -n .. 2n, built outward from index 0 with U0(0) = U0(1) = 0
    let mut u0 = vec![0.0; total];
    let at = |i: usize| f[i % n];
    for i in n + 2..total {
        // U0(i) = 2 U0(i-1) - U0(i-2) - s f(i-1)
        u0[i] = 2.0 * u0[i - 1] - u0[i - 2] - s * at(i - 1);
    }
    for i in (0..n).rev() {
        u0[i] = 2.0 * u0[i + 1] - u0[i + 2] - s * at(i + 1);
    }
    let y: Vec<f64> = u0.iter().map(|v| -v).collect();
    // lower hull by monotone chain
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..total {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b - a) as f64 * (y[i] - y[a]) - (y[b] - y[a]) * (i - a) as f64;
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut v = vec![0.0; total];
    let mut on_hull = vec![false; total];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        on_hull[a] = true;
        on_hull[b] = true;
        for i in a..=b {
            v[i] = y[a] + (y[b] - y[a]) * (i - a) as f64 / (b - a) as f64;
        }
    }
    let u: Vec<f64> = (n..2 * n).map(|i| (v[i] + u0[i]).min(0.0)).collect();
    let contact: Vec<bool> = (n..2 * n).map(|i| on_hull[i]).collect();
    let lap = second_difference(&u, h);
    let ma = (0..n).map(|k| f[k] + KAPPA * lap[k]).collect();
    Obstacle1d { u, contact, ma }
}

/// Newton for `f + KAPPA u'' = e^{beta u} g` on the periodic 1-D grid.
pub fn newton_1d(f: &[f64], g: &[f64], beta: f64, init: Option<&[f64]>) -> Vec<f64> {
    let n = f.len();
    let h = 1.0 / n as f64;
    let mean_f = f.iter().sum::<f64>() / n as f64;
    let mut u: Vec<f64> = match init {
        Some(u) => u.to_vec(),
        None => vec![mean_f.ln() / beta; n],
    };
    let residual = |u: &[f64]| -> Vec<f64> {
        let lap = second_difference(u, h);
        (0..n)
            .map(|k| f[k] + KAPPA * lap[k] - (beta * u[k]).exp() * g[k])
            .collect()
    };
    let sup = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut r = residual(&u);
    for _ in 0..200 {
        if sup(&r) < 1e-11 {
            return u;
        }
        // J = KAPPA D2 - diag(beta e^{beta u} g); solve J delta = -r
        let off = KAPPA / (h * h);
        let diag: Vec<f64> = (0..n)
            .map(|k| -2.0 * off - beta * (beta * u[k]).exp() * g[k])
            .collect();
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = cyclic(&diag, off, &rhs);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let rt = residual(&trial);
            if sup(&rt) < sup(&r) || step < 1e-9 {
                u = trial;
                r = rt;
                break;
            }
            step *= 0.5;
        }
    }
    panic!("1-D Newton did not converge (residual {:e})", sup(&r));
}

/// Broadcasts a 1-D profile along `y`.
pub fn broadcast(profile: &[f64]) -> Vec<f64> {
    let n = profile.len();
    let mut out = Vec::with_capacity(n * n);
    for &v in profile {
        out.extend(std::iter::repeat(v).take(n));
    }
    out
}

/// `max_i |a[i * n_a] - b[i * stride]|` comparing a 2-D field (`n x n`, constant in
/// `y`) against a finer 1-D profile with `stride = fine / n`.
pub fn compare_to_profile(field: &[f64], n: usize, profile: &[f64]) -> f64 {
    let stride = profile.len() / n;
    assert_eq!(stride * n, profile.len());
    (0..n)
        .map(|i| (0..n).map(|j| (field[i * n + j] - profile[i * stride]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}
