//! Discrete calculus on the unit-area flat torus.
//!
//! Node `(i, j)` sits at `(x, y) = (i h, j h)` with `h = 1/N`; values are stored
//! row-major with `i` as the row index. The Laplacian is the periodic 5-point
//! stencil, which is diagonal in the discrete Fourier basis with eigenvalue
//! `-(4/h^2) (sin^2(pi k/N) + sin^2(pi l/N))` on mode `(k, l)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::KAPPA;

/// Relative tolerance on the mean of a Poisson right-hand side.
pub const POISSON_MEAN_TOL: f64 = 1e-9;

struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `(4/h^2) sin^2(pi k / N)`, the negated 1-D stencil eigenvalue of mode `k`.
    symbol: Vec<f64>,
}

/// Periodic `N x N` grid on the unit torus.
#[derive(Clone)]
pub struct TorusGrid {
    n: usize,
    h: f64,
    spectral: Arc<Spectral>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.n)
            .field("h", &self.h)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

/// A real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    n: usize,
    values: Vec<f64>,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::GridTooSmall(n));
        }
        let mut planner = FftPlanner::new();
        let h = 1.0 / n as f64;
        let symbol = (0..n)
            .map(|k| {
                let s = (PI * k as f64 / n as f64).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        let spectral = Spectral {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            symbol,
        };
        Ok(Self {
            n,
            h,
            spectral: Arc::new(spectral),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Number of nodes, `N^2`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Coordinates of node `(i, j)`.
    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h, j as f64 * self.h)
    }

    /// Nearest node to `(x, y)` after reduction mod 1, with the snap distance.
    pub fn snap(&self, x: f64, y: f64) -> ((usize, usize), f64) {
        let n = self.n as f64;
        let fi = (x.rem_euclid(1.0) * n).round();
        let fj = (y.rem_euclid(1.0) * n).round();
        let i = (fi as usize) % self.n;
        let j = (fj as usize) % self.n;
        let dx = fi / n - x.rem_euclid(1.0);
        let dy = fj / n - y.rem_euclid(1.0);
        ((i, j), dx.hypot(dy))
    }

    /// The four periodic neighbours of `(i, j)`: west, east, south, north in `i`/`j`.
    #[inline]
    pub fn neighbors(&self, i: usize, j: usize) -> [usize; 4] {
        let n = self.n;
        let im = if i == 0 { n - 1 } else { i - 1 };
        let ip = if i + 1 == n { 0 } else { i + 1 };
        let jm = if j == 0 { n - 1 } else { j - 1 };
        let jp = if j + 1 == n { 0 } else { j + 1 };
        [
            self.idx(im, j),
            self.idx(ip, j),
            self.idx(i, jm),
            self.idx(i, jp),
        ]
    }

    pub fn zeros(&self) -> ScalarField {
        self.constant(0.0)
    }

    pub fn constant(&self, c: f64) -> ScalarField {
        ScalarField {
            n: self.n,
            values: vec![c; self.len()],
        }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut values = Vec::with_capacity(self.len());
        for i in 0..self.n {
            for j in 0..self.n {
                let (x, y) = self.coords(i, j);
                values.push(f(x, y));
            }
        }
        ScalarField { n: self.n, values }
    }

    pub fn field_from_vec(&self, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(ScalarField { n: self.n, values })
    }

    pub fn check(&self, f: &ScalarField) -> Result<()> {
        if f.n != self.n {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// 5-point periodic Laplacian.
    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let mut out = vec![0.0; self.len()];
        self.laplacian_into(&f.values, &mut out);
        ScalarField {
            n: self.n,
            values: out,
        }
    }

    /// Slice form of [`laplacian`](Self::laplacian), writing into `out`.
    pub fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        for i in 0..n {
            let im = if i == 0 { n - 1 } else { i - 1 };
            let ip = if i + 1 == n { 0 } else { i + 1 };
            let row = &f[i * n..(i + 1) * n];
            let up = &f[im * n..(im + 1) * n];
            let down = &f[ip * n..(ip + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let jm = if j == 0 { n - 1 } else { j - 1 };
                let jp = if j + 1 == n { 0 } else { j + 1 };
                dst[j] = (up[j] + down[j] + row[jm] + row[jp] - 4.0 * row[j]) * inv_h2;
            }
        }
    }

    /// `cell_area * sum(values)`.
    pub fn integrate(&self, f: &ScalarField) -> f64 {
        self.cell_area() * f.values.iter().sum::<f64>()
    }

    /// Zero-mean solution of `lap(u) = rhs`.
    ///
    /// Fails with [`Error::NonZeroMean`] unless `|integrate(rhs)|` is below
    /// `POISSON_MEAN_TOL * max(1, integrate(|rhs|))`.
    pub fn poisson_solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.check(rhs)?;
        let mean = self.integrate(rhs);
        let scale = self.cell_area() * rhs.values.iter().map(|v| v.abs()).sum::<f64>();
        let tol = POISSON_MEAN_TOL * scale.max(1.0);
        if mean.abs() > tol {
            return Err(Error::NonZeroMean { mean, tol });
        }
        let values = self.spectral_apply(&rhs.values, |s| if s == 0.0 { 0.0 } else { -1.0 / s });
        Ok(ScalarField { n: self.n, values })
    }

    /// Solves `(-KAPPA lap + shift) u = rhs` for `shift > 0`.
    pub fn shifted_solve(&self, rhs: &[f64], shift: f64) -> Vec<f64> {
        debug_assert!(shift > 0.0);
        self.spectral_apply(rhs, |s| 1.0 / (KAPPA * s + shift))
    }

    /// Multiplies mode `(k, l)` by `multiplier(symbol_k + symbol_l)`.
    fn spectral_apply(&self, rhs: &[f64], multiplier: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n;
        let sp = &self.spectral;
        let mut buf: Vec<Complex64> = rhs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = vec![Complex64::default(); sp.forward.get_inplace_scratch_len()];
        sp.forward.process_with_scratch(&mut buf, &mut scratch);
        transpose(&mut buf, n);
        sp.forward.process_with_scratch(&mut buf, &mut scratch);
        // buf is now indexed [l][k]; the symbol is symmetric in (k, l).
        for l in 0..n {
            for k in 0..n {
                let m = multiplier(sp.symbol[k] + sp.symbol[l]);
                buf[l * n + k] *= m;
            }
        }
        let mut scratch = vec![Complex64::default(); sp.inverse.get_inplace_scratch_len()];
        sp.inverse.process_with_scratch(&mut buf, &mut scratch);
        transpose(&mut buf, n);
        sp.inverse.process_with_scratch(&mut buf, &mut scratch);
        let norm = 1.0 / (n * n) as f64;
        buf.iter().map(|c| c.re * norm).collect()
    }

    /// Max over nodes of the Euclidean norm of the centered-difference gradient.
    pub fn grad_sup_norm(&self, f: &ScalarField) -> f64 {
        let mut worst: f64 = 0.0;
        let inv = 0.5 / self.h;
        for i in 0..self.n {
            for j in 0..self.n {
                let [w, e, s, nn] = self.neighbors(i, j);
                let gx = (f.values[e] - f.values[w]) * inv;
                let gy = (f.values[nn] - f.values[s]) * inv;
                worst = worst.max(gx.hypot(gy));
            }
        }
        worst
    }

    /// Largest absolute pure second difference `|f_E - 2 f_C + f_W| / h^2` over both axes.
    pub fn second_difference_sup(&self, f: &ScalarField) -> f64 {
        let mut worst: f64 = 0.0;
        let inv = 1.0 / (self.h * self.h);
        for i in 0..self.n {
            for j in 0..self.n {
                let c = f.values[self.idx(i, j)];
                let [w, e, s, nn] = self.neighbors(i, j);
                let dxx = (f.values[e] - 2.0 * c + f.values[w]) * inv;
                let dyy = (f.values[nn] - 2.0 * c + f.values[s]) * inv;
                worst = worst.max(dxx.abs()).max(dyy.abs());
            }
        }
        worst
    }

    /// Density of `MA(u) = (f_theta + KAPPA lap u) dA`.
    pub fn ma_density(&self, f_theta: &ScalarField, u: &ScalarField) -> ScalarField {
        let mut out = self.laplacian(u);
        for (o, f) in out.values.iter_mut().zip(&f_theta.values) {
            *o = f + KAPPA * *o;
        }
        out
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

impl ScalarField {
    /// Wraps `n * n` values in grid order (`k = i * n + j`).
    pub fn from_parts(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max - min`.
    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            n: self.n,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.n, other.n, "fields live on different grids");
        ScalarField {
            n: self.n,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    pub fn shift(&self, c: f64) -> ScalarField {
        self.map(|v| v + c)
    }

    /// Index of the smallest value (first one on ties).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = k;
            }
        }
        best
    }

    /// Index of the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        best
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.values[k]
    }
}

impl Index<(usize, usize)> for ScalarField {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for ScalarField {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.n + j]
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cos_mode(grid: &TorusGrid) -> ScalarField {
        grid.from_fn(|x, _| (2.0 * PI * x).cos())
    }

    fn random_field(grid: &TorusGrid, seed: u64) -> ScalarField {
        // xorshift; enough for stencil identities
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let values = (0..grid.len())
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        grid.field_from_vec(values).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(matches!(TorusGrid::new(7), Err(Error::GridTooSmall(7))));
        let g = TorusGrid::new(8).unwrap();
        assert_eq!(g.h() * g.n() as f64, 1.0);
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = TorusGrid::new(16).unwrap();
        assert_eq!(g.laplacian(&g.constant(3.5)).sup_norm(), 0.0);
    }

    #[test]
    fn cosine_is_a_stencil_eigenfield() {
        let g = TorusGrid::new(32).unwrap();
        let f = cos_mode(&g);
        let h = g.h();
        let eig = -(4.0 / (h * h)) * (PI * h).sin().powi(2);
        let lf = g.laplacian(&f);
        let err = (&lf - &f.scale(eig)).sup_norm();
        assert!(err < 1e-9 * eig.abs(), "err = {err}");
    }

    #[test]
    fn y_independent_input_gives_y_independent_output() {
        let g = TorusGrid::new(16).unwrap();
        let profile = random_field(&g, 3);
        let f = g.from_fn(|x, _| profile[((x * 16.0).round() as usize, 0)]);
        let lf = g.laplacian(&f);
        for i in 0..16 {
            for j in 1..16 {
                assert_eq!(lf[(i, j)], lf[(i, 0)]);
            }
        }
    }

    #[test]
    fn integrate_basics() {
        let g = TorusGrid::new(64).unwrap();
        assert!((g.integrate(&g.constant(1.0)) - 1.0).abs() < 1e-14);
        assert!(g.integrate(&cos_mode(&g)).abs() < 1e-12);
        let lap = g.laplacian(&random_field(&g, 11));
        assert!(g.integrate(&lap).abs() < 1e-12 * lap.sup_norm().max(1.0));
    }

    #[test]
    fn poisson_solve_examples() {
        let g = TorusGrid::new(64).unwrap();
        assert_eq!(g.poisson_solve(&g.zeros()).unwrap().sup_norm(), 0.0);

        let f = cos_mode(&g);
        let h = g.h();
        let eig = -(4.0 / (h * h)) * (PI * h).sin().powi(2);
        let u = g.poisson_solve(&f).unwrap();
        assert!((&u - &f.scale(1.0 / eig)).sup_norm() < 1e-14);

        let r = random_field(&g, 5);
        let back = g.poisson_solve(&g.laplacian(&r)).unwrap();
        assert!((&back - &r.shift(-r.mean())).sup_norm() < 1e-10);
    }

    #[test]
    fn poisson_solve_rejects_nonzero_mean() {
        let g = TorusGrid::new(16).unwrap();
        assert!(matches!(
            g.poisson_solve(&g.constant(1.0)),
            Err(Error::NonZeroMean { .. })
        ));
    }

    #[test]
    fn shifted_solve_inverts_operator() {
        let g = TorusGrid::new(32).unwrap();
        let r = random_field(&g, 9);
        let u = g.shifted_solve(r.values(), 2.5);
        let u = g.field_from_vec(u).unwrap();
        let back = &g.laplacian(&u).scale(-KAPPA) + &u.scale(2.5);
        assert!((&back - &r).sup_norm() < 1e-10);
    }

    #[test]
    fn grad_sup_norm_examples() {
        let g = TorusGrid::new(128).unwrap();
        assert_eq!(g.grad_sup_norm(&g.constant(2.0)), 0.0);
        let a = 0.7;
        let f = cos_mode(&g).scale(a);
        let h = g.h();
        let expected = a * (2.0 * PI * h).sin() / h;
        assert!((g.grad_sup_norm(&f) - expected).abs() < 1e-3 * expected);
        assert!((g.grad_sup_norm(&f) - 2.0 * PI * a).abs() < 2e-3 * 2.0 * PI * a);
        assert!((g.grad_sup_norm(&f) - g.grad_sup_norm(&f.shift(5.0))).abs() < 1e-9);
    }

    #[test]
    fn snapping_reports_distance() {
        let g = TorusGrid::new(10).unwrap();
        let ((i, j), d) = g.snap(0.52, 1.01);
        assert_eq!((i, j), (5, 0));
        assert!((d - (0.02f64.hypot(0.01))).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn laplacian_integrates_to_zero(seed in any::<u64>()) {
            let g = TorusGrid::new(16).unwrap();
            let f = random_field(&g, seed);
            let bound = 1e-12 * f.sup_norm() / (g.h() * g.h());
            prop_assert!(g.integrate(&g.laplacian(&f)).abs() <= bound);
        }

        #[test]
        fn laplacian_is_symmetric(a in any::<u64>(), b in any::<u64>()) {
            let g = TorusGrid::new(16).unwrap();
            let f = random_field(&g, a);
            let h = random_field(&g, b);
            let lhs = g.integrate(&(&f * &g.laplacian(&h)));
            let rhs = g.integrate(&(&h * &g.laplacian(&f)));
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }

        #[test]
        fn poisson_inverts_laplacian_on_zero_mean(seed in any::<u64>()) {
            let g = TorusGrid::new(16).unwrap();
            let f = random_field(&g, seed);
            let f = f.shift(-f.mean());
            let back = g.poisson_solve(&g.laplacian(&f)).unwrap();
            prop_assert!((&back - &f).sup_norm() < 1e-10);
        }
    }
}
