//! Matrix-free preconditioned conjugate gradients.

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iters: usize,
    /// Final `||b - A x||_2`.
    pub residual: f64,
    pub converged: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from `x`.
///
/// `apply(v, out)` writes `A v`; `precond(r, out)` writes `M^{-1} r`. Stops when
/// `||r||_2 <= max(rel_tol * ||b||_2, abs_tol)`.
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    abs_tol: f64,
    max_iters: usize,
) -> CgStats {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    let target = (rel_tol * dot(b, b).sqrt()).max(abs_tol);
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= target {
        return CgStats {
            iters: 0,
            residual: rnorm,
            converged: true,
        };
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return CgStats {
                iters: it,
                residual: rnorm,
                converged: false,
            };
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return CgStats {
                iters: it,
                residual: rnorm,
                converged: true,
            };
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    CgStats {
        iters: max_iters,
        residual: rnorm,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // tridiagonal [-1, 4, -1]
        let n = 20;
        let apply = |v: &[f64], out: &mut [f64]| {
            for k in 0..n {
                let l = if k > 0 { v[k - 1] } else { 0.0 };
                let r = if k + 1 < n { v[k + 1] } else { 0.0 };
                out[k] = 4.0 * v[k] - l - r;
            }
        };
        let b: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let stats = pcg(
            apply,
            |r: &[f64], z: &mut [f64]| z.copy_from_slice(r),
            &b,
            &mut x,
            1e-14,
            0.0,
            100,
        );
        assert!(stats.converged);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let err = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }
}
