//! Restarted GMRES with right preconditioning.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresOptions {
    /// Target for `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            restart: 40,
            max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`. `precond` applies an
/// approximation of `A⁻¹`.
pub fn gmres<A, P>(apply: A, precond: P, b: &[Complex64], x: &mut [Complex64], opts: &GmresOptions) -> Result<GmresOutcome>
where
    A: Fn(&[Complex64]) -> Vec<Complex64>,
    P: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        return Ok(GmresOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let m = opts.restart.max(1);
    let mut iterations = 0;
    loop {
        let ax = apply(x);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("gmres"));
        }
        if rel <= opts.tol {
            return Ok(GmresOutcome {
                iterations,
                relative_residual: rel,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                residual: rel,
                iterations,
            });
        }
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![Complex64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![Complex64::new(0.0, 0.0); m];
        let mut g = vec![Complex64::new(0.0, 0.0); m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k = 0;
        while k < m && iterations < opts.max_iter {
            let z = precond(&basis[k]);
            let mut w = apply(&z);
            for (i, q) in basis.iter().enumerate() {
                let h = dot(q, &w);
                hess[i][k] = h;
                for (wj, qj) in w.iter_mut().zip(q) {
                    *wj -= h * qj;
                }
            }
            let wn = norm(&w);
            hess[k + 1][k] = Complex64::new(wn, 0.0);
            for i in 0..k {
                let (a, bb) = (hess[i][k], hess[i + 1][k]);
                hess[i][k] = cs[i] * a + sn[i] * bb;
                hess[i + 1][k] = -sn[i].conj() * a + cs[i] * bb;
            }
            let (a, bb) = (hess[k][k], hess[k + 1][k]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = Complex64::new(0.0, 0.0);
            } else {
                cs[k] = a.norm() / denom;
                let phase = if a.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { a / a.norm() };
                sn[k] = phase * bb.conj() / denom;
            }
            hess[k][k] = cs[k] * a + sn[k] * bb;
            hess[k + 1][k] = Complex64::new(0.0, 0.0);
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            if g[k].norm() / bnorm <= opts.tol || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![Complex64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in (i + 1)..k {
                acc -= hess[i][j] * y[j];
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = vec![Complex64::new(0.0, 0.0); n];
        for (yi, q) in y.iter().zip(&basis) {
            for (u, qj) in update.iter_mut().zip(q) {
                *u += yi * qj;
            }
        }
        for (xi, d) in x.iter_mut().zip(precond(&update)) {
            *xi += d;
        }
    }
}
