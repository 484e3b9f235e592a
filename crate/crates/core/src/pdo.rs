//! Quantization of symbols on the periodic grid and dense operator algebra.
//!
//! With `û` the grid transform, the Kohn–Nirenberg quantization is
//! `(a(x,D)u)(x_j) = (2L)^{-d} Σ_k e^{i x_j·ξ_k} a(x_j,ξ_k) û(ξ_k)`, and the
//! reverse quantization places the symbol at the integration variable:
//! `v(ξ_k) = dx^d Σ_m e^{-i x_m·ξ_k} a(x_m,ξ_k) u(x_m)` followed by the
//! inverse transform. For real `a` the two are adjoint.

use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fd;
use crate::grid::{forward_dft, inverse_dft, Grid, Point, Spectrum, StateVector};
use crate::symbol::{smooth_step, LambdaParams, LambdaTable, SymbolField};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest operator size for which the 2-norm is taken from a full SVD.
pub const SVD_MAX: usize = 1024;
/// Largest operator size for dense eigensolves.
pub const EIG_MAX: usize = 2048;
/// Default cap on the 1-norm condition estimate accepted by [`DenseOp::inverse`].
pub const CONDITION_CAP: f64 = 1e12;
/// Tolerance on `‖A A⁻¹ - I‖₂` for an accepted inverse.
pub const INVERSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    Kn,
    Reverse,
    Multiplier,
    Pointwise,
    /// Result of algebra on other operators.
    General,
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    a.check_same(b)
}

/// `a(x,D)u` by one transform and a dense contraction.
pub fn kn_apply(a: &SymbolField, u: &StateVector) -> Result<StateVector> {
    let grid = a.grid();
    same_grid(grid, u.grid())?;
    let u_hat = forward_dft(u);
    let hat = u_hat.values();
    let scale = 1.0 / (2.0 * grid.half_width()).powi(grid.dim() as i32);
    let out: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let row = a.row(j);
            let mut acc = ZERO;
            for k in 0..hat.len() {
                acc += grid.phase_flat(j, k) * row[k] * hat[k];
            }
            acc * scale
        })
        .collect();
    StateVector::new(grid.clone(), out)
}

/// `ᴿa u`.
pub fn rev_apply(a: &SymbolField, u: &StateVector) -> Result<StateVector> {
    let grid = a.grid();
    same_grid(grid, u.grid())?;
    let vol = grid.cell_volume();
    let vals = u.values();
    let v: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let mut acc = ZERO;
            for (m, um) in vals.iter().enumerate() {
                acc += grid.phase_flat(m, k).conj() * a.get(m, k) * um;
            }
            acc * vol
        })
        .collect();
    Ok(inverse_dft(&Spectrum::new(grid.clone(), v)?))
}

/// Largest per-axis `n` for dense assembly.
pub fn dense_cap(dim: usize) -> usize {
    if dim == 1 {
        4096
    } else {
        64
    }
}

fn check_cap(grid: &Grid) -> Result<()> {
    let cap = dense_cap(grid.dim());
    if grid.n() > cap {
        return Err(Error::SizeCap(format!(
            "dense assembly in dim {} allows n <= {cap}, got {}",
            grid.dim(),
            grid.n()
        )));
    }
    Ok(())
}

/// Columns of the reverse quantization of `a(m, k) = a(x_m, ξ_k)`.
fn reverse_columns<F>(grid: &Grid, a: F) -> Vec<Vec<Complex64>>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    let len = grid.len();
    let vol = grid.cell_volume();
    (0..len)
        .into_par_iter()
        .map(|m| {
            let mut col: Vec<Complex64> =
                (0..len).map(|k| grid.phase_flat(m, k).conj() * a(m, k) * vol).collect();
            grid.idft_in_place(&mut col);
            col
        })
        .collect()
}

/// Dense operator on the grid's state space.
#[derive(Debug, Clone)]
pub struct DenseOp {
    grid: Arc<Grid>,
    matrix: Mat<Complex64>,
    tag: Quantization,
}

/// Dense matrix of `a(x,D)` or `ᴿa`; every other tag is rejected.
pub fn assemble_dense(a: &SymbolField, quantization: Quantization) -> Result<DenseOp> {
    let grid = a.grid().clone();
    check_cap(&grid)?;
    let len = grid.len();
    let matrix = match quantization {
        Quantization::Reverse => {
            let cols = reverse_columns(&grid, |m, k| a.get(m, k));
            Mat::from_fn(len, len, |i, j| cols[j][i])
        }
        Quantization::Kn => {
            // a(x,D) = (ᴿ conj a)ᴴ
            let cols = reverse_columns(&grid, |m, k| a.get(m, k).conj());
            Mat::from_fn(len, len, |i, j| cols[i][j].conj())
        }
        other => {
            return Err(invalid(
                "quantization",
                format!("symbol fields assemble as kn or reverse, got {other:?}"),
            ))
        }
    };
    Ok(DenseOp {
        grid,
        matrix,
        tag: quantization,
    })
}

fn norm1(m: &Mat<Complex64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        let col: f64 = (0..m.nrows()).map(|i| m[(i, j)].norm()).sum();
        if !col.is_finite() {
            return f64::INFINITY;
        }
        best = best.max(col);
    }
    best
}

impl DenseOp {
    pub fn from_matrix(grid: Arc<Grid>, matrix: Mat<Complex64>, tag: Quantization) -> Result<Self> {
        let len = grid.len();
        if matrix.nrows() != len || matrix.ncols() != len {
            return Err(Error::GridMismatch(format!(
                "{}x{} matrix on a grid with {len} nodes",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { grid, matrix, tag })
    }

    pub fn identity(grid: Arc<Grid>) -> Result<Self> {
        check_cap(&grid)?;
        let len = grid.len();
        let matrix = Mat::from_fn(len, len, |i, j| if i == j { ONE } else { ZERO });
        Ok(Self {
            grid,
            matrix,
            tag: Quantization::Pointwise,
        })
    }

    /// `m(D)`, diagonalized by the grid transform.
    pub fn multiplier<F>(grid: Arc<Grid>, m: F) -> Result<Self>
    where
        F: Fn(&Point) -> Complex64 + Sync,
    {
        check_cap(&grid)?;
        let len = grid.len();
        let symbol: Vec<Complex64> = (0..len).map(|k| m(&grid.wavevector(k))).collect();
        let cols = reverse_columns(&grid, |_, k| symbol[k]);
        let matrix = Mat::from_fn(len, len, |i, j| cols[j][i]);
        Ok(Self {
            grid,
            matrix,
            tag: Quantization::Multiplier,
        })
    }

    /// Multiplication by `v(x_j)`.
    pub fn pointwise(grid: Arc<Grid>, v: &[Complex64]) -> Result<Self> {
        check_cap(&grid)?;
        let len = grid.len();
        if v.len() != len {
            return Err(Error::GridMismatch(format!("{} values for {len} nodes", v.len())));
        }
        let matrix = Mat::from_fn(len, len, |i, j| if i == j { v[i] } else { ZERO });
        Ok(Self {
            grid,
            matrix,
            tag: Quantization::Pointwise,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &Mat<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<Complex64> {
        self.matrix
    }

    pub fn tag(&self) -> Quantization {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn derived(&self, matrix: Mat<Complex64>) -> Self {
        Self {
            grid: self.grid.clone(),
            matrix,
            tag: Quantization::General,
        }
    }

    pub fn apply(&self, u: &StateVector) -> Result<StateVector> {
        same_grid(&self.grid, u.grid())?;
        let len = self.len();
        let x = Mat::from_fn(len, 1, |i, _| u.values()[i]);
        let y = &self.matrix * &x;
        StateVector::new(self.grid.clone(), (0..len).map(|i| y[(i, 0)]).collect())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &DenseOp) -> Result<DenseOp> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.derived(&self.matrix * &other.matrix))
    }

    pub fn add(&self, other: &DenseOp) -> Result<DenseOp> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.derived(&self.matrix + &other.matrix))
    }

    pub fn sub(&self, other: &DenseOp) -> Result<DenseOp> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.derived(&self.matrix - &other.matrix))
    }

    pub fn scale(&self, c: Complex64) -> DenseOp {
        let m = Mat::from_fn(self.len(), self.len(), |i, j| self.matrix[(i, j)] * c);
        self.derived(m)
    }

    pub fn adjoint(&self) -> DenseOp {
        let tag = match self.tag {
            Quantization::Kn => Quantization::Reverse,
            Quantization::Reverse => Quantization::Kn,
            t => t,
        };
        Self {
            grid: self.grid.clone(),
            matrix: self.matrix.adjoint().to_owned(),
            tag,
        }
    }

    /// `(A + Aᴴ)/2`.
    pub fn hermitian_part(&self) -> DenseOp {
        let a = &self.matrix;
        let m = Mat::from_fn(self.len(), self.len(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)].conj()));
        self.derived(m)
    }

    /// Subtracts the identity.
    pub fn minus_identity(&self) -> DenseOp {
        let a = &self.matrix;
        let m = Mat::from_fn(self.len(), self.len(), |i, j| if i == j { a[(i, j)] - ONE } else { a[(i, j)] });
        self.derived(m)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm_l2()
    }

    /// Induced 1-norm (largest column sum).
    pub fn norm1(&self) -> f64 {
        norm1(&self.matrix)
    }

    /// Spectral norm: full SVD up to [`SVD_MAX`], power iteration on `AᴴA`
    /// beyond.
    pub fn op_norm2(&self) -> f64 {
        if self.len() <= SVD_MAX {
            let sv = self
                .matrix
                .singular_values()
                .expect("singular value iteration converges");
            sv.iter().copied().fold(0.0, f64::max)
        } else {
            power_norm(&self.matrix, 20, 1e-6)
        }
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn hermitian_min_eig(&self) -> Result<f64> {
        if self.len() > EIG_MAX {
            return Err(Error::SizeCap(format!(
                "hermitian eigensolve allows N <= {EIG_MAX}, got {}",
                self.len()
            )));
        }
        let h = self.hermitian_part();
        let ev = h
            .matrix
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|_| Error::NonFinite("hermitian_min_eig"))?;
        Ok(ev.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        if self.len() > EIG_MAX {
            return Err(Error::SizeCap(format!(
                "eigensolve allows N <= {EIG_MAX}, got {}",
                self.len()
            )));
        }
        self.matrix
            .eigenvalues()
            .map_err(|_| Error::NonFinite("eigenvalues"))
    }

    /// Inverse by LU with partial pivoting, rejected when the 1-norm condition
    /// estimate exceeds `condition_cap` or `‖A A⁻¹ - I‖₂ > 1e-8`.
    pub fn inverse(&self, condition_cap: f64) -> Result<DenseOp> {
        let lu = self.matrix.partial_piv_lu();
        let inv = lu.inverse();
        let condition = norm1(&self.matrix) * norm1(&inv);
        if !condition.is_finite() || condition > condition_cap {
            return Err(Error::Singular { condition });
        }
        let out = self.derived(inv);
        let check = self.compose(&out)?.minus_identity();
        let mut residual = check.frobenius_norm();
        if residual > INVERSE_TOL {
            residual = check.op_norm2();
        }
        if residual > INVERSE_TOL {
            return Err(Error::InverseCheck { residual, condition });
        }
        Ok(out)
    }
}

/// `‖A‖₂` from power iteration on `AᴴA` with a seeded start vector.
pub fn power_norm(a: &Mat<Complex64>, iterations: usize, tol: f64) -> f64 {
    let n = a.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Mat::from_fn(n, 1, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let nv = v.norm_l2();
        if nv == 0.0 {
            return 0.0;
        }
        v = Mat::from_fn(n, 1, |i, _| v[(i, 0)] / nv);
        let av = a * &v;
        let next = av.norm_l2();
        v = a.adjoint() * &av;
        if (next - estimate).abs() <= tol * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Smooth window that keeps `λ` quantizable on the periodic box: `λ` is
/// multiplied by a ramp to zero over `|x_i|/L ∈ [x_start, 1]` on each axis
/// and over `|ξ_i|/ξ_max ∈ [xi_start, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Taper {
    pub x_start: f64,
    pub xi_start: f64,
}

impl Default for Taper {
    fn default() -> Self {
        Self {
            x_start: 0.75,
            xi_start: 0.7,
        }
    }
}

impl Taper {
    /// No windowing.
    pub fn none() -> Self {
        Self {
            x_start: 1.0,
            xi_start: 1.0,
        }
    }

    fn ramp(t: f64, start: f64) -> f64 {
        if start >= 1.0 {
            return 1.0;
        }
        smooth_step((t.abs() - start) / (1.0 - start))
    }

    pub fn weight(&self, grid: &Grid, x: &Point, xi: &Point) -> f64 {
        let (l, k) = (grid.half_width(), grid.max_frequency());
        (0..grid.dim())
            .map(|a| Self::ramp(x[a] / l, self.x_start) * Self::ramp(xi[a] / k, self.xi_start))
            .product()
    }
}

/// `λ` times the taper on the full lattice.
pub fn adapted_lambda_field(grid: Arc<Grid>, params: &LambdaParams, taper: &Taper) -> Result<SymbolField> {
    let table = LambdaTable::for_grid(*params, &grid);
    let g = grid.clone();
    SymbolField::from_fn(grid, move |x, xi| {
        let w = taper.weight(&g, x, xi);
        if w == 0.0 {
            ZERO
        } else {
            Complex64::new(w * table.lambda(x, xi), 0.0)
        }
    })
}

/// `e^{sign·λ}` of a real-valued field.
pub fn exp_field(lambda: &SymbolField, sign: f64) -> SymbolField {
    lambda.map(|v| Complex64::new((sign * v.re).exp(), 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderStats {
    /// `‖e^λ(x,D) ᴿe^{-λ} - I‖₂`.
    pub norm_r1: f64,
    /// Largest eigenvalue modulus of `r₁`.
    pub spectral_radius: f64,
    /// Smallest eigenvalue of the Hermitian part of `e^λ(x,D) ᴿe^{-λ}`.
    pub min_eig: f64,
}

/// Remainder `r₁ = e^λ(x,D) ᴿe^{-λ} - I` for a real field `λ`.
pub fn remainder_stats(lambda: &SymbolField) -> Result<RemainderStats> {
    let e = assemble_dense(&exp_field(lambda, 1.0), Quantization::Kn)?;
    let r = assemble_dense(&exp_field(lambda, -1.0), Quantization::Reverse)?;
    let prod = e.compose(&r)?;
    let r1 = prod.minus_identity();
    let spectral_radius = r1.eigenvalues()?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(RemainderStats {
        norm_r1: r1.op_norm2(),
        spectral_radius,
        min_eig: prod.hermitian_min_eig()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderRow {
    pub h: f64,
    pub n: usize,
    #[serde(flatten)]
    pub stats: RemainderStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderTable {
    pub rows: Vec<RemainderRow>,
    /// First ladder `h` with `‖r₁‖₂ < 1`.
    pub h0: Option<f64>,
    pub non_increasing: bool,
    pub pass: bool,
}

impl RemainderTable {
    /// Columns `h,norm_r1,min_eig,n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["h", "norm_r1", "min_eig", "n"])?;
        for r in &self.rows {
            out.write_record([
                format!("{}", r.h),
                format!("{:.16e}", r.stats.norm_r1),
                format!("{:.16e}", r.stats.min_eig),
                format!("{}", r.n),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Ladder position of `h0`.
    pub fn h0_index(&self) -> Option<usize> {
        let h0 = self.h0?;
        self.rows.iter().position(|r| r.h == h0)
    }
}

/// Whether two tables over the same ladder place `h0` within one step.
pub fn h0_stable(a: &RemainderTable, b: &RemainderTable) -> bool {
    match (a.h0_index(), b.h0_index()) {
        (Some(i), Some(j)) => i.abs_diff(j) <= 1,
        _ => false,
    }
}

/// `‖r₁‖₂` over an increasing ladder of `h` (dim 1, `n ≤ 1024`).
pub fn conjugation_remainder_check(
    params: &LambdaParams,
    hs: &[f64],
    grid: &Arc<Grid>,
    taper: &Taper,
) -> Result<RemainderTable> {
    if grid.dim() != 1 || grid.n() > 1024 {
        return Err(invalid("grid", "remainder check runs in dim 1 with n <= 1024"));
    }
    if hs.is_empty() {
        return Err(Error::EmptyTable);
    }
    if hs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("h", "ladder must be strictly increasing"));
    }
    let mut rows = Vec::with_capacity(hs.len());
    for &h in hs {
        let p = params.with_h(h)?;
        let field = adapted_lambda_field(grid.clone(), &p, taper)?;
        rows.push(RemainderRow {
            h,
            n: grid.n(),
            stats: remainder_stats(&field)?,
        });
    }
    let non_increasing = rows.windows(2).all(|w| w[1].stats.norm_r1 <= w[0].stats.norm_r1);
    let h0 = rows.iter().find(|r| r.stats.norm_r1 < 1.0).map(|r| r.h);
    let last_small = rows.last().map_or(false, |r| r.stats.norm_r1 < 1.0);
    Ok(RemainderTable {
        rows,
        h0,
        non_increasing,
        pass: non_increasing && last_small,
    })
}

/// Real symbol evaluator.
pub type RealSymbol<'a> = &'a (dyn Fn(&Point, &Point) -> f64 + Sync);
/// Complex symbol evaluator.
pub type ComplexSymbol<'a> = &'a (dyn Fn(&Point, &Point) -> Complex64 + Sync);

/// Leading conjugation correction
/// `q = Σ_j ∂_{ξ_j}p · i∂_{x_j}λ + Σ_j D_{x_j}p · ∂_{ξ_j}λ`, `D = -i∂`,
/// by central differences with step `step`.
pub fn leading_symbol(p: ComplexSymbol, lambda: RealSymbol, x: &Point, xi: &Point, dim: usize, step: f64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let mut q = ZERO;
    for a in 0..dim {
        let shift = |v: &Point, d: f64| {
            let mut w = *v;
            w[a] += d;
            w
        };
        let dp_dxi = {
            let re = fd::central(&|t| p(x, &shift(xi, t - xi[a])).re, xi[a], step, 1);
            let im = fd::central(&|t| p(x, &shift(xi, t - xi[a])).im, xi[a], step, 1);
            Complex64::new(re, im)
        };
        let dp_dx = {
            let re = fd::central(&|t| p(&shift(x, t - x[a]), xi).re, x[a], step, 1);
            let im = fd::central(&|t| p(&shift(x, t - x[a]), xi).im, x[a], step, 1);
            Complex64::new(re, im)
        };
        let dl_dx = fd::central(&|t| lambda(&shift(x, t - x[a]), xi), x[a], step, 1);
        let dl_dxi = fd::central(&|t| lambda(x, &shift(xi, t - xi[a])), xi[a], step, 1);
        q += dp_dxi * i * dl_dx + (-i * dp_dx) * dl_dxi;
    }
    q
}

#[derive(Debug, Clone)]
pub struct Conjugated {
    /// `e^λ(x,D) P (e^λ(x,D))⁻¹`.
    pub conjugated: DenseOp,
    /// `P = p(x,D)`.
    pub generator: DenseOp,
    /// `q(x,D)`.
    pub leading: DenseOp,
    pub norm_r1: f64,
}

/// Conjugates `p(x,D)` by `e^λ(x,D)` after checking `‖r₁‖₂ < 1`.
pub fn conjugate_generator(grid: Arc<Grid>, p: ComplexSymbol, lambda: RealSymbol) -> Result<Conjugated> {
    let lam = SymbolField::from_fn(grid.clone(), |x, xi| Complex64::new(lambda(x, xi), 0.0))?;
    let norm_r1 = {
        let e = assemble_dense(&exp_field(&lam, 1.0), Quantization::Kn)?;
        let r = assemble_dense(&exp_field(&lam, -1.0), Quantization::Reverse)?;
        e.compose(&r)?.minus_identity().op_norm2()
    };
    if !(norm_r1 < 1.0) {
        return Err(Error::NeumannViolated { norm: norm_r1 });
    }
    let e = assemble_dense(&exp_field(&lam, 1.0), Quantization::Kn)?;
    let e_inv = e.inverse(CONDITION_CAP)?;
    let generator = assemble_dense(&SymbolField::from_fn(grid.clone(), |x, xi| p(x, xi))?, Quantization::Kn)?;
    let conjugated = e.compose(&generator)?.compose(&e_inv)?;
    let step = 1e-4;
    let dim = grid.dim();
    let q = SymbolField::from_fn(grid, |x, xi| leading_symbol(p, lambda, x, xi, dim, step))?;
    Ok(Conjugated {
        conjugated,
        generator,
        leading: assemble_dense(&q, Quantization::Kn)?,
        norm_r1,
    })
}
