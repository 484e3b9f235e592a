//! The conjugation symbol `Λ(t,x,ξ) = k(t)⟨x⟩_h^{1-σ} + λ(x,ξ)` and checks of
//! its sign and growth properties.
//!
//! `λ` is built from two line integrals of `g₁(x) = M⟨x⟩^{-1+1/s}`: `λ₁` along
//! the direction `ω = ξ/|ξ|` through `x`, and `λ₂` along the scalar `x·ω`.
//! They are blended by `χ̃ = χ(2x·ω/⟨x⟩)` and switched off for `|ξ| ≤ h`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Point};
use crate::gsnorm::japanese;
use crate::quadrature::{adaptive_gauss_legendre, GaussLegendre};

const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `s < 1/(1-σ)`.
    Strict,
    /// `s = 1/(1-σ)` allowed; results hold only locally in time.
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLambdaParams", into = "RawLambdaParams")]
pub struct LambdaParams {
    strength: f64,
    h: f64,
    s: f64,
    sigma: f64,
    cutoff_order: f64,
    regime: Regime,
}

#[derive(Serialize, Deserialize)]
struct RawLambdaParams {
    #[serde(rename = "M")]
    strength: f64,
    h: f64,
    s: f64,
    sigma: f64,
    #[serde(default = "default_cutoff_order")]
    cutoff_order: f64,
    #[serde(default = "default_regime")]
    regime: Regime,
}

fn default_cutoff_order() -> f64 {
    2.0
}

fn default_regime() -> Regime {
    Regime::Strict
}

impl TryFrom<RawLambdaParams> for LambdaParams {
    type Error = Error;

    fn try_from(r: RawLambdaParams) -> Result<Self> {
        LambdaParams::build(r.strength, r.h, r.s, r.sigma, r.regime)?.with_cutoff_order(r.cutoff_order)
    }
}

impl From<LambdaParams> for RawLambdaParams {
    fn from(p: LambdaParams) -> Self {
        Self {
            strength: p.strength,
            h: p.h,
            s: p.s,
            sigma: p.sigma,
            cutoff_order: p.cutoff_order,
            regime: p.regime,
        }
    }
}

impl LambdaParams {
    /// Strict regime, documented bump order 2.
    pub fn new(strength: f64, h: f64, s: f64, sigma: f64) -> Result<Self> {
        Self::build(strength, h, s, sigma, Regime::Strict)
    }

    /// Allows `s(1-σ) = 1`.
    pub fn critical(strength: f64, h: f64, s: f64, sigma: f64) -> Result<Self> {
        Self::build(strength, h, s, sigma, Regime::Critical)
    }

    fn build(strength: f64, h: f64, s: f64, sigma: f64, regime: Regime) -> Result<Self> {
        let p = Self {
            strength,
            h,
            s,
            sigma,
            cutoff_order: default_cutoff_order(),
            regime,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_regime(mut self, regime: Regime) -> Result<Self> {
        self.regime = regime;
        self.validate()?;
        Ok(self)
    }

    pub fn with_cutoff_order(mut self, order: f64) -> Result<Self> {
        if !(order.is_finite() && order >= 1.0) {
            return Err(invalid("cutoff_order", format!("must be >= 1, got {order}")));
        }
        self.cutoff_order = order;
        Ok(self)
    }

    pub fn with_strength(mut self, strength: f64) -> Result<Self> {
        self.strength = strength;
        self.validate()?;
        Ok(self)
    }

    pub fn with_h(mut self, h: f64) -> Result<Self> {
        self.h = h;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.strength.is_finite() && self.strength > 0.0) {
            return Err(invalid("M", format!("must be positive, got {}", self.strength)));
        }
        if !(self.h.is_finite() && self.h >= 1.0) {
            return Err(invalid("h", format!("must be >= 1, got {}", self.h)));
        }
        if !(self.s.is_finite() && self.s > 1.0) {
            return Err(invalid("s", format!("must be > 1, got {}", self.s)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(invalid("sigma", format!("must lie in (0, 1), got {}", self.sigma)));
        }
        let product = self.s * (1.0 - self.sigma);
        match self.regime {
            Regime::Strict if product >= 1.0 => Err(invalid(
                "s",
                format!("strict regime needs s(1-sigma) < 1, got {product}"),
            )),
            Regime::Critical if product > 1.0 + 1e-12 => Err(invalid(
                "s",
                format!("critical regime needs s(1-sigma) <= 1, got {product}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cutoff_order(&self) -> f64 {
        self.cutoff_order
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Exponent `-1 + 1/s` of `g₁`.
    pub fn decay_exponent(&self) -> f64 {
        -1.0 + 1.0 / self.s
    }
}

/// `k(t) = e^{-Nt}k₀ - (M+1)(1 - e^{-Nt})`, or identically zero when disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugationSchedule {
    k0: f64,
    decay: f64,
    horizon: f64,
    strength: f64,
    active: bool,
}

impl ConjugationSchedule {
    /// Rejects `k₀ < (M+1)(e^{NT} - 1)`, which would let `k` go negative before `T`.
    pub fn new(k0: f64, decay: f64, horizon: f64, strength: f64) -> Result<Self> {
        if !(decay.is_finite() && decay > 0.0) {
            return Err(invalid("N", format!("must be positive, got {decay}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("must be positive, got {horizon}")));
        }
        if !(strength.is_finite() && strength > 0.0) {
            return Err(invalid("M", format!("must be positive, got {strength}")));
        }
        let floor = Self::minimal_k0(decay, horizon, strength);
        if !(k0.is_finite() && k0 >= floor * (1.0 - 1e-14)) {
            return Err(invalid(
                "k0",
                format!("k(t) >= 0 on [0, {horizon}] needs k0 >= {floor}, got {k0}"),
            ));
        }
        Ok(Self {
            k0,
            decay,
            horizon,
            strength,
            active: true,
        })
    }

    /// Smallest admissible `k₀`; `k(T) = 0`.
    pub fn minimal(decay: f64, horizon: f64, strength: f64) -> Result<Self> {
        Self::new(Self::minimal_k0(decay, horizon, strength), decay, horizon, strength)
    }

    /// `k ≡ 0` on `[0, T]`.
    pub fn disabled(horizon: f64) -> Self {
        Self {
            k0: 0.0,
            decay: 1.0,
            horizon,
            strength: 0.0,
            active: false,
        }
    }

    pub fn minimal_k0(decay: f64, horizon: f64, strength: f64) -> f64 {
        (strength + 1.0) * (decay * horizon).exp_m1()
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(invalid("t", format!("must lie in [0, {}], got {t}", self.horizon)));
        }
        Ok(())
    }

    pub fn k(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if !self.active {
            return Ok(0.0);
        }
        let e = (-self.decay * t).exp();
        Ok(e * self.k0 - (self.strength + 1.0) * (1.0 - e))
    }

    pub fn k_prime(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if !self.active {
            return Ok(0.0);
        }
        let e = (-self.decay * t).exp();
        Ok(-self.decay * e * (self.k0 + self.strength + 1.0))
    }
}

/// `f(z) = e^{-1/z}` for `z > 0`, else 0.
fn flat(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        (-1.0 / z).exp()
    }
}

fn flat_prime(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        flat(z) / (z * z)
    }
}

/// Smooth monotone transition: 1 for `u ≤ 0`, 0 for `u ≥ 1`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        let (a, b) = (flat(1.0 - u), flat(u));
        a / (a + b)
    }
}

/// Cutoff with `χ = 1` on `|t| ≤ 1/2`, `χ = 0` for `|t| ≥ 1`, monotone flanks.
pub fn chi(t: f64) -> f64 {
    smooth_step(2.0 * t.abs() - 1.0)
}

pub fn chi_prime(t: f64) -> f64 {
    let u = 2.0 * t.abs() - 1.0;
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let (a, b) = (flat(1.0 - u), flat(u));
    let (da, db) = (-flat_prime(1.0 - u), flat_prime(u));
    let d = (da * b - a * db) / ((a + b) * (a + b));
    2.0 * t.signum() * d
}

/// `g₁(x) = M⟨x⟩^{-1+1/s}`.
pub fn g1(x: &Point, strength: f64, s: f64) -> f64 {
    strength * japanese(x).powf(-1.0 + 1.0 / s)
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: &Point) -> f64 {
    a[0].hypot(a[1])
}

fn direction(xi: &Point) -> Result<Point> {
    let r = norm(xi);
    if r == 0.0 || !r.is_finite() {
        return Err(invalid("xi", "direction undefined at xi = 0"));
    }
    Ok([xi[0] / r, xi[1] / r])
}

/// `λ₁ = ∫₀^{x·ω} g₁(x - τω) dτ` by adaptive Gauss–Legendre.
pub fn lambda1(x: &Point, xi: &Point, params: &LambdaParams) -> Result<f64> {
    let w = direction(xi)?;
    let a = dot(x, &w);
    let (m, s) = (params.strength, params.s);
    Ok(adaptive_gauss_legendre(
        |tau| g1(&[x[0] - tau * w[0], x[1] - tau * w[1]], m, s),
        0.0,
        a,
        QUAD_TOL,
    ))
}

/// `λ₂ = ∫₀^{x·ω} M⟨z⟩^{-1+1/s} dz`.
pub fn lambda2(x: &Point, xi: &Point, params: &LambdaParams) -> Result<f64> {
    let w = direction(xi)?;
    let a = dot(x, &w);
    let (m, p) = (params.strength, params.decay_exponent());
    Ok(adaptive_gauss_legendre(|z| m * (1.0 + z * z).powf(0.5 * p), 0.0, a, QUAD_TOL))
}

/// `χ̃ = χ(2x·ω/⟨x⟩)`.
pub fn tilde_chi(x: &Point, xi: &Point) -> Result<f64> {
    let w = direction(xi)?;
    Ok(chi(2.0 * dot(x, &w) / japanese(x)))
}

/// `1 - χ(|ξ|/(2h))`: zero on `|ξ| ≤ h`, one on `|ξ| ≥ 2h`.
pub fn frequency_cutoff(xi: &Point, h: f64) -> f64 {
    1.0 - chi(norm(xi) / (2.0 * h))
}

/// `λ = (1 - χ(|ξ|/2h))·[-λ₁χ̃ - λ₂(1 - χ̃)]` by direct quadrature.
pub fn lambda(x: &Point, xi: &Point, params: &LambdaParams) -> f64 {
    let cut = frequency_cutoff(xi, params.h);
    if cut == 0.0 {
        return 0.0;
    }
    let tc = tilde_chi(x, xi).expect("xi != 0 past the cutoff");
    let mut inner = 0.0;
    if tc > 0.0 {
        inner -= tc * lambda1(x, xi, params).expect("xi != 0");
    }
    if tc < 1.0 {
        inner -= (1.0 - tc) * lambda2(x, xi, params).expect("xi != 0");
    }
    cut * inner
}

/// `Λ(t,x,ξ) = k(t)⟨x⟩_h^{1-σ} + λ(x,ξ)`.
pub fn big_lambda(
    t: f64,
    x: &Point,
    xi: &Point,
    params: &LambdaParams,
    schedule: &ConjugationSchedule,
) -> Result<f64> {
    let k = schedule.k(t)?;
    let bracket = (params.h * params.h + x[0] * x[0] + x[1] * x[1]).sqrt();
    Ok(k * bracket.powf(1.0 - params.sigma) + lambda(x, xi, params))
}

/// Tabulated `λ` for lattice-wide evaluation.
///
/// With `p = -1 + 1/s`, `a = x·ω`, `r² = |x|² - a²`, `c = √(1+r²)` and
/// `H(y) = ∫₀^y (1+v²)^{p/2} dv`, the line integrals reduce to
/// `λ₁ = M c^{p+1} H(a/c)` and `λ₂ = M H(a)`. `H` is stored at spacing
/// `1/256` and interpolated by cubic Hermite using the exact derivative.
#[derive(Debug, Clone)]
pub struct LambdaTable {
    params: LambdaParams,
    p: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Upper bound on the relative interpolation error of [`LambdaTable`],
/// confirmed by the test module against direct quadrature.
pub const TABLE_REL_ERROR: f64 = 1e-11;

impl LambdaTable {
    /// Table covering `|y| ≤ reach`.
    pub fn new(params: LambdaParams, reach: f64) -> Self {
        let step = 1.0 / 256.0;
        let cells = (reach.abs() / step).ceil() as usize + 2;
        let p = params.decay_exponent();
        let rule = GaussLegendre::new(8);
        let deriv = |v: f64| (1.0 + v * v).powf(0.5 * p);
        let mut values = Vec::with_capacity(cells + 1);
        let mut slopes = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        values.push(0.0);
        slopes.push(1.0);
        for i in 0..cells {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            acc += rule.integrate(deriv, a, b);
            values.push(acc);
            slopes.push(deriv(b));
        }
        Self {
            params,
            p,
            step,
            values,
            slopes,
        }
    }

    /// Table wide enough for every point within `grid` and its stencil
    /// neighbours.
    pub fn for_grid(params: LambdaParams, grid: &Grid) -> Self {
        let reach = grid.half_width() * (grid.dim() as f64).sqrt() + 4.0 * grid.dx() + 1.0;
        Self::new(params, reach)
    }

    pub fn params(&self) -> &LambdaParams {
        &self.params
    }

    pub fn reach(&self) -> f64 {
        (self.values.len() - 2) as f64 * self.step
    }

    /// `H(y)`; odd in `y`.
    pub fn primitive(&self, y: f64) -> f64 {
        let a = y.abs();
        let pos = a / self.step;
        let i = pos.floor() as usize;
        let v = if i + 1 >= self.values.len() {
            let p = self.p;
            adaptive_gauss_legendre(|v| (1.0 + v * v).powf(0.5 * p), 0.0, a, QUAD_TOL)
        } else {
            let t = pos - i as f64;
            let (t2, t3) = (t * t, t * t * t);
            (2.0 * t3 - 3.0 * t2 + 1.0) * self.values[i]
                + (t3 - 2.0 * t2 + t) * self.step * self.slopes[i]
                + (-2.0 * t3 + 3.0 * t2) * self.values[i + 1]
                + (t3 - t2) * self.step * self.slopes[i + 1]
        };
        v.copysign(y)
    }

    /// `λ₁` and `λ₂` for a unit direction `w`.
    pub fn line_integrals(&self, x: &Point, w: &Point) -> (f64, f64) {
        let a = dot(x, w);
        let r2 = (x[0] * x[0] + x[1] * x[1] - a * a).max(0.0);
        let c2 = 1.0 + r2;
        let m = self.params.strength;
        let l2 = m * self.primitive(a);
        let l1 = if r2 == 0.0 {
            l2
        } else {
            let c = c2.sqrt();
            m * c2.powf(0.5 * (self.p + 1.0)) * self.primitive(a / c)
        };
        (l1, l2)
    }

    /// `-λ₁χ̃ - λ₂(1-χ̃)` for a unit direction `w`; equals `λ` once `|ξ| ≥ 2h`.
    pub fn directional(&self, x: &Point, w: &Point) -> f64 {
        let tc = chi(2.0 * dot(x, w) / japanese(x));
        let (l1, l2) = self.line_integrals(x, w);
        -l1 * tc - l2 * (1.0 - tc)
    }

    /// `-λ₁χ̃ - λ₂(1-χ̃)` and its exact `x`-gradient for a unit direction `w`.
    ///
    /// With `x⊥ = x - aω`: `∇λ₁ = g₁(x)ω + M c^{q-2}(qH(y) - yH'(y))x⊥`,
    /// `q = 1/s`, `y = a/c`; `∇λ₂ = M⟨a⟩^p ω`.
    pub fn directional_gradient(&self, x: &Point, w: &Point) -> (f64, Point) {
        let m = self.params.strength;
        let p = self.p;
        let q = p + 1.0;
        let x2 = x[0] * x[0] + x[1] * x[1];
        let jx = (1.0 + x2).sqrt();
        let a = dot(x, w);
        let perp = [x[0] - a * w[0], x[1] - a * w[1]];
        let c2 = 1.0 + (x2 - a * a).max(0.0);
        let c = c2.sqrt();
        let y = a / c;
        let hy = self.primitive(y);
        let cq = c.powf(q);
        let jp = jx.powf(p);
        let l1 = m * cq * hy;
        let l2 = m * self.primitive(a);
        let g = m * jp;
        // (1 + y²)^{p/2} = ⟨x⟩^p c^{-p}
        let k = m * cq / c2 * (q * hy - y * jp * c / cq);
        let d2 = m * (1.0 + a * a).powf(0.5 * p);
        let t = 2.0 * a / jx;
        let (tc, dchi) = (chi(t), chi_prime(t));
        let value = -l1 * tc - l2 * (1.0 - tc);
        let mut grad = [0.0; 2];
        for j in 0..2 {
            let g1j = g * w[j] + k * perp[j];
            let dt = 2.0 * (w[j] / jx - a * x[j] / (jx * jx * jx));
            grad[j] = -tc * g1j - (1.0 - tc) * d2 * w[j] - (l1 - l2) * dchi * dt;
        }
        (value, grad)
    }

    pub fn lambda(&self, x: &Point, xi: &Point) -> f64 {
        let cut = frequency_cutoff(xi, self.params.h);
        if cut == 0.0 {
            return 0.0;
        }
        let r = norm(xi);
        cut * self.directional(x, &[xi[0] / r, xi[1] / r])
    }
}

/// Complex samples `a(x_j, ξ_k)`, row-major in the spatial index.
#[derive(Debug, Clone)]
pub struct SymbolField {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

/// Largest `N = n^dim` for which a full phase-space field is stored.
pub const FIELD_MAX_NODES: usize = 4096;

impl SymbolField {
    pub fn from_fn<F>(grid: Arc<Grid>, f: F) -> Result<Self>
    where
        F: Fn(&Point, &Point) -> Complex64 + Sync,
    {
        let len = grid.len();
        if len > FIELD_MAX_NODES {
            return Err(Error::SizeCap(format!(
                "symbol field with {len} nodes exceeds {FIELD_MAX_NODES}"
            )));
        }
        let xis = grid.wavevectors();
        let mut values = vec![Complex64::new(0.0, 0.0); len * len];
        values.par_chunks_mut(len).enumerate().for_each(|(j, row)| {
            let x = grid.point(j);
            for (v, xi) in row.iter_mut().zip(&xis) {
                *v = f(&x, xi);
            }
        });
        Ok(Self { grid, values })
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<Complex64>) -> Result<Self> {
        let len = grid.len();
        if values.len() != len * len {
            return Err(Error::GridMismatch(format!(
                "symbol field needs {} samples, got {}",
                len * len,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, x_index: usize, xi_index: usize) -> Complex64 {
        self.values[x_index * self.grid.len() + xi_index]
    }

    pub fn row(&self, x_index: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.values[x_index * len..(x_index + 1) * len]
    }

    pub fn map<F: Fn(Complex64) -> Complex64 + Sync>(&self, f: F) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Columns `x, xi, re, im` in 1D and `x0, x1, xi0, xi1, re, im` in 2D.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let g = &self.grid;
        if g.dim() == 1 {
            out.write_record(["x", "xi", "re", "im"])?;
        } else {
            out.write_record(["x0", "x1", "xi0", "xi1", "re", "im"])?;
        }
        let xis = g.wavevectors();
        for j in 0..g.len() {
            let x = g.point(j);
            for (k, xi) in xis.iter().enumerate() {
                let v = self.get(j, k);
                let mut rec = vec![format!("{}", x[0])];
                if g.dim() == 2 {
                    rec.push(format!("{}", x[1]));
                }
                rec.push(format!("{}", xi[0]));
                if g.dim() == 2 {
                    rec.push(format!("{}", xi[1]));
                }
                rec.push(format!("{:.16e}", v.re));
                rec.push(format!("{:.16e}", v.im));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `λ` on the full lattice of `grid`.
pub fn lambda_field(grid: Arc<Grid>, params: &LambdaParams) -> Result<SymbolField> {
    let table = LambdaTable::for_grid(*params, &grid);
    SymbolField::from_fn(grid, |x, xi| Complex64::new(table.lambda(x, xi), 0.0))
}

/// Location and value of the lattice maximum of `λ/⟨x⟩^{1/s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CLambda {
    pub value: f64,
    pub x: Point,
    pub xi: Point,
}

/// Lattice maximum of `λ(x,ξ)/⟨x⟩^{1/s}`, a lower bound for the supremum.
pub fn c_of_lambda(params: &LambdaParams, grid: &Grid) -> CLambda {
    let table = LambdaTable::for_grid(*params, grid);
    let xis = grid.wavevectors();
    let inv_s = 1.0 / params.s;
    (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let x = grid.point(j);
            let w = japanese(&x).powf(inv_s);
            let mut best = CLambda {
                value: 0.0,
                x,
                xi: [0.0, 0.0],
            };
            for xi in &xis {
                let v = table.lambda(&x, xi) / w;
                if v > best.value {
                    best = CLambda { value: v, x, xi: *xi };
                }
            }
            best
        })
        .reduce(
            || CLambda {
                value: 0.0,
                x: [0.0, 0.0],
                xi: [0.0, 0.0],
            },
            |a, b| if b.value > a.value { b } else { a },
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportOptions {
    /// Check every `x_stride`-th node along each axis.
    pub x_stride: usize,
    /// Multiplier on the distance between the difference quotient and the
    /// closed-form gradient.
    pub safety: f64,
    /// Violating points kept in the report.
    pub max_listed: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            x_stride: 1,
            safety: 2.0,
            max_listed: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportPoint {
    pub x: Point,
    pub xi: Point,
    /// `Σ(∂_{x_j}λ)ξ_j + M⟨x⟩^{1/s-1}|ξ|`.
    pub value: f64,
    /// `ε_FD` at this point.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
    pub h: f64,
    #[serde(rename = "M")]
    pub strength: f64,
    pub s: f64,
    pub x_stride: usize,
    pub directions: usize,
    pub points_checked: u64,
    pub violations: u64,
    pub max_eps_fd: f64,
    /// Largest `ω·∇λ + M⟨x⟩^{1/s-1}` from the closed-form gradient.
    pub max_analytic_margin: f64,
    /// Largest `value - bound` over all checked points.
    pub worst: Option<TransportPoint>,
    pub violating: Vec<TransportPoint>,
    pub pass: bool,
}

/// Reduced lattice directions with `|ξ| ≥ 2h` up to sign, their multiplicity and
/// largest `|ξ|`.
fn lattice_directions(grid: &Grid, h: f64) -> Vec<([i64; 2], u64, Point)> {
    let mut dirs: HashMap<[i64; 2], (u64, Point, f64)> = HashMap::new();
    for k in 0..grid.len() {
        let xi = grid.wavevector(k);
        let r = norm(&xi);
        if r < 2.0 * h {
            continue;
        }
        let idx = grid.split(k);
        let mut key = [grid.frequency_index(idx[0]), 0];
        if grid.dim() == 2 {
            key = [grid.frequency_index(idx[0]), grid.frequency_index(idx[1])];
        }
        let g = gcd(key[0].unsigned_abs(), key[1].unsigned_abs()) as i64;
        let mut key = [key[0] / g, key[1] / g];
        // ω and -ω give bitwise identical checks
        if key[0] < 0 || (key[0] == 0 && key[1] < 0) {
            key = [-key[0], -key[1]];
        }
        let e = dirs.entry(key).or_insert((0, xi, r));
        e.0 += 1;
        if r > e.2 {
            e.1 = xi;
            e.2 = r;
        }
    }
    let mut out: Vec<_> = dirs.into_iter().map(|(k, (c, xi, _))| (k, c, xi)).collect();
    out.sort_by_key(|d| d.0);
    out
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Sign check `Σ(∂_{x_j}λ)ξ_j ≤ -M⟨x⟩^{1/s-1}|ξ|` on every lattice point with
/// `|ξ| ≥ 2h`, up to a finite-difference error bar.
///
/// There `λ` depends on `ξ` only through `ω`, so the check runs once per
/// reduced lattice direction and scales with `|ξ|`. The gradient is a central
/// difference with step `dx`; its error bar is `safety` times the distance to
/// the closed-form gradient, plus a rounding floor. Richardson estimates from
/// the lattice step are unreliable near the origin, where `χ̃` turns over on
/// a scale of `⟨x⟩/4`.
pub fn transport_sign_check(
    params: &LambdaParams,
    grid: &Grid,
    opts: &TransportOptions,
) -> TransportReport {
    let table = LambdaTable::for_grid(*params, grid);
    let dirs = lattice_directions(grid, params.h);
    let stride = opts.x_stride.max(1);
    let n = grid.n();
    let axis_nodes: Vec<usize> = (0..n).step_by(stride).collect();
    let nodes: Vec<[usize; 2]> = if grid.dim() == 1 {
        axis_nodes.iter().map(|&i| [i, 0]).collect()
    } else {
        axis_nodes
            .iter()
            .flat_map(|&i| axis_nodes.iter().map(move |&j| [i, j]))
            .collect()
    };
    let dx = grid.dx();
    let dim = grid.dim();
    let exponent = 1.0 / params.s - 1.0;

    struct Acc {
        violations: u64,
        points: u64,
        max_eps: f64,
        max_analytic: f64,
        worst: Option<TransportPoint>,
        listed: Vec<TransportPoint>,
    }
    let empty = || Acc {
        violations: 0,
        points: 0,
        max_eps: 0.0,
        max_analytic: f64::NEG_INFINITY,
        worst: None,
        listed: Vec::new(),
    };
    let merge = |mut a: Acc, b: Acc| {
        a.violations += b.violations;
        a.points += b.points;
        a.max_eps = a.max_eps.max(b.max_eps);
        a.max_analytic = a.max_analytic.max(b.max_analytic);
        a.worst = match (a.worst, b.worst) {
            (Some(p), Some(q)) => Some(if q.value - q.bound > p.value - p.bound { q } else { p }),
            (p, q) => p.or(q),
        };
        a.listed.extend(b.listed);
        a.listed.truncate(opts.max_listed);
        a
    };

    let acc = dirs
        .par_iter()
        .map(|&(_, count, xi)| {
            let r = norm(&xi);
            let w = [xi[0] / r, xi[1] / r];
            let mut acc = empty();
            // with unit stride every stencil neighbour is a lattice node, so
            // λ̃ is evaluated once on the lattice plus a one-node halo
            let side = n + 2;
            let coord = |i: isize| -grid.half_width() + i as f64 * dx;
            let cache: Vec<f64> = if stride == 1 {
                let rows = if dim == 1 { 1 } else { side };
                (0..rows * side)
                    .map(|flat| {
                        let (i, j) = if dim == 1 { (flat, 1) } else { (flat / side, flat % side) };
                        let y = if dim == 1 { 0.0 } else { coord(j as isize - 1) };
                        table.directional(&[coord(i as isize - 1), y], &w)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            for node in &nodes {
                let x = &if dim == 1 {
                    [coord(node[0] as isize), 0.0]
                } else {
                    [coord(node[0] as isize), coord(node[1] as isize)]
                };
                let (_, exact) = table.directional_gradient(x, &w);
                let mut coarse = 0.0;
                let mut reference = 0.0;
                let mut scale: f64 = 0.0;
                for (axis, wj) in w.iter().enumerate().take(dim) {
                    let (p1, m1) = if stride == 1 {
                        let at = |di: isize, dj: isize| {
                            let i = (node[0] as isize + 1 + di) as usize;
                            if dim == 1 {
                                cache[i]
                            } else {
                                cache[i * side + (node[1] as isize + 1 + dj) as usize]
                            }
                        };
                        if axis == 0 {
                            (at(1, 0), at(-1, 0))
                        } else {
                            (at(0, 1), at(0, -1))
                        }
                    } else {
                        let mut e = [0.0; 2];
                        e[axis] = dx;
                        (
                            table.directional(&[x[0] + e[0], x[1] + e[1]], &w),
                            table.directional(&[x[0] - e[0], x[1] - e[1]], &w),
                        )
                    };
                    coarse += wj * (p1 - m1) / (2.0 * dx);
                    reference += wj * exact[axis];
                    scale += wj.abs() * (p1.abs() + m1.abs());
                }
                let g = params.strength * japanese(x).powf(exponent);
                acc.max_analytic = acc.max_analytic.max(reference + g);
                let floor = (64.0 * f64::EPSILON + TABLE_REL_ERROR) * (1.0 + scale) / dx;
                let eps = opts.safety * (coarse - reference).abs() + floor;
                let value = (coarse + g) * r;
                let bound = eps * r;
                acc.points += count;
                acc.max_eps = acc.max_eps.max(bound);
                let pt = TransportPoint {
                    x: *x,
                    xi,
                    value,
                    bound,
                };
                if value > bound {
                    acc.violations += count;
                    if acc.listed.len() < opts.max_listed {
                        acc.listed.push(pt);
                    }
                }
                if acc.worst.map_or(true, |p| value - bound > p.value - p.bound) {
                    acc.worst = Some(pt);
                }
            }
            acc
        })
        .reduce(empty, merge);

    TransportReport {
        dim,
        n,
        half_width: grid.half_width(),
        h: params.h,
        strength: params.strength,
        s: params.s,
        x_stride: stride,
        directions: dirs.len(),
        points_checked: acc.points,
        violations: acc.violations,
        max_eps_fd: acc.max_eps,
        max_analytic_margin: acc.max_analytic,
        worst: acc.worst,
        violating: acc.listed,
        pass: acc.violations == 0,
    }
}

/// Weights in `|∂^α_ξ ∂^β_x f| ≤ M C^{k+1} (k!)^μ ⟨x⟩^{1/s-β} ⟨ξ⟩_h^{-α}`,
/// `k = α + β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevreyWeights {
    #[serde(rename = "M")]
    pub strength: f64,
    pub s: f64,
    pub h: f64,
    pub mu: f64,
    /// Growth exponent in `x`; `1/s` for `λ`, other values for coefficients.
    pub x_order: f64,
    /// Decay gained per `x` derivative.
    pub x_gain: f64,
}

impl GevreyWeights {
    pub fn for_lambda(params: &LambdaParams) -> Self {
        Self {
            strength: params.strength,
            s: params.s,
            h: params.h,
            mu: params.cutoff_order,
            x_order: 1.0 / params.s,
            x_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevreyTerm {
    pub alpha: u32,
    pub beta: u32,
    pub constant: f64,
    pub x: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GevreyFit {
    pub terms: Vec<GevreyTerm>,
    /// Largest per-order constant.
    pub constant: f64,
    pub finite: bool,
}

/// Every `(α, β)` with `α + β ≤ max_order`.
pub fn orders_up_to(max_order: u32) -> Vec<(u32, u32)> {
    (0..=max_order)
        .flat_map(|k| (0..=k).map(move |a| (a, k - a)))
        .collect()
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Smallest `C` per order with the weighted bound holding on the 1D lattice
/// `xs × xis`; derivatives by central differences with steps `(dx, dxi)`.
pub fn gevrey_bound_check<F>(
    f: F,
    xs: &[f64],
    xis: &[f64],
    steps: (f64, f64),
    orders: &[(u32, u32)],
    w: &GevreyWeights,
) -> GevreyFit
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let (dx, dxi) = steps;
    let deriv = |alpha: u32, beta: u32, x: f64, xi: f64| -> f64 {
        match (alpha, beta) {
            (0, b) => crate::fd::central(&|y| f(y, xi), x, dx, b),
            (a, 0) => crate::fd::central(&|z| f(x, z), xi, dxi, a),
            (1, 1) => crate::fd::mixed(&f, x, xi, dx, dxi),
            _ => panic!("orders above 2 are not supported"),
        }
    };
    let terms: Vec<GevreyTerm> = orders
        .iter()
        .map(|&(alpha, beta)| {
            assert!(alpha + beta <= 2, "orders above 2 are not supported");
            let k = alpha + beta;
            let fact = factorial(k).powf(w.mu);
            xs.par_iter()
                .map(|&x| {
                    let wx = (1.0 + x * x).sqrt().powf(w.x_order - w.x_gain * beta as f64);
                    let mut best = GevreyTerm {
                        alpha,
                        beta,
                        constant: 0.0,
                        x,
                        xi: 0.0,
                    };
                    for &xi in xis {
                        let wxi = (w.h * w.h + xi * xi).sqrt().powi(-(alpha as i32));
                        let ratio = deriv(alpha, beta, x, xi).abs() / (w.strength * fact * wx * wxi);
                        let c = ratio.powf(1.0 / (k + 1) as f64);
                        if !(c <= best.constant) {
                            best.constant = c;
                            best.xi = xi;
                        }
                    }
                    best
                })
                .reduce_with(|a, b| if b.constant > a.constant { b } else { a })
                .expect("non-empty lattice")
        })
        .collect();
    let constant = terms.iter().map(|t| t.constant).fold(0.0, f64::max);
    GevreyFit {
        finite: terms.iter().all(|t| t.constant.is_finite()),
        terms,
        constant,
    }
}
