//! Problems with closed-form solutions `u* = e^φ`, where
//! `φ = (t + τ)⟨x⟩^{1-σ} + ε⟨x⟩^{1/s}`, and the drift
//! `a = i(t + τ)(1-σ)x⟨x⟩^{-σ-1}`.
//!
//! Substituting `u = e^φ` into `∂ₜu - i∂²u + a∂u + bu = 0` leaves the bracket
//! `φₜ - i(φₓₓ + φₓ²) + aφₓ + b`. Its real part vanishes for
//! `b = -⟨x⟩^{1-σ} + ic`, and its imaginary part for
//! `c = φₓₓ + φₓ(φₓ - (t + τ)(1-σ)x⟨x⟩^{-σ-1}) = φₓₓ + εqx⟨x⟩^{q-2}φₓ`
//! with `q = 1/s`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy::{Coefficient, Problem};
use crate::error::{invalid, Result};
use crate::fd;
use crate::grid::{Grid, Point, StateVector};
use crate::gsnorm::{norm_box_sweep_log, GsIndices, SweepClass, SweepTable};

/// Polynomial weight exponent `-τ` used for the data's spaces; any `τ > 1/2` works.
pub const DATUM_TAU: f64 = 0.6;

fn jb(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// `∂ₓ⟨x⟩^p`.
fn dpow(x: f64, p: f64) -> f64 {
    p * x * jb(x).powf(p - 2.0)
}

/// `∂²ₓ⟨x⟩^p`.
fn d2pow(x: f64, p: f64) -> f64 {
    let b = jb(x);
    p * b.powf(p - 2.0) + p * (p - 2.0) * x * x * b.powf(p - 4.0)
}

/// `φ(t,x) = (t + τ)⟨x⟩^{1-σ} + ε⟨x⟩^{1/s}` with `τ = time_shift`, `ε = spatial_sign`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub time_shift: f64,
    pub spatial_sign: f64,
    pub sigma: f64,
    pub s: f64,
}

impl Phase {
    pub fn phi(&self, t: f64, x: f64) -> f64 {
        (t + self.time_shift) * jb(x).powf(1.0 - self.sigma) + self.spatial_sign * jb(x).powf(1.0 / self.s)
    }

    pub fn phi_t(&self, _t: f64, x: f64) -> f64 {
        jb(x).powf(1.0 - self.sigma)
    }

    pub fn phi_x(&self, t: f64, x: f64) -> f64 {
        (t + self.time_shift) * dpow(x, 1.0 - self.sigma) + self.spatial_sign * dpow(x, 1.0 / self.s)
    }

    pub fn phi_xx(&self, t: f64, x: f64) -> f64 {
        (t + self.time_shift) * d2pow(x, 1.0 - self.sigma) + self.spatial_sign * d2pow(x, 1.0 / self.s)
    }
}

/// Which closed-form family a problem belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    /// Decaying datum `e^{-⟨x⟩^{1/s}}`.
    Decaying,
    /// Critical `s = 1/(1-σ)`, datum `e^{-⟨x⟩^{1-σ}}`.
    Critical,
    /// Growing datum `e^{⟨x⟩^{1/s}}`.
    Growing,
}

#[derive(Debug, Clone)]
pub struct ExactProblem {
    kind: ExampleKind,
    problem: Problem,
    phase: Phase,
    /// Constant added to `b`.
    shift: Complex64,
}

/// Default horizon of the built-in problems.
pub const DEFAULT_HORIZON: f64 = 1.0;

/// `(t + τ)(1-σ)x⟨x⟩^{-σ-1}`, the imaginary part of the drift.
fn drift_im(phase: &Phase, t: f64, x: f64) -> f64 {
    (t + phase.time_shift) * (1.0 - phase.sigma) * x * jb(x).powf(-phase.sigma - 1.0)
}

/// Imaginary part of `b`, written out term by term.
fn corrector(phase: &Phase, t: f64, x: f64) -> f64 {
    let (sig, q, eps) = (phase.sigma, 1.0 / phase.s, phase.spatial_sign);
    let tt = t + phase.time_shift;
    let b = jb(x);
    let x2 = x * x;
    let transport = tt * (1.0 - sig) * (b.powf(-sig - 1.0) - (1.0 + sig) * x2 * b.powf(-sig - 3.0));
    let spatial = eps * q * (b.powf(q - 2.0) + (q - 2.0) * x2 * b.powf(q - 4.0));
    let cross = eps * q * x * b.powf(q - 2.0) * (tt * (1.0 - sig) * x * b.powf(-sig - 1.0) + eps * q * x * b.powf(q - 2.0));
    transport + spatial + cross
}

fn build(kind: ExampleKind, phase: Phase, horizon: f64, shift: Complex64, datum: Arc<dyn Fn(&Point) -> Complex64 + Send + Sync>) -> Result<ExactProblem> {
    let a: Coefficient = Arc::new(move |t, x: &Point| Complex64::new(0.0, drift_im(&phase, t, x[0])));
    let b: Coefficient = Arc::new(move |t, x: &Point| {
        Complex64::new(-jb(x[0]).powf(1.0 - phase.sigma), corrector(&phase, t, x[0])) + shift
    });
    let problem = Problem::new(1, phase.sigma, phase.s, horizon, datum)?
        .with_drift(0, a)?
        .with_potential(b);
    Ok(ExactProblem {
        kind,
        problem,
        phase,
        shift,
    })
}

fn check_family(sigma: f64, s: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid("sigma", format!("must lie in (0, 1), got {sigma}")));
    }
    if !(s > 1.0 && s.is_finite()) {
        return Err(invalid("s", format!("must exceed 1, got {s}")));
    }
    Ok(())
}

/// `u* = e^{t⟨x⟩^{1-σ} - ⟨x⟩^{1/s}}`, requires `s < 1/(1-σ)`.
pub fn example1(sigma: f64, s: f64) -> Result<ExactProblem> {
    check_family(sigma, s)?;
    if !(s * (1.0 - sigma) < 1.0) {
        return Err(invalid("s", format!("needs s < 1/(1-σ) = {}, got {s}", 1.0 / (1.0 - sigma))));
    }
    example1_unrestricted(sigma, s)
}

/// The family of [`example1`] for any `s > 1`. Beyond `1/(1-σ)` the datum is
/// still admissible but no decay loss recovers the solution.
pub fn example1_unrestricted(sigma: f64, s: f64) -> Result<ExactProblem> {
    check_family(sigma, s)?;
    let phase = Phase {
        time_shift: 0.0,
        spatial_sign: -1.0,
        sigma,
        s,
    };
    let datum = Arc::new(move |x: &Point| Complex64::new((-jb(x[0]).powf(1.0 / s)).exp(), 0.0));
    build(ExampleKind::Decaying, phase, DEFAULT_HORIZON, Complex64::new(0.0, 0.0), datum)
}

/// `u* = e^{(t-1)⟨x⟩^{1-σ}}` at `s = 1/(1-σ)`.
pub fn example2(sigma: f64) -> Result<ExactProblem> {
    check_family(sigma, 2.0)?;
    let phase = Phase {
        time_shift: -1.0,
        spatial_sign: 0.0,
        sigma,
        s: 1.0 / (1.0 - sigma),
    };
    let datum = Arc::new(move |x: &Point| Complex64::new((-jb(x[0]).powf(1.0 - sigma)).exp(), 0.0));
    build(ExampleKind::Critical, phase, DEFAULT_HORIZON, Complex64::new(0.0, 0.0), datum)
}

/// `u* = e^{t⟨x⟩^{1-σ} + ⟨x⟩^{1/s}}`, requires `s ≤ 1/(1-σ)`.
pub fn example3(sigma: f64, s: f64) -> Result<ExactProblem> {
    check_family(sigma, s)?;
    if !(s * (1.0 - sigma) <= 1.0 + 1e-12) {
        return Err(invalid("s", format!("needs s <= 1/(1-σ) = {}, got {s}", 1.0 / (1.0 - sigma))));
    }
    let phase = Phase {
        time_shift: 0.0,
        spatial_sign: 1.0,
        sigma,
        s,
    };
    let datum = Arc::new(move |x: &Point| Complex64::new(jb(x[0]).powf(1.0 / s).exp(), 0.0));
    build(ExampleKind::Growing, phase, DEFAULT_HORIZON, Complex64::new(0.0, 0.0), datum)
}

impl ExactProblem {
    pub fn kind(&self) -> ExampleKind {
        self.kind
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn sigma(&self) -> f64 {
        self.phase.sigma
    }

    pub fn s(&self) -> f64 {
        self.phase.s
    }

    pub fn horizon(&self) -> f64 {
        self.problem.horizon()
    }

    fn rebuild(&self, horizon: f64, shift: Complex64) -> Result<Self> {
        let p = self.problem.clone();
        let datum = Arc::new(move |x: &Point| p.datum(x));
        build(self.kind, self.phase, horizon, shift, datum)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        self.rebuild(horizon, self.shift)
    }

    /// Same problem with `b` replaced by `b + eps`; `u*` is unchanged, so the
    /// residual grows to `|eps|`.
    pub fn with_potential_shift(&self, eps: Complex64) -> Result<Self> {
        self.rebuild(self.horizon(), self.shift + eps)
    }

    pub fn exact(&self, t: f64, x: f64) -> Complex64 {
        Complex64::new(self.phase.phi(t, x).exp(), 0.0)
    }

    /// `ln|u*(t,x)| = φ(t,x)`.
    pub fn log_modulus(&self, t: f64, x: f64) -> f64 {
        self.phase.phi(t, x)
    }

    pub fn exact_state(&self, t: f64, grid: &Arc<Grid>) -> StateVector {
        StateVector::from_fn(grid.clone(), |x| self.exact(t, x[0]))
    }

    /// `φₜ - i(φₓₓ + φₓ²) + aφₓ + b`, zero exactly when `u*` solves the equation.
    pub fn residual(&self, t: f64, x: f64) -> Complex64 {
        let ph = &self.phase;
        let p = [x, 0.0];
        let phi_x = ph.phi_x(t, x);
        Complex64::new(ph.phi_t(t, x), 0.0) - Complex64::new(0.0, ph.phi_xx(t, x) + phi_x * phi_x)
            + self.problem.drift(0, t, &p) * phi_x
            + self.problem.potential(t, &p)
    }

    /// Indices of the space the datum belongs to: `m₂ = -τ`, `ρ₂ = 1` for
    /// decaying data and `-1` for the growing datum.
    pub fn datum_indices(&self) -> Result<GsIndices> {
        let rho2 = match self.kind {
            ExampleKind::Growing => -1.0,
            _ => 1.0,
        };
        GsIndices::spatial(-DATUM_TAU, rho2, self.phase.s)
    }
}

/// Largest residual modulus over the nodes of `grid` and the given times.
pub fn residual_check(ep: &ExactProblem, times: &[f64], grid: &Grid) -> f64 {
    let nodes = grid.nodes();
    times
        .par_iter()
        .map(|&t| nodes.iter().map(|&x| ep.residual(t, x).norm()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max)
}

/// Fitted constants `C_β = max |∂^β f| / ⟨x⟩^{e-β}` for `β = 0, 1, 2`.
pub type Fit = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// `Im a` against `⟨x⟩^{-σ-β}`.
    pub im_a: Fit,
    /// `Re a` against `⟨x⟩^{1-σ-β}`.
    pub re_a: Fit,
    /// `b` against `⟨x⟩^{1-σ-β}`.
    pub b: Fit,
    /// The same fits on a lattice twice as fine with halved difference steps.
    pub refined_im_a: Fit,
    pub refined_re_a: Fit,
    pub refined_b: Fit,
    /// Largest relative change of a nonzero constant under refinement.
    pub refinement_change: f64,
    pub pass: bool,
}

/// Relative change tolerated between the two lattices.
pub const REFINEMENT_TOL: f64 = 0.05;

const FD_STEPS: [f64; 3] = [0.0, 1e-3, 1e-2];

fn fit<F: Fn(f64) -> Complex64 + Sync>(f: F, nodes: &[f64], exponent: f64, refine: f64) -> Fit {
    let mut out = [0.0; 3];
    for (beta, slot) in out.iter_mut().enumerate() {
        let step = FD_STEPS[beta] * refine;
        *slot = nodes
            .par_iter()
            .map(|&x| {
                let re = fd::central(&|y| f(y).re, x, step, beta as u32);
                let im = fd::central(&|y| f(y).im, x, step, beta as u32);
                Complex64::new(re, im).norm() / jb(x).powf(exponent - beta as f64)
            })
            .reduce(|| 0.0, f64::max);
    }
    out
}

/// Finite-difference fit of the coefficient bounds on `[-L, L]` with `n`
/// nodes and `times` samples, repeated at `2n` nodes with halved steps.
pub fn hypothesis_check(ep: &ExactProblem, half_width: f64, n: usize, times: &[f64]) -> Result<HypothesisReport> {
    if times.is_empty() || n < 2 {
        return Err(invalid("hypothesis_check", "needs time samples and at least two nodes"));
    }
    let sigma = ep.sigma();
    let p = &ep.problem;
    let run = |n: usize, refine: f64| -> [Fit; 3] {
        let nodes: Vec<f64> = (0..=n).map(|j| -half_width + 2.0 * half_width * j as f64 / n as f64).collect();
        let mut acc = [[0.0; 3]; 3];
        for &t in times {
            let fits = [
                fit(|x| Complex64::new(p.drift(0, t, &[x, 0.0]).im, 0.0), &nodes, -sigma, refine),
                fit(|x| Complex64::new(p.drift(0, t, &[x, 0.0]).re, 0.0), &nodes, 1.0 - sigma, refine),
                fit(|x| p.potential(t, &[x, 0.0]), &nodes, 1.0 - sigma, refine),
            ];
            for (a, f) in acc.iter_mut().zip(fits) {
                for (x, y) in a.iter_mut().zip(f) {
                    *x = f64::max(*x, y);
                }
            }
        }
        acc
    };
    let [im_a, re_a, b] = run(n, 1.0);
    let [refined_im_a, refined_re_a, refined_b] = run(2 * n, 0.5);
    let mut change: f64 = 0.0;
    let mut finite = true;
    for (c, r) in [(im_a, refined_im_a), (re_a, refined_re_a), (b, refined_b)] {
        for (x, y) in c.iter().zip(r) {
            finite &= x.is_finite() && y.is_finite();
            let scale = x.max(y);
            if scale > 0.0 {
                change = change.max((x - y).abs() / scale);
            }
        }
    }
    Ok(HypothesisReport {
        im_a,
        re_a,
        b,
        refined_im_a,
        refined_re_a,
        refined_b,
        refinement_change: change,
        pass: finite && change <= REFINEMENT_TOL,
    })
}

/// Box sweep of `u*(t)` in the space `idx` over `[-L, L)` boxes of spacing `dx`.
pub fn membership_sweep(ep: &ExactProblem, t: f64, idx: &GsIndices, ladder: &[f64], dx: f64) -> Result<(SweepTable, Option<SweepClass>)> {
    let table = norm_box_sweep_log(|x| ep.log_modulus(t, x), ladder, dx, idx)?;
    let class = table.classify();
    Ok((table, class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    fn all() -> Vec<ExactProblem> {
        vec![example1(0.5, 1.8).unwrap(), example2(0.5).unwrap(), example3(0.5, 1.8).unwrap(), example3(0.4, 1.0 / 0.6).unwrap()]
    }

    #[test]
    fn constructors_check_ranges() {
        assert!(example1(0.5, 2.0).is_err());
        assert!(example1(0.5, 1.0).is_err());
        assert!(example1(1.0, 1.5).is_err());
        assert!(example1_unrestricted(0.5, 3.0).is_ok());
        assert!(example3(0.5, 2.0).is_ok());
        assert!(example3(0.5, 2.01).is_err());
        assert!(example2(0.0).is_err());
        assert_eq!(example2(0.5).unwrap().s(), 2.0);
    }

    #[test]
    fn phase_derivatives_match_finite_differences() {
        for ep in all() {
            let ph = *ep.phase();
            for &x in &[-7.3, -1.0, 0.0, 0.4, 12.0] {
                for &t in &[0.0, 0.3, 1.0] {
                    let (vt, et) = fd::richardson(&|s| ph.phi(s, x), t, 1e-3, 1);
                    assert!((ph.phi_t(t, x) - vt).abs() <= 10.0 * et + 1e-9);
                    let (vx, ex) = fd::richardson(&|y| ph.phi(t, y), x, 1e-3, 1);
                    assert!((ph.phi_x(t, x) - vx).abs() <= 10.0 * ex + 1e-9);
                    let (vxx, exx) = fd::richardson(&|y| ph.phi(t, y), x, 1e-2, 2);
                    assert!((ph.phi_xx(t, x) - vxx).abs() <= 10.0 * exx + 1e-7, "{x} {t}");
                }
            }
        }
    }

    #[test]
    fn residuals_vanish_to_rounding() {
        let grid = make_grid(1, 1024, 40.0).unwrap();
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        for ep in all() {
            let r = residual_check(&ep, &times, &grid);
            assert!(r <= 1e-12, "{:?}: {r}", ep.kind());
        }
    }

    #[test]
    fn residual_is_linear_in_a_potential_shift() {
        let grid = make_grid(1, 256, 40.0).unwrap();
        let ep = example1(0.5, 1.8).unwrap().with_potential_shift(Complex64::new(1e-6, 0.0)).unwrap();
        let r = residual_check(&ep, &[0.0, 0.5], &grid);
        assert!((r - 1e-6).abs() <= 1e-11, "{r}");
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        // constants solve the free equation
        let p = Problem::new(1, 0.5, 2.0, 1.0, Arc::new(|_: &Point| Complex64::new(1.0, 0.0))).unwrap();
        let grid = make_grid(1, 64, 10.0).unwrap();
        let u = p.initial_state(&grid).unwrap();
        let g = crate::cauchy::assemble_generator(&p, 0.5, &grid).unwrap().apply(&u).unwrap();
        assert!(g.max_abs() <= 1e-12);
    }

    #[test]
    fn datum_is_the_solution_at_time_zero() {
        let grid = make_grid(1, 1024, 40.0).unwrap();
        for ep in all() {
            let g = ep.problem().initial_state(&grid).unwrap();
            let u = ep.exact_state(0.0, &grid);
            for (a, b) in g.values().iter().zip(u.values()) {
                assert!((a - b).norm() <= 1e-14 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn printed_correctors_compared_with_the_derived_ones() {
        let (sig, s) = (0.5, 1.8);
        let q = 1.0 / s;
        let bb = |x: f64| jb(x);
        // Example 1 as printed: the first summand has the opposite sign.
        let printed1 = |t: f64, x: f64| {
            q * x * bb(x).powf(q - 2.0) * (t * (1.0 - sig) * x * bb(x).powf(-sig - 1.0) - q * x * bb(x).powf(q - 2.0))
                + t * (1.0 - sig) * bb(x).powf(-sig - 1.0)
                - q * bb(x).powf(q - 2.0)
                - t * (1.0 - sig * sig) * x * x * bb(x).powf(-sig - 3.0)
                - q * (q - 2.0) * x * x * bb(x).powf(q - 4.0)
        };
        let first1 = |t: f64, x: f64| q * x * bb(x).powf(q - 2.0) * (t * (1.0 - sig) * x * bb(x).powf(-sig - 1.0) - q * x * bb(x).powf(q - 2.0));
        let printed2 = |t: f64, x: f64| (1.0 - sig) * (t - 1.0) * bb(x).powf(-sig - 1.0) - (1.0 - sig * sig) * (t - 1.0) * x * x * bb(x).powf(-sig - 3.0);
        let printed3 = |t: f64, x: f64| {
            q * x * bb(x).powf(q - 2.0) * (t * (1.0 - sig) * x * bb(x).powf(-sig - 1.0) + q * x * bb(x).powf(q - 2.0))
                + t * (1.0 - sig) * bb(x).powf(-sig - 1.0)
                + q * bb(x).powf(q - 2.0)
                - t * (1.0 - sig * sig) * x * x * bb(x).powf(-sig - 3.0)
                + q * (q - 2.0) * x * x * bb(x).powf(q - 4.0)
        };
        let (e1, e2, e3) = (example1(sig, s).unwrap(), example2(sig).unwrap(), example3(sig, s).unwrap());
        for &x in &[-5.0, -0.3, 0.7, 3.0, 20.0] {
            for &t in &[0.2, 0.9] {
                let c = |ep: &ExactProblem| ep.problem().potential(t, &[x, 0.0]).im;
                assert!((c(&e2) - printed2(t, x)).abs() <= 1e-13);
                assert!((c(&e3) - printed3(t, x)).abs() <= 1e-13);
                // derived = printed - 2·(first summand)
                assert!((c(&e1) - (printed1(t, x) - 2.0 * first1(t, x))).abs() <= 1e-13);
                assert!((c(&e1) - printed1(t, x)).abs() > 1e-6);
            }
        }
    }

    #[test]
    fn critical_example_loses_all_decay_at_time_one() {
        let ep = example2(0.5).unwrap();
        for &x in &[-100.0, 0.0, 3.0, 1e4] {
            assert_eq!(ep.exact(1.0, x), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn growing_example_outgrows_its_datum() {
        let ep = example3(0.5, 1.8).unwrap();
        for &x in &[-30.0, 0.0, 2.0, 50.0] {
            for &t in &[0.1, 0.7] {
                let gain = ep.log_modulus(t, x) - ep.log_modulus(0.0, x);
                assert!((gain - t * jb(x).powf(0.5)).abs() <= 1e-12 * gain);
                assert!(gain > 0.0);
            }
        }
        assert_eq!(ep.datum_indices().unwrap().rho2(), -1.0);
    }

    #[test]
    fn membership_of_the_decaying_example() {
        let ep = example1(0.5, 1.8).unwrap();
        let idx = ep.datum_indices().unwrap();
        let ladder = [256.0, 512.0, 1024.0, 2048.0];
        let (_, at0) = membership_sweep(&ep, 0.0, &idx, &ladder, 0.5).unwrap();
        assert_eq!(at0, Some(SweepClass::Convergent));
        let (table, later) = membership_sweep(&ep, 0.5, &idx, &ladder, 0.5).unwrap();
        assert_eq!(later, Some(SweepClass::Divergent));
        assert!(table.is_monotone());
        // the growing datum only sits in a space with negative ρ₂
        let up = example3(0.5, 1.8).unwrap();
        let (_, g) = membership_sweep(&up, 0.0, &up.datum_indices().unwrap(), &ladder, 0.5).unwrap();
        assert_eq!(g, Some(SweepClass::Convergent));
        let (_, g) = membership_sweep(&up, 0.0, &GsIndices::spatial(-DATUM_TAU, 0.0, 1.8).unwrap(), &ladder, 0.5).unwrap();
        assert_eq!(g, Some(SweepClass::Divergent));
    }

    #[test]
    fn hypothesis_constants() {
        let ep = example1(0.5, 1.8).unwrap();
        let times = [0.0, 0.5, 1.0];
        let r = hypothesis_check(&ep, 40.0, 400, &times).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.re_a, [0.0; 3]);
        // |t(1-σ)x⟨x⟩^{-σ-1}| ≤ T(1-σ)⟨x⟩^{-σ}
        assert!(r.im_a[0] <= 1.0 * 0.5 * (1.0 + 1e-12));
        assert!(r.b.iter().all(|c| c.is_finite() && *c > 0.0));
        assert!(hypothesis_check(&ep, 40.0, 400, &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn residual_vanishes_across_the_family(sigma in 0.05f64..0.95, frac in 0.01f64..0.99, t in 0.0f64..2.0, x in -60.0f64..60.0) {
            let s = 1.0 + frac * (1.0 / (1.0 - sigma) - 1.0);
            let ep = example1(sigma, s).unwrap().with_horizon(2.0).unwrap();
            let scale = 1.0 + ep.phase().phi_t(t, x) + ep.phase().phi_x(t, x).powi(2);
            prop_assert!(ep.residual(t, x).norm() <= 1e-13 * scale);
        }
    }
}
