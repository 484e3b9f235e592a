//! The Cauchy problem `∂ₜu = G(t)u + f`, `u(0) = g`, with
//! `G = iΔ - Σⱼ aⱼ∂ⱼ - b`, on the periodic grid.
//!
//! Time stepping is Crank–Nicolson. The linear system of each step is solved
//! densely by LU or matrix-free by GMRES, preconditioned with the exact
//! inverse of `I - (dt/2)iΔ`. The conjugated route evolves `v = e^Λ u`, where
//! `e^Λ = W(t)·e^λ(x,D)` and `W = e^{k(t)⟨x⟩_h^{1-σ}}`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::examples::ExactProblem;
use crate::grid::{Grid, Point, StateVector};
use crate::gsnorm::{gs_norm, norm_box_sweep_log, GsIndices, SweepClass};
use crate::krylov::{gmres, GmresOptions};
use crate::pdo::{adapted_lambda_field, assemble_dense, exp_field, DenseOp, Quantization, Taper, CONDITION_CAP};
use crate::symbol::{frequency_cutoff, ConjugationSchedule, LambdaParams, LambdaTable, SymbolField};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Space-time coefficient `(t, x) ↦ c(t, x)`.
pub type Coefficient = Arc<dyn Fn(f64, &Point) -> Complex64 + Send + Sync>;
/// Initial datum `x ↦ g(x)`.
pub type Datum = Arc<dyn Fn(&Point) -> Complex64 + Send + Sync>;

/// Coefficients, source and datum of the problem. Absent coefficients are zero.
#[derive(Clone)]
pub struct Problem {
    dim: usize,
    sigma: f64,
    s0: f64,
    horizon: f64,
    drift: Vec<Option<Coefficient>>,
    potential: Option<Coefficient>,
    source: Option<Coefficient>,
    datum: Datum,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("dim", &self.dim)
            .field("sigma", &self.sigma)
            .field("s0", &self.s0)
            .field("horizon", &self.horizon)
            .field("drift", &self.drift.iter().map(Option::is_some).collect::<Vec<_>>())
            .field("potential", &self.potential.is_some())
            .field("source", &self.source.is_some())
            .finish()
    }
}

impl Problem {
    /// Free problem (`a = b = f = 0`) with datum `g`.
    pub fn new(dim: usize, sigma: f64, s0: f64, horizon: f64, datum: Datum) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("dim", format!("must be 1 or 2, got {dim}")));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(invalid("sigma", format!("must lie in (0, 1), got {sigma}")));
        }
        if !(s0 > 1.0) {
            return Err(invalid("s0", format!("must exceed 1, got {s0}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("must be positive, got {horizon}")));
        }
        Ok(Self {
            dim,
            sigma,
            s0,
            horizon,
            drift: vec![None; dim],
            potential: None,
            source: None,
            datum,
        })
    }

    pub fn with_drift(mut self, axis: usize, a: Coefficient) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::AxisOutOfRange { axis, dim: self.dim });
        }
        self.drift[axis] = Some(a);
        Ok(self)
    }

    pub fn with_potential(mut self, b: Coefficient) -> Self {
        self.potential = Some(b);
        self
    }

    pub fn with_source(mut self, f: Coefficient) -> Self {
        self.source = Some(f);
        self
    }

    pub fn with_datum(mut self, g: Datum) -> Self {
        self.datum = g;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn has_source(&self) -> bool {
        self.source.is_some()
    }

    pub fn drift(&self, axis: usize, t: f64, x: &Point) -> Complex64 {
        self.drift.get(axis).and_then(|a| a.as_ref()).map_or(ZERO, |a| a(t, x))
    }

    pub fn potential(&self, t: f64, x: &Point) -> Complex64 {
        self.potential.as_ref().map_or(ZERO, |b| b(t, x))
    }

    pub fn source(&self, t: f64, x: &Point) -> Complex64 {
        self.source.as_ref().map_or(ZERO, |f| f(t, x))
    }

    pub fn datum(&self, x: &Point) -> Complex64 {
        (self.datum)(x)
    }

    pub fn initial_state(&self, grid: &Arc<Grid>) -> Result<StateVector> {
        self.check_grid(grid)?;
        let u = StateVector::from_fn(grid.clone(), |x| self.datum(x));
        finite(u.values(), "datum")?;
        Ok(u)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::GridMismatch(format!(
                "{}-dimensional problem on a {}-dimensional grid",
                self.dim,
                grid.dim()
            )));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(invalid("t", format!("must lie in [0, {}], got {t}", self.horizon)));
        }
        Ok(())
    }
}

fn finite(v: &[Complex64], what: &'static str) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Nodal coefficient values at one time.
struct Frozen {
    drift: Vec<Option<Vec<Complex64>>>,
    potential: Option<Vec<Complex64>>,
}

fn sample(grid: &Grid, t: f64, c: &Coefficient, what: &'static str) -> Result<Vec<Complex64>> {
    let v: Vec<Complex64> = (0..grid.len()).map(|j| c(t, &grid.point(j))).collect();
    finite(&v, what)?;
    Ok(v)
}

fn freeze(problem: &Problem, grid: &Grid, t: f64) -> Result<Frozen> {
    problem.check_time(t)?;
    let drift = problem
        .drift
        .iter()
        .map(|a| a.as_ref().map(|a| sample(grid, t, a, "drift coefficient")).transpose())
        .collect::<Result<_>>()?;
    let potential = problem
        .potential
        .as_ref()
        .map(|b| sample(grid, t, b, "potential coefficient"))
        .transpose()?;
    Ok(Frozen { drift, potential })
}

fn forcing(problem: &Problem, grid: &Grid, t: f64) -> Result<Option<Vec<Complex64>>> {
    problem.check_time(t)?;
    problem.source.as_ref().map(|f| sample(grid, t, f, "source")).transpose()
}

/// Fourier multipliers shared by every step.
struct Spectral {
    grid: Arc<Grid>,
    /// `-|ξ|²`.
    laplacian: Vec<f64>,
    /// `iξ_axis`, zero on the Nyquist mode of that axis.
    derivative: Vec<Vec<Complex64>>,
}

impl Spectral {
    fn new(grid: Arc<Grid>) -> Self {
        let len = grid.len();
        let laplacian = (0..len)
            .map(|k| {
                let xi = grid.wavevector(k);
                -(xi[0] * xi[0] + xi[1] * xi[1])
            })
            .collect();
        let derivative = (0..grid.dim())
            .map(|axis| {
                (0..len)
                    .map(|k| if grid.is_nyquist(k, axis) { ZERO } else { Complex64::new(0.0, grid.wavevector(k)[axis]) })
                    .collect()
            })
            .collect();
        Self {
            grid,
            laplacian,
            derivative,
        }
    }

    fn apply(&self, fz: &Frozen, u: &[Complex64]) -> Vec<Complex64> {
        let mut hat = u.to_vec();
        self.grid.dft_in_place(&mut hat);
        let mut out: Vec<Complex64> = hat.iter().zip(&self.laplacian).map(|(v, l)| v * l).collect();
        self.grid.idft_in_place(&mut out);
        out.iter_mut().for_each(|v| *v *= I);
        for (axis, a) in fz.drift.iter().enumerate() {
            let Some(a) = a else { continue };
            let mut d: Vec<Complex64> = hat.iter().zip(&self.derivative[axis]).map(|(v, m)| v * m).collect();
            self.grid.idft_in_place(&mut d);
            for ((o, aj), dj) in out.iter_mut().zip(a).zip(&d) {
                *o -= aj * dj;
            }
        }
        if let Some(b) = &fz.potential {
            for ((o, bj), uj) in out.iter_mut().zip(b).zip(u) {
                *o -= bj * uj;
            }
        }
        out
    }

    /// `(I - c·iΔ)⁻¹ v`.
    fn precondition(&self, v: &[Complex64], c: f64) -> Vec<Complex64> {
        let mut hat = v.to_vec();
        self.grid.dft_in_place(&mut hat);
        for (h, l) in hat.iter_mut().zip(&self.laplacian) {
            *h /= Complex64::new(1.0, -c * l);
        }
        self.grid.idft_in_place(&mut hat);
        hat
    }
}

/// Dense `iΔ` and `∂ⱼ`, consistent with [`Spectral`].
struct DenseParts {
    schrodinger: Mat<Complex64>,
    derivative: Vec<Mat<Complex64>>,
}

impl DenseParts {
    fn new(grid: &Arc<Grid>) -> Result<Self> {
        let lap = DenseOp::multiplier(grid.clone(), |xi| Complex64::new(0.0, -(xi[0] * xi[0] + xi[1] * xi[1])))?;
        let nyquist = grid.max_frequency();
        let derivative = (0..grid.dim())
            .map(|axis| {
                DenseOp::multiplier(grid.clone(), |xi| {
                    if xi[axis] <= -nyquist * (1.0 - 1e-12) {
                        ZERO
                    } else {
                        Complex64::new(0.0, xi[axis])
                    }
                })
                .map(DenseOp::into_matrix)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schrodinger: lap.into_matrix(),
            derivative,
        })
    }

    fn generator(&self, fz: &Frozen) -> Mat<Complex64> {
        let len = self.schrodinger.nrows();
        Mat::from_fn(len, len, |i, j| {
            let mut v = self.schrodinger[(i, j)];
            for (axis, a) in fz.drift.iter().enumerate() {
                if let Some(a) = a {
                    v -= a[i] * self.derivative[axis][(i, j)];
                }
            }
            if i == j {
                if let Some(b) = &fz.potential {
                    v -= b[i];
                }
            }
            v
        })
    }
}

/// Dense matrix of `G(t)`: transform-diagonal Laplacian, coefficient times
/// spectral derivative, and diagonal `b`.
pub fn assemble_generator(problem: &Problem, t: f64, grid: &Arc<Grid>) -> Result<DenseOp> {
    problem.check_grid(grid)?;
    let fz = freeze(problem, grid, t)?;
    let parts = DenseParts::new(grid)?;
    DenseOp::from_matrix(grid.clone(), parts.generator(&fz), Quantization::General)
}

/// Where the generator is frozen within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeRule {
    /// `(I - dt/2·G(t+dt/2))u⁺ = (I + dt/2·G(t+dt/2))u + dt·f(t+dt/2)`.
    Midpoint,
    /// `(I - dt/2·G(t+dt))u⁺ = (I + dt/2·G(t))u + dt·f(t+dt/2)`.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolve {
    /// Direct up to [`DIRECT_MAX_NODES`] nodes, Krylov beyond.
    Auto,
    Direct,
    Krylov(GmresOptions),
}

/// Node count up to which [`LinearSolve::Auto`] factors each step densely.
pub const DIRECT_MAX_NODES: usize = 256;

/// Relative residual above which a direct step is reported as failed.
const DIRECT_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub dt: f64,
    pub rule: TimeRule,
    pub linear: LinearSolve,
    /// Abort when `|u|` on the box edge exceeds this fraction of `‖u‖∞`.
    pub boundary_threshold: Option<f64>,
    /// Keep every `keep_every`-th state; the first and last are always kept.
    pub keep_every: usize,
    /// Indices whose norms are traced at every step.
    pub indices: Vec<GsIndices>,
    /// Final time; the problem horizon when absent.
    pub until: Option<f64>,
}

/// Default edge-to-peak ratio tolerated by the boundary monitor.
pub const BOUNDARY_THRESHOLD: f64 = 1e-8;

impl SolveOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            rule: TimeRule::Midpoint,
            linear: LinearSolve::Auto,
            boundary_threshold: Some(BOUNDARY_THRESHOLD),
            keep_every: 1,
            indices: Vec::new(),
            until: None,
        }
    }

    pub fn rule(mut self, rule: TimeRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn linear(mut self, linear: LinearSolve) -> Self {
        self.linear = linear;
        self
    }

    pub fn boundary_threshold(mut self, threshold: Option<f64>) -> Self {
        self.boundary_threshold = threshold;
        self
    }

    pub fn keep_every(mut self, k: usize) -> Self {
        self.keep_every = k.max(1);
        self
    }

    pub fn indices(mut self, indices: Vec<GsIndices>) -> Self {
        self.indices = indices;
        self
    }

    pub fn until(mut self, t: f64) -> Self {
        self.until = Some(t);
        self
    }

    /// Number of steps to the final time; fails unless `dt` divides it.
    pub fn steps(&self, horizon: f64) -> Result<usize> {
        let end = self.until.unwrap_or(horizon);
        if !(end > 0.0 && end <= horizon * (1.0 + 1e-12)) {
            return Err(invalid("until", format!("must lie in (0, {horizon}], got {end}")));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        let n = (end / self.dt).round();
        if n < 1.0 || (n * self.dt - end).abs() > 1e-9 * end {
            return Err(invalid("dt", format!("{} does not divide the final time {end}", self.dt)));
        }
        Ok(n as usize)
    }

    fn direct(&self, grid: &Grid) -> bool {
        match self.linear {
            LinearSolve::Auto => grid.len() <= DIRECT_MAX_NODES,
            LinearSolve::Direct => true,
            LinearSolve::Krylov(_) => false,
        }
    }

    fn gmres(&self) -> GmresOptions {
        match self.linear {
            LinearSolve::Krylov(o) => o,
            _ => GmresOptions::default(),
        }
    }
}

/// Generator frozen at one time.
trait FrozenOp {
    fn apply(&self, u: &[Complex64]) -> Vec<Complex64>;
    fn dense(&self) -> Result<Mat<Complex64>>;
}

/// A time-dependent evolution `∂ₜw = A(t)w + F(t)`.
trait Evolution {
    type Op<'a>: FrozenOp
    where
        Self: 'a;
    fn spectral(&self) -> &Spectral;
    fn freeze(&self, t: f64) -> Result<Self::Op<'_>>;
    fn forcing(&self, t: f64) -> Result<Option<Vec<Complex64>>>;
}

struct Direct<'p> {
    problem: &'p Problem,
    spectral: Spectral,
    dense: Option<DenseParts>,
}

impl<'p> Direct<'p> {
    fn new(problem: &'p Problem, grid: &Arc<Grid>, dense: bool) -> Result<Self> {
        problem.check_grid(grid)?;
        Ok(Self {
            problem,
            spectral: Spectral::new(grid.clone()),
            dense: if dense { Some(DenseParts::new(grid)?) } else { None },
        })
    }
}

struct DirectOp<'a> {
    owner: &'a Direct<'a>,
    frozen: Frozen,
}

impl FrozenOp for DirectOp<'_> {
    fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.owner.spectral.apply(&self.frozen, u)
    }

    fn dense(&self) -> Result<Mat<Complex64>> {
        match &self.owner.dense {
            Some(p) => Ok(p.generator(&self.frozen)),
            None => Ok(DenseParts::new(&self.owner.spectral.grid)?.generator(&self.frozen)),
        }
    }
}

impl<'p> Evolution for Direct<'p> {
    type Op<'a> = DirectOp<'a> where Self: 'a;

    fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    fn freeze(&self, t: f64) -> Result<DirectOp<'_>> {
        Ok(DirectOp {
            owner: self,
            frozen: freeze(self.problem, &self.spectral.grid, t)?,
        })
    }

    fn forcing(&self, t: f64) -> Result<Option<Vec<Complex64>>> {
        forcing(self.problem, &self.spectral.grid, t)
    }
}

fn to_col(v: &[Complex64]) -> Mat<Complex64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn from_col(m: &Mat<Complex64>) -> Vec<Complex64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `(I - c·A)x = rhs` from the initial guess `x`.
fn solve_shifted<O: FrozenOp>(
    op: &O,
    spectral: &Spectral,
    c: f64,
    rhs: &[Complex64],
    x: &mut [Complex64],
    direct: bool,
    gmres_opts: &GmresOptions,
) -> Result<usize> {
    if direct {
        let a = op.dense()?;
        let len = a.nrows();
        let m = Mat::from_fn(len, len, |i, j| if i == j { ONE - c * a[(i, j)] } else { -c * a[(i, j)] });
        let lu = m.partial_piv_lu();
        let mut sol = to_col(rhs);
        lu.solve_in_place(&mut sol);
        let check = &m * &sol;
        let resid = (0..len).map(|i| (check[(i, 0)] - rhs[i]).norm_sqr()).sum::<f64>().sqrt();
        let scale = l2(rhs).max(f64::MIN_POSITIVE);
        if !(resid <= DIRECT_RESIDUAL_TOL * scale) {
            let inv = DenseOp::from_matrix(spectral.grid.clone(), m, Quantization::General)?;
            return Err(match inv.inverse(f64::INFINITY) {
                Err(e) => e,
                Ok(i) => Error::Singular {
                    condition: inv.norm1() * i.norm1(),
                },
            });
        }
        x.copy_from_slice(&from_col(&sol));
        Ok(0)
    } else {
        let out = gmres(
            |v: &[Complex64]| {
                let av = op.apply(v);
                v.iter().zip(&av).map(|(vi, ai)| vi - c * ai).collect()
            },
            |v: &[Complex64]| spectral.precondition(v, c),
            rhs,
            x,
            gmres_opts,
        )?;
        Ok(out.iterations)
    }
}

fn cn_step<E: Evolution>(ev: &E, u: &[Complex64], t: f64, dt: f64, rule: TimeRule, direct: bool, gmres_opts: &GmresOptions) -> Result<(Vec<Complex64>, usize)> {
    let half = 0.5 * dt;
    let (left, right_apply) = match rule {
        TimeRule::Midpoint => {
            let g = ev.freeze(t + half)?;
            let r = g.apply(u);
            (g, r)
        }
        TimeRule::Endpoint => (ev.freeze(t + dt)?, ev.freeze(t)?.apply(u)),
    };
    let mut rhs: Vec<Complex64> = u.iter().zip(&right_apply).map(|(a, b)| a + half * b).collect();
    if let Some(f) = ev.forcing(t + half)? {
        rhs.iter_mut().zip(&f).for_each(|(r, fi)| *r += dt * fi);
    }
    let mut x = u.to_vec();
    let iters = solve_shifted(&left, ev.spectral(), half, &rhs, &mut x, direct, gmres_opts)?;
    finite(&x, "crank-nicolson step")?;
    Ok((x, iters))
}

/// One Crank–Nicolson step of the problem from `t` to `t + dt`.
pub fn step_crank_nicolson(u: &StateVector, t: f64, dt: f64, problem: &Problem, rule: TimeRule, linear: LinearSolve) -> Result<StateVector> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let opts = SolveOptions::new(dt).linear(linear);
    let direct = opts.direct(u.grid());
    let ev = Direct::new(problem, u.grid(), direct)?;
    let (v, _) = cn_step(&ev, u.values(), t, dt, rule, direct, &opts.gmres())?;
    StateVector::new(u.grid().clone(), v)
}

/// States at selected times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn last(&self) -> Option<(f64, &StateVector)> {
        Some((*self.times.last()?, self.states.last()?))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Weighted norms and the edge magnitude of a solution at every step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    /// `norms[i][j]`: norm for `labels[j]` at `times[i]`.
    pub norms: Vec<Vec<f64>>,
    pub boundary: Vec<f64>,
}

impl EnergyTrace {
    fn new(indices: &[GsIndices]) -> Self {
        Self {
            labels: indices.iter().map(GsIndices::label).collect(),
            ..Default::default()
        }
    }

    fn record(&mut self, t: f64, u: &StateVector, indices: &[GsIndices]) {
        self.times.push(t);
        self.norms.push(indices.iter().map(|i| gs_norm(u, i).value()).collect());
        self.boundary.push(u.boundary_magnitude());
    }

    /// Columns `t,<labels>,boundary_mag`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("boundary_mag".into());
        out.write_record(&header)?;
        for ((t, row), b) in self.times.iter().zip(&self.norms).zip(&self.boundary) {
            let mut rec = vec![format!("{t}")];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            rec.push(format!("{b:.16e}"));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub trace: EnergyTrace,
    /// Every step time, starting at 0.
    pub times: Vec<f64>,
    /// `‖u(t)‖_{L²}` at every step.
    pub l2: Vec<f64>,
    pub gmres_iterations: usize,
}

fn monitor(threshold: Option<f64>, t: f64, u: &StateVector) -> Result<()> {
    if let Some(th) = threshold {
        let peak = u.max_abs();
        let edge = u.boundary_magnitude();
        if peak > 0.0 && edge > th * peak {
            return Err(Error::BoundaryLeak {
                t,
                edge: edge / peak,
                threshold: th,
            });
        }
    }
    Ok(())
}

struct Run {
    trajectory: Trajectory,
    times: Vec<f64>,
    l2: Vec<f64>,
    gmres_iterations: usize,
}

/// Steps `ev` from `w0` and hands every step to `visit(step, t, state)`.
fn march<E, V>(ev: &E, grid: &Arc<Grid>, w0: Vec<Complex64>, steps: usize, opts: &SolveOptions, mut visit: V) -> Result<Run>
where
    E: Evolution,
    V: FnMut(usize, f64, &StateVector) -> Result<()>,
{
    let direct = opts.direct(grid);
    let gmres_opts = opts.gmres();
    let mut w = StateVector::new(grid.clone(), w0)?;
    let mut run = Run {
        trajectory: Trajectory::default(),
        times: vec![0.0],
        l2: vec![w.l2_norm()],
        gmres_iterations: 0,
    };
    visit(0, 0.0, &w)?;
    run.trajectory.times.push(0.0);
    run.trajectory.states.push(w.clone());
    for step in 0..steps {
        let t = step as f64 * opts.dt;
        let (next, iters) = cn_step(ev, w.values(), t, opts.dt, opts.rule, direct, &gmres_opts)?;
        run.gmres_iterations += iters;
        w = StateVector::new(grid.clone(), next)?;
        let t1 = (step + 1) as f64 * opts.dt;
        visit(step + 1, t1, &w)?;
        run.times.push(t1);
        run.l2.push(w.l2_norm());
        if (step + 1) % opts.keep_every == 0 || step + 1 == steps {
            run.trajectory.times.push(t1);
            run.trajectory.states.push(w.clone());
        }
    }
    Ok(run)
}

/// Crank–Nicolson solution of the problem on `grid`.
pub fn solve(problem: &Problem, grid: &Arc<Grid>, opts: &SolveOptions) -> Result<Solution> {
    let steps = opts.steps(problem.horizon)?;
    let u0 = problem.initial_state(grid)?;
    let ev = Direct::new(problem, grid, opts.direct(grid))?;
    let mut trace = EnergyTrace::new(&opts.indices);
    let run = march(&ev, grid, u0.into_values(), steps, opts, |_, t, u| {
        monitor(opts.boundary_threshold, t, u)?;
        trace.record(t, u, &opts.indices);
        Ok(())
    })?;
    Ok(Solution {
        trajectory: run.trajectory,
        trace,
        times: run.times,
        l2: run.l2,
        gmres_iterations: run.gmres_iterations,
    })
}

/// `Λ(t,x,ξ) = k(t)⟨x⟩_h^{1-σ} + λ(x,ξ)` and its quantization
/// `e^Λ = W(t)·e^λ(x,D)`.
#[derive(Debug, Clone)]
pub struct Conjugation {
    /// `None` forces `λ ≡ 0`.
    pub lambda: Option<LambdaParams>,
    pub schedule: ConjugationSchedule,
    pub taper: Taper,
}

impl Conjugation {
    pub fn new(lambda: Option<LambdaParams>, schedule: ConjugationSchedule) -> Self {
        Self {
            lambda,
            schedule,
            taper: Taper::default(),
        }
    }

    pub fn with_taper(mut self, taper: Taper) -> Self {
        self.taper = taper;
        self
    }

    /// `(σ, h)` of the bracket `⟨x⟩_h^{1-σ}`.
    fn bracket_params(&self, problem: &Problem) -> (f64, f64) {
        match &self.lambda {
            Some(p) => (p.sigma(), p.h()),
            None => (problem.sigma(), 1.0),
        }
    }
}

struct Conjugated<'p> {
    inner: Direct<'p>,
    /// `e^λ(x,D)`.
    e: Mat<Complex64>,
    e_lu: faer::linalg::solvers::PartialPivLu<Complex64>,
    e_inv: Option<Mat<Complex64>>,
    /// `⟨x⟩_h^{1-σ}` at the nodes.
    bracket: Vec<f64>,
    schedule: ConjugationSchedule,
}

struct ConjugatedOp<'a> {
    owner: &'a Conjugated<'a>,
    base: DirectOp<'a>,
    weight: Vec<f64>,
    k_prime: f64,
}

impl Conjugated<'_> {
    fn weights(&self, t: f64) -> Result<Vec<f64>> {
        let k = self.schedule.k(t)?;
        let w: Vec<f64> = self.bracket.iter().map(|b| (k * b).exp()).collect();
        if w.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::NonFinite("conjugation weight"));
        }
        Ok(w)
    }

    /// `W(t)·e^λ(x,D)·u`.
    fn forward(&self, t: f64, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let w = self.weights(t)?;
        let eu = &self.e * &to_col(u);
        Ok(from_col(&eu).iter().zip(&w).map(|(v, wi)| v * wi).collect())
    }

    /// `(W(t)·e^λ(x,D))⁻¹ v`.
    fn backward(&self, t: f64, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let w = self.weights(t)?;
        let mut y = to_col(&v.iter().zip(&w).map(|(vi, wi)| vi / wi).collect::<Vec<_>>());
        self.e_lu.solve_in_place(&mut y);
        Ok(from_col(&y))
    }
}

impl FrozenOp for ConjugatedOp<'_> {
    fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let o = self.owner;
        let mut y = to_col(&v.iter().zip(&self.weight).map(|(vi, wi)| vi / wi).collect::<Vec<_>>());
        o.e_lu.solve_in_place(&mut y);
        let g = self.base.apply(&from_col(&y));
        let eg = &o.e * &to_col(&g);
        (0..v.len())
            .map(|i| self.weight[i] * eg[(i, 0)] + self.k_prime * o.bracket[i] * v[i])
            .collect()
    }

    fn dense(&self) -> Result<Mat<Complex64>> {
        let o = self.owner;
        let e_inv = o
            .e_inv
            .as_ref()
            .ok_or_else(|| invalid("linear", "dense conjugated steps need the assembled inverse"))?;
        let core = &o.e * &self.base.dense()? * e_inv;
        let len = core.nrows();
        Ok(Mat::from_fn(len, len, |i, j| {
            let mut v = core[(i, j)] * (self.weight[i] / self.weight[j]);
            if i == j {
                v += self.k_prime * o.bracket[i];
            }
            v
        }))
    }
}

impl<'p> Evolution for Conjugated<'p> {
    type Op<'a> = ConjugatedOp<'a> where Self: 'a;

    fn spectral(&self) -> &Spectral {
        &self.inner.spectral
    }

    fn freeze(&self, t: f64) -> Result<ConjugatedOp<'_>> {
        Ok(ConjugatedOp {
            owner: self,
            base: self.inner.freeze(t)?,
            weight: self.weights(t)?,
            k_prime: self.schedule.k_prime(t)?,
        })
    }

    fn forcing(&self, t: f64) -> Result<Option<Vec<Complex64>>> {
        match self.inner.forcing(t)? {
            Some(f) => Ok(Some(self.forward(t, &f)?)),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigSample {
    pub t: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone)]
pub struct ConjugatedSolution {
    /// `u = (e^Λ)⁻¹ v`.
    pub u: Trajectory,
    pub v: Trajectory,
    /// Norms of `u`.
    pub trace: EnergyTrace,
    /// Every step time, starting at 0.
    pub times: Vec<f64>,
    /// `‖v(t)‖_{L²}` at every step.
    pub v_l2: Vec<f64>,
    /// `‖f_Λ(t)‖_{L²}` at every step, when the problem has a source.
    pub forcing_l2: Option<Vec<f64>>,
    /// Smallest eigenvalue of the Hermitian part of [`first_order_block`].
    pub min_eig: Vec<EigSample>,
    /// `‖e^λ(x,D) ᴿe^{-λ} - I‖₂`.
    pub norm_r1: f64,
    pub gmres_iterations: usize,
}

/// Largest `n` (dim 1) for which the conjugated route is assembled.
pub const CONJUGATED_MAX_N: usize = 1024;

/// Evolves `v = e^Λ u` with `G_Λ = W e^λ G (e^λ)⁻¹ W⁻¹ + k'⟨x⟩_h^{1-σ}`,
/// where `e^λ = e^λ(x,D)` is the dense quantization of the tapered `λ`.
///
/// `eig_samples` equally spaced times (including both ends) get a Gårding
/// report; 0 disables it.
pub fn solve_conjugated(
    problem: &Problem,
    conj: &Conjugation,
    grid: &Arc<Grid>,
    opts: &SolveOptions,
    eig_samples: usize,
) -> Result<ConjugatedSolution> {
    problem.check_grid(grid)?;
    if grid.dim() != 1 || grid.n() > CONJUGATED_MAX_N {
        return Err(invalid("grid", format!("conjugated solves run in dim 1 with n <= {CONJUGATED_MAX_N}")));
    }
    let steps = opts.steps(problem.horizon)?;
    if conj.schedule.horizon() < opts.until.unwrap_or(problem.horizon) * (1.0 - 1e-12) {
        return Err(invalid("schedule", "horizon ends before the final time"));
    }
    let direct = opts.direct(grid);
    let field = match &conj.lambda {
        Some(p) => adapted_lambda_field(grid.clone(), p, &conj.taper)?,
        None => SymbolField::from_values(grid.clone(), vec![ZERO; grid.len() * grid.len()])?,
    };
    let e = assemble_dense(&exp_field(&field, 1.0), Quantization::Kn)?;
    let reverse = assemble_dense(&exp_field(&field, -1.0), Quantization::Reverse)?;
    let norm_r1 = e.compose(&reverse)?.minus_identity().op_norm2();
    if !(norm_r1 < 1.0) {
        return Err(Error::NeumannViolated { norm: norm_r1 });
    }
    let e_inv = if direct { Some(e.inverse(CONDITION_CAP)?.into_matrix()) } else { None };
    let (sigma, h) = conj.bracket_params(problem);
    let bracket = (0..grid.len())
        .map(|j| {
            let x = grid.point(j);
            (h * h + x[0] * x[0] + x[1] * x[1]).sqrt().powf(1.0 - sigma)
        })
        .collect();
    let e = e.into_matrix();
    let ev = Conjugated {
        inner: Direct::new(problem, grid, direct)?,
        e_lu: e.partial_piv_lu(),
        e,
        e_inv,
        bracket,
        schedule: conj.schedule,
    };
    let u0 = problem.initial_state(grid)?;
    let v0 = ev.forward(0.0, u0.values())?;
    finite(&v0, "conjugated datum")?;

    let sample_steps: Vec<usize> = match eig_samples {
        0 => vec![],
        1 => vec![steps],
        m => (0..m).map(|i| (i * steps + (m - 1) / 2) / (m - 1)).collect(),
    };
    let mut trace = EnergyTrace::new(&opts.indices);
    let mut u_traj = Trajectory::default();
    let mut min_eig = Vec::new();
    let mut forcing_l2 = problem.has_source().then(Vec::new);
    let run = march(&ev, grid, v0, steps, opts, |step, t, v| {
        let u = StateVector::new(grid.clone(), ev.backward(t, v.values())?)?;
        monitor(opts.boundary_threshold, t, &u)?;
        trace.record(t, &u, &opts.indices);
        if step % opts.keep_every == 0 || step == steps {
            u_traj.times.push(t);
            u_traj.states.push(u);
        }
        if let Some(fl) = forcing_l2.as_mut() {
            let f = ev.forcing(t)?.unwrap_or_default();
            fl.push(l2(&f) * grid.cell_volume().sqrt());
        }
        if sample_steps.contains(&step) {
            let block = first_order_block(problem, t, conj.lambda.as_ref(), Some(&conj.schedule), grid)?;
            min_eig.push(EigSample {
                t,
                min_eig: block.hermitian_min_eig()?,
            });
        }
        Ok(())
    })?;
    Ok(ConjugatedSolution {
        u: u_traj,
        v: run.trajectory,
        trace,
        times: run.times,
        v_l2: run.l2,
        forcing_l2,
        min_eig,
        norm_r1,
        gmres_iterations: run.gmres_iterations,
    })
}

/// Kohn–Nirenberg quantization of `-2 Σⱼ (Im aⱼ(t,x) + 2∂ⱼΛ(t,x,ξ)) ξⱼ`.
///
/// Its Hermitian part is `-(G₁ + G₁ᴴ)` for the first-order part `G₁` of the
/// (conjugated) generator, so `d/dt ‖v‖² ≤ -μ ‖v‖²` from that part, with `μ`
/// its smallest eigenvalue. With `lambda` and `schedule` both absent this is
/// the unconjugated block `-2 Σⱼ Im aⱼ ξⱼ`.
pub fn first_order_block(
    problem: &Problem,
    t: f64,
    lambda: Option<&LambdaParams>,
    schedule: Option<&ConjugationSchedule>,
    grid: &Arc<Grid>,
) -> Result<DenseOp> {
    problem.check_grid(grid)?;
    problem.check_time(t)?;
    let k = match schedule {
        Some(s) => s.k(t)?,
        None => 0.0,
    };
    let (sigma, h) = match lambda {
        Some(p) => (p.sigma(), p.h()),
        None => (problem.sigma(), 1.0),
    };
    let table = lambda.map(|p| LambdaTable::for_grid(*p, grid));
    let dim = grid.dim();
    for j in 0..grid.len() {
        let x = grid.point(j);
        if (0..dim).any(|a| !problem.drift(a, t, &x).im.is_finite()) {
            return Err(Error::NonFinite("drift coefficient"));
        }
    }
    let field = SymbolField::from_fn(grid.clone(), |x, xi| {
        let b2 = h * h + x[0] * x[0] + x[1] * x[1];
        let kgrad = k * (1.0 - sigma) * b2.powf(-0.5 * (1.0 + sigma));
        let mut grad = [kgrad * x[0], kgrad * x[1]];
        if let Some(table) = &table {
            let cut = frequency_cutoff(xi, table.params().h());
            if cut > 0.0 {
                let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                let (_, g) = table.directional_gradient(x, &[xi[0] / r, xi[1] / r]);
                grad[0] += cut * g[0];
                grad[1] += cut * g[1];
            }
        }
        let s: f64 = (0..dim).map(|a| (problem.drift(a, t, x).im + 2.0 * grad[a]) * xi[a]).sum();
        Complex64::new(-2.0 * s, 0.0)
    })?;
    assemble_dense(&field, Quantization::Kn)
}

/// `e^{-μT}`: growth bound over `[0, T]` implied by a first-order block
/// whose Hermitian part has smallest eigenvalue `μ`.
pub fn surrogate_constant(min_eig: f64, horizon: f64) -> f64 {
    (-min_eig.min(0.0) * horizon).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    /// Smallest `C₀` with `‖v(t)‖² ≤ C₀ (‖v(0)‖² + ∫₀ᵗ ‖f‖²)` at every sample.
    pub c0: f64,
    /// Time at which the ratio is largest.
    pub worst_time: f64,
    pub finite: bool,
}

/// Fits `C₀` along a uniformly sampled trajectory; the source integral uses
/// the trapezoidal rule.
pub fn gronwall_check(times: &[f64], norms: &[f64], forcing: Option<&[f64]>) -> Result<GronwallReport> {
    if times.len() < 2 || norms.len() != times.len() {
        return Err(invalid("trace", "needs at least two samples and one norm per time"));
    }
    if let Some(f) = forcing {
        if f.len() != times.len() {
            return Err(invalid("forcing", "needs one norm per time"));
        }
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(invalid("trace", "time samples must be uniform and increasing"));
    }
    let mut integral = 0.0;
    let mut best = GronwallReport {
        c0: 0.0,
        worst_time: times[0],
        finite: true,
    };
    let base = norms[0] * norms[0];
    for i in 0..times.len() {
        if i > 0 {
            if let Some(f) = forcing {
                integral += 0.5 * dt * (f[i - 1] * f[i - 1] + f[i] * f[i]);
            }
        }
        let denom = base + integral;
        let ratio = if denom > 0.0 {
            norms[i] * norms[i] / denom
        } else if norms[i] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > best.c0 || ratio.is_nan() {
            best.c0 = ratio;
            best.worst_time = times[i];
        }
    }
    best.finite = best.c0.is_finite();
    Ok(best)
}

/// Both constants finite and within 10% of each other.
pub fn gronwall_stable(a: &GronwallReport, b: &GronwallReport) -> bool {
    a.finite && b.finite && (a.c0 - b.c0).abs() <= 0.1 * a.c0.max(b.c0)
}

/// Classification of box sweeps of `u(t)` over a grid of decay losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub delta_grid: Vec<f64>,
    /// `None` where the ladder is too short to classify.
    pub classification: Vec<Option<SweepClass>>,
    /// Smallest grid value from which every larger one is convergent.
    pub infimal_delta: Option<f64>,
}

/// Sweeps `u*(t)` with `ρ₂ = ρ₂(g) - δ̄` for each `δ̄`, where `base` carries
/// `ρ₂(g)`. Boxes `[-L, L)` with spacing `dx`.
pub fn estimate_loss_delta(ep: &ExactProblem, t: f64, base: &GsIndices, deltas: &[f64], ladder: &[f64], dx: f64) -> Result<LossReport> {
    if deltas.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut grid = deltas.to_vec();
    grid.sort_by(f64::total_cmp);
    let classification = grid
        .par_iter()
        .map(|&d| {
            let idx = base.with_rho2(base.rho2() - d);
            Ok(norm_box_sweep_log(|x| ep.log_modulus(t, x), ladder, dx, &idx)?.classify())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut infimal_delta = None;
    for (d, c) in grid.iter().zip(&classification).rev() {
        if *c == Some(SweepClass::Convergent) {
            infimal_delta = Some(*d);
        } else {
            break;
        }
    }
    Ok(LossReport {
        delta_grid: grid,
        classification,
        infimal_delta,
    })
}
