//! Uniform periodic grids on `[-L, L)^d` and discrete Fourier transforms
//! normalized to match the continuum transform.
//!
//! Nodes are `x_j = -L + j dx` with `dx = 2L/n`; frequencies are
//! `xi_k = (pi/L) k` stored in DFT order. The forward transform is
//! `u_hat(xi_k) = sum_j u(x_j) exp(-i x_j xi_k) dx^d` and the inverse carries
//! the factor `(2 pi)^-d dxi^d`, so Parseval holds with the continuum
//! constants.
//!
//! In two dimensions the flat index is `i0 * n + i1`; axis 0 is the slow one.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Spatial point or wave vector. The second component is zero in one dimension.
pub type Point = [f64; 2];

#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
    dx: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    roots: Arc<[Complex64]>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("half_width", &self.half_width)
            .field("dx", &self.dx)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.half_width == other.half_width
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Arc<Self>> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        let mut planner = FftPlanner::new();
        let roots: Vec<Complex64> = (0..n)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / n as f64))
            .collect();
        Ok(Arc::new(Self {
            dim,
            n,
            half_width,
            dx: 2.0 * half_width / n as f64,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            roots: roots.into(),
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Frequency spacing `pi / L`.
    pub fn dxi(&self) -> f64 {
        PI / self.half_width
    }

    /// `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    /// `(dxi / 2pi)^d`, the weight of one frequency node in the inverse transform.
    pub fn dual_cell_volume(&self) -> f64 {
        (self.dxi() / (2.0 * PI)).powi(self.dim as i32)
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx
    }

    /// Signed frequency index of DFT slot `k`.
    pub fn frequency_index(&self, k: usize) -> i64 {
        if k < self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.dxi() * self.frequency_index(k) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.frequency(k)).collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.dxi() * (self.n / 2) as f64
    }

    /// Per-axis indices of a flat index.
    pub fn split(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.n, flat % self.n]
        }
    }

    pub fn point(&self, flat: usize) -> Point {
        let [a, b] = self.split(flat);
        if self.dim == 1 {
            [self.node(a), 0.0]
        } else {
            [self.node(a), self.node(b)]
        }
    }

    pub fn wavevector(&self, flat: usize) -> Point {
        let [a, b] = self.split(flat);
        if self.dim == 1 {
            [self.frequency(a), 0.0]
        } else {
            [self.frequency(a), self.frequency(b)]
        }
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn wavevectors(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.wavevector(i)).collect()
    }

    /// True if DFT slot `k` along `axis` of the flat frequency index is the Nyquist mode.
    pub fn is_nyquist(&self, flat: usize, axis: usize) -> bool {
        self.split(flat)[axis] == self.n / 2
    }

    /// `exp(i x_j xi_k)` along one axis, exact up to the root table.
    pub fn phase(&self, j: usize, k: usize) -> Complex64 {
        let root = self.roots[(j * k) % self.n];
        if k % 2 == 0 {
            root
        } else {
            -root
        }
    }

    /// `exp(i x . xi)` for flat spatial index `j` and flat frequency index `k`.
    pub fn phase_flat(&self, j: usize, k: usize) -> Complex64 {
        let [j0, j1] = self.split(j);
        let [k0, k1] = self.split(k);
        if self.dim == 1 {
            self.phase(j0, k0)
        } else {
            self.phase(j0, k0) * self.phase(j1, k1)
        }
    }

    pub(crate) fn sign(&self, flat: usize) -> f64 {
        let [a, b] = self.split(flat);
        if (a + b) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn fft_axes(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        plan.process(buf);
        if self.dim == 2 {
            transpose_square(buf, self.n);
            plan.process(buf);
            transpose_square(buf, self.n);
        }
    }

    /// Forward transform in place on raw samples of length `len()`.
    pub fn dft_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len());
        self.fft_axes(buf, &self.forward);
        let vol = self.cell_volume();
        for (k, v) in buf.iter_mut().enumerate() {
            *v *= vol * self.sign(k);
        }
    }

    /// Inverse of [`Grid::dft_in_place`].
    pub fn idft_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len());
        let scale = 1.0 / (2.0 * self.half_width).powi(self.dim as i32);
        for (k, v) in buf.iter_mut().enumerate() {
            *v *= scale * self.sign(k);
        }
        self.fft_axes(buf, &self.inverse);
    }

    /// Multiplies by `m(xi)` in frequency space.
    pub fn apply_multiplier_in_place<F>(&self, buf: &mut [Complex64], m: F)
    where
        F: Fn(usize, &Point) -> Complex64,
    {
        self.dft_in_place(buf);
        for (k, v) in buf.iter_mut().enumerate() {
            *v *= m(k, &self.wavevector(k));
        }
        self.idft_in_place(buf);
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Complex samples on the nodes of a grid.
#[derive(Clone, Debug)]
pub struct StateVector {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

/// Samples of a transform on the frequency nodes of a grid.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

macro_rules! sampled_common {
    ($t:ty) => {
        impl $t {
            pub fn new(grid: Arc<Grid>, values: Vec<Complex64>) -> Result<Self> {
                if values.len() != grid.len() {
                    return Err(Error::GridMismatch(format!(
                        "{} values for a grid with {} nodes",
                        values.len(),
                        grid.len()
                    )));
                }
                Ok(Self { grid, values })
            }

            pub fn zeros(grid: Arc<Grid>) -> Self {
                let values = vec![Complex64::new(0.0, 0.0); grid.len()];
                Self { grid, values }
            }

            pub fn grid(&self) -> &Arc<Grid> {
                &self.grid
            }

            pub fn values(&self) -> &[Complex64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [Complex64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<Complex64> {
                self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn max_abs(&self) -> f64 {
                self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
            }
        }
    };
}

sampled_common!(StateVector);
sampled_common!(Spectrum);

impl StateVector {
    pub fn from_fn<F>(grid: Arc<Grid>, f: F) -> Self
    where
        F: Fn(&Point) -> Complex64,
    {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    /// Discrete L2 norm `(sum |u|^2 dx^d)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// Largest modulus over nodes lying on the box edge.
    pub fn boundary_magnitude(&self) -> f64 {
        let n = self.grid.n();
        let edge = |i: usize| i == 0 || i == n - 1;
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let [a, b] = self.grid.split(*i);
                edge(a) || (self.grid.dim() == 2 && edge(b))
            })
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }
}

impl Spectrum {
    /// `((2pi)^-d sum |u_hat|^2 dxi^d)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dual_cell_volume())
            .sqrt()
    }
}

pub fn make_grid(dim: usize, n: usize, half_width: f64) -> Result<Arc<Grid>> {
    Grid::new(dim, n, half_width)
}

pub fn forward_dft(u: &StateVector) -> Spectrum {
    let mut values = u.values.clone();
    u.grid.dft_in_place(&mut values);
    Spectrum {
        grid: u.grid.clone(),
        values,
    }
}

pub fn inverse_dft(u_hat: &Spectrum) -> StateVector {
    let mut values = u_hat.values.clone();
    u_hat.grid.idft_in_place(&mut values);
    StateVector {
        grid: u_hat.grid.clone(),
        values,
    }
}

/// `i xi_axis` applied in frequency space with the Nyquist mode of that axis zeroed.
pub fn spectral_derivative(u: &StateVector, axis: usize) -> Result<StateVector> {
    let grid = u.grid.clone();
    if axis >= grid.dim() {
        return Err(Error::AxisOutOfRange {
            axis,
            dim: grid.dim(),
        });
    }
    let mut values = u.values.clone();
    grid.apply_multiplier_in_place(&mut values, |k, xi| {
        if grid.is_nyquist(k, axis) {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, xi[axis])
        }
    });
    Ok(StateVector { grid, values })
}

/// `-|xi|^2` applied in frequency space.
pub fn laplacian(u: &StateVector) -> StateVector {
    let grid = u.grid.clone();
    let mut values = u.values.clone();
    grid.apply_multiplier_in_place(&mut values, |_, xi| {
        Complex64::new(-(xi[0] * xi[0] + xi[1] * xi[1]), 0.0)
    });
    StateVector { grid, values }
}
