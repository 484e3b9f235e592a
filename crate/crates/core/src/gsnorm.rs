//! The weight operator
//! `Pi = <x>^m2 <D>^m1 exp(rho2 <x>^(1/s)) exp(rho1 <D>^(1/theta))`
//! and the weighted Sobolev norms it induces.
//!
//! Exponential weights overflow doubles long before the boxes used in decay
//! sweeps get large, so every weighted quantity is carried as a scaled state
//! together with a natural-log scale factor.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Point, StateVector};

/// Largest natural log representable in an f64.
pub const LOG_MAX: f64 = 709.782712893384;

/// Rescaling kicks in once a weighted magnitude exceeds `exp(LOG_SOFT_CAP)`.
const LOG_SOFT_CAP: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIndices", into = "RawIndices")]
pub struct GsIndices {
    m1: f64,
    m2: f64,
    rho1: f64,
    rho2: f64,
    s: f64,
    theta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawIndices {
    #[serde(default)]
    m1: f64,
    #[serde(default)]
    m2: f64,
    #[serde(default)]
    rho1: f64,
    #[serde(default)]
    rho2: f64,
    s: f64,
    theta: f64,
}

impl TryFrom<RawIndices> for GsIndices {
    type Error = Error;
    fn try_from(r: RawIndices) -> Result<Self> {
        GsIndices::new(r.m1, r.m2, r.rho1, r.rho2, r.s, r.theta)
    }
}

impl From<GsIndices> for RawIndices {
    fn from(g: GsIndices) -> Self {
        RawIndices {
            m1: g.m1,
            m2: g.m2,
            rho1: g.rho1,
            rho2: g.rho2,
            s: g.s,
            theta: g.theta,
        }
    }
}

impl GsIndices {
    pub fn new(m1: f64, m2: f64, rho1: f64, rho2: f64, s: f64, theta: f64) -> Result<Self> {
        if !(s > 1.0 && s.is_finite()) {
            return Err(invalid("s", format!("Gevrey index must exceed 1, got {s}")));
        }
        if !(theta > 1.0 && theta.is_finite()) {
            return Err(invalid("theta", format!("Gevrey index must exceed 1, got {theta}")));
        }
        for (name, v) in [("m1", m1), ("m2", m2), ("rho1", rho1), ("rho2", rho2)] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        Ok(Self {
            m1,
            m2,
            rho1,
            rho2,
            s,
            theta,
        })
    }

    /// All orders and weights zero.
    pub fn trivial(s: f64, theta: f64) -> Result<Self> {
        Self::new(0.0, 0.0, 0.0, 0.0, s, theta)
    }

    /// Spatial weight only: `<x>^m2 exp(rho2 <x>^(1/s))`.
    pub fn spatial(m2: f64, rho2: f64, s: f64) -> Result<Self> {
        Self::new(0.0, m2, 0.0, rho2, s, 2.0)
    }

    pub fn m1(&self) -> f64 {
        self.m1
    }
    pub fn m2(&self) -> f64 {
        self.m2
    }
    pub fn rho1(&self) -> f64 {
        self.rho1
    }
    pub fn rho2(&self) -> f64 {
        self.rho2
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_rho2(self, rho2: f64) -> Self {
        Self { rho2, ..self }
    }

    /// True when no frequency-side factor is present and the norm is a
    /// pointwise weighted sum.
    pub fn is_pointwise(&self) -> bool {
        self.m1 == 0.0 && self.rho1 == 0.0
    }

    /// Log of the spatial weight `<x>^m2 exp(rho2 <x>^(1/s))`.
    pub fn log_spatial_weight(&self, x: &Point) -> f64 {
        let b = japanese(x);
        self.m2 * b.ln() + self.rho2 * b.powf(1.0 / self.s)
    }

    pub fn label(&self) -> String {
        format!(
            "m1={}_m2={}_rho1={}_rho2={}_s={}_theta={}",
            self.m1, self.m2, self.rho1, self.rho2, self.s, self.theta
        )
    }
}

/// `<x> = (1 + |x|^2)^(1/2)`.
#[inline]
pub fn japanese(x: &Point) -> f64 {
    (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// `<x>_h = (h^2 + |x|^2)^(1/2)` for `h >= 1`.
pub fn bracket(x: &[f64], h: f64) -> Result<f64> {
    if !(h >= 1.0) {
        return Err(invalid("h", format!("bracket scale must be >= 1, got {h}")));
    }
    Ok((h * h + x.iter().map(|v| v * v).sum::<f64>()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PigrDiagnostics {
    /// Some weight exceeded the f64 range and extended-range scaling was needed.
    pub overflow: bool,
    /// Largest log of the exponential weights, spatial or frequency.
    pub max_log_weight: f64,
    /// `max_k rho1 <xi_k>^(1/theta)`; zero when `rho1 = 0`.
    pub high_mode_log_amplification: f64,
    /// Largest `|u_hat|` on the outer half of the frequency band relative to the peak.
    pub input_tail: f64,
    /// `log10` of amplification times input tail when `rho1 > 0`.
    pub conditioning_log10: Option<f64>,
}

/// `Pi u = exp(log_scale) * state`.
#[derive(Debug, Clone)]
pub struct Weighted {
    pub state: StateVector,
    pub log_scale: f64,
    pub diagnostics: PigrDiagnostics,
}

impl Weighted {
    /// Materialize `Pi u`; entries overflow to infinity when `log_scale` is huge.
    pub fn unscaled(&self) -> StateVector {
        let f = self.log_scale.exp();
        let values = self.state.values().iter().map(|v| v * f).collect();
        StateVector::new(self.state.grid().clone(), values).expect("same grid")
    }
}

/// Multiply `values[j]` by `exp(log_w[j])`, returning a shift `c` such that the
/// result must be multiplied by `exp(c)`.
fn apply_log_weights(values: &mut [Complex64], log_w: &[f64]) -> f64 {
    let peak = values
        .iter()
        .zip(log_w)
        .filter(|(v, _)| v.norm() > 0.0)
        .map(|(v, w)| v.norm().ln() + w)
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if peak > LOG_SOFT_CAP {
        peak - LOG_SOFT_CAP
    } else {
        0.0
    };
    for (v, w) in values.iter_mut().zip(log_w) {
        let r = v.norm();
        if r > 0.0 {
            *v = Complex64::from_polar((r.ln() + w - shift).exp(), v.arg());
        }
    }
    shift
}

fn frequency_bracket(xi: &Point) -> f64 {
    japanese(xi)
}

/// Applies the weight operator factor by factor, rightmost first.
pub fn pigr_apply(u: &StateVector, idx: &GsIndices) -> Weighted {
    let grid: Arc<Grid> = u.grid().clone();
    let mut values = u.values().to_vec();
    let mut log_scale = 0.0;
    let mut max_log_weight: f64 = 0.0;
    let mut amplification = 0.0;
    let mut tail = 0.0;
    let mut conditioning = None;

    if idx.rho1 != 0.0 {
        grid.dft_in_place(&mut values);
        let wv = grid.wavevectors();
        let log_w: Vec<f64> = wv
            .iter()
            .map(|xi| idx.rho1 * frequency_bracket(xi).powf(1.0 / idx.theta))
            .collect();
        amplification = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak > 0.0 {
            let half = grid.max_frequency() / 2.0;
            tail = values
                .iter()
                .zip(&wv)
                .filter(|(_, xi)| xi[0].abs().max(xi[1].abs()) >= half)
                .map(|(v, _)| v.norm())
                .fold(0.0, f64::max)
                / peak;
        }
        conditioning = Some((amplification / std::f64::consts::LN_10) + tail.max(1e-300).log10());
        max_log_weight = max_log_weight.max(amplification);
        log_scale += apply_log_weights(&mut values, &log_w);
        grid.idft_in_place(&mut values);
    }

    if idx.rho2 != 0.0 {
        let log_w: Vec<f64> = (0..grid.len())
            .map(|j| idx.rho2 * japanese(&grid.point(j)).powf(1.0 / idx.s))
            .collect();
        max_log_weight = log_w.iter().cloned().fold(max_log_weight, f64::max);
        log_scale += apply_log_weights(&mut values, &log_w);
    }

    if idx.m1 != 0.0 {
        grid.apply_multiplier_in_place(&mut values, |_, xi| {
            Complex64::new(frequency_bracket(xi).powf(idx.m1), 0.0)
        });
    }

    if idx.m2 != 0.0 {
        for (j, v) in values.iter_mut().enumerate() {
            *v *= japanese(&grid.point(j)).powf(idx.m2);
        }
    }

    Weighted {
        state: StateVector::new(grid, values).expect("length preserved"),
        log_scale,
        diagnostics: PigrDiagnostics {
            overflow: max_log_weight > LOG_MAX,
            max_log_weight,
            high_mode_log_amplification: amplification,
            input_tail: tail,
            conditioning_log10: conditioning,
        },
    }
}

/// A norm carried as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsNorm {
    pub log_value: f64,
    pub overflow: bool,
}

impl GsNorm {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// `ln(sum exp(terms))`, or `-inf` for an empty sum.
pub fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + terms.iter().map(|t| (t - peak).exp()).sum::<f64>().ln()
}

/// Discrete L2 norm of `Pi u`.
pub fn gs_norm(u: &StateVector, idx: &GsIndices) -> GsNorm {
    let grid = u.grid();
    if idx.is_pointwise() {
        let mut overflow = false;
        let terms = u.values().iter().enumerate().map(|(j, v)| {
            let lw = idx.log_spatial_weight(&grid.point(j));
            overflow |= idx.rho2 * japanese(&grid.point(j)).powf(1.0 / idx.s) > LOG_MAX;
            2.0 * (lw + v.norm().ln())
        });
        let log_sq = log_sum_exp(terms.collect::<Vec<_>>()) + grid.cell_volume().ln();
        return GsNorm {
            log_value: 0.5 * log_sq,
            overflow,
        };
    }
    let w = pigr_apply(u, idx);
    GsNorm {
        log_value: w.state.l2_norm().ln() + w.log_scale,
        overflow: w.diagnostics.overflow,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub half_width: f64,
    pub norm: GsNorm,
}

/// Truncated norms of one function over a ladder of boxes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Trend of the truncated norms along a box ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepClass {
    Convergent,
    Divergent,
}

/// Shells must shrink by at least this relative margin to count as decreasing.
pub const SHELL_DECAY_MARGIN: f64 = 1e-9;

impl SweepTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["L", "norm", "overflow_flag"])?;
        for r in &self.rows {
            out.write_record([
                format!("{}", r.half_width),
                format!("{:.16e}", r.norm.value()),
                (r.norm.overflow as u8).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].norm.log_value >= w[0].norm.log_value - 1e-12)
    }

    fn row(&self, half_width: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| (r.half_width - half_width).abs() <= 1e-9 * half_width.abs().max(1.0))
    }

    /// `norm(L_b) / norm(L_a)`.
    pub fn ratio(&self, a: f64, b: f64) -> Option<f64> {
        Some((self.row(b)?.norm.log_value - self.row(a)?.norm.log_value).exp())
    }

    /// Log of the squared-norm increments between consecutive boxes.
    pub fn log_shell_masses(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| {
                let (lo, hi) = (2.0 * w[0].norm.log_value, 2.0 * w[1].norm.log_value);
                if hi <= lo {
                    f64::NEG_INFINITY
                } else {
                    hi + (-(lo - hi).exp()).ln_1p()
                }
            })
            .collect()
    }

    /// Convergent when every shell of the ladder carries strictly less mass
    /// than the one inside it. Needs at least three boxes.
    pub fn classify(&self) -> Option<SweepClass> {
        let shells = self.log_shell_masses();
        if shells.len() < 2 {
            return None;
        }
        let shrinking = shells.windows(2).all(|w| {
            w[1] == f64::NEG_INFINITY || w[1] <= w[0] + (-SHELL_DECAY_MARGIN).ln_1p()
        });
        Some(if shrinking {
            SweepClass::Convergent
        } else {
            SweepClass::Divergent
        })
    }
}

fn ladder_dx(grids: impl Iterator<Item = f64>) -> Result<f64> {
    let mut dx = None;
    for d in grids {
        match dx {
            None => dx = Some(d),
            Some(d0) if (d - d0).abs() > 1e-12 * d0 => {
                return Err(invalid(
                    "box ladder",
                    format!("inconsistent dx across boxes: {d0} vs {d}"),
                ))
            }
            _ => {}
        }
    }
    dx.ok_or_else(|| invalid("box ladder", "empty ladder"))
}

/// Norms of states sampled on boxes of increasing size and common spacing.
pub fn norm_box_sweep(states: &[StateVector], idx: &GsIndices) -> Result<SweepTable> {
    ladder_dx(states.iter().map(|s| s.grid().dx()))?;
    let mut order: Vec<&StateVector> = states.iter().collect();
    order.sort_by(|a, b| a.grid().half_width().total_cmp(&b.grid().half_width()));
    let rows = order
        .iter()
        .map(|s| SweepRow {
            half_width: s.grid().half_width(),
            norm: gs_norm(s, idx),
        })
        .collect();
    Ok(SweepTable { rows })
}

/// Box sweep of a one-dimensional function given through `ln|u(x)|`.
///
/// Boxes are `[-L, L)` sampled with spacing `dx`; every `2L/dx` must be a
/// power of two. Only pointwise indices are accepted, so nothing is ever
/// materialized outside the log domain.
pub fn norm_box_sweep_log(
    log_modulus: impl Fn(f64) -> f64 + Sync,
    ladder: &[f64],
    dx: f64,
    idx: &GsIndices,
) -> Result<SweepTable> {
    if !idx.is_pointwise() {
        return Err(invalid("indices", "log-domain sweeps need m1 = rho1 = 0"));
    }
    if !(dx > 0.0) {
        return Err(invalid("dx", "must be positive"));
    }
    let mut ladder = ladder.to_vec();
    ladder.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(ladder.len());
    for &l in &ladder {
        let n_f = 2.0 * l / dx;
        let n = n_f.round() as usize;
        if (n_f - n as f64).abs() > 1e-9 * n_f || n < 8 || !n.is_power_of_two() {
            return Err(invalid(
                "box ladder",
                format!("2L/dx = {n_f} is not a power of two >= 8 for L = {l}"),
            ));
        }
        let mut overflow = false;
        let terms: Vec<f64> = (0..n)
            .map(|j| {
                let x = [-l + j as f64 * dx, 0.0];
                overflow |= idx.rho2 * japanese(&x).powf(1.0 / idx.s) > LOG_MAX;
                2.0 * (idx.log_spatial_weight(&x) + log_modulus(x[0]))
            })
            .collect();
        rows.push(SweepRow {
            half_width: l,
            norm: GsNorm {
                log_value: 0.5 * (log_sum_exp(terms) + dx.ln()),
                overflow,
            },
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{forward_dft, make_grid};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bracket_values() {
        assert_eq!(bracket(&[0.0], 2.0).unwrap(), 2.0);
        assert_eq!(bracket(&[3.0, 4.0], 1.0).unwrap(), 26f64.sqrt());
        assert_eq!(bracket(&[1.5], 1.0).unwrap(), japanese(&[1.5, 0.0]));
        assert!(bracket(&[1.0], 0.5).is_err());
    }

    #[test]
    fn indices_validate_gevrey_orders() {
        assert!(GsIndices::new(0.0, 0.0, 0.0, 0.0, 1.0, 2.0).is_err());
        assert!(GsIndices::new(0.0, 0.0, 0.0, 0.0, 2.0, 0.5).is_err());
        assert!(GsIndices::new(f64::NAN, 0.0, 0.0, 0.0, 2.0, 2.0).is_err());
        let json = r#"{"m1":0,"m2":0,"rho1":0,"rho2":1,"s":1,"theta":2}"#;
        assert!(serde_json::from_str::<GsIndices>(json).is_err());
        let ok: GsIndices = serde_json::from_str(r#"{"rho2":1,"s":2,"theta":2}"#).unwrap();
        assert_eq!(ok.rho2(), 1.0);
    }

    #[test]
    fn sobolev_factor_on_plane_wave() {
        let g = make_grid(1, 64, 4.0).unwrap();
        let xi1 = g.frequency(5);
        let u = StateVector::from_fn(g, |x| Complex64::from_polar(1.0, xi1 * x[0]));
        let idx = GsIndices::new(2.0, 0.0, 0.0, 0.0, 2.0, 2.0).unwrap();
        let w = pigr_apply(&u, &idx);
        assert_eq!(w.log_scale, 0.0);
        for (a, b) in w.state.values().iter().zip(u.values()) {
            assert!((a - b * (1.0 + xi1 * xi1)).norm() < 1e-10);
        }
    }

    #[test]
    fn spatial_exponential_at_origin() {
        let g = make_grid(1, 8, 4.0).unwrap();
        let u = StateVector::from_fn(g.clone(), |_| c(1.0, 0.0));
        let idx = GsIndices::new(0.0, 0.0, 0.0, 1.0, 2.0, 2.0).unwrap();
        let w = pigr_apply(&u, &idx).unscaled();
        // node 4 is x = 0
        assert_eq!(g.node(4), 0.0);
        assert!((w.values()[4] - c(std::f64::consts::E, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn gaussian_plain_norm() {
        let g = make_grid(1, 512, 20.0).unwrap();
        let u = StateVector::from_fn(g, |x| c((-x[0] * x[0] / 2.0).exp(), 0.0));
        let idx = GsIndices::trivial(2.0, 2.0).unwrap();
        let n = gs_norm(&u, &idx).value();
        assert!((n - PI.powf(0.25)).abs() < 1e-12);
        // The general path with a frequency factor of order zero agrees.
        let via_dft = pigr_apply(&u, &idx).state.l2_norm();
        assert!((via_dft - n).abs() < 1e-12);
    }

    #[test]
    fn zero_state_has_zero_norm() {
        let g = make_grid(1, 16, 4.0).unwrap();
        let u = StateVector::zeros(g);
        for idx in [
            GsIndices::trivial(2.0, 2.0).unwrap(),
            GsIndices::new(1.0, 1.0, 0.5, 1.0, 2.0, 2.0).unwrap(),
        ] {
            assert_eq!(gs_norm(&u, &idx).value(), 0.0);
        }
    }

    #[test]
    fn frequency_factors_commute() {
        let g = make_grid(1, 128, 10.0).unwrap();
        let u = StateVector::from_fn(g, |x| c((-x[0] * x[0]).exp(), x[0] * (-x[0] * x[0]).exp()));
        let both = GsIndices::new(1.5, 0.0, 0.3, 0.0, 2.0, 2.0).unwrap();
        let a = pigr_apply(&u, &both).unscaled();
        // Apply <D>^m1 first and the exponential second.
        let sob = GsIndices::new(1.5, 0.0, 0.0, 0.0, 2.0, 2.0).unwrap();
        let exp = GsIndices::new(0.0, 0.0, 0.3, 0.0, 2.0, 2.0).unwrap();
        let b = pigr_apply(&pigr_apply(&u, &sob).unscaled(), &exp).unscaled();
        let scale = a.max_abs();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn order_of_factors_matches_definition() {
        // exp(rho2 <x>^(1/s)) must act after exp(rho1 <D>^(1/theta)).
        let g = make_grid(1, 64, 6.0).unwrap();
        let u = StateVector::from_fn(g.clone(), |x| c((-x[0] * x[0]).exp(), 0.0));
        let idx = GsIndices::new(0.0, 0.0, 0.2, 0.5, 2.0, 2.0).unwrap();
        let got = pigr_apply(&u, &idx).unscaled();
        let mut v = u.values().to_vec();
        g.apply_multiplier_in_place(&mut v, |_, xi| {
            c((0.2 * japanese(xi).powf(0.5)).exp(), 0.0)
        });
        for (j, val) in v.iter_mut().enumerate() {
            *val *= (0.5 * japanese(&g.point(j)).powf(0.5)).exp();
        }
        for (p, q) in got.values().iter().zip(&v) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn extended_range_norm_matches_log_formula() {
        // exp(rho2 <x>^(1/s)) at L = 4000 with rho2 = 30 overflows doubles.
        let g = make_grid(1, 1024, 4000.0).unwrap();
        let u = StateVector::from_fn(g.clone(), |_| c(1.0, 0.0));
        let idx = GsIndices::new(0.0, 0.0, 0.0, 30.0, 2.0, 2.0).unwrap();
        let pointwise = gs_norm(&u, &idx);
        assert!(pointwise.overflow);
        assert!(pointwise.value().is_infinite());
        let w = pigr_apply(&u, &idx);
        assert!(w.diagnostics.overflow);
        let general = w.state.l2_norm().ln() + w.log_scale;
        assert!((general - pointwise.log_value).abs() < 1e-10 * pointwise.log_value);
        let peak = 30.0 * japanese(&[4000.0, 0.0]).sqrt();
        assert!(pointwise.log_value > peak - 1.0 && pointwise.log_value < peak + 10.0);
    }

    #[test]
    fn conditioning_is_reported_for_frequency_weights() {
        let g = make_grid(1, 64, 4.0).unwrap();
        let u = StateVector::from_fn(g, |x| c((-x[0] * x[0]).exp(), 0.0));
        let idx = GsIndices::new(0.0, 0.0, 1.0, 0.0, 2.0, 2.0).unwrap();
        let d = pigr_apply(&u, &idx).diagnostics;
        assert!(d.high_mode_log_amplification > 1.0);
        assert!(d.conditioning_log10.is_some());
        let d0 = pigr_apply(&u, &GsIndices::trivial(2.0, 2.0).unwrap()).diagnostics;
        assert!(d0.conditioning_log10.is_none());
        assert!(!d0.overflow);
    }

    fn state_from(seed: &[f64], dim: usize, n: usize, l: f64) -> StateVector {
        let g = make_grid(dim, n, l).unwrap();
        let values = (0..g.len())
            .map(|i| {
                let a = seed[i % seed.len()];
                c((a * (i as f64 + 0.5)).sin(), (a * 1.3 + i as f64).cos())
            })
            .collect();
        StateVector::new(g, values).unwrap()
    }

    #[test]
    fn sweep_ratio_and_csv() {
        let dx = 0.25;
        let ladder = [4.0, 8.0, 16.0];
        let states: Vec<StateVector> = ladder
            .iter()
            .map(|&l| {
                let g = make_grid(1, (2.0 * l / dx) as usize, l).unwrap();
                StateVector::from_fn(g, |x| c((-x[0].abs()).exp(), 0.0))
            })
            .collect();
        let idx = GsIndices::trivial(2.0, 2.0).unwrap();
        let t = norm_box_sweep(&states, &idx).unwrap();
        assert!(t.is_monotone());
        assert_eq!(t.classify(), Some(SweepClass::Convergent));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("L,norm,overflow_flag\n4,"));
        assert_eq!(text.lines().count(), 4);

        let log = norm_box_sweep_log(|x| -x.abs(), &ladder, dx, &idx).unwrap();
        for (a, b) in t.rows.iter().zip(&log.rows) {
            assert!((a.norm.log_value - b.norm.log_value).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_rejects_mixed_spacing() {
        let a = StateVector::zeros(make_grid(1, 16, 4.0).unwrap());
        let b = StateVector::zeros(make_grid(1, 16, 8.0).unwrap());
        let idx = GsIndices::trivial(2.0, 2.0).unwrap();
        assert!(norm_box_sweep(&[a, b], &idx).is_err());
        assert!(norm_box_sweep_log(|_| 0.0, &[3.0], 0.25, &idx).is_err());
    }

    #[test]
    fn zero_family_sweeps_to_zero() {
        let idx = GsIndices::spatial(0.0, 1.0, 2.0).unwrap();
        let states: Vec<StateVector> = [2.0, 4.0]
            .iter()
            .map(|&l| StateVector::zeros(make_grid(1, (l * 8.0) as usize, l).unwrap()))
            .collect();
        let t = norm_box_sweep(&states, &idx).unwrap();
        assert!(t.rows.iter().all(|r| r.norm.value() == 0.0));
    }

    #[test]
    fn classification_of_growing_and_power_law_tails() {
        let idx = GsIndices::trivial(2.0, 2.0).unwrap();
        let ladder = [64.0, 128.0, 256.0, 512.0];
        let grow = norm_box_sweep_log(|x| 0.01 * x.abs().sqrt(), &ladder, 0.5, &idx).unwrap();
        assert_eq!(grow.classify(), Some(SweepClass::Divergent));
        let flat = norm_box_sweep_log(|_| 0.0, &ladder, 0.5, &idx).unwrap();
        assert_eq!(flat.classify(), Some(SweepClass::Divergent));
        // |x|^-1/2 is on the divergent side of the L2 threshold, |x|^-1 converges.
        let slow = norm_box_sweep_log(|x| -0.25 * (1.0 + x * x).ln(), &ladder, 0.5, &idx).unwrap();
        assert_eq!(slow.classify(), Some(SweepClass::Divergent));
        let fast = norm_box_sweep_log(|x| -0.5 * (1.0 + x * x).ln(), &ladder, 0.5, &idx).unwrap();
        assert_eq!(fast.classify(), Some(SweepClass::Convergent));
    }

    proptest! {
        #[test]
        fn zero_indices_are_identity(seed in prop::collection::vec(-2.0f64..2.0, 1..6), dim in 1usize..3) {
            let u = state_from(&seed, dim, 16, 3.0);
            let idx = GsIndices::new(0.0, 0.0, 0.0, 0.0, 1.5, 3.0).unwrap();
            let w = pigr_apply(&u, &idx).unscaled();
            let scale = u.max_abs();
            for (a, b) in w.values().iter().zip(u.values()) {
                prop_assert!((a - b).norm() <= 1e-12 * scale);
            }
        }

        #[test]
        fn pointwise_norm_formula(seed in prop::collection::vec(-2.0f64..2.0, 1..6), m2 in -2.0f64..2.0, rho2 in -1.0f64..1.0, s in 1.1f64..4.0) {
            let u = state_from(&seed, 1, 32, 5.0);
            let idx = GsIndices::spatial(m2, rho2, s).unwrap();
            let g = u.grid();
            let direct: f64 = (0..g.len()).map(|j| {
                let b = japanese(&g.point(j));
                b.powf(2.0 * m2) * (2.0 * rho2 * b.powf(1.0 / s)).exp() * u.values()[j].norm_sqr()
            }).sum::<f64>() * g.dx();
            let got = gs_norm(&u, &idx).value();
            prop_assert!((got * got - direct).abs() <= 1e-12 * direct);
            // the operator path agrees with the pointwise path
            let op = pigr_apply(&u, &idx).unscaled().l2_norm();
            prop_assert!((op - got).abs() <= 1e-12 * got);
        }

        #[test]
        fn norm_monotone_in_spatial_indices(seed in prop::collection::vec(-2.0f64..2.0, 1..6), m2 in -1.0f64..1.0, dm in 0.0f64..1.0, rho in -1.0f64..1.0, dr in 0.0f64..1.0) {
            let u = state_from(&seed, 1, 32, 6.0);
            let lo = gs_norm(&u, &GsIndices::spatial(m2, rho, 1.8).unwrap()).log_value;
            let hi = gs_norm(&u, &GsIndices::spatial(m2 + dm, rho + dr, 1.8).unwrap()).log_value;
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn parseval_for_sobolev_zero(seed in prop::collection::vec(-2.0f64..2.0, 1..6)) {
            let u = state_from(&seed, 2, 16, 2.0);
            let n = gs_norm(&u, &GsIndices::trivial(2.0, 2.0).unwrap()).value();
            prop_assert!((forward_dft(&u).l2_norm() - n).abs() <= 1e-12 * n);
        }
    }
}
