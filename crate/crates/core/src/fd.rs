//! Second-order central differences with a Richardson error estimate.

/// Central difference of order 1 or 2 with the given step.
pub fn central<F: Fn(f64) -> f64>(f: &F, x: f64, step: f64, order: u32) -> f64 {
    match order {
        0 => f(x),
        1 => (f(x + step) - f(x - step)) / (2.0 * step),
        2 => (f(x + step) - 2.0 * f(x) + f(x - step)) / (step * step),
        _ => panic!("central differences implemented up to order 2"),
    }
}

/// `(value, error)` where `value` uses `step` and `error` estimates its
/// truncation error from a second evaluation at `step / 2`.
pub fn richardson<F: Fn(f64) -> f64>(f: &F, x: f64, step: f64, order: u32) -> (f64, f64) {
    let coarse = central(f, x, step, order);
    let fine = central(f, x, 0.5 * step, order);
    (coarse, (coarse - fine).abs() * 4.0 / 3.0)
}

/// Mixed derivative `d^2 f / dx dy` by the four-point stencil.
pub fn mixed<F: Fn(f64, f64) -> f64>(f: &F, x: f64, y: f64, hx: f64, hy: f64) -> f64 {
    (f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy))
        / (4.0 * hx * hy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_smooth_functions() {
        let f = |x: f64| x.sin();
        assert!((central(&f, 0.3, 1e-3, 1) - 0.3f64.cos()).abs() < 1e-6);
        assert!((central(&f, 0.3, 1e-3, 2) + 0.3f64.sin()).abs() < 1e-6);
        let (v, e) = richardson(&f, 1.0, 0.1, 1);
        let err = (v - 1f64.cos()).abs();
        assert!(err <= 1.05 * e && err >= 0.95 * e);
        let g = |x: f64, y: f64| (x * y).exp();
        assert!((mixed(&g, 0.5, 0.2, 1e-3, 1e-3) - (1.0 + 0.1) * 0.1f64.exp()).abs() < 1e-6);
    }
}
