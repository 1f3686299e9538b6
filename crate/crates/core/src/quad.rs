//! Gauss-Legendre rules and an adaptive tensor-product integrator.
//!
//! Nodes and weights come from Newton iteration on the Legendre polynomials
//! and are cached per degree, since the dyadic refinement below reuses the
//! same handful of degrees across thousands of integrals.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Arc<Vec<(f64, f64)>>,
}

fn rule_cache() -> &'static Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Legendre polynomial P_n and derivative P_n' at x via the three-term
/// recurrence.
fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let deriv = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, deriv)
}

fn compute_rule(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    if n == 1 {
        return vec![(0.0, 2.0)];
    }
    let mut out = vec![(0.0, 0.0); n];
    for k in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton
        let mut x = (core::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[k] = (-x.abs(), w);
        out[n - 1 - k] = (x.abs(), w);
    }
    if n % 2 == 1 {
        out[n / 2].0 = 0.0;
    }
    out
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut cache = rule_cache().lock().unwrap();
        let nodes = cache
            .entry(n)
            .or_insert_with(|| Arc::new(compute_rule(n)))
            .clone();
        Self { nodes }
    }

    /// Integrate `f` over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let sum: f64 = self
            .nodes
            .iter()
            .map(|&(x, w)| w * f(mid + half * x))
            .sum();
        half * sum
    }

    /// Mapped nodes and weights on [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .map(|&(x, w)| (mid + half * x, w * half))
            .collect()
    }
}

/// Result of an adaptive tensor-product integration.
#[derive(Debug, Clone, Copy)]
pub struct TensorOutcome {
    pub value: f64,
    /// |difference| between the last two refinement levels.
    pub error_estimate: f64,
    /// Refinement levels actually used (0 = base rule only was not enough to
    /// judge convergence; at least one refinement is always performed).
    pub levels_used: usize,
}

/// Integrate `f(x, y)` over `[x0,x1] x [y0,y1]` with node counts doubling per
/// level until two successive estimates agree to both tolerances.
///
/// Convergence requires the level-to-level change to be at or below `abs_tol`
/// and at or below `rel_tol * |value|`; the relative gate keeps tiny integrals
/// (deep Gaussian tails) accurate enough to divide by.
#[allow(clippy::too_many_arguments)]
pub fn integrate_2d_adaptive<F>(
    f: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    base_nx: usize,
    base_ny: usize,
    abs_tol: f64,
    rel_tol: f64,
    max_depth: usize,
) -> Result<TensorOutcome, (usize, f64)>
where
    F: Fn(f64, f64) -> f64,
{
    let mut prev: Option<f64> = None;
    let mut last_delta = f64::INFINITY;
    for level in 0..=max_depth {
        let nx = base_nx << level;
        let ny = base_ny << level;
        let gx = GaussLegendre::new(nx).mapped(x_range.0, x_range.1);
        let gy = GaussLegendre::new(ny).mapped(y_range.0, y_range.1);
        let mut total = 0.0;
        for &(x, wx) in &gx {
            let mut row = 0.0;
            for &(y, wy) in &gy {
                row += wy * f(x, y);
            }
            total += wx * row;
        }
        if let Some(p) = prev {
            last_delta = (total - p).abs();
            if last_delta <= abs_tol && last_delta <= rel_tol * total.abs().max(f64::MIN_POSITIVE)
                || (total == 0.0 && p == 0.0)
            {
                return Ok(TensorOutcome {
                    value: total,
                    error_estimate: last_delta,
                    levels_used: level,
                });
            }
        }
        prev = Some(total);
    }
    Err((max_depth, last_delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn five_point_rule_matches_reference() {
        let rule = GaussLegendre::new(5);
        let x_want = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683_1,
            0.0,
            0.538_469_310_105_683_1,
            0.906_179_845_938_664,
        ];
        let w_want = [
            0.236_926_885_056_189_08,
            0.478_628_670_499_366_47,
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_47,
            0.236_926_885_056_189_08,
        ];
        for (i, &(x, w)) in rule.nodes.iter().enumerate() {
            assert_abs_diff_eq!(x, x_want[i], epsilon = 1e-15);
            assert_abs_diff_eq!(w, w_want[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn polynomial_exactness() {
        // n-point rule is exact through degree 2n-1
        let rule = GaussLegendre::new(8);
        let exact = 2.0 / 16.0; // int_{-1}^{1} x^15 dx = 0; x^14 -> 2/15
        let got = rule.integrate(-1.0, 1.0, |x| x.powi(14));
        assert_relative_eq!(got, 2.0 / 15.0, max_relative = 1e-13);
        let _ = exact;
        assert_abs_diff_eq!(rule.integrate(-1.0, 1.0, |x| x.powi(15)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sin_over_half_period() {
        let rule = GaussLegendre::new(24);
        assert_relative_eq!(
            rule.integrate(0.0, core::f64::consts::PI, f64::sin),
            2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn adaptive_tensor_converges_on_gaussian() {
        // int over [0,pi]x[0,2pi] of sin(x) exp(cos(y)) = 2 * 2*pi*I0(1)
        let want = 2.0 * 2.0 * core::f64::consts::PI * 1.2660658777520084;
        let out = integrate_2d_adaptive(
            |x, y| x.sin() * y.cos().exp(),
            (0.0, core::f64::consts::PI),
            (0.0, 2.0 * core::f64::consts::PI),
            8,
            16,
            1e-10,
            1e-12,
            6,
        )
        .unwrap();
        assert_relative_eq!(out.value, want, max_relative = 1e-12);
        assert!(out.error_estimate <= 1e-10);
    }

    #[test]
    fn adaptive_tensor_reports_nonconvergence() {
        // discontinuous integrand never meets a 1e-14 gate at shallow depth
        let r = integrate_2d_adaptive(
            |x, y| if x * y > 0.3 { 1.0 } else { 0.0 },
            (0.0, 1.0),
            (0.0, 1.0),
            8,
            8,
            1e-14,
            1e-14,
            2,
        );
        assert!(r.is_err());
    }
}
