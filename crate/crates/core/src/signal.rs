//! Expected receiver signal after point-source emissions under drift.
//!
//! One emission at t*=0 produces the moving Gaussian concentration of
//! [`point_concentration`]. The expected number of molecules inside the
//! spherical receiver is computed three ways:
//!
//! - [`expected_count_quadrature`]: the radial integral is done analytically
//!   (see [`radial_moment_scaled`]) and the remaining theta-phi integral by
//!   adaptive Gauss-Legendre. Works for any flow.
//! - [`closed_form_parallel`]: closed form, valid when `pe_perp == 0`.
//! - [`expected_count_uca`]: receiver volume times center concentration
//!   (uniform-concentration assumption).
//!
//! [`SignalProfile`] tabulates the per-emission curve at the sampling offsets
//! and interval lags, and [`SignalProfile::mean_observed`] forms the full
//! ISI-summed time-varying Poisson mean (signal plus constant-mean noise).

use crate::env::DimensionlessEnv;
use crate::quad::integrate_2d_adaptive;
use crate::special::{erf, erfcx, exp_erf_diff};
use crate::{Error, Result};

use core::f64::consts::PI;

/// Below this exact expected count a relative deviation is reported as
/// undefined instead of dividing by an underflowing denominator.
pub const DEVIATION_UNDERFLOW_FLOOR: f64 = 1e-300;

/// |r_eff| below which the parallel closed form switches to its analytic
/// r_eff -> 0 limit (the two 1/r_eff terms cancel to O(r_eff)).
const R_EFF_SINGULAR_LIMIT: f64 = 1e-6;

/// |a| beyond which the radial moment switches from the erf antiderivative to
/// boundary-layer expansions (the antiderivative cancels catastrophically).
const RADIAL_SERIES_SWITCH: f64 = 8.0;

/// A point-concentration lookup: dimensionless position and time.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationQuery {
    /// (x*, y*, z*) relative to the receiver center.
    pub position: [f64; 3],
    /// Dimensionless time since emission; must be > 0 (the Green's function
    /// is singular at t* = 0).
    pub t_star: f64,
}

/// Dimensionless concentration at a point: `(4 pi t*)^{-3/2} exp(-d^2 / 4t*)`
/// where `d` is the distance to the drifted cloud center
/// `(-x0* + pe_par t*, pe_perp t*, 0)`.
pub fn point_concentration(query: &ConcentrationQuery, env: &DimensionlessEnv) -> Result<f64> {
    let t = query.t_star;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(
            "point concentration requires t* > 0".into(),
        ));
    }
    let [x, y, z] = query.position;
    let dx = x + env.x0_star - env.pe_par * t;
    let dy = y - env.pe_perp * t;
    let d2 = dx * dx + dy * dy + z * z;
    Ok((4.0 * PI * t).powf(-1.5) * (-d2 / (4.0 * t)).exp())
}

/// Distance from the receiver center to the drifted cloud center at t*.
pub fn cloud_center_distance(t_star: f64, env: &DimensionlessEnv) -> f64 {
    (env.x0_star - env.pe_par * t_star).hypot(env.pe_perp * t_star)
}

// -- radial moment -----------------------------------------------------------

/// Asymptotic moment `K_j(B) = int_0^inf y^j exp(-2By - y^2) dy` for large B,
/// via termwise expansion of exp(-y^2). Valid for `B >= RADIAL_SERIES_SWITCH`.
fn k_moment(j: u32, big_b: f64) -> f64 {
    debug_assert!(big_b >= RADIAL_SERIES_SWITCH);
    let inv = 1.0 / (2.0 * big_b);
    // term_0 = j! / (2B)^{j+1}
    let mut term = match j {
        0 => inv,
        1 => inv * inv,
        _ => 2.0 * inv * inv * inv,
    };
    let mut sum = term;
    let mut prev_abs = term.abs();
    for k in 0..40u32 {
        let p = (2 * k + j) as f64;
        term *= -(p + 2.0) * (p + 1.0) / (k as f64 + 1.0) * inv * inv;
        if term.abs() >= prev_abs {
            break; // asymptotic series turned; stop at the smallest term
        }
        sum += term;
        prev_abs = term.abs();
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Second radial moment `M2(a, c) = int_0^c w^2 exp(2aw - w^2) dw` as
/// `(mantissa, log_shift)` with `M2 = mantissa * exp(log_shift)`.
///
/// The shift keeps the caller's product `exp(beta2) * M2` representable: the
/// combined exponent is bounded by `x0* |Pe|` even when `M2` alone overflows.
/// Branches:
/// - `|a| <= 8`: erf antiderivative (protected by [`exp_erf_diff`]).
/// - `a > 8`, peak inside `[0, c]`: antiderivative scaled by `exp(a^2)`.
/// - `a > 8`, peak beyond `c`: expansion around the `w = c` boundary layer,
///   scaled by `exp(2ac - c^2)`.
/// - `a < -8`: expansion around `w = 0` minus the `w > c` tail.
pub fn radial_moment_scaled(a: f64, c: f64) -> (f64, f64) {
    debug_assert!(c > 0.0);
    let sqrt_pi = PI.sqrt();
    if a.abs() <= RADIAL_SERIES_SWITCH {
        // M2 = (sqrt(pi)/4)(1+2a^2) e^{a^2}[erf(c-a)+erf(a)]
        //      - ((c+a)/2) e^{2ac-c^2} + a/2
        // all exponents bounded: c(2a - c) <= a^2 <= 64
        let erf_part = exp_erf_diff(a * a, -a, c - a);
        let m2 = 0.25 * sqrt_pi * (1.0 + 2.0 * a * a) * erf_part
            - 0.5 * (c + a) * (2.0 * a * c - c * c).exp()
            + 0.5 * a;
        return (m2.max(0.0), 0.0);
    }
    if a > 0.0 {
        let b = a - c;
        if b <= 0.0 {
            // exp(2aw - w^2) peaks at w = a inside [0, c]
            let m2 = 0.25 * sqrt_pi * (1.0 + 2.0 * a * a) * (erf(c - a) + erf(a))
                - 0.5 * (c + a) * (-(c - a) * (c - a)).exp()
                + 0.5 * a * (-a * a).exp();
            return (m2.max(0.0), a * a);
        }
        let scaled = if b >= RADIAL_SERIES_SWITCH {
            // boundary layer at w = c: substitute w = c - y
            let full = c * c * k_moment(0, b) - 2.0 * c * k_moment(1, b) + k_moment(2, b);
            let tail_expo = -2.0 * b * c - c * c;
            if tail_expo > -200.0 {
                full - tail_expo.exp() * k_moment(2, b + c)
            } else {
                full
            }
        } else {
            // same substitution, exact in erfcx (D = b + c = a)
            let d = a;
            let e = (-2.0 * b * c - c * c).exp();
            0.5 * sqrt_pi * (d * d + 0.5) * (erfcx(b) - e * erfcx(d)) - d + 0.5 * b + 0.5 * d * e
        };
        (scaled.max(0.0), 2.0 * a * c - c * c)
    } else {
        // decaying integrand, dominated by w = 0
        let b = -a;
        let mut m2 = k_moment(2, b);
        let tail_expo = -2.0 * b * c - c * c;
        if tail_expo > -200.0 {
            let big_b = b + c;
            let tail = c * c * k_moment(0, big_b) + 2.0 * c * k_moment(1, big_b) + k_moment(2, big_b);
            m2 -= tail_expo.exp() * tail;
        }
        (m2.max(0.0), 0.0)
    }
}

// -- closed form --------------------------------------------------------------

/// Expected count inside a sphere of radius `r` whose center sits at distance
/// `rho` from an isotropic Gaussian cloud of per-axis variance `2 t`.
///
/// This is the radially symmetric reduction of the receiver integral; the
/// quadrature route must agree with it whenever the geometry permits both.
pub(crate) fn gaussian_sphere_count(t: f64, rho: f64, r: f64) -> f64 {
    debug_assert!(t > 0.0 && r > 0.0 && rho >= 0.0);
    let s = t.sqrt();
    if rho < R_EFF_SINGULAR_LIMIT {
        // cloud centered on the receiver: chi-3 mass inside radius r
        let u = r / (2.0 * s);
        return (erf(u) - 2.0 * u / PI.sqrt() * (-u * u).exp()).clamp(0.0, 1.0);
    }
    let value = if rho < r {
        let um = (r - rho) / (2.0 * s);
        let up = (r + rho) / (2.0 * s);
        0.5 * (erf(um) + erf(up))
            + (1.0 / rho)
                * (t / PI).sqrt()
                * (-(rho - r) * (rho - r) / (4.0 * t)).exp()
                * (-rho * r / t).exp_m1()
    } else {
        // factor out the dominant tail exp(-(rho-r)^2/4t) so the bracket stays
        // O(1) down to the underflow floor
        let alpha = (rho - r) / (2.0 * s);
        let beta = (rho + r) / (2.0 * s);
        let e = (-rho * r / t).exp();
        let bracket = 0.5 * (erfcx(alpha) - e * erfcx(beta))
            + (1.0 / rho) * (t / PI).sqrt() * (e - 1.0);
        (-alpha * alpha).exp() * bracket
    };
    value.clamp(0.0, 1.0)
}

/// Closed-form expected dimensionless count for parallel flow
/// (`pe_perp == 0`), with effective distance `r_eff = -(x0* - pe_par t*)`.
///
/// At the singular instant `r_eff = 0` (the cloud centered on the receiver,
/// t* = x0*/pe_par) the analytic limit `erf(u) - (2u/sqrt(pi)) e^{-u^2}` with
/// `u = r_obs*/(2 sqrt(t*))` is used.
pub fn closed_form_parallel(t_star: f64, env: &DimensionlessEnv) -> Result<f64> {
    if env.pe_perp != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "closed form requires pe_perp = 0 (got {})",
            env.pe_perp
        )));
    }
    if !(t_star > 0.0) {
        return Err(Error::InvalidParameter(
            "expected count requires t* > 0".into(),
        ));
    }
    let r_eff = -(env.x0_star - env.pe_par * t_star);
    Ok(gaussian_sphere_count(t_star, r_eff.abs(), env.r_obs_star))
}

/// Uniform-concentration approximation: receiver volume times the center
/// concentration, `V* (4 pi t*)^{-3/2} exp(-r_eff^2/4t* - t* pe_perp^2/4)`.
///
/// The perpendicular flow enters only through the final factor, so
/// `uca(pe_perp) == uca(0) * exp(-t* pe_perp^2/4)` holds bit-exactly.
pub fn expected_count_uca(t_star: f64, env: &DimensionlessEnv) -> Result<f64> {
    if !(t_star > 0.0) {
        return Err(Error::InvalidParameter(
            "expected count requires t* > 0".into(),
        ));
    }
    let r_eff = env.x0_star - env.pe_par * t_star;
    let parallel_part = env.obs_volume_star()
        * (4.0 * PI * t_star).powf(-1.5)
        * (-r_eff * r_eff / (4.0 * t_star)).exp();
    Ok(parallel_part * (-t_star * env.pe_perp * env.pe_perp / 4.0).exp())
}

// -- quadrature ---------------------------------------------------------------

/// Controls for the adaptive theta-phi quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Base Gauss-Legendre nodes along theta (doubled per refinement).
    pub theta_nodes: usize,
    /// Base nodes along phi.
    pub phi_nodes: usize,
    /// Absolute convergence tolerance on the level-to-level change.
    pub abs_tol: f64,
    /// Relative tolerance; keeps deep-tail integrals accurate enough for
    /// relative-deviation reporting.
    pub rel_tol: f64,
    /// Maximum number of dyadic refinements.
    pub max_depth: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            theta_nodes: 24,
            phi_nodes: 48,
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_depth: 6,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.theta_nodes < 8 || self.phi_nodes < 8 {
            return Err(Error::InvalidParameter(
                "quadrature needs >= 8 base nodes per axis".into(),
            ));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "quadrature tolerances must be > 0".into(),
            ));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidParameter(
                "quadrature needs at least one refinement level".into(),
            ));
        }
        Ok(())
    }
}

/// Converged quadrature value with its level-difference error estimate.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOutcome {
    pub value: f64,
    pub error_estimate: f64,
}

/// Expected dimensionless count by integrating the radially pre-integrated
/// kernel over the receiver's angular coordinates.
///
/// For a direction `(theta, phi)` the concentration along the ray is
/// `exp(beta2 + 2 a w - w^2)` in the scaled radius `w = r/(2 sqrt(t*))`, with
/// ```text
/// a     = (sin(theta) sqrt(t*)/2) [(pe_par - x0*/t*) cos(phi) + pe_perp sin(phi)]
/// beta2 = x0* pe_par/2 - t*(pe_par^2 + pe_perp^2)/4 - x0*^2/(4 t*)
/// ```
/// so each angular sample costs one radial moment. The result is clamped to
/// [0, 1].
pub fn expected_count_quadrature(
    t_star: f64,
    env: &DimensionlessEnv,
    spec: &QuadratureSpec,
) -> Result<QuadratureOutcome> {
    if !(t_star > 0.0) {
        return Err(Error::InvalidParameter(
            "expected count requires t* > 0".into(),
        ));
    }
    spec.validate()?;
    let t = t_star;
    let x0 = env.x0_star;
    let c = env.r_obs_star / (2.0 * t.sqrt());
    let beta2 = x0 * env.pe_par / 2.0
        - t * (env.pe_par * env.pe_par + env.pe_perp * env.pe_perp) / 4.0
        - x0 * x0 / (4.0 * t);
    let cos_coeff = env.pe_par - x0 / t;
    let half_sqrt_t = 0.5 * t.sqrt();
    let norm = PI.powf(-1.5);

    let integrand = |theta: f64, phi: f64| -> f64 {
        let sin_theta = theta.sin();
        let a = half_sqrt_t * sin_theta * (cos_coeff * phi.cos() + env.pe_perp * phi.sin());
        let (m2, shift) = radial_moment_scaled(a, c);
        norm * sin_theta * m2 * (beta2 + shift).exp()
    };

    match integrate_2d_adaptive(
        integrand,
        (0.0, PI),
        (0.0, 2.0 * PI),
        spec.theta_nodes,
        spec.phi_nodes,
        spec.abs_tol,
        spec.rel_tol,
        spec.max_depth,
    ) {
        Ok(out) => Ok(QuadratureOutcome {
            value: out.value.clamp(0.0, 1.0),
            error_estimate: out.error_estimate,
        }),
        Err((max_depth, last_delta)) => {
            Err(Error::QuadratureNonConvergence { max_depth, last_delta })
        }
    }
}

/// Exact expected count: closed form when the flow is parallel, quadrature
/// otherwise.
pub fn exact_expected_count(
    t_star: f64,
    env: &DimensionlessEnv,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if env.pe_perp == 0.0 {
        closed_form_parallel(t_star, env)
    } else {
        expected_count_quadrature(t_star, env, spec).map(|o| o.value)
    }
}

/// Signed relative deviation `(uca - exact)/exact` of the uniform
/// concentration assumption; negative means the assumption underestimates.
pub fn uca_relative_deviation(
    t_star: f64,
    env: &DimensionlessEnv,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let exact = exact_expected_count(t_star, env, spec)?;
    if exact < DEVIATION_UNDERFLOW_FLOOR {
        return Err(Error::UndefinedDeviation { exact });
    }
    let uca = expected_count_uca(t_star, env)?;
    Ok((uca - exact) / exact)
}

// -- signal profile -----------------------------------------------------------

/// Which evaluator backs a [`SignalProfile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMode {
    /// Closed form / quadrature.
    Exact,
    /// Uniform-concentration assumption.
    Uca,
}

/// Tabulated per-emission expected counts at every sampling offset and
/// interval lag, plus the parameters needed to evaluate off-lattice times.
///
/// `value_at(k, m)` is the dimensionless `N0*(g*(m) + k t_int*)`; multiplied
/// by `n_em` it is the mean contribution of an emission `k` intervals in the
/// past to the `m`-th observation of the current interval.
#[derive(Debug, Clone)]
pub struct SignalProfile {
    env: DimensionlessEnv,
    mode: ProfileMode,
    isi_depth: usize,
    offsets_star: Vec<f64>,
    /// values[k][m], k = lag in intervals, m = offset index.
    values: Vec<Vec<f64>>,
    quad_spec: QuadratureSpec,
}

/// Tabulate `N0*` at `g*(m) + k t_int*` for `k = 0..=isi_depth`, with equally
/// spaced offsets `g*(m) = m t_int*/M`. Emissions further than `isi_depth`
/// intervals in the past are dropped from every downstream mean.
pub fn build_signal_profile(
    env: &DimensionlessEnv,
    mode: ProfileMode,
    isi_depth: usize,
    spec: &QuadratureSpec,
) -> Result<SignalProfile> {
    if env.m_samples < 1 {
        return Err(Error::InvalidParameter("profile needs M >= 1".into()));
    }
    let m = env.m_samples;
    let offsets_star: Vec<f64> = (1..=m)
        .map(|i| i as f64 * env.t_int_star / m as f64)
        .collect();
    let mut values = Vec::with_capacity(isi_depth + 1);
    for k in 0..=isi_depth {
        let mut row = Vec::with_capacity(m);
        for &g in &offsets_star {
            let t = g + k as f64 * env.t_int_star;
            row.push(evaluate_n0(t, env, mode, spec)?);
        }
        values.push(row);
    }
    Ok(SignalProfile {
        env: env.clone(),
        mode,
        isi_depth,
        offsets_star,
        values,
        quad_spec: *spec,
    })
}

fn evaluate_n0(
    t_star: f64,
    env: &DimensionlessEnv,
    mode: ProfileMode,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if t_star <= 0.0 {
        return Ok(0.0);
    }
    match mode {
        ProfileMode::Exact => exact_expected_count(t_star, env, spec),
        ProfileMode::Uca => expected_count_uca(t_star, env),
    }
}

impl SignalProfile {
    pub fn env(&self) -> &DimensionlessEnv {
        &self.env
    }

    pub fn mode(&self) -> ProfileMode {
        self.mode
    }

    pub fn isi_depth(&self) -> usize {
        self.isi_depth
    }

    pub fn m_samples(&self) -> usize {
        self.offsets_star.len()
    }

    /// Sampling offsets within one interval, dimensionless.
    pub fn offsets_star(&self) -> &[f64] {
        &self.offsets_star
    }

    /// Sampling offsets within one interval, seconds.
    pub fn offsets_seconds(&self) -> Vec<f64> {
        self.offsets_star
            .iter()
            .map(|&g| self.env.to_dimensional_time(g))
            .collect()
    }

    /// Tabulated `N0*(g*(m) + k t_int*)`; `k <= isi_depth`, `m < M`.
    pub fn value_at(&self, lag: usize, offset_idx: usize) -> f64 {
        self.values[lag][offset_idx]
    }

    /// Lag-0 row: expected current-bit contribution per offset.
    pub fn lag_zero(&self) -> &[f64] {
        &self.values[0]
    }

    /// Per-emission expected count at an arbitrary elapsed dimensionless
    /// time (off-lattice evaluation in the profile's mode).
    pub fn n0_star(&self, t_star: f64) -> Result<f64> {
        evaluate_n0(t_star, &self.env, self.mode, &self.quad_spec)
    }

    /// Poisson mean of the `m`-th observation in interval `j` (0-based)
    /// given the transmitted bits: noise plus the lag sum over the most
    /// recent `isi_depth` intervals.
    pub fn mean_at_sample(&self, j: usize, offset_idx: usize, bits: &[u8]) -> f64 {
        let n_em = self.env.n_em as f64;
        let mut mean = self.env.noise_mean;
        let deepest = self.isi_depth.min(j);
        for k in 0..=deepest {
            if bits[j - k] != 0 {
                mean += n_em * self.values[k][offset_idx];
            }
        }
        mean
    }

    /// Expected molecule count at dimensional time `t` for a transmitted
    /// sequence: noise mean plus emissions at `(j-1) T_int` for every bit
    /// `W[j] = 1`, truncated to `isi_depth` intervals back.
    pub fn mean_observed(&self, t_seconds: f64, bits: &[u8]) -> Result<f64> {
        let t_int = self.env.to_dimensional_time(self.env.t_int_star);
        let mut mean = self.env.noise_mean;
        if t_seconds < 0.0 {
            return Ok(mean);
        }
        let newest = ((t_seconds / t_int).floor() as usize).min(bits.len() - 1);
        let oldest = newest.saturating_sub(self.isi_depth);
        let n_em = self.env.n_em as f64;
        for j in oldest..=newest {
            if bits[j] != 0 {
                let lag_star = self.env.to_dimensionless_time(t_seconds - j as f64 * t_int);
                mean += n_em * self.n0_star(lag_star)?;
            }
        }
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PhysicalEnv;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn table_env() -> DimensionlessEnv {
        PhysicalEnv::default().to_dimensionless_x0().unwrap()
    }

    // mpmath (60+ digits): M2(a, c) with the scaling used per branch.
    #[test]
    fn radial_moment_matches_reference() {
        // (a, c, want, want_shift)
        let plain = [
            (0.0, 0.5, 0.035940307438545007),
            (1.5, 0.3, 0.016930231173977086),
            (-1.5, 0.3, 0.004431535280710124),
            (5.0, 0.5, 2.0796459270831742),
            (-5.0, 0.5, 0.0016245380835341914),
            (7.9, 0.05, 7.6081113443741856e-5),
            (-7.9, 0.05, 2.3289930359698223e-5),
            (8.0001, 0.05, 7.6675735385881317e-5),
            (-16.0, 1.58, 6.0330190989322221e-5),
            (-9.1, 0.91, 0.00032024936140133583),
            (-100.0, 2.0, 2.4992502811188238e-7),
            (-12.0, 0.02, 1.8683104102227687e-6),
        ];
        for (a, c, want) in plain {
            let (m2, shift) = radial_moment_scaled(a, c);
            let got = m2 * shift.exp();
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }

        // endpoint-scaled: value * exp(-2ac + c^2)
        let end_scaled = [
            (9.1, 0.91, 0.043985600041465958),
            (16.0, 1.58, 0.082663714184881201),
            (12.0, 0.02, 2.3754459546703581e-6),
            (30.0, 2.0, 0.070121371923607645),
            (100.0, 2.0, 0.020303259462704622),
            (100.0, 5.0, 0.13129498809526689),
            (20.0, 0.3, 0.0019287573186452631),
            (10.0, 5.0, 2.3599977885196485),
            (9.0, 2.0, 0.26375797912569288),
            (8.5, 8.0, 31.445408995657172),
            (12.0, 11.5, 67.095176630549298),
            (30.0, 29.0, 311.73193830262578),
            (8.2, 0.021, 2.8389953607647357e-6),
        ];
        for (a, c, want) in end_scaled {
            let (m2, shift) = radial_moment_scaled(a, c);
            let rescaled = m2 * (shift - (2.0 * a * c - c * c)).exp();
            assert_relative_eq!(rescaled, want, max_relative = 5e-11);
        }

        // peak-scaled interior case: value * exp(-a^2)
        let (m2, shift) = radial_moment_scaled(10.0, 12.0);
        let rescaled = m2 * (shift - 100.0).exp();
        assert_relative_eq!(rescaled, 177.51351375184948, max_relative = 1e-12);
    }

    #[test]
    fn radial_moment_continuous_across_switch() {
        for c in [0.05, 0.5, 1.58, 5.0] {
            for sign in [1.0, -1.0] {
                let lo = radial_moment_scaled(sign * (RADIAL_SERIES_SWITCH - 1e-7), c);
                let hi = radial_moment_scaled(sign * (RADIAL_SERIES_SWITCH + 1e-7), c);
                let v_lo = lo.0.ln() + lo.1;
                let v_hi = hi.0.ln() + hi.1;
                assert_abs_diff_eq!(v_lo, v_hi, epsilon = 1e-9);
            }
        }
    }

    // mpmath (300 digits) closed-form values, R = 0.1, x0 = 1.
    const N0_PARALLEL: [(f64, f64, f64); 6] = [
        // (t*, pe_par, want)
        (1.0 / 6.0, 0.0, 0.00030835473902212787),
        (0.8, 0.0, 9.600132489414533e-5),
        (0.5, 2.0, 0.00026516505865560987), // r_eff = 0 singular instant
        (0.1, -2.0, 8.2950612663135084e-5),
        (0.001, 0.0, 2.1967087920456298e-91), // deep tail
        (10.0, 5.0, 2.5543884435450972e-32),
    ];

    #[test]
    fn closed_form_matches_reference() {
        for (t, pe, want) in N0_PARALLEL {
            let env = table_env().with_peclet(pe, 0.0);
            let got = closed_form_parallel(t, &env).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn closed_form_rejects_perpendicular_flow_and_bad_time() {
        let env = table_env().with_peclet(0.0, 1.0);
        assert!(closed_form_parallel(0.5, &env).is_err());
        assert!(closed_form_parallel(0.0, &table_env()).is_err());
        assert!(closed_form_parallel(-1.0, &table_env()).is_err());
    }

    #[test]
    fn closed_form_zero_flow_uses_static_distance() {
        // Pe// = 0 reduces to |r_eff| = x0*
        let env = table_env();
        let got = closed_form_parallel(0.25, &env).unwrap();
        let direct = gaussian_sphere_count(0.25, env.x0_star, env.r_obs_star);
        assert_eq!(got, direct);
    }

    #[test]
    fn closed_form_vanishes_at_small_time() {
        let env = table_env();
        assert_eq!(closed_form_parallel(1e-9, &env).unwrap(), 0.0);
    }

    #[test]
    fn singular_limit_matches_nearby_values() {
        // approach r_eff = 0 from both sides at t* = 0.5, pe = 2
        let env = table_env();
        let limit = gaussian_sphere_count(0.5, 0.0, env.r_obs_star);
        let near = gaussian_sphere_count(0.5, 1e-7, env.r_obs_star);
        assert_relative_eq!(limit, near, max_relative = 1e-9);
    }

    #[test]
    fn point_concentration_reference_value() {
        // origin, t* = 1/6, no flow: (4 pi/6)^{-3/2} e^{-3/2}; times V* and
        // N_EM = 1e4 gives the 3.08-molecule peak
        let env = table_env();
        let q = ConcentrationQuery { position: [0.0; 3], t_star: 1.0 / 6.0 };
        let c = point_concentration(&q, &env).unwrap();
        let want = (4.0 * PI / 6.0).powf(-1.5) * (-1.5f64).exp();
        assert_relative_eq!(c, want, max_relative = 1e-14);
        let molecules = c * env.obs_volume_star() * env.n_em as f64;
        assert_relative_eq!(molecules, 3.08, max_relative = 2e-3);
        assert!(point_concentration(
            &ConcentrationQuery { position: [0.0; 3], t_star: 0.0 },
            &env
        )
        .is_err());
    }

    #[test]
    fn point_concentration_decays_and_mirrors() {
        let env = table_env().with_peclet(0.7, 1.3);
        let q = |y: f64, t: f64| ConcentrationQuery { position: [0.2, y, 0.1], t_star: t };
        let late = point_concentration(&q(0.0, 1e6), &env).unwrap();
        assert!(late < 1e-9);
        // C*(x, y, z; pe_perp) = C*(x, -y, z; -pe_perp)
        let mirrored_env = table_env().with_peclet(0.7, -1.3); // with_peclet stores |pe_perp|
        let a = point_concentration(&q(0.4, 0.3), &env).unwrap();
        let b = point_concentration(&q(0.4, 0.3), &mirrored_env).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadrature_matches_closed_form_on_parallel_flows() {
        let spec = QuadratureSpec::default();
        for (t, pe, want) in N0_PARALLEL {
            if t < 0.01 {
                continue; // deep tail exercised separately
            }
            let env = table_env().with_peclet(pe, 0.0);
            let got = expected_count_quadrature(t, &env, &spec).unwrap();
            assert_abs_diff_eq!(got.value, want, epsilon = 1e-10);
            assert_relative_eq!(got.value, want, max_relative = 1e-7);
        }
    }

    // mpmath reference values for skew flows (perpendicular component).
    #[test]
    fn quadrature_matches_reference_on_skew_flows() {
        let spec = QuadratureSpec::default();
        let cases = [
            (0.3, 2.0, 2.0, 0.00036970370692878065),
            (1.0, -1.0, 3.0, 3.6523786720849068e-6),
            (0.05, 0.0, 5.0, 4.4652935152345883e-5),
        ];
        for (t, pp, pq, want) in cases {
            let env = table_env().with_peclet(pp, pq);
            let got = expected_count_quadrature(t, &env, &spec).unwrap();
            assert_relative_eq!(got.value, want, max_relative = 1e-8);
        }
    }

    #[test]
    fn quadrature_deep_tail_keeps_relative_accuracy() {
        // t* = 0.001: the value is ~1e-91; the relative gate must hold so
        // deviations down here remain meaningful
        let spec = QuadratureSpec::default();
        let env = table_env();
        let got = expected_count_quadrature(0.001, &env, &spec).unwrap();
        assert_relative_eq!(got.value, 2.1967087920456298e-91, max_relative = 1e-7);
    }

    #[test]
    fn quadrature_is_symmetric_in_perpendicular_sign() {
        let spec = QuadratureSpec::default();
        let plus = expected_count_quadrature(0.3, &table_env().with_peclet(1.0, 2.0), &spec)
            .unwrap()
            .value;
        let minus = expected_count_quadrature(0.3, &table_env().with_peclet(1.0, -2.0), &spec)
            .unwrap()
            .value;
        assert_relative_eq!(plus, minus, max_relative = 1e-12);
    }

    #[test]
    fn conservation_spot_check() {
        // a bounding sphere of radius 20 at t* = 1 captures nearly all mass
        let mut env = table_env();
        env.r_obs_star = 20.0;
        env.x0_star = 1.0;
        let spec = QuadratureSpec::default();
        let got = expected_count_quadrature(1.0, &env, &spec).unwrap().value;
        assert!(got >= 0.999, "captured {got}");
        assert!(got <= 1.0);
    }

    #[test]
    fn uca_reference_values() {
        let env = table_env();
        // peak location: t* = 1/6 maximizes the no-flow UCA
        let peak = expected_count_uca(1.0 / 6.0, &env).unwrap();
        for t in [0.12, 0.15, 0.19, 0.25] {
            assert!(expected_count_uca(t, &env).unwrap() < peak);
        }
        assert_relative_eq!(peak * env.n_em as f64, 3.08, max_relative = 2e-3);
    }

    #[test]
    fn uca_perpendicular_factorization_is_exact() {
        let env0 = table_env().with_peclet(0.7, 0.0);
        let env = table_env().with_peclet(0.7, 2.5);
        for t in [0.05, 0.3, 1.0, 2.0] {
            let base = expected_count_uca(t, &env0).unwrap();
            let full = expected_count_uca(t, &env).unwrap();
            let factor = (-t * 2.5f64 * 2.5 / 4.0).exp();
            assert_eq!(full, base * factor);
        }
    }

    #[test]
    fn deviation_reference_values() {
        // mpmath: dev(0.1, -2, 0) = -0.0205233653256,
        //         dev(0.1, 0, 0) = -0.00981361904772,
        //         dev(0.1, 0, 5) = -0.0159170127091,
        //         dev(1/6, 0, 0) = +1.92005656521e-5
        let spec = QuadratureSpec::default();
        let cases = [
            (0.1, -2.0, 0.0, -0.0205233653256),
            (0.1, 0.0, 0.0, -0.00981361904772),
            (0.1, 0.0, 5.0, -0.0159170127091),
            (1.0 / 6.0, 0.0, 0.0, 1.92005656521e-5),
        ];
        for (t, pp, pq, want) in cases {
            let env = table_env().with_peclet(pp, pq);
            let got = uca_relative_deviation(t, &env, &spec).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-6);
        }
    }

    #[test]
    fn deviation_underflow_is_flagged() {
        let env = table_env();
        let spec = QuadratureSpec::default();
        let err = uca_relative_deviation(1e-5, &env, &spec).unwrap_err();
        assert!(matches!(err, Error::UndefinedDeviation { .. }));
    }

    #[test]
    fn profile_single_point() {
        // isi_depth = 0, M = 1: single value N0*(g(1)) with g(1) = t_int*
        let mut env = table_env();
        env.m_samples = 1;
        let spec = QuadratureSpec::default();
        let p = build_signal_profile(&env, ProfileMode::Exact, 0, &spec).unwrap();
        assert_eq!(p.m_samples(), 1);
        assert_eq!(p.isi_depth(), 0);
        let want = closed_form_parallel(env.t_int_star, &env).unwrap();
        assert_eq!(p.value_at(0, 0), want);
    }

    #[test]
    fn profile_lag0_dominates_lag1_at_reference_env() {
        let env = table_env();
        let spec = QuadratureSpec::default();
        let p = build_signal_profile(&env, ProfileMode::Exact, 2, &spec).unwrap();
        for m in 0..p.m_samples() {
            assert!(
                p.value_at(0, m) > p.value_at(1, m),
                "offset {m}: lag0 {} <= lag1 {}",
                p.value_at(0, m),
                p.value_at(1, m)
            );
        }
    }

    #[test]
    fn profile_modes_agree_within_two_percent_past_t01() {
        // uca vs exact at the tabulated offsets, pe_par in [-2, 4]
        let spec = QuadratureSpec::default();
        for pe in [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0] {
            let env = table_env().with_peclet(pe, 0.0);
            let exact = build_signal_profile(&env, ProfileMode::Exact, 3, &spec).unwrap();
            let uca = build_signal_profile(&env, ProfileMode::Uca, 3, &spec).unwrap();
            for k in 0..=3 {
                for m in 0..exact.m_samples() {
                    let t = exact.offsets_star()[m] + k as f64 * env.t_int_star;
                    if t <= 0.1 {
                        continue;
                    }
                    let e = exact.value_at(k, m);
                    let u = uca.value_at(k, m);
                    assert!(
                        ((u - e) / e).abs() < 0.02,
                        "pe={pe} t*={t}: exact {e:e} uca {u:e}"
                    );
                }
            }
        }
    }

    #[test]
    fn mean_observed_examples() {
        let env = table_env();
        let spec = QuadratureSpec::default();
        let p = build_signal_profile(&env, ProfileMode::Exact, 10, &spec).unwrap();
        let t_int = env.to_dimensional_time(env.t_int_star);

        // all-zero sequence: exactly the noise mean
        let zeros = vec![0u8; 10];
        assert_eq!(p.mean_observed(3.3 * t_int, &zeros).unwrap(), env.noise_mean);

        // single leading 1, t inside the first interval
        let mut w = vec![0u8; 10];
        w[0] = 1;
        let t = 0.6 * t_int;
        let want = env.noise_mean
            + env.n_em as f64
                * closed_form_parallel(env.to_dimensionless_time(t), &env).unwrap();
        assert_relative_eq!(p.mean_observed(t, &w).unwrap(), want, max_relative = 1e-12);

        // two ones, t in the second interval: two-term sum
        let w2 = [1u8, 1];
        let t2 = 1.4 * t_int;
        let lag0 = env.to_dimensionless_time(t2 - t_int);
        let lag1 = env.to_dimensionless_time(t2);
        let want2 = env.noise_mean
            + env.n_em as f64
                * (closed_form_parallel(lag0, &env).unwrap()
                    + closed_form_parallel(lag1, &env).unwrap());
        assert_relative_eq!(p.mean_observed(t2, &w2).unwrap(), want2, max_relative = 1e-12);

        // sample-lattice fast path agrees with the generic evaluation
        let w3 = [1u8, 0, 1, 1];
        for j in 0..4 {
            for m in 0..p.m_samples() {
                let t = j as f64 * t_int + p.offsets_seconds()[m];
                assert_relative_eq!(
                    p.mean_at_sample(j, m, &w3),
                    p.mean_observed(t, &w3).unwrap(),
                    max_relative = 1e-9
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn expected_counts_stay_in_unit_interval(
            t in 1e-3f64..20.0,
            pe_par in -6.0f64..6.0,
            pe_perp in 0.0f64..6.0,
        ) {
            let env = table_env().with_peclet(pe_par, pe_perp);
            let spec = QuadratureSpec::default();
            let q = expected_count_quadrature(t, &env, &spec).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&q));
            let u = expected_count_uca(t, &env).unwrap();
            prop_assert!(u >= 0.0);
            if env.pe_perp == 0.0 {
                let cf = closed_form_parallel(t, &env).unwrap();
                prop_assert!((0.0..=1.0).contains(&cf));
            }
        }

        #[test]
        fn quadrature_agrees_with_closed_form_under_parallel_flow(
            t in 0.01f64..10.0,
            pe in -5.0f64..5.0,
        ) {
            let env = table_env().with_peclet(pe, 0.0);
            let spec = QuadratureSpec::default();
            let q = expected_count_quadrature(t, &env, &spec).unwrap().value;
            let cf = closed_form_parallel(t, &env).unwrap();
            prop_assert!((q - cf).abs() <= 1e-8, "t={t} pe={pe}: q={q:e} cf={cf:e}");
        }
    }
}
