//! Channel parameters in dimensional and dimensionless form.
//!
//! Every other module works from [`DimensionlessEnv`]: lengths scaled by a
//! reference length `L` (the transmitter offset by default), times by
//! `L^2 / D_A`, and flow expressed as the Péclet pair `(pe_par, pe_perp)`.
//! A `v_z` component is folded into `pe_perp` by rotating the flow in the
//! y-z plane, which is exact because the model is axially symmetric about
//! the transmitter-receiver axis.

use serde::Deserialize;

use crate::{Error, Result};

/// Steady uniform drift in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowVector {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl FlowVector {
    pub fn new(vx: f64, vy: f64, vz: f64) -> Self {
        Self { vx, vy, vz }
    }

    /// Magnitude of the component perpendicular to the transmitter-receiver
    /// axis.
    pub fn perpendicular_speed(&self) -> f64 {
        self.vy.hypot(self.vz)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.vx * factor, self.vy * factor, self.vz * factor)
    }
}

/// Physical channel parameters (SI units).
///
/// The receiver is a passive sphere centered at the origin; the transmitter
/// sits at `(-tx_offset, 0, 0)` and releases `molecules_per_emission`
/// molecules at the start of each bit interval that carries a 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalEnv {
    /// Diffusion coefficient D_A in m^2/s.
    pub diffusion: f64,
    /// Transmitter distance x_0 from the receiver center, in m.
    pub tx_offset: f64,
    /// Receiver radius r_obs in m.
    pub receiver_radius: f64,
    /// Steady uniform flow, m/s.
    pub flow: FlowVector,
    /// Molecules released per binary 1.
    pub molecules_per_emission: u64,
    /// Bit interval T_int in s.
    pub bit_interval: f64,
    /// Constant mean of the additive Poisson noise, in molecules.
    pub noise_mean: f64,
    /// Transmitter sequence length B in bits.
    pub sequence_length: usize,
    /// Pr(W[j] = 1).
    pub p_one: f64,
    /// Observations per bit interval M.
    pub samples_per_interval: usize,
    /// Particle simulation step in s.
    pub sim_step: f64,
}

impl Default for PhysicalEnv {
    /// Reference parameter set: D = 1e-9 m^2/s, x0 = 0.5 um, r_obs = 50 nm,
    /// T_int = 0.2 ms, 1e4 molecules per emission, 100-bit sequences,
    /// unit-mean noise, 0.5 us step.
    fn default() -> Self {
        Self {
            diffusion: 1e-9,
            tx_offset: 0.5e-6,
            receiver_radius: 50e-9,
            flow: FlowVector::default(),
            molecules_per_emission: 10_000,
            bit_interval: 0.2e-3,
            noise_mean: 1.0,
            sequence_length: 100,
            p_one: 0.5,
            samples_per_interval: 5,
            sim_step: 0.5e-6,
        }
    }
}

impl PhysicalEnv {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if !(self.diffusion > 0.0) {
            return bad("diffusion coefficient must be > 0");
        }
        if !(self.tx_offset > 0.0) {
            return bad("transmitter offset must be > 0");
        }
        if !(self.receiver_radius > 0.0 && self.receiver_radius < self.tx_offset) {
            return bad("receiver radius must satisfy 0 < r_obs < x0");
        }
        if self.molecules_per_emission < 1 {
            return bad("molecules per emission must be >= 1");
        }
        if !(self.bit_interval > 0.0) {
            return bad("bit interval must be > 0");
        }
        if self.samples_per_interval < 1 {
            return bad("samples per interval must be >= 1");
        }
        if self.sequence_length < 1 {
            return bad("sequence length must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.p_one) {
            return bad("p_one must lie in [0, 1]");
        }
        if !(self.sim_step > 0.0) {
            return bad("simulation step must be > 0");
        }
        if !(self.noise_mean >= 0.0) {
            return bad("noise mean must be >= 0");
        }
        Ok(())
    }

    /// Scale into dimensionless form with the given reference length.
    pub fn to_dimensionless(&self, reference_length: f64) -> Result<DimensionlessEnv> {
        self.validate()?;
        if !(reference_length > 0.0) {
            return Err(Error::InvalidParameter(
                "reference length must be > 0".into(),
            ));
        }
        let l = reference_length;
        let d = self.diffusion;
        Ok(DimensionlessEnv {
            reference_length: l,
            diffusion: d,
            x0_star: self.tx_offset / l,
            r_obs_star: self.receiver_radius / l,
            pe_par: self.flow.vx * l / d,
            pe_perp: self.flow.perpendicular_speed() * l / d,
            t_int_star: d * self.bit_interval / (l * l),
            dt_star: d * self.sim_step / (l * l),
            n_em: self.molecules_per_emission,
            b_len: self.sequence_length,
            m_samples: self.samples_per_interval,
            p_one: self.p_one,
            noise_mean: self.noise_mean,
        })
    }

    /// Dimensionless form with `L = x0`, so `x0* = 1`.
    pub fn to_dimensionless_x0(&self) -> Result<DimensionlessEnv> {
        self.to_dimensionless(self.tx_offset)
    }

    /// Load from TOML text (see `configs/` for the key layout).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: ConfigFile =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let env = raw.into_env();
        env.validate()?;
        Ok(env)
    }
}

/// Dimensionless channel parameters.
///
/// Lengths are per `reference_length`, times per `L^2 / D_A`, and one
/// emission releases one dimensionless molecule, so expected counts are
/// fractions in [0, 1]. The scale anchors (`reference_length`, `diffusion`)
/// are carried so times convert back exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionlessEnv {
    pub reference_length: f64,
    pub diffusion: f64,
    pub x0_star: f64,
    pub r_obs_star: f64,
    /// Péclet number along the transmitter-receiver axis.
    pub pe_par: f64,
    /// Péclet number perpendicular to it (nonnegative by construction).
    pub pe_perp: f64,
    pub t_int_star: f64,
    pub dt_star: f64,
    pub n_em: u64,
    pub b_len: usize,
    pub m_samples: usize,
    pub p_one: f64,
    /// Noise mean in molecules (not rescaled; it is already a count).
    pub noise_mean: f64,
}

impl DimensionlessEnv {
    /// Dimensionless receiver volume (4/3) pi r_obs*^3.
    pub fn obs_volume_star(&self) -> f64 {
        4.0 / 3.0 * core::f64::consts::PI * self.r_obs_star.powi(3)
    }

    /// t = t* L^2 / D_A.
    pub fn to_dimensional_time(&self, t_star: f64) -> f64 {
        t_star * self.reference_length * self.reference_length / self.diffusion
    }

    /// t* = D_A t / L^2.
    pub fn to_dimensionless_time(&self, t_seconds: f64) -> f64 {
        self.diffusion * t_seconds / (self.reference_length * self.reference_length)
    }

    /// Same environment with the Péclet pair replaced (for sweeps).
    pub fn with_peclet(mut self, pe_par: f64, pe_perp: f64) -> Self {
        self.pe_par = pe_par;
        self.pe_perp = pe_perp.abs();
        self
    }
}

// -- config file ------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    timing: TimingSection,
    #[serde(default)]
    source: SourceSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    /// Diffusion coefficient in m^2/s.
    d_a: f64,
    /// Transmitter offset in micrometers.
    x0_um: f64,
    /// Receiver radius in nanometers.
    r_obs_nm: f64,
    /// Flow vector in mm/s.
    v_mm_s: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimingSection {
    /// Bit interval in milliseconds.
    t_int_ms: f64,
    /// Particle step in microseconds.
    dt_us: f64,
    /// Observations per bit interval.
    #[serde(default = "default_m")]
    m_samples: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSection {
    n_em: u64,
    p1: f64,
    b_len: usize,
    noise_mean: f64,
}

fn default_m() -> usize {
    PhysicalEnv::default().samples_per_interval
}

impl Default for ChannelSection {
    fn default() -> Self {
        let e = PhysicalEnv::default();
        Self {
            d_a: e.diffusion,
            x0_um: e.tx_offset * 1e6,
            r_obs_nm: e.receiver_radius * 1e9,
            v_mm_s: [0.0; 3],
        }
    }
}

impl Default for TimingSection {
    fn default() -> Self {
        let e = PhysicalEnv::default();
        Self {
            t_int_ms: e.bit_interval * 1e3,
            dt_us: e.sim_step * 1e6,
            m_samples: e.samples_per_interval,
        }
    }
}

impl Default for SourceSection {
    fn default() -> Self {
        let e = PhysicalEnv::default();
        Self {
            n_em: e.molecules_per_emission,
            p1: e.p_one,
            b_len: e.sequence_length,
            noise_mean: e.noise_mean,
        }
    }
}

impl ConfigFile {
    fn into_env(self) -> PhysicalEnv {
        PhysicalEnv {
            diffusion: self.channel.d_a,
            tx_offset: self.channel.x0_um * 1e-6,
            receiver_radius: self.channel.r_obs_nm * 1e-9,
            flow: FlowVector::new(
                self.channel.v_mm_s[0] * 1e-3,
                self.channel.v_mm_s[1] * 1e-3,
                self.channel.v_mm_s[2] * 1e-3,
            ),
            molecules_per_emission: self.source.n_em,
            bit_interval: self.timing.t_int_ms * 1e-3,
            noise_mean: self.source.noise_mean,
            sequence_length: self.source.b_len,
            p_one: self.source.p1,
            samples_per_interval: self.timing.m_samples,
            sim_step: self.timing.dt_us * 1e-6,
        }
    }
}
