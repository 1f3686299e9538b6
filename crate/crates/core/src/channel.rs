//! Observation-matrix generation: particle-based and Poisson-statistical
//! backends.
//!
//! Both backends share the sampling convention `t(j, m) = (j-1) T_int + g(m)`
//! with offsets `g(m) = m T_int / M`, so the M observations of a bit interval
//! fall inside that interval and the last one lands on its right edge.
//!
//! The particle backend is ground truth: every emitted molecule performs
//! independent Brownian motion with drift, and the receiver counts molecules
//! inside its radius at each sampling time. The statistical backend draws
//! each sample directly from `Poisson(mean_observed)`, which is exact under
//! the independent-samples assumption the detectors already make.

use rand::distr::Bernoulli;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;
use std::io::Write;

use crate::env::PhysicalEnv;
use crate::signal::SignalProfile;
use crate::{Error, Result};

/// Sampling times: `M` observations per bit interval at offsets `g(m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    offsets: Vec<f64>,
    bit_interval: f64,
    intervals: usize,
}

impl SamplingSchedule {
    /// Equally spaced offsets `g(m) = m T_int / M`.
    pub fn equally_spaced(env: &PhysicalEnv) -> Self {
        let m = env.samples_per_interval;
        let offsets = (1..=m)
            .map(|i| i as f64 * env.bit_interval / m as f64)
            .collect();
        Self {
            offsets,
            bit_interval: env.bit_interval,
            intervals: env.sequence_length,
        }
    }

    /// Custom offsets; they must be strictly increasing in (0, T_int].
    pub fn with_offsets(offsets: Vec<f64>, bit_interval: f64, intervals: usize) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidParameter("schedule needs M >= 1".into()));
        }
        let increasing = offsets.windows(2).all(|w| w[0] < w[1]);
        if !increasing || offsets[0] <= 0.0 || *offsets.last().unwrap() > bit_interval {
            return Err(Error::InvalidParameter(
                "offsets must satisfy 0 < g(1) < ... < g(M) <= T_int".into(),
            ));
        }
        Ok(Self { offsets, bit_interval, intervals })
    }

    pub fn samples_per_interval(&self) -> usize {
        self.offsets.len()
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn bit_interval(&self) -> f64 {
        self.bit_interval
    }

    /// Offsets within one interval, seconds.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Global sampling time of observation `m` in interval `j` (0-based).
    pub fn sample_time(&self, j: usize, m: usize) -> f64 {
        j as f64 * self.bit_interval + self.offsets[m]
    }
}

/// Which backend produced an observation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Particle,
    Statistical,
}

impl Backend {
    pub fn label(&self) -> &'static str {
        match self {
            Backend::Particle => "particle",
            Backend::Statistical => "statistical",
        }
    }
}

/// B x M receiver counts for one transmitted sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    counts: Vec<Vec<u32>>,
    bits: Vec<u8>,
    schedule: SamplingSchedule,
    backend: Backend,
    seed: u64,
}

impl ObservationMatrix {
    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn row(&self, j: usize) -> &[u32] {
        &self.counts[j]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn schedule(&self) -> &SamplingSchedule {
        &self.schedule
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// CSV rows `seed,backend,j,m,t_seconds,count,bit` (1-based j, m).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "seed,backend,j,m,t_seconds,count,bit")?;
        for (j, row) in self.counts.iter().enumerate() {
            for (m, &count) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.seed,
                    self.backend.label(),
                    j + 1,
                    m + 1,
                    self.schedule.sample_time(j, m),
                    count,
                    self.bits[j]
                )?;
            }
        }
        Ok(())
    }
}

/// B independent Bernoulli(p_one) bits.
pub fn draw_sequence<R: Rng + ?Sized>(p_one: f64, b_len: usize, rng: &mut R) -> Result<Vec<u8>> {
    let dist = Bernoulli::new(p_one)
        .map_err(|_| Error::InvalidParameter("p_one must lie in [0, 1]".into()))?;
    Ok((0..b_len).map(|_| dist.sample(rng) as u8).collect())
}

/// Positions of live molecules (meters, receiver at the origin).
#[derive(Debug, Clone, Default)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Elapsed simulation time, seconds.
    pub time: f64,
}

impl ParticleState {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn emit(&mut self, n: u64, position: [f64; 3]) {
        let n = n as usize;
        self.x.extend(std::iter::repeat_n(position[0], n));
        self.y.extend(std::iter::repeat_n(position[1], n));
        self.z.extend(std::iter::repeat_n(position[2], n));
    }
}

/// Advance every particle by one step: drift `v dt` plus an independent
/// `N(0, 2 D dt)` displacement per axis. Particles are never removed here
/// (unbounded domain, no degradation).
pub fn particle_step<R: Rng + ?Sized>(
    state: &mut ParticleState,
    dt: f64,
    env: &PhysicalEnv,
    rng: &mut R,
) {
    let sigma = (2.0 * env.diffusion * dt).sqrt();
    let (dx, dy, dz) = (env.flow.vx * dt, env.flow.vy * dt, env.flow.vz * dt);
    for v in state.x.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += dx + sigma * n;
    }
    for v in state.y.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += dy + sigma * n;
    }
    for v in state.z.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += dz + sigma * n;
    }
    state.time += dt;
}

/// Number of particles within `r_obs` of the receiver center, boundary
/// inclusive.
pub fn observe_particles(state: &ParticleState, r_obs: f64) -> usize {
    let r2 = r_obs * r_obs;
    let mut n = 0;
    for i in 0..state.len() {
        let d2 = state.x[i] * state.x[i] + state.y[i] * state.y[i] + state.z[i] * state.z[i];
        if d2 <= r2 {
            n += 1;
        }
    }
    n
}

/// Tunables for the particle backend.
#[derive(Debug, Clone, Copy)]
pub struct ParticleOptions {
    /// Hard cap on live particles; exceeding it is an error rather than a
    /// silent slowdown.
    pub max_particles: usize,
    /// A particle is retired when its best future in-sphere log-probability
    /// bound is below `-retirement_exponent`. 25 keeps the per-particle
    /// contribution bound under 1e-10.
    pub retirement_exponent: f64,
}

impl Default for ParticleOptions {
    fn default() -> Self {
        Self { max_particles: 20_000_000, retirement_exponent: 25.0 }
    }
}

/// Can this particle still reach the receiver with non-negligible
/// probability within `t_rem` seconds? Checks the drifted-mean distance
/// against the diffusion scale on a log grid of horizons, so particles
/// upstream of a flow that will carry them back are kept.
fn may_still_contribute(
    p: [f64; 3],
    env: &PhysicalEnv,
    t_rem: f64,
    dt: f64,
    exponent: f64,
) -> bool {
    let mut tau = dt.min(t_rem);
    let grow = (t_rem / tau).powf(1.0 / 15.0).max(1.05);
    loop {
        let cx = p[0] + env.flow.vx * tau;
        let cy = p[1] + env.flow.vy * tau;
        let cz = p[2] + env.flow.vz * tau;
        let dist = (cx * cx + cy * cy + cz * cz).sqrt() - env.receiver_radius;
        if dist <= 0.0 {
            return true;
        }
        if dist * dist / (4.0 * env.diffusion * tau) < exponent {
            return true;
        }
        if tau >= t_rem {
            return false;
        }
        tau = (tau * grow).min(t_rem);
    }
}

fn retire_particles(
    state: &mut ParticleState,
    env: &PhysicalEnv,
    t_rem: f64,
    opts: &ParticleOptions,
) {
    let mut keep = 0;
    for i in 0..state.len() {
        let p = [state.x[i], state.y[i], state.z[i]];
        if may_still_contribute(p, env, t_rem, env.sim_step, opts.retirement_exponent) {
            state.x[keep] = p[0];
            state.y[keep] = p[1];
            state.z[keep] = p[2];
            keep += 1;
        }
    }
    state.x.truncate(keep);
    state.y.truncate(keep);
    state.z.truncate(keep);
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("positive finite mean").sample(rng);
    draw as u32
}

/// Particle-based simulation of one transmitted sequence.
///
/// Emits `N_EM` particles at the transmitter at the start of every interval
/// whose bit is 1, steps Brownian dynamics with drift at `env.sim_step`, and
/// records the in-sphere count plus an independent `Poisson(noise_mean)`
/// noise draw at each sampling time. Sampling times snap to the nearest step.
pub fn simulate_particle(
    bits: &[u8],
    env: &PhysicalEnv,
    schedule: &SamplingSchedule,
    seed: u64,
    opts: &ParticleOptions,
) -> Result<ObservationMatrix> {
    env.validate()?;
    if bits.len() != schedule.intervals() {
        return Err(Error::InvalidParameter(
            "bit count must match the schedule's interval count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = env.sim_step;
    let m = schedule.samples_per_interval();
    let b = bits.len();

    // step indices for emissions and samples (snapped to the grid)
    let snap = |t: f64| (t / dt).round() as u64;
    let emit_steps: Vec<u64> = (0..b).map(|j| snap(j as f64 * schedule.bit_interval)).collect();
    let sample_steps: Vec<Vec<u64>> = (0..b)
        .map(|j| (0..m).map(|i| snap(schedule.sample_time(j, i))).collect())
        .collect();
    let last_step = *sample_steps.last().unwrap().last().unwrap();
    let tx_pos = [-env.tx_offset, 0.0, 0.0];

    let mut state = ParticleState::default();
    let mut counts = vec![vec![0u32; m]; b];
    let mut next_emit = 0usize; // index into emit_steps
    let mut cursor = (0usize, 0usize); // next (j, m) sample to record

    for step in 0..=last_step {
        while next_emit < b && emit_steps[next_emit] == step {
            if bits[next_emit] != 0 {
                if state.len() + env.molecules_per_emission as usize > opts.max_particles {
                    return Err(Error::ParticleBudget {
                        particles: state.len() + env.molecules_per_emission as usize,
                        cap: opts.max_particles,
                    });
                }
                state.emit(env.molecules_per_emission, tx_pos);
            }
            next_emit += 1;
        }
        if step > 0 {
            particle_step(&mut state, dt, env, &mut rng);
        }
        while cursor.0 < b && sample_steps[cursor.0][cursor.1] == step {
            let signal = observe_particles(&state, env.receiver_radius) as u32;
            counts[cursor.0][cursor.1] = signal + poisson_count(env.noise_mean, &mut rng);
            cursor.1 += 1;
            if cursor.1 == m {
                // interval finished; retire particles that cannot return
                let t_rem = (last_step - step) as f64 * dt;
                if t_rem > 0.0 && state.len() > 4096 {
                    retire_particles(&mut state, env, t_rem, opts);
                }
                cursor = (cursor.0 + 1, 0);
                if cursor.0 == b {
                    break;
                }
            }
        }
        if cursor.0 == b {
            break;
        }
    }

    Ok(ObservationMatrix {
        counts,
        bits: bits.to_vec(),
        schedule: schedule.clone(),
        backend: Backend::Particle,
        seed,
    })
}

/// Statistical simulation: each sample is an independent Poisson draw with
/// mean `mean_observed(t(j, m))` from the signal profile.
pub fn simulate_statistical(
    bits: &[u8],
    profile: &SignalProfile,
    schedule: &SamplingSchedule,
    seed: u64,
) -> Result<ObservationMatrix> {
    if bits.len() != schedule.intervals() {
        return Err(Error::InvalidParameter(
            "bit count must match the schedule's interval count".into(),
        ));
    }
    if profile.m_samples() != schedule.samples_per_interval() {
        return Err(Error::InvalidParameter(
            "profile and schedule disagree on samples per interval".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = schedule.samples_per_interval();
    let counts = (0..bits.len())
        .map(|j| {
            (0..m)
                .map(|i| poisson_count(profile.mean_at_sample(j, i, bits), &mut rng))
                .collect()
        })
        .collect();
    Ok(ObservationMatrix {
        counts,
        bits: bits.to_vec(),
        schedule: schedule.clone(),
        backend: Backend::Statistical,
        seed,
    })
}

/// Per-sample empirical means and standard errors over independent
/// particle-backend trials of the same sequence (parallel, one RNG stream
/// per trial).
pub fn particle_sample_means(
    bits: &[u8],
    env: &PhysicalEnv,
    schedule: &SamplingSchedule,
    n_trials: usize,
    base_seed: u64,
    opts: &ParticleOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let results: Result<Vec<ObservationMatrix>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
            rng.set_stream(trial as u64 + 1);
            simulate_particle(bits, env, schedule, rng.random(), opts)
        })
        .collect();
    Ok(accumulate_means(&results?, schedule))
}

/// Statistical-backend twin of [`particle_sample_means`].
pub fn statistical_sample_means(
    bits: &[u8],
    profile: &SignalProfile,
    schedule: &SamplingSchedule,
    n_trials: usize,
    base_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let results: Result<Vec<ObservationMatrix>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
            rng.set_stream(trial as u64 + 1);
            simulate_statistical(bits, profile, schedule, rng.random())
        })
        .collect();
    Ok(accumulate_means(&results?, schedule))
}

fn accumulate_means(
    runs: &[ObservationMatrix],
    schedule: &SamplingSchedule,
) -> (Vec<f64>, Vec<f64>) {
    let b = schedule.intervals();
    let m = schedule.samples_per_interval();
    let n = runs.len() as f64;
    let mut mean = vec![0.0; b * m];
    let mut sq = vec![0.0; b * m];
    for run in runs {
        for j in 0..b {
            for i in 0..m {
                let v = run.counts[j][i] as f64;
                mean[j * m + i] += v;
                sq[j * m + i] += v * v;
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= n;
    }
    let se = mean
        .iter()
        .zip(sq.iter())
        .map(|(&mu, &s2)| {
            let var = (s2 / n - mu * mu).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}
