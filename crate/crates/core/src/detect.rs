//! Detectors for the Poisson observation channel: weighted-sum rules
//! (equal-weight and matched-filter) with numerically optimized thresholds,
//! and the memory-limited maximum-likelihood sequence detector.
//!
//! Decision conventions are fixed for reproducibility: a weighted sum equal
//! to the threshold decides 1, a likelihood tie decides 0.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;

use crate::channel::{
    draw_sequence, simulate_particle, simulate_statistical, ObservationMatrix, ParticleOptions,
    SamplingSchedule,
};
use crate::env::PhysicalEnv;
use crate::signal::SignalProfile;
use crate::{Error, Result};

/// 95% two-sided normal quantile used for Wilson intervals.
pub const WILSON_Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Equal,
    Matched,
    Custom,
}

/// Per-observation weights of a weighted-sum detector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    kind: WeightKind,
}

impl WeightVector {
    pub fn equal(m: usize) -> Self {
        Self { weights: vec![1.0; m], kind: WeightKind::Equal }
    }

    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || !weights.iter().any(|&w| w > 0.0) || weights.iter().any(|&w| w < 0.0)
        {
            return Err(Error::InvalidParameter(
                "weights must be nonnegative with at least one positive entry".into(),
            ));
        }
        Ok(Self { weights, kind: WeightKind::Custom })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn weighted_sum(&self, row: &[u32]) -> f64 {
        debug_assert_eq!(row.len(), self.weights.len());
        row.iter()
            .zip(&self.weights)
            .map(|(&c, &w)| w * c as f64)
            .sum()
    }
}

/// Matched-filter weights: the expected current-bit contribution at each
/// offset, normalized to a unit maximum.
pub fn matched_weights(profile: &SignalProfile) -> Result<WeightVector> {
    matched_from_lag0(profile.lag_zero())
}

fn matched_from_lag0(lag0: &[f64]) -> Result<WeightVector> {
    let peak = lag0.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::AllZeroProfile);
    }
    Ok(WeightVector {
        weights: lag0.iter().map(|&v| v / peak).collect(),
        kind: WeightKind::Matched,
    })
}

/// A weighted-sum decision rule: decide 1 iff `sum_m w_m s_m >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRule {
    pub weights: WeightVector,
    pub threshold: f64,
}

/// Per-interval weighted-sum decision (ties decide 1).
pub fn weighted_sum_decide(row: &[u32], rule: &DecisionRule) -> u8 {
    (rule.weights.weighted_sum(row) >= rule.threshold) as u8
}

/// Anything that maps an observation matrix to a decoded bit sequence.
pub trait SequenceDecoder: Sync {
    fn decode(&self, obs: &ObservationMatrix) -> Vec<u8>;
    fn label(&self) -> &str;
}

/// Interval-by-interval weighted-sum detector.
#[derive(Debug, Clone)]
pub struct WeightedSumDetector {
    pub rule: DecisionRule,
    label: String,
}

impl WeightedSumDetector {
    pub fn new(rule: DecisionRule, label: impl Into<String>) -> Self {
        Self { rule, label: label.into() }
    }
}

impl SequenceDecoder for WeightedSumDetector {
    fn decode(&self, obs: &ObservationMatrix) -> Vec<u8> {
        obs.counts()
            .iter()
            .map(|row| weighted_sum_decide(row, &self.rule))
            .collect()
    }

    fn label(&self) -> &str {
        &self.label
    }
}

// -- threshold optimization ----------------------------------------------------

/// Training data for the threshold search: one weighted sum per transmitted
/// bit, generated with the statistical backend.
fn training_sums(
    weights: &WeightVector,
    profile: &SignalProfile,
    schedule: &SamplingSchedule,
    n_sequences: usize,
    base_seed: u64,
) -> Result<Vec<(f64, u8)>> {
    let env = profile.env();
    let mut out = Vec::with_capacity(n_sequences * schedule.intervals());
    for trial in 0..n_sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(trial as u64 + 1);
        let bits = draw_sequence(env.p_one, schedule.intervals(), &mut rng)?;
        let obs = simulate_statistical(&bits, profile, schedule, rng.random())?;
        for (row, &bit) in obs.counts().iter().zip(obs.bits()) {
            out.push((weights.weighted_sum(row), bit));
        }
    }
    Ok(out)
}

/// Exact empirical threshold search: every achievable cut of the sorted
/// training sums is scored and the best midpoint returned.
///
/// Decisions only change when the threshold crosses an achieved sum, so the
/// midpoint set is exhaustive for the empirical error; no further refinement
/// can improve on it.
fn best_threshold(samples: &mut [(f64, u8)]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = samples.len();
    let total_ones: usize = samples.iter().map(|&(_, b)| b as usize).sum();

    // errors(cut) = ones below the cut (decided 0) + zeros at/above (decided 1)
    let mut ones_below = 0usize;
    let mut zeros_below = 0usize;
    let total_zeros = n - total_ones;
    let mut best_cut = 0usize;
    let mut best_err = total_zeros; // cut at 0: everything decided 1
    let mut worst_err = best_err;
    let mut cuts = 1usize;
    for i in 1..=n {
        let (v, b) = samples[i - 1];
        ones_below += b as usize;
        zeros_below += 1 - b as usize;
        // a real threshold can separate positions i-1 and i only if the sums differ
        if i < n && samples[i].0 == v {
            continue;
        }
        let err = ones_below + (total_zeros - zeros_below);
        cuts += 1;
        if err < best_err {
            best_err = err;
            best_cut = i;
        }
        if err > worst_err {
            worst_err = err;
        }
    }
    if cuts > 1 && best_err == worst_err {
        return Err(Error::DegenerateThreshold);
    }
    let threshold = if best_cut == 0 {
        samples[0].0 - 1.0
    } else if best_cut == n {
        samples[n - 1].0 + 1.0
    } else {
        0.5 * (samples[best_cut - 1].0 + samples[best_cut].0)
    };
    Ok((threshold, best_err as f64 / n as f64))
}

/// Numerically optimized decision threshold for the given weights: minimizes
/// the empirical error over `n_sequences` training sequences drawn from the
/// statistical backend.
pub fn optimize_threshold(
    weights: &WeightVector,
    profile: &SignalProfile,
    schedule: &SamplingSchedule,
    n_sequences: usize,
    base_seed: u64,
) -> Result<DecisionRule> {
    if n_sequences < 100 {
        return Err(Error::InvalidParameter(
            "threshold search needs at least 100 training sequences".into(),
        ));
    }
    let mut sums = training_sums(weights, profile, schedule, n_sequences, base_seed)?;
    let (threshold, _) = best_threshold(&mut sums)?;
    Ok(DecisionRule { weights: weights.clone(), threshold })
}

// -- sequence detector ----------------------------------------------------------

/// Maximum-likelihood sequence detector with channel memory limited to `F`
/// prior intervals, implemented as a Viterbi pass over `2^F` states.
///
/// The state after interval `j` is the last `F` bits (bit `k-1` of the state
/// is `W[j-k+1]`); each sample's Poisson mean includes the lag-0..F profile
/// contributions only. Likelihood ties resolve toward bit 0.
#[derive(Debug, Clone)]
pub struct ViterbiDetector {
    memory: usize,
    /// means[state][bit][m]: Poisson mean given the previous `F` bits and the
    /// current bit.
    means: Vec<[Vec<f64>; 2]>,
    label: String,
}

impl ViterbiDetector {
    pub fn new(profile: &SignalProfile, memory: usize) -> Result<Self> {
        if memory > profile.isi_depth() {
            return Err(Error::InvalidParameter(format!(
                "channel memory {memory} exceeds profile ISI depth {}",
                profile.isi_depth()
            )));
        }
        let m = profile.m_samples();
        let n_em = profile.env().n_em as f64;
        let noise = profile.env().noise_mean;
        let n_states = 1usize << memory;
        let mut means = Vec::with_capacity(n_states);
        for state in 0..n_states {
            let mut pair = [vec![0.0; m], vec![0.0; m]];
            for (bit, row) in pair.iter_mut().enumerate() {
                for (i, slot) in row.iter_mut().enumerate() {
                    let mut mean = noise + bit as f64 * n_em * profile.value_at(0, i);
                    for k in 1..=memory {
                        if (state >> (k - 1)) & 1 == 1 {
                            mean += n_em * profile.value_at(k, i);
                        }
                    }
                    *slot = mean;
                }
            }
            means.push(pair);
        }
        Ok(Self { memory, means, label: "optimal".into() })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }
}

/// ln(k!) for k = 0..=max.
fn ln_factorial_table(max: u32) -> Vec<f64> {
    let mut table = Vec::with_capacity(max as usize + 1);
    table.push(0.0);
    let mut acc = 0.0;
    for k in 1..=max {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

fn poisson_log_pmf(count: u32, mean: f64, ln_fact: &[f64]) -> f64 {
    if mean <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    count as f64 * mean.ln() - mean - ln_fact[count as usize]
}

impl SequenceDecoder for ViterbiDetector {
    fn decode(&self, obs: &ObservationMatrix) -> Vec<u8> {
        let b = obs.counts().len();
        let n_states = 1usize << self.memory;
        let mask = n_states - 1;
        let max_count = obs
            .counts()
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .unwrap_or(0);
        let ln_fact = ln_factorial_table(max_count);

        // scores[state] = best log-likelihood ending in `state`; before the
        // first interval only the all-zero history is reachable
        let mut scores = vec![f64::NEG_INFINITY; n_states];
        scores[0] = 0.0;
        let mut backptr = vec![vec![0usize; n_states]; b];

        for (j, row) in obs.counts().iter().enumerate() {
            let mut next = vec![f64::NEG_INFINITY; n_states];
            let mut bp = vec![0usize; n_states];
            for state in 0..n_states {
                if scores[state] == f64::NEG_INFINITY {
                    continue;
                }
                for bit in 0..2usize {
                    let means = &self.means[state][bit];
                    let mut ll = scores[state];
                    for (i, &c) in row.iter().enumerate() {
                        ll += poisson_log_pmf(c, means[i], &ln_fact);
                        if ll == f64::NEG_INFINITY {
                            break;
                        }
                    }
                    let dest = ((state << 1) | bit) & mask;
                    // strict > with bit-0 candidates first: ties keep bit 0
                    if ll > next[dest] {
                        next[dest] = ll;
                        bp[dest] = state;
                    }
                }
            }
            scores = next;
            backptr[j] = bp;
        }

        let mut best_state = 0;
        let mut best = f64::NEG_INFINITY;
        for (s, &v) in scores.iter().enumerate() {
            if v > best {
                best = v;
                best_state = s;
            }
        }
        let mut bits = vec![0u8; b];
        let mut state = best_state;
        for j in (0..b).rev() {
            bits[j] = (state & 1) as u8;
            state = backptr[j][state];
        }
        bits
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// Reference maximizer: scores every length-B sequence under the same
/// memory-truncated likelihood as [`ViterbiDetector`]. Exponential in B;
/// intended for validation only.
pub fn exhaustive_sequence_detect(
    obs: &ObservationMatrix,
    profile: &SignalProfile,
    memory: usize,
) -> Result<Vec<u8>> {
    let b = obs.counts().len();
    if b > 20 {
        return Err(Error::InvalidParameter(
            "exhaustive search is limited to B <= 20".into(),
        ));
    }
    let n_em = profile.env().n_em as f64;
    let noise = profile.env().noise_mean;
    let max_count = obs
        .counts()
        .iter()
        .flat_map(|row| row.iter().copied())
        .max()
        .unwrap_or(0);
    let ln_fact = ln_factorial_table(max_count);

    let mut best_bits = vec![0u8; b];
    let mut best = f64::NEG_INFINITY;
    for word in 0u64..(1u64 << b) {
        let bits: Vec<u8> = (0..b).map(|j| ((word >> j) & 1) as u8).collect();
        let mut ll = 0.0;
        'seq: for (j, row) in obs.counts().iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                let mut mean = noise;
                for k in 0..=memory.min(j) {
                    if bits[j - k] != 0 {
                        mean += n_em * profile.value_at(k, i);
                    }
                }
                ll += poisson_log_pmf(c, mean, &ln_fact);
                if ll == f64::NEG_INFINITY {
                    break 'seq;
                }
            }
        }
        if ll > best {
            best = ll;
            best_bits = bits;
        }
    }
    Ok(best_bits)
}

// -- BER estimation ---------------------------------------------------------------

/// Observation source for BER runs.
pub enum BerBackend<'a> {
    Statistical,
    Particle(&'a PhysicalEnv, ParticleOptions),
}

impl BerBackend<'_> {
    fn label(&self) -> &'static str {
        match self {
            BerBackend::Statistical => "statistical",
            BerBackend::Particle(..) => "particle",
        }
    }
}

/// One detector's estimated bit error probability at one channel point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub detector: String,
    pub backend: String,
    pub pe_par: f64,
    pub pe_perp: f64,
    pub m_samples: usize,
    pub n_sequences: usize,
    pub bits_per_sequence: usize,
    pub bit_errors: u64,
    pub ber: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
}

impl BerReport {
    pub fn csv_header() -> &'static str {
        "pe_par,pe_perp,m,detector,backend,n_seq,ber,ci_lo,ci_hi,seed"
    }

    pub fn write_csv_row<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            self.pe_par,
            self.pe_perp,
            self.m_samples,
            self.detector,
            self.backend,
            self.n_sequences,
            self.ber,
            self.ci_lo,
            self.ci_hi,
            self.seed
        )
    }
}

/// Wilson score interval for `errors` out of `trials` at confidence `z`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0, "Wilson interval needs at least one trial");
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Estimate each detector's BER over `n_sequences` independent sequences.
///
/// Every detector decodes the *same* observation realizations, so
/// cross-detector comparisons are paired. Sequences are simulated in
/// parallel on per-sequence RNG streams and reduced in index order; reruns
/// with the same seed are bit-identical.
pub fn estimate_ber(
    decoders: &[&dyn SequenceDecoder],
    profile: &SignalProfile,
    schedule: &SamplingSchedule,
    backend: &BerBackend,
    n_sequences: usize,
    base_seed: u64,
) -> Result<Vec<BerReport>> {
    if n_sequences < 1 {
        return Err(Error::InvalidParameter("need at least one sequence".into()));
    }
    let env = profile.env();
    let per_seq: Result<Vec<Vec<u64>>> = (0..n_sequences)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
            rng.set_stream(trial as u64 + 1);
            let bits = draw_sequence(env.p_one, schedule.intervals(), &mut rng)?;
            let obs = match backend {
                BerBackend::Statistical => {
                    simulate_statistical(&bits, profile, schedule, rng.random())?
                }
                BerBackend::Particle(phys, opts) => {
                    simulate_particle(&bits, phys, schedule, rng.random(), opts)?
                }
            };
            let errors = decoders
                .iter()
                .map(|d| {
                    let decoded = d.decode(&obs);
                    decoded
                        .iter()
                        .zip(&bits)
                        .filter(|(a, b)| a != b)
                        .count() as u64
                })
                .collect();
            Ok(errors)
        })
        .collect();
    let per_seq = per_seq?;

    let trials = (n_sequences * schedule.intervals()) as u64;
    let reports = decoders
        .iter()
        .enumerate()
        .map(|(d, dec)| {
            let bit_errors: u64 = per_seq.iter().map(|row| row[d]).sum();
            let (ci_lo, ci_hi) = wilson_interval(bit_errors, trials, WILSON_Z95);
            BerReport {
                detector: dec.label().to_string(),
                backend: backend.label().to_string(),
                pe_par: env.pe_par,
                pe_perp: env.pe_perp,
                m_samples: schedule.samples_per_interval(),
                n_sequences,
                bits_per_sequence: schedule.intervals(),
                bit_errors,
                ber: bit_errors as f64 / trials as f64,
                ci_lo,
                ci_hi,
                seed: base_seed,
            }
        })
        .collect();
    Ok(reports)
}
