//! Experiment orchestration for the mcflow simulator: deviation studies,
//! BER sweeps, signal dumps, and the validation suite behind `mcflow
//! validate`.

pub mod ber;
pub mod checks;
pub mod deviation;
pub mod plotdata;
pub mod signal_dump;

use std::path::Path;

use mcflow::PhysicalEnv;
use sha2::{Digest, Sha256};

/// Stable hash of the physical environment, for output provenance.
pub fn env_hash(env: &PhysicalEnv) -> String {
    let canonical = format!(
        "d={:e};x0={:e};r={:e};v=({:e},{:e},{:e});nem={};tint={:e};noise={:e};b={};p1={:e};m={};dt={:e}",
        env.diffusion,
        env.tx_offset,
        env.receiver_radius,
        env.flow.vx,
        env.flow.vy,
        env.flow.vz,
        env.molecules_per_emission,
        env.bit_interval,
        env.noise_mean,
        env.sequence_length,
        env.p_one,
        env.samples_per_interval,
        env.sim_step,
    );
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Write the metadata sidecar next to an output file. The timestamp lives
/// here and only here, so the data files themselves are byte-reproducible.
pub fn write_metadata(
    dir: &Path,
    command: &str,
    env: &PhysicalEnv,
    seed: Option<u64>,
) -> std::io::Result<()> {
    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let seed_line = match seed {
        Some(s) => format!("seed = {s}\n"),
        None => String::new(),
    };
    let text = format!(
        "command = \"{command}\"\nversion = \"{}\"\nenv_hash = \"{}\"\n{}created_unix = {unix}\n",
        env!("CARGO_PKG_VERSION"),
        env_hash(env),
        seed_line,
    );
    std::fs::write(dir.join("metadata.toml"), text)
}

/// Log-spaced grid of `n` points over `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
