//! BER-vs-flow sweeps over Péclet grids, sample counts, and detectors.

use mcflow::channel::SamplingSchedule;
use mcflow::detect::{
    estimate_ber, matched_weights, optimize_threshold, BerBackend, BerReport, SequenceDecoder,
    ViterbiDetector, WeightVector, WeightedSumDetector,
};
use mcflow::signal::{build_signal_profile, ProfileMode};
use mcflow::{PhysicalEnv, QuadratureSpec};
use rayon::prelude::*;
use std::io::Write;

/// Which Péclet component the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    PePar,
    PePerp,
    /// pe_par = pe_perp pointwise.
    PeBoth,
}

impl SweepAxis {
    pub fn peclet(&self, v: f64) -> (f64, f64) {
        match self {
            SweepAxis::PePar => (v, 0.0),
            SweepAxis::PePerp => (0.0, v),
            SweepAxis::PeBoth => (v, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Equal,
    Matched,
    Optimal,
}

impl DetectorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "equal" => Some(Self::Equal),
            "matched" => Some(Self::Matched),
            "optimal" => Some(Self::Optimal),
            _ => None,
        }
    }
}

/// Full sweep description.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub m_list: Vec<usize>,
    pub detectors: Vec<DetectorKind>,
    pub particle_backend: bool,
    pub n_sequences: usize,
    pub train_sequences: usize,
    pub channel_memory: usize,
    pub isi_depth: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> mcflow::Result<()> {
        if self.grid.is_empty() || self.m_list.is_empty() || self.detectors.is_empty() {
            return Err(mcflow::Error::InvalidParameter(
                "sweep needs a nonempty grid, M list, and detector list".into(),
            ));
        }
        if self.n_sequences < 1 {
            return Err(mcflow::Error::InvalidParameter(
                "sweep needs n_sequences >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Reference grids: the co-flow axis is log-spaced on both sides of zero,
    /// the perpendicular axis from 0 to 10.
    pub fn default_grid(axis: SweepAxis) -> Vec<f64> {
        match axis {
            SweepAxis::PePar | SweepAxis::PeBoth => vec![
                -2.0, -1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0,
            ],
            SweepAxis::PePerp => vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0],
        }
    }
}

/// Per-point failure record; the sweep continues past failed points.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub pe_par: f64,
    pub pe_perp: f64,
    pub m_samples: usize,
    pub message: String,
}

/// One sweep point: build the profile for the flow, train thresholds, run
/// all requested detectors on shared observations.
pub fn run_sweep_point(
    env: &PhysicalEnv,
    pe_par: f64,
    pe_perp: f64,
    m_samples: usize,
    spec: &SweepSpec,
    quad: &QuadratureSpec,
) -> mcflow::Result<Vec<BerReport>> {
    let d = env.diffusion / env.tx_offset; // velocity per unit Péclet
    let point_env = PhysicalEnv {
        flow: mcflow::FlowVector::new(pe_par * d, pe_perp * d, 0.0),
        samples_per_interval: m_samples,
        ..env.clone()
    };
    let denv = point_env.to_dimensionless_x0()?;
    let profile = build_signal_profile(&denv, ProfileMode::Exact, spec.isi_depth, quad)?;
    let schedule = SamplingSchedule::equally_spaced(&point_env);
    let train_seed = spec.seed ^ 0x5eed_7a17;

    let mut decoders: Vec<Box<dyn SequenceDecoder>> = Vec::new();
    for kind in &spec.detectors {
        match kind {
            DetectorKind::Equal => {
                let w = WeightVector::equal(m_samples);
                let rule =
                    optimize_threshold(&w, &profile, &schedule, spec.train_sequences, train_seed)?;
                decoders.push(Box::new(WeightedSumDetector::new(rule, "equal")));
            }
            DetectorKind::Matched => {
                let w = matched_weights(&profile)?;
                let rule =
                    optimize_threshold(&w, &profile, &schedule, spec.train_sequences, train_seed)?;
                decoders.push(Box::new(WeightedSumDetector::new(rule, "matched")));
            }
            DetectorKind::Optimal => {
                decoders.push(Box::new(ViterbiDetector::new(&profile, spec.channel_memory)?));
            }
        }
    }
    let refs: Vec<&dyn SequenceDecoder> = decoders.iter().map(|b| b.as_ref()).collect();
    let backend = if spec.particle_backend {
        BerBackend::Particle(&point_env, Default::default())
    } else {
        BerBackend::Statistical
    };
    estimate_ber(&refs, &profile, &schedule, &backend, spec.n_sequences, spec.seed)
}

/// Run the whole sweep; points execute in a work pool and results come back
/// in grid order regardless of completion order.
pub fn run_ber_sweep(
    env: &PhysicalEnv,
    spec: &SweepSpec,
    quad: &QuadratureSpec,
) -> mcflow::Result<(Vec<BerReport>, Vec<SweepFailure>)> {
    spec.validate()?;
    let points: Vec<(f64, usize)> = spec
        .grid
        .iter()
        .flat_map(|&v| spec.m_list.iter().map(move |&m| (v, m)))
        .collect();
    let results: Vec<std::result::Result<Vec<BerReport>, SweepFailure>> = points
        .par_iter()
        .map(|&(v, m)| {
            let (pe_par, pe_perp) = spec.axis.peclet(v);
            run_sweep_point(env, pe_par, pe_perp, m, spec, quad).map_err(|e| SweepFailure {
                pe_par,
                pe_perp,
                m_samples: m,
                message: e.to_string(),
            })
        })
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut batch) => reports.append(&mut batch),
            Err(f) => failures.push(f),
        }
    }
    Ok((reports, failures))
}

pub fn write_csv<W: Write>(reports: &[BerReport], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", BerReport::csv_header())?;
    for r in reports {
        r.write_csv_row(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec() -> SweepSpec {
        SweepSpec {
            axis: SweepAxis::PePar,
            grid: vec![0.0],
            m_list: vec![2],
            detectors: vec![DetectorKind::Equal],
            particle_backend: false,
            n_sequences: 1,
            train_sequences: 100,
            channel_memory: 2,
            isi_depth: 6,
            seed: 3,
        }
    }

    #[test]
    fn single_point_smoke() {
        // n_sequences = 1 with one detector: completes and emits one report
        let env = PhysicalEnv { sequence_length: 10, ..PhysicalEnv::default() };
        let (reports, failures) =
            run_ber_sweep(&env, &quick_spec(), &QuadratureSpec::default()).unwrap();
        assert!(failures.is_empty());
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].detector, "equal");
        let mut buf = Vec::new();
        write_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("pe_par,pe_perp,m,"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn sweep_rejects_empty_grids() {
        let mut spec = quick_spec();
        spec.grid.clear();
        let env = PhysicalEnv::default();
        assert!(run_ber_sweep(&env, &spec, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        let env = PhysicalEnv { sequence_length: 12, ..PhysicalEnv::default() };
        let mut spec = quick_spec();
        spec.n_sequences = 5;
        spec.grid = vec![0.0, 1.0];
        let (a, _) = run_ber_sweep(&env, &spec, &QuadratureSpec::default()).unwrap();
        let (b, _) = run_ber_sweep(&env, &spec, &QuadratureSpec::default()).unwrap();
        assert_eq!(a, b);
    }
}
