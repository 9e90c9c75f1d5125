//! Synthetic power and impedance traces under the Hamming-weight leakage law
//! `L = a·HW(m) + b + n`.
//!
//! Each measurement is the average of R raw acquisitions. The mean of R
//! independent `N(0, σ²)` draws is distributed exactly as `N(0, σ²/R)`, so a
//! single draw at the reduced deviation is taken per sample. Every
//! measurement row has its own ChaCha stream derived from the seed and the
//! row index, which keeps synthesis deterministic under parallel execution.

pub mod lfsr;

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::aes_target::{intermediate, AesKey, PlaintextBlock, BLOCK_BYTES};
use crate::trace_store::{Channel, TraceSet, TraceSetError};
use lfsr::{ActivityKind, BackgroundActivity, LfsrError, BANK_SIZE};

/// Oscilloscope record length per trace.
pub const POWER_SAMPLES: usize = 2501;
/// Acquisitions averaged into one power trace.
pub const POWER_REPETITIONS: u32 = 128;
/// 5 GS/s sample interval.
pub const POWER_SAMPLE_PERIOD_S: f64 = 2e-10;

/// Frequency points per impedance sweep.
pub const IMPEDANCE_SAMPLES: usize = 10001;
/// Sweeps averaged into one impedance trace.
pub const IMPEDANCE_REPETITIONS: u32 = 100;
pub const IMPEDANCE_START_HZ: f64 = 1e5;
pub const IMPEDANCE_STOP_HZ: f64 = 3.2e9;

/// Leaking samples per key byte.
pub const LEAK_POINTS_PER_BYTE: usize = 5;

/// Stream index reserved for plaintext generation.
const PLAINTEXT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid leakage configuration: {0}")]
    Config(String),
    #[error("config is for the {config} channel but {requested} traces were requested")]
    WrongChannel { config: Channel, requested: Channel },
    #[error("at least 2 measurements are required, got {0}")]
    TooFewMeasurements(usize),
    #[error(transparent)]
    Lfsr(#[from] LfsrError),
    #[error(transparent)]
    TraceSet(#[from] TraceSetError),
}

/// Optional Lorentzian bump added to the baseline, in the units of `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub amplitude: f64,
    pub center: f64,
    pub half_width: f64,
}

impl Resonance {
    pub fn at(&self, axis_value: f64) -> f64 {
        let u = (axis_value - self.center) / self.half_width;
        self.amplitude / (1.0 + u * u)
    }
}

/// Simulator parameters. Construct with [`default_config`] and adjust fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageConfig {
    pub channel: Channel,
    /// Leakage per Hamming-weight unit (volts or ohms).
    pub gain: f64,
    /// Baseline level (volts or ohms).
    pub offset: f64,
    /// Standard deviation of one raw acquisition's noise.
    pub noise_sigma: f64,
    pub repetitions: u32,
    pub sample_count: usize,
    pub axis_start: f64,
    pub axis_step: f64,
    /// Leaking sample indices, one group per key byte (exactly 16 groups; groups may be empty).
    pub leak_positions: Vec<Vec<usize>>,
    pub lfsr_enabled: bool,
    pub lfsr_seeds: [u8; BANK_SIZE],
    /// Background amplitude per unit of bank activity.
    pub lfsr_coupling: f64,
    pub resonance: Option<Resonance>,
    pub rng_seed: u64,
}

/// Default leak layout for a channel and record length.
///
/// Power leaks in a contiguous window per byte, aligned to that byte's
/// memory write; impedance leaks at bins scattered across the sweep.
pub fn default_leak_positions(channel: Channel, sample_count: usize) -> Vec<Vec<usize>> {
    let n = LEAK_POINTS_PER_BYTE;
    (0..BLOCK_BYTES)
        .map(|j| {
            (0..n)
                .map(|i| match channel {
                    Channel::Power => {
                        let stride = sample_count / (BLOCK_BYTES + 4);
                        if stride >= n {
                            stride * (j + 2) + i
                        } else {
                            (j * n + i) % sample_count
                        }
                    }
                    Channel::Impedance => {
                        let spacing = sample_count / (BLOCK_BYTES * n + 1);
                        if spacing >= 1 {
                            spacing / 2 + (j + BLOCK_BYTES * i) * spacing
                        } else {
                            (j + BLOCK_BYTES * i) % sample_count
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Calibrated per-channel defaults.
///
/// Record lengths and averaging counts follow the instruments; gain, offset
/// and noise are calibration knobs chosen so the averaged impedance traces
/// are cleaner than the power traces (per-sample correlation of the correct
/// key about 0.7 for impedance and 0.4 for power).
pub fn default_config(channel: Channel) -> LeakageConfig {
    match channel {
        Channel::Power => LeakageConfig {
            channel,
            gain: 0.01,
            offset: 3.3,
            noise_sigma: 0.4,
            repetitions: POWER_REPETITIONS,
            sample_count: POWER_SAMPLES,
            axis_start: 0.0,
            axis_step: POWER_SAMPLE_PERIOD_S,
            leak_positions: default_leak_positions(channel, POWER_SAMPLES),
            lfsr_enabled: false,
            lfsr_seeds: default_lfsr_seeds(),
            lfsr_coupling: 0.04,
            resonance: None,
            rng_seed: 0,
        },
        Channel::Impedance => LeakageConfig {
            channel,
            gain: 0.05,
            offset: 50.0,
            noise_sigma: 0.7,
            repetitions: IMPEDANCE_REPETITIONS,
            sample_count: IMPEDANCE_SAMPLES,
            axis_start: IMPEDANCE_START_HZ,
            axis_step: (IMPEDANCE_STOP_HZ - IMPEDANCE_START_HZ) / (IMPEDANCE_SAMPLES - 1) as f64,
            leak_positions: default_leak_positions(channel, IMPEDANCE_SAMPLES),
            lfsr_enabled: false,
            lfsr_seeds: default_lfsr_seeds(),
            lfsr_coupling: 0.005,
            resonance: None,
            rng_seed: 0,
        },
    }
}

fn default_lfsr_seeds() -> [u8; BANK_SIZE] {
    std::array::from_fn(|i| i as u8 + 1)
}

impl LeakageConfig {
    /// Changes the record length and re-derives the default leak layout for it.
    ///
    /// An impedance sweep keeps its span, so the bin spacing changes.
    pub fn with_sample_count(mut self, sample_count: usize) -> Self {
        self.sample_count = sample_count;
        if self.channel == Channel::Impedance && sample_count > 1 {
            self.axis_step = (IMPEDANCE_STOP_HZ - self.axis_start) / (sample_count - 1) as f64;
        }
        self.leak_positions = default_leak_positions(self.channel, sample_count);
        self
    }

    /// Standard deviation of the averaged noise, `σ/√R`.
    pub fn averaged_sigma(&self) -> f64 {
        self.noise_sigma / (self.repetitions as f64).sqrt()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        for (name, v) in [
            ("gain", self.gain),
            ("offset", self.offset),
            ("axis_start", self.axis_start),
            ("axis_step", self.axis_step),
            ("lfsr_coupling", self.lfsr_coupling),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.leak_positions.len() != BLOCK_BYTES {
            return bad(format!(
                "leak_positions needs one group per key byte ({BLOCK_BYTES}), got {}",
                self.leak_positions.len()
            ));
        }
        if let Some(&p) = self.leak_positions.iter().flatten().find(|&&p| p >= self.sample_count) {
            return bad(format!("leak position {p} outside 0..{}", self.sample_count));
        }
        if self.lfsr_enabled {
            if let Some(&s) = self.lfsr_seeds.iter().find(|&&s| s == 0 || s > 31) {
                return bad(format!("LFSR seeds must be nonzero 5-bit values, got {s}"));
            }
        }
        if let Some(r) = self.resonance {
            if !(r.amplitude.is_finite() && r.center.is_finite() && r.half_width.is_finite() && r.half_width > 0.0) {
                return bad("resonance parameters must be finite with positive width".into());
            }
        }
        Ok(())
    }

    fn background(&self) -> Result<Option<BackgroundActivity>, SimError> {
        if !self.lfsr_enabled {
            return Ok(None);
        }
        let kind = match self.channel {
            Channel::Power => ActivityKind::Switching,
            Channel::Impedance => ActivityKind::StoredWeight,
        };
        Ok(Some(BackgroundActivity::new(&self.lfsr_seeds, kind)?))
    }
}

/// Uniformly random plaintext blocks, reproducible from `seed`.
///
/// Independent of the channel, so power and impedance sets generated with
/// the same seed share their plaintexts.
pub fn random_plaintexts(count: usize, seed: u64) -> Vec<PlaintextBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PLAINTEXT_STREAM);
    (0..count)
        .map(|_| {
            let mut block = [0u8; BLOCK_BYTES];
            rng.fill_bytes(&mut block);
            block
        })
        .collect()
}

/// Trace set for whichever channel the config names.
pub fn synthesize(
    config: &LeakageConfig,
    plaintexts: &[PlaintextBlock],
    true_key: &AesKey,
) -> Result<TraceSet, SimError> {
    config.validate()?;
    let m = plaintexts.len();
    if m < 2 {
        return Err(SimError::TooFewMeasurements(m));
    }
    let s = config.sample_count;
    let background = config.background()?;
    let baseline: Vec<f64> = (0..s)
        .map(|i| {
            let axis = config.axis_start + config.axis_step * i as f64;
            config.offset + config.resonance.map_or(0.0, |r| r.at(axis))
        })
        .collect();
    let noise_std = config.averaged_sigma();

    let mut samples = Array2::<f64>::zeros((m, s));
    samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row_index, mut row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            rng.set_stream(row_index as u64);
            let clock0 = row_index as u64 * s as u64;
            for (i, v) in row.iter_mut().enumerate() {
                let n: f64 = rng.sample(StandardNormal);
                *v = baseline[i] + noise_std * n;
                if let Some(bg) = &background {
                    *v += config.lfsr_coupling * bg.at(clock0 + i as u64);
                }
            }
            let block = &plaintexts[row_index];
            for (j, group) in config.leak_positions.iter().enumerate() {
                let hw = intermediate(block[j], true_key[j]).hamming_weight() as f64;
                for &p in group {
                    row[p] += config.gain * hw;
                }
            }
        });

    let provenance = format!(
        "simulated {} traces: seed={} gain={} offset={} sigma={} reps={} lfsr={}",
        config.channel,
        config.rng_seed,
        config.gain,
        config.offset,
        config.noise_sigma,
        config.repetitions,
        if config.lfsr_enabled { "on" } else { "off" }
    );
    Ok(TraceSet::new(
        config.channel,
        samples,
        config.axis_start,
        config.axis_step,
        plaintexts.to_vec(),
        Some(*true_key),
        config.repetitions,
        provenance,
    )?)
}

fn require_channel(config: &LeakageConfig, requested: Channel) -> Result<(), SimError> {
    if config.channel != requested {
        return Err(SimError::WrongChannel {
            config: config.channel,
            requested,
        });
    }
    Ok(())
}

/// Time-domain supply traces; LFSR background adds switching activity.
pub fn synth_power_traces(
    config: &LeakageConfig,
    plaintexts: &[PlaintextBlock],
    true_key: &AesKey,
) -> Result<TraceSet, SimError> {
    require_channel(config, Channel::Power)?;
    synthesize(config, plaintexts, true_key)
}

/// Impedance-magnitude sweeps; LFSR background adds stored-state weight.
pub fn synth_impedance_traces(
    config: &LeakageConfig,
    plaintexts: &[PlaintextBlock],
    true_key: &AesKey,
) -> Result<TraceSet, SimError> {
    require_channel(config, Channel::Impedance)?;
    synthesize(config, plaintexts, true_key)
}
