//! Trace container plus its persistence: the SCTR binary format and CSV exports.

mod csv_export;
mod sctr;

pub use csv_export::{
    export_cr_csv, export_iqr_csv, export_max_corr_csv, export_mtd_csv, export_report_csv, export_surface_csv,
    format_real, REPORT_COLUMNS,
};
pub use sctr::{decode, encode, read_trace_file, write_trace_file, StoreError, HEADER_LEN, MAGIC, VERSION};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::aes_target::{AesKey, PlaintextBlock};

/// Which physical quantity a trace set records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// Supply voltage over time.
    Power,
    /// Impedance magnitude over frequency.
    Impedance,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::Power => 0,
            Channel::Impedance => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Power),
            1 => Some(Channel::Impedance),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Power => "power",
            Channel::Impedance => "impedance",
        }
    }

    pub fn axis_unit(self) -> &'static str {
        match self {
            Channel::Power => "s",
            Channel::Impedance => "Hz",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "power" => Ok(Channel::Power),
            "impedance" => Ok(Channel::Impedance),
            other => Err(format!("unknown channel '{other}' (expected power or impedance)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceSetError {
    #[error("trace set must hold at least one trace and one sample, got {traces} x {samples}")]
    Empty { traces: usize, samples: usize },
    #[error("{plaintexts} plaintexts for {traces} traces")]
    PlaintextCount { traces: usize, plaintexts: usize },
    #[error("non-finite sample at trace {trace}, sample {sample}")]
    NonFinite { trace: usize, sample: usize },
    #[error("axis start and step must be finite")]
    BadAxis,
}

/// M traces of S samples each, with the plaintext that produced every trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    channel: Channel,
    samples: Array2<f64>,
    axis_start: f64,
    axis_step: f64,
    plaintexts: Vec<PlaintextBlock>,
    true_key: Option<AesKey>,
    repetitions: u32,
    provenance: String,
}

impl TraceSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channel: Channel,
        samples: Array2<f64>,
        axis_start: f64,
        axis_step: f64,
        plaintexts: Vec<PlaintextBlock>,
        true_key: Option<AesKey>,
        repetitions: u32,
        provenance: impl Into<String>,
    ) -> Result<Self, TraceSetError> {
        let (traces, sample_count) = samples.dim();
        if traces == 0 || sample_count == 0 {
            return Err(TraceSetError::Empty {
                traces,
                samples: sample_count,
            });
        }
        if plaintexts.len() != traces {
            return Err(TraceSetError::PlaintextCount {
                traces,
                plaintexts: plaintexts.len(),
            });
        }
        if !(axis_start.is_finite() && axis_step.is_finite()) {
            return Err(TraceSetError::BadAxis);
        }
        if let Some(((trace, sample), _)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(TraceSetError::NonFinite { trace, sample });
        }
        Ok(Self {
            channel,
            samples,
            axis_start,
            axis_step,
            plaintexts,
            true_key,
            repetitions,
            provenance: provenance.into(),
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn trace_count(&self) -> usize {
        self.samples.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn axis_start(&self) -> f64 {
        self.axis_start
    }

    pub fn axis_step(&self) -> f64 {
        self.axis_step
    }

    pub fn axis_value(&self, sample: usize) -> f64 {
        self.axis_start + self.axis_step * sample as f64
    }

    pub fn plaintexts(&self) -> &[PlaintextBlock] {
        &self.plaintexts
    }

    /// Plaintext byte `position` of every trace, in trace order.
    pub fn plaintext_column(&self, position: usize) -> Vec<u8> {
        self.plaintexts.iter().map(|p| p[position]).collect()
    }

    pub fn true_key(&self) -> Option<&AesKey> {
        self.true_key.as_ref()
    }

    pub fn repetitions(&self) -> u32 {
        self.repetitions
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn with_true_key(mut self, key: Option<AesKey>) -> Self {
        self.true_key = key;
        self
    }

    /// A new set holding the given traces, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, TraceSetError> {
        let samples = self.samples.select(Axis(0), indices);
        let plaintexts = indices.iter().map(|&i| self.plaintexts[i]).collect();
        Self::new(
            self.channel,
            samples,
            self.axis_start,
            self.axis_step,
            plaintexts,
            self.true_key,
            self.repetitions,
            self.provenance.clone(),
        )
    }

    /// Per-sample variance across traces (population form).
    pub fn sample_variance(&self) -> Vec<f64> {
        let n = self.trace_count() as f64;
        self.samples
            .axis_iter(Axis(1))
            .map(|col| {
                let mean = col.sum() / n;
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
            })
            .collect()
    }
}
