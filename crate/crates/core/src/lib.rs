//! Side-channel workbench core.
//!
//! Simulates power-channel and impedance-channel leakage of the AES-128
//! first-round S-box output, recovers the key with correlation analysis
//! and scores each channel with the correlation ratio, minimum traces to
//! disclosure and IQR outlier confidence.
//!
//! Module map:
//!
//! * [`aes_target`]: S-box, attacked intermediate, Hamming-weight hypotheses.
//! * [`network_params`]: reflection coefficient to impedance conversion.
//! * [`leakage_sim`]: synthetic trace generation, including LFSR background noise.
//! * [`cpa_engine`]: Pearson correlation surfaces and key ranking.
//! * [`metrics`]: correlation ratio, MTD, IQR outliers and the per-channel report.
//! * [`trace_store`]: the trace container, the SCTR binary format and CSV exports.

pub mod aes_target;
pub mod cpa_engine;
pub mod leakage_sim;
pub mod metrics;
pub mod network_params;
pub mod trace_store;

pub use aes_target::{AesKey, HypothesisMatrix, PlaintextBlock, BLOCK_BYTES};
pub use cpa_engine::{CorrelationSurface, KeyRanking};
pub use leakage_sim::LeakageConfig;
pub use metrics::{ChannelReport, ComparisonReport, SubkeyReport};
pub use trace_store::{Channel, TraceSet};
