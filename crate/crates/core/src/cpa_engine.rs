//! Correlation analysis: Pearson surfaces over all key guesses and sample
//! points, key ranking and rank-versus-trace-count trajectories.
//!
//! The kernel keeps the five single-pass sums (`Σx`, `Σh`, `Σxh`, `Σx²`,
//! `Σh²`) per guess and sample. Before accumulation every value is shifted
//! by the first measurement's value; Pearson's coefficient is invariant to
//! the shift and it removes the cancellation the raw-sum form suffers on
//! large baselines (tens of ohms riding a few milliohms of leakage). It also
//! makes zero-variance columns sum to exactly zero, so they are detected
//! exactly and flagged undefined.
//!
//! Work is split into blocks of sample columns processed in parallel; each
//! block's `Σxh` tile stays cache resident while the measurements stream
//! through it.

use std::cmp::Ordering;

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use thiserror::Error;

use crate::aes_target::{build_hypotheses, AesTargetError, HypothesisMatrix, BLOCK_BYTES};
use crate::trace_store::TraceSet;

/// Sample columns per parallel work unit.
const BLOCK_COLUMNS: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum CpaError {
    #[error("trace set holds {traces} measurements but hypotheses cover {hypotheses}")]
    CountMismatch { traces: usize, hypotheses: usize },
    #[error("at least 2 measurements are required, got {0}")]
    TooFewMeasurements(usize),
    #[error("subkey position {0} is outside 0..16")]
    BadPosition(usize),
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("every correlation entry is undefined (no variance anywhere)")]
    NoSignal,
    #[error(transparent)]
    Hypotheses(#[from] AesTargetError),
}

/// Pearson coefficients for every (guess, sample) pair.
///
/// Entries whose trace column or hypothesis row has zero variance are stored
/// as NaN and reported as undefined by [`CorrelationSurface::get`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    rho: Array2<f64>,
    position: Option<usize>,
    axis_start: f64,
    axis_step: f64,
}

impl CorrelationSurface {
    /// Wraps a precomputed coefficient table; NaN marks undefined entries.
    pub fn from_array(rho: Array2<f64>, position: Option<usize>, axis_start: f64, axis_step: f64) -> Self {
        Self {
            rho,
            position,
            axis_start,
            axis_step,
        }
    }

    pub fn get(&self, guess: usize, sample: usize) -> Option<f64> {
        let v = self.rho[[guess, sample]];
        (!v.is_nan()).then_some(v)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.rho
    }

    pub fn guess_count(&self) -> usize {
        self.rho.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.rho.ncols()
    }

    pub fn position(&self) -> Option<usize> {
        self.position
    }

    pub fn axis_value(&self, sample: usize) -> f64 {
        self.axis_start + self.axis_step * sample as f64
    }

    /// Multiplies every entry by `factor` (used to check scale invariance).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rho: &self.rho * factor,
            ..self.clone()
        }
    }

    /// Peak `|ρ|` and its sample index for every guess; `None` when the row is all undefined.
    pub fn peaks(&self) -> Vec<Option<Peak>> {
        self.rho
            .axis_iter(Axis(0))
            .map(|row| row_peak(row.iter().copied(), 0))
            .collect()
    }
}

/// Largest `|ρ|` of one guess and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub value: f64,
    pub sample: usize,
}

fn row_peak(row: impl Iterator<Item = f64>, first_sample: usize) -> Option<Peak> {
    let mut best: Option<Peak> = None;
    for (i, v) in row.enumerate() {
        if v.is_nan() {
            continue;
        }
        let a = v.abs();
        if best.is_none_or(|b| a > b.value) {
            best = Some(Peak {
                value: a,
                sample: first_sample + i,
            });
        }
    }
    best
}

fn merge_peak(into: &mut Option<Peak>, other: Option<Peak>) {
    if let Some(o) = other {
        match into {
            Some(p) if p.value > o.value || (p.value == o.value && p.sample <= o.sample) => {}
            _ => *into = Some(o),
        }
    }
}

/// Streaming single-pass Pearson sums for a set of guesses over a set of samples.
#[derive(Debug, Clone)]
pub struct CpaAccumulator {
    count: usize,
    x_offset: Option<Array1<f64>>,
    h_offset: Option<Array1<f64>>,
    sum_x: Array1<f64>,
    sum_x2: Array1<f64>,
    sum_h: Array1<f64>,
    sum_h2: Array1<f64>,
    sum_hx: Array2<f64>,
}

impl CpaAccumulator {
    pub fn new(guesses: usize, samples: usize) -> Self {
        Self {
            count: 0,
            x_offset: None,
            h_offset: None,
            sum_x: Array1::zeros(samples),
            sum_x2: Array1::zeros(samples),
            sum_h: Array1::zeros(guesses),
            sum_h2: Array1::zeros(guesses),
            sum_hx: Array2::zeros((guesses, samples)),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds a batch: `traces` is measurements × samples, `hypotheses` is guesses × measurements.
    pub fn update(&mut self, traces: ArrayView2<'_, f64>, hypotheses: ArrayView2<'_, f64>) {
        let n = traces.nrows();
        assert_eq!(n, hypotheses.ncols(), "batch measurement counts differ");
        assert_eq!(traces.ncols(), self.sum_x.len(), "sample count mismatch");
        assert_eq!(hypotheses.nrows(), self.sum_h.len(), "guess count mismatch");
        if n == 0 {
            return;
        }
        let x_off = self.x_offset.get_or_insert_with(|| traces.row(0).to_owned());
        let h_off = self.h_offset.get_or_insert_with(|| hypotheses.column(0).to_owned());

        let x = &traces - &x_off.view().insert_axis(Axis(0));
        let h = &hypotheses - &h_off.view().insert_axis(Axis(1));

        self.sum_x += &x.sum_axis(Axis(0));
        self.sum_x2 += &x.mapv(|v| v * v).sum_axis(Axis(0));
        self.sum_h += &h.sum_axis(Axis(1));
        self.sum_h2 += &h.mapv(|v| v * v).sum_axis(Axis(1));
        general_mat_mul(1.0, &h, &x, 1.0, &mut self.sum_hx);
        self.count += n;
    }

    /// `1/√(n·Σv² − (Σv)²)` per column (or row); NaN when the variance is zero.
    fn inverse_deviations(&self, sums: &Array1<f64>, squares: &Array1<f64>) -> Vec<f64> {
        let n = self.count as f64;
        sums.iter()
            .zip(squares)
            .map(|(&sv, &sv2)| {
                let d = n * sv2 - sv * sv;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect()
    }

    /// The full coefficient table, NaN where undefined.
    pub fn finalize(&self) -> Array2<f64> {
        let n = self.count as f64;
        let inv_x = self.inverse_deviations(&self.sum_x, &self.sum_x2);
        let inv_h = self.inverse_deviations(&self.sum_h, &self.sum_h2);
        let mut rho = Array2::zeros(self.sum_hx.dim());
        Zip::indexed(&mut rho).and(&self.sum_hx).for_each(|(k, s), r, &shx| {
            *r = (n * shx - self.sum_h[k] * self.sum_x[s]) * inv_x[s] * inv_h[k];
        });
        rho
    }

    /// Peak `|ρ|` per guess without materializing the table.
    ///
    /// Numerically identical to taking the peaks of [`finalize`](Self::finalize).
    pub fn peaks(&self, first_sample: usize) -> Vec<Option<Peak>> {
        let n = self.count as f64;
        let inv_x = self.inverse_deviations(&self.sum_x, &self.sum_x2);
        let inv_h = self.inverse_deviations(&self.sum_h, &self.sum_h2);
        if inv_x.iter().all(|v| v.is_nan()) {
            return vec![None; inv_h.len()];
        }
        // Undefined columns scaled by zero can never beat a defined maximum.
        let scale_x: Vec<f64> = inv_x.iter().map(|&v| if v.is_nan() { 0.0 } else { v }).collect();
        let sum_x = self.sum_x.as_slice().expect("contiguous");
        let mut magnitudes = vec![0.0; sum_x.len()];
        self.sum_hx
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(k, row)| {
                if inv_h[k].is_nan() {
                    return None;
                }
                let (sh, ih) = (self.sum_h[k], inv_h[k]);
                let row = row.as_slice().expect("contiguous");
                let len = row.len();
                let (mags, sx, sc) = (&mut magnitudes[..len], &sum_x[..len], &scale_x[..len]);
                for i in 0..len {
                    mags[i] = (n * row[i] - sh * sx[i]).abs() * sc[i];
                }
                let max = lane_max(&magnitudes);
                if max == 0.0 {
                    // all-zero rows: fall back to the exact scan so undefined columns are skipped
                    let values = (0..row.len()).map(|s| (n * row[s] - sh * sum_x[s]) * inv_x[s] * ih);
                    return row_peak(values, first_sample);
                }
                let sample = magnitudes.iter().position(|&m| m == max).expect("max is attained");
                let value = (n * row[sample] - sh * sum_x[sample]) * inv_x[sample] * ih;
                Some(Peak {
                    value: value.abs(),
                    sample: first_sample + sample,
                })
            })
            .collect()
    }
}

/// Maximum of non-negative, NaN-free values (0 for an empty slice).
fn lane_max(values: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for chunk in chunks {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a = if v > *a { v } else { *a };
        }
    }
    tail.iter().chain(&acc).fold(0.0, |m, &v| if v > m { v } else { m })
}

/// Builds the single-pass sums for hypotheses that depend only on a class
/// label per measurement (`hypothesis[k][m] = table[k][labels[m]]`).
///
/// Traces are summed per class first and the guess table is applied once,
/// which replaces the guesses × M × S product with guesses × classes × S.
fn partitioned_accumulator(x: ArrayView2<'_, f64>, labels: &[u8], table: &Array2<f64>) -> CpaAccumulator {
    let classes = table.ncols();
    let guesses = table.nrows();
    let samples = x.ncols();
    let x_off = x.row(0).to_owned();
    let h_off = table.column(labels[0] as usize).to_owned();

    let mut class_sums = Array2::<f64>::zeros((classes, samples));
    let mut counts = vec![0.0f64; classes];
    let mut sum_x2 = Array1::<f64>::zeros(samples);
    for (row, &label) in x.axis_iter(Axis(0)).zip(labels) {
        let centered = &row - &x_off;
        let mut acc = class_sums.row_mut(label as usize);
        acc += &centered;
        sum_x2 += &centered.mapv(|v| v * v);
        counts[label as usize] += 1.0;
    }
    let sum_x = class_sums.sum_axis(Axis(0));
    let shifted = table - &h_off.view().insert_axis(Axis(1));
    let counts = Array1::from(counts);
    let sum_h = shifted.dot(&counts);
    let sum_h2 = shifted.mapv(|v| v * v).dot(&counts);
    let mut sum_hx = Array2::zeros((guesses, samples));
    general_mat_mul(1.0, &shifted, &class_sums, 0.0, &mut sum_hx);
    CpaAccumulator {
        count: labels.len(),
        x_offset: Some(x_off),
        h_offset: Some(h_off),
        sum_x,
        sum_x2,
        sum_h,
        sum_h2,
        sum_hx,
    }
}

/// Final peak table for a class-labelled hypothesis table, using all traces.
pub fn partitioned_peaks(traces: &TraceSet, labels: &[u8], table: &Array2<f64>) -> Result<Vec<Option<Peak>>, CpaError> {
    let m = traces.trace_count();
    if labels.len() != m {
        return Err(CpaError::CountMismatch {
            traces: m,
            hypotheses: labels.len(),
        });
    }
    if m < 2 {
        return Err(CpaError::TooFewMeasurements(m));
    }
    assert!(table.ncols() >= 256, "table must cover every byte label");
    let x = traces.samples();
    let per_block: Vec<Vec<Option<Peak>>> = column_blocks(traces.sample_count())
        .into_par_iter()
        .map(|(lo, hi)| partitioned_accumulator(x.slice(s![.., lo..hi]), labels, table).peaks(lo))
        .collect();
    let mut merged = vec![None; table.nrows()];
    for block in per_block {
        for (slot, peak) in merged.iter_mut().zip(block) {
            merge_peak(slot, peak);
        }
    }
    Ok(merged)
}

/// `HW(SBOX(p ^ k))` indexed by guess `k` then plaintext byte `p`.
pub fn hamming_weight_table() -> Array2<f64> {
    Array2::from_shape_fn((256, 256), |(k, p)| {
        crate::aes_target::intermediate(p as u8, k as u8).hamming_weight() as f64
    })
}

fn check_counts(traces: &TraceSet, hypotheses: &HypothesisMatrix) -> Result<(), CpaError> {
    let m = traces.trace_count();
    if m != hypotheses.measurement_count() {
        return Err(CpaError::CountMismatch {
            traces: m,
            hypotheses: hypotheses.measurement_count(),
        });
    }
    if m < 2 {
        return Err(CpaError::TooFewMeasurements(m));
    }
    Ok(())
}

fn column_blocks(samples: usize) -> Vec<(usize, usize)> {
    (0..samples)
        .step_by(BLOCK_COLUMNS)
        .map(|start| (start, (start + BLOCK_COLUMNS).min(samples)))
        .collect()
}

/// Pearson coefficient of every hypothesis row against every sample column.
pub fn correlate(traces: &TraceSet, hypotheses: &HypothesisMatrix) -> Result<CorrelationSurface, CpaError> {
    check_counts(traces, hypotheses)?;
    let x = traces.samples();
    let h = hypotheses.values().view();
    let tiles: Vec<_> = column_blocks(traces.sample_count())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = CpaAccumulator::new(h.nrows(), hi - lo);
            acc.update(x.slice(s![.., lo..hi]), h);
            (lo, hi, acc.finalize())
        })
        .collect();
    let mut rho = Array2::zeros((h.nrows(), traces.sample_count()));
    for (lo, hi, tile) in tiles {
        rho.slice_mut(s![.., lo..hi]).assign(&tile);
    }
    Ok(CorrelationSurface {
        rho,
        position: None,
        axis_start: traces.axis_start(),
        axis_step: traces.axis_step(),
    })
}

/// Surface for one subkey byte under the Hamming-weight model.
pub fn correlate_position(traces: &TraceSet, position: usize) -> Result<CorrelationSurface, CpaError> {
    if position >= BLOCK_BYTES {
        return Err(CpaError::BadPosition(position));
    }
    let hypotheses = build_hypotheses(&traces.plaintext_column(position))?;
    let mut surface = correlate(traces, &hypotheses)?;
    surface.position = Some(position);
    Ok(surface)
}

/// Peak tables after each prefix of `checkpoints` measurements (ascending).
///
/// Returns one vector per checkpoint, indexed by guess.
pub fn peak_trajectory(
    traces: &TraceSet,
    hypotheses: &HypothesisMatrix,
    checkpoints: &[usize],
) -> Result<Vec<Vec<Option<Peak>>>, CpaError> {
    check_counts(traces, hypotheses)?;
    debug_assert!(checkpoints.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(checkpoints.last().is_none_or(|&n| n <= traces.trace_count()));
    let x = traces.samples();
    let h = hypotheses.values().view();
    let guesses = h.nrows();

    let per_block: Vec<Vec<Vec<Option<Peak>>>> = column_blocks(traces.sample_count())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = CpaAccumulator::new(guesses, hi - lo);
            let mut done = 0;
            checkpoints
                .iter()
                .map(|&n| {
                    acc.update(x.slice(s![done..n, lo..hi]), h.slice(s![.., done..n]));
                    done = n;
                    acc.peaks(lo)
                })
                .collect()
        })
        .collect();

    let mut merged = vec![vec![None; guesses]; checkpoints.len()];
    for block in per_block {
        for (table, block_table) in merged.iter_mut().zip(block) {
            for (slot, peak) in table.iter_mut().zip(block_table) {
                merge_peak(slot, peak);
            }
        }
    }
    Ok(merged)
}

/// One guess in a [`KeyRanking`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedGuess {
    pub guess: u8,
    /// Peak `|ρ|`; `-inf` when every entry of the guess was undefined.
    pub peak: f64,
    pub sample: Option<usize>,
}

/// Guesses ordered by descending peak `|ρ|`, ties broken by lower byte value.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRanking {
    entries: Vec<RankedGuess>,
}

impl KeyRanking {
    /// Builds a ranking from per-guess peaks (index = guess byte).
    pub fn from_peaks(peaks: &[Option<Peak>]) -> Result<Self, CpaError> {
        if peaks.iter().all(Option::is_none) {
            return Err(CpaError::NoSignal);
        }
        let mut entries: Vec<RankedGuess> = peaks
            .iter()
            .enumerate()
            .map(|(g, p)| RankedGuess {
                guess: g as u8,
                peak: p.map_or(f64::NEG_INFINITY, |p| p.value),
                sample: p.map(|p| p.sample),
            })
            .collect();
        entries.sort_by(|a, b| {
            b.peak
                .partial_cmp(&a.peak)
                .unwrap_or(Ordering::Equal)
                .then(a.guess.cmp(&b.guess))
        });
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[RankedGuess] {
        &self.entries
    }

    /// Rank-1 guess.
    pub fn best(&self) -> RankedGuess {
        self.entries[0]
    }

    pub fn recovered(&self) -> u8 {
        self.entries[0].guess
    }

    /// 1-based rank of `guess`.
    pub fn rank_of(&self, guess: u8) -> Option<usize> {
        self.entries.iter().position(|e| e.guess == guess).map(|i| i + 1)
    }

    pub fn peak_of(&self, guess: u8) -> Option<f64> {
        self.entries.iter().find(|e| e.guess == guess).map(|e| e.peak)
    }

    /// Largest peak among all guesses other than `guess`.
    pub fn best_other_than(&self, guess: u8) -> Option<RankedGuess> {
        self.entries.iter().find(|e| e.guess != guess).copied()
    }
}

pub fn rank_guesses(surface: &CorrelationSurface) -> Result<KeyRanking, CpaError> {
    KeyRanking::from_peaks(&surface.peaks())
}

/// Ranking for one subkey byte using all traces.
pub fn attack_position(traces: &TraceSet, position: usize) -> Result<KeyRanking, CpaError> {
    if position >= BLOCK_BYTES {
        return Err(CpaError::BadPosition(position));
    }
    let peaks = partitioned_peaks(traces, &traces.plaintext_column(position), &hamming_weight_table())?;
    KeyRanking::from_peaks(&peaks)
}

/// Divide and conquer over the 16 key bytes.
pub fn attack_block(traces: &TraceSet) -> Result<Vec<KeyRanking>, CpaError> {
    (0..BLOCK_BYTES)
        .into_par_iter()
        .map(|pos| attack_position(traces, pos))
        .collect()
}

pub fn recovered_key(rankings: &[KeyRanking]) -> Vec<u8> {
    rankings.iter().map(KeyRanking::recovered).collect()
}

/// `{stride, 2·stride, …}` up to `total`, always ending at `total`, skipping counts below 2.
pub fn checkpoints(total: usize, stride: usize) -> Result<Vec<usize>, CpaError> {
    if stride == 0 {
        return Err(CpaError::ZeroStride);
    }
    let mut points: Vec<usize> = (1..=total / stride).map(|i| i * stride).filter(|&n| n >= 2).collect();
    if total >= 2 && points.last() != Some(&total) {
        points.push(total);
    }
    Ok(points)
}

/// Rank of `true_byte` when correlating over the first n traces, for each checkpoint n.
pub fn rank_trajectory(
    traces: &TraceSet,
    position: usize,
    true_byte: u8,
    stride: usize,
) -> Result<Vec<(usize, usize)>, CpaError> {
    if position >= BLOCK_BYTES {
        return Err(CpaError::BadPosition(position));
    }
    let m = traces.trace_count();
    if m < 2 {
        return Err(CpaError::TooFewMeasurements(m));
    }
    let points = checkpoints(m, stride)?;
    let hypotheses = build_hypotheses(&traces.plaintext_column(position))?;
    let tables = peak_trajectory(traces, &hypotheses, &points)?;
    points
        .iter()
        .zip(tables)
        .map(|(&n, table)| {
            let ranking = KeyRanking::from_peaks(&table)?;
            Ok((n, ranking.rank_of(true_byte).expect("all 256 guesses ranked")))
        })
        .collect()
}
