//! Channel comparison metrics: correlation ratio (CR), minimum traces to
//! disclosure (MTD) and IQR outlier confidence, plus the per-channel report.

use rayon::prelude::*;
use thiserror::Error;

use crate::aes_target::{build_hypotheses, AesKey, AesTargetError, BLOCK_BYTES};
use crate::cpa_engine::{
    checkpoints, hamming_weight_table, partitioned_peaks, peak_trajectory, rank_guesses, CorrelationSurface, CpaError,
    KeyRanking,
};
use crate::trace_store::{Channel, TraceSet};

/// Peaks fed to the IQR rule by default.
pub const DEFAULT_TOP_N: usize = 5;
/// Trace-count step of the MTD trajectory by default.
pub const DEFAULT_STRIDE: usize = 8;
/// Tukey fence multiplier.
pub const FENCE_FACTOR: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("guess {0:#04x} has no defined correlation")]
    UndefinedGuess(u8),
    #[error("trace sets differ: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Cpa(#[from] CpaError),
    #[error(transparent)]
    Hypotheses(#[from] AesTargetError),
}

/// Peak |ρ| of the correct guess over the best wrong-guess peak.
///
/// Returns `f64::INFINITY` (with a warning) when every wrong guess peaks at zero.
pub fn correlation_ratio(surface: &CorrelationSurface, true_byte: u8) -> Result<f64, MetricsError> {
    let peaks = surface.peaks();
    if let Some(g) = peaks.iter().position(Option::is_none) {
        return Err(MetricsError::UndefinedGuess(g as u8));
    }
    let ranking = rank_guesses(surface)?;
    ratio_from_ranking(&ranking, true_byte)
}

pub fn ratio_from_ranking(ranking: &KeyRanking, true_byte: u8) -> Result<f64, MetricsError> {
    let correct = ranking
        .peak_of(true_byte)
        .filter(|p| p.is_finite())
        .ok_or(MetricsError::UndefinedGuess(true_byte))?;
    let wrong = ranking
        .best_other_than(true_byte)
        .ok_or_else(|| MetricsError::InvalidInput("ranking has a single guess".into()))?;
    if !wrong.peak.is_finite() {
        return Err(MetricsError::UndefinedGuess(wrong.guess));
    }
    if wrong.peak == 0.0 {
        log::warn!("best wrong guess has zero correlation; correlation ratio is infinite");
        return Ok(f64::INFINITY);
    }
    Ok(correct / wrong.peak)
}

/// First trace count from which the true byte stays rank 1 through the end of the trajectory.
pub fn mtd_from_trajectory(trajectory: &[(usize, usize)]) -> Option<usize> {
    let stable_from = trajectory.iter().rposition(|&(_, rank)| rank != 1).map_or(0, |i| i + 1);
    trajectory.get(stable_from).map(|&(n, _)| n)
}

pub fn mtd(traces: &TraceSet, position: usize, true_byte: u8, stride: usize) -> Result<Option<usize>, MetricsError> {
    let trajectory = crate::cpa_engine::rank_trajectory(traces, position, true_byte, stride)?;
    Ok(mtd_from_trajectory(&trajectory))
}

/// Q1 and Q3 of ascending `sorted` by linear interpolation at `p·(n−1)`.
pub fn quartiles(sorted: &[f64]) -> (f64, f64) {
    (quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.75))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tukey fences over the `top_n` highest peaks and the peaks outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct IqrOutcome {
    pub q1: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Peaks outside either fence, by descending peak.
    pub outliers: Vec<(u8, f64)>,
}

impl IqrOutcome {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }

    /// Outliers above the upper fence: the guesses that stand out as key candidates.
    pub fn candidates(&self) -> Vec<(u8, f64)> {
        self.outliers
            .iter()
            .copied()
            .filter(|&(_, p)| p > self.upper_fence)
            .collect()
    }

    /// Outliers below the lower fence (a weak tail among the top peaks).
    pub fn low_outliers(&self) -> Vec<(u8, f64)> {
        self.outliers
            .iter()
            .copied()
            .filter(|&(_, p)| p < self.lower_fence)
            .collect()
    }
}

pub fn iqr_analysis(peaks: &[(u8, f64)], top_n: usize) -> Result<IqrOutcome, MetricsError> {
    if top_n < 4 {
        return Err(MetricsError::InvalidInput(format!(
            "top_n must be at least 4, got {top_n}"
        )));
    }
    let mut defined: Vec<(u8, f64)> = peaks.iter().copied().filter(|(_, p)| p.is_finite()).collect();
    if defined.len() < top_n {
        return Err(MetricsError::InvalidInput(format!(
            "need {top_n} defined peaks, got {}",
            defined.len()
        )));
    }
    defined.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    defined.truncate(top_n);
    let mut values: Vec<f64> = defined.iter().map(|&(_, p)| p).collect();
    values.reverse();
    let (q1, q3) = quartiles(&values);
    let iqr = q3 - q1;
    let (lower_fence, upper_fence) = (q1 - FENCE_FACTOR * iqr, q3 + FENCE_FACTOR * iqr);
    let outliers = defined
        .into_iter()
        .filter(|&(_, p)| p > upper_fence || p < lower_fence)
        .collect();
    Ok(IqrOutcome {
        q1,
        q3,
        lower_fence,
        upper_fence,
        outliers,
    })
}

/// Tukey outliers (both fences) among the `top_n` highest peaks, by descending peak.
pub fn iqr_outliers(peaks: &[(u8, f64)], top_n: usize) -> Result<Vec<(u8, f64)>, MetricsError> {
    iqr_analysis(peaks, top_n).map(|o| o.outliers)
}

/// Per-subkey outcome for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SubkeyReport {
    pub position: usize,
    pub recovered: u8,
    /// Peak |ρ| of the recovered guess.
    pub max_rho: f64,
    pub true_byte: Option<u8>,
    pub max_rho_correct: Option<f64>,
    pub max_rho_best_wrong: Option<f64>,
    pub cr: Option<f64>,
    pub mtd: Option<usize>,
    /// (trace count, rank of the true byte); empty without a true key.
    pub rank_trajectory: Vec<(usize, usize)>,
    pub iqr: IqrOutcome,
    pub success: Option<bool>,
}

impl SubkeyReport {
    /// Key candidates flagged by the IQR rule.
    pub fn candidates(&self) -> Vec<(u8, f64)> {
        self.iqr.candidates()
    }

    /// `"F"` when no candidate stands out, otherwise the candidate count.
    pub fn outlier_label(&self) -> String {
        match self.candidates().len() {
            0 => "F".to_string(),
            n => n.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub stride: usize,
    pub top_n: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            top_n: DEFAULT_TOP_N,
        }
    }
}

/// All 16 subkey reports of one trace set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub channel: Channel,
    pub subkeys: Vec<SubkeyReport>,
}

impl ChannelReport {
    pub fn recovered_key(&self) -> Vec<u8> {
        self.subkeys.iter().map(|r| r.recovered).collect()
    }

    pub fn success_count(&self) -> usize {
        self.subkeys.iter().filter(|r| r.success == Some(true)).count()
    }

    /// Positions where the IQR rule flags exactly one candidate.
    pub fn single_candidate_count(&self) -> usize {
        self.subkeys.iter().filter(|r| r.candidates().len() == 1).count()
    }

    /// Positions where the IQR rule flags no candidate ('F').
    pub fn failure_count(&self) -> usize {
        self.subkeys.iter().filter(|r| r.candidates().is_empty()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub power: ChannelReport,
    pub impedance: ChannelReport,
}

fn analyze_position(
    traces: &TraceSet,
    position: usize,
    true_byte: Option<u8>,
    options: ReportOptions,
) -> Result<SubkeyReport, MetricsError> {
    let m = traces.trace_count();
    let column = traces.plaintext_column(position);
    let points = match true_byte {
        Some(_) => checkpoints(m, options.stride)?,
        None => vec![m],
    };
    let tables = if points == [m] {
        vec![partitioned_peaks(traces, &column, &hamming_weight_table())?]
    } else {
        peak_trajectory(traces, &build_hypotheses(&column)?, &points)?
    };
    let rankings = tables
        .iter()
        .map(|t| KeyRanking::from_peaks(t))
        .collect::<Result<Vec<_>, _>>()?;
    let last = rankings.last().expect("at least one checkpoint");

    let peaks: Vec<(u8, f64)> = last.entries().iter().map(|e| (e.guess, e.peak)).collect();
    let iqr = iqr_analysis(&peaks, options.top_n)?;
    let best = last.best();

    let mut report = SubkeyReport {
        position,
        recovered: best.guess,
        max_rho: best.peak,
        true_byte,
        max_rho_correct: None,
        max_rho_best_wrong: None,
        cr: None,
        mtd: None,
        rank_trajectory: Vec::new(),
        iqr,
        success: None,
    };
    if let Some(tb) = true_byte {
        report.max_rho_correct = last.peak_of(tb);
        report.max_rho_best_wrong = last.best_other_than(tb).map(|e| e.peak);
        report.cr = Some(ratio_from_ranking(last, tb)?);
        report.rank_trajectory = points
            .iter()
            .zip(&rankings)
            .map(|(&n, r)| (n, r.rank_of(tb).expect("all guesses ranked")))
            .collect();
        report.mtd = mtd_from_trajectory(&report.rank_trajectory);
        report.success = Some(best.guess == tb);
    }
    Ok(report)
}

/// Attacks all 16 positions of one trace set and scores them.
///
/// The true key is taken from `true_key`, falling back to the one stored in the set.
pub fn analyze_channel(
    traces: &TraceSet,
    true_key: Option<&AesKey>,
    options: ReportOptions,
) -> Result<ChannelReport, MetricsError> {
    if traces.trace_count() < 2 {
        return Err(CpaError::TooFewMeasurements(traces.trace_count()).into());
    }
    let key = true_key.or(traces.true_key()).copied();
    let subkeys = (0..BLOCK_BYTES)
        .into_par_iter()
        .map(|pos| analyze_position(traces, pos, key.map(|k| k[pos]), options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChannelReport {
        channel: traces.channel(),
        subkeys,
    })
}

/// The 2 × 16 grid behind the comparison tables.
pub fn build_report(
    power: &TraceSet,
    impedance: &TraceSet,
    true_key: Option<&AesKey>,
    options: ReportOptions,
) -> Result<ComparisonReport, MetricsError> {
    if power.trace_count() != impedance.trace_count() {
        return Err(MetricsError::Mismatch(format!(
            "power has {} traces, impedance has {}",
            power.trace_count(),
            impedance.trace_count()
        )));
    }
    Ok(ComparisonReport {
        power: analyze_channel(power, true_key, options)?,
        impedance: analyze_channel(impedance, true_key, options)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn surface_with(peaks: &[(usize, f64)], floor: f64) -> CorrelationSurface {
        let mut rho = Array2::from_elem((256, 3), floor);
        for &(g, p) in peaks {
            rho[[g, 1]] = p;
        }
        CorrelationSurface::from_array(rho, Some(0), 0.0, 1.0)
    }

    #[test]
    fn cr_examples() {
        let s = surface_with(&[(0x25, 0.61), (0x10, -0.30)], 0.05);
        let cr = correlation_ratio(&s, 0x25).unwrap();
        assert!((cr - 0.61 / 0.30).abs() < 1e-12);
        assert!((cr - 2.0333).abs() < 1e-4);
        assert!(correlation_ratio(&s, 0x10).unwrap() < 1.0);
        assert!((correlation_ratio(&s.scaled(0.5), 0x25).unwrap() - cr).abs() < 1e-12);
    }

    #[test]
    fn cr_zero_wrong_peaks_is_infinite() {
        let s = surface_with(&[(7, 0.4)], 0.0);
        assert_eq!(correlation_ratio(&s, 7), Ok(f64::INFINITY));
    }

    #[test]
    fn cr_rejects_undefined_guesses() {
        let mut s = surface_with(&[(7, 0.4)], 0.1).values().clone();
        s.row_mut(3).fill(f64::NAN);
        let s = CorrelationSurface::from_array(s, None, 0.0, 1.0);
        assert_eq!(correlation_ratio(&s, 7), Err(MetricsError::UndefinedGuess(3)));
    }

    #[test]
    fn mtd_stability_rule() {
        let n = [25, 50, 75, 100, 125];
        let traj = |ranks: [usize; 5]| n.iter().copied().zip(ranks).collect::<Vec<_>>();
        assert_eq!(mtd_from_trajectory(&traj([17, 4, 1, 1, 1])), Some(75));
        assert_eq!(mtd_from_trajectory(&traj([3, 1, 2, 1, 1])), Some(100));
        assert_eq!(mtd_from_trajectory(&traj([1, 1, 1, 1, 2])), None);
        assert_eq!(mtd_from_trajectory(&traj([1, 1, 1, 1, 1])), Some(25));
        assert_eq!(mtd_from_trajectory(&[]), None);
    }

    #[test]
    fn iqr_single_outlier_example() {
        let peaks = [(1u8, 0.10), (2, 0.11), (3, 0.12), (4, 0.13), (5, 0.61), (6, 0.01)];
        let (q1, q3) = quartiles(&[0.10, 0.11, 0.12, 0.13, 0.61]);
        assert!((q1 - 0.11).abs() < 1e-15 && (q3 - 0.13).abs() < 1e-15);
        assert_eq!(iqr_outliers(&peaks, 5).unwrap(), vec![(5, 0.61)]);
    }

    #[test]
    fn iqr_splits_candidates_from_low_tail() {
        // top five: 0.05 sits far below Q1 = 0.20 with IQR = 0.01
        let peaks = [(1u8, 0.05), (2, 0.20), (3, 0.205), (4, 0.21), (5, 0.70)];
        let out = iqr_analysis(&peaks, 5).unwrap();
        assert_eq!(out.outliers, vec![(5, 0.70), (1, 0.05)]);
        assert_eq!(out.candidates(), vec![(5, 0.70)]);
        assert_eq!(out.low_outliers(), vec![(1, 0.05)]);
        assert!((out.iqr() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn iqr_equal_peaks_fail() {
        let peaks: Vec<(u8, f64)> = (0..5).map(|g| (g, 0.2)).collect();
        assert!(iqr_outliers(&peaks, 5).unwrap().is_empty());
    }

    #[test]
    fn iqr_input_checks() {
        let peaks: Vec<(u8, f64)> = (0..5).map(|g| (g, g as f64)).collect();
        assert!(iqr_outliers(&peaks, 3).is_err());
        assert!(iqr_outliers(&peaks[..4], 5).is_err());
        let mut with_undefined = peaks.clone();
        with_undefined[0].1 = f64::NEG_INFINITY;
        assert!(iqr_outliers(&with_undefined, 5).is_err());
    }

    // Quantile by explicit order statistics, written independently of `quantile_sorted`.
    fn oracle_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let pos = p * (v.len() as f64 - 1.0);
        let k = pos as usize;
        if k + 1 >= v.len() {
            return v[k];
        }
        v[k] + (pos - k as f64) * (v[k + 1] - v[k])
    }

    proptest! {
        #[test]
        fn quartiles_match_order_statistics(values in proptest::collection::vec(-1.0..1.0f64, 4..=8)) {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let (q1, q3) = quartiles(&sorted);
            prop_assert_eq!(q1, oracle_quantile(&values, 0.25));
            prop_assert_eq!(q3, oracle_quantile(&values, 0.75));
        }

        #[test]
        fn outliers_are_a_subset_outside_the_fences(values in proptest::collection::vec(0.0..1.0f64, 5..40)) {
            let peaks: Vec<(u8, f64)> = values.iter().enumerate().map(|(g, &p)| (g as u8, p)).collect();
            let out = iqr_outliers(&peaks, 5).unwrap();
            let mut top: Vec<f64> = values.clone();
            top.sort_by(|a, b| b.total_cmp(a));
            top.truncate(5);
            top.reverse();
            let (q1, q3) = quartiles(&top);
            let iqr = q3 - q1;
            for (g, p) in &out {
                prop_assert!(peaks.contains(&(*g, *p)));
                prop_assert!(*p > q3 + 1.5 * iqr || *p < q1 - 1.5 * iqr);
            }
        }
    }
}
