//! CSV exports for correlation surfaces and channel reports.
//!
//! Reals are written with 17 significant digits so every f64 survives a
//! decimal round trip. Undefined correlations are written as `NaN`.
//!
//! In the report, `outlier_count` and `outliers` list the IQR key candidates
//! (peaks above the upper fence); `low_outliers` counts peaks below the lower
//! fence; `iqr` is the candidate count or `F` when there is none.
//!
//! A comparison bundle adds one table per figure: `max_corr`, `cr`,
//! `mtd_trajectory` and `iqr`.

use std::fs::File;
use std::path::Path;

use super::StoreError;
use crate::cpa_engine::CorrelationSurface;
use crate::metrics::{ChannelReport, ComparisonReport};

pub const REPORT_COLUMNS: [&str; 14] = [
    "channel",
    "position",
    "recovered",
    "true_byte",
    "max_rho",
    "max_rho_correct",
    "max_rho_best_wrong",
    "cr",
    "mtd",
    "outlier_count",
    "outliers",
    "low_outliers",
    "success",
    "iqr",
];

/// 17 significant digits in scientific notation.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn hex(b: u8) -> String {
    format!("0x{b:02X}")
}

fn csv_err(path: &Path, e: csv::Error) -> StoreError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>, StoreError> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

/// Header of axis values, then one row per guess.
pub fn export_surface_csv(surface: &CorrelationSurface, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut header = Vec::with_capacity(surface.sample_count() + 1);
    header.push("guess".to_string());
    header.extend((0..surface.sample_count()).map(|s| format_real(surface.axis_value(s))));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (g, row) in surface.values().rows().into_iter().enumerate() {
        let mut record = Vec::with_capacity(row.len() + 1);
        record.push(hex(g as u8));
        record.extend(row.iter().map(|&v| format_real(v)));
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e.into()))
}

/// One row per (channel, position).
pub fn export_report_csv(reports: &[&ChannelReport], path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(REPORT_COLUMNS).map_err(|e| csv_err(path, e))?;
    for report in reports {
        for r in &report.subkeys {
            let candidates = r.candidates();
            let outliers = candidates.iter().map(|&(g, _)| hex(g)).collect::<Vec<_>>().join(" ");
            let record = [
                report.channel.name().to_string(),
                r.position.to_string(),
                hex(r.recovered),
                r.true_byte.map(hex).unwrap_or_default(),
                format_real(r.max_rho),
                opt_real(r.max_rho_correct),
                opt_real(r.max_rho_best_wrong),
                opt_real(r.cr),
                r.mtd.map(|m| m.to_string()).unwrap_or_default(),
                candidates.len().to_string(),
                outliers,
                r.iqr.low_outliers().len().to_string(),
                r.success.map(|s| s.to_string()).unwrap_or_default(),
                r.outlier_label(),
            ];
            w.write_record(&record).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| csv_err(path, e.into()))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), StoreError> {
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e.into()))
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

/// Best and correct-key peaks per position, side by side.
pub fn export_max_corr_csv(report: &ComparisonReport, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let rows = report
        .power
        .subkeys
        .iter()
        .zip(&report.impedance.subkeys)
        .map(|(p, z)| {
            vec![
                p.position.to_string(),
                p.true_byte.map(hex).unwrap_or_default(),
                format_real(p.max_rho),
                format_real(z.max_rho),
                opt_real(p.max_rho_correct),
                opt_real(z.max_rho_correct),
            ]
        });
    write_rows(
        path.as_ref(),
        &[
            "position",
            "true_byte",
            "power_max_rho",
            "impedance_max_rho",
            "power_rho_correct",
            "impedance_rho_correct",
        ],
        rows,
    )
}

pub fn export_cr_csv(report: &ComparisonReport, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let rows = report
        .power
        .subkeys
        .iter()
        .zip(&report.impedance.subkeys)
        .map(|(p, z)| vec![p.position.to_string(), opt_real(p.cr), opt_real(z.cr)]);
    write_rows(path.as_ref(), &["position", "power_cr", "impedance_cr"], rows)
}

/// Long format: one row per (channel, position, checkpoint).
pub fn export_mtd_csv(report: &ComparisonReport, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let rows = [&report.power, &report.impedance].into_iter().flat_map(|ch| {
        ch.subkeys.iter().flat_map(move |r| {
            r.rank_trajectory.iter().map(move |&(n, rank)| {
                vec![
                    ch.channel.name().to_string(),
                    r.position.to_string(),
                    n.to_string(),
                    rank.to_string(),
                ]
            })
        })
    });
    write_rows(path.as_ref(), &["channel", "position", "traces", "rank"], rows)
}

pub fn export_iqr_csv(report: &ComparisonReport, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let rows = [&report.power, &report.impedance].into_iter().flat_map(|ch| {
        ch.subkeys.iter().map(move |r| {
            let names = r
                .candidates()
                .iter()
                .map(|&(g, _)| hex(g))
                .collect::<Vec<_>>()
                .join(" ");
            vec![
                ch.channel.name().to_string(),
                r.position.to_string(),
                format_real(r.iqr.q1),
                format_real(r.iqr.q3),
                format_real(r.iqr.lower_fence),
                format_real(r.iqr.upper_fence),
                names,
                r.iqr.low_outliers().len().to_string(),
                r.outlier_label(),
            ]
        })
    });
    write_rows(
        path.as_ref(),
        &[
            "channel",
            "position",
            "q1",
            "q3",
            "lower_fence",
            "upper_fence",
            "candidates",
            "low_outliers",
            "label",
        ],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{IqrOutcome, SubkeyReport};
    use crate::trace_store::Channel;
    use ndarray::Array2;

    #[test]
    fn reals_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = format_real(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
        }
        assert_eq!(format_real(f64::NAN), "NaN");
    }

    #[test]
    fn surface_has_header_plus_256_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.csv");
        let mut rho = Array2::from_elem((256, 3), 0.25);
        rho[[1, 2]] = f64::NAN;
        export_surface_csv(&CorrelationSurface::from_array(rho, Some(0), 1e5, 10.0), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 257);
        assert!(lines[0].starts_with("guess,1.0000000000000000e5,"));
        assert!(lines[2].starts_with("0x01,") && lines[2].ends_with(",NaN"));
    }

    #[test]
    fn report_columns_and_missing_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let sub = SubkeyReport {
            position: 3,
            recovered: 0x38,
            max_rho: 0.5,
            true_byte: None,
            max_rho_correct: None,
            max_rho_best_wrong: None,
            cr: None,
            mtd: None,
            rank_trajectory: vec![],
            iqr: IqrOutcome {
                q1: 0.1,
                q3: 0.12,
                lower_fence: 0.07,
                upper_fence: 0.15,
                outliers: vec![(0x38, 0.5)],
            },
            success: None,
        };
        let report = ChannelReport {
            channel: Channel::Impedance,
            subkeys: vec![sub],
        };
        export_report_csv(&[&report], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        for col in [
            "channel",
            "position",
            "recovered",
            "cr",
            "mtd",
            "outlier_count",
            "success",
        ] {
            assert!(header.split(',').any(|c| c == col), "missing {col}");
        }
        assert_eq!(
            lines.next().unwrap(),
            "impedance,3,0x38,,5.0000000000000000e-1,,,,,1,0x38,0,,1"
        );
    }

    fn scored(position: usize, rho: f64) -> SubkeyReport {
        SubkeyReport {
            position,
            recovered: 0x25,
            max_rho: rho,
            true_byte: Some(0x25),
            max_rho_correct: Some(rho),
            max_rho_best_wrong: Some(rho / 2.0),
            cr: Some(2.0),
            mtd: Some(16),
            rank_trajectory: vec![(8, 3), (16, 1), (24, 1)],
            iqr: IqrOutcome {
                q1: 0.1,
                q3: 0.12,
                lower_fence: 0.07,
                upper_fence: 0.15,
                outliers: vec![(0x25, rho), (0x11, 0.01)],
            },
            success: Some(true),
        }
    }

    #[test]
    fn comparison_tables() {
        let dir = tempfile::tempdir().unwrap();
        let report = ComparisonReport {
            power: ChannelReport {
                channel: Channel::Power,
                subkeys: vec![scored(0, 0.375), scored(1, 0.25)],
            },
            impedance: ChannelReport {
                channel: Channel::Impedance,
                subkeys: vec![scored(0, 0.625), scored(1, 0.5)],
            },
        };
        let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();

        export_max_corr_csv(&report, dir.path().join("max.csv")).unwrap();
        let text = read("max.csv");
        assert_eq!(text.lines().count(), 3);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0,0x25,3.7500000000000000e-1,6.2500000000000000e-1,3.7500000000000000e-1,6.2500000000000000e-1"
        );

        export_cr_csv(&report, dir.path().join("cr.csv")).unwrap();
        assert_eq!(
            read("cr.csv").lines().nth(2).unwrap(),
            "1,2.0000000000000000e0,2.0000000000000000e0"
        );

        export_mtd_csv(&report, dir.path().join("mtd.csv")).unwrap();
        let text = read("mtd.csv");
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
        assert_eq!(text.lines().nth(1).unwrap(), "power,0,8,3");

        export_iqr_csv(&report, dir.path().join("iqr.csv")).unwrap();
        let text = read("iqr.csv");
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(4).unwrap().ends_with(",0x25,1,1"));
    }
}
