use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Adapt,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "PRETRAIN",
            Phase::Adapt => "ADAPT",
        }
    }
}

/// One row of the metrics CSV. `None` fields are written as empty cells.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub source_acc: f64,
    pub target_acc: f64,
    pub target_mean_shannon_entropy: f64,
    pub target_mean_min_entropy: f64,
    pub pseudo_label_count: Option<usize>,
    pub pseudo_label_accuracy: Option<f64>,
    pub gvr_variance: Option<f64>,
    pub source_ce: Option<f64>,
    pub target_term: Option<f64>,
}

pub const CSV_HEADER: &str = "phase,epoch,source_acc,target_acc,target_mean_shannon_entropy,\
target_mean_min_entropy,pseudo_label_count,pseudo_label_accuracy,gvr_variance,source_ce,target_term";

/// `%g`-style formatting with 6 significant digits.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt_f(x: Option<f64>) -> String {
    x.map(format_g6).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.phase.as_str(),
            self.epoch,
            format_g6(self.source_acc),
            format_g6(self.target_acc),
            format_g6(self.target_mean_shannon_entropy),
            format_g6(self.target_mean_min_entropy),
            self.pseudo_label_count.map(|c| c.to_string()).unwrap_or_default(),
            opt_f(self.pseudo_label_accuracy),
            opt_f(self.gvr_variance),
            opt_f(self.source_ce),
            opt_f(self.target_term),
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{}", r.csv_row()).expect("writing to a String");
    }
    out
}

pub fn write_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> MetricsRecord {
        MetricsRecord {
            phase: Phase::Adapt,
            epoch: 3,
            source_acc: 0.995,
            target_acc: 0.8125,
            target_mean_shannon_entropy: 0.123456789,
            target_mean_min_entropy: 0.05,
            pseudo_label_count: Some(200),
            pseudo_label_accuracy: Some(0.97),
            gvr_variance: None,
            source_ce: Some(0.0123),
            target_term: Some(1.5e-7),
        }
    }

    #[test]
    fn g6_formatting() {
        assert_eq!(format_g6(0.0), "0");
        assert_eq!(format_g6(1.0), "1");
        assert_eq!(format_g6(0.123456789), "0.123457");
        assert_eq!(format_g6(123456.7), "123457");
        assert_eq!(format_g6(1234567.0), "1.23457e+06");
        assert_eq!(format_g6(1.5e-7), "1.5e-07");
        assert_eq!(format_g6(0.0001), "0.0001");
        assert_eq!(format_g6(-2.5), "-2.5");
        assert_eq!(format_g6(999999.5), "1e+06");
    }

    #[test]
    fn empty_list_is_header_only() {
        assert_eq!(metrics_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn one_record_two_lines() {
        let csv = metrics_csv(&[record()]);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "ADAPT,3,0.995,0.8125,0.123457,0.05,200,0.97,,0.0123,1.5e-07"
        );
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 11);
    }

    #[test]
    fn same_records_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_metrics(&[record(), record()], &a).unwrap();
        write_metrics(&[record(), record()], &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_metrics(&[], dir.path().join("missing").join("m.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
