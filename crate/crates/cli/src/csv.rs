//! Result table rows and their CSV serialization.
//!
//! Floating-point fields are written with 17 significant digits, so a
//! written table re-parses to bit-identical values; `wall_time_s` is the
//! only field expected to differ between reruns.

use std::io::Write;
use std::path::Path;

use mdis_core::control::SubsolutionVariant;
use mdis_core::experiment::{ExampleId, Method};
use mdis_core::model::Regime;

use crate::CliError;

pub const HEADER: &str = "example,regime,epsilon,delta,eps_over_delta,j,method,theta_hat,\
                          rel_err_per_sample,std_error,n_samples,n_blowups,seed,wall_time_s,\
                          subsolution_variant";

/// One result row: a single `(scaling, method)` estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub example: String,
    pub regime: String,
    pub epsilon: f64,
    pub delta: f64,
    pub eps_over_delta: f64,
    pub j: f64,
    pub method: String,
    pub theta_hat: f64,
    pub rel_err_per_sample: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub n_blowups: u64,
    pub seed: u64,
    pub wall_time_s: f64,
    pub subsolution_variant: String,
}

impl ResultRow {
    #[allow(clippy::too_many_arguments)]
    pub fn from_run(
        example: ExampleId,
        method: Method,
        epsilon: f64,
        delta: f64,
        result: &mdis_core::experiment::RunResult,
        wall_time_s: f64,
    ) -> Self {
        Self {
            example: example.to_string(),
            regime: result.regime.to_string(),
            epsilon,
            delta,
            eps_over_delta: result.eps_over_delta,
            j: result.j_value,
            method: method.to_string(),
            theta_hat: result.output.theta_hat,
            rel_err_per_sample: result.output.rel_err_per_sample,
            std_error: result.output.std_error,
            n_samples: result.output.n_samples,
            n_blowups: result.output.n_blowups,
            seed: result.output.seed,
            wall_time_s,
            subsolution_variant: variant_label(result.variant),
        }
    }

    /// Marker row for a table cell whose run failed; keeps the table shape
    /// so one bad scaling does not lose the rest.
    pub fn error_marker(
        example: ExampleId,
        method: Method,
        regime: Regime,
        epsilon: f64,
        delta: f64,
        seed: u64,
        reason: &str,
    ) -> Self {
        let clean: String = reason
            .chars()
            .map(|c| if c == ',' || c == '\n' { ';' } else { c })
            .collect();
        Self {
            example: example.to_string(),
            regime: regime.to_string(),
            epsilon,
            delta,
            eps_over_delta: epsilon / delta,
            j: f64::NAN,
            method: method.to_string(),
            theta_hat: f64::NAN,
            rel_err_per_sample: f64::NAN,
            std_error: f64::NAN,
            n_samples: 0,
            n_blowups: 0,
            seed,
            wall_time_s: 0.0,
            subsolution_variant: format!("error({clean})"),
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.example,
            self.regime,
            fmt_f64(self.epsilon),
            fmt_f64(self.delta),
            fmt_f64(self.eps_over_delta),
            fmt_f64(self.j),
            self.method,
            fmt_f64(self.theta_hat),
            fmt_f64(self.rel_err_per_sample),
            fmt_f64(self.std_error),
            self.n_samples,
            self.n_blowups,
            self.seed,
            fmt_f64(self.wall_time_s),
            self.subsolution_variant,
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self, CliError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(CliError::Validation(format!(
                "CSV row has {} fields, expected 15: `{line}`",
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64, CliError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("CSV field {i}: {e}")))
        };
        let u = |i: usize| -> Result<u64, CliError> {
            fields[i]
                .parse::<u64>()
                .map_err(|e| CliError::Validation(format!("CSV field {i}: {e}")))
        };
        Ok(Self {
            example: fields[0].to_string(),
            regime: fields[1].to_string(),
            epsilon: f(2)?,
            delta: f(3)?,
            eps_over_delta: f(4)?,
            j: f(5)?,
            method: fields[6].to_string(),
            theta_hat: f(7)?,
            rel_err_per_sample: f(8)?,
            std_error: f(9)?,
            n_samples: u(10)?,
            n_blowups: u(11)?,
            seed: u(12)?,
            wall_time_s: f(13)?,
            subsolution_variant: fields[14].to_string(),
        })
    }
}

pub fn variant_label(variant: Option<SubsolutionVariant>) -> String {
    match variant {
        Some(v) => v.to_string(),
        None => "-".to_string(),
    }
}

/// 17 significant digits: enough to reconstruct any finite f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.16e}")
    }
}

/// Appends rows to a CSV file, writing the header first if the file is new
/// or empty.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let needs_header = match std::fs::metadata(path) {
        Ok(meta) => meta.len() == 0,
        Err(_) => true,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if needs_header {
        writeln!(file, "{HEADER}")?;
    }
    for row in rows {
        writeln!(file, "{}", row.to_csv_line())?;
    }
    Ok(())
}

/// Reads a whole result table back.
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != HEADER {
                return Err(CliError::Validation(format!(
                    "unexpected CSV header in {path:?}"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(ResultRow::parse_csv_line(line)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> ResultRow {
        ResultRow {
            example: "1".into(),
            regime: "regime2".into(),
            epsilon: 0.1,
            delta: 0.1,
            eps_over_delta: 1.0,
            j: 0.0,
            method: "md".into(),
            theta_hat: 1.6843216e-6,
            rel_err_per_sample: 3.5712,
            std_error: 1.2345678901234567e-8,
            n_samples: 250_000,
            n_blowups: 0,
            seed: 42,
            wall_time_s: 12.5,
            subsolution_variant: "exact".into(),
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut row = sample_row();
        // exercise awkward values
        row.theta_hat = 2.2250738585072014e-308; // smallest normal
        row.rel_err_per_sample = f64::INFINITY;
        row.j = 0.1 + 0.2; // not exactly 0.3
        let parsed = ResultRow::parse_csv_line(&row.to_csv_line()).unwrap();
        assert_eq!(parsed.theta_hat.to_bits(), row.theta_hat.to_bits());
        assert_eq!(parsed.j.to_bits(), row.j.to_bits());
        assert!(parsed.rel_err_per_sample.is_infinite());
        assert_eq!(parsed, ResultRow::parse_csv_line(&parsed.to_csv_line()).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let rows = vec![sample_row(), {
            let mut r = sample_row();
            r.method = "nmc".into();
            r.subsolution_variant = "-".into();
            r
        }];
        append_rows(&path, &rows).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(back, rows);
        // appending adds no second header
        append_rows(&path, &rows[..1].to_vec()).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn error_marker_keeps_field_count() {
        let row = ResultRow::error_marker(
            ExampleId::Two,
            Method::Ld,
            Regime::One,
            0.5,
            0.3,
            7,
            "method `ld` is only available for example 3, sadly",
        );
        let line = row.to_csv_line();
        assert_eq!(line.split(',').count(), 15);
        let parsed = ResultRow::parse_csv_line(&line).unwrap();
        assert!(parsed.theta_hat.is_nan());
        assert!(parsed.subsolution_variant.starts_with("error("));
    }
}
