//! Comma-separated output tables: single header row, floats at 9
//! significant digits, flushed per row so a killed run still leaves a
//! readable log.

use std::fs::File;
use std::path::Path;

use roam::trainer::EpisodeRecord;

use crate::error::CliError;

fn header(n_heads: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["episode", "steps", "exploration_rate", "mean_reward", "collisions", "critic_loss", "policy_loss"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for k in 0..n_heads {
        h.push(format!("attn_entropy_h{k}"));
    }
    h
}

/// 9 significant digits, locale-free, `f64::from_str`-exact for finite
/// values of this magnitude range.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.8e}")
    }
}

pub fn open_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot create {}: {e}", path.display())))
}

pub struct MetricsWriter {
    w: csv::Writer<File>,
    n_heads: usize,
    path: String,
}

impl MetricsWriter {
    pub fn create(path: &Path, n_heads: usize) -> Result<MetricsWriter, CliError> {
        let w = open_writer(path)?;
        let mut mw = MetricsWriter { w, n_heads, path: path.display().to_string() };
        mw.write_row(&header(n_heads))?;
        Ok(mw)
    }

    /// Continues an existing log in place; a missing or empty file gets a
    /// fresh header instead.
    pub fn resume(path: &Path, n_heads: usize) -> Result<MetricsWriter, CliError> {
        let has_rows = std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        if !has_rows {
            return MetricsWriter::create(path, n_heads);
        }
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot append to {}: {e}", path.display())))?;
        let w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(MetricsWriter { w, n_heads, path: path.display().to_string() })
    }

    pub fn append(&mut self, rec: &EpisodeRecord) -> Result<(), CliError> {
        debug_assert_eq!(rec.head_entropies.len(), self.n_heads);
        let mut row = vec![
            rec.episode.to_string(),
            rec.steps.to_string(),
            fmt_f64(rec.exploration_rate),
            fmt_f64(rec.mean_reward),
            rec.collisions.to_string(),
            fmt_f64(rec.critic_loss),
            fmt_f64(rec.policy_loss),
        ];
        for &e in &rec.head_entropies {
            row.push(fmt_f64(e));
        }
        self.write_row(&row)
    }

    fn write_row(&mut self, row: &[String]) -> Result<(), CliError> {
        self.w
            .write_record(row)
            .and_then(|()| self.w.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", self.path)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_f64(0.9465), "9.46500000e-1");
        assert_eq!(fmt_f64(0.0), "0.00000000e0");
        assert_eq!(fmt_f64(-12345.6789), "-1.23456789e4");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn formatted_values_parse_back() {
        for &v in &[0.9465, 1e-12, 123.456, -7.0, 0.1 + 0.2] {
            let parsed: f64 = fmt_f64(v).parse().unwrap();
            assert!((parsed - v).abs() <= v.abs() * 1e-8 + 1e-300, "{v} -> {parsed}");
        }
        let nan: f64 = fmt_f64(f64::NAN).parse().unwrap();
        assert!(nan.is_nan());
        let inf: f64 = fmt_f64(f64::INFINITY).parse().unwrap();
        assert!(inf.is_infinite());
    }
}
