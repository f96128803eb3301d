use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TidalError};

use super::stats::wilson_interval;

const Z95: f64 = 1.96;

/// One evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: String,
    pub protocol: String,
    pub tier: String,
    /// Swept parameter of the cell (`l=44`, `w=2.0`, ...) or `-`.
    pub param: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean final time step over all episodes.
    pub mean_len: f64,
    /// Pooled `1000 / mean chunk period`; 0 when no chunk completed.
    pub effective_hz: f64,
    /// Success rate relative to the table's reference row.
    pub retention: Option<f64>,
    pub config_hash: String,
}

impl ResultRow {
    pub fn new(
        mode: &str,
        protocol: &str,
        tier: &str,
        param: &str,
        outcomes: &[(bool, usize)],
        effective_hz: f64,
        config_hash: &str,
    ) -> Self {
        let episodes = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.0).count();
        let (ci_low, ci_high) = wilson_interval(successes, episodes, Z95);
        let mean_len = if episodes == 0 {
            0.0
        } else {
            outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / episodes as f64
        };
        Self {
            mode: mode.into(),
            protocol: protocol.into(),
            tier: tier.into(),
            param: param.into(),
            episodes,
            successes,
            success_rate: if episodes == 0 {
                0.0
            } else {
                successes as f64 / episodes as f64
            },
            ci_low,
            ci_high,
            mean_len,
            effective_hz,
            retention: None,
            config_hash: config_hash.into(),
        }
    }

    pub fn key(&self) -> (&str, &str, &str, &str) {
        (&self.mode, &self.protocol, &self.tier, &self.param)
    }

    pub fn halfwidth(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub title: String,
    pub rows: Vec<ResultRow>,
    /// Free-form lines appended to the pretty form (statistics, argmax, ...).
    pub notes: Vec<String>,
}

impl ResultsTable {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Appends a row; keys must be unique.
    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if self.rows.iter().any(|r| r.key() == row.key()) {
            return Err(TidalError::Analysis(format!(
                "duplicate row {:?} in table '{}'",
                row.key(),
                self.title
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn find(&self, mode: &str, protocol: &str, param: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.protocol == protocol && r.param == param)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| TidalError::Parse(e.to_string()))
    }

    pub fn to_pretty(&self) -> String {
        let mut s = format!("# {}\n", self.title);
        let _ = writeln!(
            s,
            "{:<22} {:<10} {:<7} {:<9} {:>5} {:>7} {:>15} {:>7} {:>7} {:>7}  {}",
            "mode",
            "protocol",
            "tier",
            "param",
            "n",
            "success",
            "95% CI",
            "len",
            "Hz",
            "retain",
            "hash"
        );
        for r in &self.rows {
            let retention = r
                .retention
                .map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
            let _ = writeln!(
                s,
                "{:<22} {:<10} {:<7} {:<9} {:>5} {:>7.3} {:>15} {:>7.1} {:>7.2} {:>7}  {}",
                r.mode,
                r.protocol,
                r.tier,
                r.param,
                r.episodes,
                r.success_rate,
                format!("[{:.3},{:.3}]", r.ci_low, r.ci_high),
                r.mean_len,
                r.effective_hz,
                retention,
                r.config_hash
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "{n}");
        }
        s
    }
}
