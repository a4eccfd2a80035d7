//! Per-epoch training metrics and their CSV form.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "epoch,objective,policy_loss,critic_loss,advantage_mean,steps,coverage,kept_states,wallclock_ms";

/// One row of the metrics file.
///
/// `objective`, `coverage` and `kept_states` are means over the epoch's
/// rollouts. `steps` counts environment steps taken since training started.
/// `wallclock_ms` is 0 unless wall-clock recording was switched on, so that
/// reruns produce byte-identical files.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub objective: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub advantage_mean: f64,
    pub steps: u64,
    pub coverage: f64,
    pub kept_states: f64,
    pub wallclock_ms: u64,
}

impl EpochMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.objective,
            self.policy_loss,
            self.critic_loss,
            self.advantage_mean,
            self.coverage,
            self.kept_states,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.objective,
            self.policy_loss,
            self.critic_loss,
            self.advantage_mean,
            self.steps,
            self.coverage,
            self.kept_states,
            self.wallclock_ms
        )
    }

    fn parse_row(line: &str, n: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let bad = |msg: String| Error::Parse { line: n, msg };
        let int = |i: usize| {
            fields[i]
                .parse::<u64>()
                .map_err(|e| bad(format!("column {}: {e}", i + 1)))
        };
        let real = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", i + 1)))
        };
        Ok(Self {
            epoch: int(0)? as usize,
            objective: real(1)?,
            policy_loss: real(2)?,
            critic_loss: real(3)?,
            advantage_mean: real(4)?,
            steps: int(5)?,
            coverage: real(6)?,
            kept_states: real(7)?,
            wallclock_ms: int(8)?,
        })
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[EpochMetrics]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<EpochMetrics>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing or unexpected metrics header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(EpochMetrics::parse_row(line.trim_end(), i + 2)?);
    }
    Ok(rows)
}

/// Mean objective over the first and last `window` epochs.
pub fn head_tail_objective(rows: &[EpochMetrics], window: usize) -> Option<(f64, f64)> {
    if window == 0 || rows.len() < window {
        return None;
    }
    let mean = |s: &[EpochMetrics]| s.iter().map(|m| m.objective).sum::<f64>() / s.len() as f64;
    Some((mean(&rows[..window]), mean(&rows[rows.len() - window..])))
}
