//! Task and subtask success rates.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::scripted_env::ExecutionOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub solutions: usize,
    pub successes: usize,
    pub subtasks: usize,
    pub subtask_successes: usize,
}

/// Rates are the exact count ratios rounded half-up to four decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub atsr: f64,
    pub assr: f64,
    pub avg_subtasks: f64,
    pub counts: Counts,
}

impl MetricsReport {
    pub fn from_counts(counts: Counts) -> Result<Self, HarnessError> {
        if counts.solutions == 0 || counts.subtasks == 0 {
            return Err(HarnessError::EmptyRecords);
        }
        Ok(MetricsReport {
            atsr: round4(counts.successes, counts.solutions),
            assr: round4(counts.subtask_successes, counts.subtasks),
            avg_subtasks: round4(counts.subtasks, counts.solutions),
            counts,
        })
    }
}

/// `num / den` rounded half-up to 4 decimals, computed on integers.
pub fn round4(num: usize, den: usize) -> f64 {
    let num = num as u128;
    let den = den as u128;
    let scaled = (num * 20_000 + den) / (2 * den);
    scaled as f64 / 10_000.0
}

pub fn count(outcomes: &[ExecutionOutcome]) -> Counts {
    outcomes.iter().fold(Counts::default(), |mut c, o| {
        c.solutions += 1;
        c.successes += usize::from(o.overall_success);
        c.subtasks += o.subtask_success.len();
        c.subtask_successes += o.subtask_success.iter().filter(|b| **b).count();
        c
    })
}

pub fn compute_metrics(outcomes: &[ExecutionOutcome]) -> Result<MetricsReport, HarnessError> {
    if outcomes.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    MetricsReport::from_counts(count(outcomes))
}

/// One executed solution, as stored in `outcomes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub task: String,
    #[serde(flatten)]
    pub outcome: ExecutionOutcome,
}

pub fn read_outcomes(text: &str) -> Result<Vec<OutcomeRecord>, HarnessError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(bits: &[bool], ok: bool) -> ExecutionOutcome {
        ExecutionOutcome { subtask_success: bits.to_vec(), overall_success: ok, steps_executed: bits.len() }
    }

    #[test]
    fn rounding() {
        assert_eq!(round4(83, 150), 0.5533);
        assert_eq!(round4(144, 287), 0.5017);
        assert_eq!(round4(1, 3), 0.3333);
        assert_eq!(round4(2, 3), 0.6667);
        assert_eq!(round4(1, 20_000), 0.0001);
        assert_eq!(round4(0, 7), 0.0);
    }

    #[test]
    fn metrics_from_outcomes() {
        let m = compute_metrics(&[o(&[true, true], true), o(&[true, false, false], false)]).unwrap();
        assert_eq!((m.atsr, m.assr, m.avg_subtasks), (0.5, 0.6, 2.5));
        assert_eq!(compute_metrics(&[o(&[false], false)]).unwrap().atsr, 0.0);
        assert!(matches!(compute_metrics(&[]), Err(HarnessError::EmptyRecords)));
    }

    #[test]
    fn outcome_record_line() {
        let r = OutcomeRecord { task: "t".into(), outcome: o(&[true], true) };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(line, r#"{"task":"t","subtask_success":[true],"overall_success":true,"steps_executed":1}"#);
        assert_eq!(read_outcomes(&format!("{line}\n\n{line}\n")).unwrap().len(), 2);
    }
}
