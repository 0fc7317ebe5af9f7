//! Selection report: aligned text table plus a JSON sidecar.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::EvalRow;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    pub split: String,
    pub test_tasks: usize,
    pub test_candidates: usize,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub sections: Vec<SplitSection>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report { title: title.into(), sections: Vec::new(), notes: Vec::new() }
    }

    pub fn render_text(&self) -> String {
        let header = ["Split", "Method", "ATSR", "ASSR", "Avg. Num. of Sub.", "Accepted"];
        let mut cells: Vec<[String; 6]> = Vec::new();
        for s in &self.sections {
            for r in &s.rows {
                cells.push([
                    s.split.clone(),
                    r.method.clone(),
                    format!("{:.4}", r.metrics.atsr),
                    format!("{:.4}", r.metrics.assr),
                    format!("{:.2}", r.metrics.avg_subtasks),
                    r.accepted.map_or("-".to_string(), |a| format!("{a}/{}", r.metrics.counts.solutions)),
                ]);
            }
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: &[String]| {
            row.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out);
        let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        let head = line(&header);
        let _ = writeln!(out, "{head}");
        let _ = writeln!(out, "{}", "-".repeat(head.len()));
        let mut last_split: Option<&str> = None;
        for (row, split) in cells.iter().zip(self.sections.iter().flat_map(|s| s.rows.iter().map(move |_| s.split.as_str()))) {
            if last_split.is_some_and(|l| l != split) {
                let _ = writeln!(out);
            }
            last_split = Some(split);
            let _ = writeln!(out, "{}", line(row));
        }
        let _ = writeln!(out);
        for s in &self.sections {
            let _ = writeln!(out, "{}: {} test tasks, {} candidates", s.split, s.test_tasks, s.test_candidates);
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }

    /// Writes `<stem>.txt` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.render_text())?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
