//! JSON report and text summary. Field order is fixed by the structs, so
//! reports are byte-identical across runs.

use serde::Serialize;

use angio_core::picard::SlabReport;
use angio_core::{BoundCheck, IterationDiagnostics};

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub paper_anchor: String,
    pub worst_slack: f64,
    pub worst_time: f64,
    pub worst_cell: Option<Vec<usize>>,
    pub verdict: &'static str,
    pub tolerance: f64,
}

impl From<&BoundCheck> for CheckEntry {
    fn from(c: &BoundCheck) -> Self {
        Self {
            name: c.name.clone(),
            paper_anchor: c.anchor.clone(),
            worst_slack: c.worst_slack,
            worst_time: c.worst_time,
            worst_cell: c.worst_cell.clone(),
            verdict: c.verdict.as_str(),
            tolerance: c.tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlabEntry {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub bound: f64,
    /// `null` when the bound vanishes and slabs are unlimited.
    pub length_limit: Option<f64>,
    pub iterations: usize,
    pub deltas: Vec<f64>,
    pub p_deltas: Vec<f64>,
    pub c_deltas: Vec<f64>,
    pub converged: bool,
    pub monotone: bool,
}

impl From<&SlabReport> for SlabEntry {
    fn from(s: &SlabReport) -> Self {
        Self {
            t_start: s.t_start,
            t_end: s.t_end,
            steps: s.steps,
            bound: s.bound,
            length_limit: s.length_limit.is_finite().then_some(s.length_limit),
            iterations: s.iterations(),
            deltas: s.deltas.clone(),
            p_deltas: s.p_deltas.clone(),
            c_deltas: s.c_deltas.clone(),
            converged: s.converged,
            monotone: s.monotone,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub monotone: bool,
    pub total_iterations: usize,
    pub slabs: Vec<SlabEntry>,
}

impl From<&IterationDiagnostics> for Diagnostics {
    fn from(d: &IterationDiagnostics) -> Self {
        Self {
            converged: d.converged(),
            monotone: d.monotone(),
            total_iterations: d.total_iterations(),
            slabs: d.slabs.iter().map(SlabEntry::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub driver: &'static str,
    pub exit_code: u8,
    pub status: &'static str,
    pub failed_checks: Vec<String>,
    pub growth_rate: f64,
    pub warnings: Vec<String>,
    pub diagnostics: Diagnostics,
    pub checks: Vec<CheckEntry>,
}

impl Report {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scenario  {}\n", self.scenario));
        s.push_str(&format!("driver    {}\n", self.driver));
        s.push_str(&format!("status    {} (exit {})\n", self.status, self.exit_code));
        for w in &self.warnings {
            s.push_str(&format!("warning   {w}\n"));
        }
        s.push_str("\nslabs\n");
        for (i, sl) in self.diagnostics.slabs.iter().enumerate() {
            s.push_str(&format!(
                "  {i:>3}  [{:.6}, {:.6}]  k={:<3} last delta {:.3e}{}{}\n",
                sl.t_start,
                sl.t_end,
                sl.iterations,
                sl.deltas.last().copied().unwrap_or(0.0),
                if sl.converged { "" } else { "  NOT CONVERGED" },
                if sl.monotone { "" } else { "  non-monotone" },
            ));
        }
        s.push_str("\nchecks\n");
        for c in &self.checks {
            s.push_str(&format!(
                "  {:<4} {:<22} worst slack {:+.3e} (tol {:.1e}) at t={:.6}{}\n",
                c.verdict.to_uppercase(),
                c.name,
                c.worst_slack,
                c.tolerance,
                c.worst_time,
                c.worst_cell
                    .as_ref()
                    .map(|cell| format!(" cell {cell:?}"))
                    .unwrap_or_default()
            ));
        }
        s
    }
}
