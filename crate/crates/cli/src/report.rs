//! Rate tables over sweep records.

use std::fmt::Write;

use sewer_ccmpc::scenarios::{ControllerKind, Outcome, ScenarioError, SweepRecord};
use sewer_ccmpc::simulator::fmt_num;

#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub duration_s: f64,
    pub intensity_ums: f64,
    pub benchmark_feasible: bool,
    /// Infeasible and total imperfect-MPC runs.
    pub imperfect: Option<(usize, usize)>,
    /// Fixed-γ chance-constrained controllers, highest γ first, with
    /// whether every realization was feasible.
    pub cc: Vec<(f64, bool)>,
}

impl CellRow {
    pub fn imperfect_rate(&self) -> Option<f64> {
        self.imperfect.map(|(bad, n)| bad as f64 / n as f64)
    }

    /// Largest γ whose controller was feasible in every realization.
    pub fn covered_gamma(&self) -> Option<f64> {
        self.cc.iter().find(|(_, ok)| *ok).map(|(g, _)| *g)
    }

    /// E.g. `0.8-covered / 40% infeasible`.
    pub fn label(&self) -> String {
        let cover = match self.covered_gamma() {
            Some(g) => format!("{g:.2}-covered"),
            None if self.cc.is_empty() => String::new(),
            None => "not covered".to_string(),
        };
        let rate = self.imperfect_rate().map(|r| format!("{:.0}% infeasible", 100.0 * r));
        match (cover.is_empty(), rate) {
            (false, Some(r)) => format!("{cover} / {r}"),
            (true, Some(r)) => r,
            (_, None) => cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsePositives {
    pub controller: String,
    pub runs: usize,
    pub false_positive_runs: usize,
    pub false_positive_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub cells: Vec<CellRow>,
    pub false_positives: Vec<FalsePositives>,
}

pub fn build(records: &[SweepRecord]) -> Result<Report, ScenarioError> {
    let mut report = Report::default();
    let mut fp_cells: Vec<(String, f64, f64)> = Vec::new();
    for r in records {
        let kind = r.kind()?;
        let outcome = r.outcome()?;
        let idx = match report
            .cells
            .iter()
            .position(|c| c.duration_s == r.duration_s && c.intensity_ums == r.intensity_ums)
        {
            Some(i) => i,
            None => {
                report.cells.push(CellRow {
                    duration_s: r.duration_s,
                    intensity_ums: r.intensity_ums,
                    benchmark_feasible: r.benchmark_feasible,
                    imperfect: None,
                    cc: Vec::new(),
                });
                report.cells.len() - 1
            }
        };
        let cell = &mut report.cells[idx];
        match &kind {
            ControllerKind::ImperfectMpc => {
                let (bad, n) = cell.imperfect.get_or_insert((0, 0));
                *n += 1;
                if !outcome.is_feasible() {
                    *bad += 1;
                }
            }
            ControllerKind::CcMpc(schedule) if schedule.levels().len() == 1 => {
                let g = schedule.levels()[0];
                match cell.cc.iter_mut().find(|(x, _)| *x == g) {
                    Some(entry) => entry.1 &= outcome.is_feasible(),
                    None => {
                        cell.cc.push((g, outcome.is_feasible()));
                        cell.cc.sort_by(|a, b| b.0.total_cmp(&a.0));
                    }
                }
            }
            _ => {}
        }

        let name = kind.display_name();
        let i = match report.false_positives.iter().position(|f| f.controller == name) {
            Some(i) => i,
            None => {
                report.false_positives.push(FalsePositives {
                    controller: name.clone(),
                    runs: 0,
                    false_positive_runs: 0,
                    false_positive_cells: 0,
                });
                report.false_positives.len() - 1
            }
        };
        let fp = &mut report.false_positives[i];
        fp.runs += 1;
        if outcome == Outcome::FalsePositiveOverflow {
            fp.false_positive_runs += 1;
            let key = (name, r.duration_s, r.intensity_ums);
            if !fp_cells.contains(&key) {
                fp.false_positive_cells += 1;
                fp_cells.push(key);
            }
        }
    }
    Ok(report)
}

pub fn cells_csv(report: &Report) -> String {
    let mut s = String::from(
        "duration_s,intensity_ums,benchmark_feasible,imperfect_infeasible,imperfect_runs,imperfect_infeasible_rate,cc_covered_gamma,summary\n",
    );
    for c in &report.cells {
        let (bad, n) = c.imperfect.map_or((String::new(), String::new()), |(b, n)| (b.to_string(), n.to_string()));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_num(c.duration_s),
            fmt_num(c.intensity_ums),
            c.benchmark_feasible,
            bad,
            n,
            c.imperfect_rate().map(fmt_num).unwrap_or_default(),
            c.covered_gamma().map(fmt_num).unwrap_or_default(),
            c.label()
        );
    }
    s
}

pub fn false_positive_csv(report: &Report) -> String {
    let mut s = String::from("controller,runs,false_positive_runs,false_positive_cells\n");
    for f in &report.false_positives {
        let _ = writeln!(s, "{},{},{},{}", f.controller, f.runs, f.false_positive_runs, f.false_positive_cells);
    }
    s
}

pub fn render_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>8} {:>9} {:>9}  summary", "dur_h", "int_um_s", "benchmark");
    for c in &report.cells {
        let _ = writeln!(
            s,
            "{:>8} {:>9} {:>9}  {}",
            fmt_num(c.duration_s / 3600.0),
            fmt_num(c.intensity_ums),
            if c.benchmark_feasible { "feasible" } else { "infeasible" },
            c.label()
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<18} {:>6} {:>8} {:>8}", "controller", "runs", "fp_runs", "fp_cells");
    for f in &report.false_positives {
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>8} {:>8}",
            f.controller, f.runs, f.false_positive_runs, f.false_positive_cells
        );
    }
    s
}
