//! Seed summaries, the ablation table and the per-budget report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use shedd::eval::{aggregate_runs, MetricsReport};
use shedd::losses::LossToggles;
use shedd::trainer::{AblationRow, ExperimentConfig};

use crate::error::{CliError, CliResult};
use crate::run::read_report;
use crate::setup::{read_json, write_atomic, write_json, Provenance, CONFIG_FILE, PROVENANCE_FILE};

/// Mean and, with at least two values, the sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
    pub runs: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    match aggregate_runs(values) {
        Ok(a) => Summary {
            mean: a.mean,
            std: Some(a.std),
            runs: a.runs,
        },
        Err(_) => Summary {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            std: None,
            runs: values.len(),
        },
    }
}

impl Summary {
    /// F1 in percent, like `80.06 ± 1.20`.
    pub fn percent(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * s),
            None => format!("{:.2} ± n/a", 100.0 * self.mean),
        }
    }

    fn csv(&self) -> String {
        let std = self.std.map(|s| s.to_string()).unwrap_or_default();
        format!("{},{std},{}", self.mean, self.runs)
    }
}

/// `summary.csv` and `aggregate.json` for the seeds of one configuration.
pub fn write_seed_summary(dir: &Path, reports: &[(u64, MetricsReport)]) -> CliResult<Summary> {
    let mut csv = String::from("seed,weighted_f1,accuracy\n");
    for (seed, r) in reports {
        writeln!(csv, "{seed},{},{}", r.weighted_f1, r.accuracy).unwrap();
    }
    let f1: Vec<f64> = reports.iter().map(|r| r.1.weighted_f1).collect();
    let acc: Vec<f64> = reports.iter().map(|r| r.1.accuracy).collect();
    let (f1, acc) = (summarize(&f1), summarize(&acc));
    writeln!(csv, "mean,{},{}", f1.mean, acc.mean).unwrap();
    if let (Some(a), Some(b)) = (f1.std, acc.std) {
        writeln!(csv, "std,{a},{b}").unwrap();
    }
    write_atomic(&dir.join("summary.csv"), csv.as_bytes())?;
    write_json(
        &dir.join("aggregate.json"),
        &serde_json::json!({ "weighted_f1": f1, "accuracy": acc }),
    )?;
    Ok(f1)
}

fn toggle_columns(t: LossToggles) -> [bool; 6] {
    [t.cl_st, t.orth_st, t.dom_st, t.orth_uu, t.dom_uu, t.pl_u]
}

const TOGGLE_HEADERS: [&str; 6] = ["L_cl^{S,T}", "L_⊥^{S,T}", "L_dom^{S,T}", "L_⊥^{U,Û}", "L_dom^{U,Û}", "L_pl^{Û}"];

/// Table with one row per ablation: checkmarks for the enabled terms and the
/// weighted F1 over seeds. Returns the markdown.
pub fn write_ablation_table(dir: &Path, rows: &[(AblationRow, Summary)]) -> CliResult<String> {
    let mut md = format!("| ablation | {} | weighted F1 |\n", TOGGLE_HEADERS.join(" | "));
    md.push_str(&"|---".repeat(8));
    md.push_str("|\n");
    let mut csv = String::from("row,cl_ST,orth_ST,dom_ST,orth_UU,dom_UU,pl_U,f1_mean,f1_std,runs\n");
    for (row, s) in rows {
        let cols = toggle_columns(row.toggles());
        let marks: Vec<&str> = cols.iter().map(|&on| if on { "✓" } else { "" }).collect();
        writeln!(md, "| {row} | {} | {} |", marks.join(" | "), s.percent()).unwrap();
        let flags: Vec<&str> = cols.iter().map(|&on| if on { "1" } else { "0" }).collect();
        writeln!(csv, "{row},{},{}", flags.join(","), s.csv()).unwrap();
    }
    write_atomic(&dir.join("ablation.md"), md.as_bytes())?;
    write_atomic(&dir.join("ablation.csv"), csv.as_bytes())?;
    Ok(md)
}

/// A completed seed run found by [`collect_runs`].
#[derive(Debug, Clone)]
pub struct FoundRun {
    pub method: String,
    pub budget: usize,
    pub budgets: Vec<usize>,
    pub report: MetricsReport,
}

fn method_name(p: &Provenance) -> String {
    if let Some(row) = &p.ablation {
        return row.clone();
    }
    match AblationRow::ALL.into_iter().find(|r| r.toggles() == p.toggles) {
        Some(row) => row.name().to_string(),
        None => {
            let bits: String = toggle_columns(p.toggles).iter().map(|&on| if on { '1' } else { '0' }).collect();
            format!("custom-{bits}")
        }
    }
}

fn is_run_dir(dir: &Path) -> bool {
    ["metrics.json", "log.csv", PROVENANCE_FILE, CONFIG_FILE]
        .iter()
        .any(|f| dir.join(f).exists())
}

fn load_run(dir: &Path) -> CliResult<FoundRun> {
    for needed in ["metrics.json", PROVENANCE_FILE, CONFIG_FILE] {
        if !dir.join(needed).exists() {
            return Err(CliError::data(format!(
                "{} is an incomplete run directory: {needed} is missing",
                dir.display()
            )));
        }
    }
    let provenance: Provenance = read_json(&dir.join(PROVENANCE_FILE))?;
    let config: ExperimentConfig = read_json(&dir.join(CONFIG_FILE))?;
    Ok(FoundRun {
        method: method_name(&provenance),
        budget: config.train.labels_per_class,
        budgets: config.budgets,
        report: read_report(dir)?,
    })
}

/// Completed runs at or below each of `roots`. Hidden directories (partial
/// runs) are skipped while searching but rejected when named directly.
pub fn collect_runs(roots: &[PathBuf]) -> CliResult<Vec<FoundRun>> {
    let mut found = Vec::new();
    for root in roots {
        if !root.is_dir() {
            return Err(CliError::data(format!("{} is not a directory", root.display())));
        }
        let before = found.len();
        let mut stack = vec![root.clone()];
        while let Some(dir) = stack.pop() {
            if is_run_dir(&dir) {
                found.push(load_run(&dir)?);
                continue;
            }
            let mut children: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| CliError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
                .collect();
            children.sort();
            children.reverse();
            stack.extend(children);
        }
        if found.len() == before {
            return Err(CliError::data(format!("{} contains no completed runs", root.display())));
        }
    }
    Ok(found)
}

/// Methods by label budget, mean ± std of weighted F1 over the runs in each
/// cell. Budget columns follow the first run's configured budget list, with
/// any other budgets appended in ascending order.
pub fn write_report(out: &Path, runs: &[FoundRun]) -> CliResult<String> {
    let mut budgets: Vec<usize> = runs[0]
        .budgets
        .iter()
        .copied()
        .filter(|b| runs.iter().any(|r| r.budget == *b))
        .collect();
    let mut extra: Vec<usize> = runs.iter().map(|r| r.budget).filter(|b| !budgets.contains(b)).collect();
    extra.sort_unstable();
    extra.dedup();
    budgets.extend(extra);

    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in runs {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        cells.entry((r.method.clone(), r.budget)).or_default().push(r.report.weighted_f1);
    }

    let mut md = String::from("| method |");
    for b in &budgets {
        write!(md, " {b} labels/class |").unwrap();
    }
    md.push('\n');
    md.push_str(&"|---".repeat(budgets.len() + 1));
    md.push_str("|\n");
    let mut csv = String::from("method,labels_per_class,f1_mean,f1_std,runs\n");
    for m in &methods {
        write!(md, "| {m} |").unwrap();
        for &b in &budgets {
            match cells.get(&(m.clone(), b)) {
                Some(values) => {
                    let s = summarize(values);
                    write!(md, " {} |", s.percent()).unwrap();
                    writeln!(csv, "{m},{b},{}", s.csv()).unwrap();
                }
                None => md.push_str(" |"),
            }
        }
        md.push('\n');
    }
    write_atomic(&out.join("report.md"), md.as_bytes())?;
    write_atomic(&out.join("report.csv"), csv.as_bytes())?;
    Ok(md)
}
