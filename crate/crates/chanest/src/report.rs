//! Aggregation of per-run results into benchmark tables and plot data:
//! a transfer table (FWT/BWT per cell, mean +/- stddev over seeds), final
//! average-MSE bars, per-task MSE evolution curves, and a plain-text summary
//! of the expected orderings (baseline sandwich, replay superiority, best
//! backward transfer, curriculum advantage). Everything here is a pure
//! function of the result files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::protocol::{TaskKind, TaskOrdering};
use crate::runner::{read_result, RunResult};
use crate::strategies::Method;
use crate::{Error, Result};

/// The four protocol-ordering cells in table row order.
pub const CELLS: [(TaskKind, TaskOrdering); 4] = [
    (TaskKind::Snr, TaskOrdering::Curriculum),
    (TaskKind::Snr, TaskOrdering::Random),
    (TaskKind::Tc, TaskOrdering::Curriculum),
    (TaskKind::Tc, TaskOrdering::Random),
];

/// A CL method may exceed NO-CL by at most this fraction, in at most
/// [`SANDWICH_MAX_VIOLATIONS`] of the four cells.
pub const SANDWICH_SLACK: f64 = 0.05;
pub const SANDWICH_MAX_VIOLATIONS: usize = 1;
/// Replay methods must beat SI and A-GEM in at least this many cells.
pub const REPLAY_MIN_CELLS: usize = 3;
/// DER++ must attain the lowest BWT in at least this many cells.
pub const DERPP_BWT_MIN_CELLS: usize = 3;
/// Curriculum may lose to random for at most this many methods per protocol.
pub const CURRICULUM_MAX_VIOLATIONS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            n: 0,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std, n }
}

/// Seed-aggregated numbers for one (cell, method).
#[derive(Debug, Clone)]
pub struct MethodAgg {
    pub avg_mse: MeanStd,
    pub fwt: Option<MeanStd>,
    pub bwt: Option<MeanStd>,
    /// Final-row MSE per task, in protocol presentation order.
    pub final_row: Vec<MeanStd>,
    /// Mean MSE over the tasks learned so far, after each task.
    pub evolution: Vec<MeanStd>,
    pub n_seeds: usize,
    pub n_failed: usize,
}

/// All cells and methods, keyed by (kind, ordering, method).
#[derive(Debug, Clone, Default)]
pub struct Aggregate {
    map: HashMap<(TaskKind, TaskOrdering, Method), MethodAgg>,
}

impl Aggregate {
    pub fn get(
        &self,
        kind: TaskKind,
        ordering: TaskOrdering,
        method: Method,
    ) -> Option<&MethodAgg> {
        self.map.get(&(kind, ordering, method))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Evolution curve of one run: after task i, the mean error over tasks 0..=i.
pub fn evolution_curve(error_matrix: &[Vec<f64>]) -> Vec<f64> {
    error_matrix
        .iter()
        .enumerate()
        .map(|(i, row)| row[..=i].iter().sum::<f64>() / (i + 1) as f64)
        .collect()
}

/// Load every result file under `<dir>/results` (or `<dir>` itself when it
/// already is the results directory).
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let candidates = [dir.join("results"), dir.to_path_buf()];
    let results_dir = candidates
        .iter()
        .find(|p| p.is_dir())
        .ok_or_else(|| Error::Dataset(format!("no results directory under {}", dir.display())))?;
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(results_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for path in entries {
        match read_result(&path) {
            Ok(r) => out.push(r),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Aggregate per (cell, method) over seeds. Failed runs are excluded with a
/// warning and counted in `n_failed`.
pub fn aggregate(results: &[RunResult]) -> Aggregate {
    let mut groups: HashMap<(TaskKind, TaskOrdering, Method), Vec<&RunResult>> = HashMap::new();
    for r in results {
        groups
            .entry((r.kind, r.ordering, r.method))
            .or_default()
            .push(r);
    }
    let mut map = HashMap::new();
    for (key, runs) in groups {
        let failed = runs.iter().filter(|r| r.failed).count();
        if failed > 0 {
            eprintln!(
                "warning: {} failed run(s) excluded from {} {} {}",
                failed,
                key.0.key(),
                key.1.key(),
                key.2.key()
            );
        }
        let ok: Vec<&&RunResult> = runs.iter().filter(|r| !r.failed).collect();
        if ok.is_empty() {
            continue;
        }
        let avg = mean_std(&ok.iter().filter_map(|r| r.avg_mse).collect::<Vec<_>>());
        let fwts: Vec<f64> = ok.iter().filter_map(|r| r.fwt).collect();
        let bwts: Vec<f64> = ok.iter().filter_map(|r| r.bwt).collect();
        let t = ok
            .iter()
            .map(|r| r.error_matrix.last().map_or(0, Vec::len))
            .max()
            .unwrap_or(0);
        let mut final_row = Vec::with_capacity(t);
        for j in 0..t {
            let col: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.error_matrix.last().and_then(|row| row.get(j)).copied())
                .collect();
            final_row.push(mean_std(&col));
        }
        let evolution = if key.2 == Method::Joint {
            Vec::new()
        } else {
            let curves: Vec<Vec<f64>> = ok
                .iter()
                .map(|r| evolution_curve(&r.error_matrix))
                .collect();
            let len = curves.iter().map(Vec::len).max().unwrap_or(0);
            (0..len)
                .map(|i| {
                    let at: Vec<f64> = curves.iter().filter_map(|c| c.get(i).copied()).collect();
                    mean_std(&at)
                })
                .collect()
        };
        map.insert(
            key,
            MethodAgg {
                avg_mse: avg,
                fwt: (!fwts.is_empty()).then(|| mean_std(&fwts)),
                bwt: (!bwts.is_empty()).then(|| mean_std(&bwts)),
                final_row,
                evolution,
                n_seeds: ok.len(),
                n_failed: failed,
            },
        );
    }
    Aggregate { map }
}

/// Outcome of one ordering check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn cell_name(kind: TaskKind, ordering: TaskOrdering) -> String {
    format!("{} - {}", kind.display(), ordering.display())
}

/// Joint training lower-bounds every method; each CL method stays at or
/// below NO-CL, allowing at most one cell within the 5% slack.
pub fn check_baseline_sandwich(agg: &Aggregate) -> CheckOutcome {
    let mut passed = true;
    let mut detail = String::new();
    for (kind, ordering) in CELLS {
        let joint = agg
            .get(kind, ordering, Method::Joint)
            .map(|a| a.avg_mse.mean);
        let nocl = agg
            .get(kind, ordering, Method::NoCl)
            .map(|a| a.avg_mse.mean);
        let (Some(joint), Some(nocl)) = (joint, nocl) else {
            passed = false;
            let _ = writeln!(detail, "  {}: missing baselines", cell_name(kind, ordering));
            continue;
        };
        if joint > nocl {
            passed = false;
            let _ = writeln!(
                detail,
                "  {}: JOINT {joint:.4} above NO-CL {nocl:.4}",
                cell_name(kind, ordering)
            );
        }
        for method in Method::CL {
            let Some(m) = agg.get(kind, ordering, method) else {
                passed = false;
                let _ = writeln!(
                    detail,
                    "  {}: {} missing",
                    cell_name(kind, ordering),
                    method.display()
                );
                continue;
            };
            if joint > m.avg_mse.mean {
                passed = false;
                let _ = writeln!(
                    detail,
                    "  {}: JOINT {joint:.4} above {} {:.4}",
                    cell_name(kind, ordering),
                    method.display(),
                    m.avg_mse.mean
                );
            }
        }
    }
    for method in Method::CL {
        let mut violations = 0usize;
        for (kind, ordering) in CELLS {
            let (Some(m), Some(n)) = (
                agg.get(kind, ordering, method),
                agg.get(kind, ordering, Method::NoCl),
            ) else {
                continue;
            };
            if m.avg_mse.mean > n.avg_mse.mean {
                violations += 1;
                if m.avg_mse.mean > n.avg_mse.mean * (1.0 + SANDWICH_SLACK) {
                    passed = false;
                    let _ = writeln!(
                        detail,
                        "  {}: {} {:.4} exceeds NO-CL {:.4} beyond {}% slack",
                        cell_name(kind, ordering),
                        method.display(),
                        m.avg_mse.mean,
                        n.avg_mse.mean,
                        SANDWICH_SLACK * 100.0
                    );
                }
            }
        }
        if violations > SANDWICH_MAX_VIOLATIONS {
            passed = false;
            let _ = writeln!(
                detail,
                "  {} above NO-CL in {violations} cells (max {SANDWICH_MAX_VIOLATIONS})",
                method.display()
            );
        }
    }
    CheckOutcome {
        name: "baseline sandwich (JOINT <= CL <= NO-CL)",
        passed,
        detail,
    }
}

/// ER, DER and DER++ each beat SI and A-GEM in at least 3 of the 4 cells.
pub fn check_replay_superiority(agg: &Aggregate) -> CheckOutcome {
    let mut passed = true;
    let mut detail = String::new();
    for replay in [Method::Er, Method::Der, Method::Derpp] {
        for other in [Method::Si, Method::Agem] {
            let mut wins = 0usize;
            let mut cells = 0usize;
            for (kind, ordering) in CELLS {
                let (Some(r), Some(o)) = (
                    agg.get(kind, ordering, replay),
                    agg.get(kind, ordering, other),
                ) else {
                    continue;
                };
                cells += 1;
                if r.avg_mse.mean < o.avg_mse.mean {
                    wins += 1;
                }
            }
            if cells < CELLS.len() || wins < REPLAY_MIN_CELLS {
                passed = false;
            }
            let _ = writeln!(
                detail,
                "  {} vs {}: lower AVG_MSE in {wins}/{cells} cells",
                replay.display(),
                other.display()
            );
        }
    }
    CheckOutcome {
        name: "replay superiority (ER/DER/DER++ below SI and A-GEM in >= 3/4 cells)",
        passed,
        detail,
    }
}

/// DER++ attains the lowest mean BWT among the CL methods in >= 3 of 4 cells.
pub fn check_derpp_bwt(agg: &Aggregate) -> CheckOutcome {
    let mut wins = 0usize;
    let mut cells = 0usize;
    let mut detail = String::new();
    for (kind, ordering) in CELLS {
        let Some(derpp) = agg.get(kind, ordering, Method::Derpp).and_then(|a| a.bwt) else {
            continue;
        };
        cells += 1;
        let mut best = true;
        for method in Method::CL {
            if method == Method::Derpp {
                continue;
            }
            if let Some(b) = agg.get(kind, ordering, method).and_then(|a| a.bwt) {
                if b.mean < derpp.mean {
                    best = false;
                }
            }
        }
        if best {
            wins += 1;
        }
        let _ = writeln!(
            detail,
            "  {}: DER++ BWT {:.4}{}",
            cell_name(kind, ordering),
            derpp.mean,
            if best { " (lowest)" } else { "" }
        );
    }
    CheckOutcome {
        name: "DER++ lowest BWT in >= 3/4 cells",
        passed: cells == CELLS.len() && wins >= DERPP_BWT_MIN_CELLS,
        detail,
    }
}

/// Curriculum at or below random per method in both protocols, allowing one
/// violating method per protocol.
pub fn check_curriculum_advantage(agg: &Aggregate) -> CheckOutcome {
    let mut passed = true;
    let mut detail = String::new();
    for kind in [TaskKind::Snr, TaskKind::Tc] {
        let mut violators = Vec::new();
        for method in Method::TABLE {
            let (Some(c), Some(r)) = (
                agg.get(kind, TaskOrdering::Curriculum, method),
                agg.get(kind, TaskOrdering::Random, method),
            ) else {
                passed = false;
                continue;
            };
            if c.avg_mse.mean > r.avg_mse.mean {
                violators.push(method.display());
            }
        }
        if violators.len() > CURRICULUM_MAX_VIOLATIONS {
            passed = false;
        }
        let _ = writeln!(
            detail,
            "  {}: {} method(s) with curriculum above random{}",
            kind.display(),
            violators.len(),
            if violators.is_empty() {
                String::new()
            } else {
                format!(" ({})", violators.join(", "))
            }
        );
    }
    CheckOutcome {
        name: "curriculum advantage (<= 1 violating method per protocol)",
        passed,
        detail,
    }
}

pub fn ordering_checks(agg: &Aggregate) -> Vec<CheckOutcome> {
    vec![
        check_baseline_sandwich(agg),
        check_replay_superiority(agg),
        check_derpp_bwt(agg),
        check_curriculum_advantage(agg),
    ]
}

fn fmt_mean_std(m: Option<MeanStd>) -> String {
    match m {
        Some(m) => format!("{:.4}±{:.4}", m.mean, m.std),
        None => "-".into(),
    }
}

/// Transfer table CSV: one FWT row and one BWT row per cell, methods as
/// columns in benchmark order.
pub fn table_csv(agg: &Aggregate) -> String {
    let mut out = String::from("cell,metric");
    for m in Method::TABLE {
        let _ = write!(out, ",{}", m.display());
    }
    out.push('\n');
    for (kind, ordering) in CELLS {
        for (metric, pick) in [("FWT", true), ("BWT", false)] {
            let _ = write!(out, "{},{metric}", cell_name(kind, ordering));
            for method in Method::TABLE {
                let v = agg
                    .get(kind, ordering, method)
                    .and_then(|a| if pick { a.fwt } else { a.bwt });
                let _ = write!(out, ",{}", fmt_mean_std(v));
            }
            out.push('\n');
        }
    }
    out
}

/// Final average-MSE bars: every method including joint training.
pub fn final_mse_csv(agg: &Aggregate) -> String {
    let mut out = String::from("cell,method,mean,std,n_seeds\n");
    for (kind, ordering) in CELLS {
        for method in Method::ALL {
            if let Some(a) = agg.get(kind, ordering, method) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    cell_name(kind, ordering),
                    method.display(),
                    a.avg_mse.mean,
                    a.avg_mse.std,
                    a.n_seeds
                );
            }
        }
    }
    out
}

/// Evolution curves: mean MSE over learned tasks after each task.
pub fn evolution_csv(agg: &Aggregate) -> String {
    let mut out = String::from("cell,method,after_task,mean,std\n");
    for (kind, ordering) in CELLS {
        for method in Method::TABLE {
            if let Some(a) = agg.get(kind, ordering, method) {
                for (i, m) in a.evolution.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        cell_name(kind, ordering),
                        method.display(),
                        i + 1,
                        m.mean,
                        m.std
                    );
                }
            }
        }
    }
    out
}

/// Plain-text summary with one pass/fail line per ordering check.
pub fn summary_text(agg: &Aggregate) -> String {
    let mut out = String::new();
    for check in ordering_checks(agg) {
        let _ = writeln!(
            out,
            "[{}] {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name
        );
        out.push_str(&check.detail);
    }
    out
}

/// Paths produced by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub table: PathBuf,
    pub final_mse: PathBuf,
    pub evolution: PathBuf,
    pub summary: PathBuf,
}

/// Read every result under `results_dir`, aggregate, and write the report
/// files into `out_dir`.
pub fn write_report(results_dir: &Path, out_dir: &Path) -> Result<(Aggregate, ReportPaths)> {
    let results = load_results(results_dir)?;
    if results.is_empty() {
        return Err(Error::Dataset(format!(
            "no result files under {}",
            results_dir.display()
        )));
    }
    let agg = aggregate(&results);
    std::fs::create_dir_all(out_dir)?;
    let paths = ReportPaths {
        table: out_dir.join("table1.csv"),
        final_mse: out_dir.join("final_mse.csv"),
        evolution: out_dir.join("evolution.csv"),
        summary: out_dir.join("summary.txt"),
    };
    std::fs::write(&paths.table, table_csv(&agg))?;
    std::fs::write(&paths.final_mse, final_mse_csv(&agg))?;
    std::fs::write(&paths.evolution, evolution_csv(&agg))?;
    std::fs::write(&paths.summary, summary_text(&agg))?;
    Ok((agg, paths))
}
