//! Result CSVs, aggregation, and the summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{ExperimentConfig, ResultRow};

/// Mean and sample standard deviation over the finite, non-failed rows of
/// one `(benchmark, method)` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub benchmark: String,
    pub method: String,
    pub n: usize,
    pub n_failed: usize,
    pub mean_rmse: Option<f64>,
    pub std_rmse: Option<f64>,
    pub mean_rel_l2: Option<f64>,
    pub std_rel_l2: Option<f64>,
    pub mean_flux_err: Option<f64>,
    pub param_count: usize,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (Some(m), Some(s))
}

/// Groups rows by `(benchmark, method)` in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.benchmark.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(b, m)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.benchmark == b && r.method == m).collect();
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| !r.failed).collect();
            let rmse: Vec<f64> = ok.iter().map(|r| r.rmse).filter(|v| v.is_finite()).collect();
            let rel: Vec<f64> = ok.iter().filter_map(|r| r.rel_l2).filter(|v| v.is_finite()).collect();
            let flux: Vec<f64> = ok.iter().filter_map(|r| r.flux_err).filter(|v| v.is_finite()).collect();
            let (mean_rmse, std_rmse) = mean_std(&rmse);
            let (mean_rel_l2, std_rel_l2) = mean_std(&rel);
            Aggregate {
                n: group.len(),
                n_failed: group.len() - ok.len(),
                mean_rmse,
                std_rmse,
                mean_rel_l2,
                std_rel_l2,
                mean_flux_err: mean_std(&flux).0,
                param_count: group[0].param_count,
                benchmark: b,
                method: m,
            }
        })
        .collect()
}

/// Writes rows as RFC 4180 CSV with a header line.
pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Published comparison numbers, shipped for side-by-side display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub benchmark: String,
    pub display: String,
    pub rmn: Option<f64>,
    pub rmn_std: Option<f64>,
    pub msn: Option<f64>,
    pub mlp: Option<f64>,
    pub siren: Option<f64>,
    pub rbf: Option<f64>,
    pub rmn_params: usize,
    pub mlp_params: usize,
}

#[derive(Deserialize)]
struct BaselineFile {
    rows: Vec<Baseline>,
}

pub const BASELINE_LABEL: &str = "published, not reproduced";

pub fn baselines() -> Vec<Baseline> {
    let f: BaselineFile = serde_json::from_str(include_str!("baselines.json")).expect("embedded baseline data parses");
    f.rows
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub aggregates: Vec<Aggregate>,
    pub text: String,
}

fn sci(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2e}"))
}

fn pm(m: Option<f64>, s: Option<f64>) -> String {
    match (m, s) {
        (Some(m), Some(s)) => format!("{m:.2e} ± {s:.1e}"),
        (Some(m), None) => format!("{m:.2e}"),
        _ => "-".into(),
    }
}

/// Aggregates every result CSV directly under `dir` and renders the summary
/// table; also writes `summary.txt` and `summary.json` there.
pub fn report(dir: &Path) -> Result<Report> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_rows(f)?);
    }
    let mut aggs = aggregate(&rows);
    aggs.sort_by(|a, b| (&a.benchmark, &a.method).cmp(&(&b.benchmark, &b.method)));

    let mut t = String::new();
    let _ = writeln!(t, "RMSE, mean ± std over seeds (starred columns: {BASELINE_LABEL})");
    let _ = writeln!(
        t,
        "{:<16}{:<22}{:<12}{:<22}{:<12}{:<10}{:<10}{:<10}{:<10}{:>7}",
        "benchmark", "rmn", "rmn pub", "msn", "msn pub", "mlp*", "siren*", "rbf*", "rmn n", "params"
    );
    for b in baselines() {
        let default_method = ExperimentConfig::default_for(&b.benchmark).map(|c| c.method()).unwrap_or_default();
        let rmn = aggs.iter().find(|a| a.benchmark == b.benchmark && a.method == default_method);
        let msn = aggs.iter().find(|a| a.benchmark == b.benchmark && a.method == "msn-coord");
        let _ = writeln!(
            t,
            "{:<16}{:<22}{:<12}{:<22}{:<12}{:<10}{:<10}{:<10}{:<10}{:>7}",
            b.display,
            rmn.map_or("-".into(), |a| pm(a.mean_rmse, a.std_rmse)),
            sci(b.rmn),
            msn.map_or("-".into(), |a| pm(a.mean_rmse, a.std_rmse)),
            sci(b.msn),
            sci(b.mlp),
            sci(b.siren),
            sci(b.rbf),
            rmn.map_or("-".into(), |a| format!("{}", a.n - a.n_failed)),
            rmn.map_or(b.rmn_params, |a| a.param_count),
        );
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "all groups");
    let _ = writeln!(
        t,
        "{:<20}{:<26}{:>4}{:>8}  {:<22}{:<22}{:<10}{:>7}",
        "benchmark", "method", "n", "failed", "rmse", "rel_l2", "flux", "params"
    );
    for a in &aggs {
        let _ = writeln!(
            t,
            "{:<20}{:<26}{:>4}{:>8}  {:<22}{:<22}{:<10}{:>7}",
            a.benchmark,
            a.method,
            a.n,
            a.n_failed,
            pm(a.mean_rmse, a.std_rmse),
            pm(a.mean_rel_l2, a.std_rel_l2),
            sci(a.mean_flux_err),
            a.param_count
        );
    }
    fs::write(dir.join("summary.txt"), &t)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&serde_json::json!({ "groups": aggs, "baselines_label": BASELINE_LABEL, "baselines": baselines() }))?)?;
    Ok(Report { aggregates: aggs, text: t })
}
