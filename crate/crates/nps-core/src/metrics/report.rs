//! Run-artifact aggregation: metric rows, segregation matrices, and the
//! analytic-vs-empirical update-probability comparison, rendered as a text
//! summary plus CSV/JSON bundles.

use super::segregation::SegregationMatrix;
use crate::error::{CoreError, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const METRICS_CSV_HEADER: &str = "task,model,variant,num_rules,K,rollout_k,seed,h_at_1,mrr,mse";
pub const UPDATE_PROB_CSV_HEADER: &str = "variant,num_rules,num_slots,analytic,empirical";

/// One evaluation result row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub task: String,
    pub model: String,
    pub variant: String,
    pub num_rules: usize,
    #[serde(rename = "K")]
    pub stages: usize,
    pub rollout_k: usize,
    pub seed: u64,
    pub h_at_1: Option<f64>,
    pub mrr: Option<f64>,
    pub mse: Option<f64>,
}

fn opt_to_csv(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_from_csv(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| CoreError::Format {
        path: "<metrics csv>".into(),
        detail: format!("bad float {s}"),
    })
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.model,
            self.variant,
            self.num_rules,
            self.stages,
            self.rollout_k,
            self.seed,
            opt_to_csv(self.h_at_1),
            opt_to_csv(self.mrr),
            opt_to_csv(self.mse),
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let bad = |detail: String| CoreError::Format { path: "<metrics csv>".into(), detail };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(format!("expected 10 fields: {line}")));
        }
        Ok(MetricsRow {
            task: f[0].trim().to_string(),
            model: f[1].trim().to_string(),
            variant: f[2].trim().to_string(),
            num_rules: f[3].trim().parse().map_err(|_| bad(format!("bad num_rules: {line}")))?,
            stages: f[4].trim().parse().map_err(|_| bad(format!("bad K: {line}")))?,
            rollout_k: f[5].trim().parse().map_err(|_| bad(format!("bad rollout_k: {line}")))?,
            seed: f[6].trim().parse().map_err(|_| bad(format!("bad seed: {line}")))?,
            h_at_1: opt_from_csv(f[7])?,
            mrr: opt_from_csv(f[8])?,
            mse: opt_from_csv(f[9])?,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != METRICS_CSV_HEADER {
                return Err(CoreError::Format {
                    path: path.display().to_string(),
                    detail: format!("unexpected metrics header {line}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(MetricsRow::parse_csv_line(line)?);
    }
    Ok(rows)
}

/// Analytic formula value vs. measured frequency for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateProbRow {
    pub variant: String,
    pub num_rules: usize,
    pub num_slots: usize,
    pub analytic: f64,
    pub empirical: f64,
}

pub fn write_update_prob_csv(path: &Path, rows: &[UpdateProbRow]) -> Result<()> {
    let mut out = String::from(UPDATE_PROB_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.variant, r.num_rules, r.num_slots, r.analytic, r.empirical);
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn read_update_prob_csv(path: &Path) -> Result<Vec<UpdateProbRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let bad = |detail: String| CoreError::Format { path: path.display().to_string(), detail };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != UPDATE_PROB_CSV_HEADER {
                return Err(bad(format!("unexpected header {line}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields: {line}")));
        }
        rows.push(UpdateProbRow {
            variant: f[0].trim().to_string(),
            num_rules: f[1].trim().parse().map_err(|_| bad(line.into()))?,
            num_slots: f[2].trim().parse().map_err(|_| bad(line.into()))?,
            analytic: f[3].trim().parse().map_err(|_| bad(line.into()))?,
            empirical: f[4].trim().parse().map_err(|_| bad(line.into()))?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation over seeds for one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct GroupSummary {
    pub task: String,
    pub model: String,
    pub variant: String,
    pub num_rules: usize,
    #[serde(rename = "K")]
    pub stages: usize,
    pub rollout_k: usize,
    pub seeds: usize,
    pub h_at_1_mean: Option<f64>,
    pub h_at_1_std: Option<f64>,
    pub mrr_mean: Option<f64>,
    pub mrr_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(rows: &[MetricsRow]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(String, String, String, usize, usize, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.task.clone(), r.model.clone(), r.variant.clone(), r.num_rules, r.stages, r.rollout_k))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((task, model, variant, num_rules, stages, rollout_k), members)| {
            let collect = |f: fn(&MetricsRow) -> Option<f64>| -> (Option<f64>, Option<f64>) {
                let vals: Vec<f64> = members.iter().filter_map(|m| f(m)).collect();
                if vals.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&vals);
                    (Some(m), Some(s))
                }
            };
            let (h_mean, h_std) = collect(|m| m.h_at_1);
            let (mrr_mean, mrr_std) = collect(|m| m.mrr);
            let (mse_mean, mse_std) = collect(|m| m.mse);
            GroupSummary {
                task,
                model,
                variant,
                num_rules,
                stages,
                rollout_k,
                seeds: members.len(),
                h_at_1_mean: h_mean,
                h_at_1_std: h_std,
                mrr_mean,
                mrr_std,
                mse_mean,
                mse_std,
            }
        })
        .collect()
}

/// Everything the report found in a run directory.
#[derive(Debug, Serialize)]
pub struct Report {
    pub rows: Vec<MetricsRow>,
    pub groups: Vec<GroupSummary>,
    /// (source file, epoch, matrix) for the last epoch in each file.
    #[serde(skip)]
    pub segregations: Vec<(PathBuf, usize, SegregationMatrix)>,
    pub update_probs: Vec<UpdateProbRow>,
}

/// Scan a run directory for metric, segregation, and update-probability
/// CSV files (recognized by header) and aggregate them. A directory with
/// no recognizable artifacts is an error and produces no output.
pub fn generate_report(dir: &Path) -> Result<Report> {
    let entries = std::fs::read_dir(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    let mut rows = Vec::new();
    let mut segregations = Vec::new();
    let mut update_probs = Vec::new();
    for path in &paths {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let header = text.lines().next().unwrap_or("").trim();
        if header == METRICS_CSV_HEADER {
            rows.extend(read_metrics_csv(path)?);
        } else if header == "op,rule,count,epoch" {
            let all = SegregationMatrix::parse_csv(&text)?;
            if let Some((epoch, m)) = all.into_iter().next_back() {
                segregations.push((path.clone(), epoch, m));
            }
        } else if header == UPDATE_PROB_CSV_HEADER {
            update_probs.extend(read_update_prob_csv(path)?);
        }
    }
    if rows.is_empty() && segregations.is_empty() && update_probs.is_empty() {
        return Err(CoreError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no metric, segregation, or update-probability CSV artifacts found"),
        });
    }
    let groups = summarize(&rows);
    Ok(Report { rows, groups, segregations, update_probs })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl Report {
    /// Human-readable summary tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if !self.groups.is_empty() {
            out.push_str("== Metrics (mean +/- sample std over seeds) ==\n");
            out.push_str("task      model   variant     N  K  k   seeds  h@1             mrr             mse\n");
            for g in &self.groups {
                let _ = writeln!(
                    out,
                    "{:<9} {:<7} {:<10} {:>2} {:>2} {:>2}  {:>5}  {:>6} +/- {:<6} {:>6} +/- {:<6} {:>6} +/- {:<6}",
                    g.task,
                    g.model,
                    g.variant,
                    g.num_rules,
                    g.stages,
                    g.rollout_k,
                    g.seeds,
                    fmt_opt(g.h_at_1_mean),
                    fmt_opt(g.h_at_1_std),
                    fmt_opt(g.mrr_mean),
                    fmt_opt(g.mrr_std),
                    fmt_opt(g.mse_mean),
                    fmt_opt(g.mse_std),
                );
            }
        }
        for (path, epoch, m) in &self.segregations {
            let _ = writeln!(out, "\n== Rule usage: {} (epoch {epoch}) ==", path.display());
            let mut header = String::from("op          ");
            for r in 0..m.num_rules {
                let _ = write!(header, " rule{r:<6}");
            }
            let _ = writeln!(out, "{header}  purity");
            for (op, name) in m.op_names.iter().enumerate() {
                let mut line = format!("{name:<12}");
                for r in 0..m.num_rules {
                    let _ = write!(line, " {:<10}", m.counts[op][r]);
                }
                let _ = writeln!(out, "{line}  {:.3}", m.purity(op));
            }
            let shares: Vec<String> = (0..m.num_rules).map(|r| format!("{:.3}", m.usage_share(r))).collect();
            let _ = writeln!(out, "usage shares: [{}]", shares.join(", "));
            let matching: Vec<String> =
                m.greedy_matching().iter().map(|(op, rule)| format!("{} -> rule{rule}", m.op_names[*op])).collect();
            let _ = writeln!(out, "greedy matching: {}", matching.join(", "));
        }
        if !self.update_probs.is_empty() {
            out.push_str("\n== Slot-update probability: analytic vs empirical ==\n");
            for u in &self.update_probs {
                let _ = writeln!(
                    out,
                    "{:<10} rules={} slots={}  analytic={:.4}  empirical={:.4}",
                    u.variant, u.num_rules, u.num_slots, u.analytic, u.empirical
                );
            }
        }
        out
    }

    /// Write summary.txt, report_metrics.csv and report_metrics.json into
    /// `out_dir`. The CSV uses the exact per-seed schema, so reporting a
    /// report's own output reproduces identical numbers.
    pub fn write_bundle(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir.display().to_string(), e))?;
        let mut written = Vec::new();
        let summary = out_dir.join("summary.txt");
        std::fs::write(&summary, self.render_text()).map_err(|e| CoreError::io(summary.display().to_string(), e))?;
        written.push(summary);
        if !self.rows.is_empty() {
            let csv = out_dir.join("report_metrics.csv");
            write_metrics_csv(&csv, &self.rows)?;
            written.push(csv);
        }
        let json = out_dir.join("report_metrics.json");
        let payload = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, payload).map_err(|e| CoreError::io(json.display().to_string(), e))?;
        written.push(json);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, mse: f64) -> MetricsRow {
        MetricsRow {
            task: "coord".into(),
            model: "nps".into(),
            variant: "sequential".into(),
            num_rules: 4,
            stages: 1,
            rollout_k: 0,
            seed,
            h_at_1: None,
            mrr: None,
            mse: Some(mse),
        }
    }

    #[test]
    fn csv_line_round_trip() {
        let r = MetricsRow {
            task: "physics".into(),
            model: "gnn".into(),
            variant: "sequential".into(),
            num_rules: 1,
            stages: 3,
            rollout_k: 10,
            seed: 2,
            h_at_1: Some(0.5),
            mrr: Some(0.625),
            mse: None,
        };
        let line = r.to_csv_line();
        let back = MetricsRow::parse_csv_line(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        // Hand numbers: mean of {0.01, 0.02, 0.03} = 0.02, sample std = 0.01.
        let rows = vec![row(1, 0.01), row(2, 0.02), row(3, 0.03)];
        let groups = summarize(&rows);
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        assert_eq!(g.seeds, 3);
        assert!((g.mse_mean.unwrap() - 0.02).abs() < 1e-15);
        assert!((g.mse_std.unwrap() - 0.01).abs() < 1e-12);
        assert!(g.h_at_1_mean.is_none());
    }

    #[test]
    fn empty_directory_is_an_error_without_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let err = generate_report(dir.path());
        assert!(err.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn report_of_reports_own_csv_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(1, 0.011), row(2, 0.019), row(3, 0.02)];
        write_metrics_csv(&dir.path().join("metrics_run.csv"), &rows).unwrap();
        let report = generate_report(dir.path()).unwrap();
        let out1 = dir.path().join("bundle1");
        report.write_bundle(&out1).unwrap();

        let report2 = generate_report(&out1).unwrap();
        assert_eq!(report2.rows, report.rows);
        let g1: Vec<String> = report.groups.iter().map(|g| format!("{g:?}")).collect();
        let g2: Vec<String> = report2.groups.iter().map(|g| format!("{g:?}")).collect();
        assert_eq!(g1, g2);
    }

    #[test]
    fn segregation_and_update_prob_files_are_picked_up() {
        let dir = tempfile::tempdir().unwrap();
        let m = SegregationMatrix::from_counts(
            vec!["up".into(), "down".into()],
            vec![vec![9, 1], vec![0, 10]],
        )
        .unwrap();
        std::fs::write(dir.path().join("segregation_a.csv"), m.to_csv(3)).unwrap();
        write_update_prob_csv(
            &dir.path().join("update_prob.csv"),
            &[UpdateProbRow { variant: "sequential".into(), num_rules: 4, num_slots: 2, analytic: 0.5, empirical: 0.493 }],
        )
        .unwrap();
        let report = generate_report(dir.path()).unwrap();
        assert_eq!(report.segregations.len(), 1);
        assert_eq!(report.segregations[0].1, 3);
        assert_eq!(report.update_probs.len(), 1);
        let text = report.render_text();
        assert!(text.contains("greedy matching"));
        assert!(text.contains("analytic=0.5000"));
    }
}
