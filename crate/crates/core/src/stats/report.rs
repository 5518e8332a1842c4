use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{bh_adjust, SigEntry, TaskComparison, TaskDistributions, Verdict, DEFAULT_ALPHA, EXACT_MAX_N, STRONG_ALPHA};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BhFamily {
    /// Correct within each task over its encoder-pair tests.
    #[default]
    PerTask,
    /// One family across every pair test of every task.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub alpha: f64,
    pub strong_alpha: f64,
    pub family: BhFamily,
    /// Tasks with fewer paired splits are skipped.
    pub min_valid_splits: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            strong_alpha: STRONG_ALPHA,
            family: BhFamily::PerTask,
            min_valid_splits: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub alpha: f64,
    pub strong_alpha: f64,
    pub bh_family: BhFamily,
    pub zero_differences: String,
    pub exact_max_n: usize,
    pub min_valid_splits: usize,
    pub order_tie_break: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub row: String,
    pub col: String,
    pub w: Option<f64>,
    pub n_effective: usize,
    pub p_raw: f64,
    pub p_adj: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub verdict: Verdict,
    pub competitor: String,
    pub p_adj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub metric: String,
    pub higher_is_better: bool,
    pub n_splits: usize,
    /// Encoders best-first.
    pub order: Vec<String>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
    pub rank: BTreeMap<String, u32>,
    pub pairs: Vec<PairRecord>,
    pub significance: Vec<SigEntry>,
    pub verdicts: BTreeMap<String, VerdictRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WtlCounts {
    pub win: u32,
    pub tie: u32,
    pub loss: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metadata: ReportMetadata,
    pub encoders: Vec<String>,
    pub tasks: Vec<TaskReport>,
    pub skipped: Vec<SkippedTask>,
    /// Mean of per-task ranks over the tasks an encoder appears in.
    pub overall_mean_rank: BTreeMap<String, f64>,
    pub win_tie_loss: BTreeMap<String, WtlCounts>,
}

fn task_report(cmp: &TaskComparison, cfg: &CompareConfig) -> TaskReport {
    let ranks = cmp.ranks(cfg.alpha);
    let name = |i: usize| cmp.encoders[i].clone();
    let pairs = cmp
        .pairs()
        .iter()
        .map(|p| PairRecord {
            row: name(p.a),
            col: name(p.b),
            w: p.test.map(|t| t.w),
            n_effective: p.test.map_or(0, |t| t.n_effective),
            p_raw: p.p_raw,
            p_adj: p.p_adj,
            degenerate: p.test.is_none(),
        })
        .collect();
    let verdicts = (0..cmp.encoders.len())
        .map(|f| {
            let (verdict, rival, p_adj) = cmp.verdict(f, cfg.alpha);
            (name(f), VerdictRecord { verdict, competitor: name(rival), p_adj })
        })
        .collect();
    TaskReport {
        task_id: cmp.task_id.clone(),
        metric: cmp.metric.clone(),
        higher_is_better: cmp.higher_is_better,
        n_splits: cmp.n_splits,
        order: cmp.encoders.clone(),
        mean: cmp.encoders.iter().cloned().zip(cmp.means.iter().copied()).collect(),
        std: cmp.encoders.iter().cloned().zip(cmp.stds.iter().copied()).collect(),
        rank: cmp.encoders.iter().cloned().zip(ranks).collect(),
        pairs,
        significance: cmp.matrix(cfg.alpha, cfg.strong_alpha),
        verdicts,
    }
}

/// Compare encoders on every task and assemble the report. Tasks with fewer
/// than two encoders or too few splits are listed under `skipped`.
pub fn compare(tasks: &[TaskDistributions], cfg: &CompareConfig) -> Result<ComparisonReport> {
    if !(cfg.strong_alpha > 0.0 && cfg.strong_alpha <= cfg.alpha && cfg.alpha <= 1.0) {
        return Err(Error::InvalidInput("need 0 < strong_alpha <= alpha <= 1".into()));
    }
    let mut seen = BTreeSet::new();
    if let Some(t) = tasks.iter().find(|t| !seen.insert(&t.task_id)) {
        return Err(Error::InvalidInput(format!("duplicate task {}", t.task_id)));
    }
    let mut comparisons = Vec::new();
    let mut skipped = Vec::new();
    for t in tasks {
        let n = t.encoders.first().map_or(0, |e| e.values.len());
        let reason = if t.encoders.len() < 2 {
            Some(format!("{} encoder(s) with results", t.encoders.len()))
        } else if n < cfg.min_valid_splits {
            Some(format!("{n} valid splits, need {}", cfg.min_valid_splits))
        } else {
            None
        };
        match reason {
            Some(reason) => skipped.push(SkippedTask { task_id: t.task_id.clone(), reason }),
            None => comparisons.push(TaskComparison::new(t)?),
        }
    }

    if cfg.family == BhFamily::Global {
        let raw: Vec<Vec<f64>> = comparisons.iter().map(|c| c.family_pvalues()).collect();
        let adj = bh_adjust(&raw.concat())?;
        let mut offset = 0;
        for (c, r) in comparisons.iter_mut().zip(&raw) {
            c.set_adjusted(&adj[offset..offset + r.len()]);
            offset += r.len();
        }
    }

    let reports: Vec<TaskReport> = comparisons.iter().map(|c| task_report(c, cfg)).collect();
    let encoders: BTreeSet<String> = tasks.iter().flat_map(|t| t.encoders.iter().map(|e| e.encoder_id.clone())).collect();
    let mut overall_mean_rank = BTreeMap::new();
    let mut win_tie_loss = BTreeMap::new();
    for e in &encoders {
        let ranks: Vec<u32> = reports.iter().filter_map(|r| r.rank.get(e).copied()).collect();
        if !ranks.is_empty() {
            overall_mean_rank.insert(e.clone(), ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64);
        }
        let mut c = WtlCounts::default();
        for v in reports.iter().filter_map(|r| r.verdicts.get(e)) {
            match v.verdict {
                Verdict::Win => c.win += 1,
                Verdict::Tie => c.tie += 1,
                Verdict::Loss => c.loss += 1,
            }
        }
        win_tie_loss.insert(e.clone(), c);
    }

    Ok(ComparisonReport {
        metadata: ReportMetadata {
            alpha: cfg.alpha,
            strong_alpha: cfg.strong_alpha,
            bh_family: cfg.family,
            zero_differences: "dropped before ranking; all-zero pairs are untested ties with p = 1".into(),
            exact_max_n: EXACT_MAX_N,
            min_valid_splits: cfg.min_valid_splits,
            order_tie_break: "mean metric, then encoder id ascending".into(),
        },
        encoders: encoders.into_iter().collect(),
        tasks: reports,
        skipped,
        overall_mean_rank,
        win_tie_loss,
    })
}

pub fn write_report_json<W: Write>(report: &ComparisonReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    Ok(())
}

/// `task,encoder,mean,rank`, encoders best-first within each task.
pub fn write_rank_heatmap<W: Write>(report: &ComparisonReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "encoder", "mean", "rank"])?;
    for t in &report.tasks {
        for e in &t.order {
            w.write_record([&t.task_id, e, &t.mean[e].to_string(), &t.rank[e].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `task,row,col,sign,p_adj`, diagonal excluded.
pub fn write_sig_matrix<W: Write>(report: &ComparisonReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "row", "col", "sign", "p_adj"])?;
    for t in &report.tasks {
        for e in &t.significance {
            w.write_record([&t.task_id, &e.row, &e.col, e.sign.as_str(), &e.p_adj.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `task,encoder,verdict,competitor,p_adj`.
pub fn write_win_tie_loss<W: Write>(report: &ComparisonReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "encoder", "verdict", "competitor", "p_adj"])?;
    for t in &report.tasks {
        for (e, v) in &t.verdicts {
            let verdict = match v.verdict {
                Verdict::Win => "win",
                Verdict::Tie => "tie",
                Verdict::Loss => "loss",
            };
            w.write_record([&t.task_id, e, verdict, &v.competitor, &v.p_adj.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{Bucket, EncoderDistribution, Sign};
    use super::*;

    fn shifted(task_id: &str, shifts: &[(&str, f64)], n: usize) -> TaskDistributions {
        TaskDistributions {
            task_id: task_id.into(),
            metric: "auc".into(),
            higher_is_better: true,
            encoders: shifts
                .iter()
                .map(|(id, s)| EncoderDistribution {
                    encoder_id: id.to_string(),
                    values: (0..n).map(|i| 0.7 + (i % 7) as f64 / 64.0 + s + i as f64 * s / 64.0).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn overall_rank_and_tallies() {
        let tasks = vec![
            shifted("t1", &[("a", 0.1), ("b", 0.0), ("c", 0.05)], 20),
            shifted("t2", &[("a", 0.0), ("b", 0.0), ("c", 0.05)], 20),
            shifted("short", &[("a", 0.1), ("b", 0.0)], 10),
            shifted("alone", &[("a", 0.1)], 20),
        ];
        let r = compare(&tasks, &CompareConfig::default()).unwrap();
        assert_eq!(r.tasks.len(), 2);
        assert_eq!(r.skipped.iter().map(|s| s.task_id.as_str()).collect::<Vec<_>>(), ["short", "alone"]);
        let t1 = &r.tasks[0];
        assert_eq!(t1.order, ["a", "c", "b"]);
        assert_eq!(t1.rank.values().copied().collect::<Vec<_>>(), vec![1, 3, 2]);
        let t2 = &r.tasks[1];
        assert_eq!(t2.rank["c"], 1);
        assert_eq!(t2.rank["a"], t2.rank["b"]);
        for e in &r.encoders {
            let ranks: Vec<f64> = r.tasks.iter().map(|t| t.rank[e] as f64).collect();
            assert_eq!(r.overall_mean_rank[e], ranks.iter().sum::<f64>() / ranks.len() as f64);
        }
        assert_eq!(r.win_tie_loss["a"], WtlCounts { win: 1, tie: 0, loss: 1 });
        assert_eq!(r.win_tie_loss["c"], WtlCounts { win: 1, tie: 0, loss: 1 });
        for t in &r.tasks {
            for e in &t.significance {
                assert_eq!(e.bucket, Bucket::of(e.p_adj, 0.05, 0.01));
            }
        }
    }

    #[test]
    fn global_family_is_at_least_as_strict() {
        let tasks = vec![
            shifted("t1", &[("a", 0.02), ("b", 0.0), ("c", 0.01)], 16),
            shifted("t2", &[("a", 0.0), ("b", 0.03), ("c", 0.0)], 16),
        ];
        let per = compare(&tasks, &CompareConfig::default()).unwrap();
        let glob = compare(&tasks, &CompareConfig { family: BhFamily::Global, ..Default::default() }).unwrap();
        assert_eq!(glob.metadata.bh_family, BhFamily::Global);
        for (p, g) in per.tasks.iter().zip(&glob.tasks) {
            for (x, y) in p.pairs.iter().zip(&g.pairs) {
                assert_eq!(x.p_raw, y.p_raw);
                assert!(y.p_adj >= x.p_adj || x.degenerate);
            }
        }
    }

    #[test]
    fn identical_tables_tie() {
        let tasks = vec![shifted("t", &[("x", 0.0), ("y", 0.0)], 20)];
        let r = compare(&tasks, &CompareConfig::default()).unwrap();
        assert_eq!(r.tasks[0].rank.values().copied().collect::<Vec<_>>(), vec![1, 1]);
        assert!(r.tasks[0].pairs[0].degenerate);
        assert!(r.tasks[0].significance.iter().all(|e| e.sign == Sign::None));
        assert_eq!(r.win_tie_loss["x"], WtlCounts { win: 0, tie: 1, loss: 0 });
    }

    #[test]
    fn csv_layouts() {
        let tasks = vec![shifted("t", &[("x", 0.1), ("y", 0.0)], 15)];
        let r = compare(&tasks, &CompareConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_rank_heatmap(&r, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "task,encoder,mean,rank");
        assert!(lines[1].starts_with("t,x,") && lines[1].ends_with(",1"));
        assert!(lines[2].ends_with(",2"));

        let mut buf = Vec::new();
        write_sig_matrix(&r, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "task,row,col,sign,p_adj");
        assert!(lines[1].starts_with("t,x,y,+,"));
        assert!(lines[2].starts_with("t,y,x,-,"));
        assert_eq!(lines.len(), 3);

        let mut buf = Vec::new();
        write_win_tie_loss(&r, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("t,x,win,y,") && s.contains("t,y,loss,x,"));

        let mut buf = Vec::new();
        write_report_json(&r, &mut buf).unwrap();
        let back: ComparisonReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, r);
    }
}
