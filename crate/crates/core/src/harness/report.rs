use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{BinRow, EvalReport};

pub struct MethodResult {
    pub report: EvalReport,
    pub hardness: Vec<BinRow>,
    pub drop: Vec<BinRow>,
}

const EVAL_HEADER: &str = "method,seed,perf_r,perf_f,perf_te,tow,mia_tpr,forget_loss,validation_loss";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per method; floats in shortest round-trip form.
pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.seed,
            r.perf_r,
            r.perf_f,
            r.perf_te,
            opt(r.tow),
            opt(r.mia_tpr),
            r.forget_loss,
            r.validation_loss
        ));
    }
    out
}

pub fn parse_eval_csv(text: &str, path: &Path) -> Result<Vec<EvalReport>> {
    let bad = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    if lines.next() != Some(EVAL_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(format!("expected 9 fields in {line:?}")));
            }
            Ok(EvalReport {
                method: f[0].to_string(),
                seed: f[1].parse().map_err(|e| bad(format!("seed {:?}: {e}", f[1])))?,
                perf_r: num(f[2])?,
                perf_f: num(f[3])?,
                perf_te: num(f[4])?,
                tow: opt_num(f[5])?,
                mia_tpr: opt_num(f[6])?,
                forget_loss: num(f[7])?,
                validation_loss: num(f[8])?,
                per_identity: Vec::new(),
            })
        })
        .collect()
}

pub fn per_identity_csv(report: &EvalReport) -> String {
    let mut out = String::from("identity,perf_diff,support_distance\n");
    for d in &report.per_identity {
        out.push_str(&format!("{},{},{}\n", d.identity, d.perf_diff, d.support_distance));
    }
    out
}

pub fn bins_csv(rows: &[BinRow]) -> String {
    let mut out = String::from("bin,lo,hi,mean_gap,count\n");
    for b in rows {
        out.push_str(&format!("{},{},{},{},{}\n", b.bin, b.lo, b.hi, b.mean_gap, b.count));
    }
    out
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn cell(values: &[f64]) -> (String, String) {
    match mean_std(values) {
        Some((m, s)) => (format!("{m:.6}"), format!("{s:.6}")),
        None => (String::new(), String::new()),
    }
}

fn pm(values: &[f64], scale: f64) -> String {
    match mean_std(values) {
        Some((m, s)) => format!("{:.2} ± {:.2}", m * scale, s * scale),
        None => "-".into(),
    }
}

#[derive(Debug, Clone, Default)]
struct MethodColumns {
    perf_r: Vec<f64>,
    perf_f: Vec<f64>,
    perf_te: Vec<f64>,
    tow: Vec<f64>,
    mia: Vec<f64>,
    loss_gap: Vec<f64>,
}

/// Cross-seed aggregation of evaluation reports.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    methods: Vec<(String, MethodColumns)>,
    failures: Vec<(u64, String, String)>,
    completed: usize,
}

impl Summary {
    pub fn add_seed(&mut self, reports: Vec<EvalReport>) {
        self.completed += 1;
        for r in reports {
            let idx = match self.methods.iter().position(|(m, _)| *m == r.method) {
                Some(i) => i,
                None => {
                    self.methods.push((r.method.clone(), MethodColumns::default()));
                    self.methods.len() - 1
                }
            };
            let c = &mut self.methods[idx].1;
            c.perf_r.push(r.perf_r);
            c.perf_f.push(r.perf_f);
            c.perf_te.push(r.perf_te);
            c.tow.extend(r.tow);
            c.mia.extend(r.mia_tpr);
            c.loss_gap.push(r.loss_gap());
        }
    }

    pub fn add_failure(&mut self, seed: u64, stage: &str, error: &str) {
        self.failures.push((seed, stage.into(), error.into()));
    }

    pub fn completed_seeds(&self) -> usize {
        self.completed
    }

    pub fn failed_seeds(&self) -> usize {
        self.failures.len()
    }

    pub fn methods(&self) -> Vec<&str> {
        self.methods.iter().map(|(m, _)| m.as_str()).collect()
    }

    fn column(&self, method: &str) -> Option<&MethodColumns> {
        self.methods.iter().find(|(m, _)| m == method).map(|(_, c)| c)
    }

    pub fn mean_tow(&self, method: &str) -> Option<f64> {
        mean_std(&self.column(method)?.tow).map(|(m, _)| m)
    }

    pub fn mean_loss_gap(&self, method: &str) -> Option<f64> {
        mean_std(&self.column(method)?.loss_gap).map(|(m, _)| m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,seeds,failed_seeds,perf_r_mean,perf_r_std,perf_f_mean,perf_f_std,perf_te_mean,perf_te_std,\
             tow_mean,tow_std,mia_tpr_mean,mia_tpr_std,loss_gap_mean,loss_gap_std\n",
        );
        for (m, c) in &self.methods {
            let cols = [&c.perf_r, &c.perf_f, &c.perf_te, &c.tow, &c.mia, &c.loss_gap].map(|v| cell(v));
            out.push_str(&format!("{m},{},{}", c.perf_r.len(), self.failures.len()));
            for (mean, std) in cols {
                out.push_str(&format!(",{mean},{std}"));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table in percent, mean ± std over completed seeds.
    pub fn to_markdown(&self) -> String {
        let header = ["method", "perf_r", "perf_f", "perf_te", "ToW", "MIA TPR", "|L_f - L_v|"];
        let rows: Vec<Vec<String>> = self
            .methods
            .iter()
            .map(|(m, c)| {
                vec![
                    m.clone(),
                    pm(&c.perf_r, 100.0),
                    pm(&c.perf_f, 100.0),
                    pm(&c.perf_te, 100.0),
                    pm(&c.tow, 100.0),
                    pm(&c.mia, 100.0),
                    pm(&c.loss_gap, 1.0),
                ]
            })
            .collect();
        let mut out = aligned_table(&header, &rows);
        out.push_str(&format!("\ncompleted seeds: {}\n", self.completed));
        for (seed, stage, error) in &self.failures {
            out.push_str(&format!("seed {seed} failed at {stage}: {error}\n"));
        }
        out
    }
}

pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> =
            cells.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.to_vec());
    out.push_str(&format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}
