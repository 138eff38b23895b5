//! Result tables: overall scores per beam size, the time-wise vs time-ignore
//! comparison, per update type and the method-size by update-size matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::SplitPolicy;
use crate::metrics::{Cell, EvalReport};

/// PP@k of both split policies for one beam size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyGap {
    pub timewise: f64,
    pub random: f64,
    /// `random - timewise`, in rate units.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Keyed by split policy name.
    pub runs: BTreeMap<String, EvalReport>,
    /// Present only when both policies were evaluated.
    pub comparison: Option<BTreeMap<usize, PolicyGap>>,
}

impl Report {
    pub fn new(runs: BTreeMap<String, EvalReport>) -> Self {
        let comparison = match (
            runs.get(SplitPolicy::TimeWise.name()),
            runs.get(SplitPolicy::TimeIgnore.name()),
        ) {
            (Some(tw), Some(ti)) => Some(
                tw.per_k
                    .iter()
                    .filter_map(|(k, a)| {
                        let b = ti.per_k.get(k)?;
                        Some((
                            *k,
                            PolicyGap {
                                timewise: a.pp_rate,
                                random: b.pp_rate,
                                gap: b.pp_rate - a.pp_rate,
                            },
                        ))
                    })
                    .collect(),
            ),
            _ => None,
        };
        Self { runs, comparison }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (policy, run) in &self.runs {
            let _ = writeln!(out, "== {policy} split: {} test examples ==\n", run.examples);
            out.push_str(&overall_table(run));
            out.push('\n');
            out.push_str(&type_table(run));
            out.push('\n');
            out.push_str(&bucket_table(run));
            out.push('\n');
        }
        out.push_str(&self.comparison_table());
        out
    }

    fn comparison_table(&self) -> String {
        let mut out = String::from("Time-wise vs time-ignore evaluation\n");
        match &self.comparison {
            None => out.push_str("n/a (needs both a timewise and a random run)\n"),
            Some(c) => {
                let mut rows = vec![row(["Beam", "Time-wise PP", "Time-ignore PP", "Gap (pp)"])];
                for (k, g) in c {
                    rows.push(vec![
                        k.to_string(),
                        percent(g.timewise),
                        percent(g.random),
                        format!("{:+.2}", 100.0 * g.gap),
                    ]);
                }
                out.push_str(&align(&rows));
            }
        }
        out
    }
}

fn row<const N: usize>(cells: [&str; N]) -> Vec<String> {
    cells.iter().map(|c| c.to_string()).collect()
}

pub fn percent(rate: f64) -> String {
    format!("{:.2}%", 100.0 * rate)
}

fn cell_text(c: &Cell) -> String {
    match c.pp_rate {
        Some(r) => format!("{} ({}/{})", percent(r), c.pp_count, c.count),
        None => "-".to_string(),
    }
}

/// Left-aligned first column, right-aligned rest, two spaces apart.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == 0 {
                    format!("{s:<w$}", w = widths[i])
                } else {
                    format!("{s:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn overall_table(run: &EvalReport) -> String {
    let mut rows = vec![row(["Beam", "#PP", "PP", "BLEU-4", "CodeBLEU"])];
    for (k, s) in &run.per_k {
        rows.push(vec![
            k.to_string(),
            s.pp_count.to_string(),
            percent(s.pp_rate),
            format!("{:.2}", 100.0 * s.bleu),
            format!("{:.2}", 100.0 * s.codebleu),
        ]);
    }
    format!("Overall (BLEU and CodeBLEU on the top candidate)\n{}", align(&rows))
}

pub fn type_table(run: &EvalReport) -> String {
    let mut rows = vec![row(["Update type", "PP"])];
    for (label, c) in &run.per_type {
        rows.push(vec![label.clone(), cell_text(c)]);
    }
    format!(
        "Per update type at beam {} (types from an approximate keyword classifier)\n{}",
        run.breakdown_k,
        align(&rows)
    )
}

pub fn bucket_table(run: &EvalReport) -> String {
    let mut header = vec!["Method \\ Update".to_string()];
    header.extend(run.update_buckets.iter().cloned());
    header.push("All".to_string());
    let mut rows = vec![header];
    for (m, label) in run.method_buckets.iter().enumerate() {
        let mut r = vec![label.clone()];
        r.extend(run.per_bucket[m].iter().map(cell_text));
        r.push(cell_text(&Cell::merged(&run.per_bucket[m])));
        rows.push(r);
    }
    let mut all = vec!["All".to_string()];
    all.extend(run.update_size_totals().iter().map(cell_text));
    all.push(cell_text(&Cell::merged(run.per_bucket.iter().flatten())));
    rows.push(all);
    format!(
        "PP at beam {} by method size (tokens) and update size (changed tokens)\n{}",
        run.breakdown_k,
        align(&rows)
    )
}
