//! Table rendering: delimited values plus an aligned text table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{EvalReport, PairedP};
use crate::data::vocabulary::{PATHOLOGIES, PATHOLOGY_HEADERS};
use crate::error::{Error, Result};

/// Shown wherever a value is unavailable.
pub const ABSENT: &str = "NA";

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// mIoU and Acc per model, marked where significantly different from
    /// the baseline.
    Table1,
    /// Per-pathology mIoU in fixed order plus the overall average.
    Table2,
    /// Signed deltas of (with, without) report pairs.
    Table3,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Layout::Table1),
            "table2" => Ok(Layout::Table2),
            "table3" => Ok(Layout::Table3),
            other => Err(Error::InvalidInput(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub with_id: String,
    pub without_id: String,
    pub split_id: String,
    /// Percentage points.
    pub delta_acc: f64,
    pub delta_miou: f64,
    pub significance: Option<PairedP>,
}

/// Signed differences `with - without` in percentage points.
pub fn compare_ablation(with: &EvalReport, without: &EvalReport) -> Result<AblationDelta> {
    if with.split_id != without.split_id {
        return Err(Error::Mismatch(format!(
            "reports come from different splits: {} vs {}",
            with.split_id, without.split_id
        )));
    }
    Ok(AblationDelta {
        with_id: with.model_id.clone(),
        without_id: without.model_id.clone(),
        split_id: with.split_id.clone(),
        delta_acc: 100.0 * (with.overall.acc - without.overall.acc),
        delta_miou: 100.0 * (with.overall.miou - without.overall.miou),
        significance: with
            .significance
            .get(&without.model_id)
            .or_else(|| without.significance.get(&with.model_id))
            .copied(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub csv: String,
    pub text: String,
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn mark(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < ALPHA => "*",
        _ => "",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string())
        .unwrap_or_else(|| ABSENT.to_string())
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(
                out,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1))
            );
        }
    }
    out
}

fn to_csv(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Baseline p-values for a report: the first entry of its significance map.
fn baseline_p(r: &EvalReport) -> Option<(&str, PairedP)> {
    r.significance.iter().next().map(|(k, v)| (k.as_str(), *v))
}

pub fn render_report(reports: &[EvalReport], layout: Layout) -> Result<Rendered> {
    if reports.is_empty() {
        return Err(Error::EmptyData("no reports to render".into()));
    }
    match layout {
        Layout::Table1 => {
            let mut csv_rows = vec![[
                "model_id", "split_id", "n", "miou", "acc", "baseline", "p_miou", "p_acc",
            ]
            .map(String::from)
            .to_vec()];
            let mut text_rows = vec![["Model", "n", "mIoU", "Acc"].map(String::from).to_vec()];
            for r in reports {
                let sig = baseline_p(r);
                csv_rows.push(vec![
                    r.model_id.clone(),
                    r.split_id.clone(),
                    r.overall.n.to_string(),
                    r.overall.miou.to_string(),
                    r.overall.acc.to_string(),
                    sig.map(|(b, _)| b.to_string())
                        .unwrap_or_else(|| ABSENT.into()),
                    opt(sig.map(|(_, p)| p.p_miou)),
                    opt(sig.map(|(_, p)| p.p_acc)),
                ]);
                text_rows.push(vec![
                    r.model_id.clone(),
                    r.overall.n.to_string(),
                    format!(
                        "{}{}",
                        pct(r.overall.miou),
                        mark(sig.map(|(_, p)| p.p_miou))
                    ),
                    format!("{}{}", pct(r.overall.acc), mark(sig.map(|(_, p)| p.p_acc))),
                ]);
            }
            let mut text = align(&text_rows);
            text.push_str("* p < 0.05 against the baseline model\n");
            Ok(Rendered {
                csv: to_csv(&csv_rows)?,
                text,
            })
        }
        Layout::Table2 => {
            let mut header = vec!["model_id".to_string()];
            header.extend(PATHOLOGIES.iter().map(|p| p.to_string()));
            header.push("avg".into());
            let mut text_header = vec!["Model".to_string()];
            text_header.extend(PATHOLOGY_HEADERS.iter().map(|p| p.to_string()));
            text_header.push("Avg".into());
            let mut csv_rows = vec![header];
            let mut text_rows = vec![text_header];
            for r in reports {
                let cells: Vec<Option<f64>> = PATHOLOGIES
                    .iter()
                    .map(|p| r.per_category.get(*p).filter(|m| m.n > 0).map(|m| m.miou))
                    .collect();
                let sig = baseline_p(r).map(|(_, p)| p.p_miou);
                let mut c = vec![r.model_id.clone()];
                c.extend(cells.iter().map(|v| opt(*v)));
                c.push(r.overall.miou.to_string());
                csv_rows.push(c);
                let mut t = vec![r.model_id.clone()];
                t.extend(
                    cells
                        .iter()
                        .map(|v| v.map(pct).unwrap_or_else(|| ABSENT.into())),
                );
                t.push(format!("{}{}", pct(r.overall.miou), mark(sig)));
                text_rows.push(t);
            }
            Ok(Rendered {
                csv: to_csv(&csv_rows)?,
                text: align(&text_rows),
            })
        }
        Layout::Table3 => {
            if reports.len() % 2 != 0 {
                return Err(Error::InvalidInput(
                    "table3 takes (with, without) report pairs; got an odd count".into(),
                ));
            }
            let mut csv_rows = vec![[
                "with_id",
                "without_id",
                "split_id",
                "delta_acc",
                "delta_miou",
                "p_acc",
                "p_miou",
            ]
            .map(String::from)
            .to_vec()];
            let mut text_rows = vec![["Model", "Acc", "mIoU"].map(String::from).to_vec()];
            for pair in reports.chunks(2) {
                let d = compare_ablation(&pair[0], &pair[1])?;
                csv_rows.push(vec![
                    d.with_id.clone(),
                    d.without_id.clone(),
                    d.split_id.clone(),
                    d.delta_acc.to_string(),
                    d.delta_miou.to_string(),
                    opt(d.significance.map(|p| p.p_acc)),
                    opt(d.significance.map(|p| p.p_miou)),
                ]);
                text_rows.push(vec![
                    d.with_id.clone(),
                    format!(
                        "{:+.1}{}",
                        d.delta_acc,
                        mark(d.significance.map(|p| p.p_acc))
                    ),
                    format!(
                        "{:+.1}{}",
                        d.delta_miou,
                        mark(d.significance.map(|p| p.p_miou))
                    ),
                ]);
            }
            let mut text = align(&text_rows);
            text.push_str("* p < 0.05\n");
            Ok(Rendered {
                csv: to_csv(&csv_rows)?,
                text,
            })
        }
    }
}

/// Reads a rendered delimited file back into rows of optional numbers,
/// keyed by the header. Non-numeric cells other than the absent marker
/// are kept as text.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<(String, Cell)>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| {
                    let cell = if v == ABSENT {
                        Cell::Absent
                    } else if let Ok(x) = v.parse::<f64>() {
                        Cell::Number(x)
                    } else {
                        Cell::Text(v.to_string())
                    };
                    (h.clone(), cell)
                })
                .collect(),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
    Absent,
}
