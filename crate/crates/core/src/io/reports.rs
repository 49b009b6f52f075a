//! Summary tables written by a fit and read back by later commands.
//!
//! Attribute patterns are written as bit strings in attribute order, so
//! `101` means attributes 1 and 3.

use std::path::Path;

use crate::diagnostics::ChainDiagnostics;
use crate::dynamics::OddsRatioEntry;
use crate::error::{Error, Result};
use crate::model::{bit, Pattern};
use crate::sampler::MasteryEstimates;
use crate::structure::{QMapEstimate, QValidationReport};

use super::tables::write_string;

pub fn pattern_label(pattern: Pattern, n_attributes: usize) -> String {
    (0..n_attributes).map(|k| if bit(pattern, k) == 1 { '1' } else { '0' }).collect()
}

pub fn parse_pattern_label(label: &str) -> Option<Pattern> {
    if label.is_empty() || label.len() > crate::model::MAX_ATTRIBUTES {
        return None;
    }
    label.chars().enumerate().try_fold(0, |acc, (k, c)| match c {
        '0' => Some(acc),
        '1' => Some(acc | 1 << k),
        _ => None,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

/// Reads a CSV whose header must equal `header`; returns the raw records.
fn read_records(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let h = rdr.headers().map_err(|e| Error::parse(path, e))?;
    if h.iter().ne(header.iter().copied()) {
        return Err(Error::parse(path, format!("header must be {}", header.join(","))));
    }
    rdr.records().map(|r| r.map_err(|e| Error::parse(path, e))).collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec[i].parse::<T>().map_err(|_| {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        Error::parse(path, format!("line {line}: bad value `{}`", &rec[i]))
    })
}

fn index(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<usize> {
    let v: usize = field(path, rec, i)?;
    v.checked_sub(1)
        .ok_or_else(|| Error::parse(path, "indices are 1-based"))
}

fn pattern_field(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<Pattern> {
    parse_pattern_label(&rec[i]).ok_or_else(|| Error::parse(path, format!("bad pattern `{}`", &rec[i])))
}

const DIAGNOSTICS_HEADER: [&str; 7] = ["parameter", "mean", "ci_lo", "ci_hi", "r_hat", "ess", "flag"];

pub fn format_diagnostics(rows: &[ChainDiagnostics]) -> String {
    let mut out = DIAGNOSTICS_HEADER.join(",");
    out.push('\n');
    for d in rows {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{},{}\n",
            d.parameter,
            num(d.mean),
            num(d.ci_lo),
            num(d.ci_hi),
            opt(d.r_hat),
            opt(d.ess),
            d.flag()
        ));
    }
    out
}

pub fn write_diagnostics(path: &Path, rows: &[ChainDiagnostics]) -> Result<()> {
    write_string(path, &format_diagnostics(rows))
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<ChainDiagnostics>> {
    read_records(path, &DIAGNOSTICS_HEADER)?
        .iter()
        .map(|r| {
            let optional = |i: usize| -> Result<Option<f64>> {
                if &r[i] == "NA" {
                    Ok(None)
                } else {
                    field(path, r, i).map(Some)
                }
            };
            Ok(ChainDiagnostics {
                parameter: r[0].to_string(),
                mean: field(path, r, 1)?,
                ci_lo: field(path, r, 2)?,
                ci_hi: field(path, r, 3)?,
                r_hat: optional(4)?,
                ess: optional(5)?,
                degenerate: &r[6] == "degenerate",
            })
        })
        .collect()
}

const MASTERY_HEADER: [&str; 5] = ["person", "attribute", "time", "prob", "profile"];

pub fn write_mastery(path: &Path, m: &MasteryEstimates) -> Result<()> {
    let mut out = MASTERY_HEADER.join(",");
    out.push('\n');
    for i in 0..m.n_persons {
        for k in 0..m.n_attributes {
            for t in 0..m.n_times {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    i + 1,
                    k + 1,
                    t + 1,
                    num(m.probability(i, k, t)),
                    m.profile(i, k, t)
                ));
            }
        }
    }
    write_string(path, &out)
}

pub fn read_mastery(path: &Path) -> Result<MasteryEstimates> {
    let recs = read_records(path, &MASTERY_HEADER)?;
    let mut cells = Vec::with_capacity(recs.len());
    let (mut n, mut k, mut t) = (0, 0, 0);
    for r in &recs {
        let (i, kk, tt) = (index(path, r, 0)?, index(path, r, 1)?, index(path, r, 2)?);
        n = n.max(i + 1);
        k = k.max(kk + 1);
        t = t.max(tt + 1);
        cells.push((i, kk, tt, field::<f64>(path, r, 3)?, field::<u8>(path, r, 4)?));
    }
    if cells.len() != n * k * t {
        return Err(Error::parse(path, "mastery table is incomplete"));
    }
    let mut probabilities = vec![0.0; n * k * t];
    let mut profiles = vec![0; n * k * t];
    for (i, kk, tt, p, a) in cells {
        let idx = (i * t + tt) * k + kk;
        probabilities[idx] = p;
        profiles[idx] = a;
    }
    Ok(MasteryEstimates {
        n_persons: n,
        n_attributes: k,
        n_times: t,
        probabilities,
        profiles,
    })
}

/// Entry-wise posterior inclusion probabilities with the Q-matrix layout.
pub fn write_q_posterior_means(path: &Path, est: &QMapEstimate) -> Result<()> {
    let q = &est.q;
    let k = q.n_attributes();
    let mut out = String::from("item,time");
    for kk in 0..k {
        out.push_str(&format!(",attr_{}", kk + 1));
    }
    out.push('\n');
    for t in 0..q.n_times() {
        for j in 0..q.n_items() {
            out.push_str(&format!("{},{}", j + 1, t + 1));
            for kk in 0..k {
                out.push_str(&format!(",{}", num(est.entry_means[(t * q.n_items() + j) * k + kk])));
            }
            out.push('\n');
        }
    }
    write_string(path, &out)
}

/// Reads `q_pm.csv`; returns `(J, K, T, means)` with means indexed
/// `(time * J + item) * K + k`.
pub fn read_q_posterior_means(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let k = rdr.headers().map_err(|e| Error::parse(path, e))?.len().saturating_sub(2);
    let mut cells = Vec::new();
    let (mut j, mut t) = (0, 0);
    for r in rdr.records() {
        let r = r.map_err(|e| Error::parse(path, e))?;
        let (jj, tt) = (index(path, &r, 0)?, index(path, &r, 1)?);
        j = j.max(jj + 1);
        t = t.max(tt + 1);
        let vals = (0..k).map(|kk| field::<f64>(path, &r, kk + 2)).collect::<Result<Vec<_>>>()?;
        cells.push((jj, tt, vals));
    }
    if k == 0 || cells.len() != j * t {
        return Err(Error::parse(path, "posterior mean table is incomplete"));
    }
    let mut means = vec![0.0; j * t * k];
    for (jj, tt, vals) in cells {
        means[(tt * j + jj) * k..(tt * j + jj + 1) * k].copy_from_slice(&vals);
    }
    Ok((j, k, t, means))
}

pub fn write_q_row_frequencies(path: &Path, est: &QMapEstimate) -> Result<()> {
    let q = &est.q;
    let mut out = String::from("item,time,pattern,frequency\n");
    for t in 0..q.n_times() {
        for j in 0..q.n_items() {
            for &(p, f) in &est.row_frequencies[t * q.n_items() + j] {
                out.push_str(&format!("{},{},{},{}\n", j + 1, t + 1, pattern_label(p, q.n_attributes()), num(f)));
            }
        }
    }
    write_string(path, &out)
}

pub fn write_odds_ratios(path: &Path, rows: &[OddsRatioEntry]) -> Result<()> {
    let mut out = String::from("parameter,coefficient,odds_ratio,ci_lo,ci_hi,significant\n");
    for r in rows {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            r.name,
            num(r.coefficient),
            num(r.odds_ratio),
            num(r.ci_lo),
            num(r.ci_hi),
            r.significant
        ));
    }
    write_string(path, &out)
}

const ITEM_SUCCESS_HEADER: [&str; 4] = ["item", "time", "pattern", "prob"];

/// `success[time * J + item][pattern]`.
pub fn write_item_success(path: &Path, success: &[Vec<f64>], n_items: usize, n_attributes: usize) -> Result<()> {
    let mut out = ITEM_SUCCESS_HEADER.join(",");
    out.push('\n');
    for (idx, row) in success.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                idx % n_items + 1,
                idx / n_items + 1,
                pattern_label(p as Pattern, n_attributes),
                num(*v)
            ));
        }
    }
    write_string(path, &out)
}

/// Returns `(J, T, K, success)` in the layout of [`write_item_success`].
pub fn read_item_success(path: &Path) -> Result<(usize, usize, usize, Vec<Vec<f64>>)> {
    let recs = read_records(path, &ITEM_SUCCESS_HEADER)?;
    let first = recs.first().ok_or_else(|| Error::parse(path, "empty table"))?;
    let k = first[2].len();
    let np = 1usize << k;
    let mut cells = Vec::with_capacity(recs.len());
    let (mut j, mut t) = (0, 0);
    for r in &recs {
        let (jj, tt) = (index(path, r, 0)?, index(path, r, 1)?);
        if r[2].len() != k {
            return Err(Error::parse(path, "patterns differ in length"));
        }
        j = j.max(jj + 1);
        t = t.max(tt + 1);
        cells.push((jj, tt, pattern_field(path, r, 2)?, field::<f64>(path, r, 3)?));
    }
    if cells.len() != j * t * np {
        return Err(Error::parse(path, "item success table is incomplete"));
    }
    let mut out = vec![vec![0.0; np]; j * t];
    for (jj, tt, p, v) in cells {
        out[tt * j + jj][p as usize] = v;
    }
    Ok((j, t, k, out))
}

const PATTERN_DIST_HEADER: [&str; 3] = ["time", "pattern", "weight"];

pub fn write_pattern_distribution(path: &Path, dists: &[Vec<f64>], n_attributes: usize) -> Result<()> {
    let mut out = PATTERN_DIST_HEADER.join(",");
    out.push('\n');
    for (t, row) in dists.iter().enumerate() {
        for (p, w) in row.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", t + 1, pattern_label(p as Pattern, n_attributes), num(*w)));
        }
    }
    write_string(path, &out)
}

pub fn read_pattern_distribution(path: &Path) -> Result<Vec<Vec<f64>>> {
    let recs = read_records(path, &PATTERN_DIST_HEADER)?;
    let first = recs.first().ok_or_else(|| Error::parse(path, "empty table"))?;
    let np = 1usize << first[1].len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in &recs {
        let t = index(path, r, 0)?;
        if out.len() <= t {
            out.resize(t + 1, vec![f64::NAN; np]);
        }
        let p = pattern_field(path, r, 1)? as usize;
        if p >= np {
            return Err(Error::parse(path, "patterns differ in length"));
        }
        out[t][p] = field(path, r, 2)?;
    }
    if out.iter().flatten().any(|w| w.is_nan()) {
        return Err(Error::parse(path, "pattern distribution is incomplete"));
    }
    Ok(out)
}

pub fn format_q_validation(report: &QValidationReport, n_attributes: usize) -> String {
    let mut out = String::from("item,time,current,current_pvaf,flagged,suggested,suggested_pvaf,degenerate\n");
    for e in &report.entries {
        let (sugg, sugg_pvaf) = match e.suggested {
            Some(p) => {
                let v = e.candidates.iter().find(|c| c.0 == p).map(|c| c.2).unwrap_or(f64::NAN);
                (pattern_label(p, n_attributes), num(v))
            }
            None => ("NA".to_string(), "NA".to_string()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.item + 1,
            e.time + 1,
            pattern_label(e.current, n_attributes),
            num(e.current_pvaf),
            e.pvaf_below_threshold,
            sugg,
            sugg_pvaf,
            e.degenerate
        ));
    }
    out
}

pub fn write_q_validation(path: &Path, report: &QValidationReport, n_attributes: usize) -> Result<()> {
    write_string(path, &format_q_validation(report, n_attributes))
}
