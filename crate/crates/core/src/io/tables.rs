//! CSV readers and writers for responses, covariates, Q-matrices and masks.
//!
//! All indices in files are 1-based.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CovariateMatrix, MaskEntry, Pattern, QMatrixSet, ResponsePanel};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn parse_index(path: &Path, line: u64, field: &str, raw: &str) -> Result<usize> {
    match raw.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(Error::parse(path, format!("line {line}: {field} `{raw}` is not a positive integer"))),
    }
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

/// Reads long-format responses `person,item,time,response`. Dimensions are
/// the largest indices seen; absent rows and `NA` are missing cells.
pub fn read_responses(path: &Path) -> Result<ResponsePanel> {
    read_responses_from(open(path)?, path)
}

pub fn read_responses_from<R: Read>(reader: R, path: &Path) -> Result<ResponsePanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    let expected = ["person", "item", "time", "response"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::parse(path, "header must be person,item,time,response"));
    }
    let mut cells = Vec::new();
    let (mut n, mut j, mut t) = (0, 0, 0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let i = parse_index(path, line, "person", &rec[0])?;
        let jj = parse_index(path, line, "item", &rec[1])?;
        let tt = parse_index(path, line, "time", &rec[2])?;
        let v = if is_missing(&rec[3]) {
            None
        } else {
            match rec[3].parse::<u8>() {
                Ok(v) => Some(v),
                Err(_) => {
                    return Err(Error::parse(
                        path,
                        format!("line {line}: response `{}` is not an integer", &rec[3]),
                    ))
                }
            }
        };
        n = n.max(i + 1);
        j = j.max(jj + 1);
        t = t.max(tt + 1);
        cells.push((i, jj, tt, v));
    }
    if cells.is_empty() {
        return Err(Error::parse(path, "no responses"));
    }
    let mut panel = ResponsePanel::new(n, j, t);
    for (i, jj, tt, v) in cells {
        panel.set(i, jj, tt, v);
    }
    Ok(panel)
}

/// Writes observed cells sorted by (person, item, time).
pub fn write_responses(path: &Path, panel: &ResponsePanel) -> Result<()> {
    let mut out = String::from("person,item,time,response\n");
    let (n, j, t) = panel.shape();
    for i in 0..n {
        for jj in 0..j {
            for tt in 0..t {
                if let Some(v) = panel.get(i, jj, tt) {
                    out.push_str(&format!("{},{},{},{}\n", i + 1, jj + 1, tt + 1, v));
                }
            }
        }
    }
    write_string(path, &out)
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads `person,<name>...`; every person 1..N must appear once. `NA`
/// becomes NaN so validation can report it by name.
pub fn read_covariates(path: &Path) -> Result<CovariateMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.get(0) != Some("person") {
        return Err(Error::parse(path, "first column must be `person`"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let i = parse_index(path, line, "person", &rec[0])?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|raw| {
                if is_missing(raw) {
                    Ok(f64::NAN)
                } else {
                    raw.parse::<f64>().map_err(|_| {
                        Error::parse(path, format!("line {line}: `{raw}` is not a number"))
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if rows.insert(i, vals).is_some() {
            return Err(Error::parse(path, format!("person {} appears twice", i + 1)));
        }
    }
    let n = rows.len();
    if rows.keys().copied().ne(0..n) {
        return Err(Error::parse(path, "persons must be numbered 1..N without gaps"));
    }
    CovariateMatrix::new(n, names, rows.into_values().flatten().collect())
}

pub fn write_covariates(path: &Path, cov: &CovariateMatrix) -> Result<()> {
    let mut out = String::from("person");
    for name in cov.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..cov.n_persons() {
        out.push_str(&(i + 1).to_string());
        for v in cov.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_string(path, &out)
}

/// Cells of an `item,time,attr_1..attr_K` table.
struct QTable {
    n_items: usize,
    n_attributes: usize,
    n_times: usize,
    cells: BTreeMap<(usize, usize), Vec<String>>,
}

fn read_q_table<R: Read>(reader: R, path: &Path) -> Result<QTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.get(0) != Some("item") || headers.get(1) != Some("time") || headers.len() < 3 {
        return Err(Error::parse(path, "header must be item,time,attr_1,...,attr_K"));
    }
    let k = headers.len() - 2;
    let mut cells = BTreeMap::new();
    let (mut j, mut t) = (0, 0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let jj = parse_index(path, line, "item", &rec[0])?;
        let tt = parse_index(path, line, "time", &rec[1])?;
        j = j.max(jj + 1);
        t = t.max(tt + 1);
        let vals: Vec<String> = rec.iter().skip(2).map(String::from).collect();
        if cells.insert((tt, jj), vals).is_some() {
            return Err(Error::parse(path, format!("item {} time {} appears twice", jj + 1, tt + 1)));
        }
    }
    Ok(QTable {
        n_items: j,
        n_attributes: k,
        n_times: t,
        cells,
    })
}

/// Expands a table to `n_times`: a table holding only time 1 is broadcast.
fn table_rows<T: Clone>(
    table: &QTable,
    path: &Path,
    n_times: usize,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<Vec<T>>> {
    let src_times = if table.n_times == 1 { 1 } else { n_times };
    if table.n_times != 1 && table.n_times != n_times {
        return Err(Error::parse(
            path,
            format!("table covers {} time points, data have {n_times}", table.n_times),
        ));
    }
    let mut rows = Vec::with_capacity(table.n_items * n_times);
    for t in 0..n_times {
        for j in 0..table.n_items {
            let raw = table
                .cells
                .get(&(t.min(src_times - 1), j))
                .ok_or_else(|| Error::parse(path, format!("missing row for item {} time {}", j + 1, t + 1)))?;
            let row = raw
                .iter()
                .map(|v| {
                    parse(v).ok_or_else(|| {
                        Error::parse(path, format!("item {} time {}: bad entry `{v}`", j + 1, t + 1))
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Reads a Q-matrix CSV. `n_times` defaults to the times present in the
/// file; a file with only time 1 is broadcast to every time point.
pub fn read_q(path: &Path, n_times: Option<usize>, time_invariant: bool) -> Result<QMatrixSet> {
    parse_q(open(path)?, path, n_times, time_invariant)
}

pub fn parse_q<R: Read>(
    reader: R,
    path: &Path,
    n_times: Option<usize>,
    time_invariant: bool,
) -> Result<QMatrixSet> {
    let table = read_q_table(reader, path)?;
    let t = n_times.unwrap_or(table.n_times);
    let rows = table_rows(&table, path, t, |v| match v {
        "0" => Some(0u8),
        "1" => Some(1u8),
        _ => None,
    })?;
    let patterns: Vec<Pattern> = rows
        .iter()
        .map(|r| crate::model::pattern_from_bits(r))
        .collect();
    QMatrixSet::from_rows(table.n_items, table.n_attributes, t, patterns, time_invariant)
}

/// Reads a mask with the Q-matrix layout and entries `fixed0`, `fixed1`
/// or `free`.
pub fn read_mask(path: &Path, n_times: usize) -> Result<Vec<Vec<MaskEntry>>> {
    let table = read_q_table(open(path)?, path)?;
    table_rows(&table, path, n_times, |v| match v {
        "fixed0" => Some(MaskEntry::Fixed0),
        "fixed1" => Some(MaskEntry::Fixed1),
        "free" => Some(MaskEntry::Free),
        _ => None,
    })
}

pub fn format_q(q: &QMatrixSet) -> String {
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
                out.push_str(&format!(",{}", q.get(j, kk, t)));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_q(path: &Path, q: &QMatrixSet) -> Result<()> {
    write_string(path, &format_q(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn responses_roundtrip_with_missing_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut panel = ResponsePanel::new(3, 2, 2);
        panel.set(0, 0, 0, Some(1));
        panel.set(2, 1, 1, Some(0));
        panel.set(1, 1, 0, Some(2));
        write_responses(&p, &panel).unwrap();
        assert_eq!(read_responses(&p).unwrap(), panel);
    }

    #[test]
    fn q_time_one_broadcasts() {
        let text = "item,time,attr_1,attr_2\n1,1,1,0\n2,1,0,1\n3,1,1,1\n";
        let q = parse_q(text.as_bytes(), Path::new("q.csv"), Some(3), false).unwrap();
        assert_eq!(q.n_times(), 3);
        assert_eq!(q.matrix(2), &[1, 2, 3]);
        assert!(parse_q("item,time,attr_1\n1,1,2\n".as_bytes(), Path::new("q"), None, false).is_err());
    }

    #[test]
    fn shipped_q_matrices_parse() {
        let text = include_str!("../../data/qmatrices/j18_dense.csv");
        let q = parse_q(text.as_bytes(), Path::new("j18"), None, false).unwrap();
        assert_eq!((q.n_items(), q.n_attributes(), q.n_times()), (18, 3, 3));
        assert_eq!(q.row(17, 0), 0b111);
    }

    proptest! {
        #[test]
        fn q_roundtrip(rows in proptest::collection::vec(1u32..8, 12)) {
            let q = QMatrixSet::from_rows(4, 3, 3, rows, false).unwrap();
            let text = format_q(&q);
            let back = parse_q(text.as_bytes(), Path::new("q"), None, false).unwrap();
            prop_assert_eq!(back, q);
        }

        #[test]
        fn covariates_roundtrip(vals in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("z.csv");
            let cov = CovariateMatrix::new(3, vec!["a".into(), "b".into()], vals).unwrap();
            write_covariates(&p, &cov).unwrap();
            prop_assert_eq!(read_covariates(&p).unwrap(), cov);
        }
    }
}
