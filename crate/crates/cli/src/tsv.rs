//! Tab-separated input and output.
//!
//! P-value tables have a header `gene p_1 ... p_K` and one row per gene.
//! Study tables start with a label row (first cell ignored, then one 0/1 per
//! sample) followed by one row per gene: id, then expression values.

use std::fs;
use std::path::Path;

use awfisher::resample::StudyData;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PValueTable {
    pub k: usize,
    pub genes: Vec<String>,
    pub p: Vec<Vec<f64>>,
}

/// Parses a p-value table. Every malformed or out-of-range row is reported
/// with its line number; any such row fails the whole read.
pub fn parse_pvalue_table(text: &str) -> CliResult<PValueTable> {
    let mut lines = data_lines(text);
    let Some((_, header)) = lines.next() else {
        return Ok(PValueTable {
            k: 0,
            genes: vec![],
            p: vec![],
        });
    };
    let k = header.split('\t').count().saturating_sub(1);
    if k < 2 {
        return Err(CliError::Input(format!(
            "line 1: header needs a gene column and at least 2 p-value columns, found {k}"
        )));
    }
    let mut problems = Vec::new();
    let mut genes = Vec::new();
    let mut p = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != k + 1 {
            problems.push(format!(
                "line {ln}: expected {} fields, found {}",
                k + 1,
                fields.len()
            ));
            continue;
        }
        let gene = fields[0].to_string();
        let mut row = Vec::with_capacity(k);
        let mut ok = true;
        for (j, f) in fields[1..].iter().enumerate() {
            match f.trim().parse::<f64>() {
                Ok(v) if v > 0.0 && v <= 1.0 => row.push(v),
                Ok(v) => {
                    problems.push(format!(
                        "line {ln}: gene {gene}: p-value {v} in column {} is outside (0, 1]",
                        j + 1
                    ));
                    ok = false;
                }
                Err(_) => {
                    problems.push(format!(
                        "line {ln}: gene {gene}: cannot parse `{f}` as a number"
                    ));
                    ok = false;
                }
            }
        }
        if ok {
            genes.push(gene);
            p.push(row);
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Input(format!(
            "rejected {} row(s):\n{}",
            problems.len(),
            problems.join("\n")
        )));
    }
    Ok(PValueTable { k, genes, p })
}

pub fn parse_study(study_id: &str, text: &str) -> CliResult<StudyData> {
    let mut lines = data_lines(text);
    let err = |ln: usize, msg: String| CliError::Input(format!("{study_id}: line {ln}: {msg}"));
    let (ln, label_line) = lines
        .next()
        .ok_or_else(|| err(1, "empty study file".into()))?;
    let labels: Vec<u8> = label_line
        .split('\t')
        .skip(1)
        .map(|f| match f.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(err(ln, format!("class label `{other}` is not 0 or 1"))),
        })
        .collect::<CliResult<_>>()?;
    let n = labels.len();
    let mut genes = Vec::new();
    let mut expr = Vec::new();
    for (ln, line) in lines {
        let mut fields = line.split('\t');
        let gene = fields.next().unwrap_or_default().to_string();
        let before = expr.len();
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| err(ln, format!("cannot parse `{f}` as a number")))?;
            expr.push(v);
        }
        if expr.len() - before != n {
            return Err(err(
                ln,
                format!("expected {n} values, found {}", expr.len() - before),
            ));
        }
        genes.push(gene);
    }
    StudyData::new(study_id, genes, labels, expr).map_err(|e| CliError::Input(e.to_string()))
}

pub fn read_study(path: &Path) -> CliResult<StudyData> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "study".into());
    parse_study(&id, &read_text(path)?)
}

/// Writes a study in the format [`parse_study`] reads, with full precision.
pub fn study_to_text(study: &StudyData) -> String {
    let mut out = String::from("label");
    for l in study.labels() {
        out.push('\t');
        out.push(if *l == 1 { '1' } else { '0' });
    }
    out.push('\n');
    for (g, id) in study.gene_ids().iter().enumerate() {
        out.push_str(id);
        for v in study.row(g) {
            out.push('\t');
            out.push_str(&format!("{v:e}"));
        }
        out.push('\n');
    }
    out
}

/// `key<TAB>value` lines, sorted by key.
pub fn manifest_text(entries: &[(String, String)]) -> String {
    let mut e = entries.to_vec();
    e.sort();
    e.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pvalue_rows_and_errors() {
        let t = parse_pvalue_table("gene\tp_1\tp_2\ng1\t0.1\t0.2\ng2\t1\t1e-5\n").unwrap();
        assert_eq!(t.k, 2);
        assert_eq!(t.p[1], vec![1.0, 1e-5]);
        let e = parse_pvalue_table("gene\tp_1\tp_2\ng1\t0\t0.2\ng2\t0.5\ng3\tx\t1\n")
            .unwrap_err()
            .to_string();
        assert!(
            e.contains("line 2") && e.contains("line 3") && e.contains("line 4"),
            "{e}"
        );
        assert_eq!(parse_pvalue_table("").unwrap().genes.len(), 0);
        assert_eq!(
            parse_pvalue_table("gene\tp_1\tp_2\n").unwrap().genes.len(),
            0
        );
    }

    #[test]
    fn study_roundtrip() {
        let s = StudyData::new(
            "s",
            vec!["a".into(), "b".into()],
            vec![0, 0, 1, 1],
            vec![0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.5],
        )
        .unwrap();
        let back = parse_study("s", &study_to_text(&s)).unwrap();
        assert_eq!(back, s);
        assert!(parse_study("s", "label\t0\t0\na\t1\t2\n").is_err());
        assert!(parse_study("s", "label\t0\t2\na\t1\t2\n").is_err());
        assert!(parse_study("s", "label\t0\t1\na\t1\n").is_err());
    }
}
