//! End-to-end checks of the `awfisher` binary.

use std::path::Path;
use std::process::{Command, Output};

use awfisher::aw::{fisher_stat, WeightVector};
use awfisher::chi2::chi2_sf;

fn awfisher(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_awfisher"))
        .args(args)
        .env_remove("AWFISHER_LIB")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rows of a TSV file as maps from header name to cell.
fn tsv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    lines
        .map(|l| {
            header
                .iter()
                .zip(l.split('\t'))
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("manifest.tsv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")).map(str::to_string))
        .unwrap_or_else(|| panic!("manifest has no {key}"))
}

#[test]
fn pvalue_weights_for_heterogeneous_and_consistent_genes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.tsv");
    std::fs::write(
        &input,
        "gene\tp_1\tp_2\tp_3\ng1\t0.001\t1\t1\ng2\t0.1\t0.1\t0.1\n",
    )
    .unwrap();
    let out = awfisher(&["pvalue", "--input", path_str(&input)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = tsv_rows(&stdout(&out));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["weights"], "100");
    assert_eq!(rows[1]["weights"], "111");
    let s1: f64 = rows[0]["statistic"].parse().unwrap();
    let s2: f64 = rows[1]["statistic"].parse().unwrap();
    assert!((s1 - 0.001).abs() < 1e-12);
    assert!((s2 - 0.0318).abs() < 1e-4);
    for r in &rows {
        let q: f64 = r["q_value"].parse().unwrap();
        let p: f64 = r["meta_p"].parse().unwrap();
        // meta_p is printed with fewer digits than q_value.
        assert!(q >= p * (1.0 - 1e-5) && q <= 1.0, "{q} {p}");
    }
}

#[test]
fn empty_pvalue_input_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.tsv");
    std::fs::write(&input, "").unwrap();
    let out = awfisher(&["pvalue", "--input", path_str(&input)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        "gene\tstatistic\tlog_statistic\tweights\tmeta_p\tq_value\n"
    );
}

#[test]
fn study_count_outside_library_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("wide.tsv");
    let k = 12;
    let header: Vec<String> = (1..=k).map(|i| format!("p_{i}")).collect();
    let row = vec!["0.5"; k].join("\t");
    std::fs::write(&input, format!("gene\t{}\ng1\t{row}\n", header.join("\t"))).unwrap();
    let out = awfisher(&["pvalue", "--input", path_str(&input)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("12") && err.contains("library"), "{err}");
}

#[test]
fn bad_pvalue_rows_are_listed_by_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.tsv");
    std::fs::write(
        &input,
        "gene\tp_1\tp_2\ng1\t0.5\t0.5\ng2\t0\t0.3\ng3\tx\t0.1\n",
    )
    .unwrap();
    let out = awfisher(&["pvalue", "--input", path_str(&input)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("line 4"), "{err}");
}

#[test]
fn oracle_two_studies() {
    let out = awfisher(&["oracle", "--k", "2", "--s-obs", "0.01"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let p: f64 = stdout(&out).trim().parse().unwrap();
    assert!((p - 0.0221).abs() < 1e-4, "{p}");
}

#[test]
fn bundled_library_passes_calibration_check() {
    let out = awfisher(&["oracle", "--calibration-check"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let dev: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_abs_log10_dev\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev < 0.05, "{text}");
}

#[test]
fn build_lib_rejects_inverted_range() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("x.awflib");
    let out = awfisher(&[
        "build-lib",
        "--kmin",
        "4",
        "--kmax",
        "3",
        "--samples",
        "1000",
        "--out",
        path_str(&lib),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!lib.exists());
}

#[test]
fn simulate_rejects_fractions_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = awfisher(&[
        "simulate",
        "--scenario",
        "categorization",
        "--homo-fraction",
        "0.6",
        "--ssp-fraction",
        "0.6",
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn simulate_default_pattern_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = awfisher(&[
        "simulate",
        "--scenario",
        "categorization",
        "--n",
        "3",
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let truth = std::fs::read_to_string(dir.path().join("truth.tsv")).unwrap();
    let labels: Vec<String> = tsv_rows(&truth)
        .into_iter()
        .map(|r| r["label"].clone())
        .collect();
    assert_eq!(labels.len(), 10_000);
    let homo = labels.iter().filter(|l| l.starts_with("homo")).count();
    let ssp = labels.iter().filter(|l| l.starts_with("ssp")).count();
    let null = labels.iter().filter(|l| *l == "nonDE").count();
    assert_eq!((homo, ssp, null), (400, 400, 9200));
    for i in 1..=4 {
        assert!(dir.path().join(format!("study{i}.tsv")).exists());
    }
}

fn small_dataset(dir: &Path) -> Vec<String> {
    let out = awfisher(&[
        "simulate",
        "--scenario",
        "categorization",
        "--genes",
        "200",
        "--n",
        "15",
        "--seed",
        "4",
        "--out-dir",
        path_str(dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (1..=4)
        .map(|i| path_str(&dir.join(format!("study{i}.tsv"))).to_string())
        .collect()
}

fn analyze(studies: &[String], extra: &[&str], out_dir: &Path) -> Output {
    let mut args = vec!["analyze", "--studies"];
    args.extend(studies.iter().map(String::as_str));
    args.extend(extra);
    args.extend(["--out-dir", path_str(out_dir)]);
    awfisher(&args)
}

#[test]
fn fdr_one_declares_every_gene() {
    let data = tempfile::tempdir().unwrap();
    let studies = small_dataset(data.path());
    let out_dir = tempfile::tempdir().unwrap();
    let out = analyze(&studies, &["--fdr", "1.0"], out_dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(manifest_value(out_dir.path(), "de_genes"), "200");
}

#[test]
fn results_weights_rederive_statistic() {
    let data = tempfile::tempdir().unwrap();
    let studies = small_dataset(data.path());
    let out_dir = tempfile::tempdir().unwrap();
    let out = analyze(
        &studies,
        &["--bootstrap", "50", "--modules", "2", "--seed", "8"],
        out_dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(out_dir.path().join("results.tsv")).unwrap();
    let rows = tsv_rows(&text);
    assert_eq!(rows.len(), 200);
    for r in &rows {
        let p: Vec<f64> = (1..=4)
            .map(|i| r[&format!("p_{i}")].parse().unwrap())
            .collect();
        let bits: Vec<bool> = r["weights"].chars().map(|c| c == '1').collect();
        let df = 2 * bits.iter().filter(|&&b| b).count();
        let w = WeightVector::new(bits).unwrap();
        let expect = chi2_sf(fisher_stat(&p, &w).unwrap(), df).unwrap();
        let got: f64 = r["statistic"].parse().unwrap();
        assert!(
            (got - expect).abs() <= 1e-10,
            "{}: {got} vs {expect}",
            r["gene"]
        );
        let u: f64 = r["U_1"].parse().unwrap();
        assert!((0.0..=1.0).contains(&u));
    }
    for f in [
        "variability.tsv",
        "comembership.tsv",
        "modules.tsv",
        "manifest.tsv",
    ] {
        assert!(out_dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn single_class_study_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("a.tsv");
    let two = dir.path().join("b.tsv");
    std::fs::write(&one, "label\t0\t0\t0\t0\ng1\t1\t2\t3\t4\ng2\t2\t3\t4\t5\n").unwrap();
    std::fs::write(&two, "label\t0\t0\t1\t1\ng1\t1\t2\t3\t4\ng2\t2\t3\t4\t5\n").unwrap();
    let out_dir = dir.path().join("out");
    let studies = [path_str(&one).to_string(), path_str(&two).to_string()];
    let out = analyze(&studies, &[], &out_dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("a"), "{}", stderr(&out));
}

#[test]
fn zero_threads_is_rejected() {
    let out = awfisher(&["--threads", "0", "oracle", "--k", "2", "--s-obs", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}
