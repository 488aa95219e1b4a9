//! End-to-end pipelines: p-value tables to meta p-values, and expression
//! studies to DE genes, variability, co-membership and modules.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use awfisher::aw::{
    signed_weights, EffectSizeVector, PrefixSearch, SignedWeightVector, WeightVector,
};
use awfisher::categorize::{
    module_report, tight_cluster, ModuleAssignment, ReportRow, TightParams,
};
use awfisher::fdr::bh_qvalues;
use awfisher::interpolation::{LibraryInterpolator, StatLibrary};
use awfisher::resample::{bootstrap_summary, de_test, BootstrapSummary, StudyData};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::format::{full, pval, sig, stat};
use crate::tsv::{manifest_text, write_text};
use crate::DESK_LIBRARY;

pub const LIB_ENV: &str = "AWFISHER_LIB";

/// Library from an explicit path, else from `AWFISHER_LIB`, else the shipped
/// desk library.
pub fn resolve_library(path: Option<&Path>) -> CliResult<StatLibrary> {
    let from_env = std::env::var_os(LIB_ENV).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(from_env) {
        Some(p) => Ok(awfisher::interpolation::load_library(&p)?),
        None => Ok(StatLibrary::parse(DESK_LIBRARY)?),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaRow {
    pub gene: String,
    pub p: Vec<f64>,
    pub statistic: f64,
    pub log_statistic: f64,
    pub weights: WeightVector,
    pub meta_p: f64,
    pub q_value: f64,
}

/// AW statistic, weights, meta p-value and BH q-value for every gene.
pub fn meta_analyze(
    genes: &[String],
    p_rows: &[Vec<f64>],
    interp: &LibraryInterpolator,
) -> CliResult<Vec<MetaRow>> {
    if genes.len() != p_rows.len() {
        return Err(CliError::Input("gene and p-value row counts differ".into()));
    }
    let rows: Vec<CliResult<MetaRow>> = p_rows
        .par_iter()
        .zip(genes)
        .map_init(PrefixSearch::new, |search, (p, gene)| {
            let e: Vec<f64> = p.iter().map(|x| -x.ln()).collect();
            let r = awfisher::aw::aw_search_neglog(&e, search)?;
            let meta_p = interp.pvalue_from_ln(p.len(), r.log_statistic)?;
            Ok(MetaRow {
                gene: gene.clone(),
                p: p.clone(),
                statistic: r.statistic,
                log_statistic: r.log_statistic,
                weights: r.weights,
                meta_p,
                q_value: 1.0,
            })
        })
        .collect();
    let mut rows: Vec<MetaRow> = rows.into_iter().collect::<CliResult<_>>()?;
    if !rows.is_empty() {
        let meta: Vec<f64> = rows.iter().map(|r| r.meta_p).collect();
        for (r, q) in rows.iter_mut().zip(bh_qvalues(&meta)?) {
            r.q_value = q;
        }
    }
    Ok(rows)
}

pub fn pvalue_output_text(rows: &[MetaRow]) -> String {
    let mut out = String::from("gene\tstatistic\tlog_statistic\tweights\tmeta_p\tq_value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.gene,
            stat(r.statistic),
            stat(r.log_statistic),
            r.weights,
            pval(r.meta_p),
            stat(r.q_value)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub fdr: f64,
    /// Bootstrap replicates; 0 skips variability and co-membership.
    pub bootstrap: usize,
    /// Target module count; 0 skips clustering.
    pub modules: usize,
    pub seed: u64,
    pub tight: TightParams,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            fdr: 0.05,
            bootstrap: 0,
            modules: 0,
            seed: 1,
            tight: TightParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub k: usize,
    pub rows: Vec<MetaRow>,
    pub signed: Vec<SignedWeightVector>,
    /// Row indices of genes with q-value at or below the FDR level.
    pub de: Vec<usize>,
    pub bootstrap: Option<BootstrapSummary>,
    pub assignment: Option<ModuleAssignment>,
    pub report: Option<Vec<ReportRow>>,
    pub warnings: Vec<String>,
}

impl AnalysisOutput {
    /// Module label of a gene row, if clustering ran and the gene is DE.
    pub fn module_of(&self, g: usize) -> Option<usize> {
        let a = self.assignment.as_ref()?;
        self.de.binary_search(&g).ok().map(|i| a.labels[i])
    }
}

pub fn analyze(
    studies: &[StudyData],
    interp: &LibraryInterpolator,
    opts: &AnalyzeOptions,
) -> CliResult<AnalysisOutput> {
    if studies.len() < 2 {
        return Err(CliError::Input(format!(
            "need at least 2 studies, got {}",
            studies.len()
        )));
    }
    let genes = studies[0].gene_ids().to_vec();
    for s in &studies[1..] {
        if s.gene_ids() != genes.as_slice() {
            return Err(CliError::Input(format!(
                "study {} has a different gene set or order than study {}",
                s.study_id(),
                studies[0].study_id()
            )));
        }
    }
    if !(opts.fdr > 0.0 && opts.fdr <= 1.0) {
        return Err(CliError::Input(format!(
            "--fdr must lie in (0, 1], got {}",
            opts.fdr
        )));
    }
    if opts.modules > 0 && opts.bootstrap == 0 {
        return Err(CliError::Input(
            "--modules needs --bootstrap to build the co-membership matrix".into(),
        ));
    }
    let k = studies.len();
    let tests: Vec<_> = studies.par_iter().map(de_test).collect();
    let mut warnings = Vec::new();
    for (s, t) in studies.iter().zip(&tests) {
        let flagged = t.degenerate.iter().filter(|&&d| d).count();
        if flagged > 0 {
            let w = format!(
                "study {}: {flagged} gene(s) with a degenerate test",
                s.study_id()
            );
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    let p_rows: Vec<Vec<f64>> = (0..genes.len())
        .map(|g| tests.iter().map(|t| t.p[g]).collect())
        .collect();
    let rows = meta_analyze(&genes, &p_rows, interp)?;
    let signed = rows
        .iter()
        .enumerate()
        .map(|(g, r)| {
            let theta = EffectSizeVector::new(tests.iter().map(|t| t.theta[g]).collect())?;
            signed_weights(&r.weights, &theta)
        })
        .collect::<awfisher::Result<Vec<_>>>()?;
    let de: Vec<usize> = (0..rows.len())
        .filter(|&g| rows[g].q_value <= opts.fdr)
        .collect();

    let mut bootstrap = None;
    let mut assignment = None;
    let mut report = None;
    if opts.bootstrap > 0 {
        let de_arg = if de.is_empty() {
            log::warn!("no DE genes at this FDR level; co-membership skipped");
            warnings.push("no DE genes at this FDR level; co-membership skipped".into());
            None
        } else {
            Some(de.as_slice())
        };
        let summary = bootstrap_summary(studies, de_arg, opts.bootstrap, opts.seed)?;
        if opts.modules > 0 {
            match &summary.comembership {
                Some(v) if v.len() >= 2 * opts.modules => {
                    let a = tight_cluster(v, opts.modules, &opts.tight, opts.seed)?;
                    warnings.extend(a.warnings.iter().cloned());
                    let u: Vec<Vec<f64>> = de
                        .iter()
                        .map(|&g| summary.variability.row(g).to_vec())
                        .collect();
                    let sw: Vec<SignedWeightVector> =
                        de.iter().map(|&g| signed[g].clone()).collect();
                    report = Some(module_report(&a, &u, &sw)?);
                    assignment = Some(a);
                }
                _ => {
                    let w = format!(
                        "{} DE gene(s) are too few for {} modules; clustering skipped",
                        de.len(),
                        opts.modules
                    );
                    log::warn!("{w}");
                    warnings.push(w);
                }
            }
        }
        bootstrap = Some(summary);
    }
    Ok(AnalysisOutput {
        k,
        rows,
        signed,
        de,
        bootstrap,
        assignment,
        report,
        warnings,
    })
}

fn signed_cells(v: &SignedWeightVector) -> String {
    v.as_slice()
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("\t")
}

pub fn results_text(out: &AnalysisOutput) -> String {
    let k = out.k;
    let mut header: Vec<String> = vec!["gene".into()];
    header.extend((1..=k).map(|i| format!("p_{i}")));
    header.extend(
        [
            "statistic",
            "log_statistic",
            "meta_p",
            "q_value",
            "weights",
            "signed_weights",
        ]
        .map(String::from),
    );
    if out.bootstrap.is_some() {
        header.extend((1..=k).map(|i| format!("U_{i}")));
    }
    if out.assignment.is_some() {
        header.push("module".into());
    }
    let mut text = header.join("\t");
    text.push('\n');
    for (g, r) in out.rows.iter().enumerate() {
        let mut f: Vec<String> = vec![r.gene.clone()];
        f.extend(r.p.iter().map(|&p| full(p)));
        f.push(stat(r.statistic));
        f.push(stat(r.log_statistic));
        f.push(pval(r.meta_p));
        f.push(stat(r.q_value));
        f.push(r.weights.to_string());
        f.push(out.signed[g].to_string());
        if let Some(b) = &out.bootstrap {
            f.extend(b.variability.row(g).iter().map(|&u| sig(u, 6)));
        }
        if out.assignment.is_some() {
            f.push(
                out.module_of(g)
                    .map_or_else(|| "NA".to_string(), |m| m.to_string()),
            );
        }
        text.push_str(&f.join("\t"));
        text.push('\n');
    }
    text
}

pub fn write_analysis(
    dir: &Path,
    out: &AnalysisOutput,
    manifest: &[(String, String)],
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_text(&dir.join("results.tsv"), &results_text(out))?;
    if let Some(b) = &out.bootstrap {
        let k = out.k;
        let mut t = String::from("gene");
        for i in 1..=k {
            let _ = write!(t, "\tU_{i}");
        }
        t.push_str("\tmean_U\n");
        for (g, r) in out.rows.iter().enumerate() {
            t.push_str(&r.gene);
            for &u in b.variability.row(g) {
                let _ = write!(t, "\t{}", sig(u, 6));
            }
            let _ = writeln!(t, "\t{}", sig(b.variability.mean_row(g), 6));
        }
        write_text(&dir.join("variability.tsv"), &t)?;
        if let Some(v) = &b.comembership {
            let mut t = String::from("gene");
            for id in &v.gene_ids {
                let _ = write!(t, "\t{id}");
            }
            t.push('\n');
            for (i, id) in v.gene_ids.iter().enumerate() {
                t.push_str(id);
                for &x in v.row(i) {
                    let _ = write!(t, "\t{}", sig(x, 6));
                }
                t.push('\n');
            }
            write_text(&dir.join("comembership.tsv"), &t)?;
        }
    }
    if let Some(rows) = &out.report {
        let k = out.k;
        let mut t = String::from("gene\tmodule\tmean_U");
        for i in 1..=k {
            let _ = write!(t, "\tv_{i}");
        }
        t.push_str("\trepresentative\n");
        for r in rows {
            let _ = writeln!(
                t,
                "{}\t{}\t{}\t{}\t{}",
                r.gene_id,
                r.module,
                sig(r.mean_u, 6),
                signed_cells(&r.signed),
                r.representative
            );
        }
        write_text(&dir.join("modules.tsv"), &t)?;
    }
    write_text(&dir.join("manifest.tsv"), &manifest_text(manifest))
}

/// Exact (K = 2) or numeric (K = 3) tail probability.
pub fn oracle_pvalue(k: usize, s_obs: f64) -> CliResult<f64> {
    match k {
        2 => Ok(awfisher::oracle::pvalue_exact_k2(s_obs)?),
        3 => Ok(awfisher::oracle::pvalue_numeric_k3(s_obs, 256)?),
        _ => Err(CliError::Input(format!("--k must be 2 or 3, got {k}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReport {
    pub points: usize,
    /// Largest |log10 interpolated - log10 exact|.
    pub max_dev: f64,
    /// Statistic value where the largest deviation occurs.
    pub worst_s: f64,
}

/// Compares K = 2 library p-values with the exact oracle at every knot and at
/// the log-midpoint between neighbouring knots.
pub fn calibration_check(lib: &StatLibrary) -> CliResult<CalibrationReport> {
    if !lib.contains_k(2) {
        return Err(CliError::Input("library has no K = 2 cells".into()));
    }
    let interp = LibraryInterpolator::new(lib)?;
    let knots = lib.knots(2)?;
    let mut probes: Vec<f64> = knots.iter().map(|&(ls, _)| ls).collect();
    probes.extend(knots.windows(2).map(|w| 0.5 * (w[0].0 + w[1].0)));
    let mut report = CalibrationReport {
        points: probes.len(),
        max_dev: 0.0,
        worst_s: f64::NAN,
    };
    for ls in probes {
        let s = ls.exp();
        let got = interp.pvalue_from_ln(2, ls)?;
        let exact = awfisher::oracle::pvalue_exact_k2(s)?;
        let dev = (got.log10() - exact.log10()).abs();
        if !(dev <= report.max_dev) {
            report.max_dev = dev;
            report.worst_s = s;
        }
    }
    Ok(report)
}

pub fn truth_text(truth: &awfisher::simulate::Truth, genes: &[String]) -> String {
    let mut t = String::from("gene\tlabel");
    for i in 1..=truth.n_studies {
        let _ = write!(t, "\tsign_{i}");
    }
    t.push('\n');
    for (g, id) in genes.iter().enumerate() {
        let _ = write!(t, "{id}\t{}", truth.labels[g].name());
        for s in truth.signs_of(g) {
            let _ = write!(t, "\t{s}");
        }
        t.push('\n');
    }
    t
}

/// Writes `study<i>.tsv` for each study plus `truth.tsv` and the manifest.
pub fn write_simulation(
    dir: &Path,
    data: &awfisher::simulate::SimulatedDataset,
    manifest: &[(String, String)],
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (i, s) in data.studies.iter().enumerate() {
        write_text(
            &dir.join(format!("study{}.tsv", i + 1)),
            &crate::tsv::study_to_text(s),
        )?;
    }
    let genes = data
        .studies
        .first()
        .map(|s| s.gene_ids().to_vec())
        .unwrap_or_default();
    write_text(&dir.join("truth.tsv"), &truth_text(&data.truth, &genes))?;
    write_text(&dir.join("manifest.tsv"), &manifest_text(manifest))
}
