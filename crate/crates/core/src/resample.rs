//! Per-study differential expression, stratified bootstrap, and the
//! stability summaries built on it.
//!
//! Each bootstrap replicate resamples columns within class, recomputes every
//! study's p-values and effect signs, and reruns the weight search per gene.
//! Two summaries come out of the same pass:
//!
//! * the variability index `U_gk = 4 m (1 - m)`, where `m` is the fraction
//!   of replicates that include study k for gene g;
//! * the co-membership matrix `V`, the fraction of replicates in which two
//!   DE genes share the same full signed weight vector.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::beta::checked_beta_reg;

use crate::aw::PrefixSearch;
use crate::error::{invalid, AwError, Result};
use crate::rng::{stream_rng, TAG_BOOT};

pub const MIN_BOOTSTRAP: usize = 50;

/// One study: a genes-by-samples matrix with binary class labels
/// (0 control, 1 case).
#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    study_id: String,
    gene_ids: Vec<String>,
    labels: Vec<u8>,
    /// Row-major, one row per gene.
    expr: Vec<f64>,
}

impl StudyData {
    pub fn new(
        study_id: impl Into<String>,
        gene_ids: Vec<String>,
        labels: Vec<u8>,
        expr: Vec<f64>,
    ) -> Result<Self> {
        let study_id = study_id.into();
        let n = labels.len();
        if labels.iter().any(|&l| l > 1) {
            return invalid(format!("study {study_id}: labels must be 0 or 1"));
        }
        let cases = labels.iter().filter(|&&l| l == 1).count();
        if cases == 0 || cases == n {
            return invalid(format!(
                "study {study_id}: both case and control samples are required"
            ));
        }
        if gene_ids.is_empty() {
            return invalid(format!("study {study_id}: no genes"));
        }
        if expr.len() != gene_ids.len() * n {
            return Err(AwError::DimensionMismatch {
                expected: gene_ids.len() * n,
                got: expr.len(),
            });
        }
        if let Some(i) = expr.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "study {study_id}: non-finite value for gene {} sample {}",
                gene_ids[i / n],
                i % n + 1
            ));
        }
        Ok(Self {
            study_id,
            gene_ids,
            labels,
            expr,
        })
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, g: usize) -> &[f64] {
        let n = self.n_samples();
        &self.expr[g * n..(g + 1) * n]
    }

    fn class_columns(&self) -> ColumnPlan {
        let mut plan = ColumnPlan::default();
        for (i, &l) in self.labels.iter().enumerate() {
            if l == 1 {
                plan.case.push(i);
            } else {
                plan.control.push(i);
            }
        }
        plan
    }
}

/// Which columns feed each class; repeated entries come from resampling.
#[derive(Debug, Clone, Default)]
struct ColumnPlan {
    case: Vec<usize>,
    control: Vec<usize>,
}

/// Per-gene test results for one study.
#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    pub p: Vec<f64>,
    /// Mean(case) minus mean(control).
    pub theta: Vec<f64>,
    /// Genes whose test was degenerate (tiny class or zero variance).
    pub degenerate: Vec<bool>,
}

fn mean_var(row: &[f64], cols: &[usize]) -> (f64, f64) {
    let n = cols.len() as f64;
    let mean = cols.iter().map(|&c| row[c]).sum::<f64>() / n;
    if cols.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = cols.iter().map(|&c| (row[c] - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}

/// Two-sided Welch t-test. Returns `(p, theta, degenerate)`.
fn welch(row: &[f64], plan: &ColumnPlan) -> (f64, f64, bool) {
    let (n1, n0) = (plan.case.len(), plan.control.len());
    if n1 < 2 || n0 < 2 {
        return (1.0, 0.0, true);
    }
    let (m1, v1) = mean_var(row, &plan.case);
    let (m0, v0) = mean_var(row, &plan.control);
    let theta = m1 - m0;
    let a = v1 / n1 as f64;
    let b = v0 / n0 as f64;
    let se2 = a + b;
    if !(se2 > 0.0) {
        let p = if theta == 0.0 { 1.0 } else { f64::MIN_POSITIVE };
        return (p, theta, true);
    }
    let t2 = theta * theta / se2;
    let df = se2 * se2 / (a * a / (n1 - 1) as f64 + b * b / (n0 - 1) as f64);
    let p = checked_beta_reg(0.5 * df, 0.5, df / (df + t2)).unwrap_or(f64::NAN);
    let p = if p.is_nan() {
        1.0
    } else {
        p.clamp(f64::MIN_POSITIVE, 1.0)
    };
    (p, theta, false)
}

fn de_with_plan(study: &StudyData, plan: &ColumnPlan, out: &mut DeResult) {
    out.p.clear();
    out.theta.clear();
    out.degenerate.clear();
    for g in 0..study.n_genes() {
        let (p, t, d) = welch(study.row(g), plan);
        out.p.push(p);
        out.theta.push(t);
        out.degenerate.push(d);
    }
}

/// Welch two-sample t-test for every gene of a study.
pub fn de_test(study: &StudyData) -> DeResult {
    let mut out = DeResult {
        p: Vec::new(),
        theta: Vec::new(),
        degenerate: Vec::new(),
    };
    de_with_plan(study, &study.class_columns(), &mut out);
    out
}

/// Welch tests with the class labels replaced, e.g. by a permutation.
pub(crate) fn de_test_with_labels(study: &StudyData, labels: &[u8]) -> DeResult {
    let mut plan = ColumnPlan::default();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            plan.case.push(i);
        } else {
            plan.control.push(i);
        }
    }
    let mut out = DeResult {
        p: Vec::new(),
        theta: Vec::new(),
        degenerate: Vec::new(),
    };
    de_with_plan(study, &plan, &mut out);
    out
}

/// For each column, a same-class column drawn with replacement.
fn draw_plan(study: &StudyData, rng: &mut ChaCha8Rng) -> (Vec<usize>, ColumnPlan) {
    let classes = study.class_columns();
    let mut mapping = Vec::with_capacity(study.n_samples());
    let mut plan = ColumnPlan::default();
    for &l in study.labels() {
        let pool = if l == 1 {
            &classes.case
        } else {
            &classes.control
        };
        let c = pool[rng.random_range(0..pool.len())];
        mapping.push(c);
        if l == 1 {
            plan.case.push(c);
        } else {
            plan.control.push(c);
        }
    }
    (mapping, plan)
}

fn warn_small_classes(studies: &[StudyData]) {
    for s in studies {
        let cases = s.labels().iter().filter(|&&l| l == 1).count();
        if cases < 2 || s.n_samples() - cases < 2 {
            log::warn!(
                "study {} has a class with fewer than 2 samples; its bootstrap is degenerate",
                s.study_id()
            );
        }
    }
}

/// Materialized stratified bootstrap replicate of every study.
pub fn bootstrap_once(studies: &[StudyData], seed: u64) -> Result<Vec<StudyData>> {
    check_studies(studies)?;
    warn_small_classes(studies);
    let mut rng = stream_rng(seed, &[TAG_BOOT]);
    studies
        .iter()
        .map(|s| {
            let (mapping, _) = draw_plan(s, &mut rng);
            let mut expr = Vec::with_capacity(s.expr.len());
            for g in 0..s.n_genes() {
                let row = s.row(g);
                expr.extend(mapping.iter().map(|&c| row[c]));
            }
            StudyData::new(
                s.study_id.clone(),
                s.gene_ids.clone(),
                s.labels.clone(),
                expr,
            )
        })
        .collect()
}

fn check_studies(studies: &[StudyData]) -> Result<()> {
    if studies.len() < 2 {
        return invalid(format!("need at least 2 studies, got {}", studies.len()));
    }
    let ids = studies[0].gene_ids();
    for s in &studies[1..] {
        if s.gene_ids() != ids {
            return invalid(format!(
                "study {} lists different genes (or a different order) than study {}",
                s.study_id(),
                studies[0].study_id()
            ));
        }
    }
    Ok(())
}

/// `U_gk`, row-major genes by studies.
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityIndex {
    pub u: Vec<f64>,
    pub n_genes: usize,
    pub n_studies: usize,
    pub b_count: usize,
    /// Replicates that included each (gene, study); `u` is derived from these.
    pub include_counts: Vec<u32>,
}

impl VariabilityIndex {
    pub fn row(&self, g: usize) -> &[f64] {
        &self.u[g * self.n_studies..(g + 1) * self.n_studies]
    }

    pub fn mean_row(&self, g: usize) -> f64 {
        self.row(g).iter().sum::<f64>() / self.n_studies as f64
    }
}

/// Symmetric co-membership fractions over the DE genes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoMembership {
    pub gene_ids: Vec<String>,
    /// Row-major, `gene_ids.len()` squared entries.
    pub v: Vec<f64>,
    pub b_count: usize,
}

impl CoMembership {
    pub fn len(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gene_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.v[i * n..(i + 1) * n]
    }

    /// Reorders rows and columns; `order[i]` is the old index of new row i.
    pub fn permuted(&self, order: &[usize]) -> CoMembership {
        let n = self.len();
        let mut v = Vec::with_capacity(n * n);
        for &i in order {
            for &j in order {
                v.push(self.get(i, j));
            }
        }
        CoMembership {
            gene_ids: order.iter().map(|&i| self.gene_ids[i].clone()).collect(),
            v,
            b_count: self.b_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub variability: VariabilityIndex,
    pub comembership: Option<CoMembership>,
}

struct Accum {
    include: Vec<u32>,
    pairs: Vec<u32>,
}

impl Accum {
    fn new(genes: usize, k: usize, de: usize) -> Self {
        Accum {
            include: vec![0; genes * k],
            pairs: vec![0; de * de.saturating_sub(1) / 2],
        }
    }

    fn merge(mut self, other: Accum) -> Accum {
        for (a, b) in self.include.iter_mut().zip(other.include) {
            *a += b;
        }
        for (a, b) in self.pairs.iter_mut().zip(other.pairs) {
            *a += b;
        }
        self
    }
}

/// Index of pair (i, j), i < j, in a packed upper triangle of size n.
#[inline]
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

fn run_replicate(studies: &[StudyData], de_genes: &[usize], seed: u64, b: usize, acc: &mut Accum) {
    let k = studies.len();
    let genes = studies[0].n_genes();
    let mut rng = stream_rng(seed, &[TAG_BOOT, b as u64]);
    let results: Vec<DeResult> = studies
        .iter()
        .map(|s| {
            let (_, plan) = draw_plan(s, &mut rng);
            let mut out = DeResult {
                p: Vec::new(),
                theta: Vec::new(),
                degenerate: Vec::new(),
            };
            de_with_plan(s, &plan, &mut out);
            out
        })
        .collect();

    let mut search = PrefixSearch::new();
    let mut e = vec![0.0; k];
    let mut weights = vec![false; k];
    let mut gene_weights = |g: usize, weights: &mut [bool]| {
        for (x, r) in e.iter_mut().zip(&results) {
            *x = -r.p[g].ln();
        }
        let (_, k0) = search.run(&e);
        weights.iter_mut().for_each(|w| *w = false);
        for &i in &search.order()[..k0] {
            weights[i] = true;
        }
    };
    let mut signed_of_de: Vec<Vec<i8>> = Vec::with_capacity(de_genes.len());
    let mut de_cursor = 0;
    for g in 0..genes {
        gene_weights(g, &mut weights);
        for (kk, &w) in weights.iter().enumerate() {
            acc.include[g * k + kk] += u32::from(w);
        }
        if de_cursor < de_genes.len() && de_genes[de_cursor] == g {
            let signed = weights
                .iter()
                .zip(&results)
                .map(|(&w, r)| {
                    if !w {
                        0
                    } else {
                        r.theta[g].partial_cmp(&0.0).map_or(0, |o| o as i8)
                    }
                })
                .collect();
            signed_of_de.push(signed);
            de_cursor += 1;
        }
    }

    if de_genes.len() < 2 {
        return;
    }
    let mut groups: HashMap<&[i8], Vec<usize>> = HashMap::new();
    for (i, s) in signed_of_de.iter().enumerate() {
        groups.entry(s.as_slice()).or_default().push(i);
    }
    let n = de_genes.len();
    for members in groups.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                acc.pairs[pair_index(n, i, j)] += 1;
            }
        }
    }
}

/// Variability index and, when DE genes are given, their co-membership, from
/// one pass of `b` bootstrap replicates. `de_genes` are row indices and must
/// be strictly increasing.
pub fn bootstrap_summary(
    studies: &[StudyData],
    de_genes: Option<&[usize]>,
    b: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    check_studies(studies)?;
    if b < MIN_BOOTSTRAP {
        return invalid(format!(
            "need at least {MIN_BOOTSTRAP} bootstrap replicates, got {b}"
        ));
    }
    let genes = studies[0].n_genes();
    let de: &[usize] = de_genes.unwrap_or(&[]);
    if de.windows(2).any(|w| w[1] <= w[0]) || de.last().is_some_and(|&g| g >= genes) {
        return invalid("DE gene indices must be strictly increasing row indices");
    }
    if de_genes.is_some() && de.is_empty() {
        return invalid("co-membership needs at least one DE gene");
    }
    warn_small_classes(studies);
    let k = studies.len();
    let acc = (0..b)
        .into_par_iter()
        .fold(
            || Accum::new(genes, k, de.len()),
            |mut acc, rep| {
                run_replicate(studies, de, seed, rep, &mut acc);
                acc
            },
        )
        .reduce(|| Accum::new(genes, k, de.len()), Accum::merge);

    let bf = b as f64;
    let u = acc
        .include
        .iter()
        .map(|&c| {
            let c = c as f64;
            4.0 * c * (bf - c) / (bf * bf)
        })
        .collect();
    let variability = VariabilityIndex {
        u,
        n_genes: genes,
        n_studies: k,
        b_count: b,
        include_counts: acc.include,
    };

    let comembership = de_genes.map(|de| {
        let n = de.len();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
            for j in i + 1..n {
                let x = acc.pairs[pair_index(n, i, j)] as f64 / bf;
                v[i * n + j] = x;
                v[j * n + i] = x;
            }
        }
        let ids = studies[0].gene_ids();
        CoMembership {
            gene_ids: de.iter().map(|&g| ids[g].clone()).collect(),
            v,
            b_count: b,
        }
    });
    Ok(BootstrapSummary {
        variability,
        comembership,
    })
}

pub fn variability_index(studies: &[StudyData], b: usize, seed: u64) -> Result<VariabilityIndex> {
    Ok(bootstrap_summary(studies, None, b, seed)?.variability)
}

pub fn comembership(
    studies: &[StudyData],
    de_genes: &[usize],
    b: usize,
    seed: u64,
) -> Result<CoMembership> {
    Ok(bootstrap_summary(studies, Some(de_genes), b, seed)?
        .comembership
        .expect("DE genes were supplied"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn study(id: &str, rows: &[Vec<f64>], labels: Vec<u8>) -> StudyData {
        let ids = (0..rows.len()).map(|g| format!("g{g}")).collect();
        StudyData::new(id, ids, labels, rows.concat()).unwrap()
    }

    #[test]
    fn identical_classes_give_p_one() {
        let s = study("a", &[vec![1.0, 1.0, 1.0, 1.0]], vec![0, 0, 1, 1]);
        let r = de_test(&s);
        assert_eq!(r.p[0], 1.0);
        assert_eq!(r.theta[0], 0.0);
        assert!(r.degenerate[0]);
        let s = study("b", &[vec![1.0, 1.0, 2.0, 2.0]], vec![0, 0, 1, 1]);
        let r = de_test(&s);
        assert_eq!(r.p[0], f64::MIN_POSITIVE);
        assert_eq!(r.theta[0], 1.0);
    }

    #[test]
    fn welch_matches_hand_computation() {
        // case (4,5,6,9) mean 6 var 14/3; control (1,2,3) mean 2 var 1.
        // t = 4 / sqrt(14/12 + 1/3) = 3.2660; df = 1.5^2 / ((7/6)^2/3 + (1/3)^2/2) = 4.4182.
        let s = study(
            "w",
            &[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0]],
            vec![0, 0, 0, 1, 1, 1, 1],
        );
        let r = de_test(&s);
        assert!((r.theta[0] - 4.0).abs() < 1e-12);
        let t: f64 = 4.0 / (14.0f64 / 12.0 + 1.0 / 3.0).sqrt();
        let df = 1.5f64.powi(2) / ((7.0f64 / 6.0).powi(2) / 3.0 + (1.0f64 / 3.0).powi(2) / 2.0);
        assert!((t - 3.265986).abs() < 1e-6 && (df - 4.418182).abs() < 1e-5);
        // Two-sided p from the t(4.418) distribution, computed independently.
        assert!((r.p[0] - 0.026_718_655).abs() < 1e-8, "{}", r.p[0]);
    }

    #[test]
    fn tiny_class_is_flagged() {
        let s = study("t", &[vec![1.0, 2.0, 3.0, 8.0]], vec![0, 0, 0, 1]);
        let r = de_test(&s);
        assert_eq!((r.p[0], r.theta[0], r.degenerate[0]), (1.0, 0.0, true));
    }

    #[test]
    fn bootstrap_keeps_classes_and_singletons() {
        let row = vec![10.0, 1.0, 2.0, 3.0, 4.0];
        let s1 = study("a", std::slice::from_ref(&row), vec![1, 0, 0, 0, 0]);
        let s2 = study("b", &[row], vec![1, 0, 0, 1, 1]);
        for seed in 0..20 {
            let r = bootstrap_once(&[s1.clone(), s2.clone()], seed).unwrap();
            assert_eq!(r[0].labels(), s1.labels());
            assert_eq!(r[0].row(0)[0], 10.0);
            for (v, &l) in r[1].row(0).iter().zip(r[1].labels()) {
                assert_eq!(l == 1, [10.0, 3.0, 4.0].contains(v));
            }
        }
    }

    #[test]
    fn distinct_case_columns_expectation() {
        let row: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let s = study("a", &[row], vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let mut total = 0.0;
        let b = 1000;
        for seed in 0..b {
            let r = bootstrap_once(&[s.clone(), s.clone()], seed).unwrap();
            let mut cases: Vec<u64> = r[0].row(0)[4..].iter().map(|v| *v as u64).collect();
            cases.sort();
            cases.dedup();
            total += cases.len() as f64 / 4.0;
        }
        let expect = 1.0 - 0.75f64.powi(4);
        assert!((total / b as f64 - expect).abs() < 0.02);
    }

    fn random_studies(seed: u64, genes: usize, shift: &[f64]) -> Vec<StudyData> {
        let mut rng = stream_rng(seed, &[99]);
        shift
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let mut rows = Vec::new();
                for g in 0..genes {
                    let row: Vec<f64> = (0..20)
                        .map(|i| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z + if i >= 10 && g < genes / 2 { d } else { 0.0 }
                        })
                        .collect();
                    rows.push(row);
                }
                let labels = (0..20).map(|i| u8::from(i >= 10)).collect();
                study(&format!("s{k}"), &rows, labels)
            })
            .collect()
    }

    #[test]
    fn variability_identity_and_bounds() {
        let studies = random_studies(3, 12, &[1.5, 0.3, -1.0]);
        let v = variability_index(&studies, 60, 5).unwrap();
        for (u, &c) in v.u.iter().zip(&v.include_counts) {
            let m = c as f64 / 60.0;
            assert!((u - 4.0 * m * (1.0 - m)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(u));
        }
    }

    #[test]
    fn comembership_structure() {
        let studies = random_studies(4, 10, &[3.0, 3.0]);
        let de: Vec<usize> = (0..10).collect();
        let c = comembership(&studies, &de, 50, 1).unwrap();
        for i in 0..10 {
            assert_eq!(c.get(i, i), 1.0);
            for j in 0..10 {
                assert_eq!(c.get(i, j), c.get(j, i));
                let scaled = c.get(i, j) * 50.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
        // Strong shared effects: the DE half co-clusters almost always.
        assert!(c.get(0, 1) >= 0.8);
    }

    #[test]
    fn opposite_signs_never_comember() {
        let up = vec![0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let down = vec![10.0, 10.1, 10.2, 0.0, 0.1, 0.2];
        let labels = vec![0, 0, 0, 1, 1, 1];
        let s1 = study("a", &[up.clone(), down.clone()], labels.clone());
        let s2 = study("b", &[up, down], labels);
        let c = comembership(&[s1, s2], &[0, 1], 50, 2).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
    }

    #[test]
    fn result_does_not_depend_on_thread_count() {
        let studies = random_studies(8, 16, &[1.0, 0.5, 0.2]);
        let de: Vec<usize> = (0..8).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap_summary(&studies, Some(&de), 64, 3).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_bad_input() {
        let s = study("a", &[vec![1.0, 2.0, 3.0, 4.0]], vec![0, 0, 1, 1]);
        assert!(variability_index(&[s.clone(), s.clone()], 10, 1).is_err());
        assert!(variability_index(std::slice::from_ref(&s), 60, 1).is_err());
        assert!(StudyData::new("x", vec!["g".into()], vec![1, 1], vec![1.0, 2.0]).is_err());
    }
}
