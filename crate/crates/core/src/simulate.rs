//! Synthetic case-control studies with known truth.
//!
//! Two generators: an accuracy design with correlated gene modules and
//! randomly placed effects, and a categorization design with six planted
//! meta-patterns (concordant up/down in all studies, or specific to study 1
//! or 2 in either direction). Each dataset comes from a single random stream,
//! so a config and seed determine it bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::aw::PrefixSearch;
use crate::error::{invalid, AwError, Result};
use crate::resample::{de_test, de_test_with_labels, StudyData};
use crate::rng::{stream_rng, TAG_PERM};

const MODULE_CORR_WEIGHT: f64 = 0.5;
const STUDY_EFFECT_SD: f64 = 0.2;
const TRUNCATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySimConfig {
    pub k: usize,
    pub genes: usize,
    /// Samples per class.
    pub n: usize,
    pub sigma: f64,
    pub module_count: usize,
    pub module_size: usize,
    pub wishart_df: usize,
    /// Leading fraction of genes carrying effects; 0 gives a pure null.
    pub de_fraction: f64,
    pub seed: u64,
}

impl Default for AccuracySimConfig {
    fn default() -> Self {
        AccuracySimConfig {
            k: 2,
            genes: 10_000,
            n: 20,
            sigma: 1.0,
            module_count: 200,
            module_size: 20,
            wishart_df: 60,
            de_fraction: 0.3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorizationSimConfig {
    pub studies: usize,
    pub n: usize,
    pub genes: usize,
    pub homo_fraction: f64,
    pub ssp_fraction: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for CategorizationSimConfig {
    fn default() -> Self {
        CategorizationSimConfig {
            studies: 4,
            n: 50,
            genes: 10_000,
            homo_fraction: 0.04,
            ssp_fraction: 0.04,
            sigma: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TruthLabel {
    NonDe,
    De,
    HomoUp,
    HomoDown,
    Ssp1Up,
    Ssp1Down,
    Ssp2Up,
    Ssp2Down,
}

impl TruthLabel {
    pub fn name(self) -> &'static str {
        match self {
            TruthLabel::NonDe => "nonDE",
            TruthLabel::De => "DE",
            TruthLabel::HomoUp => "homo+",
            TruthLabel::HomoDown => "homo-",
            TruthLabel::Ssp1Up => "ssp1+",
            TruthLabel::Ssp1Down => "ssp1-",
            TruthLabel::Ssp2Up => "ssp2+",
            TruthLabel::Ssp2Down => "ssp2-",
        }
    }

    pub fn is_de(self) -> bool {
        self != TruthLabel::NonDe
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub labels: Vec<TruthLabel>,
    /// Genes by studies, row-major: +1, -1, or 0 for no effect.
    pub signs: Vec<i8>,
    pub n_studies: usize,
}

impl Truth {
    pub fn signs_of(&self, g: usize) -> &[i8] {
        &self.signs[g * self.n_studies..(g + 1) * self.n_studies]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub studies: Vec<StudyData>,
    pub truth: Truth,
}

fn gene_ids(g: usize) -> Vec<String> {
    let width = g.to_string().len().max(5);
    (1..=g).map(|i| format!("g{i:0width$}")).collect()
}

/// Inverse-Wishart draw with scale `0.5 I + 0.5 J` rescaled to a correlation
/// matrix, from the caller's stream.
pub fn inv_wishart_corr_with(rng: &mut ChaCha8Rng, dim: usize, df: usize) -> Result<DMatrix<f64>> {
    if df <= dim + 1 {
        return invalid(format!(
            "inverse-Wishart needs df > dim + 1 (df={df}, dim={dim})"
        ));
    }
    let phi = DMatrix::from_fn(
        dim,
        dim,
        |i, j| if i == j { 1.0 } else { MODULE_CORR_WEIGHT },
    );
    let scale = phi
        .try_inverse()
        .ok_or_else(|| AwError::Numeric("scale matrix is singular".into()))?;
    let l = scale
        .cholesky()
        .ok_or_else(|| AwError::Numeric("scale matrix is not positive definite".into()))?
        .l();
    for _ in 0..100 {
        // Bartlett factor: chi on the diagonal, standard normals below it.
        let mut a = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let chi2 = ChiSquared::new((df - i) as f64).expect("positive df");
            a[(i, i)] = chi2.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let la = &l * a;
        let w = &la * la.transpose();
        let Some(inv) = w.try_inverse() else { continue };
        let d: Vec<f64> = (0..dim).map(|i| inv[(i, i)].sqrt()).collect();
        let mut corr = DMatrix::from_fn(dim, dim, |i, j| inv[(i, j)] / (d[i] * d[j]));
        for i in 0..dim {
            corr[(i, i)] = 1.0;
            for j in 0..i {
                let m = 0.5 * (corr[(i, j)] + corr[(j, i)]);
                corr[(i, j)] = m;
                corr[(j, i)] = m;
            }
        }
        if corr.clone().cholesky().is_some() {
            return Ok(corr);
        }
    }
    Err(AwError::Numeric(
        "could not draw a positive definite correlation matrix".into(),
    ))
}

pub fn sample_inv_wishart_corr(df: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inv_wishart_corr_with(&mut rng, 20, df)
}

/// Normal(1, 1) conditioned on exceeding 0.5, by rejection.
pub fn truncated_effect<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = 1.0 + z;
        if x > TRUNCATION {
            return x;
        }
    }
}

fn study_effect<R: Rng + ?Sized>(rng: &mut R, center: f64) -> f64 {
    Normal::new(center, STUDY_EFFECT_SD)
        .expect("valid sd")
        .sample(rng)
}

fn assemble(ids: &[String], per_study: Vec<Vec<f64>>, n: usize) -> Result<Vec<StudyData>> {
    let labels: Vec<u8> = (0..2 * n).map(|i| u8::from(i >= n)).collect();
    per_study
        .into_iter()
        .enumerate()
        .map(|(k, expr)| {
            StudyData::new(
                format!("study{}", k + 1),
                ids.to_vec(),
                labels.clone(),
                expr,
            )
        })
        .collect()
}

/// Accuracy design: correlated modules of unit-variance genes followed by
/// independent genes, all scaled by `sigma`, with random effects on the
/// leading `de_fraction` of genes.
pub fn gen_accuracy_dataset(cfg: &AccuracySimConfig) -> Result<SimulatedDataset> {
    let AccuracySimConfig {
        k,
        genes,
        n,
        sigma,
        module_count,
        module_size,
        wishart_df,
        de_fraction,
        seed,
    } = *cfg;
    if k < 2 || n < 2 || genes == 0 || !(sigma > 0.0) {
        return invalid("accuracy simulation needs K >= 2, N >= 2, genes > 0 and sigma > 0");
    }
    if module_count * module_size > genes {
        return invalid("modules do not fit in the gene count");
    }
    if !(0.0..1.0).contains(&de_fraction) {
        return invalid(format!("de_fraction must lie in [0, 1), got {de_fraction}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut factors = Vec::with_capacity(module_count * k);
    for _ in 0..module_count {
        for _ in 0..k {
            let corr = inv_wishart_corr_with(&mut rng, module_size, wishart_df)?;
            factors.push(corr.cholesky().expect("checked positive definite").l());
        }
    }

    let g1 = (de_fraction * genes as f64).round() as usize;
    let mut signs = vec![0i8; genes * k];
    let mut effects = vec![0.0; genes * k];
    for g in 0..g1 {
        let v = rng.random_range(1..=k);
        let mut chosen = sample_indices(&mut rng, k, v).into_vec();
        chosen.sort_unstable();
        let center = truncated_effect(&mut rng);
        let study_effects: Vec<f64> = chosen
            .iter()
            .map(|_| study_effect(&mut rng, center))
            .collect();
        let down = rng.random_bool(0.5);
        for (&s, &th) in chosen.iter().zip(&study_effects) {
            signs[g * k + s] = if down { -1 } else { 1 };
            effects[g * k + s] = if down { -th } else { th };
        }
    }

    let cols = 2 * n;
    let module_genes = module_count * module_size;
    let mut per_study = Vec::with_capacity(k);
    for s in 0..k {
        let mut expr = vec![0.0; genes * cols];
        for col in 0..cols {
            for m in 0..module_count {
                let z = DVector::from_fn(module_size, |_, _| StandardNormal.sample(&mut rng));
                let x = &factors[m * k + s] * z;
                for (i, v) in x.iter().enumerate() {
                    expr[(m * module_size + i) * cols + col] = sigma * v;
                }
            }
            for g in module_genes..genes {
                let z: f64 = StandardNormal.sample(&mut rng);
                expr[g * cols + col] = sigma * z;
            }
        }
        for g in 0..g1 {
            let th = effects[g * k + s];
            if th != 0.0 {
                for v in &mut expr[g * cols + n..(g + 1) * cols] {
                    *v += th;
                }
            }
        }
        per_study.push(expr);
    }
    let labels = (0..genes)
        .map(|g| {
            if g < g1 {
                TruthLabel::De
            } else {
                TruthLabel::NonDe
            }
        })
        .collect();
    let ids = gene_ids(genes);
    Ok(SimulatedDataset {
        studies: assemble(&ids, per_study, n)?,
        truth: Truth {
            labels,
            signs,
            n_studies: k,
        },
    })
}

fn split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Categorization design: independent genes with planted patterns, in the
/// order homo+, homo-, ssp1+, ssp1-, ssp2+, ssp2-, then non-DE genes.
pub fn gen_categorization_dataset(cfg: &CategorizationSimConfig) -> Result<SimulatedDataset> {
    let CategorizationSimConfig {
        studies: k,
        n,
        genes,
        homo_fraction,
        ssp_fraction,
        sigma,
        seed,
    } = *cfg;
    if k < 2 || n < 2 || genes == 0 || !(sigma > 0.0) {
        return invalid("categorization simulation needs K >= 2, N >= 2, genes > 0 and sigma > 0");
    }
    if homo_fraction < 0.0 || ssp_fraction < 0.0 || homo_fraction + ssp_fraction >= 1.0 {
        return invalid("pattern fractions must be non-negative and sum below 1");
    }
    let homo = (homo_fraction * genes as f64).round() as usize;
    let ssp = (ssp_fraction * genes as f64).round() as usize;
    let patterns = [
        (TruthLabel::HomoUp, None, 1i8),
        (TruthLabel::HomoDown, None, -1),
        (TruthLabel::Ssp1Up, Some(0usize), 1),
        (TruthLabel::Ssp1Down, Some(0), -1),
        (TruthLabel::Ssp2Up, Some(1), 1),
        (TruthLabel::Ssp2Down, Some(1), -1),
    ];
    let counts: Vec<usize> = split(homo, 2).into_iter().chain(split(ssp, 4)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(genes);
    let mut signs = vec![0i8; genes * k];
    let mut effects = vec![0.0; genes * k];
    for (&(label, only, dir), &count) in patterns.iter().zip(&counts) {
        for _ in 0..count {
            let g = labels.len();
            let center = truncated_effect(&mut rng);
            for s in 0..k {
                if only.map_or(true, |o| o == s) {
                    signs[g * k + s] = dir;
                    effects[g * k + s] = f64::from(dir) * study_effect(&mut rng, center);
                }
            }
            labels.push(label);
        }
    }
    labels.resize(genes, TruthLabel::NonDe);

    let cols = 2 * n;
    let mut per_study = Vec::with_capacity(k);
    for s in 0..k {
        let mut expr = Vec::with_capacity(genes * cols);
        for g in 0..genes {
            let th = effects[g * k + s];
            for col in 0..cols {
                let z: f64 = StandardNormal.sample(&mut rng);
                expr.push(sigma * z + if col >= n { th } else { 0.0 });
            }
        }
        per_study.push(expr);
    }
    let ids = gene_ids(genes);
    Ok(SimulatedDataset {
        studies: assemble(&ids, per_study, n)?,
        truth: Truth {
            labels,
            signs,
            n_studies: k,
        },
    })
}

/// Root mean squared difference over the genes selected by `de_mask`.
pub fn rmse_eval(alpha: &[f64], beta: &[f64], de_mask: &[bool]) -> Result<f64> {
    if alpha.len() != beta.len() || alpha.len() != de_mask.len() {
        return invalid("rmse inputs differ in length");
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for ((&a, &b), &m) in alpha.iter().zip(beta).zip(de_mask) {
        if !m {
            continue;
        }
        if !a.is_finite() || !b.is_finite() {
            return invalid("rmse inputs must be finite");
        }
        s += (a - b) * (a - b);
        n += 1;
    }
    if n == 0 {
        return invalid("rmse mask selects no genes");
    }
    Ok((s / n as f64).sqrt())
}

/// Log AW statistic per gene from per-study p-value vectors.
pub fn aw_log_statistics(p_by_study: &[&[f64]]) -> Vec<f64> {
    let genes = p_by_study.first().map_or(0, |p| p.len());
    let mut search = PrefixSearch::new();
    let mut e = vec![0.0; p_by_study.len()];
    (0..genes)
        .map(|g| {
            for (x, p) in e.iter_mut().zip(p_by_study) {
                *x = -p[g].ln();
            }
            search.run(&e).0
        })
        .collect()
}

pub const MIN_PERMUTATIONS: usize = 100;

/// Meta p-values from a pooled permutation null: class labels are shuffled
/// independently in every study, and each observed statistic is ranked
/// against all `G * b_perm` null statistics with add-one smoothing.
pub fn permutation_backend(studies: &[StudyData], b_perm: usize, seed: u64) -> Result<Vec<f64>> {
    if b_perm < MIN_PERMUTATIONS {
        return invalid(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {b_perm}"
        ));
    }
    if studies.len() < 2 {
        return invalid("permutation backend needs at least 2 studies");
    }
    let observed_p: Vec<Vec<f64>> = studies.iter().map(|s| de_test(s).p).collect();
    let refs: Vec<&[f64]> = observed_p.iter().map(|p| p.as_slice()).collect();
    let observed = aw_log_statistics(&refs);

    let mut null: Vec<f64> = (0..b_perm)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = stream_rng(seed, &[TAG_PERM, b as u64]);
            let ps: Vec<Vec<f64>> = studies
                .iter()
                .map(|s| {
                    let mut labels = s.labels().to_vec();
                    for i in (1..labels.len()).rev() {
                        labels.swap(i, rng.random_range(0..=i));
                    }
                    de_test_with_labels(s, &labels).p
                })
                .collect();
            let refs: Vec<&[f64]> = ps.iter().map(|p| p.as_slice()).collect();
            aw_log_statistics(&refs)
        })
        .collect();
    null.sort_unstable_by(f64::total_cmp);
    let total = null.len() as f64;
    Ok(observed
        .iter()
        .map(|&o| (1.0 + null.partition_point(|&x| x <= o) as f64) / (1.0 + total))
        .collect())
}
