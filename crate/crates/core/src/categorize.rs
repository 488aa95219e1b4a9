//! Tight clustering of DE genes on their co-membership matrix.
//!
//! Genes are points whose coordinates are their rows of V. For a given k,
//! k-means is run on several id-keyed subsamples and every remaining gene is
//! assigned to its nearest centroid; the fraction of runs in which two genes
//! share a cluster is their consensus. A tight set is a group whose average
//! pairwise consensus reaches `alpha`. The largest tight set whose average
//! internal V exceeds its average V to all other genes is accepted as a
//! module and removed, and the search continues with a smaller k until
//! `q_target` modules are found or k reaches 2. Genes never accepted are
//! reported as scattered (module 0).

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aw::SignedWeightVector;
use crate::error::{invalid, AwError, Result};
use crate::resample::CoMembership;
use crate::rng::{derive_seed, hash_unit, stream_rng, TAG_CONSENSUS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightParams {
    /// Minimum average pairwise consensus inside a module.
    pub alpha: f64,
    /// Fraction of remaining genes in each k-means subsample.
    pub subsample: f64,
    /// Subsampled k-means runs per k.
    pub resamples: usize,
    /// Starting k is `q_target + k0_offset`.
    pub k0_offset: usize,
    pub min_size: usize,
    pub max_iter: usize,
}

impl Default for TightParams {
    fn default() -> Self {
        TightParams {
            alpha: 0.7,
            subsample: 0.7,
            resamples: 10,
            k0_offset: 2,
            min_size: 2,
            max_iter: 100,
        }
    }
}

impl TightParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return invalid(format!(
                "subsample fraction must lie in (0, 1], got {}",
                self.subsample
            ));
        }
        if self.resamples == 0 || self.max_iter == 0 || self.min_size < 2 {
            return invalid("resamples and max_iter must be positive and min_size at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleInfo {
    pub size: usize,
    /// k at which the module was accepted.
    pub k: usize,
    pub mean_consensus: f64,
    pub mean_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleAssignment {
    /// Gene ids in the order of the co-membership matrix given.
    pub gene_ids: Vec<String>,
    /// 0 for scattered genes, otherwise 1-based module id in acceptance order.
    pub labels: Vec<usize>,
    pub modules: Vec<ModuleInfo>,
    pub warnings: Vec<String>,
}

impl ModuleAssignment {
    pub fn module_count(&self) -> usize {
        self.modules.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(point, cen);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// k-means++ seeding followed by Lloyd iterations. `points` index rows of
/// `features`.
fn kmeans(
    features: &[Vec<f64>],
    points: &[usize],
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(features[points[rng.random_range(0..points.len())]].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|&p| sq_dist(&features[p], &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            // All points coincide with a centroid; any point will do.
            centroids.len() % points.len()
        };
        let c = features[points[pick]].clone();
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(&features[p], &c));
        }
        centroids.push(c);
    }

    let dim = features[points[0]].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, &p) in assign.iter_mut().zip(points) {
            let c = nearest(&features[p], &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, &p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(&features[p]) {
                *s += x;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            }
        }
    }
    centroids
}

/// Consensus co-clustering among `genes` (indices into the canonical order).
fn consensus(
    features: &[Vec<f64>],
    ids: &[String],
    genes: &[usize],
    k: usize,
    params: &TightParams,
    round_seed: u64,
) -> Vec<f64> {
    let m = genes.len();
    let labelings: Vec<Vec<usize>> = (0..params.resamples)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(round_seed, &[k as u64, r as u64]);
            let mut keyed: Vec<(f64, usize)> = genes
                .iter()
                .map(|&g| (hash_unit(seed, &ids[g]), g))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let take = ((params.subsample * m as f64).round() as usize).clamp(k, m);
            let mut sub: Vec<usize> = keyed[..take].iter().map(|x| x.1).collect();
            sub.sort_unstable();
            let mut rng = stream_rng(seed, &[1]);
            let centroids = kmeans(features, &sub, k, params.max_iter, &mut rng);
            genes
                .iter()
                .map(|&g| nearest(&features[g], &centroids))
                .collect()
        })
        .collect();
    let mut c = vec![0.0; m * m];
    for lab in &labelings {
        for i in 0..m {
            for j in i..m {
                if lab[i] == lab[j] {
                    c[i * m + j] += 1.0;
                }
            }
        }
    }
    let r = params.resamples as f64;
    for i in 0..m {
        for j in i..m {
            let x = c[i * m + j] / r;
            c[i * m + j] = x;
            c[j * m + i] = x;
        }
    }
    c
}

fn mean_pairwise(members: &[usize], at: impl Fn(usize, usize) -> f64) -> f64 {
    let n = members.len();
    if n < 2 {
        return 1.0;
    }
    let mut s = 0.0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            s += at(i, j);
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Tight candidate sets from a consensus matrix over `m` local genes,
/// largest first.
fn tight_candidates(c: &[f64], m: usize, alpha: f64, min_size: usize) -> Vec<Vec<usize>> {
    let at = |i: usize, j: usize| c[i * m + j];
    let mut available = vec![true; m];
    let mut out = Vec::new();
    loop {
        let mut seed = None;
        let mut best = 0;
        for i in (0..m).filter(|&i| available[i]) {
            let n = (0..m)
                .filter(|&j| available[j] && at(i, j) >= alpha)
                .count();
            if n > best {
                best = n;
                seed = Some(i);
            }
        }
        let Some(s) = seed else { break };
        if best < min_size {
            break;
        }
        let mut set: Vec<usize> = (0..m)
            .filter(|&j| available[j] && at(s, j) >= alpha)
            .collect();
        while set.len() >= min_size && mean_pairwise(&set, at) < alpha {
            // Drop the member least attached to the rest; ties drop the later gene.
            let score = |i: usize| {
                set.iter()
                    .filter(|&&j| j != i)
                    .map(|&j| at(i, j))
                    .sum::<f64>()
            };
            let mut worst = 0;
            let mut worst_score = f64::INFINITY;
            for (pos, &i) in set.iter().enumerate() {
                let sc = score(i);
                if sc <= worst_score {
                    worst_score = sc;
                    worst = pos;
                }
            }
            set.remove(worst);
        }
        // Grow to a maximal set: admit the best-attached outsider while it and
        // the enlarged set both stay at or above alpha.
        if set.len() >= min_size && set.contains(&s) {
            let mut total = mean_pairwise(&set, at) * (set.len() * (set.len() - 1) / 2) as f64;
            loop {
                let mut inside = vec![false; m];
                set.iter().for_each(|&i| inside[i] = true);
                let best = (0..m)
                    .filter(|&j| available[j] && !inside[j])
                    .map(|j| (set.iter().map(|&i| at(i, j)).sum::<f64>(), j))
                    .fold(None, |acc: Option<(f64, usize)>, x| match acc {
                        Some(a) if a.0 >= x.0 => Some(a),
                        _ => Some(x),
                    });
                let Some((attach, j)) = best else { break };
                let n = set.len() as f64;
                let pairs = n * (n + 1.0) / 2.0;
                if attach / n < alpha || (total + attach) / pairs < alpha {
                    break;
                }
                total += attach;
                set.push(j);
            }
            set.sort_unstable();
        }
        if set.len() >= min_size && set.contains(&s) {
            for &i in &set {
                available[i] = false;
            }
            out.push(set);
        } else {
            available[s] = false;
        }
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    out
}

/// Finds up to `q_target` tight modules in a co-membership matrix.
pub fn tight_cluster(
    v: &CoMembership,
    q_target: usize,
    params: &TightParams,
    seed: u64,
) -> Result<ModuleAssignment> {
    params.validate()?;
    let n = v.len();
    if q_target == 0 {
        return invalid("q_target must be at least 1");
    }
    if n < 2 * q_target {
        return invalid(format!(
            "need at least {} genes for {q_target} modules, got {n}",
            2 * q_target
        ));
    }
    // Canonical order by gene id so the result does not depend on input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v.gene_ids[a].cmp(&v.gene_ids[b]));
    if order
        .windows(2)
        .any(|w| v.gene_ids[w[0]] == v.gene_ids[w[1]])
    {
        return invalid("gene ids in the co-membership matrix must be unique");
    }
    let canon = v.permuted(&order);
    let features: Vec<Vec<f64>> = (0..n).map(|i| canon.row(i).to_vec()).collect();
    let ids = &canon.gene_ids;

    let mut label = vec![0usize; n];
    let mut modules = Vec::new();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut k = q_target + params.k0_offset;
    while modules.len() < q_target && k >= 2 && remaining.len() >= params.min_size.max(k) {
        let round_seed = derive_seed(seed, &[TAG_CONSENSUS, modules.len() as u64]);
        let c = consensus(&features, ids, &remaining, k, params, round_seed);
        let m = remaining.len();
        let rem = remaining.clone();
        let v_at = |i: usize, j: usize| canon.get(rem[i], rem[j]);
        let cands = tight_candidates(&c, m, params.alpha, params.min_size);
        // A module must be closer to itself than to every other gene in the
        // matrix; with nothing outside, it must clear alpha on V directly.
        let separated = |set: &[usize]| {
            let within = mean_pairwise(set, v_at);
            let mut inside = vec![false; n];
            set.iter().for_each(|&i| inside[rem[i]] = true);
            let others: Vec<usize> = (0..n).filter(|&j| !inside[j]).collect();
            if others.is_empty() {
                return within >= params.alpha;
            }
            let s: f64 = set
                .iter()
                .map(|&i| others.iter().map(|&j| canon.get(rem[i], j)).sum::<f64>())
                .sum();
            within > s / (set.len() * others.len()) as f64
        };
        match cands.iter().find(|set| separated(set)) {
            Some(set) => {
                let mean_consensus = mean_pairwise(set, |i, j| c[i * m + j]);
                let mean_v = mean_pairwise(set, v_at);
                let id = modules.len() + 1;
                for &i in set {
                    label[remaining[i]] = id;
                }
                modules.push(ModuleInfo {
                    size: set.len(),
                    k,
                    mean_consensus,
                    mean_v,
                });
                remaining.retain(|&g| label[g] == 0);
                k = (k - 1).max(2);
            }
            None => k -= 1,
        }
    }

    let mut warnings = Vec::new();
    if modules.is_empty() {
        warnings.push("no tight module found at any k; all genes are scattered".to_string());
    } else if modules.len() < q_target {
        warnings.push(format!(
            "found {} of {q_target} requested modules",
            modules.len()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    // Back to the caller's gene order.
    let mut labels = vec![0; n];
    for (canon_idx, &orig) in order.iter().enumerate() {
        labels[orig] = label[canon_idx];
    }
    Ok(ModuleAssignment {
        gene_ids: v.gene_ids.clone(),
        labels,
        modules,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub gene_id: String,
    pub module: usize,
    pub mean_u: f64,
    pub u: Vec<f64>,
    pub signed: SignedWeightVector,
    /// Modal signed pattern of the gene's module (its own pattern if scattered).
    pub representative: SignedWeightVector,
}

/// Report rows ordered by module (scattered last), then mean variability
/// ascending. `u` and `signed` are aligned with `assign.gene_ids`.
pub fn module_report(
    assign: &ModuleAssignment,
    u: &[Vec<f64>],
    signed: &[SignedWeightVector],
) -> Result<Vec<ReportRow>> {
    let n = assign.gene_ids.len();
    if u.len() != n || signed.len() != n {
        return Err(AwError::DimensionMismatch {
            expected: n,
            got: if u.len() != n { u.len() } else { signed.len() },
        });
    }
    let mut modal: HashMap<usize, SignedWeightVector> = HashMap::new();
    let mut tallies: BTreeMap<usize, BTreeMap<&SignedWeightVector, usize>> = BTreeMap::new();
    for (g, &m) in assign.labels.iter().enumerate() {
        if m > 0 {
            *tallies.entry(m).or_default().entry(&signed[g]).or_default() += 1;
        }
    }
    for (m, t) in tallies {
        // Highest count wins; ties go to the smallest pattern.
        let best = t
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(p, _)| (*p).clone());
        if let Some(p) = best {
            modal.insert(m, p);
        }
    }
    let mut rows: Vec<ReportRow> = (0..n)
        .map(|g| {
            let module = assign.labels[g];
            let mean_u = if u[g].is_empty() {
                0.0
            } else {
                u[g].iter().sum::<f64>() / u[g].len() as f64
            };
            ReportRow {
                gene_id: assign.gene_ids[g].clone(),
                module,
                mean_u,
                u: u[g].clone(),
                signed: signed[g].clone(),
                representative: modal
                    .get(&module)
                    .cloned()
                    .unwrap_or_else(|| signed[g].clone()),
            }
        })
        .collect();
    let key = |m: usize| if m == 0 { usize::MAX } else { m };
    rows.sort_by(|a, b| {
        key(a.module)
            .cmp(&key(b.module))
            .then(a.mean_u.total_cmp(&b.mean_u))
            .then(a.gene_id.cmp(&b.gene_id))
    });
    Ok(rows)
}
