//! Diversity-driven source selection: k-means over image embeddings and
//! seeded per-cluster sampling.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::FrozenEncoder;
use crate::error::{Error, Result};
use crate::io::{ImagePayload, InterleavedDoc, Record};
use crate::rng;
use crate::scalar::Scalar;

fn normalize(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12 && norm.is_finite()) {
        return Err(Error::invalid(format!("{what}: degenerate zero vector")));
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Mean of the patch grid, L2-normalized.
pub fn image_embedding<S: Scalar>(image: &ImagePayload, encoder: &FrozenEncoder<S>) -> Result<Vec<f64>> {
    let grid = encoder.patchify_embed(image)?;
    normalize(grid.mean().into_iter().map(|v| v.as_f64()).collect(), "image embedding")
}

/// Average of the document's image embeddings, L2-normalized.
pub fn doc_embedding<S: Scalar>(doc: &InterleavedDoc, encoder: &FrozenEncoder<S>) -> Result<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut count = 0;
    for img in doc.images() {
        count += 1;
        let e = image_embedding(img, encoder)?;
        match &mut sum {
            None => sum = Some(e),
            Some(s) => s.iter_mut().zip(&e).for_each(|(a, b)| *a += b),
        }
    }
    let sum = sum.ok_or_else(|| Error::invalid(format!("{}: document has zero images", doc.id)))?;
    if count == 1 {
        // already unit length; renormalizing would only add rounding
        return Ok(sum);
    }
    normalize(sum, "document embedding")
}

pub fn record_embedding<S: Scalar>(record: &Record, encoder: &FrozenEncoder<S>) -> Result<Vec<f64>> {
    match record {
        Record::Caption(c) => image_embedding(&c.image, encoder),
        Record::Interleaved(d) => doc_embedding(d, encoder),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub vecs: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, vecs: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vecs.len() {
            return Err(Error::shape("ids and vectors differ in length"));
        }
        let d = vecs.first().map_or(0, Vec::len);
        if vecs.iter().any(|v| v.len() != d) {
            return Err(Error::shape("embedding rows differ in length"));
        }
        if vecs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding matrix contains NaN or Inf".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate id {dup:?} in embedding matrix")));
        }
        Ok(EmbeddingMatrix { ids, vecs })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.vecs.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub k_per: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 16,
            k_per: 4,
            max_iters: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(m: &EmbeddingMatrix, k: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = m.n();
    let mut chosen = vec![r.random_range(0..n)];
    let mut d2: Vec<f64> = m.vecs.iter().map(|p| sq_dist(p, &m.vecs[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a centroid: take unchosen points in order
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in m.vecs.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &m.vecs[next]));
        }
    }
    chosen.into_iter().map(|i| m.vecs[i].clone()).collect()
}

/// Seeded k-means++ followed by Lloyd iterations until the assignment is
/// stable or `max_iters` is reached.
pub fn kmeans(m: &EmbeddingMatrix, cfg: &ClusterConfig) -> Result<KMeansResult> {
    let n = m.n();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::Config(format!("k = {} must lie in 1..={n}", cfg.k)));
    }
    let mut r = rng::stream(cfg.seed, "kmeans-init", 0);
    let mut centroids = plus_plus_init(m, cfg.k, &mut r);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters.max(1) {
        iterations += 1;
        let step: Vec<(usize, f64)> = m.vecs.par_iter().map(|p| nearest(p, &centroids)).collect();
        let next: Vec<usize> = step.iter().map(|s| s.0).collect();
        history.push(step.iter().map(|s| s.1).sum());
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        centroids = update_centroids(m, &assignments, &centroids);
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history: history,
        iterations,
        converged,
    })
}

fn update_centroids(m: &EmbeddingMatrix, assignments: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = old.len();
    let d = m.dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in m.vecs.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &c), o)| {
            if c == 0 {
                o.clone()
            } else {
                s.into_iter().map(|x| x / c as f64).collect()
            }
        })
        .collect();
    // reseed empty clusters at the points farthest from their centroid
    let mut taken: Vec<usize> = Vec::new();
    for e in (0..k).filter(|&c| counts[c] == 0) {
        let far = (0..m.n())
            .filter(|i| !taken.contains(i) && counts[assignments[*i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&m.vecs[a], &centroids[assignments[a]]);
                let db = sq_dist(&m.vecs[b], &centroids[assignments[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
        if let Some(i) = far {
            taken.push(i);
            centroids[e] = m.vecs[i].clone();
        }
    }
    centroids
}

/// Up to `k_per` ids from every cluster, drawn without replacement; output
/// sorted by id.
pub fn sample_per_cluster(ids: &[String], assignments: &[usize], cfg: &ClusterConfig) -> Vec<String> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1).max(cfg.k);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let mut out = Vec::new();
    for (c, m) in members.iter().enumerate() {
        let take = m.len().min(cfg.k_per);
        let mut r = rng::stream(cfg.seed, "cluster-sample", c as u64);
        out.extend(index::sample(&mut r, m.len(), take).into_iter().map(|j| ids[m[j]].clone()));
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub k_per: usize,
    pub n: usize,
    pub selected: usize,
    pub cluster_sizes: Vec<usize>,
    /// Clusters smaller than `k_per`, which contribute fewer ids.
    pub short_clusters: usize,
    pub iterations: usize,
    pub converged: bool,
    pub inertia: f64,
}

pub fn summarize(result: &KMeansResult, cfg: &ClusterConfig, selected: usize) -> ClusterSummary {
    let mut sizes = vec![0; cfg.k];
    for &a in &result.assignments {
        sizes[a] += 1;
    }
    ClusterSummary {
        k: cfg.k,
        k_per: cfg.k_per,
        n: result.assignments.len(),
        selected,
        short_clusters: sizes.iter().filter(|&&s| s < cfg.k_per).count(),
        cluster_sizes: sizes,
        iterations: result.iterations,
        converged: result.converged,
        inertia: result.inertia(),
    }
}
