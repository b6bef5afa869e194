//! Behaviour clustering of spuriousness embeddings and fine-grained labels.
//!
//! Classes `y` and clusters `p` are 1-based; the fine label of a sample is
//! `g = p + (y - 1) * K` and its class is recovered as `ceil(g / K)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spuriousness::{embed, SpuriousnessEmbedding, SpuriousnessMatrix};

pub fn fine_label(class: usize, cluster: usize, k: usize) -> usize {
    cluster + (class - 1) * k
}

/// `ceil(output / k)` for a 1-based output label.
pub fn class_of_output(output: usize, k: usize) -> usize {
    output.div_ceil(k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    /// Independent k-means++ restarts; the lowest-SSE run is kept.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iterations: 300, restarts: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel<F> {
    pub centroids: Vec<Vec<F>>,
    pub seed: u64,
    pub iterations_run: usize,
    /// Cluster (1-based) of every fitted point, in input order.
    pub labels: Vec<usize>,
    pub sse: F,
    /// SSE after each assignment step of the kept run.
    pub sse_trace: Vec<F>,
}

impl<F: Scalar> ClusterModel<F> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid (1-based), ties to the lowest index.
    pub fn assign(&self, point: &[F]) -> usize {
        nearest(&self.centroids, point).0 + 1
    }

    pub fn write_centroids_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, c) in self.centroids.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(c.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<centroids.csv>", e))
    }
}

fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<F: Scalar>(centroids: &[Vec<F>], point: &[F]) -> (usize, F) {
    let mut best = (0, sq_dist(&centroids[0], point));
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(c, point);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding over Euclidean distance,
/// finished with single-point transfer refinement.
pub fn fit_kmeans<F: Scalar, P: AsRef<[F]>>(points: &[P], k: usize, seed: u64) -> Result<ClusterModel<F>> {
    fit_kmeans_with(points, k, seed, &KMeansConfig::default())
}

pub fn fit_kmeans_with<F: Scalar, P: AsRef<[F]>>(
    points: &[P],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ClusterModel<F>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("K must be at least 2, got {k}")));
    }
    if points.len() < k {
        return Err(Error::InsufficientPoints { points: points.len(), k });
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: p.as_ref().len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterModel<F>> = None;
    for _ in 0..config.restarts.max(1) {
        let run = lloyd(points, k, seed, config.max_iterations, &mut rng);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init<F: Scalar, P: AsRef<[F]>, R: Rng>(points: &[P], k: usize, rng: &mut R) -> Vec<Vec<F>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(&centroids[0], p.as_ref()).as_f64()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on a zero-weight tail point
            while d2[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(&c, p.as_ref()).as_f64());
        }
        centroids.push(c);
    }
    centroids
}

fn cluster_means<F: Scalar, P: AsRef<[F]>>(
    points: &[P],
    k: usize,
    labels: &[usize],
    fallback: &[Vec<F>],
) -> Vec<Vec<F>> {
    let dim = points[0].as_ref().len();
    let mut sums = vec![vec![F::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(p.as_ref()) {
            *s = *s + v;
        }
    }
    (0..k)
        .map(|c| match counts[c] {
            0 => fallback[c].clone(),
            n => sums[c].iter().map(|&s| s / F::from_count(n)).collect(),
        })
        .collect()
}

/// Single-point transfers (Hartigan's rule): move a point to another
/// cluster whenever that strictly lowers the SSE, accounting for the
/// centroid shift. Every resulting partition is also a Lloyd fixed point.
/// Returns whether anything moved.
fn transfer_refine<F: Scalar, P: AsRef<[F]>>(points: &[P], k: usize, labels: &mut [usize], max_passes: usize) -> bool {
    let mut counts = vec![0usize; k];
    for &c in labels.iter() {
        counts[c] += 1;
    }
    let mut centroids = cluster_means(points, k, labels, &vec![Vec::new(); k]);
    let tolerance = F::lit(1e-12);
    let mut moved_any = false;
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let (x, a) = (p.as_ref(), labels[i]);
            if counts[a] < 2 {
                continue;
            }
            let na = F::from_count(counts[a]);
            let removal = na / (na - F::one()) * sq_dist(&centroids[a], x);
            let mut best: Option<(usize, F)> = None;
            for b in (0..k).filter(|&b| b != a && counts[b] > 0) {
                let nb = F::from_count(counts[b]);
                let cost = nb / (nb + F::one()) * sq_dist(&centroids[b], x);
                if best.is_none_or(|(_, c)| cost < c) {
                    best = Some((b, cost));
                }
            }
            let Some((b, cost)) = best else { continue };
            if cost < removal - tolerance * (F::one() + removal) {
                let nb = F::from_count(counts[b]);
                for (j, &v) in x.iter().enumerate() {
                    centroids[a][j] = (centroids[a][j] * na - v) / (na - F::one());
                    centroids[b][j] = (centroids[b][j] * nb + v) / (nb + F::one());
                }
                counts[a] -= 1;
                counts[b] += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        moved_any = true;
        centroids = cluster_means(points, k, labels, &centroids);
    }
    moved_any
}

fn lloyd<F: Scalar, P: AsRef<[F]>, R: Rng>(
    points: &[P],
    k: usize,
    seed: u64,
    max_iterations: usize,
    rng: &mut R,
) -> ClusterModel<F> {
    let dim = points[0].as_ref().len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut dists: Vec<F> = vec![F::zero(); points.len()];
    let mut sse_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        iterations += 1;
        let mut next = Vec::with_capacity(points.len());
        for (p, d) in points.iter().zip(dists.iter_mut()) {
            let (c, dd) = nearest(&centroids, p.as_ref());
            next.push(c);
            *d = dd;
        }
        sse_trace.push(dists.iter().copied().sum());
        if next == labels {
            converged = true;
            break;
        }
        labels = next;

        let mut sums = vec![vec![F::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(p.as_ref()) {
                *s = *s + v;
            }
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                let n = F::from_count(counts[c]);
                centroids[c] = sums[c].iter().map(|&s| s / n).collect();
            }
        }
        // Empty clusters move onto the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = None;
                for (i, p) in points.iter().enumerate() {
                    if taken[i] {
                        continue;
                    }
                    let d = sq_dist(&centroids[labels[i]], p.as_ref());
                    if far.is_none_or(|(_, best)| d > best) {
                        far = Some((i, d));
                    }
                }
                if let Some((i, _)) = far {
                    taken[i] = true;
                    centroids[c] = points[i].as_ref().to_vec();
                }
            }
        }
    }
    if !converged {
        // iteration cap hit: report labels consistent with the final centroids
        labels = points.iter().map(|p| nearest(&centroids, p.as_ref()).0).collect();
        sse_trace.push(points.iter().map(|p| nearest(&centroids, p.as_ref()).1).sum());
    } else if transfer_refine(points, k, &mut labels, max_iterations) {
        centroids = cluster_means(points, k, &labels, &centroids);
        sse_trace.push(points.iter().zip(&labels).map(|(p, &c)| sq_dist(&centroids[c], p.as_ref())).sum());
    }
    let sse = *sse_trace.last().expect("at least one iteration");
    ClusterModel {
        centroids,
        seed,
        iterations_run: iterations,
        labels: labels.iter().map(|&c| c + 1).collect(),
        sse,
        sse_trace,
    }
}

/// Cluster and fine label of every sample, aligned with dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct FineLabeling {
    pub k: usize,
    pub ids: Vec<String>,
    pub classes: Vec<usize>,
    pub clusters: Vec<usize>,
    pub fine_labels: Vec<usize>,
}

impl FineLabeling {
    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id).map(|i| self.clusters[i])
    }

    pub fn fine_label_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id).map(|i| self.fine_labels[i])
    }

    /// CSV of sample id, class, cluster and fine label.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "class", "cluster", "fine_label"])?;
        for i in 0..self.ids.len() {
            w.write_record([
                self.ids[i].clone(),
                self.classes[i].to_string(),
                self.clusters[i].to_string(),
                self.fine_labels[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<clusters.csv>", e))
    }
}

/// Embeddings of all samples in dataset order.
pub fn embed_all<F: Scalar>(
    dataset: &AnnotatedDataset<F>,
    matrix: &SpuriousnessMatrix<F>,
) -> Vec<SpuriousnessEmbedding<F>> {
    dataset.samples().iter().map(|s| embed(s, matrix)).collect()
}

/// Fits K-means jointly over every class, with points ordered by sample id
/// so the result does not depend on ingestion order.
pub fn fit_dataset<F: Scalar>(
    dataset: &AnnotatedDataset<F>,
    matrix: &SpuriousnessMatrix<F>,
    k: usize,
    seed: u64,
) -> Result<ClusterModel<F>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| dataset.samples()[a].id.cmp(&dataset.samples()[b].id));
    let points: Vec<SpuriousnessEmbedding<F>> = order.iter().map(|&i| embed(&dataset.samples()[i], matrix)).collect();
    fit_kmeans(&points, k, seed)
}

pub fn relabel<F: Scalar>(
    dataset: &AnnotatedDataset<F>,
    model: &ClusterModel<F>,
    matrix: &SpuriousnessMatrix<F>,
) -> FineLabeling {
    let k = model.k();
    let mut labeling = FineLabeling {
        k,
        ids: Vec::with_capacity(dataset.len()),
        classes: Vec::with_capacity(dataset.len()),
        clusters: Vec::with_capacity(dataset.len()),
        fine_labels: Vec::with_capacity(dataset.len()),
    };
    for s in dataset.samples() {
        let p = model.assign(&embed(s, matrix).0);
        labeling.ids.push(s.id.clone());
        labeling.classes.push(s.label);
        labeling.clusters.push(p);
        labeling.fine_labels.push(fine_label(s.label, p, k));
    }
    labeling
}
