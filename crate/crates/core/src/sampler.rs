//! Within-class and cross-class balanced batch construction.

use std::io::Write;

use rand::Rng;

use crate::corpus::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::grouping::{fine_label, FineLabeling};
use crate::scalar::Scalar;

/// Training sample indices per (class, cluster) cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupIndex {
    num_classes: usize,
    k: usize,
    cells: Vec<Vec<usize>>,
}

impl GroupIndex {
    /// Builds an index from explicit cells laid out class-major
    /// (`(c - 1) * K + (p - 1)`).
    pub fn from_cells(num_classes: usize, k: usize, cells: Vec<Vec<usize>>) -> Self {
        assert_eq!(cells.len(), num_classes * k);
        Self { num_classes, k, cells }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sample indices with class `class` and cluster `cluster` (both 1-based).
    pub fn cell(&self, class: usize, cluster: usize) -> &[usize] {
        &self.cells[(class - 1) * self.k + cluster - 1]
    }

    pub fn cell_sizes(&self, class: usize) -> Vec<usize> {
        (1..=self.k).map(|p| self.cell(class, p).len()).collect()
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }
}

pub fn build_index<F: Scalar>(labeling: &FineLabeling, dataset: &AnnotatedDataset<F>) -> GroupIndex {
    let (nc, k) = (dataset.num_classes(), labeling.k);
    let mut cells = vec![Vec::new(); nc * k];
    for (i, s) in dataset.samples().iter().enumerate() {
        debug_assert_eq!(labeling.ids[i], s.id);
        let g = fine_label(s.label, labeling.clusters[i], k);
        cells[g - 1].push(i);
    }
    GroupIndex { num_classes: nc, k, cells }
}

/// Per-class and per-cell sampling quotas for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan<F> {
    pub batch_size: usize,
    pub k: usize,
    /// Standard deviation of cluster sizes per class.
    pub sigma: Vec<F>,
    pub rho: Vec<F>,
    pub class_quota: Vec<usize>,
    /// Class-major, `K` entries per class.
    pub cell_quota: Vec<usize>,
}

impl<F: Scalar> BatchPlan<F> {
    pub fn cell_quota(&self, class: usize, cluster: usize) -> usize {
        self.cell_quota[(class - 1) * self.k + cluster - 1]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["class".to_owned(), "sigma".into(), "rho".into(), "class_quota".into()];
        header.extend((1..=self.k).map(|p| format!("cell_{p}")));
        w.write_record(&header)?;
        for c in 1..=self.sigma.len() {
            let mut row = vec![
                c.to_string(),
                self.sigma[c - 1].to_string(),
                self.rho[c - 1].to_string(),
                self.class_quota[c - 1].to_string(),
            ];
            row.extend((1..=self.k).map(|p| self.cell_quota(c, p).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<plan.csv>", e))
    }
}

/// Splits `total` proportionally to `weights` (summing to 1) by the
/// largest-remainder rule; remainder ties go to the lowest index.
pub fn largest_remainder<F: Scalar>(total: usize, weights: &[F]) -> Vec<usize> {
    let exact: Vec<F> = weights.iter().map(|&w| w * F::from_count(total)).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor().to_usize().unwrap_or(0)).collect();
    let assigned: usize = quotas.iter().sum();
    let mut rest = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        quotas[i] += 1;
        rest -= 1;
    }
    quotas
}

/// Cross-class weights `rho_c = ln(sigma_c + 1) / sum ln(sigma_c' + 1)`,
/// uniform when every class is perfectly balanced.
pub fn class_weights<F: Scalar>(sigma: &[F]) -> Vec<F> {
    let logs: Vec<F> = sigma.iter().map(|&s| s.ln_1p()).collect();
    let total: F = logs.iter().copied().sum();
    if total > F::zero() {
        logs.iter().map(|&l| l / total).collect()
    } else {
        vec![F::one() / F::from_count(sigma.len()); sigma.len()]
    }
}

/// Population standard deviation of a class's K cell sizes.
fn cell_size_spread<F: Scalar>(sizes: &[usize]) -> F {
    let n = F::from_count(sizes.len());
    let mean = sizes.iter().map(|&s| F::from_count(s)).sum::<F>() / n;
    let var = sizes
        .iter()
        .map(|&s| {
            let d = F::from_count(s) - mean;
            d * d
        })
        .sum::<F>()
        / n;
    var.sqrt()
}

pub fn plan<F: Scalar>(index: &GroupIndex, batch_size: usize) -> Result<BatchPlan<F>> {
    let (nc, k) = (index.num_classes(), index.k());
    if batch_size < nc {
        return Err(Error::InvalidConfig(format!("batch size {batch_size} below class count {nc}")));
    }
    let sigma: Vec<F> = (1..=nc).map(|c| cell_size_spread(&index.cell_sizes(c))).collect();
    let rho = class_weights(&sigma);
    let class_quota = largest_remainder(batch_size, &rho);
    let mut cell_quota = vec![0usize; nc * k];
    for c in 1..=nc {
        let nonempty: Vec<usize> = (1..=k).filter(|&p| !index.cell(c, p).is_empty()).collect();
        if nonempty.is_empty() {
            continue;
        }
        let (base, extra) = (class_quota[c - 1] / nonempty.len(), class_quota[c - 1] % nonempty.len());
        for (j, &p) in nonempty.iter().enumerate() {
            cell_quota[(c - 1) * k + p - 1] = base + usize::from(j < extra);
        }
    }
    Ok(BatchPlan { batch_size, k, sigma, rho, class_quota, cell_quota })
}

/// One drawn training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchEntry {
    /// Position in the training dataset.
    pub index: usize,
    pub fine_label: usize,
}

/// Draws each cell's quota uniformly with replacement.
pub fn sample_batch<F: Scalar, R: Rng>(index: &GroupIndex, plan: &BatchPlan<F>, rng: &mut R) -> Vec<BatchEntry> {
    let mut batch = Vec::with_capacity(plan.batch_size);
    for c in 1..=index.num_classes() {
        for p in 1..=index.k() {
            let cell = index.cell(c, p);
            if cell.is_empty() {
                continue;
            }
            let g = fine_label(c, p, index.k());
            for _ in 0..plan.cell_quota(c, p) {
                batch.push(BatchEntry { index: cell[rng.random_range(0..cell.len())], fine_label: g });
            }
        }
    }
    batch
}
