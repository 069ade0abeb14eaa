//! Comparison clusterers: agglomerative single/average linkage and Lloyd's
//! k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::norms::Metric;
use crate::partition::{Partition, UnionFind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Linkage {
    Single,
    /// Unweighted pair-group average (UPGMA).
    Average,
}

/// One agglomeration step. Leaves are nodes `0..n`; merge `t` creates node `n + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    fn apply(&self, count: usize) -> Partition {
        let n = self.n;
        let mut uf = UnionFind::new(n);
        // any leaf of each node stands in for it
        let mut rep: Vec<usize> = (0..n).collect();
        for m in &self.merges[..count] {
            uf.union(rep[m.left], rep[m.right]);
            rep.push(rep[m.left]);
        }
        uf.partition(n)
    }

    /// Applies every merge with height `<= height`.
    pub fn cut(&self, height: f64) -> Partition {
        let count = self.merges.iter().take_while(|m| m.height <= height).count();
        self.apply(count)
    }

    /// Applies the first `n - k` merges.
    pub fn cut_k(&self, k: usize) -> Result<Partition> {
        if k == 0 || k > self.n {
            return Err(Error::InvalidArgument(format!(
                "cluster count must be in 1..={}, got {k}",
                self.n
            )));
        }
        Ok(self.apply(self.n - k))
    }
}

/// Agglomerative clustering by the Lance-Williams recurrence on a dense
/// distance matrix. Ties go to the lexicographically smallest pair of
/// cluster slots, where a cluster's slot is its smallest member.
pub fn hierarchical(x: &DataMatrix, linkage: Linkage, metric: Metric) -> Result<Dendrogram> {
    let n = x.n();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "hierarchical clustering needs at least 2 observations, got {n}"
        )));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for k in i + 1..n {
            let d = metric.distance(x.row(i), x.row(k));
            dist[i * n + k] = d;
            dist[k * n + i] = d;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for t in 0..n - 1 {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for a in (0..n).filter(|&a| active[a]) {
            for b in (a + 1..n).filter(|&b| active[b]) {
                if dist[a * n + b] < best.0 {
                    best = (dist[a * n + b], a, b);
                }
            }
        }
        let (height, a, b) = best;
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let (dac, dbc) = (dist[a * n + c], dist[b * n + c]);
            let merged = match linkage {
                Linkage::Single => dac.min(dbc),
                Linkage::Average => {
                    (size[a] as f64 * dac + size[b] as f64 * dbc) / (size[a] + size[b]) as f64
                }
            };
            dist[a * n + c] = merged;
            dist[c * n + a] = merged;
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            left: node[a],
            right: node[b],
            height,
            size: size[a],
        });
        node[a] = n + t;
    }
    Ok(Dendrogram { n, merges })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmeansResult {
    /// `k x p`, row-major.
    pub centers: Vec<f64>,
    pub partition: Partition,
    /// Raw center index per observation.
    pub assignment: Vec<usize>,
    pub wcss: f64,
    pub restarts_used: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(row: &[f64], centers: &[f64], p: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(p).enumerate() {
        let d = sq_dist(row, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(x: &DataMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, p) = (x.n(), x.p());
    let mut centers = Vec::with_capacity(k * p);
    centers.extend_from_slice(x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[..p])).collect();
    while centers.len() < k * p {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &centers[start..start + p]));
        }
    }
    centers
}

fn lloyd(x: &DataMatrix, mut centers: Vec<f64>, k: usize, max_iter: usize) -> (Vec<f64>, Vec<usize>, f64) {
    let (n, p) = (x.n(), x.p());
    let mut assign = vec![usize::MAX; n];
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let (c, _) = nearest(x.row(i), &centers, p);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&c| counts[c] += 1);
        // an empty cluster takes the point farthest from its own center
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&i, &j| {
                        let di = sq_dist(x.row(i), &centers[assign[i] * p..(assign[i] + 1) * p]);
                        let dj = sq_dist(x.row(j), &centers[assign[j] * p..(assign[j] + 1) * p]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    });
                if let Some(i) = far {
                    counts[assign[i]] -= 1;
                    assign[i] = c;
                    counts[c] = 1;
                    changed = true;
                }
            }
        }
        let mut sums = vec![0.0; k * p];
        for (i, &c) in assign.iter().enumerate() {
            for (s, v) in sums[c * p..(c + 1) * p].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..p {
                    centers[c * p + j] = sums[c * p + j] / counts[c] as f64;
                }
            }
        }
        let wcss = wcss_of(x, &centers, &assign);
        debug_assert!(
            wcss <= prev_wcss * (1.0 + 1e-12) + 1e-12 || !prev_wcss.is_finite(),
            "Lloyd step increased wcss from {prev_wcss} to {wcss}"
        );
        prev_wcss = wcss;
        if !changed {
            break;
        }
    }
    let wcss = wcss_of(x, &centers, &assign);
    (centers, assign, wcss)
}

fn wcss_of(x: &DataMatrix, centers: &[f64], assign: &[usize]) -> f64 {
    let p = x.p();
    assign
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(x.row(i), &centers[c * p..(c + 1) * p]))
        .sum()
}

/// Best of `restarts` Lloyd runs by within-cluster sum of squares. Restart
/// `r` draws its seeding from stream `r` of the seeded generator.
pub fn kmeans(x: &DataMatrix, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KmeansResult> {
    let n = x.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
    }
    if restarts == 0 || max_iter == 0 {
        return Err(Error::InvalidArgument("restarts and max_iter must be positive".into()));
    }
    let mut best: Option<(Vec<f64>, Vec<usize>, f64)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init = plus_plus_seed(x, k, &mut rng);
        let run = lloyd(x, init, k, max_iter);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (centers, assignment, wcss) = best.expect("at least one restart");
    Ok(KmeansResult {
        partition: Partition::from_labels(&assignment),
        centers,
        assignment,
        wcss,
        restarts_used: restarts,
    })
}
