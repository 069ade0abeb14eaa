//! Cluster partitions, union-find, and the Rand index.

use serde::Serialize;

use crate::error::{Error, Result};

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Returns `true` when the two sets were distinct.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let mut ra = self.find(a);
        let mut rb = self.find(b);
        if ra == rb {
            return false;
        }
        if self.rank[ra] < self.rank[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        if self.rank[ra] == self.rank[rb] {
            self.rank[ra] = self.rank[ra].saturating_add(1);
        }
        true
    }

    /// Canonical partition of the first `n` elements.
    pub fn partition(&mut self, n: usize) -> Partition {
        let roots: Vec<usize> = (0..n).map(|i| self.find(i)).collect();
        Partition::from_labels(&roots)
    }
}

/// A clustering of `{0..n-1}` with labels numbered by first appearance, so
/// that cluster `c` is the one whose smallest member is the `c`-th smallest
/// cluster minimum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels.
    pub fn from_labels<T: Eq + std::hash::Hash + Copy>(raw: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            labels,
            k: map.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
            k: n,
        }
    }

    pub fn single_cluster(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            k: usize::from(n > 0),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Members of each cluster, in increasing order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    pub fn same_cluster(&self, i: usize, k: usize) -> bool {
        self.labels[i] == self.labels[k]
    }

    /// Common refinement: `i` and `k` together iff together in both.
    pub fn meet(&self, other: &Partition) -> Partition {
        let pairs: Vec<(usize, usize)> = self
            .labels
            .iter()
            .copied()
            .zip(other.labels.iter().copied())
            .collect();
        Partition::from_labels(&pairs)
    }
}

/// Connected components of the graph on `n` nodes with the given 0-based edges.
pub fn partition_from_components(n: usize, edges: &[(usize, usize)]) -> Result<Partition> {
    let mut uf = UnionFind::new(n);
    for &(a, b) in edges {
        for idx in [a, b] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        uf.union(a, b);
    }
    Ok(uf.partition(n))
}

fn choose2(m: u64) -> u64 {
    m * m.saturating_sub(1) / 2
}

/// Fraction of the `C(n,2)` pairs on which the two partitions agree about
/// together-versus-apart.
pub fn rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            context: "rand_index",
            expected: a.n(),
            actual: b.n(),
        });
    }
    let n = a.n();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "rand index needs at least 2 observations, got {n}"
        )));
    }
    let mut table = vec![0u64; a.k() * b.k()];
    for (la, lb) in a.labels().iter().zip(b.labels()) {
        table[la * b.k() + lb] += 1;
    }
    let both: u64 = table.iter().map(|&c| choose2(c)).sum();
    let in_a: u64 = a.sizes().iter().map(|&c| choose2(c as u64)).sum();
    let in_b: u64 = b.sizes().iter().map(|&c| choose2(c as u64)).sum();
    let total = choose2(n as u64);
    // agreements = together in both + apart in both
    let agree = total + 2 * both - in_a - in_b;
    Ok(agree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_rand(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0;
        let mut total = 0;
        for i in 0..n {
            for k in i + 1..n {
                total += 1;
                if (a[i] == a[k]) == (b[i] == b[k]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn canonical_labels() {
        let p = Partition::from_labels(&[7, 7, 3, 9, 3]);
        assert_eq!(p.labels(), &[0, 0, 1, 2, 1]);
        assert_eq!(p.k(), 3);
        assert_eq!(p.groups(), vec![vec![0, 1], vec![2, 4], vec![3]]);
    }

    #[test]
    fn rand_examples() {
        let a = Partition::from_labels(&[0, 0, 1]);
        let b = Partition::singletons(3);
        assert!((rand_index(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
        let one = Partition::single_cluster(4);
        let sing = Partition::singletons(4);
        assert_eq!(rand_index(&one, &sing).unwrap(), 0.0);
    }

    #[test]
    fn rand_errors() {
        let a = Partition::singletons(3);
        let b = Partition::singletons(4);
        assert!(rand_index(&a, &b).is_err());
        let c = Partition::singletons(1);
        assert!(rand_index(&c, &c).is_err());
    }

    #[test]
    fn components_examples() {
        let p = partition_from_components(3, &[(0, 1)]).unwrap();
        assert_eq!(p.labels(), &[0, 0, 1]);
        let p = partition_from_components(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(p.k(), 1);
        let p = partition_from_components(4, &[]).unwrap();
        assert_eq!(p, Partition::singletons(4));
        assert_eq!(
            partition_from_components(3, &[(0, 3)]).unwrap_err(),
            Error::IndexOutOfRange { index: 3, n: 3 }
        );
    }

    proptest! {
        #[test]
        fn rand_matches_pair_enumeration(
            a in proptest::collection::vec(0usize..4, 2..20),
            seed in 0usize..1000,
        ) {
            let b: Vec<usize> = a.iter().enumerate().map(|(i, _)| (i * 7 + seed) % 3).collect();
            let pa = Partition::from_labels(&a);
            let pb = Partition::from_labels(&b);
            let r = rand_index(&pa, &pb).unwrap();
            prop_assert!((r - brute_rand(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(r, rand_index(&pb, &pa).unwrap());
            let permuted: Vec<usize> = a.iter().map(|l| 10 - l).collect();
            prop_assert_eq!(r, rand_index(&Partition::from_labels(&permuted), &pb).unwrap());
        }

        #[test]
        fn components_ignore_edge_order_and_duplicates(
            edges in proptest::collection::vec((0usize..8, 0usize..8), 0..15),
        ) {
            let base = partition_from_components(8, &edges).unwrap();
            let mut shuffled: Vec<_> = edges.iter().rev().map(|&(a, b)| (b, a)).collect();
            shuffled.extend_from_slice(&edges);
            prop_assert_eq!(base, partition_from_components(8, &shuffled).unwrap());
        }
    }
}
