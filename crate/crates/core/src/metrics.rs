//! External clustering quality: NMI, best-mapping accuracy and ARI.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};
use crate::kmeans::HardLabels;

/// Predicted-by-true cluster co-occurrence counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `k_pred x k_true`, row-major.
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    /// Labels are remapped to dense ids first, so any label values work.
    pub fn new(pred: &HardLabels, truth: &HardLabels) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        let (p, t) = (pred.remapped(), truth.remapped());
        let (kp, kt) = (p.cluster_count(), t.cluster_count());
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.as_slice().iter().zip(t.as_slice()) {
            counts[a][b] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let kt = self.counts.first().map_or(0, Vec::len);
        (0..kt).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the geometric mean of the two entropies.
pub fn nmi(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Err(Error::TooFewSamples { needed: 1, actual: 0 });
    }
    let n = table.n as f64;
    let (rows, cols) = (table.row_sums(), table.col_sums());
    let (hp, ht) = (entropy(&rows, n), entropy(&cols, n));
    if hp == 0.0 || ht == 0.0 {
        // both single-cluster: identical partitions
        return Ok(if hp == ht { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of samples matched under the best one-to-one cluster/class mapping.
pub fn acc(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Err(Error::TooFewSamples { needed: 1, actual: 0 });
    }
    let kp = table.counts.len();
    let kt = table.counts[0].len();
    let size = kp.max(kt);
    let mut weights = Matrix::new(size, size, 0i64);
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            weights[(i, j)] = c as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / table.n as f64)
}

fn comb2(v: u64) -> f64 {
    let v = v as f64;
    v * (v - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts.
pub fn ari(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            actual: table.n as usize,
        });
    }
    let index: f64 = table.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let a: f64 = table.row_sums().into_iter().map(comb2).sum();
    let b: f64 = table.col_sums().into_iter().map(comb2).sum();
    let total = comb2(table.n);
    let expected = a * b / total;
    let max = (a + b) / 2.0;
    if max == expected {
        // both partitions all-singletons or both a single cluster
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// NMI, ACC and ARI together.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
}

pub fn evaluate(pred: &HardLabels, truth: &HardLabels) -> Result<Scores> {
    Ok(Scores {
        nmi: nmi(pred, truth)?,
        acc: acc(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use proptest::prelude::*;

    fn l(v: &[usize]) -> HardLabels {
        HardLabels(v.to_vec())
    }

    #[test]
    fn identical_and_permuted() {
        let t = l(&[0, 0, 1, 1, 2, 2]);
        let p = l(&[2, 2, 0, 0, 1, 1]);
        for s in [evaluate(&t, &t).unwrap(), evaluate(&p, &t).unwrap()] {
            assert!((s.nmi - 1.0).abs() < 1e-12);
            assert_eq!(s.acc, 1.0);
            assert!((s.ari - 1.0).abs() < 1e-12);
        }
        assert_eq!(acc(&l(&[0, 0, 1, 1]), &l(&[1, 1, 0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_partitions() {
        let constant = l(&[0, 0, 0, 0]);
        let balanced = l(&[0, 0, 1, 1]);
        assert_eq!(nmi(&constant, &balanced).unwrap(), 0.0);
        assert_eq!(nmi(&constant, &constant).unwrap(), 1.0);
        let singletons = l(&[0, 1, 2, 3]);
        assert_eq!(ari(&singletons, &constant).unwrap(), 0.0);
        assert_eq!(ari(&constant, &constant).unwrap(), 1.0);
        assert_eq!(ari(&singletons, &singletons).unwrap(), 1.0);
        assert_eq!(acc(&l(&[0, 1, 2, 3]), &l(&[0, 0, 1, 1])).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(nmi(&l(&[0]), &l(&[0, 1])), Err(Error::LengthMismatch { .. })));
        assert!(matches!(acc(&l(&[0]), &l(&[0, 1])), Err(Error::LengthMismatch { .. })));
        assert!(matches!(ari(&l(&[0]), &l(&[0])), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn mismatched_cluster_counts() {
        // 3 predicted clusters against 2 classes; the middle cluster stays unmatched
        let p = l(&[0, 0, 1, 1, 2, 2]);
        let t = l(&[0, 0, 0, 1, 1, 1]);
        assert!((acc(&p, &t).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert!((acc(&t, &p).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    /// Tries every injective map from predicted ids into class ids (padded).
    fn brute_force_acc(p: &[usize], t: &[usize], kp: usize, kt: usize) -> f64 {
        let size = kp.max(kt);
        let mut perm: Vec<usize> = (0..size).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |m| {
            let hits = p.iter().zip(t).filter(|(a, b)| m[**a] == **b).count();
            best = best.max(hits);
        });
        best as f64 / p.len() as f64
    }

    fn permute(v: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
        if i == v.len() {
            f(v);
            return;
        }
        for j in i..v.len() {
            v.swap(i, j);
            permute(v, i + 1, f);
            v.swap(i, j);
        }
    }

    proptest! {
        #[test]
        fn relabel_invariance_and_symmetry(seed in any::<u64>(), n in 2usize..30) {
            let mut rng = RngState::new(seed);
            let p: Vec<usize> = (0..n).map(|_| rng.index(4)).collect();
            let t: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
            let base = evaluate(&l(&p), &l(&t)).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            rng.shuffle(&mut perm);
            let relabeled: Vec<usize> = p.iter().map(|&x| perm[x] + 10).collect();
            let moved = evaluate(&l(&relabeled), &l(&t)).unwrap();
            prop_assert!((base.nmi - moved.nmi).abs() < 1e-12);
            prop_assert_eq!(base.acc, moved.acc);
            prop_assert!((base.ari - moved.ari).abs() < 1e-12);
            prop_assert!((nmi(&l(&t), &l(&p)).unwrap() - base.nmi).abs() < 1e-12);
            prop_assert!((ari(&l(&t), &l(&p)).unwrap() - base.ari).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base.nmi));
            prop_assert!((0.0..=1.0).contains(&base.acc));
            prop_assert!(base.ari <= 1.0 + 1e-12 && base.ari >= -1.0);
        }

        #[test]
        fn accuracy_matches_brute_force(seed in any::<u64>(), kp in 1usize..5, kt in 1usize..5, n in 1usize..25) {
            let mut rng = RngState::new(seed);
            let p: Vec<usize> = (0..n).map(|_| rng.index(kp)).collect();
            let t: Vec<usize> = (0..n).map(|_| rng.index(kt)).collect();
            prop_assert_eq!(acc(&l(&p), &l(&t)).unwrap(), brute_force_acc(&p, &t, kp, kt));
        }
    }
}
