//! Lloyd's k-means with k-means++ seeding.

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, FeatureMatrix, RngState, ZERO_NORM_TOL};
use crate::par::{self, Execution};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Cluster index per sample.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HardLabels(pub Vec<usize>);

impl HardLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of distinct cluster ids assuming they are `0..=max`.
    pub fn cluster_count(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }

    /// Rewrites labels to `0..K` in order of first appearance.
    pub fn remapped(&self) -> HardLabels {
        let mut map = std::collections::HashMap::new();
        let out = self
            .0
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        HardLabels(out)
    }
}

impl From<Vec<usize>> for HardLabels {
    fn from(v: Vec<usize>) -> Self {
        HardLabels(v)
    }
}

/// `k x d` matrix of cluster centers.
#[derive(Clone, Debug, PartialEq)]
pub struct Centers {
    pub mu: FeatureMatrix,
}

impl Centers {
    pub fn new(mu: FeatureMatrix) -> Result<Self> {
        if mu.rows() < 2 {
            return Err(Error::InvalidClusterCount(mu.rows()));
        }
        Ok(Self { mu })
    }

    pub fn k(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centers: Centers,
    pub labels: HardLabels,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Within-cluster SSE after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeansFit {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

/// Index of the nearest center for every row; ties go to the lowest index.
pub fn assign_nearest(z: &FeatureMatrix, c: &Centers) -> Result<HardLabels> {
    assign_nearest_with(Execution::default(), z, c)
}

pub fn assign_nearest_with(exec: Execution, z: &FeatureMatrix, c: &Centers) -> Result<HardLabels> {
    if z.cols() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            actual: z.cols(),
        });
    }
    let labels = par::map_indexed(exec, z.rows(), |i| nearest(z.row(i), &c.mu).0);
    Ok(HardLabels(labels))
}

fn nearest(x: &[f64], mu: &FeatureMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, m) in mu.iter_rows().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Within-cluster sum of squared distances for a labelling.
pub fn within_cluster_sse(z: &FeatureMatrix, c: &Centers, labels: &HardLabels) -> f64 {
    z.iter_rows()
        .zip(labels.as_slice())
        .map(|(x, &l)| sq_dist(x, c.mu.row(l)))
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans_fit(
    z: &FeatureMatrix,
    k: usize,
    rng: &mut RngState,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    kmeans_fit_with(Execution::default(), z, k, rng, max_iter, tol)
}

pub fn kmeans_fit_with(
    exec: Execution,
    z: &FeatureMatrix,
    k: usize,
    rng: &mut RngState,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    check_args(z, k, max_iter, tol)?;
    let seeds = plus_plus_seeds(z, k, rng)?;
    lloyd(exec, z, seeds, max_iter, tol)
}

/// Lloyd iterations from caller-provided starting centers.
pub fn kmeans_fit_from(
    exec: Execution,
    z: &FeatureMatrix,
    init: Centers,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    check_args(z, init.k(), max_iter, tol)?;
    if init.dim() != z.cols() {
        return Err(Error::DimensionMismatch {
            expected: z.cols(),
            actual: init.dim(),
        });
    }
    lloyd(exec, z, init.mu, max_iter, tol)
}

fn check_args(z: &FeatureMatrix, k: usize, max_iter: usize, tol: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidClusterCount(k));
    }
    if z.rows() < k {
        return Err(Error::TooFewPoints { n: z.rows(), k });
    }
    if max_iter == 0 {
        return Err(Error::ConfigInvalid("k-means max_iter must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::ConfigInvalid("k-means tol must be positive".into()));
    }
    Ok(())
}

fn plus_plus_seeds(z: &FeatureMatrix, k: usize, rng: &mut RngState) -> Result<FeatureMatrix> {
    let n = z.rows();
    let mut mu = FeatureMatrix::zeros(k, z.cols());
    let first = rng.index(n);
    mu.row_mut(0).copy_from_slice(z.row(first));
    let mut d2: Vec<f64> = z.iter_rows().map(|x| sq_dist(x, mu.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= ZERO_NORM_TOL {
            // every point coincides with an existing seed
            return Err(Error::EmptyClusterUnrecoverable { attempts: k });
        }
        let target = rng.uniform() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        mu.row_mut(c).copy_from_slice(z.row(pick));
        for (i, x) in z.iter_rows().enumerate() {
            let d = sq_dist(x, mu.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Ok(mu)
}

fn lloyd(
    exec: Execution,
    z: &FeatureMatrix,
    mut mu: FeatureMatrix,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    let (n, d, k) = (z.rows(), z.cols(), mu.rows());
    let mut sse_history = Vec::new();
    let mut reseeds = 0usize;
    let mut iterations = 0;
    let mut assignment: Vec<(usize, f64)>;

    loop {
        assignment = par::map_indexed(exec, n, |i| nearest(z.row(i), &mu));
        sse_history.push(assignment.iter().map(|a| a.1).sum());
        if iterations == max_iter {
            break;
        }
        iterations += 1;

        let mut sums = FeatureMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &(l, _)) in assignment.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }

        // Empty clusters take the point farthest from its current center.
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            reseeds += 1;
            let far = assignment
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .fold(None::<(usize, f64)>, |best, (i, a)| match best {
                    Some((_, bd)) if bd >= a.1 => best,
                    _ => Some((i, a.1)),
                });
            match far {
                Some((i, dist)) if dist > ZERO_NORM_TOL && reseeds <= k * max_iter => {
                    taken[i] = true;
                    sums.row_mut(c).copy_from_slice(z.row(i));
                    counts[c] = 1;
                }
                _ => return Err(Error::EmptyClusterUnrecoverable { attempts: reseeds }),
            }
        }

        let mut shift: f64 = 0.0;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let row = sums.row_mut(c);
            row.iter_mut().for_each(|v| *v *= inv);
            shift = shift.max(sq_dist(row, mu.row(c)).sqrt());
        }
        mu = sums;
        if shift < tol {
            assignment = par::map_indexed(exec, n, |i| nearest(z.row(i), &mu));
            sse_history.push(assignment.iter().map(|a| a.1).sum());
            break;
        }
    }

    let labels = HardLabels(assignment.into_iter().map(|a| a.0).collect());
    Ok(KMeansFit {
        centers: Centers { mu },
        labels,
        iterations,
        sse_history,
    })
}
