//! Per-batch cluster prototypes: confidence-weighted (soft) and plain
//! label means (hard), plus the Monte-Carlo drift comparison between them.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kmeans::{assign_nearest, Centers, HardLabels};
use crate::numerics::{dot, norm, FeatureMatrix, RngState, ZERO_NORM_TOL};
use crate::par::{self, Execution};
use crate::soft_assign::{compute_weights, soft_assign};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Online,
    Target,
}

/// `k x d` unit-norm prototypes for one augmentation view.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub p: FeatureMatrix,
    pub view: View,
}

/// Weighted cluster sums for a batch, kept around for the backward pass.
///
/// Clusters whose weighted sum vanishes are marked absent instead of failing,
/// so a training step can drop them from the prototype loss.
#[derive(Clone, Debug)]
pub struct PrototypeEstimate {
    sums: FeatureMatrix,
    norms: Vec<f64>,
    present: Vec<bool>,
    weights: FeatureMatrix,
}

impl PrototypeEstimate {
    /// `s_k = sum_i w_ik z_i`.
    pub fn new(z: &FeatureMatrix, weights: &FeatureMatrix) -> Result<Self> {
        if weights.rows() != z.rows() {
            return Err(Error::DimensionMismatch {
                expected: z.rows(),
                actual: weights.rows(),
            });
        }
        let (k, d) = (weights.cols(), z.cols());
        let mut sums = FeatureMatrix::zeros(k, d);
        for (i, x) in z.iter_rows().enumerate() {
            for c in 0..k {
                let w = weights.get(i, c);
                if w == 0.0 {
                    continue;
                }
                for (s, v) in sums.row_mut(c).iter_mut().zip(x) {
                    *s += w * v;
                }
            }
        }
        let norms: Vec<f64> = sums.iter_rows().map(norm).collect();
        let present = norms.iter().map(|n| *n >= ZERO_NORM_TOL).collect();
        Ok(Self {
            sums,
            norms,
            present,
            weights: weights.clone(),
        })
    }

    /// One-hot weights from hard labels.
    pub fn from_labels(z: &FeatureMatrix, labels: &[usize], k: usize) -> Result<Self> {
        Self::new(z, &one_hot(labels, k)?)
    }

    pub fn k(&self) -> usize {
        self.present.len()
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn present_clusters(&self) -> Vec<usize> {
        (0..self.k()).filter(|&c| self.present[c]).collect()
    }

    /// Normalized prototype of cluster `c`, if it has mass in the batch.
    pub fn prototype(&self, c: usize) -> Option<Vec<f64>> {
        self.present[c].then(|| self.sums.row(c).iter().map(|v| v / self.norms[c]).collect())
    }

    /// Prototypes of the listed clusters, in that order.
    pub fn prototypes_for(&self, clusters: &[usize], view: View) -> Result<PrototypeSet> {
        let mut rows = Vec::with_capacity(clusters.len());
        for &c in clusters {
            rows.push(self.prototype(c).ok_or(Error::EmptyPrototype { cluster: c })?);
        }
        Ok(PrototypeSet {
            p: FeatureMatrix::from_rows(&rows)?,
            view,
        })
    }

    /// All `k` prototypes, failing on the first absent cluster.
    pub fn all(&self, view: View) -> Result<PrototypeSet> {
        self.prototypes_for(&(0..self.k()).collect::<Vec<_>>(), view)
    }

    /// Maps a gradient on the prototypes of `clusters` back onto the batch rows.
    pub fn backward(&self, clusters: &[usize], grad: &FeatureMatrix) -> Result<FeatureMatrix> {
        if grad.rows() != clusters.len() || grad.cols() != self.sums.cols() {
            return Err(Error::DimensionMismatch {
                expected: clusters.len(),
                actual: grad.rows(),
            });
        }
        let d = self.sums.cols();
        // gradient w.r.t. the unnormalized sums
        let mut grad_sums = FeatureMatrix::zeros(clusters.len(), d);
        for (r, &c) in clusters.iter().enumerate() {
            if !self.present[c] {
                return Err(Error::EmptyPrototype { cluster: c });
            }
            let n = self.norms[c];
            let s = self.sums.row(c);
            let g = grad.row(r);
            let sg = dot(s, g) / (n * n);
            for ((o, gj), sj) in grad_sums.row_mut(r).iter_mut().zip(g).zip(s) {
                *o = (gj - sj * sg) / n;
            }
        }
        let mut out = FeatureMatrix::zeros(self.weights.rows(), d);
        for i in 0..self.weights.rows() {
            let row = out.row_mut(i);
            for (r, &c) in clusters.iter().enumerate() {
                let w = self.weights.get(i, c);
                if w == 0.0 {
                    continue;
                }
                for (o, g) in row.iter_mut().zip(grad_sums.row(r)) {
                    *o += w * g;
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn one_hot(labels: &[usize], k: usize) -> Result<FeatureMatrix> {
    let mut w = FeatureMatrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: l + 1,
            });
        }
        w.set(i, l, 1.0);
    }
    Ok(w)
}

/// `p_k = sum_i w_ik z_i / |sum_i w_ik z_i|` over the batch.
pub fn soft_prototypes(z: &FeatureMatrix, w_batch: &FeatureMatrix, k: usize) -> Result<PrototypeSet> {
    if w_batch.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: w_batch.cols(),
        });
    }
    PrototypeEstimate::new(z, w_batch)?.all(View::Online)
}

/// Normalized mean of the rows carrying each label.
pub fn hard_prototypes(z: &FeatureMatrix, labels: &HardLabels, k: usize) -> Result<PrototypeSet> {
    PrototypeEstimate::from_labels(z, labels.as_slice(), k)?.all(View::Online)
}

/// Angle in radians between two vectors, robust near 0.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let cos = dot(a, b) / (na * nb);
    let perp: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x / na - cos * y / nb;
            t * t
        })
        .sum::<f64>()
        .sqrt();
    perp.atan2(cos)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftTrial {
    pub trial: usize,
    pub hard_drift: f64,
    pub soft_drift: f64,
}

/// Per-trial drift of hard and soft batch prototypes from the true centers.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub trials: Vec<DriftTrial>,
}

impl DriftReport {
    pub fn hard_mean(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.hard_drift))
    }

    pub fn soft_mean(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.soft_drift))
    }

    /// Fraction of trials where the soft prototypes drift no more than the hard ones.
    pub fn soft_win_rate(&self) -> f64 {
        mean(
            self.trials
                .iter()
                .map(|t| f64::from(u8::from(t.soft_drift <= t.hard_drift))),
        )
    }

    /// `trial,hard_drift,soft_drift` with a header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "trial,hard_drift,soft_drift")?;
        for t in &self.trials {
            writeln!(out, "{},{:?},{:?}", t.trial, t.hard_drift, t.soft_drift)?;
        }
        Ok(())
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return f64::NAN;
    }
    it.sum::<f64>() / n as f64
}

/// Samples `trials` random batches from a population labelled by its nearest
/// true center and measures the mean angular deviation of hard and soft
/// prototypes from the true center directions.
pub fn drift_experiment(
    population: &FeatureMatrix,
    true_centers: &Centers,
    batch_size: usize,
    trials: usize,
    rng: &mut RngState,
) -> Result<DriftReport> {
    drift_experiment_with(Execution::default(), population, true_centers, batch_size, trials, rng)
}

pub fn drift_experiment_with(
    exec: Execution,
    population: &FeatureMatrix,
    true_centers: &Centers,
    batch_size: usize,
    trials: usize,
    rng: &mut RngState,
) -> Result<DriftReport> {
    let labels = assign_nearest(population, true_centers)?;
    let q = soft_assign(population, true_centers, 1.0)?;
    let w = compute_weights(&q)?;
    drift_with_weights(exec, population, &labels, &w.w, true_centers, batch_size, trials, rng)
}

/// Drift comparison with caller-supplied soft weights.
#[allow(clippy::too_many_arguments)]
pub fn drift_with_weights(
    exec: Execution,
    population: &FeatureMatrix,
    labels: &HardLabels,
    weights: &FeatureMatrix,
    true_centers: &Centers,
    batch_size: usize,
    trials: usize,
    rng: &mut RngState,
) -> Result<DriftReport> {
    let n = population.rows();
    let k = true_centers.k();
    if batch_size == 0 || batch_size >= n {
        return Err(Error::ConfigInvalid(format!(
            "batch size {batch_size} must be in 1..{n}"
        )));
    }
    if labels.len() != n || weights.rows() != n || weights.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    // each trial draws from its own substream so results do not depend on scheduling
    let base = rng.split().seed();
    let results = par::map_tasks(exec, trials, |t| -> Result<DriftTrial> {
        let mut trial_rng = RngState::substream(base, t as u64);
        let idx = trial_rng.sample_indices(n, batch_size);
        let z = population.select_rows(&idx);
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels.0[i]).collect();
        let hard = PrototypeEstimate::from_labels(&z, &batch_labels, k)?;
        let soft = PrototypeEstimate::new(&z, &weights.select_rows(&idx))?;
        let (mut hd, mut sd, mut counted) = (0.0, 0.0, 0usize);
        for c in 0..k {
            if let (Some(h), Some(s)) = (hard.prototype(c), soft.prototype(c)) {
                let truth = true_centers.mu.row(c);
                hd += angle_between(&h, truth);
                sd += angle_between(&s, truth);
                counted += 1;
            }
        }
        let counted = counted.max(1) as f64;
        Ok(DriftTrial {
            trial: t,
            hard_drift: hd / counted,
            soft_drift: sd / counted,
        })
    });
    Ok(DriftReport {
        trials: results.into_iter().collect::<Result<_>>()?,
    })
}
