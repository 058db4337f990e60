//! Student-t soft assignment of samples to centers and the sharpened,
//! frequency-balanced confidence weights derived from it.

use crate::error::{Error, Result};
use crate::kmeans::Centers;
use crate::numerics::{sq_dist, FeatureMatrix};
use crate::par::{self, Execution};

/// Floor applied to the unnormalized kernel value before row normalization.
pub const KERNEL_FLOOR: f64 = 1e-30;
/// Cluster frequencies below this make the weights undefined.
pub const FREQUENCY_TOL: f64 = 1e-12;

/// Row-stochastic `n x k` membership probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    pub q: FeatureMatrix,
    pub alpha: f64,
}

/// Row-stochastic `n x k` weights plus the soft frequencies used to build them.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub w: FeatureMatrix,
    pub f: Vec<f64>,
}

impl WeightMatrix {
    /// Weight rows for the given sample indices.
    pub fn rows_for(&self, indices: &[usize]) -> FeatureMatrix {
        self.w.select_rows(indices)
    }
}

pub fn soft_assign(z: &FeatureMatrix, c: &Centers, alpha: f64) -> Result<SoftAssignment> {
    soft_assign_with(Execution::default(), z, c, alpha)
}

/// `q_ik ∝ (1 + |z_i - mu_k|^2 / alpha)^(-(alpha + 1) / 2)`, normalized per row.
pub fn soft_assign_with(
    exec: Execution,
    z: &FeatureMatrix,
    c: &Centers,
    alpha: f64,
) -> Result<SoftAssignment> {
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    if z.cols() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            actual: z.cols(),
        });
    }
    let k = c.k();
    let power = -(alpha + 1.0) / 2.0;
    let rows = par::map_indexed(exec, z.rows(), |i| {
        let x = z.row(i);
        let mut row: Vec<f64> = c
            .mu
            .iter_rows()
            .map(|m| (1.0 + sq_dist(x, m) / alpha).powf(power).max(KERNEL_FLOOR))
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        row
    });
    let q = FeatureMatrix::from_raw(z.rows(), k, rows.concat());
    Ok(SoftAssignment { q, alpha })
}

/// `w_ik = (q_ik^2 / f_k) / sum_k' (q_ik'^2 / f_k')` with `f_k = sum_i q_ik`.
pub fn compute_weights(q: &SoftAssignment) -> Result<WeightMatrix> {
    let q = &q.q;
    let k = q.cols();
    let mut f = vec![0.0; k];
    for row in q.iter_rows() {
        for (acc, v) in f.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if let Some((cluster, &value)) = f.iter().enumerate().find(|(_, v)| **v < FREQUENCY_TOL) {
        return Err(Error::DegenerateFrequency { cluster, value });
    }
    let mut w = FeatureMatrix::zeros(q.rows(), k);
    for i in 0..q.rows() {
        let out = w.row_mut(i);
        for ((o, qv), fk) in out.iter_mut().zip(q.row(i)).zip(&f) {
            *o = qv * qv / fk;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
    }
    Ok(WeightMatrix { w, f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_noise, RngState};
    use proptest::prelude::*;

    fn centers(rows: &[&[f64]]) -> Centers {
        Centers::new(FeatureMatrix::from_rows(rows).unwrap()).unwrap()
    }

    /// Direct scalar evaluation of the Student-t kernel, one entry at a time.
    fn naive_q(z: &FeatureMatrix, mu: &FeatureMatrix, alpha: f64) -> Vec<Vec<f64>> {
        let mut out = vec![];
        for i in 0..z.rows() {
            let mut num = vec![];
            for k in 0..mu.rows() {
                let mut d = 0.0;
                for j in 0..z.cols() {
                    d += (z.get(i, j) - mu.get(k, j)) * (z.get(i, j) - mu.get(k, j));
                }
                num.push((1.0 + d / alpha).powf(-(alpha + 1.0) / 2.0));
            }
            let s: f64 = num.iter().sum();
            out.push(num.iter().map(|v| v / s).collect());
        }
        out
    }

    #[test]
    fn equidistant_point_is_uniform() {
        let c = centers(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let z = FeatureMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let q = soft_assign(&z, &c, 1.0).unwrap();
        for v in q.q.row(0) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_center_scalar_example() {
        let c = centers(&[&[0.0], &[1.0]]);
        let z = FeatureMatrix::from_rows(&[[0.0]]).unwrap();
        let q = soft_assign(&z, &c, 1.0).unwrap();
        assert!((q.q.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.q.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn soft_assign_errors() {
        let c = centers(&[&[0.0], &[1.0]]);
        let z = FeatureMatrix::from_rows(&[[0.0]]).unwrap();
        assert!(matches!(soft_assign(&z, &c, 0.0), Err(Error::NonPositiveAlpha(_))));
        let z2 = FeatureMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(
            soft_assign(&z2, &c, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn far_points_stay_positive() {
        let c = centers(&[&[0.0], &[1e200]]);
        let z = FeatureMatrix::from_rows(&[[-1e200]]).unwrap();
        let q = soft_assign(&z, &c, 1.0).unwrap();
        assert!(q.q.as_slice().iter().all(|v| *v > 0.0 && v.is_finite()));
    }

    #[test]
    fn weight_examples() {
        let q = SoftAssignment {
            q: FeatureMatrix::from_rows(&[[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]]).unwrap(),
            alpha: 1.0,
        };
        let w = compute_weights(&q).unwrap();
        assert!((w.f[0] - 1.0).abs() < 1e-15 && (w.f[1] - 1.0).abs() < 1e-15);
        let expect = [[0.8, 0.2], [0.2, 0.8]];
        for i in 0..2 {
            for k in 0..2 {
                assert!((w.w.get(i, k) - expect[i][k]).abs() < 1e-12);
            }
        }

        let uniform = SoftAssignment {
            q: FeatureMatrix::new(3, 3, vec![1.0 / 3.0; 9]).unwrap(),
            alpha: 1.0,
        };
        let w = compute_weights(&uniform).unwrap();
        assert!(w.w.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn sharpening_at_delta_point_one() {
        // balanced frequencies: the mirrored row keeps f = (1, 1)
        let d = 0.1;
        let q = SoftAssignment {
            q: FeatureMatrix::from_rows(&[[1.0 - d, d], [d, 1.0 - d]]).unwrap(),
            alpha: 1.0,
        };
        let w = compute_weights(&q).unwrap();
        // 0.81 / (0.81 + 0.01)
        assert!((w.w.get(0, 0) - 0.81 / 0.82).abs() < 1e-12);
        assert!(w.w.get(0, 0) > 1.0 - d);
    }

    #[test]
    fn degenerate_frequency() {
        let q = SoftAssignment {
            q: FeatureMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap(),
            alpha: 1.0,
        };
        assert!(matches!(
            compute_weights(&q),
            Err(Error::DegenerateFrequency { cluster: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn matches_naive_oracle(n in 1usize..=8, k in 2usize..=3, d in 1usize..=4, seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let z = gaussian_noise(&mut rng, n, d);
            let mu = gaussian_noise(&mut rng, k, d);
            let q = soft_assign(&z, &Centers::new(mu.clone()).unwrap(), 1.0).unwrap();
            let oracle = naive_q(&z, &mu, 1.0);
            for i in 0..n {
                let mut s = 0.0;
                for c in 0..k {
                    prop_assert!((q.q.get(i, c) - oracle[i][c]).abs() < 1e-9);
                    prop_assert!(q.q.get(i, c) > 0.0 && q.q.get(i, c) < 1.0);
                    s += q.q.get(i, c);
                }
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn rotation_invariant(seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU) {
            let mut rng = RngState::new(seed);
            let z = gaussian_noise(&mut rng, 5, 2);
            let mu = gaussian_noise(&mut rng, 3, 2);
            let rot = |m: &FeatureMatrix| {
                let (s, c) = theta.sin_cos();
                let rows: Vec<[f64; 2]> = m.iter_rows().map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect();
                FeatureMatrix::from_rows(&rows).unwrap()
            };
            let a = soft_assign(&z, &Centers::new(mu.clone()).unwrap(), 1.0).unwrap();
            let b = soft_assign(&rot(&z), &Centers::new(rot(&mu)).unwrap(), 1.0).unwrap();
            for (x, y) in a.q.as_slice().iter().zip(b.q.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn cluster_permutation_permutes_columns(seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let z = gaussian_noise(&mut rng, 6, 3);
            let mu = gaussian_noise(&mut rng, 3, 3);
            let perm = [2usize, 0, 1];
            let a = soft_assign(&z, &Centers::new(mu.clone()).unwrap(), 1.0).unwrap();
            let b = soft_assign(&z, &Centers::new(mu.select_rows(&perm)).unwrap(), 1.0).unwrap();
            let wa = compute_weights(&a).unwrap();
            let wb = compute_weights(&b).unwrap();
            for i in 0..6 {
                for (c, &p) in perm.iter().enumerate() {
                    prop_assert!((b.q.get(i, c) - a.q.get(i, p)).abs() < 1e-12);
                    prop_assert!((wb.w.get(i, c) - wa.w.get(i, p)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn equal_frequency_weights_keep_argmax(p in prop::collection::vec(0.01f64..1.0, 3)) {
            // the cyclic shifts of one row have identical column sums
            let s: f64 = p.iter().sum();
            let r: Vec<f64> = p.iter().map(|v| v / s).collect();
            let rows = [[r[0], r[1], r[2]], [r[2], r[0], r[1]], [r[1], r[2], r[0]]];
            let q = SoftAssignment { q: FeatureMatrix::from_rows(&rows).unwrap(), alpha: 1.0 };
            let w = compute_weights(&q).unwrap();
            let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
            for i in 0..3 {
                prop_assert_eq!(argmax(w.w.row(i)), argmax(q.q.row(i)));
                prop_assert!((w.w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let wmax = w.w.row(i).iter().cloned().fold(0.0, f64::max);
                let qmax = q.q.row(i).iter().cloned().fold(0.0, f64::max);
                prop_assert!(wmax >= qmax - 1e-12);
            }
        }
    }
}
