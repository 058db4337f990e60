//! Contrastive and consistency objectives with analytic gradients.
//!
//! Every loss takes its inputs as plain matrices and returns gradients with
//! respect to those same matrices. Callers are responsible for routing the
//! gradients through normalization and the networks, and for dropping the
//! gradients of inputs that come from the target network.

use crate::error::{Error, Result};
use crate::numerics::{dot, sq_dist, FeatureMatrix};
use crate::prototypes::PrototypeSet;

/// A scalar objective and its gradients, one per differentiable input in the
/// order documented by the producing function.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<FeatureMatrix>,
}

impl LossValue {
    pub fn zero_like(shapes: &[&FeatureMatrix]) -> Self {
        Self {
            value: 0.0,
            grads: shapes
                .iter()
                .map(|m| FeatureMatrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTau(tau))
    }
}

/// `-log(e^{pos} / sum(e^{neg}))` and the softmax over the negatives.
fn neg_log_ratio(pos: f64, negatives: &[f64]) -> (f64, Vec<f64>) {
    let max = negatives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = negatives.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = max + total.ln();
    (lse - pos, exps.into_iter().map(|e| e / total).collect())
}

/// Sample-level two-view contrastive loss.
///
/// For anchor `i` the positive is `<a_i, b_i>/tau`; the denominator holds
/// every `j != i` from both views. Gradients: `[d/da, d/db]`.
pub fn instance_contrastive(a: &FeatureMatrix, b: &FeatureMatrix, tau: f64) -> Result<LossValue> {
    check_tau(tau)?;
    a.same_shape(b)?;
    let n = a.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut ga = FeatureMatrix::zeros(n, a.cols());
    let mut gb = FeatureMatrix::zeros(n, a.cols());
    let mut total = 0.0;
    let scale = 1.0 / (tau * n as f64);
    let mut sims = Vec::with_capacity(2 * (n - 1));
    for i in 0..n {
        let ai = a.row(i);
        sims.clear();
        for j in (0..n).filter(|&j| j != i) {
            sims.push(dot(ai, a.row(j)) / tau);
            sims.push(dot(ai, b.row(j)) / tau);
        }
        let pos = dot(ai, b.row(i)) / tau;
        let (loss, pi) = neg_log_ratio(pos, &sims);
        total += loss;

        for (o, v) in ga.row_mut(i).iter_mut().zip(b.row(i)) {
            *o -= scale * v;
        }
        for (o, v) in gb.row_mut(i).iter_mut().zip(ai) {
            *o -= scale * v;
        }
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            let (paa, pab) = (pi[2 * slot], pi[2 * slot + 1]);
            for c in 0..a.cols() {
                let acc = scale * (paa * a.get(j, c) + pab * b.get(j, c));
                ga.row_mut(i)[c] += acc;
            }
            for (o, v) in ga.row_mut(j).iter_mut().zip(ai) {
                *o += scale * paa * v;
            }
            for (o, v) in gb.row_mut(j).iter_mut().zip(ai) {
                *o += scale * pab * v;
            }
        }
    }
    Ok(LossValue {
        value: total / n as f64,
        grads: vec![ga, gb],
    })
}

/// Prototype-level contrastive loss between two views.
///
/// Gradients: `[d/dp, d/dp2]`. The trainer only uses the first; the second
/// exists for gradient checking.
pub fn spc_loss(p: &PrototypeSet, p2: &PrototypeSet, tau: f64) -> Result<LossValue> {
    spc_loss_with(p, p2, tau, false)
}

/// As [`spc_loss`]; with `include_positive` the positive pair is also added
/// to the denominator (the usual InfoNCE form).
pub fn spc_loss_with(
    p: &PrototypeSet,
    p2: &PrototypeSet,
    tau: f64,
    include_positive: bool,
) -> Result<LossValue> {
    check_tau(tau)?;
    let (p, q) = (&p.p, &p2.p);
    p.same_shape(q)?;
    let k = p.rows();
    if k < 2 {
        return Err(Error::TooFewPrototypes(k));
    }
    let d = p.cols();
    let mut gp = FeatureMatrix::zeros(k, d);
    let mut gq = FeatureMatrix::zeros(k, d);
    let scale = 1.0 / (tau * k as f64);
    let mut total = 0.0;
    let mut sims = Vec::with_capacity(2 * k);
    for a in 0..k {
        let pa = p.row(a);
        sims.clear();
        for j in (0..k).filter(|&j| j != a) {
            sims.push(dot(pa, p.row(j)) / tau);
            sims.push(dot(pa, q.row(j)) / tau);
        }
        let pos = dot(pa, q.row(a)) / tau;
        if include_positive {
            sims.push(pos);
        }
        let (loss, pi) = neg_log_ratio(pos, &sims);
        total += loss;

        let w_pos = if include_positive { pi[pi.len() - 1] } else { 0.0 };
        // positive term: -(1 - w_pos) <p_a, q_a> / tau
        for c in 0..d {
            gp.row_mut(a)[c] -= scale * (1.0 - w_pos) * q.get(a, c);
            gq.row_mut(a)[c] -= scale * (1.0 - w_pos) * pa[c];
        }
        for (slot, j) in (0..k).filter(|&j| j != a).enumerate() {
            let (wpp, wpq) = (pi[2 * slot], pi[2 * slot + 1]);
            for c in 0..d {
                let acc = scale * (wpp * p.get(j, c) + wpq * q.get(j, c));
                gp.row_mut(a)[c] += acc;
            }
            for (o, v) in gp.row_mut(j).iter_mut().zip(pa) {
                *o += scale * wpp * v;
            }
            for (o, v) in gq.row_mut(j).iter_mut().zip(pa) {
                *o += scale * wpq * v;
            }
        }
    }
    Ok(LossValue {
        value: total / k as f64,
        grads: vec![gp, gq],
    })
}

/// Which halves of the dual consistency loss are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DclTerms {
    /// Prediction of view t against the other view.
    pub transform: bool,
    /// Prediction of the perturbed neighbourhood against view t.
    pub neighbourhood: bool,
}

impl DclTerms {
    pub const BOTH: DclTerms = DclTerms {
        transform: true,
        neighbourhood: true,
    };
}

/// Dual consistency loss `2 - mean(<pred_t, z_t2> + <pred_t2_noisy, z_t>)`
/// for unit-norm rows.
///
/// Gradients: `[d/dpred_t, d/dpred_t2_noisy]`; the two target-side inputs
/// are treated as constants.
pub fn dcl_loss(
    pred_t: &FeatureMatrix,
    z_t2: &FeatureMatrix,
    pred_t2_noisy: &FeatureMatrix,
    z_t: &FeatureMatrix,
) -> Result<LossValue> {
    dcl_loss_terms(pred_t, z_t2, pred_t2_noisy, z_t, DclTerms::BOTH)
}

/// [`dcl_loss`] with individual halves switched off; each active half
/// contributes `1 - mean(<pred, target>)`.
pub fn dcl_loss_terms(
    pred_t: &FeatureMatrix,
    z_t2: &FeatureMatrix,
    pred_t2_noisy: &FeatureMatrix,
    z_t: &FeatureMatrix,
    terms: DclTerms,
) -> Result<LossValue> {
    pred_t.same_shape(z_t2)?;
    pred_t2_noisy.same_shape(z_t)?;
    pred_t.same_shape(z_t)?;
    let n = pred_t.rows() as f64;
    let mut out = LossValue::zero_like(&[pred_t, pred_t2_noisy]);
    for (on, pred, target, slot) in [
        (terms.transform, pred_t, z_t2, 0),
        (terms.neighbourhood, pred_t2_noisy, z_t, 1),
    ] {
        if !on {
            continue;
        }
        let sim: f64 = pred.iter_rows().zip(target.iter_rows()).map(|(a, b)| dot(a, b)).sum();
        out.value += 1.0 - sim / n;
        let g = &mut out.grads[slot];
        for (o, t) in g.as_mut_slice().iter_mut().zip(target.as_slice()) {
            *o = -t / n;
        }
    }
    Ok(out)
}

/// The same consistency loss written as half the mean squared distance.
pub fn dcl_loss_squared_form(
    pred_t: &FeatureMatrix,
    z_t2: &FeatureMatrix,
    pred_t2_noisy: &FeatureMatrix,
    z_t: &FeatureMatrix,
) -> Result<f64> {
    pred_t.same_shape(z_t2)?;
    pred_t2_noisy.same_shape(z_t)?;
    let n = pred_t.rows() as f64;
    let first: f64 = pred_t.iter_rows().zip(z_t2.iter_rows()).map(|(a, b)| sq_dist(a, b)).sum();
    let second: f64 = pred_t2_noisy.iter_rows().zip(z_t.iter_rows()).map(|(a, b)| sq_dist(a, b)).sum();
    Ok((first + second) / (2.0 * n))
}

/// `ld + lambda * ls`, with gradients summed input by input.
pub fn total_loss(ld: &LossValue, ls: &LossValue, lambda: f64) -> Result<LossValue> {
    if !(lambda >= 0.0) {
        return Err(Error::ConfigInvalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if ld.grads.len() != ls.grads.len() {
        return Err(Error::DimensionMismatch {
            expected: ld.grads.len(),
            actual: ls.grads.len(),
        });
    }
    let mut grads = ld.grads.clone();
    for (g, s) in grads.iter_mut().zip(&ls.grads) {
        g.add_scaled(s, lambda)?;
    }
    Ok(LossValue {
        value: ld.value + lambda * ls.value,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_noise, l2_normalize_rows, RngState};
    use crate::prototypes::View;
    use proptest::prelude::*;

    fn unit(rng: &mut RngState, n: usize, d: usize) -> FeatureMatrix {
        l2_normalize_rows(&gaussian_noise(rng, n, d)).unwrap()
    }

    fn protos(p: FeatureMatrix) -> PrototypeSet {
        PrototypeSet { p, view: View::Online }
    }

    fn eye(n: usize, d: usize, offset: usize) -> FeatureMatrix {
        let mut m = FeatureMatrix::zeros(n, d);
        for i in 0..n {
            m.set(i, i + offset, 1.0);
        }
        m
    }

    /// Central differences of `f` at every entry of `inputs[which]`.
    fn numeric_grad(
        inputs: &[FeatureMatrix],
        which: usize,
        f: &dyn Fn(&[FeatureMatrix]) -> f64,
    ) -> Vec<f64> {
        let h = 1e-5;
        (0..inputs[which].as_slice().len())
            .map(|idx| {
                let mut plus = inputs.to_vec();
                plus[which].as_mut_slice()[idx] += h;
                let mut minus = inputs.to_vec();
                minus[which].as_mut_slice()[idx] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn instance_scalar_example() {
        let a = eye(2, 4, 0);
        let l = instance_contrastive(&a, &a, 0.5).unwrap();
        let expected = -(std::f64::consts::E.powi(2) / 2.0).ln();
        assert!((l.value - expected).abs() < 1e-12);
    }

    #[test]
    fn instance_errors() {
        let a = eye(1, 2, 0);
        assert!(matches!(instance_contrastive(&a, &a, 0.5), Err(Error::BatchTooSmall(1))));
        let b = eye(2, 2, 0);
        assert!(matches!(instance_contrastive(&b, &b, 0.0), Err(Error::NonPositiveTau(_))));
    }

    #[test]
    fn spc_scalar_example() {
        let p = protos(eye(2, 3, 0));
        let l = spc_loss(&p, &p, 0.5).unwrap();
        assert!((l.value - (2f64.ln() - 2.0)).abs() < 1e-12);
        assert!((l.value + 1.3069).abs() < 1e-4);
        assert!(matches!(
            spc_loss(&protos(eye(1, 2, 0)), &protos(eye(1, 2, 0)), 0.5),
            Err(Error::TooFewPrototypes(1))
        ));
    }

    #[test]
    fn dcl_alignment_extremes() {
        let mut rng = RngState::new(1);
        let z = unit(&mut rng, 4, 3);
        let l = dcl_loss(&z, &z, &z, &z).unwrap();
        assert!(l.value.abs() < 1e-12);
        let a = eye(2, 4, 0);
        let b = eye(2, 4, 2);
        assert!((dcl_loss(&a, &b, &a, &b).unwrap().value - 2.0).abs() < 1e-15);
        let wrong = eye(3, 4, 0);
        assert!(matches!(
            dcl_loss(&a, &wrong, &a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dcl_terms_split_the_value() {
        let mut rng = RngState::new(2);
        let (p1, t2, p2, t1) = (unit(&mut rng, 5, 3), unit(&mut rng, 5, 3), unit(&mut rng, 5, 3), unit(&mut rng, 5, 3));
        let both = dcl_loss(&p1, &t2, &p2, &t1).unwrap();
        let first = dcl_loss_terms(&p1, &t2, &p2, &t1, DclTerms { transform: true, neighbourhood: false }).unwrap();
        let second = dcl_loss_terms(&p1, &t2, &p2, &t1, DclTerms { transform: false, neighbourhood: true }).unwrap();
        assert!((both.value - first.value - second.value).abs() < 1e-12);
        assert_eq!(first.grads[1].max_abs(), 0.0);
        assert_eq!(second.grads[0].max_abs(), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let mut rng = RngState::new(3);
        let m = gaussian_noise(&mut rng, 2, 2);
        let ld = LossValue { value: 0.5, grads: vec![m.clone()] };
        let ls = LossValue { value: -1.0, grads: vec![gaussian_noise(&mut rng, 2, 2)] };
        let t = total_loss(&ld, &ls, 0.1).unwrap();
        assert!((t.value - 0.4).abs() < 1e-15);
        for ((x, a), b) in t.grads[0].as_slice().iter().zip(ld.grads[0].as_slice()).zip(ls.grads[0].as_slice()) {
            assert_eq!(*x, a + 0.1 * b);
        }
        assert_eq!(total_loss(&ld, &ls, 0.0).unwrap(), ld);
    }

    #[test]
    fn spc_monotonic_in_similarities() {
        // raising the positive similarity lowers the loss, raising a negative raises it
        let p = protos(eye(3, 4, 0));
        let base = spc_loss(&p, &p, 0.5).unwrap().value;
        let mut q = eye(3, 4, 0);
        q.set(0, 0, 0.8);
        q.set(0, 3, 0.6);
        let weaker = spc_loss(&p, &protos(q), 0.5).unwrap().value;
        assert!(weaker > base);
        let mut q = eye(3, 4, 0);
        q.set(1, 1, 0.8);
        q.set(1, 0, 0.6);
        let crowded = spc_loss(&p, &protos(q), 0.5).unwrap().value;
        assert!(crowded > base);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn instance_gradients(seed in any::<u64>(), n in 2usize..6) {
            let mut rng = RngState::new(seed);
            let inputs = vec![unit(&mut rng, n, 3), unit(&mut rng, n, 3)];
            let l = instance_contrastive(&inputs[0], &inputs[1], 0.5).unwrap();
            let f = |x: &[FeatureMatrix]| instance_contrastive(&x[0], &x[1], 0.5).unwrap().value;
            for w in 0..2 {
                let num = numeric_grad(&inputs, w, &f);
                prop_assert!(max_rel_err(l.grads[w].as_slice(), &num) < 1e-4);
            }
        }

        #[test]
        fn spc_gradients(seed in any::<u64>(), k in 2usize..5, include in any::<bool>()) {
            let mut rng = RngState::new(seed);
            let inputs = vec![unit(&mut rng, k, 4), unit(&mut rng, k, 4)];
            let f = |x: &[FeatureMatrix]| {
                spc_loss_with(&protos(x[0].clone()), &protos(x[1].clone()), 0.5, include).unwrap().value
            };
            let l = spc_loss_with(&protos(inputs[0].clone()), &protos(inputs[1].clone()), 0.5, include).unwrap();
            for w in 0..2 {
                let num = numeric_grad(&inputs, w, &f);
                prop_assert!(max_rel_err(l.grads[w].as_slice(), &num) < 1e-4);
            }
        }

        #[test]
        fn dcl_gradients_and_identity(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = RngState::new(seed);
            let inputs: Vec<FeatureMatrix> = (0..4).map(|_| unit(&mut rng, n, 3)).collect();
            let f = |x: &[FeatureMatrix]| dcl_loss(&x[0], &x[1], &x[2], &x[3]).unwrap().value;
            let l = dcl_loss(&inputs[0], &inputs[1], &inputs[2], &inputs[3]).unwrap();
            for (slot, which) in [(0usize, 0usize), (1, 2)] {
                let num = numeric_grad(&inputs, which, &f);
                prop_assert!(max_rel_err(l.grads[slot].as_slice(), &num) < 1e-4);
            }
            let sq = dcl_loss_squared_form(&inputs[0], &inputs[1], &inputs[2], &inputs[3]).unwrap();
            prop_assert!((sq - l.value).abs() < 1e-9);
        }

        #[test]
        fn losses_are_rotation_and_order_invariant(seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU) {
            let mut rng = RngState::new(seed);
            let (a, b) = (unit(&mut rng, 4, 2), unit(&mut rng, 4, 2));
            let rot = |m: &FeatureMatrix| {
                let (s, c) = theta.sin_cos();
                let rows: Vec<[f64; 2]> = m.iter_rows().map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect();
                FeatureMatrix::from_rows(&rows).unwrap()
            };
            let i0 = instance_contrastive(&a, &b, 0.5).unwrap().value;
            prop_assert!((instance_contrastive(&rot(&a), &rot(&b), 0.5).unwrap().value - i0).abs() < 1e-9);
            let perm = [3usize, 1, 0, 2];
            let ip = instance_contrastive(&a.select_rows(&perm), &b.select_rows(&perm), 0.5).unwrap().value;
            prop_assert!((ip - i0).abs() < 1e-9);

            let s0 = spc_loss(&protos(a.clone()), &protos(b.clone()), 0.5).unwrap().value;
            prop_assert!((spc_loss(&protos(rot(&a)), &protos(rot(&b)), 0.5).unwrap().value - s0).abs() < 1e-9);
            let sp = spc_loss(&protos(a.select_rows(&perm)), &protos(b.select_rows(&perm)), 0.5).unwrap().value;
            prop_assert!((sp - s0).abs() < 1e-9);

            let d0 = dcl_loss(&a, &b, &b, &a).unwrap().value;
            prop_assert!((dcl_loss(&rot(&a), &rot(&b), &rot(&b), &rot(&a)).unwrap().value - d0).abs() < 1e-9);
        }
    }
}
