//! Adversary objective functions.
//!
//! All of them are recorded on the graph, so a backward pass w.r.t. the
//! dummy data flows through the dummy gradient (itself a recorded backward
//! pass). Targets — the observed gradients or weight pairs — are bound as
//! constants by the caller.

use crate::autodiff::{Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::{Graph, Tensor};

fn check_aligned(g: &Graph, a: &[Var], b: &[Var], what: &str) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Contract(format!(
            "{what}: {} vs {} tensors",
            a.len(),
            b.len()
        )));
    }
    for (&x, &y) in a.iter().zip(b) {
        if g.shape(x) != g.shape(y) {
            return Err(Error::Contract(format!(
                "{what}: shape {:?} vs {:?}",
                g.shape(x),
                g.shape(y)
            )));
        }
    }
    Ok(())
}

/// Squared global Frobenius distance between the dummy gradient and the
/// observed gradient.
pub fn objective_dlg(g: &mut Graph, dummy_grad: &[Var], true_grad: &[Var]) -> Result<Var> {
    check_aligned(g, dummy_grad, true_grad, "gradient-distance objective")?;
    let mut diffs = Vec::with_capacity(dummy_grad.len());
    for (&d, &t) in dummy_grad.iter().zip(true_grad) {
        diffs.push(g.sub(d, t)?);
    }
    g.sum_squares_all(&diffs)
}

/// Gradient distance with a tuning factor on the observed side:
/// `|| ghat - k * g ||_F^2`. `k = 1` reproduces [`objective_dlg`] exactly.
pub fn objective_dlg_k(g: &mut Graph, dummy_grad: &[Var], true_grad: &[Var], k: f64) -> Result<Var> {
    check_aligned(g, dummy_grad, true_grad, "tuned gradient-distance objective")?;
    let mut diffs = Vec::with_capacity(dummy_grad.len());
    for (&d, &t) in dummy_grad.iter().zip(true_grad) {
        let scaled = if k == 1.0 { t } else { g.mul_const(t, k) };
        diffs.push(g.sub(d, scaled)?);
    }
    g.sum_squares_all(&diffs)
}

/// Angular mismatch `1 - <ghat, g> / (||ghat|| ||g|| + eps)` plus an optional
/// total-variation prior on the dummy image.
pub fn objective_cosine(
    g: &mut Graph,
    dummy_grad: &[Var],
    true_grad: &[Var],
    tv_weight: f64,
    dummy_image: Var,
) -> Result<Var> {
    check_aligned(g, dummy_grad, true_grad, "cosine objective")?;
    let dot = g.dot_all(dummy_grad, true_grad)?;
    let n_dummy = g.frobenius_norm_all(dummy_grad)?;
    let n_true = g.frobenius_norm_all(true_grad)?;
    let denom = g.mul(n_dummy, n_true)?;
    let inv = g.recip(denom, crate::scalar::cast(NORM_EPS));
    let cos = g.mul(dot, inv)?;
    let neg = g.neg(cos);
    let mut obj = g.add_const(neg, 1.0);
    if tv_weight != 0.0 {
        let tv = g.total_variation(dummy_image)?;
        let scaled = g.mul_const(tv, tv_weight);
        obj = g.add(obj, scaled)?;
    }
    Ok(obj)
}

/// Weight-delta matching with a learnable tuning factor:
/// `|| ghat - gamma * (W_before - W_after) ||_F^2`.
pub fn objective_dlm(
    g: &mut Graph,
    dummy_grad: &[Var],
    w_before: &[Var],
    w_after: &[Var],
    gamma: Var,
) -> Result<Var> {
    check_aligned(g, w_before, w_after, "weight-delta objective")?;
    check_aligned(g, dummy_grad, w_before, "weight-delta objective")?;
    if !g.shape(gamma).is_empty() {
        return Err(Error::Argument("gamma must be a 0-dim variable".into()));
    }
    let mut diffs = Vec::with_capacity(dummy_grad.len());
    for ((&d, &wb), &wa) in dummy_grad.iter().zip(w_before).zip(w_after) {
        let delta = g.sub(wb, wa)?;
        let scaled = g.scale_by(delta, gamma)?;
        diffs.push(g.sub(d, scaled)?);
    }
    g.sum_squares_all(&diffs)
}

/// Normalized-direction matching, free of the client learning rate:
/// `|| ghat/||ghat|| - delta/||delta|| ||_F^2 (+ tv_weight * TV(x))`.
///
/// The dummy-gradient normalization carries the usual denominator floor;
/// the observed delta is divided by its exact norm (a zero delta is a
/// degenerate update and an error), which keeps the objective invariant
/// under any positive rescaling of the delta.
pub fn objective_dlm_plus(
    g: &mut Graph,
    dummy_grad: &[Var],
    w_before: &[Var],
    w_after: &[Var],
    tv_weight: f64,
    dummy_image: Var,
) -> Result<Var> {
    check_aligned(g, w_before, w_after, "normalized-delta objective")?;
    check_aligned(g, dummy_grad, w_before, "normalized-delta objective")?;

    let mut deltas = Vec::with_capacity(w_before.len());
    for (&wb, &wa) in w_before.iter().zip(w_after) {
        deltas.push(g.sub(wb, wa)?);
    }
    let delta_norm = g.frobenius_norm_all(&deltas)?;
    if g.value(delta_norm).item() == 0.0 {
        return Err(Error::DegenerateUpdate(
            "transmitted weights are identical to the global weights".into(),
        ));
    }
    let inv_delta = g.recip(delta_norm, 0.0);

    // The dummy-gradient norm is divided exactly: an additive floor here
    // turns "drive the dummy gradient to zero" into a descent direction
    // (the normalized term collapses to 0 and the objective plateaus at
    // ||d||^2 = 1), a spurious attractor quasi-Newton steps dive into.
    // Without it that configuration is an infinite wall and repels the
    // optimizer; the backward path keeps its own denominator floor.
    let ghat_norm = g.frobenius_norm_all(dummy_grad)?;
    let inv_ghat = g.recip(ghat_norm, 0.0);

    let mut diffs = Vec::with_capacity(dummy_grad.len());
    for (&d, &delta) in dummy_grad.iter().zip(&deltas) {
        let shape = g.shape(d).to_vec();
        let ig = g.broadcast(inv_ghat, &shape)?;
        let nd = g.mul(d, ig)?;
        let id = g.broadcast(inv_delta, &shape)?;
        let ndelta = g.mul(delta, id)?;
        diffs.push(g.sub(nd, ndelta)?);
    }
    let mut obj = g.sum_squares_all(&diffs)?;
    if tv_weight != 0.0 {
        let tv = g.total_variation(dummy_image)?;
        let scaled = g.mul_const(tv, tv_weight);
        obj = g.add(obj, scaled)?;
    }
    Ok(obj)
}

/// Diagnostic estimate of the client learning rate from an observed weight
/// pair and a gradient guess: `||W_before - W_after|| / ||ghat||`. Exact
/// when the guess equals the true gradient of one plain SGD step.
pub fn estimate_alpha(dummy_grad: &[Tensor], w_before: &[Tensor], w_after: &[Tensor]) -> Result<f64> {
    if dummy_grad.is_empty() || w_before.len() != w_after.len() {
        return Err(Error::Contract("estimate_alpha: misaligned tensor lists".into()));
    }
    let ghat_norm = crate::tensor::frobenius_norm_all_tensors(dummy_grad);
    if ghat_norm == 0.0 {
        return Err(Error::DegenerateUpdate("zero dummy gradient".into()));
    }
    let mut ssq = 0.0;
    for (b, a) in w_before.iter().zip(w_after) {
        ssq += b.ew_sub(a)?.sum_squares();
    }
    Ok(ssq.sqrt() / ghat_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensors(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                Tensor::new(s.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect()
    }

    const SHAPES: [&[usize]; 2] = [&[3, 2], &[4]];

    #[test]
    fn dlg_zero_on_equal_gradients() {
        let ts = random_tensors(1, &SHAPES);
        let mut g = Graph::new();
        let dummy: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let target: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlg(&mut g, &dummy, &target).unwrap();
        assert_eq!(g.value(obj).item(), 0.0);
    }

    #[test]
    fn dlg_unit_entry_gives_one() {
        let ts = random_tensors(2, &SHAPES);
        let mut bumped = ts.clone();
        let mut data = bumped[0].data().to_vec();
        data[3] += 1.0;
        bumped[0] = Tensor::new(bumped[0].shape().to_vec(), data).unwrap();

        let mut g = Graph::new();
        let dummy: Vec<Var> = bumped.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let target: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlg(&mut g, &dummy, &target).unwrap();
        assert!((g.value(obj).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dlg_matches_elementwise_oracle() {
        let a = random_tensors(3, &SHAPES);
        let b = random_tensors(4, &SHAPES);
        let want: f64 = a
            .iter()
            .zip(&b)
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(u, v)| (u - v) * (u - v)))
            .sum();
        let mut g = Graph::new();
        let dummy: Vec<Var> = a.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let target: Vec<Var> = b.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlg(&mut g, &dummy, &target).unwrap();
        assert!((g.value(obj).item() - want).abs() < 1e-12);
    }

    #[test]
    fn dlg_k_one_equals_dlg() {
        let a = random_tensors(5, &SHAPES);
        let b = random_tensors(6, &SHAPES);
        let mut g = Graph::new();
        let dummy: Vec<Var> = a.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let target: Vec<Var> = b.iter().map(|t| g.constant(t.clone())).collect();
        let plain = objective_dlg(&mut g, &dummy, &target).unwrap();
        let tuned = objective_dlg_k(&mut g, &dummy, &target, 1.0).unwrap();
        assert_eq!(g.value(plain).item(), g.value(tuned).item());
    }

    #[test]
    fn dlg_k_zero_is_dummy_norm_squared() {
        let a = random_tensors(7, &SHAPES);
        let b = random_tensors(8, &SHAPES);
        let want: f64 = a.iter().map(|t| t.sum_squares()).sum();
        let mut g = Graph::new();
        let dummy: Vec<Var> = a.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let target: Vec<Var> = b.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlg_k(&mut g, &dummy, &target, 0.0).unwrap();
        assert!((g.value(obj).item() - want).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_on_aligned_and_two_on_opposed() {
        let ts = random_tensors(9, &SHAPES);
        let mut g = Graph::new();
        let img = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), true);
        let dummy: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let target: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_cosine(&mut g, &dummy, &target, 0.0, img).unwrap();
        assert!(g.value(obj).item().abs() < 1e-9);

        let opposed: Vec<Var> = ts.iter().map(|t| g.constant(t.scaled(-1.0))).collect();
        let obj = objective_cosine(&mut g, &dummy, &opposed, 0.0, img).unwrap();
        assert!((g.value(obj).item() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let ts = random_tensors(10, &SHAPES);
        let mut g = Graph::new();
        let img = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), true);
        let dummy: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let scaled: Vec<Var> = ts.iter().map(|t| g.constant(t.scaled(3.7))).collect();
        let obj = objective_cosine(&mut g, &dummy, &scaled, 0.0, img).unwrap();
        assert!(g.value(obj).item().abs() < 1e-9);
    }

    #[test]
    fn dlm_zero_when_dummy_matches_scaled_delta() {
        let before = random_tensors(11, &SHAPES);
        let after = random_tensors(12, &SHAPES);
        let gamma = 2.5;
        let dummy: Vec<Tensor> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| b.ew_sub(a).unwrap().scaled(gamma))
            .collect();

        let mut g = Graph::new();
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = after.iter().map(|t| g.constant(t.clone())).collect();
        let gv = g.leaf(Tensor::scalar(gamma), true);
        let obj = objective_dlm(&mut g, &dv, &bv, &av, gv).unwrap();
        assert!(g.value(obj).item().abs() < 1e-20);
    }

    #[test]
    fn dlm_matches_direct_oracle() {
        let before = random_tensors(13, &SHAPES);
        let after = random_tensors(14, &SHAPES);
        let dummy = random_tensors(15, &SHAPES);
        let gamma = 0.8;
        let want: f64 = dummy
            .iter()
            .zip(before.iter().zip(&after))
            .flat_map(|(d, (b, a))| {
                d.data()
                    .iter()
                    .zip(b.data().iter().zip(a.data()))
                    .map(move |(dv, (bv, av))| {
                        let r = dv - gamma * (bv - av);
                        r * r
                    })
            })
            .sum();

        let mut g = Graph::new();
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = after.iter().map(|t| g.constant(t.clone())).collect();
        let gv = g.leaf(Tensor::scalar(gamma), true);
        let obj = objective_dlm(&mut g, &dv, &bv, &av, gv).unwrap();
        assert!((g.value(obj).item() - want).abs() < 1e-12);
    }

    #[test]
    fn dlm_plus_zero_on_proportional_delta() {
        let before = random_tensors(16, &SHAPES);
        let after = random_tensors(17, &SHAPES);
        // Dummy gradient proportional (positive scale) to the delta.
        let dummy: Vec<Tensor> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| b.ew_sub(a).unwrap().scaled(0.37))
            .collect();

        let mut g = Graph::new();
        let img = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), true);
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = after.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlm_plus(&mut g, &dv, &bv, &av, 0.0, img).unwrap();
        assert!(g.value(obj).item().abs() < 1e-18, "{}", g.value(obj).item());
    }

    #[test]
    fn dlm_plus_orthogonal_unit_directions_give_two() {
        // One 2-element tensor; dummy along e0, delta along e1.
        let before = vec![Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()];
        let after = vec![Tensor::new(vec![2], vec![1.0, 0.0]).unwrap()];
        let dummy = vec![Tensor::new(vec![2], vec![5.0, 0.0]).unwrap()];

        let mut g = Graph::new();
        let img = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), true);
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = after.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlm_plus(&mut g, &dv, &bv, &av, 0.0, img).unwrap();
        assert!((g.value(obj).item() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn dlm_plus_rejects_identical_weights() {
        let before = random_tensors(18, &SHAPES);
        let dummy = random_tensors(19, &SHAPES);
        let mut g = Graph::new();
        let img = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), true);
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = before.iter().map(|t| g.constant(t.clone())).collect();
        assert!(matches!(
            objective_dlm_plus(&mut g, &dv, &bv, &av, 0.0, img),
            Err(Error::DegenerateUpdate(_))
        ));
    }

    #[test]
    fn alpha_estimate_homogeneity() {
        let before = random_tensors(20, &SHAPES);
        let after = random_tensors(21, &SHAPES);
        let dummy = random_tensors(22, &SHAPES);
        let base = estimate_alpha(&dummy, &before, &after).unwrap();

        // Doubling the delta doubles the estimate.
        let doubled_after: Vec<Tensor> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| b.ew_sub(&b.ew_sub(a).unwrap().scaled(2.0)).unwrap())
            .collect();
        let est = estimate_alpha(&dummy, &before, &doubled_after).unwrap();
        assert!((est - 2.0 * base).abs() < 1e-12);

        // Doubling the dummy gradient halves it.
        let doubled_dummy: Vec<Tensor> = dummy.iter().map(|t| t.scaled(2.0)).collect();
        let est = estimate_alpha(&doubled_dummy, &before, &after).unwrap();
        assert!((est - base / 2.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_estimate_rejects_zero_dummy() {
        let before = random_tensors(23, &SHAPES);
        let after = random_tensors(24, &SHAPES);
        let zeros: Vec<Tensor> = SHAPES.iter().map(|s| Tensor::zeros(s)).collect();
        assert!(matches!(
            estimate_alpha(&zeros, &before, &after),
            Err(Error::DegenerateUpdate(_))
        ));
    }
}
