//! Cross-objective identities and gradient-path checks for the attacks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use weightleak_core::attacks::{
    estimate_alpha, objective_dlg_k, objective_dlm, objective_dlm_plus,
};
use weightleak_core::autodiff::Var;
use weightleak_core::dataio::synthetic_dataset;
use weightleak_core::flsim::{
    client_local_train, loss_and_weight_gradient, ClientConfig,
};
use weightleak_core::gradcheck::{central_difference, max_relative_error};
use weightleak_core::models::{bind_weights, build_mlp, forward, init_weights};
use weightleak_core::{Graph, Tensor};

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

const SHAPES: [&[usize]; 2] = [&[4, 3], &[3, 2]];

/// The weight-delta objective with tuning factor gamma equals the tuned
/// gradient objective at factor gamma*lr when the weights moved exactly one
/// SGD step: 100 randomized instances, relative deviation <= 1e-9.
#[test]
fn dlm_equals_tuned_dlg_at_gamma_times_lr() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..100 {
        let w_before = random_tensors(1000 + trial, &SHAPES);
        let grads = random_tensors(2000 + trial, &SHAPES);
        let dummy = random_tensors(3000 + trial, &SHAPES);
        let alpha = rng.random_range(0.001..0.2);
        let gamma = rng.random_range(0.5..200.0);
        let w_after: Vec<Tensor> = w_before
            .iter()
            .zip(&grads)
            .map(|(w, g)| w.ew_sub(&g.scaled(alpha)).unwrap())
            .collect();

        let mut g = Graph::new();
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = w_before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = w_after.iter().map(|t| g.constant(t.clone())).collect();
        let gv_t: Vec<Var> = grads.iter().map(|t| g.constant(t.clone())).collect();
        let gamma_var = g.leaf(Tensor::scalar(gamma), true);

        let dlm = objective_dlm(&mut g, &dv, &bv, &av, gamma_var).unwrap();
        let dlg_k = objective_dlg_k(&mut g, &dv, &gv_t, gamma * alpha).unwrap();
        let (a, b) = (g.value(dlm).item(), g.value(dlg_k).item());
        assert!(
            (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
            "trial {trial}: {a} vs {b}"
        );
    }
}

/// Scaling the observed delta by any positive factor leaves the normalized
/// objective unchanged to 1e-12.
#[test]
fn dlm_plus_invariant_under_delta_rescaling() {
    let w_before = random_tensors(50, &SHAPES);
    let delta = random_tensors(51, &SHAPES);
    let dummy = random_tensors(52, &SHAPES);

    let eval = |scale: f64| -> f64 {
        let w_after: Vec<Tensor> = w_before
            .iter()
            .zip(&delta)
            .map(|(w, d)| w.ew_sub(&d.scaled(scale)).unwrap())
            .collect();
        let mut g = Graph::new();
        let img = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), true);
        let dv: Vec<Var> = dummy.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let bv: Vec<Var> = w_before.iter().map(|t| g.constant(t.clone())).collect();
        let av: Vec<Var> = w_after.iter().map(|t| g.constant(t.clone())).collect();
        let obj = objective_dlm_plus(&mut g, &dv, &bv, &av, 0.0, img).unwrap();
        g.value(obj).item()
    };

    let base = eval(1.0);
    for c in [0.5, 2.0, 10.0] {
        let scaled = eval(c);
        assert!((scaled - base).abs() <= 1e-12, "c={c}: {scaled} vs {base}");
    }
}

/// Both normalized terms have unit Frobenius norm when the guards are idle.
#[test]
fn dlm_plus_normalized_terms_are_unit_norm() {
    let w_before = random_tensors(60, &SHAPES);
    let w_after = random_tensors(61, &SHAPES);
    let dummy = random_tensors(62, &SHAPES);

    let delta: Vec<Tensor> = w_before
        .iter()
        .zip(&w_after)
        .map(|(b, a)| b.ew_sub(a).unwrap())
        .collect();
    let dn = weightleak_core::tensor::frobenius_norm_all_tensors(&delta);
    let normalized: Vec<Tensor> = delta.iter().map(|d| d.map(|v| v / dn)).collect();
    let nn = weightleak_core::tensor::frobenius_norm_all_tensors(&normalized);
    assert!((nn - 1.0).abs() <= 1e-10);

    let gn = weightleak_core::tensor::frobenius_norm_all_tensors(&dummy);
    let g_normalized: Vec<Tensor> =
        dummy.iter().map(|d| d.map(|v| v / (gn + 1e-12))).collect();
    let gnn = weightleak_core::tensor::frobenius_norm_all_tensors(&g_normalized);
    assert!((gnn - 1.0).abs() <= 1e-10);
}

/// Feeding the true gradient recovers the exact client learning rate.
#[test]
fn alpha_estimate_recovers_client_learning_rate() {
    let spec = build_mlp([1, 4, 4], 6, 3).unwrap();
    let data = synthetic_dataset(4, [1, 4, 4], 3, 7).unwrap();
    let global = init_weights(&spec, 3).unwrap();
    let lr = 0.01;
    let cfg = ClientConfig { learning_rate: lr, ..Default::default() };
    let trained =
        client_local_train(&spec, &global, &[(&data.images[0], data.labels[0])], &cfg).unwrap();
    let (_, grads) =
        loss_and_weight_gradient(&spec, &global, &[&data.images[0]], &[data.labels[0]]).unwrap();
    let est = estimate_alpha(&grads, global.tensors(), trained.tensors()).unwrap();
    assert!((est - lr).abs() <= 1e-10, "estimate {est}");
}

/// Gradient of every attack objective w.r.t. the dummy image matches finite
/// differences of the first-order objective value on a small MLP.
#[test]
fn objective_gradients_wrt_dummy_image_match_finite_differences() {
    let spec = build_mlp([1, 3, 3], 5, 3).unwrap();
    let global = init_weights(&spec, 8).unwrap();
    let data = synthetic_dataset(2, [1, 3, 3], 3, 21).unwrap();
    let cfg = ClientConfig { learning_rate: 0.1, ..Default::default() };
    let trained =
        client_local_train(&spec, &global, &[(&data.images[0], data.labels[0])], &cfg).unwrap();
    let (_, true_grads) =
        loss_and_weight_gradient(&spec, &global, &[&data.images[0]], &[data.labels[0]]).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = Tensor::new(
        vec![1, 1, 3, 3],
        (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let y0 = Tensor::new(vec![1, 3], (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    #[derive(Clone, Copy)]
    enum Kind {
        Dlg,
        DlgK,
        Cosine,
        Dlm,
        DlmPlus,
        DlmPlusTv,
    }

    for kind in [Kind::Dlg, Kind::DlgK, Kind::Cosine, Kind::Dlm, Kind::DlmPlus, Kind::DlmPlusTv] {
        let build = |x_t: &Tensor| -> f64 {
            let mut g = Graph::new();
            let x = g.leaf(x_t.clone(), true);
            let y = g.leaf(y0.clone(), true);
            let wv = bind_weights(&mut g, &spec, &global, true).unwrap();
            let logits = forward(&mut g, &spec, &wv, x).unwrap();
            let loss = g.cross_entropy_soft(logits, y).unwrap();
            let inner = g.gradients(loss, &wv, true).unwrap();
            let dv = inner.vars().unwrap().to_vec();
            let obj = match kind {
                Kind::Dlg => {
                    let tv: Vec<Var> =
                        true_grads.iter().map(|t| g.constant(t.clone())).collect();
                    weightleak_core::attacks::objective_dlg(&mut g, &dv, &tv).unwrap()
                }
                Kind::DlgK => {
                    let tv: Vec<Var> =
                        true_grads.iter().map(|t| g.constant(t.clone())).collect();
                    objective_dlg_k(&mut g, &dv, &tv, 1.1).unwrap()
                }
                Kind::Cosine => {
                    let tv: Vec<Var> =
                        true_grads.iter().map(|t| g.constant(t.clone())).collect();
                    weightleak_core::attacks::objective_cosine(&mut g, &dv, &tv, 0.05, x).unwrap()
                }
                Kind::Dlm => {
                    let bv: Vec<Var> =
                        global.tensors().iter().map(|t| g.constant(t.clone())).collect();
                    let av: Vec<Var> =
                        trained.tensors().iter().map(|t| g.constant(t.clone())).collect();
                    let gamma = g.leaf(Tensor::scalar(9.7), true);
                    objective_dlm(&mut g, &dv, &bv, &av, gamma).unwrap()
                }
                Kind::DlmPlus | Kind::DlmPlusTv => {
                    let bv: Vec<Var> =
                        global.tensors().iter().map(|t| g.constant(t.clone())).collect();
                    let av: Vec<Var> =
                        trained.tensors().iter().map(|t| g.constant(t.clone())).collect();
                    let tvw = if matches!(kind, Kind::DlmPlusTv) { 0.05 } else { 0.0 };
                    objective_dlm_plus(&mut g, &dv, &bv, &av, tvw, x).unwrap()
                }
            };
            g.value(obj).item()
        };

        // Exact gradient through the double backward.
        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true);
        let y = g.leaf(y0.clone(), true);
        let wv = bind_weights(&mut g, &spec, &global, true).unwrap();
        let logits = forward(&mut g, &spec, &wv, x).unwrap();
        let loss = g.cross_entropy_soft(logits, y).unwrap();
        let inner = g.gradients(loss, &wv, true).unwrap();
        let dv = inner.vars().unwrap().to_vec();
        let obj = match kind {
            Kind::Dlg => {
                let tv: Vec<Var> = true_grads.iter().map(|t| g.constant(t.clone())).collect();
                weightleak_core::attacks::objective_dlg(&mut g, &dv, &tv).unwrap()
            }
            Kind::DlgK => {
                let tv: Vec<Var> = true_grads.iter().map(|t| g.constant(t.clone())).collect();
                objective_dlg_k(&mut g, &dv, &tv, 1.1).unwrap()
            }
            Kind::Cosine => {
                let tv: Vec<Var> = true_grads.iter().map(|t| g.constant(t.clone())).collect();
                weightleak_core::attacks::objective_cosine(&mut g, &dv, &tv, 0.05, x).unwrap()
            }
            Kind::Dlm => {
                let bv: Vec<Var> =
                    global.tensors().iter().map(|t| g.constant(t.clone())).collect();
                let av: Vec<Var> =
                    trained.tensors().iter().map(|t| g.constant(t.clone())).collect();
                let gamma = g.leaf(Tensor::scalar(9.7), true);
                objective_dlm(&mut g, &dv, &bv, &av, gamma).unwrap()
            }
            Kind::DlmPlus | Kind::DlmPlusTv => {
                let bv: Vec<Var> =
                    global.tensors().iter().map(|t| g.constant(t.clone())).collect();
                let av: Vec<Var> =
                    trained.tensors().iter().map(|t| g.constant(t.clone())).collect();
                let tvw = if matches!(kind, Kind::DlmPlusTv) { 0.05 } else { 0.0 };
                objective_dlm_plus(&mut g, &dv, &bv, &av, tvw, x).unwrap()
            }
        };
        let exact = g.gradients(obj, &[x], false).unwrap();
        let fd = central_difference(build, &x0, 1e-5);
        let err = max_relative_error(exact.grad(0), &fd, 1e-3);
        assert!(err <= 1e-4, "objective #{} rel err {err}", kind as usize);
    }
}
