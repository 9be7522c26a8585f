//! Exact algebraic identities of the simulator.
//!
//! One plain SGD step on a single example must satisfy
//! `W_before - W_after = lr * grad` elementwise, and the normalized weight
//! delta must equal the normalized gradient for any positive learning rate.

use weightleak_core::dataio::synthetic_dataset;
use weightleak_core::flsim::{
    client_local_train, loss_and_weight_gradient, run_simulation, ClientConfig, ClientOptimizer,
    FederationConfig, Payload, PayloadKind,
};
use weightleak_core::models::{build_mlp, init_weights};
use weightleak_core::tensor::frobenius_norm_all_tensors;
use weightleak_core::Tensor;

fn setup() -> (weightleak_core::models::ModelSpec, weightleak_core::dataio::Dataset) {
    let spec = build_mlp([1, 4, 4], 6, 3).unwrap();
    let data = synthetic_dataset(6, [1, 4, 4], 3, 17).unwrap();
    (spec, data)
}

#[test]
fn single_sgd_step_delta_equals_lr_times_gradient() {
    let (spec, data) = setup();
    let global = init_weights(&spec, 9).unwrap();
    let example = vec![(&data.images[0], data.labels[0])];
    let lr = 0.05;
    let cfg = ClientConfig { learning_rate: lr, ..Default::default() };
    let trained = client_local_train(&spec, &global, &example, &cfg).unwrap();
    let (_, grads) =
        loss_and_weight_gradient(&spec, &global, &[&data.images[0]], &[data.labels[0]]).unwrap();

    for ((b, a), g) in global.tensors().iter().zip(trained.tensors()).zip(&grads) {
        for ((bv, av), gv) in b.data().iter().zip(a.data()).zip(g.data()) {
            assert!((bv - av - lr * gv).abs() <= 1e-12, "{}", bv - av - lr * gv);
        }
    }
}

#[test]
fn normalized_delta_equals_normalized_gradient_across_learning_rates() {
    let (spec, data) = setup();
    let global = init_weights(&spec, 10).unwrap();
    let example = vec![(&data.images[1], data.labels[1])];
    let (_, grads) =
        loss_and_weight_gradient(&spec, &global, &[&data.images[1]], &[data.labels[1]]).unwrap();
    let grad_norm = frobenius_norm_all_tensors(&grads);

    for lr in [1e-3, 1e-2, 1e-1] {
        let cfg = ClientConfig { learning_rate: lr, ..Default::default() };
        let trained = client_local_train(&spec, &global, &example, &cfg).unwrap();
        let deltas: Vec<Tensor> = global
            .tensors()
            .iter()
            .zip(trained.tensors())
            .map(|(b, a)| b.ew_sub(a).unwrap())
            .collect();
        let delta_norm = frobenius_norm_all_tensors(&deltas);
        for (d, g) in deltas.iter().zip(&grads) {
            for (dv, gv) in d.data().iter().zip(g.data()) {
                assert!(
                    (dv / delta_norm - gv / grad_norm).abs() <= 1e-10,
                    "lr {lr}: {} vs {}",
                    dv / delta_norm,
                    gv / grad_norm
                );
            }
        }
    }
}

#[test]
fn gradients_mode_payload_matches_delta_over_lr() {
    let (spec, data) = setup();
    let lr = 0.05;
    let ccfg = ClientConfig { learning_rate: lr, ..Default::default() };

    let weights_log = run_simulation(
        &FederationConfig { seed: 4, ..Default::default() },
        &ccfg,
        &spec,
        None,
        &data,
    )
    .unwrap();
    let grads_log = run_simulation(
        &FederationConfig { seed: 4, transmit: PayloadKind::Gradients, ..Default::default() },
        &ccfg,
        &spec,
        None,
        &data,
    )
    .unwrap();

    let Payload::Weights { weights } = &weights_log[0].payload else { panic!() };
    let Payload::Gradients { gradients } = &grads_log[0].payload else { panic!() };
    for ((b, a), g) in weights_log[0]
        .global_before
        .tensors()
        .iter()
        .zip(weights.tensors())
        .zip(gradients)
    {
        for ((bv, av), gv) in b.data().iter().zip(a.data()).zip(g.data()) {
            assert!(((bv - av) / lr - gv).abs() <= 1e-12);
        }
    }
}

#[test]
fn derived_gradient_update_matches_native_gradients_mode() {
    let (spec, data) = setup();
    let lr = 0.02;
    let ccfg = ClientConfig { learning_rate: lr, ..Default::default() };
    let log = run_simulation(
        &FederationConfig { seed: 6, ..Default::default() },
        &ccfg,
        &spec,
        None,
        &data,
    )
    .unwrap();
    let derived = weightleak_core::flsim::derive_gradient_update(&log[0], lr).unwrap();
    let Payload::Gradients { gradients } = &derived.payload else { panic!() };

    let truth = log[0].ground_truth_for_eval();
    let (_, true_grads) = loss_and_weight_gradient(
        &spec,
        &log[0].global_before,
        &[&truth.images[0]],
        &[truth.labels[0]],
    )
    .unwrap();
    for (d, t) in gradients.iter().zip(&true_grads) {
        for (dv, tv) in d.data().iter().zip(t.data()) {
            // One rounded multiply and subtract apart.
            assert!((dv - tv).abs() <= 1e-10 * (1.0 + tv.abs()));
        }
    }
}

#[test]
fn momentum_accumulates_velocity_over_steps() {
    let (spec, data) = setup();
    let global = init_weights(&spec, 12).unwrap();
    let example = vec![(&data.images[2], data.labels[2])];
    let lr = 0.05;
    let mu = 0.9;
    let cfg = ClientConfig {
        learning_rate: lr,
        optimizer: ClientOptimizer::SgdMomentum { momentum: mu },
        local_epochs: 2,
        batch_size: 1,
    };
    let trained = client_local_train(&spec, &global, &example, &cfg).unwrap();

    // Hand-chained: v1 = g(W0); W1 = W0 - lr v1; v2 = mu v1 + g(W1); W2 = W1 - lr v2.
    let (_, g0) =
        loss_and_weight_gradient(&spec, &global, &[&data.images[2]], &[data.labels[2]]).unwrap();
    let w1: Vec<Tensor> = global
        .tensors()
        .iter()
        .zip(&g0)
        .map(|(w, g)| w.ew_sub(&g.scaled(lr)).unwrap())
        .collect();
    let w1m = weightleak_core::models::ModelWeights::unflatten(
        &spec,
        &weightleak_core::tensor::flatten_all(&w1),
    )
    .unwrap();
    let (_, g1) =
        loss_and_weight_gradient(&spec, &w1m, &[&data.images[2]], &[data.labels[2]]).unwrap();
    for i in 0..w1.len() {
        let v2 = g0[i].scaled(mu).ew_add(&g1[i]).unwrap();
        let w2 = w1[i].ew_sub(&v2.scaled(lr)).unwrap();
        for (got, want) in trained.tensors()[i].data().iter().zip(w2.data()) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn sparsify_defense_zeroes_the_payload() {
    use weightleak_core::defenses::{DefenseConfig, SparsifyConfig, SparsifyScope};
    let (spec, data) = setup();
    let defense = DefenseConfig::Sparsify(SparsifyConfig { rate: 0.5, scope: SparsifyScope::Global });
    let log = run_simulation(
        &FederationConfig { seed: 5, ..Default::default() },
        &ClientConfig::default(),
        &spec,
        Some(&defense),
        &data,
    )
    .unwrap();
    let Payload::Weights { weights } = &log[0].payload else { panic!() };
    let flat = weights.flatten();
    let zero_frac = flat.iter().filter(|&&v| v == 0.0).count() as f64 / flat.len() as f64;
    assert!(zero_frac >= 0.5, "zero fraction {zero_frac}");
    assert!(log[0].defense.as_deref().unwrap_or("").contains("sparsify"));
}

#[test]
fn simulation_is_bit_deterministic() {
    let (spec, data) = setup();
    let fed = FederationConfig { num_clients: 2, rounds: 2, seed: 31, ..Default::default() };
    let ccfg = ClientConfig::default();
    let a = run_simulation(&fed, &ccfg, &spec, None, &data).unwrap();
    let b = run_simulation(&fed, &ccfg, &spec, None, &data).unwrap();
    assert_eq!(a, b);
}
