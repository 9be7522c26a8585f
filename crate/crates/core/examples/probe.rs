// Scratch probe for desk-scale tuning. Not part of the deliverable surface.

use std::time::Instant;

use weightleak_core::attacks::{run_attack, AttackConfig, LossKind, ObjectiveKind, OptimizerKind};
use weightleak_core::dataio::synthetic_dataset;
use weightleak_core::flsim::{run_simulation, ClientConfig, FederationConfig};
use weightleak_core::models::preset;

fn main() {
    weightleak_core::tune_allocator_for_graph_workloads();
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("dlm-plus");
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let model = args.get(4).map(|s| s.as_str()).unwrap_or("tiny-mlp");
    let alpha: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let spec = if let Some(h) = model.strip_prefix("mlp:") {
        weightleak_core::models::build_mlp_biased([3, 8, 8], h.parse().unwrap(), 10).unwrap()
    } else if let Some(s) = model.strip_prefix("lenet:") {
        let s: usize = s.parse().unwrap();
        weightleak_core::models::build_lenet([3, s, s], 10).unwrap()
    } else {
        preset(model).unwrap()
    };
    let data = synthetic_dataset(16, spec.input_shape, spec.num_classes, 1234).unwrap();

    let env_f64 = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    let env_usize = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<usize>().ok());
    let epochs = env_usize("PROBE_EPOCHS").unwrap_or(1);
    let batch = env_usize("PROBE_BATCH").unwrap_or(1);
    let momentum = env_f64("PROBE_MU");
    let defense = if let Some(sigma) = env_f64("PROBE_DP_SIGMA") {
        Some(weightleak_core::defenses::DefenseConfig::Dp(weightleak_core::defenses::DpConfig {
            clip: env_f64("PROBE_DP_CLIP").unwrap_or(10.0),
            noise: weightleak_core::defenses::NoiseKind::Gaussian,
            sigma,
            group: 1,
        }))
    } else {
        env_f64("PROBE_SPARSIFY").map(|rate| {
            weightleak_core::defenses::DefenseConfig::Sparsify(
                weightleak_core::defenses::SparsifyConfig {
                    rate,
                    scope: weightleak_core::defenses::SparsifyScope::Global,
                },
            )
        })
    };

    let ccfg = ClientConfig {
        learning_rate: alpha,
        optimizer: match momentum {
            Some(mu) => weightleak_core::flsim::ClientOptimizer::SgdMomentum { momentum: mu },
            None => weightleak_core::flsim::ClientOptimizer::Sgd,
        },
        local_epochs: epochs,
        batch_size: batch,
    };

    let mut successes = 0;
    for seed in 0..seeds {
        let fed = FederationConfig {
            seed: 100 + seed,
            transmit: if which.starts_with("dlg") || which == "cosine" {
                weightleak_core::flsim::PayloadKind::Gradients
            } else {
                weightleak_core::flsim::PayloadKind::Weights
            },
            ..Default::default()
        };
        let log = run_simulation(&fed, &ccfg, &spec, defense.as_ref(), &data).unwrap();
        let update = &log[0];

        let objective = match which {
            "dlg" => ObjectiveKind::Dlg,
            "dlg-k" => ObjectiveKind::DlgK { k: 1.1 },
            "cosine" => ObjectiveKind::Cosine { tv_weight: 0.0 },
            "dlm" => ObjectiveKind::Dlm { gamma0: 1.0 / alpha },
            "dlm-plus-tv" => ObjectiveKind::DlmPlusTv { tv_weight: env_f64("PROBE_TV").unwrap_or(0.01) },
            _ => ObjectiveKind::DlmPlus,
        };
        let optimizer = if std::env::var("PROBE_LBFGS").is_ok() || model.contains("lenet") {
            OptimizerKind::Lbfgs {
                eta: env_f64("PROBE_LBFGS_ETA").unwrap_or(1.0),
                history: env_usize("PROBE_LBFGS_HIST").unwrap_or(100),
                armijo: std::env::var("PROBE_ARMIJO").is_ok(),
            }
        } else {
            OptimizerKind::Adam { eta: 0.1 }
        };
        let mut cfg = AttackConfig::new(objective, optimizer, iters, 9000 + seed);
        cfg.batch_size = batch;
        if let Some(t) = env_f64("PROBE_THRESHOLD") {
            cfg.success_threshold_db = t;
        }

        let start = Instant::now();
        let res = run_attack(
            update.attack_view(),
            &spec,
            LossKind::CrossEntropy,
            &cfg,
            Some(update.ground_truth_for_eval()),
        );
        match res {
            Ok(r) => {
                let ok = r.success.unwrap_or(false);
                if ok {
                    successes += 1;
                }
                // Scale diagnosis: best multiplier of the raw recovery onto the truth.
                let truth = &update.ground_truth_for_eval().images[0];
                let rec = &r.recovered;
                let dot: f64 = rec.data().iter().zip(truth.data()).map(|(a, b)| a * b).sum();
                let tt: f64 = truth.data().iter().map(|b| b * b).sum();
                let c = dot / tt;
                let resid: f64 = rec
                    .data()
                    .iter()
                    .zip(truth.data())
                    .map(|(a, b)| (a - c * b) * (a - c * b))
                    .sum::<f64>()
                    / rec.len() as f64;
                if std::env::var("PROBE_TRACE").is_ok() {
                    let t = &r.loss_trace;
                    let pick: Vec<String> = (0..t.len())
                        .step_by((t.len() / 12).max(1))
                        .map(|i| format!("{i}:{:.2e}", t[i]))
                        .collect();
                    println!("   trace: {}", pick.join(" "));
                }
                println!(
                    "seed {seed}: psnr {:>8.2} dB  label {} (true {})  iters {:>5}  obj {:.3e}  scale {:.3} resid {:.2e}  {:.2?}{}",
                    r.final_psnr.unwrap_or(f64::NAN),
                    r.label(),
                    update.ground_truth_for_eval().labels[0],
                    r.iterations_used,
                    r.loss_trace.last().copied().unwrap_or(f64::NAN),
                    c,
                    resid,
                    start.elapsed(),
                    if ok { "  OK" } else { "" }
                );
            }
            Err(e) => println!("seed {seed}: ERROR {e}"),
        }
    }
    println!("success: {successes}/{seeds}");
}
