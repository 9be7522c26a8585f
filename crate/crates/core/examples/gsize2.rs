use weightleak_core::models::{preset, init_weights, bind_weights, forward};
use weightleak_core::{Graph, Tensor};
use std::time::Instant;

fn eval_once(spec: &weightleak_core::models::ModelSpec, w: &weightleak_core::models::ModelWeights,
             x_t: &Tensor, y_t: &Tensor, tv: f64) {
    let mut g = Graph::new();
    let x = g.leaf(x_t.clone(), true);
    let y = g.leaf(y_t.clone(), true);
    let wv = bind_weights(&mut g, spec, w, true).unwrap();
    let logits = forward(&mut g, spec, &wv, x).unwrap();
    let loss = g.cross_entropy_soft(logits, y).unwrap();
    let inner = g.gradients(loss, &wv, true).unwrap();
    let dv = inner.vars().unwrap().to_vec();
    let before: Vec<_> = w.tensors().iter().map(|t| g.constant(t.clone())).collect();
    let after: Vec<_> = w.tensors().iter().map(|t| g.constant(t.map(|v| v * 0.999))).collect();
    let obj = weightleak_core::attacks::objective_dlm_plus(&mut g, &dv, &before, &after, tv, x).unwrap();
    let _ = g.gradients(obj, &[x, y], false).unwrap();
}

fn main() {
    let spec = preset("tiny-mlp").unwrap();
    let w = init_weights(&spec, 1).unwrap();
    let smooth = Tensor::filled(&[1, 3, 8, 8], 0.4);
    let mut ydata = vec![-40.0; 10];
    ydata[3] = 40.0;
    let ysat = Tensor::new(vec![1, 10], ydata).unwrap();
    let ymild = Tensor::filled(&[1, 10], 0.1);

    for (name, y) in [("mild y", &ymild), ("saturated y", &ysat)] {
        for tv in [0.0, 1e-5] {
            // warmup
            eval_once(&spec, &w, &smooth, y, tv);
            let t0 = Instant::now();
            for _ in 0..50 {
                eval_once(&spec, &w, &smooth, y, tv);
            }
            println!("{name} tv={tv}: {:.3}ms/eval", t0.elapsed().as_secs_f64() * 1000.0 / 50.0);
        }
    }
}
