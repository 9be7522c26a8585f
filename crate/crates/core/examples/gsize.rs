use weightleak_core::models::{preset, init_weights, bind_weights, forward};
use weightleak_core::{Graph, Tensor};
use std::time::Instant;

fn main() {
    let spec = preset("tiny-mlp").unwrap();
    let w = init_weights(&spec, 1).unwrap();
    for tv in [0.0, 1e-5] {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(&[1, 3, 8, 8], 0.3), true);
        let y = g.leaf(Tensor::filled(&[1, 10], 0.1), true);
        let wv = bind_weights(&mut g, &spec, &w, true).unwrap();
        let logits = forward(&mut g, &spec, &wv, x).unwrap();
        let loss = g.cross_entropy_soft(logits, y).unwrap();
        let inner = g.gradients(loss, &wv, true).unwrap();
        let dv = inner.vars().unwrap().to_vec();
        let n_inner = g.len();
        let before: Vec<_> = w.tensors().iter().map(|t| g.constant(t.clone())).collect();
        let after: Vec<_> = w.tensors().iter().map(|t| g.constant(t.map(|v| v * 0.999))).collect();
        let obj = weightleak_core::attacks::objective_dlm_plus(&mut g, &dv, &before, &after, tv, x).unwrap();
        let n_obj = g.len();
        let outer = g.gradients(obj, &[x, y], false).unwrap();
        let _ = outer;
        let n_final = g.len();
        println!("tv={tv}: inner {n_inner}, obj {n_obj}, final {n_final}, time {:.2?}", t0.elapsed());
    }
}
