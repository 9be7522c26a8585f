//! The adversary: recovery of private training images from transmitted
//! updates.
//!
//! Per iteration the runner records the model forward pass and loss on the
//! current dummy data, takes a graph-retained backward pass to obtain the
//! dummy weight gradient, scores that gradient against the observed payload
//! with the configured objective, and differentiates the objective back into
//! the dummy data, labels (and tuning factor) for the optimizer.

mod objectives;
mod optim;

pub use objectives::{
    estimate_alpha, objective_cosine, objective_dlg, objective_dlg_k, objective_dlm,
    objective_dlm_plus,
};
pub use optim::{AdamOptimizer, EvalFn, LbfgsOptimizer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::flsim::{AttackView, GroundTruth, Payload, PayloadKind};
use crate::metrics::psnr;
use crate::models::{bind_weights, forward, ModelSpec};
use crate::{Graph, Tensor};

/// Client loss function assumed known to the adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
}

/// Objective selection. Gradient-matching objectives need a gradients-mode
/// payload; weight-delta objectives need a weights-mode payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Dlg,
    DlgK { k: f64 },
    Cosine { tv_weight: f64 },
    Dlm { gamma0: f64 },
    DlmPlus,
    DlmPlusTv { tv_weight: f64 },
}

impl ObjectiveKind {
    pub fn required_payload(&self) -> PayloadKind {
        match self {
            ObjectiveKind::Dlg | ObjectiveKind::DlgK { .. } | ObjectiveKind::Cosine { .. } => {
                PayloadKind::Gradients
            }
            ObjectiveKind::Dlm { .. } | ObjectiveKind::DlmPlus | ObjectiveKind::DlmPlusTv { .. } => {
                PayloadKind::Weights
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Dlg => "dlg",
            ObjectiveKind::DlgK { .. } => "dlg-k",
            ObjectiveKind::Cosine { .. } => "cosine",
            ObjectiveKind::Dlm { .. } => "dlm",
            ObjectiveKind::DlmPlus => "dlm-plus",
            ObjectiveKind::DlmPlusTv { .. } => "dlm-plus-tv",
        }
    }
}

/// Adversary optimizer selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam { eta: f64 },
    Lbfgs { eta: f64, history: usize, armijo: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub objective: ObjectiveKind,
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub seed: u64,
    pub success_threshold_db: f64,
    pub batch_size: usize,
}

impl AttackConfig {
    pub fn new(objective: ObjectiveKind, optimizer: OptimizerKind, iterations: usize, seed: u64) -> Self {
        Self {
            objective,
            optimizer,
            iterations,
            seed,
            success_threshold_db: 30.0,
            batch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Argument("attack iterations must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > 8 {
            return Err(Error::Argument(
                "attack batch_size must be in 1..=8 (exhaustive matching)".into(),
            ));
        }
        match self.optimizer {
            OptimizerKind::Adam { eta } if eta <= 0.0 => {
                return Err(Error::Argument("adam eta must be > 0".into()))
            }
            OptimizerKind::Lbfgs { eta, history, .. } => {
                if eta <= 0.0 {
                    return Err(Error::Argument("lbfgs eta must be > 0".into()));
                }
                if history == 0 {
                    return Err(Error::Argument("lbfgs history must be >= 1".into()));
                }
            }
            _ => {}
        }
        match self.objective {
            ObjectiveKind::Cosine { tv_weight } | ObjectiveKind::DlmPlusTv { tv_weight } => {
                if tv_weight < 0.0 {
                    return Err(Error::Argument("tv weight must be >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Objective value below which the recovery loop stops early.
pub const EARLY_EXIT_OBJECTIVE: f64 = 1e-10;

/// Outcome of one recovery trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Recovered image batch [B,C,H,W], clamped to [0,1].
    pub recovered: Tensor,
    /// Inferred class per batch row (argmax of the dummy label logits).
    pub labels: Vec<usize>,
    pub loss_trace: Vec<f64>,
    /// Mean best-assignment PSNR per iteration; empty without ground truth.
    pub psnr_trace: Vec<f64>,
    /// PSNR > threshold on the final image; None without ground truth.
    pub success: Option<bool>,
    pub iterations_used: usize,
    /// Learning-rate estimate from the final dummy gradient (weights mode).
    pub alpha_estimate: Option<f64>,
    pub final_psnr: Option<f64>,
    pub final_ssim: Option<f64>,
    /// Per ground-truth-image PSNR under the best assignment.
    pub per_image_psnr: Vec<f64>,
    /// Best assignment: `assignment[j]` is the recovered row matching
    /// ground-truth image `j`. Identity for single images.
    pub assignment: Option<Vec<usize>>,
}

impl AttackResult {
    /// Inferred label of the first (or only) recovered image.
    pub fn label(&self) -> usize {
        self.labels[0]
    }
}

enum Opt {
    Adam(AdamOptimizer),
    Lbfgs(LbfgsOptimizer),
}

impl Opt {
    fn new(kind: OptimizerKind, dim: usize) -> Self {
        match kind {
            OptimizerKind::Adam { eta } => {
                let (b1, b2) = (
                    std::env::var("PROBE_B1").ok().and_then(|v| v.parse().ok()).unwrap_or(0.9),
                    std::env::var("PROBE_B2").ok().and_then(|v| v.parse().ok()).unwrap_or(0.999),
                );
                Opt::Adam(AdamOptimizer::new(eta, dim).with_betas(b1, b2))
            }
            OptimizerKind::Lbfgs { eta, history, armijo } => {
                Opt::Lbfgs(LbfgsOptimizer::new(eta, history, armijo))
            }
        }
    }

    fn step(&mut self, params: &mut [f64], eval: &mut EvalFn) -> Result<f64> {
        match self {
            Opt::Adam(o) => o.step(params, eval),
            Opt::Lbfgs(o) => o.step(params, eval),
        }
    }
}

struct ParamLayout {
    image_shape: Vec<usize>,
    label_shape: Vec<usize>,
    n_image: usize,
    n_label: usize,
    has_gamma: bool,
}

impl ParamLayout {
    fn unpack(&self, params: &[f64]) -> (Tensor, Tensor, Option<Tensor>) {
        let x = Tensor::from_raw(self.image_shape.clone(), params[..self.n_image].to_vec());
        let y = Tensor::from_raw(
            self.label_shape.clone(),
            params[self.n_image..self.n_image + self.n_label].to_vec(),
        );
        let gamma = self
            .has_gamma
            .then(|| Tensor::scalar(params[self.n_image + self.n_label]));
        (x, y, gamma)
    }
}

/// Evaluate objective and gradients w.r.t. the flat adversary parameters.
/// Returns the dummy weight-gradient tensors as well so callers can derive
/// diagnostics from the final iterate.
fn evaluate(
    spec: &ModelSpec,
    view: &AttackView<'_>,
    objective: &ObjectiveKind,
    layout: &ParamLayout,
    params: &[f64],
) -> Result<(f64, Vec<f64>, Vec<Tensor>)> {
    let (x_t, y_t, gamma_t) = layout.unpack(params);
    let mut g = Graph::new();
    let x = g.leaf(x_t, true);
    let y = g.leaf(y_t, true);
    let gamma = gamma_t.map(|t| g.leaf(t, true));

    let wv = bind_weights(&mut g, spec, view.global_before, true)?;
    let logits = forward(&mut g, spec, &wv, x)?;
    let loss = g.cross_entropy_soft(logits, y)?;
    let inner = g.gradients(loss, &wv, true)?;
    let dummy_vars = inner.vars().expect("retained").to_vec();
    let dummy_tensors = inner.grads().to_vec();

    let obj = match (objective, view.payload) {
        (ObjectiveKind::Dlg, Payload::Gradients { gradients }) => {
            let tv: Vec<Var> = gradients.iter().map(|t| g.constant(t.clone())).collect();
            objective_dlg(&mut g, &dummy_vars, &tv)?
        }
        (ObjectiveKind::DlgK { k }, Payload::Gradients { gradients }) => {
            let tv: Vec<Var> = gradients.iter().map(|t| g.constant(t.clone())).collect();
            objective_dlg_k(&mut g, &dummy_vars, &tv, *k)?
        }
        (ObjectiveKind::Cosine { tv_weight }, Payload::Gradients { gradients }) => {
            let tv: Vec<Var> = gradients.iter().map(|t| g.constant(t.clone())).collect();
            objective_cosine(&mut g, &dummy_vars, &tv, *tv_weight, x)?
        }
        (ObjectiveKind::Dlm { .. }, Payload::Weights { weights }) => {
            let before: Vec<Var> = view
                .global_before
                .tensors()
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect();
            let after: Vec<Var> = weights.tensors().iter().map(|t| g.constant(t.clone())).collect();
            objective_dlm(&mut g, &dummy_vars, &before, &after, gamma.expect("dlm has gamma"))?
        }
        (ObjectiveKind::DlmPlus, Payload::Weights { weights })
        | (ObjectiveKind::DlmPlusTv { .. }, Payload::Weights { weights }) => {
            let tv_weight = match objective {
                ObjectiveKind::DlmPlusTv { tv_weight } => *tv_weight,
                _ => 0.0,
            };
            let before: Vec<Var> = view
                .global_before
                .tensors()
                .iter()
                .map(|t| g.constant(t.clone()))
                .collect();
            let after: Vec<Var> = weights.tensors().iter().map(|t| g.constant(t.clone())).collect();
            objective_dlm_plus(&mut g, &dummy_vars, &before, &after, tv_weight, x)?
        }
        _ => unreachable!("payload kind checked before the loop"),
    };

    let obj_value = g.value(obj).item();
    let mut wrt = vec![x, y];
    if let Some(gm) = gamma {
        wrt.push(gm);
    }
    let outer = g.gradients(obj, &wrt, false)?;
    let mut flat = Vec::with_capacity(params.len());
    for t in outer.grads() {
        flat.extend_from_slice(t.data());
    }
    Ok((obj_value, flat, dummy_tensors))
}

/// Split a [B,C,H,W] batch into per-image [C,H,W] tensors.
fn split_batch(batch: &Tensor) -> Vec<Tensor> {
    let s = batch.shape();
    let (b, per) = (s[0], s[1] * s[2] * s[3]);
    (0..b)
        .map(|i| {
            Tensor::from_raw(
                vec![s[1], s[2], s[3]],
                batch.data()[i * per..(i + 1) * per].to_vec(),
            )
        })
        .collect()
}

/// Best assignment of recovered rows to ground-truth images, maximizing the
/// mean PSNR; exhaustive over permutations (batches are <= 8).
fn best_assignment(recovered: &[Tensor], truth: &[Tensor]) -> Result<(Vec<usize>, Vec<f64>, f64)> {
    let b = truth.len();
    let mut pair = vec![vec![0.0; b]; b];
    for (j, t) in truth.iter().enumerate() {
        for (i, r) in recovered.iter().enumerate() {
            pair[j][i] = psnr(r, t, 1.0)?;
        }
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut perm: Vec<usize> = (0..b).collect();
    permute(&mut perm, 0, &mut |p| {
        let score: f64 = (0..b).map(|j| pair[j][p[j]]).sum();
        if best.as_ref().map_or(true, |(_, s)| score > *s) {
            best = Some((p.to_vec(), score));
        }
    });
    let (assignment, total) = best.expect("at least one permutation");
    let per_image: Vec<f64> = (0..b).map(|j| pair[j][assignment[j]]).collect();
    Ok((assignment, per_image, total / b as f64))
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Run one recovery trial against a single transmitted update.
///
/// `ground_truth` feeds only the PSNR trace and the success flag; the
/// optimization itself consumes nothing but the wire-visible view.
pub fn run_attack(
    view: AttackView<'_>,
    spec: &ModelSpec,
    loss: LossKind,
    cfg: &AttackConfig,
    ground_truth: Option<&GroundTruth>,
) -> Result<AttackResult> {
    let LossKind::CrossEntropy = loss;
    cfg.validate()?;
    spec.validate()?;

    let required = cfg.objective.required_payload();
    if view.payload.kind() != required {
        return Err(Error::Contract(format!(
            "objective '{}' requires a {:?}-mode payload, wiretap carries {:?}",
            cfg.objective.name(),
            required,
            view.payload.kind()
        )));
    }
    if !view.global_before.matches(spec) {
        return Err(Error::Contract(
            "wiretap weights do not match the attacked model spec".into(),
        ));
    }

    let [c, h, w] = spec.input_shape;
    let b = cfg.batch_size;
    let layout = ParamLayout {
        image_shape: vec![b, c, h, w],
        label_shape: vec![b, spec.num_classes],
        n_image: b * c * h * w,
        n_label: b * spec.num_classes,
        has_gamma: matches!(cfg.objective, ObjectiveKind::Dlm { .. }),
    };

    // Dummy data and labels start standard-normal; the tuning factor starts
    // at its configured value.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = StandardNormal;
    let mut params: Vec<f64> = (0..layout.n_image + layout.n_label)
        .map(|_| normal.sample(&mut rng))
        .collect();
    if let ObjectiveKind::Dlm { gamma0 } = cfg.objective {
        params.push(gamma0);
    }

    let truth_images: Option<Vec<&Tensor>> = ground_truth.map(|t| t.images.iter().collect());
    if let Some(images) = &truth_images {
        if images.len() != b {
            return Err(Error::Contract(format!(
                "attack batch size {b} does not match {} ground-truth image(s)",
                images.len()
            )));
        }
    }

    let mut optimizer = Opt::new(cfg.optimizer, params.len());
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    let mut psnr_trace = Vec::new();
    let mut iterations_used = 0;

    let mut last_dummy: Vec<Tensor> = Vec::new();
    for iter in 0..cfg.iterations {
        let mut eval = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (f, g, dummy) = evaluate(spec, &view, &cfg.objective, &layout, p)?;
            last_dummy = dummy;
            Ok((f, g))
        };
        let f = optimizer.step(&mut params, &mut eval)?;
        if !f.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                message: format!("objective became {f}"),
            });
        }
        loss_trace.push(f);
        iterations_used = iter + 1;

        if let Some(images) = &truth_images {
            let (xt, _, _) = layout.unpack(&params);
            let recovered = split_batch(&xt.clamped(0.0, 1.0));
            let owned: Vec<Tensor> = images.iter().map(|&t| t.clone()).collect();
            let (_, _, mean) = best_assignment(&recovered, &owned)?;
            psnr_trace.push(mean);
        }

        if f < EARLY_EXIT_OBJECTIVE {
            break;
        }
    }

    let (xt, yt, _) = layout.unpack(&params);
    let recovered = xt.clamped(0.0, 1.0);
    let labels: Vec<usize> = (0..b)
        .map(|i| {
            let row = &yt.data()[i * spec.num_classes..(i + 1) * spec.num_classes];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(idx, _)| idx)
                .unwrap_or(0)
        })
        .collect();

    // Learning-rate diagnostic from the final dummy gradient.
    let alpha_estimate = match view.payload {
        Payload::Weights { weights } => {
            if last_dummy.is_empty() {
                let (_, _, dummy) = evaluate(spec, &view, &cfg.objective, &layout, &params)?;
                last_dummy = dummy;
            }
            estimate_alpha(&last_dummy, view.global_before.tensors(), weights.tensors()).ok()
        }
        Payload::Gradients { .. } => None,
    };

    let (success, final_psnr, final_ssim, per_image_psnr, assignment) = match ground_truth {
        None => (None, None, None, Vec::new(), None),
        Some(truth) => {
            let rec_images = split_batch(&recovered);
            let (assignment, per_image, mean) = best_assignment(&rec_images, &truth.images)?;
            let ssim_val = {
                let s = truth.images[0].shape();
                if s[1] >= 11 && s[2] >= 11 {
                    let mut acc = 0.0;
                    for (j, t) in truth.images.iter().enumerate() {
                        acc += crate::metrics::ssim(&rec_images[assignment[j]], t, 1.0)?;
                    }
                    Some(acc / truth.images.len() as f64)
                } else {
                    None
                }
            };
            (
                Some(per_image.iter().all(|&p| p > cfg.success_threshold_db)),
                Some(mean),
                ssim_val,
                per_image,
                Some(assignment),
            )
        }
    };

    Ok(AttackResult {
        recovered,
        labels,
        loss_trace,
        psnr_trace,
        success,
        iterations_used,
        alpha_estimate,
        final_psnr,
        final_ssim,
        per_image_psnr,
        assignment,
    })
}
