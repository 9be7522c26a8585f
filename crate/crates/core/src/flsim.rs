//! Deterministic federated-learning simulator.
//!
//! Produces the wiretap stream the adversary consumes: one
//! [`TransmittedUpdate`] per client per round, carrying the global weights
//! the round started from and the transmitted payload (new weights or a
//! gradient). Ground-truth samples ride along for evaluation only, behind a
//! separate accessor.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Dataset;
use crate::defenses::DefenseConfig;
use crate::error::{Error, Result};
use crate::models::{bind_weights, forward, ModelSpec, ModelWeights};
use crate::{Graph, Tensor};

/// Client-side optimizer for local training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClientOptimizer {
    Sgd,
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl ClientOptimizer {
    /// Adam client with the crate defaults.
    pub fn adam_default() -> Self {
        ClientOptimizer::Adam { beta1: 0.9, beta2: 0.99, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub learning_rate: f64,
    pub optimizer: ClientOptimizer,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            optimizer: ClientOptimizer::Sgd,
            local_epochs: 1,
            batch_size: 1,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Argument("learning_rate must be > 0".into()));
        }
        if let ClientOptimizer::SgdMomentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Argument("momentum must be in [0, 1)".into()));
            }
        }
        if self.local_epochs == 0 {
            return Err(Error::Argument("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// What the clients put on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    Weights,
    Gradients,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub num_clients: usize,
    /// IID partition: each client draws `fraction * |dataset| / K` examples.
    pub fraction: f64,
    pub transmit: PayloadKind,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self { num_clients: 1, fraction: 1.0, transmit: PayloadKind::Weights, rounds: 1, seed: 0 }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Argument("num_clients must be >= 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Argument("fraction must be in (0, 1]".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Argument("rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Transmitted model update or gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    Weights { weights: ModelWeights },
    Gradients { gradients: Vec<Tensor> },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Weights { .. } => PayloadKind::Weights,
            Payload::Gradients { .. } => PayloadKind::Gradients,
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        match self {
            Payload::Weights { weights } => weights.tensors(),
            Payload::Gradients { gradients } => gradients,
        }
    }
}

/// Ground-truth example(s) behind a transmitted update. Evaluation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Dataset indices of the examples used in the round.
    pub indices: Vec<usize>,
    /// The images themselves, [C,H,W] each.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

/// One wiretap record.
///
/// The attack path may consult only [`TransmittedUpdate::global_before`] and
/// [`TransmittedUpdate::payload`] (bundled by [`TransmittedUpdate::attack_view`]);
/// the ground truth is reachable solely through the evaluation accessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmittedUpdate {
    pub round: usize,
    pub client: usize,
    pub global_before: ModelWeights,
    pub payload: Payload,
    /// Name of the transmission-time defense applied, if any.
    pub defense: Option<String>,
    ground_truth: GroundTruth,
}

/// The adversary's view of one update: exactly what crossed the wire.
#[derive(Debug, Clone, Copy)]
pub struct AttackView<'a> {
    pub global_before: &'a ModelWeights,
    pub payload: &'a Payload,
}

impl TransmittedUpdate {
    pub fn new(
        round: usize,
        client: usize,
        global_before: ModelWeights,
        payload: Payload,
        defense: Option<String>,
        ground_truth: GroundTruth,
    ) -> Result<Self> {
        let global_shapes: Vec<_> = global_before.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let payload_shapes: Vec<_> = payload.tensors().iter().map(|t| t.shape().to_vec()).collect();
        if global_shapes != payload_shapes {
            return Err(Error::Contract(
                "payload tensor shapes do not match the global weights".into(),
            ));
        }
        Ok(Self { round, client, global_before, payload, defense, ground_truth })
    }

    /// Wire-visible part of the record.
    pub fn attack_view(&self) -> AttackView<'_> {
        AttackView { global_before: &self.global_before, payload: &self.payload }
    }

    /// Ground truth for metric computation. Never feed this to the attack.
    pub fn ground_truth_for_eval(&self) -> &GroundTruth {
        &self.ground_truth
    }
}

/// Partition `dataset` IID across `k` clients, each receiving
/// `floor(fraction * n / k)` examples drawn without replacement.
pub fn partition_iid(dataset: &Dataset, k: usize, fraction: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Argument("cannot partition across 0 clients".into()));
    }
    let n = dataset.len();
    let take = (fraction * n as f64).floor() as usize;
    let per_client = take / k;
    if per_client == 0 {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {n} samples leaves nothing for {k} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok((0..k)
        .map(|c| order[c * per_client..(c + 1) * per_client].to_vec())
        .collect())
}

/// Stack [C,H,W] images into a batch tensor [B,C,H,W].
pub fn stack_batch(images: &[&Tensor]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Argument("cannot stack an empty batch".into()));
    }
    let shape = images[0].shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("expected [C,H,W] images, got {shape:?}")));
    }
    let mut data = Vec::with_capacity(images.len() * images[0].len());
    for img in images {
        if img.shape() != shape.as_slice() {
            return Err(Error::Dimension("batch images have mixed shapes".into()));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_raw(
        vec![images.len(), shape[0], shape[1], shape[2]],
        data,
    ))
}

/// Loss and weight gradient of the batch-mean hard-label cross entropy.
pub fn loss_and_weight_gradient(
    spec: &ModelSpec,
    weights: &ModelWeights,
    images: &[&Tensor],
    labels: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let batch = stack_batch(images)?;
    let mut graph = Graph::new();
    let x = graph.leaf(batch, false);
    let wv = bind_weights(&mut graph, spec, weights, true)?;
    let logits = forward(&mut graph, spec, &wv, x)?;
    let loss = graph.cross_entropy_hard(logits, labels)?;
    let loss_value = graph.value(loss).item();
    let grads = graph.gradients(loss, &wv, false)?;
    Ok((loss_value, grads.into_grads()))
}

/// State for the client-side optimizer across local steps.
enum OptState {
    Sgd,
    Momentum { mu: f64, velocity: Vec<Tensor> },
    Adam { beta1: f64, beta2: f64, epsilon: f64, m: Vec<Tensor>, v: Vec<Tensor>, t: u32 },
}

impl OptState {
    fn new(opt: ClientOptimizer, shapes: &[Vec<usize>]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        match opt {
            ClientOptimizer::Sgd => OptState::Sgd,
            ClientOptimizer::SgdMomentum { momentum } => {
                OptState::Momentum { mu: momentum, velocity: zeros() }
            }
            ClientOptimizer::Adam { beta1, beta2, epsilon } => {
                OptState::Adam { beta1, beta2, epsilon, m: zeros(), v: zeros(), t: 0 }
            }
        }
    }

    fn apply(&mut self, weights: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        match self {
            OptState::Sgd => {
                for (w, g) in weights.iter_mut().zip(grads) {
                    *w = w.ew_sub(&g.scaled(lr))?;
                }
            }
            OptState::Momentum { mu, velocity } => {
                for ((w, g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    *v = v.scaled(*mu).ew_add(g)?;
                    *w = w.ew_sub(&v.scaled(lr))?;
                }
            }
            OptState::Adam { beta1, beta2, epsilon, m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for ((w, g), (mi, vi)) in weights.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
                    *mi = mi.scaled(*beta1).ew_add(&g.scaled(1.0 - *beta1))?;
                    *vi = vi.scaled(*beta2).zip_map(g, |a, b| a + (1.0 - *beta2) * b * b)?;
                    let step = mi.zip_map(vi, |mh, vh| {
                        lr * (mh / bc1) / ((vh / bc2).sqrt() + *epsilon)
                    })?;
                    *w = w.ew_sub(&step)?;
                }
            }
        }
        Ok(())
    }
}

/// Run the configured number of local epochs on `data` and return the new
/// weights. With plain SGD, one epoch and a single example this is exactly
/// one step `W - lr * grad`.
pub fn client_local_train(
    spec: &ModelSpec,
    global: &ModelWeights,
    data: &[(&Tensor, usize)],
    cfg: &ClientConfig,
) -> Result<ModelWeights> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("client has no local data".into()));
    }
    let mut weights = global.tensors().to_vec();
    let shapes: Vec<_> = weights.iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = OptState::new(cfg.optimizer, &shapes);

    for epoch in 0..cfg.local_epochs {
        for (step, chunk) in data.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&Tensor> = chunk.iter().map(|(img, _)| *img).collect();
            let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
            let current = ModelWeights::from_tensors_unchecked(weights.clone(), global.fingerprint());
            let (loss, grads) = loss_and_weight_gradient(spec, &current, &images, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Simulation(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            opt.apply(&mut weights, &grads, cfg.learning_rate)?;
        }
    }
    Ok(ModelWeights::from_tensors_unchecked(weights, global.fingerprint()))
}

/// Unweighted elementwise mean in client-index order.
pub fn server_aggregate(updates: &[ModelWeights]) -> Result<ModelWeights> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Argument("server_aggregate on an empty list".into()))?;
    let mut acc: Vec<Tensor> = first.tensors().to_vec();
    for u in &updates[1..] {
        if u.fingerprint() != first.fingerprint() {
            return Err(Error::Contract("aggregating weights of different models".into()));
        }
        for (a, t) in acc.iter_mut().zip(u.tensors()) {
            *a = a.ew_add(t)?;
        }
    }
    let k = updates.len() as f64;
    let mean = acc.into_iter().map(|t| t.map(|v| v / k)).collect();
    Ok(ModelWeights::from_tensors_unchecked(mean, first.fingerprint()))
}

/// Run the federation and record every transmission.
///
/// Per round: broadcast the global weights, let each client train (weights
/// mode) or compute one batch gradient (gradients mode), apply the optional
/// transmission-time defense, log the update, then aggregate.
pub fn run_simulation(
    fed: &FederationConfig,
    client_cfg: &ClientConfig,
    spec: &ModelSpec,
    defense: Option<&DefenseConfig>,
    dataset: &Dataset,
) -> Result<Vec<TransmittedUpdate>> {
    fed.validate()?;
    client_cfg.validate()?;
    spec.validate()?;

    let partitions = partition_iid(dataset, fed.num_clients, fed.fraction, fed.seed)?;
    let mut global = crate::models::init_weights(spec, mix_seed(fed.seed, 0x67b5_9a3d, 0, 0))?;
    let mut log = Vec::with_capacity(fed.rounds * fed.num_clients);

    for round in 0..fed.rounds {
        let mut received: Vec<ModelWeights> = Vec::with_capacity(fed.num_clients);
        let mut received_grads: Vec<Vec<Tensor>> = Vec::new();
        for (client, part) in partitions.iter().enumerate() {
            // Rotating batch cursor: round r uses the next batch_size examples.
            let b = client_cfg.batch_size.min(part.len());
            let start = (round * b) % part.len();
            let indices: Vec<usize> = (0..b).map(|j| part[(start + j) % part.len()]).collect();
            let examples: Vec<(&Tensor, usize)> = indices
                .iter()
                .map(|&i| (&dataset.images[i], dataset.labels[i]))
                .collect();

            let payload = match fed.transmit {
                PayloadKind::Weights => {
                    let trained = client_local_train(spec, &global, &examples, client_cfg)?;
                    Payload::Weights { weights: trained }
                }
                PayloadKind::Gradients => {
                    let images: Vec<&Tensor> = examples.iter().map(|(i, _)| *i).collect();
                    let labels: Vec<usize> = examples.iter().map(|(_, l)| *l).collect();
                    let (loss, grads) = loss_and_weight_gradient(spec, &global, &images, &labels)?;
                    if !loss.is_finite() {
                        return Err(Error::Simulation(format!(
                            "non-finite loss in round {round}, client {client}"
                        )));
                    }
                    Payload::Gradients { gradients: grads }
                }
            };

            let (payload, defense_tag) = match defense {
                None => (payload, None),
                Some(d) => {
                    let noise_seed = mix_seed(fed.seed, 0xdef5_11ce, round as u64, client as u64);
                    (d.apply(payload, noise_seed)?, Some(d.name()))
                }
            };

            match &payload {
                Payload::Weights { weights } => received.push(weights.clone()),
                Payload::Gradients { gradients } => received_grads.push(gradients.clone()),
            }

            let truth = GroundTruth {
                indices: indices.clone(),
                images: indices.iter().map(|&i| dataset.images[i].clone()).collect(),
                labels: indices.iter().map(|&i| dataset.labels[i]).collect(),
            };
            log.push(TransmittedUpdate::new(
                round,
                client,
                global.clone(),
                payload,
                defense_tag,
                truth,
            )?);
        }

        global = match fed.transmit {
            PayloadKind::Weights => server_aggregate(&received)?,
            PayloadKind::Gradients => {
                // Mean gradient applied with the client learning rate.
                let k = received_grads.len() as f64;
                let mut mean = received_grads[0].clone();
                for g in &received_grads[1..] {
                    for (m, t) in mean.iter_mut().zip(g) {
                        *m = m.ew_add(t)?;
                    }
                }
                let stepped: Vec<Tensor> = global
                    .tensors()
                    .iter()
                    .zip(mean.iter())
                    .map(|(w, g)| w.ew_sub(&g.scaled(client_cfg.learning_rate / k)))
                    .collect::<Result<_>>()?;
                ModelWeights::from_tensors_unchecked(stepped, global.fingerprint())
            }
        };
    }
    Ok(log)
}

/// Reinterpret a weights-mode update as a gradients-mode one using the
/// simulator-known client learning rate: `grad = (W_before - W_after) / lr`.
/// Exact for one plain SGD step; used to hand gradient baselines the same
/// round a weight attack sees.
pub fn derive_gradient_update(update: &TransmittedUpdate, learning_rate: f64) -> Result<TransmittedUpdate> {
    if learning_rate <= 0.0 {
        return Err(Error::Argument("learning rate must be > 0".into()));
    }
    let Payload::Weights { weights } = &update.payload else {
        return Err(Error::Contract(
            "can only derive gradients from a weights-mode update".into(),
        ));
    };
    let gradients: Vec<Tensor> = update
        .global_before
        .tensors()
        .iter()
        .zip(weights.tensors())
        .map(|(b, a)| Ok(b.ew_sub(a)?.map(|v| v / learning_rate)))
        .collect::<Result<_>>()?;
    Ok(TransmittedUpdate {
        round: update.round,
        client: update.client,
        global_before: update.global_before.clone(),
        payload: Payload::Gradients { gradients },
        defense: update.defense.clone(),
        ground_truth: update.ground_truth.clone(),
    })
}

/// Derive an independent seed stream from (base, tag, a, b) via splitmix64.
pub fn mix_seed(base: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag)
        .wrapping_add(a.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(b.wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic_dataset;
    use crate::models::build_mlp;

    fn tiny_setup() -> (ModelSpec, Dataset) {
        let spec = build_mlp([1, 2, 2], 3, 2).unwrap();
        let data = synthetic_dataset(8, [1, 2, 2], 2, 5).unwrap();
        (spec, data)
    }

    #[test]
    fn partition_disjoint_and_sized() {
        let data = synthetic_dataset(100, [1, 2, 2], 10, 3).unwrap();
        let parts = partition_iid(&data, 10, 1.0, 1).unwrap();
        assert_eq!(parts.len(), 10);
        let mut seen = std::collections::HashSet::new();
        for p in &parts {
            assert_eq!(p.len(), 10);
            for &i in p {
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
    }

    #[test]
    fn partition_tenth_fraction() {
        let data = synthetic_dataset(500, [1, 2, 2], 10, 3).unwrap();
        let parts = partition_iid(&data, 10, 0.1, 1).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &parts {
            assert_eq!(p.len(), 5);
            for &i in p {
                assert!(seen.insert(i));
            }
        }
    }

    #[test]
    fn partition_rejects_starved_clients() {
        let data = synthetic_dataset(5, [1, 2, 2], 2, 3).unwrap();
        assert!(partition_iid(&data, 10, 1.0, 1).is_err());
    }

    #[test]
    fn momentum_zero_reduces_to_sgd() {
        let (spec, data) = tiny_setup();
        let global = crate::models::init_weights(&spec, 1).unwrap();
        let examples = vec![(&data.images[0], data.labels[0])];
        let sgd_cfg = ClientConfig { learning_rate: 0.05, ..Default::default() };
        let mom_cfg = ClientConfig {
            optimizer: ClientOptimizer::SgdMomentum { momentum: 0.0 },
            ..sgd_cfg
        };
        let a = client_local_train(&spec, &global, &examples, &sgd_cfg).unwrap();
        let b = client_local_train(&spec, &global, &examples, &mom_cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_epochs_chain_two_steps() {
        let (spec, data) = tiny_setup();
        let global = crate::models::init_weights(&spec, 2).unwrap();
        let examples = vec![(&data.images[1], data.labels[1])];
        let one = ClientConfig { learning_rate: 0.05, ..Default::default() };
        let two = ClientConfig { local_epochs: 2, ..one };

        let after_two = client_local_train(&spec, &global, &examples, &two).unwrap();
        let mid = client_local_train(&spec, &global, &examples, &one).unwrap();
        let chained = client_local_train(&spec, &mid, &examples, &one).unwrap();
        for (a, b) in after_two.tensors().iter().zip(chained.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_means_in_order() {
        let (spec, _) = tiny_setup();
        let shapes = spec.param_shapes();
        let mk = |v: f64| {
            ModelWeights::new(&spec, shapes.iter().map(|s| Tensor::filled(s, v)).collect()).unwrap()
        };
        let mean = server_aggregate(&[mk(1.0), mk(3.0)]).unwrap();
        assert!(mean.tensors().iter().all(|t| t.data().iter().all(|&v| v == 2.0)));

        // Identical inputs reproduce themselves (to a rounding ulp for odd K).
        let same2 = server_aggregate(&[mk(0.7), mk(0.7)]).unwrap();
        assert!(same2.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.7)));
        let same3 = server_aggregate(&[mk(0.7), mk(0.7), mk(0.7)]).unwrap();
        assert!(same3
            .tensors()
            .iter()
            .all(|t| t.data().iter().all(|&v| (v - 0.7).abs() < 1e-15)));
    }

    #[test]
    fn aggregate_matches_mean_oracle() {
        let (spec, _) = tiny_setup();
        let ws: Vec<ModelWeights> = (0..3).map(|s| crate::models::init_weights(&spec, s).unwrap()).collect();
        let mean = server_aggregate(&ws).unwrap();
        let flats: Vec<Vec<f64>> = ws.iter().map(|w| w.flatten()).collect();
        for (i, v) in mean.flatten().iter().enumerate() {
            let want = (flats[0][i] + flats[1][i] + flats[2][i]) / 3.0;
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn single_round_log_matches_local_training() {
        let (spec, data) = tiny_setup();
        let fed = FederationConfig { num_clients: 1, ..Default::default() };
        let ccfg = ClientConfig::default();
        let log = run_simulation(&fed, &ccfg, &spec, None, &data).unwrap();
        assert_eq!(log.len(), 1);

        let update = &log[0];
        let truth = update.ground_truth_for_eval();
        let examples: Vec<(&Tensor, usize)> = truth
            .images
            .iter()
            .zip(truth.labels.iter())
            .map(|(i, &l)| (i, l))
            .collect();
        let trained = client_local_train(&spec, &update.global_before, &examples, &ccfg).unwrap();
        match &update.payload {
            Payload::Weights { weights } => assert_eq!(weights, &trained),
            _ => panic!("expected weights payload"),
        }
    }

    #[test]
    fn wiretap_length_is_rounds_times_clients() {
        let (spec, data) = tiny_setup();
        let fed = FederationConfig { num_clients: 2, rounds: 3, ..Default::default() };
        let log = run_simulation(&fed, &ClientConfig::default(), &spec, None, &data).unwrap();
        assert_eq!(log.len(), 6);
    }
}
