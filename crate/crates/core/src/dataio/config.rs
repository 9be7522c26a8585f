//! Run configuration: a schema-versioned JSON document.
//!
//! Every experiment parameter lives here; command-line flags may only
//! override scalar fields (seed, output directory, iterations), which keeps
//! a stored config sufficient to reproduce a run. Unknown keys are rejected
//! with a nearest-match suggestion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attacks::{AttackConfig, ObjectiveKind, OptimizerKind};
use crate::dataio::{load_cifar_binary, load_idx, synthetic_dataset, CifarVariant, Dataset};
use crate::defenses::{DefenseConfig, DpConfig, NoiseKind, SparsifyConfig, SparsifyScope};
use crate::error::{Error, Result};
use crate::flsim::{ClientConfig, FederationConfig, PayloadKind};
use crate::models::{preset, ModelSpec};

pub const CONFIG_SCHEMA: &str = "weightleak/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSection {
    Synthetic {
        #[serde(default = "default_synthetic_n")]
        n: usize,
        /// Defaults to the model's class count.
        #[serde(default)]
        num_classes: Option<usize>,
    },
    Idx {
        images: String,
        labels: String,
        #[serde(default)]
        rgb: bool,
    },
    Cifar {
        path: String,
        variant: String,
    },
}

fn default_synthetic_n() -> usize {
    64
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic { n: default_synthetic_n(), num_classes: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationSection {
    #[serde(default = "one")]
    pub clients: usize,
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default = "one_f64")]
    pub fraction: f64,
    #[serde(default = "default_transmit")]
    pub transmit: PayloadKind,
}

fn one() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn default_transmit() -> PayloadKind {
    PayloadKind::Weights
}

impl Default for FederationSection {
    fn default() -> Self {
        Self { clients: 1, rounds: 1, fraction: 1.0, transmit: PayloadKind::Weights }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DefenseSection {
    #[default]
    None,
    Dp {
        clip: f64,
        noise: NoiseKind,
        sigma: f64,
        #[serde(default = "one")]
        group: usize,
    },
    Sparsify {
        rate: f64,
        #[serde(default = "default_scope")]
        scope: SparsifyScope,
    },
}

fn default_scope() -> SparsifyScope {
    SparsifyScope::Global
}

impl DefenseSection {
    pub fn to_defense(&self) -> Option<DefenseConfig> {
        match *self {
            DefenseSection::None => None,
            DefenseSection::Dp { clip, noise, sigma, group } => {
                Some(DefenseConfig::Dp(DpConfig { clip, noise, sigma, group }))
            }
            DefenseSection::Sparsify { rate, scope } => {
                Some(DefenseConfig::Sparsify(SparsifyConfig { rate, scope }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub objective: ObjectiveKind,
    #[serde(default = "default_adversary_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_threshold")]
    pub success_threshold_db: f64,
    #[serde(default = "one")]
    pub batch_size: usize,
}

fn default_adversary_optimizer() -> OptimizerKind {
    OptimizerKind::Adam { eta: 0.1 }
}
fn default_iterations() -> usize {
    2000
}
fn default_threshold() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialsSection {
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default)]
    pub seed_base: u64,
}

impl Default for TrialsSection {
    fn default() -> Self {
        Self { seeds: 1, seed_base: 0 }
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: String,
    /// Model preset name: paper-mlp | paper-lenet | tiny-mlp | tiny-lenet.
    pub model: String,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub client: ClientConfig,
    #[serde(default)]
    pub defense: DefenseSection,
    pub attack: AttackSection,
    #[serde(default)]
    pub trials: TrialsSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema '{}' not supported, expected '{CONFIG_SCHEMA}'",
                self.schema
            )));
        }
        let spec = self.model_spec()?;
        spec.validate()?;
        self.client.validate()?;
        self.federation(0).validate()?;
        if let Some(d) = self.defense.to_defense() {
            d.validate()?;
        }
        self.attack_config(0).validate()?;
        if self.trials.seeds == 0 {
            return Err(Error::Config("trials.seeds must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        preset(&self.model)
    }

    pub fn federation(&self, seed: u64) -> FederationConfig {
        FederationConfig {
            num_clients: self.federation.clients,
            fraction: self.federation.fraction,
            transmit: self.federation.transmit,
            rounds: self.federation.rounds,
            seed,
        }
    }

    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            objective: self.attack.objective,
            optimizer: self.attack.optimizer,
            iterations: self.attack.iterations,
            seed,
            success_threshold_db: self.attack.success_threshold_db,
            batch_size: self.attack.batch_size,
        }
    }

    /// Materialize the dataset, checking label range against the model head.
    pub fn build_dataset(&self, spec: &ModelSpec, seed: u64) -> Result<Dataset> {
        let ds = match &self.data {
            DataSection::Synthetic { n, num_classes } => {
                let classes = num_classes.unwrap_or(spec.num_classes);
                synthetic_dataset(*n, spec.input_shape, classes, seed)?
            }
            DataSection::Idx { images, labels, rgb } => {
                load_idx(Path::new(images), Path::new(labels), *rgb)?
            }
            DataSection::Cifar { path, variant } => {
                let v = match variant.as_str() {
                    "cifar10" => CifarVariant::Cifar10,
                    "cifar100" => CifarVariant::Cifar100,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown cifar variant '{other}' (cifar10 or cifar100)"
                        )))
                    }
                };
                load_cifar_binary(Path::new(path), v)?
            }
        };
        if ds.num_classes > spec.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model head only {}",
                ds.num_classes, spec.num_classes
            )));
        }
        if ds.image_shape() != spec.input_shape {
            return Err(Error::Config(format!(
                "dataset images are {:?} but the model expects {:?}",
                ds.image_shape(),
                spec.input_shape
            )));
        }
        Ok(ds)
    }

    /// Stable content hash for manifests.
    pub fn content_hash(&self) -> Result<u64> {
        let canon = serde_json::to_string(self)?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(h)
    }
}

/// Parse and validate a config file, rejecting unknown keys with a
/// suggestion for the closest known one.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("config root must be a JSON object".into()))?;
    if !obj.contains_key("schema") {
        return Err(Error::Config(format!(
            "missing top-level 'schema' key (expected \"{CONFIG_SCHEMA}\")"
        )));
    }
    check_keys(&value, "")?;
    let cfg: RunConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

fn known_keys(path: &str) -> Option<&'static [&'static str]> {
    match path {
        "" => Some(&["schema", "model", "data", "federation", "client", "defense", "attack", "trials"]),
        "data" => Some(&["kind", "n", "num_classes", "images", "labels", "rgb", "path", "variant"]),
        "federation" => Some(&["clients", "rounds", "fraction", "transmit"]),
        "client" => Some(&["learning_rate", "optimizer", "local_epochs", "batch_size"]),
        "client.optimizer" => Some(&["kind", "momentum", "beta1", "beta2", "epsilon"]),
        "defense" => Some(&["kind", "clip", "noise", "sigma", "group", "rate", "scope"]),
        "attack" => Some(&["objective", "optimizer", "iterations", "success_threshold_db", "batch_size"]),
        "attack.objective" => Some(&["kind", "k", "tv_weight", "gamma0"]),
        "attack.optimizer" => Some(&["kind", "eta", "history", "armijo"]),
        "trials" => Some(&["seeds", "seed_base"]),
        _ => None,
    }
}

fn check_keys(value: &Value, path: &str) -> Result<()> {
    let Value::Object(map) = value else { return Ok(()) };
    if let Some(allowed) = known_keys(path) {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                let suggestion = allowed
                    .iter()
                    .map(|cand| (levenshtein(key, cand), *cand))
                    .collect::<BTreeMap<_, _>>()
                    .into_iter()
                    .next()
                    .map(|(_, cand)| cand)
                    .unwrap_or("");
                let at = if path.is_empty() { "top level".to_string() } else { format!("'{path}'") };
                return Err(Error::Config(format!(
                    "unknown key '{key}' at {at}; did you mean '{suggestion}'?"
                )));
            }
        }
    }
    for (key, child) in map {
        let child_path = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        check_keys(child, &child_path)?;
    }
    Ok(())
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
