//! Attack-target architectures and their weight collections.
//!
//! Two families are supported: a flatten-affine MLP and a three-convolution
//! LeNet-style network with sigmoid activations. Specs validate their shape
//! chain at build time; weights are bound to their spec by a fingerprint.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::{Graph, Tensor};

/// One layer of a model description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    Affine { in_dim: usize, out_dim: usize, bias: bool },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, pad: usize, stride: usize },
    Sigmoid,
    Relu,
    Flatten,
}

/// Intermediate activation shape while chaining layers.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Activation {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

/// Validated model description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerDesc>,
    /// Input shape [C, H, W].
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

impl ModelSpec {
    /// Check that consecutive layer shapes chain and the head matches
    /// `num_classes`. Errors name the failing layer.
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        let mut cur = Activation::Spatial { c, h, w };
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = match (layer, &cur) {
                (LayerDesc::Flatten, Activation::Spatial { c, h, w }) => Activation::Flat(c * h * w),
                (LayerDesc::Flatten, Activation::Flat(_)) => {
                    return Err(Error::Dimension(format!(
                        "layer {idx} (flatten): input is already flat"
                    )))
                }
                (LayerDesc::Affine { in_dim, out_dim, .. }, Activation::Flat(n)) => {
                    if in_dim != n {
                        return Err(Error::Dimension(format!(
                            "layer {idx} (affine): expects {in_dim} inputs, gets {n}"
                        )));
                    }
                    Activation::Flat(*out_dim)
                }
                (LayerDesc::Affine { .. }, Activation::Spatial { .. }) => {
                    return Err(Error::Dimension(format!(
                        "layer {idx} (affine): input must be flattened first"
                    )))
                }
                (LayerDesc::Conv2d { in_ch, out_ch, kernel, pad, stride }, Activation::Spatial { c, h, w }) => {
                    if in_ch != c {
                        return Err(Error::Dimension(format!(
                            "layer {idx} (conv2d): expects {in_ch} channels, gets {c}"
                        )));
                    }
                    let ho = crate::autodiff::conv_out_extent(*h, *kernel, *pad, *stride);
                    let wo = crate::autodiff::conv_out_extent(*w, *kernel, *pad, *stride);
                    match (ho, wo) {
                        (Some(ho), Some(wo)) if ho > 0 && wo > 0 => {
                            Activation::Spatial { c: *out_ch, h: ho, w: wo }
                        }
                        _ => {
                            return Err(Error::Dimension(format!(
                                "layer {idx} (conv2d): input {h}x{w} too small for kernel {kernel}, pad {pad}, stride {stride}"
                            )))
                        }
                    }
                }
                (LayerDesc::Conv2d { .. }, Activation::Flat(_)) => {
                    return Err(Error::Dimension(format!(
                        "layer {idx} (conv2d): input was already flattened"
                    )))
                }
                (LayerDesc::Sigmoid | LayerDesc::Relu, any) => any.clone(),
            };
        }
        match cur {
            Activation::Flat(n) if n == self.num_classes => Ok(()),
            other => Err(Error::Dimension(format!(
                "head produces {other:?}, expected {} classes",
                self.num_classes
            ))),
        }
    }

    /// Shapes of the parameter tensors, in layer order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerDesc::Affine { in_dim, out_dim, bias } => {
                    shapes.push(vec![*in_dim, *out_dim]);
                    if *bias {
                        shapes.push(vec![*out_dim]);
                    }
                }
                LayerDesc::Conv2d { in_ch, out_ch, kernel, .. } => {
                    shapes.push(vec![*out_ch, *in_ch, *kernel, *kernel]);
                }
                _ => {}
            }
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Stable identifier binding weights to this spec (FNV-1a over the
    /// structural description).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_usize(self.input_shape[0]);
        h.write_usize(self.input_shape[1]);
        h.write_usize(self.input_shape[2]);
        h.write_usize(self.num_classes);
        for layer in &self.layers {
            match layer {
                LayerDesc::Affine { in_dim, out_dim, bias } => {
                    h.write_usize(1);
                    h.write_usize(*in_dim);
                    h.write_usize(*out_dim);
                    h.write_usize(*bias as usize);
                }
                LayerDesc::Conv2d { in_ch, out_ch, kernel, pad, stride } => {
                    h.write_usize(2);
                    h.write_usize(*in_ch);
                    h.write_usize(*out_ch);
                    h.write_usize(*kernel);
                    h.write_usize(*pad);
                    h.write_usize(*stride);
                }
                LayerDesc::Sigmoid => h.write_usize(3),
                LayerDesc::Relu => h.write_usize(4),
                LayerDesc::Flatten => h.write_usize(5),
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write_usize(&mut self, v: usize) {
        for byte in (v as u64).to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Ordered per-layer weight tensors for a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    tensors: Vec<Tensor>,
    fingerprint: u64,
}

impl ModelWeights {
    /// Bind tensors to a spec, checking count and shapes.
    pub fn new(spec: &ModelSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "spec has {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (t, s)) in tensors.iter().zip(shapes.iter()).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {i} has shape {:?}, spec wants {:?}",
                    t.shape(),
                    s
                )));
            }
        }
        Ok(Self { tensors, fingerprint: spec.fingerprint() })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, spec: &ModelSpec) -> bool {
        self.fingerprint == spec.fingerprint()
    }

    /// Concatenate all parameters into one flat vector.
    pub fn flatten(&self) -> Vec<f64> {
        crate::tensor::flatten_all(&self.tensors)
    }

    /// Rebuild weights from a flat vector laid out as [`ModelWeights::flatten`].
    pub fn unflatten(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        let shapes = spec.param_shapes();
        let expect: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if flat.len() != expect {
            return Err(Error::Dimension(format!(
                "flat vector has {} elements, spec wants {expect}",
                flat.len()
            )));
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for s in shapes {
            let n: usize = s.iter().product();
            tensors.push(Tensor::from_raw(s, flat[offset..offset + n].to_vec()));
            offset += n;
        }
        Ok(Self { tensors, fingerprint: spec.fingerprint() })
    }

    /// Frobenius norm of the whole parameter vector.
    pub fn global_norm(&self) -> f64 {
        crate::tensor::frobenius_norm_all_tensors(&self.tensors)
    }

    pub(crate) fn from_tensors_unchecked(tensors: Vec<Tensor>, fingerprint: u64) -> Self {
        Self { tensors, fingerprint }
    }
}

/// Flatten -> Affine(in, hidden) -> ReLU -> Affine(hidden, classes).
pub fn build_mlp(input_shape: [usize; 3], hidden: usize, num_classes: usize) -> Result<ModelSpec> {
    if hidden == 0 {
        return Err(Error::Argument("mlp hidden width must be >= 1".into()));
    }
    let flat = input_shape.iter().product();
    let spec = ModelSpec {
        layers: vec![
            LayerDesc::Flatten,
            LayerDesc::Affine { in_dim: flat, out_dim: hidden, bias: false },
            LayerDesc::Relu,
            LayerDesc::Affine { in_dim: hidden, out_dim: num_classes, bias: false },
        ],
        input_shape,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Three 5x5 convolutions with sigmoid activations, then an affine head.
pub fn build_lenet(input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec> {
    let c = input_shape[0];
    let mut layers = vec![
        LayerDesc::Conv2d { in_ch: c, out_ch: 12, kernel: 5, pad: 2, stride: 2 },
        LayerDesc::Sigmoid,
        LayerDesc::Conv2d { in_ch: 12, out_ch: 12, kernel: 5, pad: 2, stride: 2 },
        LayerDesc::Sigmoid,
        LayerDesc::Conv2d { in_ch: 12, out_ch: 12, kernel: 5, pad: 2, stride: 1 },
        LayerDesc::Sigmoid,
        LayerDesc::Flatten,
    ];
    // Final spatial extent decides the head width; validate() re-checks.
    let mut h = input_shape[1];
    let mut w = input_shape[2];
    for (idx, layer) in layers.iter().enumerate() {
        if let LayerDesc::Conv2d { kernel, pad, stride, .. } = layer {
            let ho = crate::autodiff::conv_out_extent(h, *kernel, *pad, *stride);
            let wo = crate::autodiff::conv_out_extent(w, *kernel, *pad, *stride);
            match (ho, wo) {
                (Some(ho), Some(wo)) if ho > 0 && wo > 0 => {
                    h = ho;
                    w = wo;
                }
                _ => {
                    return Err(Error::Dimension(format!(
                        "layer {idx} (conv2d): input too small for the lenet stack"
                    )))
                }
            }
        }
    }
    layers.push(LayerDesc::Affine { in_dim: 12 * h * w, out_dim: num_classes, bias: false });
    let spec = ModelSpec { layers, input_shape, num_classes };
    spec.validate()?;
    Ok(spec)
}

/// MLP variant with bias rows on both affine layers.
///
/// A biasless ReLU network is positively homogeneous, so its gradient
/// direction determines the input only up to a positive scale; the bias
/// gradients pin that scale. The desk-scale preset uses this variant so
/// single-image recovery is well-posed at 8x8.
pub fn build_mlp_biased(input_shape: [usize; 3], hidden: usize, num_classes: usize) -> Result<ModelSpec> {
    if hidden == 0 {
        return Err(Error::Argument("mlp hidden width must be >= 1".into()));
    }
    let flat = input_shape.iter().product();
    let spec = ModelSpec {
        layers: vec![
            LayerDesc::Flatten,
            LayerDesc::Affine { in_dim: flat, out_dim: hidden, bias: true },
            LayerDesc::Relu,
            LayerDesc::Affine { in_dim: hidden, out_dim: num_classes, bias: true },
        ],
        input_shape,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Named presets addressable from run configurations.
pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "paper-mlp" => build_mlp([3, 224, 224], 32, 200),
        "paper-lenet" => build_lenet([3, 224, 224], 200),
        "tiny-mlp" => build_mlp_biased([3, 8, 8], 256, 10),
        "tiny-lenet" => build_lenet([3, 16, 16], 10),
        other => Err(Error::Config(format!(
            "unknown model preset '{other}' (expected paper-mlp, paper-lenet, tiny-mlp or tiny-lenet)"
        ))),
    }
}

/// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> Result<ModelWeights> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for layer in &spec.layers {
        match layer {
            LayerDesc::Affine { in_dim, out_dim, bias } => {
                let bound = 1.0 / (*in_dim as f64).sqrt();
                tensors.push(sample_uniform(&mut rng, &[*in_dim, *out_dim], bound));
                if *bias {
                    tensors.push(sample_uniform(&mut rng, &[*out_dim], bound));
                }
            }
            LayerDesc::Conv2d { in_ch, out_ch, kernel, .. } => {
                let bound = 1.0 / ((*in_ch * kernel * kernel) as f64).sqrt();
                tensors.push(sample_uniform(&mut rng, &[*out_ch, *in_ch, *kernel, *kernel], bound));
            }
            _ => {}
        }
    }
    ModelWeights::new(spec, tensors)
}

fn sample_uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid uniform bounds");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::from_raw(shape.to_vec(), data)
}

/// Bind model weights as graph leaves.
pub fn bind_weights(graph: &mut Graph, spec: &ModelSpec, weights: &ModelWeights, requires_grad: bool) -> Result<Vec<Var>> {
    if !weights.matches(spec) {
        return Err(Error::Contract(
            "weights fingerprint does not match the model spec".into(),
        ));
    }
    Ok(weights
        .tensors()
        .iter()
        .map(|t| graph.leaf(t.clone(), requires_grad))
        .collect())
}

/// Run the model forward on a recorded input batch [B,C,H,W].
pub fn forward(graph: &mut Graph, spec: &ModelSpec, weight_vars: &[Var], x: Var) -> Result<Var> {
    let xs = graph.shape(x).to_vec();
    if xs.len() != 4 || xs[1..] != [spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]] {
        return Err(Error::Dimension(format!(
            "input shape {:?} does not match model input {:?}",
            xs, spec.input_shape
        )));
    }
    let batch = xs[0];
    let mut cur = x;
    let mut next_param = 0;
    for layer in &spec.layers {
        cur = match layer {
            LayerDesc::Flatten => {
                let n: usize = graph.shape(cur)[1..].iter().product();
                graph.reshape(cur, &[batch, n])?
            }
            LayerDesc::Affine { bias, .. } => {
                let w = weight_vars[next_param];
                next_param += 1;
                let b = if *bias {
                    let b = weight_vars[next_param];
                    next_param += 1;
                    Some(b)
                } else {
                    None
                };
                graph.affine(cur, w, b)?
            }
            LayerDesc::Conv2d { pad, stride, .. } => {
                let k = weight_vars[next_param];
                next_param += 1;
                graph.conv2d(cur, k, *pad, *stride)?
            }
            LayerDesc::Sigmoid => graph.sigmoid(cur),
            LayerDesc::Relu => graph.relu(cur),
        };
    }
    Ok(cur)
}

/// Plain evaluation without gradient tracking.
pub fn forward_tensors(spec: &ModelSpec, weights: &ModelWeights, x: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let xv = graph.leaf(x.clone(), false);
    let wv = bind_weights(&mut graph, spec, weights, false)?;
    let logits = forward(&mut graph, spec, &wv, xv)?;
    Ok(graph.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_paper_scale_shapes() {
        let spec = build_mlp([3, 224, 224], 32, 200).unwrap();
        assert_eq!(
            spec.param_shapes(),
            vec![vec![150528, 32], vec![32, 200]]
        );
        assert_eq!(spec.param_count(), 150528 * 32 + 32 * 200);
    }

    #[test]
    fn mlp_tiny_shapes() {
        let spec = build_mlp([1, 2, 2], 1, 2).unwrap();
        assert_eq!(spec.param_shapes(), vec![vec![4, 1], vec![1, 2]]);
    }

    #[test]
    fn lenet_paper_scale_shapes() {
        let spec = build_lenet([3, 224, 224], 200).unwrap();
        // 224 -> 112 -> 56 -> 56, head 12*56*56 = 37632.
        assert_eq!(
            spec.param_shapes().last().unwrap(),
            &vec![37632, 200]
        );
    }

    #[test]
    fn lenet_32_shapes() {
        let spec = build_lenet([3, 32, 32], 10).unwrap();
        assert_eq!(spec.param_shapes().last().unwrap(), &vec![768, 10]);
    }

    #[test]
    fn validate_names_failing_conv_layer() {
        // The padded lenet stack survives any positive input, so exercise the
        // error path with an unpadded conv that cannot fit.
        let spec = ModelSpec {
            layers: vec![
                LayerDesc::Conv2d { in_ch: 1, out_ch: 2, kernel: 5, pad: 0, stride: 1 },
                LayerDesc::Flatten,
                LayerDesc::Affine { in_dim: 2, out_dim: 2, bias: false },
            ],
            input_shape: [1, 3, 3],
            num_classes: 2,
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("layer 0") && err.contains("conv2d"), "{err}");
    }

    #[test]
    fn init_weights_is_deterministic_per_seed() {
        let spec = build_mlp([1, 2, 2], 3, 2).unwrap();
        let a = init_weights(&spec, 7).unwrap();
        let b = init_weights(&spec, 7).unwrap();
        let c = init_weights(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_weights_std_matches_uniform_moments() {
        // std of uniform(-b, b) is b / sqrt(3); check within 5%.
        let spec = build_mlp([3, 8, 8], 64, 10).unwrap(); // first layer: 192*64 > 1e4 samples
        let w = init_weights(&spec, 42).unwrap();
        let first = &w.tensors()[0];
        let n = first.len() as f64;
        let mean = first.sum() / n;
        let var = first.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expect = (1.0 / (192.0f64).sqrt()) / 3.0f64.sqrt();
        assert!((var.sqrt() - expect).abs() / expect < 0.05);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = build_mlp([1, 2, 2], 3, 2).unwrap();
        let tensors = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let w = ModelWeights::new(&spec, tensors).unwrap();
        let x = Tensor::filled(&[1, 1, 2, 2], 0.5);
        let y = forward_tensors(&spec, &w, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fingerprint_mismatch_is_a_contract_error() {
        let spec_a = build_mlp([1, 2, 2], 3, 2).unwrap();
        let spec_b = build_mlp([1, 2, 2], 4, 2).unwrap();
        let w = init_weights(&spec_a, 1).unwrap();
        let mut g = Graph::new();
        assert!(matches!(
            bind_weights(&mut g, &spec_b, &w, false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let spec = build_lenet([3, 8, 8], 10).unwrap();
        let w = init_weights(&spec, 3).unwrap();
        let flat = w.flatten();
        let back = ModelWeights::unflatten(&spec, &flat).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn presets_exist() {
        for name in ["paper-mlp", "paper-lenet", "tiny-mlp", "tiny-lenet"] {
            preset(name).unwrap();
        }
        assert!(preset("tiny-vgg").is_err());
    }
}
