//! Network assembly: layer specs, parameter initialization, whole-network
//! forward/backward passes, loss, and on-disk serialization.

use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::Axis;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};

use super::layers::{Layer, LayerGrads, Mode, Tensor};

/// Declarative layer description; the shape of the stack is data, the
/// parameters live in [`Network`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    ChannelCompress { in_ch: usize, out_ch: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize },
    Relu,
    MaxPool { size: usize },
    BatchNorm { channels: usize },
    GlobalAvgPool,
    Dense { in_features: usize, out_features: usize },
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// Input shape as (height, width, channels); informational plus used
    /// for validation at build time.
    pub input_shape: (usize, usize, usize),
}

impl NetworkSpec {
    /// Image classifier with a learnable channel-compression front end:
    /// compress to `meta_channels`, then three conv/relu/pool/batchnorm
    /// blocks (16, 32, 64 filters), global average pooling, and a dense
    /// softmax head.
    pub fn cnn(input_shape: (usize, usize, usize), meta_channels: usize, classes: usize) -> Self {
        let (_, _, in_ch) = input_shape;
        let mut layers = vec![LayerSpec::ChannelCompress {
            in_ch,
            out_ch: meta_channels,
        }];
        let mut prev = meta_channels;
        for filters in [16usize, 32, 64] {
            layers.push(LayerSpec::Conv2d {
                in_ch: prev,
                out_ch: filters,
                kernel: 3,
            });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool { size: 2 });
            layers.push(LayerSpec::BatchNorm { channels: filters });
            prev = filters;
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense {
            in_features: prev,
            out_features: classes,
        });
        layers.push(LayerSpec::Softmax);
        NetworkSpec {
            layers,
            input_shape,
        }
    }

    /// Conv stack identical to [`NetworkSpec::cnn`] but consuming the
    /// input channels directly, with no compression front end. Used
    /// when the input is already a selected channel subset.
    pub fn cnn_direct(input_shape: (usize, usize, usize), classes: usize) -> Self {
        let (_, _, in_ch) = input_shape;
        let mut layers = Vec::new();
        let mut prev = in_ch;
        for filters in [16usize, 32, 64] {
            layers.push(LayerSpec::Conv2d {
                in_ch: prev,
                out_ch: filters,
                kernel: 3,
            });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool { size: 2 });
            layers.push(LayerSpec::BatchNorm { channels: filters });
            prev = filters;
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense {
            in_features: prev,
            out_features: classes,
        });
        layers.push(LayerSpec::Softmax);
        NetworkSpec {
            layers,
            input_shape,
        }
    }

    /// Fully connected classifier over already-flattened features.
    pub fn mlp(in_features: usize, hidden: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut prev = in_features;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                in_features: prev,
                out_features: h,
            });
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::Dense {
            in_features: prev,
            out_features: classes,
        });
        layers.push(LayerSpec::Softmax);
        NetworkSpec {
            layers,
            input_shape: (1, 1, in_features),
        }
    }

    /// Walk the stack symbolically and confirm every layer is fed the
    /// shape it expects; returns the output feature count.
    pub fn validate(&self) -> Result<usize> {
        let (mut h, mut w, mut c) = self.input_shape;
        for spec in &self.layers {
            match spec {
                LayerSpec::ChannelCompress { in_ch, out_ch } => {
                    if c != *in_ch {
                        return Err(HsiError::shape(format!(
                            "compress expects {in_ch} channels, stack provides {c}"
                        )));
                    }
                    c = *out_ch;
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel } => {
                    if c != *in_ch {
                        return Err(HsiError::shape(format!(
                            "conv expects {in_ch} channels, stack provides {c}"
                        )));
                    }
                    if kernel % 2 == 0 || *kernel == 0 {
                        return Err(HsiError::invalid("conv kernel must be odd and positive"));
                    }
                    c = *out_ch;
                }
                LayerSpec::Relu => {}
                LayerSpec::MaxPool { size } => {
                    if *size == 0 || h / size == 0 || w / size == 0 {
                        return Err(HsiError::shape("maxpool window larger than input"));
                    }
                    h /= size;
                    w /= size;
                }
                LayerSpec::BatchNorm { channels } => {
                    if c != *channels {
                        return Err(HsiError::shape("batchnorm channel mismatch in spec"));
                    }
                }
                LayerSpec::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    if h * w * c != *in_features {
                        return Err(HsiError::shape(format!(
                            "dense expects {in_features} features, stack provides {}",
                            h * w * c
                        )));
                    }
                    h = 1;
                    w = 1;
                    c = *out_features;
                }
                LayerSpec::Softmax => {
                    if h != 1 || w != 1 {
                        return Err(HsiError::shape("softmax must follow a 1x1 feature map"));
                    }
                }
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Build and initialize from a spec. Weights are fan-in uniform in
    /// +/- sqrt(3 / fan_in); biases start at zero. The compression layer
    /// instead starts as a contiguous-group averaging map so the initial
    /// meta-channels are coarse band averages.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            layers.push(match ls {
                LayerSpec::ChannelCompress { in_ch, out_ch } => {
                    let mut w = vec![0.0f64; in_ch * out_ch];
                    // contiguous groups, remainder bands into the last group
                    let group = in_ch / out_ch;
                    for oc in 0..*out_ch {
                        let start = oc * group;
                        let end = if oc + 1 == *out_ch { *in_ch } else { start + group };
                        let inv = 1.0 / (end - start) as f64;
                        for ic in start..end {
                            w[oc * in_ch + ic] = inv;
                        }
                    }
                    Layer::ChannelCompress {
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        w,
                        b: vec![0.0; *out_ch],
                    }
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel } => {
                    let fan_in = (in_ch * kernel * kernel) as f64;
                    let bound = (3.0 / fan_in).sqrt();
                    let w = (0..out_ch * kernel * kernel * in_ch)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    Layer::Conv2d {
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        kernel: *kernel,
                        w,
                        b: vec![0.0; *out_ch],
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size } => Layer::MaxPool { size: *size },
                LayerSpec::BatchNorm { channels } => Layer::BatchNorm {
                    channels: *channels,
                    gamma: vec![1.0; *channels],
                    beta: vec![0.0; *channels],
                    running_mean: vec![0.0; *channels],
                    running_var: vec![1.0; *channels],
                },
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let bound = (3.0 / *in_features as f64).sqrt();
                    let w = (0..in_features * out_features)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    Layer::Dense {
                        in_features: *in_features,
                        out_features: *out_features,
                        w,
                        b: vec![0.0; *out_features],
                    }
                }
                LayerSpec::Softmax => Layer::Softmax,
            });
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.len())
            .sum()
    }

    /// Forward pass returning the final activation (class probabilities
    /// when the stack ends in softmax).
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, _) = layer.forward(&cur, mode)?;
            cur = y;
        }
        Ok(cur)
    }

    /// Forward pass that keeps every intermediate activation (inputs to
    /// each layer) plus per-layer batch statistics from batchnorm.
    #[allow(clippy::type_complexity)]
    pub fn forward_cached(
        &self,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(Vec<Tensor>, Vec<Option<(Vec<f64>, Vec<f64>)>>)> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut stats = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let (y, st) = layer.forward(acts.last().unwrap(), mode)?;
            stats.push(st);
            acts.push(y);
        }
        Ok((acts, stats))
    }

    /// Backpropagate `d_out` (gradient at the final activation) through
    /// the whole stack. Returns the input gradient and per-layer
    /// parameter gradients (empty vectors for parameterless layers).
    pub fn backward(
        &self,
        acts: &[Tensor],
        d_out: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, Vec<LayerGrads>)> {
        let mut grads: Vec<LayerGrads> = vec![Vec::new(); self.layers.len()];
        let mut dy = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&acts[i], &dy, mode)?;
            grads[i] = g;
            dy = dx;
        }
        Ok((dy, grads))
    }

    /// Class-weighted cross-entropy over a probability batch. Returns
    /// the mean loss and the gradient at the softmax *input* (logits);
    /// callers therefore backpropagate from just before the final
    /// softmax layer.
    pub fn weighted_ce_loss(
        probs: &Tensor,
        labels: &[usize],
        class_weights: &[f64],
    ) -> Result<(f64, Tensor)> {
        let (bs, _, _, c) = probs.dim();
        if labels.len() != bs {
            return Err(HsiError::shape("label count does not match batch size"));
        }
        let inv_b = 1.0 / bs as f64;
        let mut loss = 0.0;
        let mut d_logits = Tensor::zeros(probs.dim());
        for (bi, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(HsiError::invalid(format!("label {y} out of range for {c} classes")));
            }
            let w = class_weights.get(y).copied().unwrap_or(1.0);
            let p = probs[[bi, 0, 0, y]].max(1e-12);
            loss += -w * p.ln();
            for ch in 0..c {
                let onehot = if ch == y { 1.0 } else { 0.0 };
                d_logits[[bi, 0, 0, ch]] = w * (probs[[bi, 0, 0, ch]] - onehot) * inv_b;
            }
        }
        Ok((loss * inv_b, d_logits))
    }

    /// Gradient of a single class's pre-softmax logit with respect to
    /// the input, per example. Used by attribution; runs in eval mode.
    pub fn input_gradients(&self, x: &Tensor, targets: &[usize]) -> Result<Tensor> {
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(HsiError::invalid("input gradients require a softmax head"));
        }
        let stack = &self.layers[..self.layers.len() - 1];
        let mut acts = Vec::with_capacity(stack.len() + 1);
        acts.push(x.clone());
        for layer in stack {
            let (y, _) = layer.forward(acts.last().unwrap(), Mode::Eval)?;
            acts.push(y);
        }
        let logits = acts.last().unwrap();
        let (bs, _, _, c) = logits.dim();
        if targets.len() != bs {
            return Err(HsiError::shape("target count does not match batch size"));
        }
        let mut dy = Tensor::zeros(logits.dim());
        for (bi, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(HsiError::invalid("attribution target out of range"));
            }
            dy[[bi, 0, 0, t]] = 1.0;
        }
        for (i, layer) in stack.iter().enumerate().rev() {
            let (dx, _) = layer.backward(&acts[i], &dy, Mode::Eval)?;
            dy = dx;
        }
        Ok(dy)
    }

    /// Argmax class per example from a probability batch.
    pub fn argmax(probs: &Tensor) -> Vec<usize> {
        probs
            .axis_iter(Axis(0))
            .map(|row| {
                let flat: Vec<f64> = row.iter().cloned().collect();
                flat.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect()
    }

    /// Serialize to the network container: magic, JSON spec, then all
    /// parameter arrays as little-endian f64 in layer order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let spec_json = serde_json::to_vec(&self.spec)
            .map_err(|e| HsiError::format(format!("spec serialization failed: {e}")))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"HSIN")?;
        f.write_all(&1u16.to_le_bytes())?;
        f.write_all(&(spec_json.len() as u32).to_le_bytes())?;
        f.write_all(&spec_json)?;
        let mut count: u64 = 0;
        for l in &self.layers {
            for p in l.params() {
                count += p.len() as u64;
            }
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = l
            {
                count += (running_mean.len() + running_var.len()) as u64;
            }
        }
        f.write_all(&count.to_le_bytes())?;
        for l in &self.layers {
            for p in l.params() {
                for v in p {
                    f.write_all(&v.to_le_bytes())?;
                }
            }
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = l
            {
                for v in running_mean.iter().chain(running_var.iter()) {
                    f.write_all(&v.to_le_bytes())?;
                }
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != b"HSIN" {
            return Err(HsiError::format("not a network container"));
        }
        let mut b2 = [0u8; 2];
        f.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != 1 {
            return Err(HsiError::format(format!("unsupported network version {version}")));
        }
        let mut b4 = [0u8; 4];
        f.read_exact(&mut b4)?;
        let spec_len = u32::from_le_bytes(b4) as usize;
        let mut spec_json = vec![0u8; spec_len];
        f.read_exact(&mut spec_json)?;
        let spec: NetworkSpec = serde_json::from_slice(&spec_json)
            .map_err(|e| HsiError::format(format!("bad network spec: {e}")))?;
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8)?;
        let declared = u64::from_le_bytes(b8);
        let mut net = Network::init(&spec, 0)?;
        let mut read_vec = |dst: &mut Vec<f64>| -> Result<u64> {
            for v in dst.iter_mut() {
                let mut b = [0u8; 8];
                f.read_exact(&mut b)
                    .map_err(|_| HsiError::format("network payload truncated"))?;
                *v = f64::from_le_bytes(b);
            }
            Ok(dst.len() as u64)
        };
        let mut total = 0u64;
        for l in &mut net.layers {
            for p in l.params_mut() {
                total += read_vec(p)?;
            }
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = l
            {
                total += read_vec(running_mean)?;
                total += read_vec(running_var)?;
            }
        }
        if total != declared {
            return Err(HsiError::format(format!(
                "network payload count mismatch: declared {declared}, read {total}"
            )));
        }
        Ok(net)
    }
}
