//! Minibatch training with SGD-momentum or Adam, validation-based model
//! selection, and deterministic shuffling.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};

use super::layers::{Layer, Mode, Tensor};
use super::network::{Network, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Per-class loss weights; shorter vectors are padded with 1.0.
    pub class_weights: Vec<f64>,
    /// Seed controlling shuffling and validation carve-out.
    pub seed: u64,
    /// Seed controlling parameter initialization; ensemble members vary
    /// only this.
    pub init_seed: u64,
    /// Fraction of the training set held out for model selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            class_weights: vec![],
            seed: 0,
            init_seed: 0,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch index (0-based) whose weights were kept.
    pub best_epoch: usize,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    /// First-moment (momentum) buffers, one per parameter vector.
    m: Vec<Vec<f64>>,
    /// Second-moment buffers (Adam only).
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, shapes: &[usize]) -> Self {
        Optimizer {
            kind,
            lr,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn apply(&mut self, params: Vec<&mut Vec<f64>>, grads: &[&Vec<f64>]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                const MOMENTUM: f64 = 0.9;
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = &mut self.m[i];
                    for j in 0..p.len() {
                        m[j] = MOMENTUM * m[j] + g[j];
                        p[j] -= self.lr * m[j];
                    }
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let bc1 = 1.0 - B1.powi(self.step as i32);
                let bc2 = 1.0 - B2.powi(self.step as i32);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    for j in 0..p.len() {
                        m[j] = B1 * m[j] + (1.0 - B1) * g[j];
                        v[j] = B2 * v[j] + (1.0 - B2) * g[j] * g[j];
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        p[j] -= self.lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let (_, h, w, c) = x.dim();
    let mut out = Tensor::zeros((idx.len(), h, w, c));
    for (oi, &src) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), oi)
            .assign(&x.index_axis(Axis(0), src));
    }
    out
}

fn has_batchnorm(net: &Network) -> bool {
    net.layers.iter().any(|l| matches!(l, Layer::BatchNorm { .. }))
}

/// Train a freshly initialized network on `(x, labels)`. A validation
/// slice is carved from the shuffled data; the returned network carries
/// the weights from the epoch with the lowest validation loss.
pub fn train(
    spec: &NetworkSpec,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    let n = x.dim().0;
    if labels.len() != n {
        return Err(HsiError::shape("example/label count mismatch"));
    }
    if n < 4 {
        return Err(HsiError::invalid("need at least 4 examples to train"));
    }
    if cfg.batch_size < 2 {
        return Err(HsiError::invalid("batch size must be at least 2"));
    }
    let classes = spec.validate()?;
    let mut weights = cfg.class_weights.clone();
    weights.resize(classes.max(weights.len()), 1.0);

    let mut net = Network::init(spec, cfg.init_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_x = gather(x, val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();
    let mut train_order: Vec<usize> = train_idx.to_vec();

    let shapes: Vec<usize> = net
        .layers
        .iter()
        .flat_map(|l| l.params())
        .map(|p| p.len())
        .collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &shapes);
    let bn = has_batchnorm(&net);

    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Network)> = None;

    for epoch in 0..cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_order.chunks(cfg.batch_size) {
            if bn && chunk.len() < 2 {
                continue; // batch statistics are undefined for one example
            }
            let bx = gather(x, chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (acts, stats) = net.forward_cached(&bx, Mode::Train)?;
            let probs = acts.last().unwrap();
            let (loss, d_logits) = Network::weighted_ce_loss(probs, &by, &weights)?;
            if !loss.is_finite() {
                return Err(HsiError::numeric(format!(
                    "training diverged at epoch {epoch} (non-finite loss)"
                )));
            }
            epoch_loss += loss;
            batches += 1;
            // the loss gradient is expressed at the softmax input, so
            // backpropagation starts below the softmax head
            let stack_len = net.layers.len() - 1;
            let mut dy = d_logits;
            let mut grads: Vec<super::layers::LayerGrads> = vec![Vec::new(); stack_len];
            for i in (0..stack_len).rev() {
                let (dx, g) = net.layers[i].backward(&acts[i], &dy, Mode::Train)?;
                grads[i] = g;
                dy = dx;
            }
            for (layer, st) in net.layers.iter_mut().zip(&stats) {
                if let Some((mu, var)) = st {
                    layer.update_running_stats(mu, var);
                }
            }
            let flat_grads: Vec<&Vec<f64>> = grads.iter().flatten().collect();
            let flat_params: Vec<&mut Vec<f64>> = net
                .layers
                .iter_mut()
                .flat_map(|l| l.params_mut())
                .collect();
            opt.apply(flat_params, &flat_grads);
        }
        let (val_loss, val_acc) = evaluate_network(&net, &val_x, &val_y, &weights)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: if batches > 0 { epoch_loss / batches as f64 } else { f64::NAN },
            val_loss,
            val_accuracy: val_acc,
        });
        let better = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if better {
            best = Some((val_loss, net.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, best_net) = best.ok_or_else(|| HsiError::invalid("no training epochs ran"))?;
    Ok((best_net, history))
}

/// Mean weighted cross-entropy and accuracy in eval mode.
pub fn evaluate_network(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, f64)> {
    let probs = net.forward(x, Mode::Eval)?;
    let (loss, _) = Network::weighted_ce_loss(&probs, labels, class_weights)?;
    let preds = Network::argmax(&probs);
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| *p == *y)
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}
