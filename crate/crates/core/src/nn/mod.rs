//! Minimal tensor/layer engine with explicit forward and backward
//! passes: channel-compressing CNNs, dense MLPs, weighted cross-entropy
//! training and input-gradient computation for attribution.
//!
//! Tensors are `(batch, height, width, channels)` arrays of f64. All
//! randomness (initialization, shuffling) flows through seeded ChaCha8
//! streams; training is bit-deterministic for a fixed config on one
//! platform (parallel work reduces in fixed order).

mod layers;
mod network;
mod train;

pub use layers::{Layer, LayerGrads, Mode, Tensor};
pub use network::{LayerSpec, Network, NetworkSpec};
pub use train::{
    evaluate_network, train, EpochStats, OptimizerKind, TrainConfig, TrainHistory,
};

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Array4::zeros(shape);
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
    }

    /// Check one layer's backward pass against central finite
    /// differences of the scalar loss sum(coeffs * forward(x)).
    fn fd_check_layer(layer: &Layer, shape: (usize, usize, usize, usize), mode: Mode) {
        const EPS: f64 = 1e-5;
        const TOL: f64 = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(shape, &mut rng);
        let (y0, _) = layer.forward(&x, mode).unwrap();
        let coeffs = random_tensor(y0.dim(), &mut rng);
        let loss = |lay: &Layer, xin: &Tensor| -> f64 {
            let (y, _) = lay.forward(xin, mode).unwrap();
            y.iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum()
        };
        let (dx, grads) = layer.backward(&x, &coeffs, mode).unwrap();

        // input gradients
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let base = x.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = base + EPS;
            let lp = loss(layer, &xp);
            xp.as_slice_mut().unwrap()[idx] = base - EPS;
            let lm = loss(layer, &xp);
            xp.as_slice_mut().unwrap()[idx] = base;
            let num = (lp - lm) / (2.0 * EPS);
            let ana = dx.as_slice().unwrap()[idx];
            assert!(
                rel_err(ana, num) < TOL,
                "{} input grad mismatch at {idx}: analytic {ana}, numeric {num}",
                layer.name()
            );
        }

        // parameter gradients (skip eval-mode batchnorm, whose affine
        // parameters are reported as zeros by design there)
        if matches!(layer, Layer::BatchNorm { .. }) && mode == Mode::Eval {
            return;
        }
        for (pi, g) in grads.iter().enumerate() {
            // stride-subsample very large parameter arrays
            let stride = (g.len() / 512).max(1);
            for j in (0..g.len()).step_by(stride) {
                let mut pert = layer.clone();
                let base = pert.params()[pi][j];
                pert.params_mut()[pi][j] = base + EPS;
                let lp = loss(&pert, &x);
                pert.params_mut()[pi][j] = base - EPS;
                let lm = loss(&pert, &x);
                let num = (lp - lm) / (2.0 * EPS);
                assert!(
                    rel_err(g[j], num) < TOL,
                    "{} param {pi}[{j}] mismatch: analytic {}, numeric {num}",
                    layer.name(),
                    g[j]
                );
            }
        }
    }

    #[test]
    fn channel_compress_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..8 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let layer = Layer::ChannelCompress {
            in_ch: 8,
            out_ch: 3,
            w,
            b: vec![0.1, -0.2, 0.05],
        };
        fd_check_layer(&layer, (2, 4, 5, 8), Mode::Eval);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..4 * 3 * 3 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let layer = Layer::Conv2d {
            in_ch: 3,
            out_ch: 4,
            kernel: 3,
            w,
            b: vec![0.1, 0.0, -0.1, 0.2],
        };
        fd_check_layer(&layer, (2, 5, 6, 3), Mode::Eval);
    }

    #[test]
    fn relu_maxpool_gap_gradients_match_finite_differences() {
        fd_check_layer(&Layer::Relu, (2, 4, 4, 3), Mode::Eval);
        fd_check_layer(&Layer::MaxPool { size: 2 }, (2, 6, 6, 3), Mode::Eval);
        fd_check_layer(&Layer::GlobalAvgPool, (2, 5, 5, 4), Mode::Eval);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let layer = Layer::BatchNorm {
            channels: 3,
            gamma: vec![1.3, 0.7, 1.0],
            beta: vec![0.1, -0.4, 0.0],
            running_mean: vec![0.2, -0.1, 0.0],
            running_var: vec![1.5, 0.8, 1.0],
        };
        fd_check_layer(&layer, (3, 4, 4, 3), Mode::Train);
        fd_check_layer(&layer, (3, 4, 4, 3), Mode::Eval);
    }

    #[test]
    fn dense_and_softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..6 * 4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let layer = Layer::Dense {
            in_features: 6,
            out_features: 4,
            w,
            b: vec![0.0, 0.1, -0.1, 0.2],
        };
        fd_check_layer(&layer, (3, 1, 1, 6), Mode::Eval);
        fd_check_layer(&Layer::Softmax, (3, 1, 1, 4), Mode::Eval);
    }

    #[test]
    fn full_cnn_loss_gradients_match_finite_differences() {
        const EPS: f64 = 1e-5;
        const TOL: f64 = 1e-4;
        let spec = NetworkSpec::cnn((8, 8, 4), 2, 2);
        let net = Network::init(&spec, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor((3, 8, 8, 4), &mut rng);
        let labels = vec![0usize, 1, 0];
        let weights = vec![1.0, 2.0];
        let loss_of = |n: &Network| -> f64 {
            let probs = n.forward(&x, Mode::Train).unwrap();
            Network::weighted_ce_loss(&probs, &labels, &weights).unwrap().0
        };
        let (acts, _) = net.forward_cached(&x, Mode::Train).unwrap();
        let (_, d_logits) =
            Network::weighted_ce_loss(acts.last().unwrap(), &labels, &weights).unwrap();
        let stack_len = net.layers.len() - 1;
        let mut dy = d_logits;
        let mut grads: Vec<LayerGrads> = vec![Vec::new(); stack_len];
        for i in (0..stack_len).rev() {
            let (dx, g) = net.layers[i].backward(&acts[i], &dy, Mode::Train).unwrap();
            grads[i] = g;
            dy = dx;
        }
        let mut checked = 0usize;
        for (li, g) in grads.iter().enumerate() {
            for (pi, gv) in g.iter().enumerate() {
                let stride = (gv.len() / 64).max(1);
                for j in (0..gv.len()).step_by(stride) {
                    let mut pert = net.clone();
                    let base = pert.layers[li].params()[pi][j];
                    pert.layers[li].params_mut()[pi][j] = base + EPS;
                    let lp = loss_of(&pert);
                    pert.layers[li].params_mut()[pi][j] = base - EPS;
                    let lm = loss_of(&pert);
                    let num = (lp - lm) / (2.0 * EPS);
                    assert!(
                        rel_err(gv[j], num) < TOL,
                        "layer {li} ({}) param {pi}[{j}]: analytic {}, numeric {num}",
                        net.layers[li].name(),
                        gv[j]
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "checked too few parameters: {checked}");
    }

    #[test]
    fn compress_init_is_group_averaging() {
        let spec = NetworkSpec::cnn((8, 8, 10), 3, 2);
        let net = Network::init(&spec, 0).unwrap();
        if let Layer::ChannelCompress { w, b, .. } = &net.layers[0] {
            // groups: 0..3, 3..6, 6..10 (remainder into the last)
            assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((w[3] - 0.0).abs() < 1e-12);
            assert!((w[1 * 10 + 3] - 1.0 / 3.0).abs() < 1e-12);
            assert!((w[2 * 10 + 6] - 0.25).abs() < 1e-12);
            assert!((w[2 * 10 + 9] - 0.25).abs() < 1e-12);
            assert!(b.iter().all(|&v| v == 0.0));
        } else {
            panic!("first layer should compress channels");
        }
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let spec = NetworkSpec::cnn((8, 8, 6), 3, 2);
        let a = Network::init(&spec, 42).unwrap();
        let b = Network::init(&spec, 42).unwrap();
        let c = Network::init(&spec, 43).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            for (pa, pb) in la.params().iter().zip(lb.params()) {
                assert_eq!(*pa, pb);
            }
        }
        let differs = a
            .layers
            .iter()
            .zip(&c.layers)
            .any(|(la, lc)| la.params().iter().zip(lc.params()).any(|(pa, pc)| *pa != pc));
        assert!(differs, "different seeds should give different weights");
    }

    #[test]
    fn save_load_roundtrip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::cnn((8, 8, 5), 2, 2);
        let net = Network::init(&spec, 9).unwrap();
        let path = dir.path().join("model.hsin");
        net.save(&path).unwrap();
        let loaded = Network::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor((2, 8, 8, 5), &mut rng);
        let y0 = net.forward(&x, Mode::Eval).unwrap();
        let y1 = loaded.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y0, y1);
    }

    #[test]
    fn softmax_outputs_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor((4, 1, 1, 5), &mut rng);
        let (y, _) = Layer::Softmax.forward(&x, Mode::Eval).unwrap();
        for bi in 0..4 {
            let row: f64 = (0..5).map(|c| y[[bi, 0, 0, c]]).sum();
            assert!((row - 1.0).abs() < 1e-12);
            assert!((0..5).all(|c| y[[bi, 0, 0, c]] > 0.0));
        }
    }

    #[test]
    fn batchnorm_rejects_single_example_batches_in_training() {
        let layer = Layer::BatchNorm {
            channels: 2,
            gamma: vec![1.0; 2],
            beta: vec![0.0; 2],
            running_mean: vec![0.0; 2],
            running_var: vec![1.0; 2],
        };
        let x = Array4::zeros((1, 2, 2, 2));
        assert!(layer.forward(&x, Mode::Train).is_err());
        assert!(layer.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn training_learns_a_separable_problem() {
        // two Gaussian-ish blobs in 6-D, dense MLP
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 80;
        let mut x = Array4::zeros((n, 1, 1, 6));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            for f in 0..6 {
                let center = if class == 0 { 0.5 } else { -0.5 };
                x[[i, 0, 0, f]] = center + rng.gen_range(-0.2..0.2);
            }
            labels.push(class);
        }
        let spec = NetworkSpec::mlp(6, &[8], 2);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (net, history) = train(&spec, &x, &labels, &cfg).unwrap();
        let (_, acc) = evaluate_network(&net, &x, &labels, &[1.0, 1.0]).unwrap();
        assert!(acc > 0.95, "trained accuracy {acc}");
        assert_eq!(history.epochs.len(), 40);
        assert!(history.best_epoch < 40);
    }

    #[test]
    fn training_is_deterministic_for_fixed_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 24;
        let mut x = Array4::zeros((n, 8, 8, 4));
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 2;
            for v in x.index_axis_mut(ndarray::Axis(0), i).iter_mut() {
                *v = rng.gen_range(-0.5..0.5) + class as f64 * 0.3;
            }
            labels.push(class);
        }
        let spec = NetworkSpec::cnn((8, 8, 4), 2, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, _) = train(&spec, &x, &labels, &cfg).unwrap();
        let (b, _) = train(&spec, &x, &labels, &cfg).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            for (pa, pb) in la.params().iter().zip(lb.params()) {
                assert_eq!(*pa, pb);
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences_of_logits() {
        const EPS: f64 = 1e-5;
        let spec = NetworkSpec::cnn((8, 8, 3), 2, 2);
        let net = Network::init(&spec, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor((2, 8, 8, 3), &mut rng);
        let targets = vec![1usize, 0];
        let grads = net.input_gradients(&x, &targets).unwrap();
        let logit = |xin: &Tensor, bi: usize, t: usize| -> f64 {
            // pre-softmax value: run all layers except the head
            let mut cur = xin.clone();
            for layer in &net.layers[..net.layers.len() - 1] {
                cur = layer.forward(&cur, Mode::Eval).unwrap().0;
            }
            cur[[bi, 0, 0, t]]
        };
        let mut xp = x.clone();
        let mut checked = 0;
        // subsample positions for speed
        for idx in (0..x.len()).step_by(17) {
            let (bs, h, w, c) = x.dim();
            let _ = bs;
            let bi = idx / (h * w * c);
            let base = x.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = base + EPS;
            let lp = logit(&xp, bi, targets[bi]);
            xp.as_slice_mut().unwrap()[idx] = base - EPS;
            let lm = logit(&xp, bi, targets[bi]);
            xp.as_slice_mut().unwrap()[idx] = base;
            let num = (lp - lm) / (2.0 * EPS);
            let ana = grads.as_slice().unwrap()[idx];
            assert!(
                rel_err(ana, num) < 1e-4,
                "input grad at {idx}: analytic {ana}, numeric {num}"
            );
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn spec_validation_rejects_shape_mismatches() {
        let bad = NetworkSpec {
            layers: vec![
                LayerSpec::Conv2d { in_ch: 3, out_ch: 4, kernel: 3 },
                LayerSpec::Dense { in_features: 10, out_features: 2 },
            ],
            input_shape: (4, 4, 3),
        };
        assert!(bad.validate().is_err());
        let good = NetworkSpec::cnn((40, 40, 104), 6, 2);
        assert_eq!(good.validate().unwrap(), 2);
        assert!(NetworkSpec::mlp(104, &[64, 32], 2).validate().is_ok());
    }
}
