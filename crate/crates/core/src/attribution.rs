//! Channel-importance scoring by expected gradients, aggregation
//! across models with spread, top-k channel selection, and retraining
//! on the selected subset.

use std::path::Path;

use ndarray::Axis;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::{evaluate, Metrics};
use crate::dataset::{self, LabeledExample};
use crate::error::{HsiError, Result};
use crate::nn::{self, Mode, Network, NetworkSpec, Tensor, TrainConfig};

/// Per-channel importance aggregated over models that met the accuracy
/// bar, with the spread across those models.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttributionReport {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub wavelengths_nm: Vec<f64>,
    /// Indices of the models that passed the accuracy filter.
    pub model_ids: Vec<usize>,
}

/// Ordered channel pick: descending importance, ties by lower index.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChannelSubset {
    pub indices: Vec<usize>,
}

pub const DEFAULT_SAMPLES: usize = 64;
pub const ACCURACY_FILTER: f64 = 0.80;

/// Expected-gradients attribution for one example: average over
/// `samples` of (x - b) * d f_target / d x evaluated at b + a(x - b)
/// with baseline b drawn uniformly and a ~ uniform(0, 1). The result
/// is reduced to per-channel scores by summing over spatial positions
/// (signed). The target is the class the network predicts for x.
pub fn expected_gradients(
    net: &Network,
    x: &Tensor,
    baselines: &Tensor,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.dim().0 != 1 {
        return Err(HsiError::shape("expected a single example"));
    }
    if baselines.dim().0 == 0 {
        return Err(HsiError::invalid("empty baseline set"));
    }
    if samples == 0 {
        return Err(HsiError::invalid("need at least one sample"));
    }
    let (_, h, w, c) = x.dim();
    if baselines.dim().1 != h || baselines.dim().2 != w || baselines.dim().3 != c {
        return Err(HsiError::shape("baseline shape mismatch"));
    }
    let probs = net.forward(x, Mode::Eval)?;
    let target = Network::argmax(&probs)[0];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = baselines.dim().0;
    // one batched gradient pass over all interpolation points
    let mut points = Tensor::zeros((samples, h, w, c));
    let mut diffs = Tensor::zeros((samples, h, w, c));
    for s in 0..samples {
        let bi = rng.gen_range(0..nb);
        let alpha: f64 = rng.gen_range(0.0..1.0);
        let b = baselines.index_axis(Axis(0), bi);
        let xe = x.index_axis(Axis(0), 0);
        let mut pt = points.index_axis_mut(Axis(0), s);
        let mut df = diffs.index_axis_mut(Axis(0), s);
        ndarray::Zip::from(&mut pt)
            .and(&mut df)
            .and(&xe)
            .and(&b)
            .for_each(|p, d, &xv, &bv| {
                *d = xv - bv;
                *p = bv + alpha * (xv - bv);
            });
    }
    let grads = net.input_gradients(&points, &vec![target; samples])?;
    let mut scores = vec![0.0f64; c];
    let inv = 1.0 / samples as f64;
    for s in 0..samples {
        for r in 0..h {
            for col in 0..w {
                for k in 0..c {
                    scores[k] += diffs[[s, r, col, k]] * grads[[s, r, col, k]] * inv;
                }
            }
        }
    }
    Ok(scores)
}

/// Mean absolute per-channel attribution of one model over a whole
/// example set. Examples run in parallel with per-example seeds
/// derived from the master seed, so the result is order-independent
/// and reproducible.
pub fn channel_scores(
    net: &Network,
    examples: &Tensor,
    baselines: &Tensor,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = examples.dim().0;
    if n == 0 {
        return Err(HsiError::invalid("empty example set"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| master.gen()).collect();
    let per_example: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = examples
                .index_axis(Axis(0), i)
                .insert_axis(Axis(0))
                .to_owned();
            expected_gradients(net, &xi, baselines, samples, seeds[i])
        })
        .collect();
    let c = examples.dim().3;
    let mut mean = vec![0.0f64; c];
    for r in per_example {
        let scores = r?;
        for (m, s) in mean.iter_mut().zip(scores) {
            *m += s.abs() / n as f64;
        }
    }
    Ok(mean)
}

/// Baseline set for attribution: up to `per_class` training patches
/// sampled per class, plus the all-zeros patch.
pub fn attribution_baselines(
    train: &[LabeledExample],
    per_class: usize,
    seed: u64,
) -> Result<Tensor> {
    if train.is_empty() {
        return Err(HsiError::invalid("empty training set"));
    }
    let (h, w, c) = train[0].patch.data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::new();
    for class in [0usize, 1] {
        let mut idx: Vec<usize> = (0..train.len())
            .filter(|&i| train[i].binary_label == class)
            .collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        chosen.extend(idx.into_iter().take(per_class));
    }
    let mut out = Tensor::zeros((chosen.len() + 1, h, w, c));
    for (oi, &src) in chosen.iter().enumerate() {
        let p = &train[src].patch.data;
        for r in 0..h {
            for col in 0..w {
                for k in 0..c {
                    out[[oi, r, col, k]] = p[[r, col, k]] as f64;
                }
            }
        }
    }
    // the final row stays all zeros: the absence baseline
    Ok(out)
}

/// Combine per-model channel scores. Each passing model's scores are
/// first normalized to unit L1 norm so differently scaled models
/// contribute equally; then mean and standard deviation are taken per
/// channel across models with test accuracy above the filter.
pub fn aggregate_importance(
    per_model: &[Vec<f64>],
    accuracies: &[f64],
    wavelengths_nm: &[f64],
    accuracy_filter: f64,
) -> Result<AttributionReport> {
    if per_model.len() != accuracies.len() {
        return Err(HsiError::shape("score/accuracy count mismatch"));
    }
    let passing: Vec<usize> = (0..per_model.len())
        .filter(|&i| accuracies[i] > accuracy_filter)
        .collect();
    if passing.is_empty() {
        return Err(HsiError::invalid(format!(
            "no model exceeded the accuracy filter {accuracy_filter}"
        )));
    }
    let c = per_model[passing[0]].len();
    if wavelengths_nm.len() != c {
        return Err(HsiError::shape("wavelength/channel count mismatch"));
    }
    let normalized: Vec<Vec<f64>> = passing
        .iter()
        .map(|&i| {
            let s = &per_model[i];
            if s.len() != c {
                return Err(HsiError::shape("inconsistent score lengths"));
            }
            let l1: f64 = s.iter().map(|v| v.abs()).sum();
            if l1 == 0.0 {
                return Err(HsiError::numeric("model produced all-zero attributions"));
            }
            Ok(s.iter().map(|v| v.abs() / l1).collect())
        })
        .collect::<Result<_>>()?;
    let k = normalized.len() as f64;
    let mut mean = vec![0.0f64; c];
    for s in &normalized {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / k;
        }
    }
    let mut std = vec![0.0f64; c];
    for s in &normalized {
        for ((sd, v), m) in std.iter_mut().zip(s).zip(&mean) {
            *sd += (v - m) * (v - m) / k;
        }
    }
    for sd in &mut std {
        *sd = sd.sqrt();
    }
    Ok(AttributionReport {
        mean,
        std,
        wavelengths_nm: wavelengths_nm.to_vec(),
        model_ids: passing,
    })
}

/// The k channels with the highest aggregated importance; ties break
/// toward the lower band index.
pub fn select_top_k(report: &AttributionReport, k: usize) -> Result<ChannelSubset> {
    if k == 0 {
        return Err(HsiError::invalid("subset size must be positive"));
    }
    if k > report.mean.len() {
        return Err(HsiError::invalid(format!(
            "subset size {k} exceeds channel count {}",
            report.mean.len()
        )));
    }
    let mut order: Vec<usize> = (0..report.mean.len()).collect();
    order.sort_by(|&a, &b| {
        report.mean[b]
            .partial_cmp(&report.mean[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(ChannelSubset { indices: order })
}

impl ChannelSubset {
    /// One band index per line, in importance order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body: String = self
            .indices
            .iter()
            .map(|i| format!("{i}\n"))
            .collect();
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let indices: Vec<usize> = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse()
                    .map_err(|_| HsiError::format(format!("bad channel index line: {l:?}")))
            })
            .collect::<Result<_>>()?;
        if indices.is_empty() {
            return Err(HsiError::format("empty channel subset file"));
        }
        let mut seen = std::collections::HashSet::new();
        if !indices.iter().all(|i| seen.insert(*i)) {
            return Err(HsiError::format("duplicate channel indices in subset"));
        }
        Ok(ChannelSubset { indices })
    }
}

impl AttributionReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("channel\twavelength_nm\tmean_importance\tstd\n");
        for i in 0..self.mean.len() {
            out.push_str(&format!(
                "{}\t{:.2}\t{:.6e}\t{:.6e}\n",
                i, self.wavelengths_nm[i], self.mean[i], self.std[i]
            ));
        }
        out
    }

    /// Bar chart of per-channel importance with a whisker at one
    /// standard deviation, written as a PNG.
    pub fn save_bar_chart(&self, path: &Path) -> Result<()> {
        let c = self.mean.len();
        let bar_w = 6u32;
        let margin = 10u32;
        let height = 240u32;
        let width = margin * 2 + bar_w * c as u32;
        let peak = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s)
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
        let base = height - margin;
        let scale = (height - 2 * margin) as f64 / peak;
        for i in 0..c {
            let x0 = margin + i as u32 * bar_w;
            let bar_h = (self.mean[i] * scale).round() as u32;
            for x in x0..x0 + bar_w - 1 {
                for y in base.saturating_sub(bar_h)..base {
                    img.put_pixel(x, y, image::Rgb([60, 60, 200]));
                }
            }
            // spread whisker in red at mean + std
            let wy = base.saturating_sub(((self.mean[i] + self.std[i]) * scale).round() as u32);
            for x in x0..x0 + bar_w - 1 {
                img.put_pixel(x, wy.max(1), image::Rgb([200, 40, 40]));
            }
        }
        img.save(path)
            .map_err(|e| HsiError::format(format!("bar chart write failed: {e}")))?;
        Ok(())
    }
}

/// Rebuild the dataset with only the selected channels and train a
/// direct (no-compression) CNN on it. Returns the trained network and
/// its test metrics.
pub fn retrain_on_subset(
    train: &[LabeledExample],
    test: &[LabeledExample],
    subset: &ChannelSubset,
    cfg: &TrainConfig,
) -> Result<(Network, Metrics)> {
    let tr = dataset::subset_channels(train, &subset.indices)?;
    let te = dataset::subset_channels(test, &subset.indices)?;
    let (h, w, _) = tr[0].patch.data.dim();
    let spec = NetworkSpec::cnn_direct((h, w, subset.indices.len()), 2);
    let x = dataset::examples_to_tensor(&tr);
    let y = dataset::labels_of(&tr);
    let weights = class_weights(&y);
    let cfg = TrainConfig {
        class_weights: weights,
        ..cfg.clone()
    };
    let (net, _) = nn::train(&spec, &x, &y, &cfg)?;
    let metrics = evaluate_examples(&net, &te)?;
    Ok((net, metrics))
}

/// Inverse-frequency loss weights, normalized to mean 1.
pub fn class_weights(labels: &[usize]) -> Vec<f64> {
    let mut counts = [0usize; 2];
    for &y in labels {
        if y < 2 {
            counts[y] += 1;
        }
    }
    let n = labels.len() as f64;
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (2.0 * c as f64) })
        .collect();
    raw
}

/// Test metrics of a trained network over a labeled example set.
pub fn evaluate_examples(net: &Network, examples: &[LabeledExample]) -> Result<Metrics> {
    let x = dataset::examples_to_tensor(examples);
    let probs = net.forward(&x, Mode::Eval)?;
    let preds = Network::argmax(&probs);
    evaluate(&preds, &dataset::labels_of(examples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use ndarray::Array4;
    use rand::Rng;

    fn random_tensor(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Array4::zeros(shape);
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    fn linear_net(c: usize) -> Network {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    in_features: c,
                    out_features: 2,
                },
                LayerSpec::Softmax,
            ],
            input_shape: (4, 4, c),
        };
        Network::init(&spec, 3).unwrap()
    }

    #[test]
    fn zero_baseline_difference_gives_exactly_zero_attribution() {
        let net = linear_net(5);
        let x = random_tensor((1, 4, 4, 5), 1);
        let baselines = x.clone();
        let scores = expected_gradients(&net, &x, &baselines, 16, 0).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn linear_model_attribution_matches_analytic_formula() {
        let c = 5;
        let net = linear_net(c);
        let x = random_tensor((1, 4, 4, c), 2);
        let baselines = Tensor::zeros((1, 4, 4, c));
        let scores = expected_gradients(&net, &x, &baselines, 8, 7).unwrap();
        // logit_t = sum_k w[t][k] * mean_spatial(x_k); gradient is
        // w[t][k] / (h*w) everywhere, independent of the interpolation
        // point, so attribution_k = w[t][k] * mean_spatial(x_k)
        let probs = net.forward(&x, Mode::Eval).unwrap();
        let target = Network::argmax(&probs)[0];
        let crate::nn::Layer::Dense { w, .. } = &net.layers[1] else {
            panic!("expected dense layer");
        };
        for k in 0..c {
            let mean_k: f64 = (0..4)
                .flat_map(|r| (0..4).map(move |cc| (r, cc)))
                .map(|(r, cc)| x[[0, r, cc, k]])
                .sum::<f64>()
                / 16.0;
            let expected = w[target * c + k] * mean_k;
            assert!(
                (scores[k] - expected).abs() < 1e-9,
                "channel {k}: got {}, expected {expected}",
                scores[k]
            );
        }
    }

    #[test]
    fn attribution_is_deterministic_in_seed() {
        let net = linear_net(4);
        let x = random_tensor((2, 4, 4, 4), 3);
        let baselines = random_tensor((3, 4, 4, 4), 4);
        let a = channel_scores(&net, &x, &baselines, 8, 9).unwrap();
        let b = channel_scores(&net, &x, &baselines, 8, 9).unwrap();
        assert_eq!(a, b);
        let c = channel_scores(&net, &x, &baselines, 8, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn aggregation_filters_normalizes_and_spreads() {
        let wl = vec![400.0, 500.0, 600.0];
        // single passing model: std is zero
        let rep = aggregate_importance(&[vec![2.0, 1.0, 1.0]], &[0.9], &wl, 0.8).unwrap();
        assert_eq!(rep.model_ids, vec![0]);
        assert!((rep.mean[0] - 0.5).abs() < 1e-12);
        assert!(rep.std.iter().all(|&s| s == 0.0));

        // identical scores, one filtered out by accuracy
        let rep = aggregate_importance(
            &[vec![2.0, 1.0, 1.0], vec![4.0, 2.0, 2.0], vec![9.0, 0.0, 0.0]],
            &[0.9, 0.85, 0.5],
            &wl,
            0.8,
        )
        .unwrap();
        assert_eq!(rep.model_ids, vec![0, 1]);
        // L1 normalization makes the two passing models identical
        assert!(rep.std.iter().all(|&s| s.abs() < 1e-12));
        assert!((rep.mean[0] - 0.5).abs() < 1e-12);

        assert!(aggregate_importance(&[vec![1.0; 3]], &[0.5], &wl, 0.8).is_err());
    }

    #[test]
    fn aggregation_is_invariant_to_positive_rescaling() {
        let wl = vec![0.0; 4];
        let a = vec![0.4, 0.3, 0.2, 0.1];
        let b: Vec<f64> = a.iter().map(|v| v * 37.5).collect();
        let r1 = aggregate_importance(&[a.clone(), a.clone()], &[0.9, 0.9], &wl, 0.8).unwrap();
        let r2 = aggregate_importance(&[a, b], &[0.9, 0.9], &wl, 0.8).unwrap();
        for (x, y) in r1.mean.iter().zip(&r2.mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_selection_orders_by_importance_then_index() {
        let rep = AttributionReport {
            mean: vec![0.1, 0.4, 0.4, 0.05, 0.05],
            std: vec![0.0; 5],
            wavelengths_nm: vec![0.0; 5],
            model_ids: vec![0],
        };
        let s = select_top_k(&rep, 4).unwrap();
        assert_eq!(s.indices, vec![1, 2, 0, 3]);
        let all = select_top_k(&rep, 5).unwrap();
        assert_eq!(all.indices.len(), 5);
        assert!(select_top_k(&rep, 0).is_err());
        assert!(select_top_k(&rep, 6).is_err());
    }

    #[test]
    fn subset_file_roundtrip_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let s = ChannelSubset {
            indices: vec![9, 2, 55],
        };
        let path = dir.path().join("subset.txt");
        s.save(&path).unwrap();
        assert_eq!(ChannelSubset::load(&path).unwrap(), s);
        std::fs::write(&path, "1\n1\n2\n").unwrap();
        assert!(ChannelSubset::load(&path).is_err());
    }

    #[test]
    fn report_artifacts_write() {
        let dir = tempfile::tempdir().unwrap();
        let rep = AttributionReport {
            mean: vec![0.2, 0.5, 0.3],
            std: vec![0.01, 0.05, 0.02],
            wavelengths_nm: vec![468.0, 600.0, 787.0],
            model_ids: vec![0, 1],
        };
        let tsv = rep.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        let png = dir.path().join("chart.png");
        rep.save_bar_chart(&png).unwrap();
        assert!(png.metadata().unwrap().len() > 0);
    }

    #[test]
    fn class_weights_are_inverse_frequency() {
        let w = class_weights(&[0, 0, 0, 1]);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
        // balanced set: both weights 1
        let w = class_weights(&[0, 1, 0, 1]);
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
    }
}
