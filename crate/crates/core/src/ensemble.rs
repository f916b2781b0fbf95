//! Deep-ensemble inference: K identically specified networks trained
//! from distinct initializations, probability averaging, and
//! confidence thresholding that defers low-score inputs to "unknown".

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::{evaluate, CLASS_LGG};
use crate::error::{HsiError, Result};
use crate::nn::{self, Mode, Network, NetworkSpec, Tensor, TrainConfig};

pub const DEFAULT_MEMBERS: usize = 10;

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<Network>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionLabel {
    Healthy,
    Lgg,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct ThresholdedPrediction {
    pub label: PredictionLabel,
    pub mean_probs: Vec<f64>,
    pub member_probs: Vec<Vec<f64>>,
}

/// One row of a coverage report at a given threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub tau: f64,
    pub unknown_fraction: f64,
    /// Accuracy over the tiles that were not deferred; NaN when every
    /// tile was deferred.
    pub confident_accuracy: f64,
}

/// Train K members that differ only in their initialization seed; the
/// data order stream is shared. Member seeds derive deterministically
/// from the master seed, so the whole ensemble is reproducible.
pub fn train_ensemble(
    spec: &NetworkSpec,
    x: &Tensor,
    labels: &[usize],
    base_cfg: &TrainConfig,
    k: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    if k < 2 {
        return Err(HsiError::invalid("an ensemble needs at least 2 members"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(master_seed);
    let init_seeds: Vec<u64> = (0..k).map(|_| master.gen()).collect();
    let mut members = Vec::with_capacity(k);
    for (i, &init_seed) in init_seeds.iter().enumerate() {
        let cfg = TrainConfig {
            init_seed,
            ..base_cfg.clone()
        };
        let (net, _) = nn::train(spec, x, labels, &cfg).map_err(|e| HsiError::Stage {
            stage: format!("ensemble member {i}"),
            cause: e.to_string(),
        })?;
        members.push(net);
    }
    Ok(Ensemble { members })
}

impl Ensemble {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Mean member probabilities per example.
    pub fn mean_probabilities(&self, x: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
        // returns per-example (member_probs) including each member row;
        // outer: examples, middle: members, inner: classes
        let n = x.dim().0;
        let mut per_member: Vec<Tensor> = Vec::with_capacity(self.members.len());
        for m in &self.members {
            per_member.push(m.forward(x, Mode::Eval)?);
        }
        let classes = per_member[0].dim().3;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let rows: Vec<Vec<f64>> = per_member
                .iter()
                .map(|p| (0..classes).map(|c| p[[i, 0, 0, c]]).collect())
                .collect();
            out.push(rows);
        }
        Ok(out)
    }

    /// Average member probabilities and defer to `unknown` when the
    /// winning class's mean probability falls below `tau`.
    pub fn predict_thresholded(&self, x: &Tensor, tau: f64) -> Result<Vec<ThresholdedPrediction>> {
        if !(tau > 0.5 && tau <= 1.0) {
            return Err(HsiError::invalid("threshold must lie in (0.5, 1]"));
        }
        let all = self.mean_probabilities(x)?;
        let k = self.members.len() as f64;
        Ok(all
            .into_iter()
            .map(|member_probs| {
                let classes = member_probs[0].len();
                let mean: Vec<f64> = (0..classes)
                    .map(|c| member_probs.iter().map(|r| r[c]).sum::<f64>() / k)
                    .collect();
                let (argmax, &max) = mean
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                let label = if max >= tau {
                    if argmax == CLASS_LGG {
                        PredictionLabel::Lgg
                    } else {
                        PredictionLabel::Healthy
                    }
                } else {
                    PredictionLabel::Unknown
                };
                ThresholdedPrediction {
                    label,
                    mean_probs: mean,
                    member_probs,
                }
            })
            .collect())
    }

    /// For each threshold: the deferred fraction and the accuracy over
    /// the confidently labeled examples.
    pub fn coverage_report(
        &self,
        x: &Tensor,
        labels: &[usize],
        taus: &[f64],
    ) -> Result<Vec<CoveragePoint>> {
        if labels.is_empty() {
            return Err(HsiError::invalid("empty example set"));
        }
        let mut out = Vec::with_capacity(taus.len());
        for &tau in taus {
            let preds = self.predict_thresholded(x, tau)?;
            let unknown = preds
                .iter()
                .filter(|p| p.label == PredictionLabel::Unknown)
                .count();
            let confident: Vec<(usize, usize)> = preds
                .iter()
                .zip(labels)
                .filter(|(p, _)| p.label != PredictionLabel::Unknown)
                .map(|(p, &y)| {
                    let cls = if p.label == PredictionLabel::Lgg { CLASS_LGG } else { 0 };
                    (cls, y)
                })
                .collect();
            let confident_accuracy = if confident.is_empty() {
                f64::NAN
            } else {
                let (ps, ys): (Vec<usize>, Vec<usize>) = confident.into_iter().unzip();
                evaluate(&ps, &ys)?.accuracy
            };
            out.push(CoveragePoint {
                tau,
                unknown_fraction: unknown as f64 / labels.len() as f64,
                confident_accuracy,
            });
        }
        Ok(out)
    }

    /// Write one network container per member plus a manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, m) in self.members.iter().enumerate() {
            let name = format!("member-{i:02}.hsin");
            m.save(&dir.join(&name))?;
            files.push(name);
        }
        let manifest = serde_json::json!({ "members": files });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)
                .map_err(|e| HsiError::format(e.to_string()))?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let body = std::fs::read(dir.join("manifest.json"))?;
        let manifest: serde_json::Value = serde_json::from_slice(&body)
            .map_err(|e| HsiError::format(format!("bad ensemble manifest: {e}")))?;
        let files = manifest["members"]
            .as_array()
            .ok_or_else(|| HsiError::format("manifest missing member list"))?;
        let mut members = Vec::with_capacity(files.len());
        for f in files {
            let name = f
                .as_str()
                .ok_or_else(|| HsiError::format("non-string member entry"))?;
            members.push(Network::load(&dir.join(name))?);
        }
        if members.len() < 2 {
            return Err(HsiError::format("ensemble has fewer than 2 members"));
        }
        let spec = &members[0].spec;
        if members.iter().any(|m| &m.spec != spec) {
            return Err(HsiError::format("ensemble members disagree on architecture"));
        }
        Ok(Ensemble { members })
    }
}

pub fn coverage_tsv(points: &[CoveragePoint]) -> String {
    let mut out = String::from("tau\tunknown_fraction\tconfident_accuracy\n");
    for p in points {
        out.push_str(&format!(
            "{:.3}\t{:.6}\t{:.6}\n",
            p.tau, p.unknown_fraction, p.confident_accuracy
        ));
    }
    out
}
