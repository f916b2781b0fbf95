//! Train/test dataset assembly for the two-class tile task: label
//! aggregation, deterministic splitting, per-channel standardization,
//! and the on-disk patch container.

use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{CLASS_HEALTHY, CLASS_LGG};
use crate::cube::{AnnotationMask, HsiCube};
use crate::error::{HsiError, Result};
use crate::slic::{self, PaddedPatch, TileLabel, PATCH_SIZE};

/// A filtered tile patch with its aggregated binary label and
/// provenance.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub patch: PaddedPatch,
    /// 0 = healthy, 1 = tumor (lgg).
    pub binary_label: usize,
    pub scene_id: u32,
    pub tile_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Uniform random over tiles, ignoring scene boundaries.
    RandomTile,
    /// Whole scenes held out together (patient-wise proxy).
    ByPatient,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Map a 14-class annotation code onto the binary task. Healthy tissue
/// and its histologically confirmed variant (codes 1 and 13) aggregate
/// to healthy; low-grade glioma and its confirmed variant (codes 6 and
/// 8) aggregate to tumor. Everything else is excluded from training.
pub fn map_binary_label(class: u8) -> Option<usize> {
    match class {
        1 | 13 => Some(CLASS_HEALTHY),
        6 | 8 => Some(CLASS_LGG),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    /// SLIC target pixels per tile.
    pub target_tile_size: usize,
    pub compactness: f64,
    pub max_iters: usize,
    /// Channel indices kept in each patch; empty means all bands.
    pub channels: Vec<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            target_tile_size: 81,
            compactness: 0.1,
            max_iters: 10,
            channels: vec![],
        }
    }
}

/// Segment, label, and filter every scene, then collect the patches of
/// pure tiles whose class participates in the binary task. Scenes are
/// processed in parallel; the output order is by scene then tile id.
pub fn collect_examples(
    scenes: &[(HsiCube, AnnotationMask)],
    cfg: &DatasetConfig,
) -> Result<Vec<LabeledExample>> {
    if scenes.is_empty() {
        return Err(HsiError::invalid("no scenes provided"));
    }
    let per_scene: Vec<Result<Vec<LabeledExample>>> = scenes
        .par_iter()
        .enumerate()
        .map(|(si, (cube, mask))| {
            let channels: Vec<usize> = if cfg.channels.is_empty() {
                (0..cube.bands()).collect()
            } else {
                cfg.channels.clone()
            };
            let mut map =
                slic::slic_segment(cube, cfg.target_tile_size, cfg.compactness, cfg.max_iters)?;
            map.label_tiles(mask)?;
            let filtered = slic::filter_tiles(&map, 50.0, 50.0, 10.0, 90.0)?;
            let mut out = Vec::new();
            for tile in &filtered.tiles {
                let TileLabel::Class(c) = tile.label else {
                    continue;
                };
                let Some(binary) = map_binary_label(c) else {
                    continue;
                };
                if tile.bbox_height() > PATCH_SIZE || tile.bbox_width() > PATCH_SIZE {
                    continue; // oversized tiles cannot be patched
                }
                out.push(LabeledExample {
                    patch: slic::extract_patch(cube, tile, &channels)?,
                    binary_label: binary,
                    scene_id: si as u32,
                    tile_id: tile.id,
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_scene {
        all.extend(r?);
    }
    if all.is_empty() {
        return Err(HsiError::invalid("no usable tiles in any scene"));
    }
    Ok(all)
}

/// Split examples into train/test partitions. Deterministic in the
/// seed; errors if either partition ends up empty or missing a class.
pub fn split_examples(
    examples: Vec<LabeledExample>,
    split: &SplitSpec,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if !(0.0 < split.train_fraction && split.train_fraction < 1.0) {
        return Err(HsiError::invalid(
            "train fraction must be strictly between 0 and 1",
        ));
    }
    let n = examples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    type Indexed = Vec<(usize, LabeledExample)>;
    let (train, test): (Indexed, Indexed) = match split.mode {
        SplitMode::RandomTile => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            // nearest-integer count reproduces published split sizes
            // exactly (e.g. fraction 6620/8671 of 8671 tiles)
            let train_count = (split.train_fraction * n as f64).round() as usize;
            let train_set: std::collections::HashSet<usize> =
                order[..train_count].iter().cloned().collect();
            examples
                .into_iter()
                .enumerate()
                .partition(|(i, _)| train_set.contains(i))
        }
        SplitMode::ByPatient => {
            let mut scene_ids: Vec<u32> = {
                let mut s: Vec<u32> = examples.iter().map(|e| e.scene_id).collect();
                s.sort_unstable();
                s.dedup();
                s
            };
            scene_ids.shuffle(&mut rng);
            let mut train_scenes = std::collections::HashSet::new();
            let mut count = 0usize;
            let target = (split.train_fraction * n as f64).round() as usize;
            for sid in scene_ids {
                if count >= target {
                    break;
                }
                count += examples.iter().filter(|e| e.scene_id == sid).count();
                train_scenes.insert(sid);
            }
            examples
                .into_iter()
                .enumerate()
                .partition(|(_, e)| train_scenes.contains(&e.scene_id))
        }
    };
    let strip = |v: Vec<(usize, LabeledExample)>| -> Vec<LabeledExample> {
        let mut v = v;
        v.sort_by_key(|(i, _)| *i);
        v.into_iter().map(|(_, e)| e).collect()
    };
    let (train, test) = (strip(train), strip(test));
    for (name, part) in [("train", &train), ("test", &test)] {
        if part.is_empty() {
            return Err(HsiError::invalid(format!("{name} partition is empty")));
        }
        for class in [CLASS_HEALTHY, CLASS_LGG] {
            if !part.iter().any(|e| e.binary_label == class) {
                return Err(HsiError::invalid(format!(
                    "{name} partition is missing class {class}"
                )));
            }
        }
    }
    Ok((train, test))
}

pub fn build_dataset(
    scenes: &[(HsiCube, AnnotationMask)],
    cfg: &DatasetConfig,
    split: &SplitSpec,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    split_examples(collect_examples(scenes, cfg)?, split)
}

/// Per-channel affine normalization parameters fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)
            .map_err(|e| HsiError::format(format!("params serialization failed: {e}")))?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read(path)?;
        serde_json::from_slice(&body)
            .map_err(|e| HsiError::format(format!("bad normalization params: {e}")))
    }
}

fn is_padding(patch: &Array3<f32>, r: usize, c: usize) -> bool {
    let channels = patch.dim().2;
    (0..channels).all(|k| patch[[r, c, k]] == 0.0)
}

/// Fit per-channel mean/std on the training set's tile pixels only —
/// the zero padding around each tile is structural, not signal. A
/// constant channel falls back to unit scale instead of dividing by
/// zero.
pub fn fit_normalization(train: &[LabeledExample]) -> Result<NormalizationParams> {
    if train.is_empty() {
        return Err(HsiError::invalid("cannot fit normalization on an empty set"));
    }
    let channels = train[0].patch.data.dim().2;
    let mut sum = vec![0.0f64; channels];
    let mut sum_sq = vec![0.0f64; channels];
    let mut count = 0u64;
    for ex in train {
        let p = &ex.patch.data;
        for r in 0..PATCH_SIZE {
            for c in 0..PATCH_SIZE {
                if is_padding(p, r, c) {
                    continue;
                }
                count += 1;
                for k in 0..channels {
                    let v = p[[r, c, k]] as f64;
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
        }
    }
    if count == 0 {
        return Err(HsiError::invalid("training patches contain no tile pixels"));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq / n - m * m).max(0.0);
            if var == 0.0 {
                log::warn!("constant channel in training set; using unit scale");
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    Ok(NormalizationParams { mean, std })
}

/// Transform tile pixels in place to zero mean and unit variance per
/// channel; padding pixels stay exactly zero.
pub fn apply_normalization(examples: &mut [LabeledExample], params: &NormalizationParams) -> Result<()> {
    for ex in examples.iter_mut() {
        apply_normalization_patch(&mut ex.patch.data, params)?;
    }
    Ok(())
}

pub fn apply_normalization_patch(patch: &mut Array3<f32>, params: &NormalizationParams) -> Result<()> {
    let (h, w, channels) = patch.dim();
    if channels != params.mean.len() || channels != params.std.len() {
        return Err(HsiError::shape("normalization params/channel mismatch"));
    }
    for r in 0..h {
        for c in 0..w {
            if is_padding(patch, r, c) {
                continue;
            }
            for k in 0..channels {
                patch[[r, c, k]] =
                    ((patch[[r, c, k]] as f64 - params.mean[k]) / params.std[k]) as f32;
            }
        }
    }
    Ok(())
}

/// Fit on train, transform both partitions, return the fitted params
/// for persistence.
pub fn standardize(
    train: &mut [LabeledExample],
    test: &mut [LabeledExample],
) -> Result<NormalizationParams> {
    let params = fit_normalization(train)?;
    apply_normalization(train, &params)?;
    apply_normalization(test, &params)?;
    Ok(params)
}

/// Mean spectrum over tile pixels of each patch: the feature vectors
/// consumed by the classical baselines.
pub fn mean_spectrum_features(examples: &[LabeledExample]) -> Vec<Vec<f64>> {
    examples
        .iter()
        .map(|ex| {
            let p = &ex.patch.data;
            let channels = p.dim().2;
            let mut sum = vec![0.0f64; channels];
            let mut count = 0u64;
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    if is_padding(p, r, c) {
                        continue;
                    }
                    count += 1;
                    for k in 0..channels {
                        sum[k] += p[[r, c, k]] as f64;
                    }
                }
            }
            if count > 0 {
                for s in &mut sum {
                    *s /= count as f64;
                }
            }
            sum
        })
        .collect()
}

pub fn labels_of(examples: &[LabeledExample]) -> Vec<usize> {
    examples.iter().map(|e| e.binary_label).collect()
}

// ---------------------------------------------------------------------
// Patch container (HSIP)
// ---------------------------------------------------------------------

/// Write a labeled patch set: magic, version, count, patch dims, then
/// one record per example (scene id, tile id, label, f32 payload).
pub fn save_examples(examples: &[LabeledExample], path: &Path) -> Result<()> {
    if examples.is_empty() {
        return Err(HsiError::invalid("refusing to write an empty patch set"));
    }
    let (h, w, c) = examples[0].patch.data.dim();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"HSIP")?;
    f.write_all(&1u16.to_le_bytes())?;
    f.write_all(&(examples.len() as u32).to_le_bytes())?;
    f.write_all(&(h as u32).to_le_bytes())?;
    f.write_all(&(w as u32).to_le_bytes())?;
    f.write_all(&(c as u32).to_le_bytes())?;
    for ex in examples {
        if ex.patch.data.dim() != (h, w, c) {
            return Err(HsiError::shape("inconsistent patch shapes in set"));
        }
        f.write_all(&ex.scene_id.to_le_bytes())?;
        f.write_all(&ex.patch.tile_id.to_le_bytes())?;
        f.write_all(&[ex.binary_label as u8])?;
        for v in ex.patch.data.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != b"HSIP" {
        return Err(HsiError::format("not a patch container"));
    }
    let mut b2 = [0u8; 2];
    f.read_exact(&mut b2)?;
    if u16::from_le_bytes(b2) != 1 {
        return Err(HsiError::format("unsupported patch container version"));
    }
    let mut b4 = [0u8; 4];
    let mut read_u32 = |f: &mut std::io::BufReader<std::fs::File>| -> Result<u32> {
        f.read_exact(&mut b4)
            .map_err(|_| HsiError::format("patch container truncated"))?;
        Ok(u32::from_le_bytes(b4))
    };
    let count = read_u32(&mut f)? as usize;
    let h = read_u32(&mut f)? as usize;
    let w = read_u32(&mut f)? as usize;
    let c = read_u32(&mut f)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b4 = [0u8; 4];
        f.read_exact(&mut b4)
            .map_err(|_| HsiError::format("patch container truncated"))?;
        let scene_id = u32::from_le_bytes(b4);
        f.read_exact(&mut b4)
            .map_err(|_| HsiError::format("patch container truncated"))?;
        let tile_id = u32::from_le_bytes(b4);
        let mut b1 = [0u8; 1];
        f.read_exact(&mut b1)
            .map_err(|_| HsiError::format("patch container truncated"))?;
        let label = b1[0] as usize;
        if label > 1 {
            return Err(HsiError::format("patch label out of range"));
        }
        let mut payload = vec![0u8; h * w * c * 4];
        f.read_exact(&mut payload)
            .map_err(|_| HsiError::format("patch container truncated"))?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(LabeledExample {
            patch: PaddedPatch {
                data: Array3::from_shape_vec((h, w, c), data)
                    .map_err(|e| HsiError::shape(e.to_string()))?,
                tile_id,
                label: TileLabel::Class(if label == CLASS_LGG { 6 } else { 1 }),
            },
            binary_label: label,
            scene_id,
            tile_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_scene, PhantomConfig};

    fn phantom_examples(seed: u64) -> Vec<LabeledExample> {
        let scene = generate_scene(&PhantomConfig::standard(seed)).unwrap();
        collect_examples(
            &[(scene.cube, scene.mask)],
            &DatasetConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn label_mapping_is_total_on_task_classes_only() {
        assert_eq!(map_binary_label(1), Some(CLASS_HEALTHY));
        assert_eq!(map_binary_label(13), Some(CLASS_HEALTHY));
        assert_eq!(map_binary_label(6), Some(CLASS_LGG));
        assert_eq!(map_binary_label(8), Some(CLASS_LGG));
        for other in [0u8, 2, 3, 4, 5, 7, 9, 10, 11, 12] {
            assert_eq!(map_binary_label(other), None);
        }
    }

    #[test]
    fn phantom_scene_yields_both_classes() {
        let examples = phantom_examples(42);
        assert!(examples.iter().any(|e| e.binary_label == CLASS_HEALTHY));
        assert!(examples.iter().any(|e| e.binary_label == CLASS_LGG));
        for ex in &examples {
            assert_eq!(ex.patch.data.dim(), (PATCH_SIZE, PATCH_SIZE, 104));
        }
    }

    #[test]
    fn split_is_deterministic_disjoint_and_exhaustive() {
        let examples = phantom_examples(1);
        let n = examples.len();
        let split = SplitSpec {
            mode: SplitMode::RandomTile,
            train_fraction: 0.763,
            seed: 5,
        };
        let (tr1, te1) = split_examples(examples.clone(), &split).unwrap();
        let (tr2, te2) = split_examples(examples, &split).unwrap();
        assert_eq!(tr1.len() + te1.len(), n);
        assert_eq!(tr1.len(), (0.763 * n as f64).round() as usize);
        let ids = |v: &[LabeledExample]| -> Vec<(u32, u32)> {
            v.iter().map(|e| (e.scene_id, e.tile_id)).collect()
        };
        assert_eq!(ids(&tr1), ids(&tr2));
        assert_eq!(ids(&te1), ids(&te2));
        let train_ids: std::collections::HashSet<_> = ids(&tr1).into_iter().collect();
        assert!(ids(&te1).iter().all(|id| !train_ids.contains(id)));
    }

    #[test]
    fn published_split_proportion_reproduces_published_sizes() {
        // fraction 6620/8671 of 8671 tiles splits exactly 6620/2051
        let frac: f64 = 6620.0 / 8671.0;
        let train = (frac * 8671.0).round() as usize;
        assert_eq!(train, 6620);
        assert_eq!(8671 - train, 2051);
    }

    #[test]
    fn degenerate_fractions_are_rejected() {
        let examples = phantom_examples(2);
        for frac in [0.0, 1.0, 1.5] {
            let split = SplitSpec {
                mode: SplitMode::RandomTile,
                train_fraction: frac,
                seed: 0,
            };
            assert!(split_examples(examples.clone(), &split).is_err());
        }
    }

    #[test]
    fn by_patient_split_keeps_scenes_whole() {
        let s1 = generate_scene(&PhantomConfig::standard(3)).unwrap();
        let s2 = generate_scene(&PhantomConfig::standard(4)).unwrap();
        let s3 = generate_scene(&PhantomConfig::standard(5)).unwrap();
        let examples = collect_examples(
            &[(s1.cube, s1.mask), (s2.cube, s2.mask), (s3.cube, s3.mask)],
            &DatasetConfig::default(),
        )
        .unwrap();
        let split = SplitSpec {
            mode: SplitMode::ByPatient,
            train_fraction: 0.66,
            seed: 1,
        };
        let (train, test) = split_examples(examples, &split).unwrap();
        let train_scenes: std::collections::HashSet<u32> =
            train.iter().map(|e| e.scene_id).collect();
        assert!(test.iter().all(|e| !train_scenes.contains(&e.scene_id)));
    }

    #[test]
    fn standardization_centers_tile_pixels_and_preserves_padding() {
        let examples = phantom_examples(6);
        let split = SplitSpec {
            mode: SplitMode::RandomTile,
            train_fraction: 0.7,
            seed: 2,
        };
        let (mut train, mut test) = split_examples(examples, &split).unwrap();
        let params = standardize(&mut train, &mut test).unwrap();
        assert_eq!(params.mean.len(), 104);

        // post-transform tile-pixel mean per channel is ~0, std ~1
        let channels = 104;
        let mut sum = vec![0.0f64; channels];
        let mut sum_sq = vec![0.0f64; channels];
        let mut count = 0u64;
        let mut padding_seen = false;
        for ex in &train {
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    if is_padding(&ex.patch.data, r, c) {
                        padding_seen = true;
                        continue;
                    }
                    count += 1;
                    for k in 0..channels {
                        let v = ex.patch.data[[r, c, k]] as f64;
                        sum[k] += v;
                        sum_sq[k] += v * v;
                    }
                }
            }
        }
        assert!(padding_seen);
        let n = count as f64;
        for k in (0..channels).step_by(13) {
            let mean = sum[k] / n;
            let var = sum_sq[k] / n - mean * mean;
            // f32 storage limits how exactly the moments come back
            assert!(mean.abs() < 1e-4, "channel {k} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {k} var {var}");
        }
    }

    #[test]
    fn standardization_is_not_idempotent() {
        let examples = phantom_examples(7);
        let split = SplitSpec {
            mode: SplitMode::RandomTile,
            train_fraction: 0.7,
            seed: 3,
        };
        let (mut train, mut test) = split_examples(examples, &split).unwrap();
        let params = standardize(&mut train, &mut test).unwrap();
        let once = train[0].patch.data.clone();
        apply_normalization(&mut train, &params).unwrap();
        assert_ne!(once, train[0].patch.data);
    }

    #[test]
    fn constant_channel_falls_back_to_unit_scale() {
        let examples = phantom_examples(8);
        let split = SplitSpec {
            mode: SplitMode::RandomTile,
            train_fraction: 0.7,
            seed: 4,
        };
        let (mut train, _) = split_examples(examples, &split).unwrap();
        // force channel 0 constant over tile pixels
        for ex in &mut train {
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    if !is_padding(&ex.patch.data, r, c) {
                        ex.patch.data[[r, c, 0]] = 0.5;
                    }
                }
            }
        }
        let params = fit_normalization(&train).unwrap();
        assert_eq!(params.std[0], 1.0);
        apply_normalization(&mut train, &params).unwrap();
        assert!(train[0].patch.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn patch_container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let examples = phantom_examples(9);
        let path = dir.path().join("set.hsip");
        save_examples(&examples[..8.min(examples.len())], &path).unwrap();
        let loaded = load_examples(&path).unwrap();
        assert_eq!(loaded.len(), 8.min(examples.len()));
        for (a, b) in examples.iter().zip(&loaded) {
            assert_eq!(a.binary_label, b.binary_label);
            assert_eq!(a.tile_id, b.tile_id);
            assert_eq!(a.scene_id, b.scene_id);
            assert_eq!(a.patch.data, b.patch.data);
        }
        // truncated file rejected
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.hsip");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_examples(&cut).is_err());
    }
}

/// Stack example patches into a network input batch (f64).
pub fn examples_to_tensor(examples: &[LabeledExample]) -> crate::nn::Tensor {
    let (h, w, c) = examples
        .first()
        .map(|e| e.patch.data.dim())
        .unwrap_or((PATCH_SIZE, PATCH_SIZE, 0));
    let mut x = crate::nn::Tensor::zeros((examples.len(), h, w, c));
    for (i, ex) in examples.iter().enumerate() {
        for r in 0..h {
            for col in 0..w {
                for k in 0..c {
                    x[[i, r, col, k]] = ex.patch.data[[r, col, k]] as f64;
                }
            }
        }
    }
    x
}

/// Keep only the given channel indices of every patch, in the given
/// order.
pub fn subset_channels(examples: &[LabeledExample], indices: &[usize]) -> Result<Vec<LabeledExample>> {
    if indices.is_empty() {
        return Err(HsiError::invalid("empty channel subset"));
    }
    let c = examples
        .first()
        .map(|e| e.patch.data.dim().2)
        .unwrap_or(0);
    if indices.iter().any(|&i| i >= c) {
        return Err(HsiError::invalid("channel subset index out of range"));
    }
    Ok(examples
        .iter()
        .map(|ex| {
            let (h, w, _) = ex.patch.data.dim();
            let mut data = Array3::<f32>::zeros((h, w, indices.len()));
            for r in 0..h {
                for col in 0..w {
                    for (j, &k) in indices.iter().enumerate() {
                        data[[r, col, j]] = ex.patch.data[[r, col, k]];
                    }
                }
            }
            LabeledExample {
                patch: PaddedPatch {
                    data,
                    tile_id: ex.patch.tile_id,
                    label: ex.patch.label,
                },
                binary_label: ex.binary_label,
                scene_id: ex.scene_id,
                tile_id: ex.tile_id,
            }
        })
        .collect())
}
