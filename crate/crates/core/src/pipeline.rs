//! Full-image inference, overlay rendering, and staged pipeline runs.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::attribution;
use crate::classical::{self, CLASS_HEALTHY, CLASS_LGG};
use crate::cube::{AnnotationMask, HsiCube};
use crate::dataset::{
    self, DatasetConfig, LabeledExample, NormalizationParams, SplitMode, SplitSpec,
};
use crate::ensemble::{coverage_tsv, Ensemble, PredictionLabel};
use crate::error::{HsiError, Result};
use crate::nn::{self, Mode, Network, NetworkSpec, TrainConfig};
use crate::phantom::{self, PhantomConfig};
use crate::slic::{self, PaddedPatch, PATCH_SIZE};

/// Per-pixel outcome of full-image inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapLabel {
    Healthy,
    Lgg,
    Unknown,
    /// Background, invalid, or oversize-tile pixels.
    NoPrediction,
}

#[derive(Debug, Clone)]
pub struct PredictionMap {
    pub labels: Array2<MapLabel>,
    /// (tile id, mean probability vector) for every classified tile.
    pub tile_probs: Vec<(u32, Vec<f64>)>,
    /// Fraction of annotated two-class pixels labeled with the correct
    /// class (unknown counts as incorrect); None without a mask.
    pub accuracy: Option<f64>,
    /// Tiles skipped because their bounding box exceeded the patch size.
    pub oversize_tiles: usize,
}

/// The model applied per tile during full-image inference.
pub enum TileClassifier {
    Single(Network),
    /// Ensemble with its deferral threshold.
    Thresholded(Ensemble, f64),
}

impl TileClassifier {
    fn input_channels(&self) -> usize {
        let spec = match self {
            TileClassifier::Single(n) => &n.spec,
            TileClassifier::Thresholded(e, _) => &e.members[0].spec,
        };
        spec.input_shape.2
    }
}

/// Re-segment the cube (without any quality filtration — every tile
/// participates), classify each tile, and paint tile-constant labels.
pub fn infer_full_image(
    classifier: &TileClassifier,
    cube: &HsiCube,
    mask: Option<&AnnotationMask>,
    norm: &NormalizationParams,
    ds_cfg: &DatasetConfig,
) -> Result<PredictionMap> {
    let channels: Vec<usize> = if ds_cfg.channels.is_empty() {
        (0..cube.bands()).collect()
    } else {
        ds_cfg.channels.clone()
    };
    if channels.len() != classifier.input_channels() {
        return Err(HsiError::shape(format!(
            "model expects {} input channels, cube provides {}",
            classifier.input_channels(),
            channels.len()
        )));
    }
    let map = slic::slic_segment(cube, ds_cfg.target_tile_size, ds_cfg.compactness, ds_cfg.max_iters)?;

    let mut patches: Vec<PaddedPatch> = Vec::new();
    let mut patch_tiles: Vec<u32> = Vec::new();
    let mut oversize = 0usize;
    for tile in &map.tiles {
        if tile.bbox_height() > PATCH_SIZE || tile.bbox_width() > PATCH_SIZE {
            oversize += 1;
            continue;
        }
        let mut patch = slic::extract_patch(cube, tile, &channels)?;
        dataset::apply_normalization_patch(&mut patch.data, norm)?;
        patch_tiles.push(tile.id);
        patches.push(patch);
    }
    if patches.is_empty() {
        return Err(HsiError::invalid("no classifiable tiles in cube"));
    }
    if oversize > 0 {
        log::info!("{oversize} oversize tiles left without prediction");
    }

    let examples: Vec<LabeledExample> = patches
        .into_iter()
        .zip(&patch_tiles)
        .map(|(patch, &tid)| LabeledExample {
            patch,
            binary_label: 0,
            scene_id: 0,
            tile_id: tid,
        })
        .collect();
    let x = dataset::examples_to_tensor(&examples);
    let (labels, tile_probs): (Vec<MapLabel>, Vec<Vec<f64>>) = match classifier {
        TileClassifier::Single(net) => {
            let probs = net.forward(&x, Mode::Eval)?;
            let preds = Network::argmax(&probs);
            let classes = probs.dim().3;
            preds
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let row: Vec<f64> = (0..classes).map(|c| probs[[i, 0, 0, c]]).collect();
                    let l = if p == CLASS_LGG { MapLabel::Lgg } else { MapLabel::Healthy };
                    (l, row)
                })
                .unzip()
        }
        TileClassifier::Thresholded(ens, tau) => ens
            .predict_thresholded(&x, *tau)?
            .into_iter()
            .map(|p| {
                let l = match p.label {
                    PredictionLabel::Healthy => MapLabel::Healthy,
                    PredictionLabel::Lgg => MapLabel::Lgg,
                    PredictionLabel::Unknown => MapLabel::Unknown,
                };
                (l, p.mean_probs)
            })
            .unzip(),
    };

    let mut out = Array2::from_elem((cube.height(), cube.width()), MapLabel::NoPrediction);
    let mut label_of_tile: std::collections::HashMap<u32, MapLabel> = std::collections::HashMap::new();
    for (tid, l) in patch_tiles.iter().zip(&labels) {
        label_of_tile.insert(*tid, *l);
    }
    for tile in &map.tiles {
        if let Some(&l) = label_of_tile.get(&tile.id) {
            for &(r, c) in &tile.pixels {
                out[[r as usize, c as usize]] = l;
            }
        }
    }

    let accuracy = mask.map(|m| map_accuracy(&out, m));
    Ok(PredictionMap {
        labels: out,
        tile_probs: patch_tiles
            .into_iter()
            .zip(tile_probs)
            .collect(),
        accuracy,
        oversize_tiles: oversize,
    })
}

/// Recount accuracy from a prediction map and an annotation mask over
/// pixels annotated as one of the two focus classes.
pub fn map_accuracy(labels: &Array2<MapLabel>, mask: &AnnotationMask) -> f64 {
    let mut total = 0u64;
    let mut correct = 0u64;
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            let Some(truth) = dataset::map_binary_label(mask.label(r, c)) else {
                continue;
            };
            total += 1;
            let predicted = match labels[[r, c]] {
                MapLabel::Healthy => Some(CLASS_HEALTHY),
                MapLabel::Lgg => Some(CLASS_LGG),
                _ => None,
            };
            if predicted == Some(truth) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        correct as f64 / total as f64
    }
}

/// Grayscale base from one wavelength, min-max stretched over valid
/// pixels, with 50% alpha label tints: healthy red, tumor blue,
/// unknown orange.
pub fn render_overlay(
    map: &PredictionMap,
    cube: &HsiCube,
    band_nm: f64,
    path: &Path,
) -> Result<()> {
    let band = cube.axis().band_index(band_nm)?;
    let (h, w) = (cube.height(), cube.width());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in 0..h {
        for c in 0..w {
            if cube.is_valid(r, c) {
                let v = cube.data()[[r, c, band]] as f64;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let gray = if cube.is_valid(r, c) {
                (((cube.data()[[r, c, band]] as f64 - lo) / span) * 255.0).round() as u8
            } else {
                0
            };
            let tint: Option<[u8; 3]> = match map.labels[[r, c]] {
                MapLabel::Healthy => Some([255, 0, 0]),
                MapLabel::Lgg => Some([0, 0, 255]),
                MapLabel::Unknown => Some([255, 165, 0]),
                MapLabel::NoPrediction => None,
            };
            let px = match tint {
                Some(t) => [
                    ((gray as u16 + t[0] as u16) / 2) as u8,
                    ((gray as u16 + t[1] as u16) / 2) as u8,
                    ((gray as u16 + t[2] as u16) / 2) as u8,
                ],
                None => [gray, gray, gray],
            };
            img.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    img.save(path)
        .map_err(|e| HsiError::format(format!("overlay write failed: {e}")))?;
    Ok(())
}

/// Write a prediction map as a small binary raster (one label byte per
/// pixel) so render and analysis can run as separate commands.
pub fn save_map(map: &PredictionMap, path: &Path) -> Result<()> {
    use std::io::Write;
    let (h, w) = map.labels.dim();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"HSIM")?;
    f.write_all(&1u16.to_le_bytes())?;
    f.write_all(&(h as u32).to_le_bytes())?;
    f.write_all(&(w as u32).to_le_bytes())?;
    for l in map.labels.iter() {
        f.write_all(&[match l {
            MapLabel::Healthy => 0u8,
            MapLabel::Lgg => 1,
            MapLabel::Unknown => 2,
            MapLabel::NoPrediction => 3,
        }])?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<PredictionMap> {
    use std::io::Read;
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != b"HSIM" {
        return Err(HsiError::format("not a prediction map file"));
    }
    let mut b2 = [0u8; 2];
    f.read_exact(&mut b2)?;
    if u16::from_le_bytes(b2) != 1 {
        return Err(HsiError::format("unsupported prediction map version"));
    }
    let mut b4 = [0u8; 4];
    f.read_exact(&mut b4)?;
    let h = u32::from_le_bytes(b4) as usize;
    f.read_exact(&mut b4)?;
    let w = u32::from_le_bytes(b4) as usize;
    let mut payload = vec![0u8; h * w];
    f.read_exact(&mut payload)
        .map_err(|_| HsiError::format("prediction map truncated"))?;
    let labels = Array2::from_shape_vec(
        (h, w),
        payload
            .into_iter()
            .map(|b| match b {
                0 => Ok(MapLabel::Healthy),
                1 => Ok(MapLabel::Lgg),
                2 => Ok(MapLabel::Unknown),
                3 => Ok(MapLabel::NoPrediction),
                other => Err(HsiError::format(format!("bad map label byte {other}"))),
            })
            .collect::<Result<Vec<_>>>()?,
    )
    .map_err(|e| HsiError::shape(e.to_string()))?;
    Ok(PredictionMap {
        labels,
        tile_probs: vec![],
        accuracy: None,
        oversize_tiles: 0,
    })
}

// ---------------------------------------------------------------------
// Staged runs
// ---------------------------------------------------------------------

/// Everything needed for a reproducible end-to-end run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Number of phantom scenes to generate.
    pub scenes: usize,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    /// Meta-channel widths for the compressed single models.
    pub meta_channels: Vec<usize>,
    pub ensemble_members: usize,
    pub taus: Vec<f64>,
    pub attribution_samples: usize,
    pub overlay_band_nm: f64,
}

impl PipelineConfig {
    pub fn standard(out_dir: PathBuf, seed: u64) -> Self {
        PipelineConfig {
            out_dir,
            seed,
            scenes: 2,
            dataset: DatasetConfig::default(),
            split: SplitSpec {
                mode: SplitMode::RandomTile,
                train_fraction: 6620.0 / 8671.0,
                seed,
            },
            train: TrainConfig {
                seed,
                init_seed: seed,
                ..TrainConfig::default()
            },
            meta_channels: vec![3, 6, 12],
            ensemble_members: 10,
            taus: vec![0.7, 0.8],
            attribution_samples: 64,
            overlay_band_nm: 660.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(HsiError::config("need at least one scene"));
        }
        if self.meta_channels.is_empty() {
            return Err(HsiError::config("need at least one meta-channel width"));
        }
        if self.ensemble_members < 2 {
            return Err(HsiError::config("ensemble needs at least 2 members"));
        }
        for &t in &self.taus {
            if !(t > 0.5 && t <= 1.0) {
                return Err(HsiError::config("thresholds must lie in (0.5, 1]"));
            }
        }
        Ok(())
    }

    /// Serialize to the sectioned key=value format.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "[run]\nout_dir = {}\nseed = {}\nscenes = {}\n\n",
            self.out_dir.display(),
            self.seed,
            self.scenes
        ));
        s.push_str(&format!(
            "[slic]\ntarget_tile_size = {}\ncompactness = {}\nmax_iters = {}\n\n",
            self.dataset.target_tile_size, self.dataset.compactness, self.dataset.max_iters
        ));
        s.push_str(&format!(
            "[split]\nmode = {}\ntrain_fraction = {}\nseed = {}\n\n",
            match self.split.mode {
                SplitMode::RandomTile => "random-tile",
                SplitMode::ByPatient => "by-patient",
            },
            self.split.train_fraction,
            self.split.seed
        ));
        s.push_str(&format!(
            "[train]\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\nseed = {}\ninit_seed = {}\n\n",
            self.train.epochs,
            self.train.batch_size,
            self.train.learning_rate,
            self.train.seed,
            self.train.init_seed
        ));
        s.push_str("[models]\n");
        for k in &self.meta_channels {
            s.push_str(&format!("meta_channels = {k}\n"));
        }
        s.push_str(&format!(
            "ensemble_members = {}\nattribution_samples = {}\n",
            self.ensemble_members, self.attribution_samples
        ));
        for t in &self.taus {
            s.push_str(&format!("tau = {t}\n"));
        }
        s.push_str(&format!("overlay_band_nm = {}\n", self.overlay_band_nm));
        s
    }

    pub fn from_config_file(cfg: &crate::configfile::ConfigFile) -> Result<Self> {
        let out_dir: String = cfg.require("run", "out_dir")?;
        let seed: u64 = cfg.require("run", "seed")?;
        let mut p = PipelineConfig::standard(PathBuf::from(out_dir), seed);
        if let Some(v) = cfg.get_parsed("run", "scenes")? {
            p.scenes = v;
        }
        if let Some(v) = cfg.get_parsed("slic", "target_tile_size")? {
            p.dataset.target_tile_size = v;
        }
        if let Some(v) = cfg.get_parsed("slic", "compactness")? {
            p.dataset.compactness = v;
        }
        if let Some(v) = cfg.get_parsed("slic", "max_iters")? {
            p.dataset.max_iters = v;
        }
        if let Some(v) = cfg.get("split", "mode") {
            p.split.mode = match v {
                "random-tile" => SplitMode::RandomTile,
                "by-patient" => SplitMode::ByPatient,
                other => {
                    return Err(HsiError::config(format!("unknown split mode {other:?}")))
                }
            };
        }
        if let Some(v) = cfg.get_parsed("split", "train_fraction")? {
            p.split.train_fraction = v;
        }
        if let Some(v) = cfg.get_parsed("split", "seed")? {
            p.split.seed = v;
        }
        if let Some(v) = cfg.get_parsed("train", "epochs")? {
            p.train.epochs = v;
        }
        if let Some(v) = cfg.get_parsed("train", "batch_size")? {
            p.train.batch_size = v;
        }
        if let Some(v) = cfg.get_parsed("train", "learning_rate")? {
            p.train.learning_rate = v;
        }
        if let Some(v) = cfg.get_parsed("train", "seed")? {
            p.train.seed = v;
        }
        if let Some(v) = cfg.get_parsed("train", "init_seed")? {
            p.train.init_seed = v;
        }
        let widths = cfg.get_all("models", "meta_channels");
        if !widths.is_empty() {
            p.meta_channels = widths
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|_| HsiError::config(format!("bad meta_channels value {v:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = cfg.get_parsed("models", "ensemble_members")? {
            p.ensemble_members = v;
        }
        if let Some(v) = cfg.get_parsed("models", "attribution_samples")? {
            p.attribution_samples = v;
        }
        let taus = cfg.get_all("models", "tau");
        if !taus.is_empty() {
            p.taus = taus
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|_| HsiError::config(format!("bad tau value {v:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = cfg.get_parsed("models", "overlay_band_nm")? {
            p.overlay_band_nm = v;
        }
        p.validate()?;
        Ok(p)
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        s @ HsiError::Stage { .. } => s,
        other => HsiError::Stage {
            stage: name.to_string(),
            cause: other.to_string(),
        },
    })
}

/// Execute the configured stages in order, writing every artifact into
/// the run directory (`configs/`, `models/`, `reports/`, `overlays/`,
/// `logs/`). Returns the run directory path.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let run_dir = cfg.out_dir.clone();
    for sub in ["configs", "models", "reports", "overlays", "logs"] {
        std::fs::create_dir_all(run_dir.join(sub))?;
    }
    std::fs::write(run_dir.join("configs/run.conf"), cfg.to_config_text())?;
    let mut log = String::new();

    // phantom scenes
    let scenes: Vec<_> = stage(
        "phantom",
        (0..cfg.scenes)
            .map(|i| {
                phantom::generate_scene(&PhantomConfig::standard(cfg.seed.wrapping_add(i as u64)))
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    log.push_str(&format!("generated {} phantom scenes\n", scenes.len()));
    let pairs: Vec<(HsiCube, AnnotationMask)> = scenes
        .into_iter()
        .map(|s| (s.cube, s.mask))
        .collect();

    // dataset
    let (mut train, mut test) = stage(
        "dataset",
        dataset::build_dataset(&pairs, &cfg.dataset, &cfg.split),
    )?;
    let norm = stage("dataset", dataset::standardize(&mut train, &mut test))?;
    norm.save(&run_dir.join("models/normalization.json"))?;
    dataset::save_examples(&train, &run_dir.join("models/train.hsip"))?;
    dataset::save_examples(&test, &run_dir.join("models/test.hsip"))?;
    log.push_str(&format!(
        "dataset: {} train / {} test tiles\n",
        train.len(),
        test.len()
    ));

    let x_train = dataset::examples_to_tensor(&train);
    let y_train = dataset::labels_of(&train);
    let weights = attribution::class_weights(&y_train);
    let bands = train[0].patch.data.dim().2;

    // compressed single models
    let mut metrics_report = String::from("model\taccuracy\tprecision\trecall\n");
    for &k in &cfg.meta_channels {
        let spec = NetworkSpec::cnn((PATCH_SIZE, PATCH_SIZE, bands), k, 2);
        let tc = TrainConfig {
            class_weights: weights.clone(),
            ..cfg.train.clone()
        };
        let (net, _) = stage(&format!("train k={k}"), nn::train(&spec, &x_train, &y_train, &tc))?;
        let m = stage(&format!("train k={k}"), attribution::evaluate_examples(&net, &test))?;
        net.save(&run_dir.join(format!("models/cnn-{k}.hsin")))?;
        metrics_report.push_str(&format!(
            "cnn-{k}\t{:.4}\t{:.4}\t{:.4}\n",
            m.accuracy, m.precision, m.recall
        ));
    }

    // classical baselines on mean spectra
    let feats_train = dataset::mean_spectrum_features(&train);
    let feats_test = dataset::mean_spectrum_features(&test);
    let y_test = dataset::labels_of(&test);
    let forest = stage(
        "train-classical",
        classical::rf_train(&feats_train, &y_train, 100, 2, cfg.seed),
    )?;
    let rf_preds: Vec<usize> = stage(
        "train-classical",
        forest
            .predict_batch(&feats_test)
            .map(|v| v.into_iter().map(|(l, _)| l).collect()),
    )?;
    let rf_m = stage("train-classical", classical::evaluate(&rf_preds, &y_test))?;
    forest.save(&run_dir.join("models/forest.hsif"))?;
    metrics_report.push_str(&format!(
        "rf\t{:.4}\t{:.4}\t{:.4}\n",
        rf_m.accuracy, rf_m.precision, rf_m.recall
    ));
    let mlp_cfg = TrainConfig {
        class_weights: weights.clone(),
        ..cfg.train.clone()
    };
    let (mlp, _) = stage(
        "train-classical",
        classical::mlp_train(&feats_train, &y_train, 64, &mlp_cfg),
    )?;
    let mlp_preds: Vec<usize> = stage(
        "train-classical",
        classical::mlp_predict(&mlp, &feats_test)
            .map(|v| v.into_iter().map(|(l, _)| l).collect()),
    )?;
    let mlp_m = stage("train-classical", classical::evaluate(&mlp_preds, &y_test))?;
    mlp.save(&run_dir.join("models/mlp.hsin"))?;
    metrics_report.push_str(&format!(
        "mlp\t{:.4}\t{:.4}\t{:.4}\n",
        mlp_m.accuracy, mlp_m.precision, mlp_m.recall
    ));

    // ensemble on the widest compressed model
    let widest = *cfg.meta_channels.iter().max().unwrap();
    let spec = NetworkSpec::cnn((PATCH_SIZE, PATCH_SIZE, bands), widest, 2);
    let tc = TrainConfig {
        class_weights: weights.clone(),
        ..cfg.train.clone()
    };
    let ens = stage(
        "ensemble",
        crate::ensemble::train_ensemble(
            &spec,
            &x_train,
            &y_train,
            &tc,
            cfg.ensemble_members,
            cfg.seed,
        ),
    )?;
    ens.save(&run_dir.join("models/ensemble"))?;
    let x_test = dataset::examples_to_tensor(&test);
    let coverage = stage("ensemble", ens.coverage_report(&x_test, &y_test, &cfg.taus))?;
    std::fs::write(run_dir.join("reports/coverage.tsv"), coverage_tsv(&coverage))?;

    // attribution over ensemble members
    let baselines = stage(
        "attribute",
        attribution::attribution_baselines(&train, 32, cfg.seed),
    )?;
    let mut per_model = Vec::new();
    let mut accs = Vec::new();
    for (i, member) in ens.members.iter().enumerate() {
        let scores = stage(
            "attribute",
            attribution::channel_scores(
                member,
                &x_test,
                &baselines,
                cfg.attribution_samples,
                cfg.seed.wrapping_add(i as u64),
            ),
        )?;
        let m = stage("attribute", attribution::evaluate_examples(member, &test))?;
        per_model.push(scores);
        accs.push(m.accuracy);
    }
    let axis = crate::cube::SpectralAxis::default_snapscan();
    let wavelengths: Vec<f64> = if bands == axis.band_count() {
        axis.wavelengths().to_vec()
    } else {
        (0..bands).map(|i| i as f64).collect()
    };
    let report = stage(
        "attribute",
        attribution::aggregate_importance(&per_model, &accs, &wavelengths, attribution::ACCURACY_FILTER),
    )?;
    std::fs::write(run_dir.join("reports/attribution.tsv"), report.to_tsv())?;
    report.save_bar_chart(&run_dir.join("reports/attribution.png"))?;
    for &k in &cfg.meta_channels {
        let subset = stage("select-channels", attribution::select_top_k(&report, k))?;
        subset.save(&run_dir.join(format!("reports/channels-top{k}.txt")))?;
    }

    std::fs::write(run_dir.join("reports/metrics.tsv"), &metrics_report)?;

    // overlays from full-image inference on each scene
    let classifier = TileClassifier::Thresholded(ens, cfg.taus[0]);
    for (i, (cube, mask)) in pairs.iter().enumerate() {
        let map = stage(
            "infer",
            infer_full_image(&classifier, cube, Some(mask), &norm, &cfg.dataset),
        )?;
        stage(
            "render",
            render_overlay(
                &map,
                cube,
                cfg.overlay_band_nm,
                &run_dir.join(format!("overlays/scene-{i}.png")),
            ),
        )?;
        log.push_str(&format!(
            "scene {i}: per-image accuracy {:?}, {} oversize tiles\n",
            map.accuracy, map.oversize_tiles
        ));
    }

    std::fs::write(run_dir.join("logs/run.log"), log)?;
    Ok(run_dir)
}

pub use attribution::retrain_on_subset;
