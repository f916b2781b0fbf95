//! Batch command-line interface for the hyperspectral tissue
//! classification pipeline.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration,
//! 2 stage failure during processing.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hsi_pipeline::attribution::{self, AttributionReport, ChannelSubset};
use hsi_pipeline::classical;
use hsi_pipeline::configfile::ConfigFile;
use hsi_pipeline::cube::{self, SpectralAxis};
use hsi_pipeline::dataset::{self, DatasetConfig, SplitMode, SplitSpec};
use hsi_pipeline::ensemble::{coverage_tsv, Ensemble};
use hsi_pipeline::nn::{self, Network, NetworkSpec, OptimizerKind, TrainConfig};
use hsi_pipeline::phantom::{generate_scene, PhantomConfig};
use hsi_pipeline::pipeline::{self, PipelineConfig, TileClassifier};
use hsi_pipeline::slic::{self, PATCH_SIZE};
use hsi_pipeline::spectral;
use hsi_pipeline::{HsiError, Result};

#[derive(Parser)]
#[command(name = "hsi", version, about = "Hyperspectral tissue classification pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Sectioned key=value config file; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomVariant {
    /// Two tissue classes with noise, vignette, and saturation patches.
    Standard,
    /// Adds a third, never-trained spectral class region.
    Ood,
    /// Classes identical except one planted discriminative band.
    Planted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassicalModel {
    Rf,
    Mlp,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic phantom scene (cube + annotation mask).
    Phantom {
        #[command(flatten)]
        common: CommonOpts,
        /// Output cube path (.hsic).
        #[arg(long)]
        out: PathBuf,
        /// Output annotation mask path (.hsia).
        #[arg(long)]
        mask_out: PathBuf,
        #[arg(long, value_enum, default_value_t = PhantomVariant::Standard)]
        variant: PhantomVariant,
        /// Planted band wavelength (planted variant only).
        #[arg(long, default_value_t = 700.0)]
        planted_nm: f64,
        /// Planted band amplitude (planted variant only).
        #[arg(long, default_value_t = 0.15)]
        planted_amp: f64,
    },
    /// Segment a cube into superpixel tiles; optionally label and filter.
    Tile {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cube: PathBuf,
        /// Annotation mask for tile labeling.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 81)]
        target: usize,
        #[arg(long, default_value_t = 0.1)]
        compactness: f64,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
        /// Apply the quality filtration step before writing outputs.
        #[arg(long)]
        filter: bool,
        /// Tile index raster output (.hsix).
        #[arg(long)]
        index_out: Option<PathBuf>,
        /// Per-tile statistics TSV output.
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Class separability statistics for an annotated cube.
    Stats {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Annotation class codes to compare.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u8, 6u8])]
        classes: Vec<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build standardized train/test patch sets from annotated cubes.
    Dataset {
        #[command(flatten)]
        common: CommonOpts,
        /// Cube paths, repeatable; must pair with --mask in order.
        #[arg(long = "cube", required = true)]
        cubes: Vec<PathBuf>,
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 6620.0 / 8671.0)]
        train_fraction: f64,
        #[arg(long, value_enum, default_value_t = SplitModeArg::RandomTile)]
        mode: SplitModeArg,
        #[arg(long, default_value_t = 81)]
        target: usize,
        #[arg(long, default_value_t = 0.1)]
        compactness: f64,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
    },
    /// Train a channel-compressing CNN on a patch set.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Compressed meta-channel count (the CNN's first layer width).
        #[arg(long, default_value_t = 12)]
        meta_channels: usize,
        #[command(flatten)]
        topts: TrainOpts,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Train a classical baseline (random forest or MLP) on mean spectra.
    TrainClassical {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        model: ClassicalModel,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[command(flatten)]
        topts: TrainOpts,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Expected-gradients channel importance for an ensemble.
    Attribute {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        ensemble_dir: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chart: Option<PathBuf>,
    },
    /// Pick the k most important channels from an attribution report.
    SelectChannels {
        #[command(flatten)]
        common: CommonOpts,
        /// Attribution report TSV produced by `attribute`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain a direct CNN on a selected channel subset.
    Retrain {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Channel subset file from `select-channels`.
        #[arg(long)]
        subset: PathBuf,
        #[command(flatten)]
        topts: TrainOpts,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Train a deep ensemble and report threshold coverage.
    Ensemble {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 10)]
        members: usize,
        #[arg(long, default_value_t = 12)]
        meta_channels: usize,
        #[command(flatten)]
        topts: TrainOpts,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.7, 0.8])]
        taus: Vec<f64>,
        #[arg(long)]
        coverage_out: Option<PathBuf>,
    },
    /// Full-image inference: re-tile a cube and classify every tile.
    Infer {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Normalization parameters fitted at dataset time.
        #[arg(long)]
        norm: PathBuf,
        /// Ensemble directory (mutually exclusive with --model).
        #[arg(long, conflicts_with = "model")]
        ensemble_dir: Option<PathBuf>,
        /// Single network file.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Deferral threshold (ensemble only).
        #[arg(long, default_value_t = 0.7)]
        tau: f64,
        #[arg(long, default_value_t = 81)]
        target: usize,
        #[arg(long, default_value_t = 0.1)]
        compactness: f64,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
        /// Prediction map output (.hsim).
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a prediction map over a grayscale band image.
    Render {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cube: PathBuf,
        /// Prediction map from `infer`.
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 660.0)]
        band_nm: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline end to end into a run directory.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Initialization seed; defaults to the master seed.
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitModeArg {
    RandomTile,
    ByPatient,
}

impl TrainOpts {
    fn to_config(&self, seed: u64, class_weights: Vec<f64>) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: OptimizerKind::Adam,
            class_weights,
            seed,
            init_seed: self.init_seed.unwrap_or(seed),
            val_fraction: 0.1,
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<Option<ConfigFile>> {
    common.config.as_deref().map(ConfigFile::load).transpose()
}

fn metrics_line(name: &str, m: &classical::Metrics) -> String {
    format!(
        "model\taccuracy\tprecision\trecall\ttp\ttn\tfp\tfn\n{name}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\n",
        m.accuracy, m.precision, m.recall, m.counts.tp, m.counts.tn, m.counts.fp, m.counts.fn_
    )
}

fn write_or_print(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Phantom {
            common,
            out,
            mask_out,
            variant,
            planted_nm,
            planted_amp,
        } => {
            let cfg = match variant {
                PhantomVariant::Standard => PhantomConfig::standard(common.seed),
                PhantomVariant::Ood => PhantomConfig::with_ood_region(common.seed),
                PhantomVariant::Planted => {
                    PhantomConfig::single_planted_band(common.seed, planted_nm, planted_amp)
                }
            };
            let scene = generate_scene(&cfg)?;
            cube::save_cube(&scene.cube, &out)?;
            cube::save_annotation(&scene.mask, &mask_out)?;
            println!(
                "wrote {} ({}x{}x{}) and {}",
                out.display(),
                scene.cube.height(),
                scene.cube.width(),
                scene.cube.bands(),
                mask_out.display()
            );
            Ok(())
        }
        Cmd::Tile {
            common,
            cube: cube_path,
            mask,
            target,
            compactness,
            max_iters,
            filter,
            index_out,
            stats_out,
        } => {
            let _ = load_config(&common)?;
            let cube = cube::load_cube(&cube_path)?;
            let mut map = slic::slic_segment(&cube, target, compactness, max_iters)?;
            if let Some(mask_path) = mask {
                let mask = cube::load_annotation(&mask_path)?;
                map.label_tiles(&mask)?;
            }
            let map = if filter {
                slic::filter_tiles(&map, 50.0, 50.0, 10.0, 90.0)?
            } else {
                map
            };
            println!("{} tiles", map.tiles.len());
            if let Some(p) = index_out {
                map.save_index_image(&p)?;
            }
            if let Some(p) = stats_out {
                std::fs::write(p, map.stats_tsv())?;
            }
            Ok(())
        }
        Cmd::Stats {
            common: _,
            cube: cube_path,
            mask,
            classes,
            out,
        } => {
            let cube = cube::load_cube(&cube_path)?;
            let mask = cube::load_annotation(&mask)?;
            let report = spectral::cluster_separability(&cube, &mask, &classes)?;
            write_or_print(out.as_ref(), &report.to_tsv())
        }
        Cmd::Dataset {
            common,
            cubes,
            masks,
            out_dir,
            train_fraction,
            mode,
            target,
            compactness,
            max_iters,
        } => {
            if cubes.len() != masks.len() {
                return Err(HsiError::invalid("--cube and --mask counts must match"));
            }
            let scenes: Vec<_> = cubes
                .iter()
                .zip(&masks)
                .map(|(c, m)| Ok((cube::load_cube(c)?, cube::load_annotation(m)?)))
                .collect::<Result<_>>()?;
            let ds_cfg = DatasetConfig {
                target_tile_size: target,
                compactness,
                max_iters,
                channels: vec![],
            };
            let split = SplitSpec {
                mode: match mode {
                    SplitModeArg::RandomTile => SplitMode::RandomTile,
                    SplitModeArg::ByPatient => SplitMode::ByPatient,
                },
                train_fraction,
                seed: common.seed,
            };
            let (mut train, mut test) = dataset::build_dataset(&scenes, &ds_cfg, &split)?;
            let norm = dataset::standardize(&mut train, &mut test)?;
            std::fs::create_dir_all(&out_dir)?;
            dataset::save_examples(&train, &out_dir.join("train.hsip"))?;
            dataset::save_examples(&test, &out_dir.join("test.hsip"))?;
            norm.save(&out_dir.join("normalization.json"))?;
            println!(
                "dataset: {} train / {} test tiles -> {}",
                train.len(),
                test.len(),
                out_dir.display()
            );
            Ok(())
        }
        Cmd::Train {
            common,
            train,
            test,
            meta_channels,
            topts,
            out,
            metrics_out,
        } => {
            let train_set = dataset::load_examples(&train)?;
            let test_set = dataset::load_examples(&test)?;
            let x = dataset::examples_to_tensor(&train_set);
            let y = dataset::labels_of(&train_set);
            let bands = train_set[0].patch.data.dim().2;
            let spec = NetworkSpec::cnn((PATCH_SIZE, PATCH_SIZE, bands), meta_channels, 2);
            let cfg = topts.to_config(common.seed, attribution::class_weights(&y));
            let (net, _) = nn::train(&spec, &x, &y, &cfg)?;
            let m = attribution::evaluate_examples(&net, &test_set)?;
            net.save(&out)?;
            let report = metrics_line(&format!("cnn-{meta_channels}"), &m);
            write_or_print(metrics_out.as_ref(), &report)
        }
        Cmd::TrainClassical {
            common,
            train,
            test,
            model,
            trees,
            hidden,
            topts,
            out,
            metrics_out,
        } => {
            let train_set = dataset::load_examples(&train)?;
            let test_set = dataset::load_examples(&test)?;
            let ftr = dataset::mean_spectrum_features(&train_set);
            let fte = dataset::mean_spectrum_features(&test_set);
            let ytr = dataset::labels_of(&train_set);
            let yte = dataset::labels_of(&test_set);
            let (name, preds): (&str, Vec<usize>) = match model {
                ClassicalModel::Rf => {
                    let forest = classical::rf_train(&ftr, &ytr, trees, 2, common.seed)?;
                    forest.save(&out)?;
                    (
                        "rf",
                        forest
                            .predict_batch(&fte)?
                            .into_iter()
                            .map(|(l, _)| l)
                            .collect(),
                    )
                }
                ClassicalModel::Mlp => {
                    let cfg = topts.to_config(common.seed, attribution::class_weights(&ytr));
                    let (net, _) = classical::mlp_train(&ftr, &ytr, hidden, &cfg)?;
                    net.save(&out)?;
                    (
                        "mlp",
                        classical::mlp_predict(&net, &fte)?
                            .into_iter()
                            .map(|(l, _)| l)
                            .collect(),
                    )
                }
            };
            let m = classical::evaluate(&preds, &yte)?;
            write_or_print(metrics_out.as_ref(), &metrics_line(name, &m))
        }
        Cmd::Attribute {
            common,
            ensemble_dir,
            train,
            test,
            samples,
            out,
            chart,
        } => {
            let ens = Ensemble::load(&ensemble_dir)?;
            let train_set = dataset::load_examples(&train)?;
            let test_set = dataset::load_examples(&test)?;
            let x_test = dataset::examples_to_tensor(&test_set);
            let baselines = attribution::attribution_baselines(&train_set, 32, common.seed)?;
            let mut per_model = Vec::new();
            let mut accs = Vec::new();
            for (i, member) in ens.members.iter().enumerate() {
                per_model.push(attribution::channel_scores(
                    member,
                    &x_test,
                    &baselines,
                    samples,
                    common.seed.wrapping_add(i as u64),
                )?);
                accs.push(attribution::evaluate_examples(member, &test_set)?.accuracy);
            }
            let bands = test_set[0].patch.data.dim().2;
            let axis = SpectralAxis::default_snapscan();
            let wavelengths: Vec<f64> = if bands == axis.band_count() {
                axis.wavelengths().to_vec()
            } else {
                (0..bands).map(|i| i as f64).collect()
            };
            let report = attribution::aggregate_importance(
                &per_model,
                &accs,
                &wavelengths,
                attribution::ACCURACY_FILTER,
            )?;
            std::fs::write(&out, report.to_tsv())?;
            if let Some(p) = chart {
                report.save_bar_chart(&p)?;
            }
            println!(
                "attribution over {} of {} members -> {}",
                report.model_ids.len(),
                ens.size(),
                out.display()
            );
            Ok(())
        }
        Cmd::SelectChannels {
            common: _,
            report,
            k,
            out,
        } => {
            let rep = parse_report_tsv(&report)?;
            let subset = attribution::select_top_k(&rep, k)?;
            subset.save(&out)?;
            println!("selected channels: {:?}", subset.indices);
            Ok(())
        }
        Cmd::Retrain {
            common,
            train,
            test,
            subset,
            topts,
            out,
            metrics_out,
        } => {
            let train_set = dataset::load_examples(&train)?;
            let test_set = dataset::load_examples(&test)?;
            let subset = ChannelSubset::load(&subset)?;
            let cfg = topts.to_config(common.seed, vec![]);
            let (net, m) = attribution::retrain_on_subset(&train_set, &test_set, &subset, &cfg)?;
            net.save(&out)?;
            write_or_print(
                metrics_out.as_ref(),
                &metrics_line(&format!("retrain-{}", subset.indices.len()), &m),
            )
        }
        Cmd::Ensemble {
            common,
            train,
            test,
            members,
            meta_channels,
            topts,
            out_dir,
            taus,
            coverage_out,
        } => {
            let train_set = dataset::load_examples(&train)?;
            let test_set = dataset::load_examples(&test)?;
            let x = dataset::examples_to_tensor(&train_set);
            let y = dataset::labels_of(&train_set);
            let bands = train_set[0].patch.data.dim().2;
            let spec = NetworkSpec::cnn((PATCH_SIZE, PATCH_SIZE, bands), meta_channels, 2);
            let cfg = topts.to_config(common.seed, attribution::class_weights(&y));
            let ens =
                hsi_pipeline::ensemble::train_ensemble(&spec, &x, &y, &cfg, members, common.seed)?;
            ens.save(&out_dir)?;
            let x_test = dataset::examples_to_tensor(&test_set);
            let y_test = dataset::labels_of(&test_set);
            let coverage = ens.coverage_report(&x_test, &y_test, &taus)?;
            write_or_print(coverage_out.as_ref(), &coverage_tsv(&coverage))
        }
        Cmd::Infer {
            common: _,
            cube: cube_path,
            mask,
            norm,
            ensemble_dir,
            model,
            tau,
            target,
            compactness,
            max_iters,
            out,
        } => {
            if ensemble_dir.is_some() == model.is_some() {
                return Err(HsiError::invalid(
                    "provide exactly one of --ensemble-dir or --model",
                ));
            }
            let cube = cube::load_cube(&cube_path)?;
            let mask = mask.as_deref().map(cube::load_annotation).transpose()?;
            let norm = dataset::NormalizationParams::load(&norm)?;
            let classifier = match (ensemble_dir, model) {
                (Some(dir), _) => TileClassifier::Thresholded(Ensemble::load(&dir)?, tau),
                (_, Some(m)) => TileClassifier::Single(Network::load(&m)?),
                _ => unreachable!(),
            };
            let ds_cfg = DatasetConfig {
                target_tile_size: target,
                compactness,
                max_iters,
                channels: vec![],
            };
            let map = pipeline::infer_full_image(&classifier, &cube, mask.as_ref(), &norm, &ds_cfg)?;
            pipeline::save_map(&map, &out)?;
            if let Some(acc) = map.accuracy {
                println!("per-image accuracy: {acc:.4}");
            }
            println!(
                "{} tiles classified, {} oversize -> {}",
                map.tile_probs.len(),
                map.oversize_tiles,
                out.display()
            );
            Ok(())
        }
        Cmd::Render {
            common: _,
            cube: cube_path,
            map,
            band_nm,
            out,
        } => {
            let cube = cube::load_cube(&cube_path)?;
            let map = pipeline::load_map(&map)?;
            pipeline::render_overlay(&map, &cube, band_nm, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Run { common, out_dir } => {
            let cfg = match (&common.config, out_dir) {
                (Some(path), _) => {
                    let file = ConfigFile::load(path)?;
                    PipelineConfig::from_config_file(&file)?
                }
                (None, Some(dir)) => PipelineConfig::standard(dir, common.seed),
                (None, None) => {
                    return Err(HsiError::invalid("run needs --config or --out-dir"))
                }
            };
            let run_dir = pipeline::run_pipeline(&cfg)?;
            println!("run complete: {}", run_dir.display());
            Ok(())
        }
    }
}

/// Read back a report TSV produced by `attribute`.
fn parse_report_tsv(path: &PathBuf) -> Result<AttributionReport> {
    let body = std::fs::read_to_string(path)?;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    let mut wavelengths = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(HsiError::format(format!("bad report line {}", i + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| HsiError::format(format!("bad number {s:?} on line {}", i + 1)))
        };
        wavelengths.push(parse(cols[1])?);
        mean.push(parse(cols[2])?);
        std.push(parse(cols[3])?);
    }
    if mean.is_empty() {
        return Err(HsiError::format("empty attribution report"));
    }
    Ok(AttributionReport {
        mean,
        std,
        wavelengths_nm: wavelengths,
        model_ids: vec![],
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                HsiError::InvalidArgument(_) | HsiError::Config(_) | HsiError::Shape(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
