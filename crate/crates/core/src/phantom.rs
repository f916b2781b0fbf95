//! Synthetic HSI scene generator.
//!
//! Scenes plant tissue classes with hemoglobin-like spectral structure,
//! per-class discriminative band boosts, radial vignetting, i.i.d.
//! Gaussian noise and saturated patches, and carry exact ground truth so
//! the downstream pipeline can be verified end to end.
//!
//! Determinism: all randomness comes from ChaCha8 streams derived from
//! the config seed (per-row streams for noise), so identical configs
//! produce bitwise-identical scenes on any platform.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{AnnotationMask, HsiCube, SpectralAxis, CLASS_COUNT, SATURATION_CAP};
use crate::error::{HsiError, Result};

/// Gaussian absorption-dip width used by the hemoglobin-like model.
pub const DIP_SIGMA_NM: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseRegion {
    pub label: u8,
    pub center_row: f64,
    pub center_col: f64,
    pub radius_rows: f64,
    pub radius_cols: f64,
}

impl EllipseRegion {
    fn contains(&self, row: usize, col: usize) -> bool {
        let dr = (row as f64 - self.center_row) / self.radius_rows;
        let dc = (col as f64 - self.center_col) / self.radius_cols;
        dr * dr + dc * dc <= 1.0
    }
}

/// Spectral model of one planted class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    /// Oxygenation fraction in [0, 1] for the hemoglobin-like base curve.
    pub oxygenation: f64,
    /// Baseline reflectance multiplier.
    pub baseline: f64,
    /// Reflectance bumps at discriminative wavelengths: (nm, amplitude).
    pub boosts: Vec<(f64, f64)>,
}

impl Default for ClassModel {
    fn default() -> Self {
        ClassModel {
            oxygenation: 0.5,
            baseline: 0.5,
            boosts: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub regions: Vec<EllipseRegion>,
    pub class_models: BTreeMap<u8, ClassModel>,
    pub noise_sigma: f64,
    pub vignette_strength: f64,
    pub saturation_patches: usize,
}

impl PhantomConfig {
    /// Two well-separated classes (healthy 1, LGG 6) on a 256x256 scene;
    /// the standard configuration for end-to-end checks.
    pub fn standard(seed: u64) -> Self {
        let mut class_models = BTreeMap::new();
        class_models.insert(
            1u8,
            ClassModel {
                oxygenation: 0.85,
                baseline: 0.6,
                boosts: vec![(700.0, 0.15)],
            },
        );
        class_models.insert(
            6u8,
            ClassModel {
                oxygenation: 0.25,
                baseline: 0.55,
                boosts: vec![(600.0, 0.12)],
            },
        );
        PhantomConfig {
            seed,
            height: 256,
            width: 256,
            regions: vec![
                EllipseRegion {
                    label: 1,
                    center_row: 74.0,
                    center_col: 128.0,
                    radius_rows: 46.0,
                    radius_cols: 82.0,
                },
                EllipseRegion {
                    label: 6,
                    center_row: 182.0,
                    center_col: 128.0,
                    radius_rows: 46.0,
                    radius_cols: 82.0,
                },
            ],
            class_models,
            noise_sigma: 0.01,
            vignette_strength: 0.15,
            saturation_patches: 2,
        }
    }

    /// Classes identical except for a single planted reflectance boost on
    /// the LGG class at `band_nm`; the oracle for attribution tests.
    pub fn single_planted_band(seed: u64, band_nm: f64, amplitude: f64) -> Self {
        let mut cfg = Self::standard(seed);
        let base = ClassModel {
            oxygenation: 0.6,
            baseline: 0.55,
            boosts: vec![],
        };
        let mut lgg = base.clone();
        lgg.boosts = vec![(band_nm, amplitude)];
        cfg.class_models.insert(1, base);
        cfg.class_models.insert(6, lgg);
        cfg
    }

    /// Standard scene plus an out-of-distribution region (class 10, White
    /// matter) whose spectrum is the midpoint of the two trained classes,
    /// so it lands near the learned decision boundary.
    pub fn with_ood_region(seed: u64) -> Self {
        let mut cfg = Self::standard(seed);
        // shrink the class regions to make room in the circle
        cfg.regions = vec![
            EllipseRegion {
                label: 1,
                center_row: 62.0,
                center_col: 128.0,
                radius_rows: 34.0,
                radius_cols: 74.0,
            },
            EllipseRegion {
                label: 6,
                center_row: 194.0,
                center_col: 128.0,
                radius_rows: 34.0,
                radius_cols: 74.0,
            },
            EllipseRegion {
                label: 10,
                center_row: 128.0,
                center_col: 128.0,
                radius_rows: 26.0,
                radius_cols: 74.0,
            },
        ];
        let healthy = cfg.class_models[&1].clone();
        let lgg = cfg.class_models[&6].clone();
        let mut boosts = healthy.boosts.clone();
        for (nm, amp) in &lgg.boosts {
            boosts.push((*nm, *amp / 2.0));
        }
        for b in &mut boosts {
            b.1 /= 2.0;
        }
        cfg.class_models.insert(
            10,
            ClassModel {
                oxygenation: (healthy.oxygenation + lgg.oxygenation) / 2.0,
                baseline: (healthy.baseline + lgg.baseline) / 2.0,
                boosts,
            },
        );
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(HsiError::config("phantom dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.vignette_strength) {
            return Err(HsiError::config("vignette_strength must be in [0, 1)"));
        }
        if self.noise_sigma < 0.0 {
            return Err(HsiError::config("noise_sigma must be non-negative"));
        }
        for r in &self.regions {
            if r.label >= CLASS_COUNT {
                return Err(HsiError::config(format!(
                    "region label {} outside class schema",
                    r.label
                )));
            }
            if r.radius_rows <= 0.0 || r.radius_cols <= 0.0 {
                return Err(HsiError::config("zero-area region"));
            }
        }
        for m in self.class_models.values() {
            if !(0.0..=1.0).contains(&m.oxygenation) {
                return Err(HsiError::config("oxygenation must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhantomScene {
    pub cube: HsiCube,
    pub mask: AnnotationMask,
    /// Per-class noiseless generating spectra.
    pub truth: BTreeMap<u8, Vec<f64>>,
}

fn gaussian(wl: f64, center: f64, sigma: f64) -> f64 {
    let d = (wl - center) / sigma;
    (-0.5 * d * d).exp()
}

/// Smooth hemoglobin-like reflectance curve: a single absorption dip at
/// 560 nm when deoxygenated, dips at 540 and 580 nm when oxygenated, and
/// a pointwise linear blend in between.
pub fn hemoglobin_like_spectrum(axis: &SpectralAxis, oxygenation: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&oxygenation) {
        return Err(HsiError::invalid("oxygenation must be in [0, 1]"));
    }
    let curve = axis
        .wavelengths()
        .iter()
        .map(|&wl| {
            let deoxy = 1.0 - 0.5 * gaussian(wl, 560.0, DIP_SIGMA_NM);
            let oxy = 1.0
                - 0.35 * gaussian(wl, 540.0, DIP_SIGMA_NM)
                - 0.35 * gaussian(wl, 580.0, DIP_SIGMA_NM);
            (1.0 - oxygenation) * deoxy + oxygenation * oxy
        })
        .collect();
    Ok(curve)
}

/// Noiseless generating spectrum of one class model.
pub fn class_truth_spectrum(axis: &SpectralAxis, model: &ClassModel) -> Result<Vec<f64>> {
    let mut base = hemoglobin_like_spectrum(axis, model.oxygenation)?;
    for v in &mut base {
        *v *= model.baseline;
    }
    for &(nm, amp) in &model.boosts {
        for (v, &wl) in base.iter_mut().zip(axis.wavelengths()) {
            *v += amp * gaussian(wl, nm, DIP_SIGMA_NM);
        }
    }
    Ok(base)
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    // splitmix64 over (seed, row) gives independent per-row streams
    let mut z = seed ^ (row as u64).wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn gauss_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller; fixed algorithm for cross-platform reproducibility
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
    (r * c, r * s)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    gauss_pair(rng).0
}

/// Generate a deterministic phantom scene on the default 104-band axis.
pub fn generate_scene(config: &PhantomConfig) -> Result<PhantomScene> {
    config.validate()?;
    let axis = SpectralAxis::default_snapscan();
    let bands = axis.band_count();
    let (h, w) = (config.height, config.width);

    // labels; overlapping regions with conflicting labels are an error
    let mut labels = Array2::<u8>::zeros((h, w));
    let mut assigned = Array2::<bool>::from_elem((h, w), false);
    for region in &config.regions {
        let mut area = 0usize;
        for r in 0..h {
            for c in 0..w {
                if region.contains(r, c) {
                    if assigned[[r, c]] && labels[[r, c]] != region.label {
                        return Err(HsiError::config(format!(
                            "regions with labels {} and {} overlap at ({r}, {c})",
                            labels[[r, c]],
                            region.label
                        )));
                    }
                    labels[[r, c]] = region.label;
                    assigned[[r, c]] = true;
                    area += 1;
                }
            }
        }
        if area == 0 {
            return Err(HsiError::config(format!(
                "region with label {} covers no pixels",
                region.label
            )));
        }
    }

    // truth spectra for every label present (plus background)
    let mut truth: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    let default_model = ClassModel::default();
    let mut present: Vec<u8> = labels.iter().copied().collect();
    present.sort_unstable();
    present.dedup();
    for lab in present {
        let model = config.class_models.get(&lab).unwrap_or(&default_model);
        truth.insert(lab, class_truth_spectrum(&axis, model)?);
    }

    // circular illuminated region
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let radius = (h.min(w) as f64) / 2.0;
    let mut valid = Array2::<bool>::from_elem((h, w), false);

    let mut data = Array3::<f32>::zeros((h, w, bands));
    for r in 0..h {
        let mut rng = row_rng(config.seed, r);
        for c in 0..w {
            let dr = r as f64 - cy;
            let dc = c as f64 - cx;
            let rad = (dr * dr + dc * dc).sqrt() / radius;
            if rad > 1.0 {
                // outside the illuminated circle: invalid, still draw the
                // same number of noise values to keep streams aligned
                for _ in 0..bands {
                    let _ = gauss(&mut rng);
                }
                continue;
            }
            valid[[r, c]] = true;
            let vignette = 1.0 - config.vignette_strength * rad * rad;
            let spec = &truth[&labels[[r, c]]];
            for b in 0..bands {
                let noise = gauss(&mut rng) * config.noise_sigma;
                data[[r, c, b]] = (spec[b] * vignette + noise) as f32;
            }
        }
    }

    // saturated patches: set to the cap but keep valid, to exercise the
    // intensity filtration downstream
    let mut patch_rng = row_rng(config.seed ^ 0x5a7u64, usize::MAX / 2);
    const PATCH_SIZE: usize = 6;
    for _ in 0..config.saturation_patches {
        // rejection-sample a patch fully inside the circle
        for _attempt in 0..1000 {
            let pr = patch_rng.gen_range(0..h.saturating_sub(PATCH_SIZE));
            let pc = patch_rng.gen_range(0..w.saturating_sub(PATCH_SIZE));
            let corners_valid = [
                (pr, pc),
                (pr + PATCH_SIZE - 1, pc),
                (pr, pc + PATCH_SIZE - 1),
                (pr + PATCH_SIZE - 1, pc + PATCH_SIZE - 1),
            ]
            .iter()
            .all(|&(r, c)| valid[[r, c]]);
            if !corners_valid {
                continue;
            }
            for r in pr..pr + PATCH_SIZE {
                for c in pc..pc + PATCH_SIZE {
                    for b in 0..bands {
                        data[[r, c, b]] = SATURATION_CAP as f32;
                    }
                }
            }
            break;
        }
    }

    let cube = HsiCube::new(axis, data, valid)?;
    let mask = AnnotationMask::new(labels)?;
    Ok(PhantomScene { cube, mask, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deoxygenated_minimum_at_560() {
        let axis = SpectralAxis::default_snapscan();
        let curve = hemoglobin_like_spectrum(&axis, 0.0).unwrap();
        let argmin = curve
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmin, axis.band_index(560.0).unwrap());
    }

    #[test]
    fn oxygenated_double_minimum_at_540_and_580() {
        let axis = SpectralAxis::default_snapscan();
        let curve = hemoglobin_like_spectrum(&axis, 1.0).unwrap();
        let mut minima = Vec::new();
        for i in 1..curve.len() - 1 {
            if curve[i] < curve[i - 1] && curve[i] < curve[i + 1] {
                minima.push(i);
            }
        }
        let b540 = axis.band_index(540.0).unwrap();
        let b580 = axis.band_index(580.0).unwrap();
        assert!(minima.iter().any(|&m| (m as i64 - b540 as i64).abs() <= 1));
        assert!(minima.iter().any(|&m| (m as i64 - b580 as i64).abs() <= 1));
        assert_eq!(minima.len(), 2, "exactly two local minima, got {minima:?}");
    }

    #[test]
    fn half_oxygenation_is_pointwise_average() {
        let axis = SpectralAxis::default_snapscan();
        let lo = hemoglobin_like_spectrum(&axis, 0.0).unwrap();
        let hi = hemoglobin_like_spectrum(&axis, 1.0).unwrap();
        let mid = hemoglobin_like_spectrum(&axis, 0.5).unwrap();
        for i in 0..lo.len() {
            assert!((mid[i] - (lo[i] + hi[i]) / 2.0).abs() < 1e-12);
        }
        assert!(hemoglobin_like_spectrum(&axis, 1.5).is_err());
    }

    #[test]
    fn zero_noise_scene_equals_truth() {
        let mut cfg = PhantomConfig::standard(3);
        cfg.height = 48;
        cfg.width = 48;
        cfg.noise_sigma = 0.0;
        cfg.vignette_strength = 0.0;
        cfg.saturation_patches = 0;
        cfg.regions = vec![EllipseRegion {
            label: 1,
            center_row: 23.5,
            center_col: 23.5,
            radius_rows: 40.0,
            radius_cols: 40.0,
        }];
        let scene = generate_scene(&cfg).unwrap();
        let spec = &scene.truth[&1];
        for r in 0..48 {
            for c in 0..48 {
                if !scene.cube.is_valid(r, c) {
                    continue;
                }
                assert_eq!(scene.mask.label(r, c), 1);
                for b in 0..scene.cube.bands() {
                    assert!((scene.cube.data()[[r, c, b]] as f64 - spec[b]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn determinism_same_seed_bitwise_identical() {
        let mut cfg = PhantomConfig::standard(7);
        cfg.height = 64;
        cfg.width = 64;
        cfg.regions = vec![
            EllipseRegion {
                label: 1,
                center_row: 20.0,
                center_col: 32.0,
                radius_rows: 10.0,
                radius_cols: 20.0,
            },
            EllipseRegion {
                label: 6,
                center_row: 44.0,
                center_col: 32.0,
                radius_rows: 10.0,
                radius_cols: 20.0,
            },
        ];
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.mask, b.mask);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 8;
        let c = generate_scene(&cfg2).unwrap();
        assert_ne!(a.cube, c.cube);
    }

    #[test]
    fn conflicting_overlap_rejected() {
        let mut cfg = PhantomConfig::standard(1);
        cfg.height = 32;
        cfg.width = 32;
        cfg.regions = vec![
            EllipseRegion {
                label: 1,
                center_row: 15.0,
                center_col: 15.0,
                radius_rows: 8.0,
                radius_cols: 8.0,
            },
            EllipseRegion {
                label: 6,
                center_row: 17.0,
                center_col: 17.0,
                radius_rows: 8.0,
                radius_cols: 8.0,
            },
        ];
        assert!(generate_scene(&cfg).is_err());
    }

    #[test]
    fn zero_area_region_rejected() {
        let mut cfg = PhantomConfig::standard(1);
        cfg.height = 32;
        cfg.width = 32;
        cfg.regions = vec![EllipseRegion {
            label: 1,
            center_row: 500.0,
            center_col: 500.0,
            radius_rows: 2.0,
            radius_cols: 2.0,
        }];
        assert!(generate_scene(&cfg).is_err());
    }

    #[test]
    fn planted_band_is_argmax_of_class_mean_difference() {
        let mut cfg = PhantomConfig::single_planted_band(5, 700.0, 0.12);
        cfg.height = 96;
        cfg.width = 96;
        cfg.saturation_patches = 0;
        cfg.regions = vec![
            EllipseRegion {
                label: 1,
                center_row: 28.0,
                center_col: 48.0,
                radius_rows: 14.0,
                radius_cols: 30.0,
            },
            EllipseRegion {
                label: 6,
                center_row: 68.0,
                center_col: 48.0,
                radius_rows: 14.0,
                radius_cols: 30.0,
            },
        ];
        let scene = generate_scene(&cfg).unwrap();
        let bands = scene.cube.bands();
        let mut sums = vec![[0.0f64; 2]; bands];
        let mut counts = [0usize; 2];
        for r in 0..96 {
            for c in 0..96 {
                if !scene.cube.is_valid(r, c) {
                    continue;
                }
                let cls = match scene.mask.label(r, c) {
                    1 => 0,
                    6 => 1,
                    _ => continue,
                };
                counts[cls] += 1;
                for b in 0..bands {
                    sums[b][cls] += scene.cube.data()[[r, c, b]] as f64;
                }
            }
        }
        let diffs: Vec<f64> = (0..bands)
            .map(|b| (sums[b][0] / counts[0] as f64 - sums[b][1] / counts[1] as f64).abs())
            .collect();
        let argmax = diffs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, scene.cube.axis().band_index(700.0).unwrap());
    }

    #[test]
    fn saturation_patches_hit_the_cap() {
        let mut cfg = PhantomConfig::standard(9);
        cfg.height = 96;
        cfg.width = 96;
        cfg.regions = vec![];
        cfg.saturation_patches = 2;
        let scene = generate_scene(&cfg).unwrap();
        let n_saturated = (0..96)
            .flat_map(|r| (0..96).map(move |c| (r, c)))
            .filter(|&(r, c)| {
                scene.cube.is_valid(r, c)
                    && scene.cube.data()[[r, c, 0]] == SATURATION_CAP as f32
            })
            .count();
        assert!(n_saturated >= 36, "expected saturated patches, got {n_saturated}");
    }

    #[test]
    fn ood_variant_generates_three_disjoint_regions() {
        let scene = generate_scene(&PhantomConfig::with_ood_region(4)).unwrap();
        for class in [1u8, 6, 10] {
            let n = scene
                .mask
                .labels()
                .iter()
                .filter(|&&l| l == class)
                .count();
            assert!(n > 500, "class {class} has only {n} pixels");
        }
    }
}
