//! Spectral distances and cluster-separability analysis.
//!
//! The spectral angle mapper (SAM) distance between spectra `a` and `b`
//! is `arccos(<a,b> / (|a||b|))`, scale-invariant and in `[0, pi]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cube::{AnnotationMask, HsiCube, CLASS_NAMES};
use crate::error::{HsiError, Result};

/// Intra-cluster mean pairwise SAM is estimated over at most this many
/// uniformly subsampled pixels per class; exact below the cap.
pub const INTRA_SUBSAMPLE_CAP: usize = 2000;

/// Spectral angle in radians between two equal-length, non-zero spectra.
/// The cosine argument is clamped to `[-1, 1]` before `acos`.
pub fn sam_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HsiError::shape(format!(
            "spectrum lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return Err(HsiError::invalid("SAM distance undefined for zero spectrum"));
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Euclidean norm of the difference of two equal-length spectra.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HsiError::shape(format!(
            "spectrum lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Per-band arithmetic mean of a non-empty set of spectra.
pub fn mean_spectrum(spectra: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = spectra
        .first()
        .ok_or_else(|| HsiError::invalid("mean_spectrum of empty set"))?;
    let n = first.len();
    let mut acc = vec![0.0f64; n];
    for s in spectra {
        if s.len() != n {
            return Err(HsiError::shape("inconsistent spectrum lengths"));
        }
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let inv = 1.0 / spectra.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct ClassClusterStats {
    pub class_id: u8,
    pub pixel_count: usize,
    /// Mean pairwise SAM among (subsampled) member pixels.
    pub intra_mean_sam: f64,
}

#[derive(Debug, Clone)]
pub struct PairStats {
    pub class_a: u8,
    pub class_b: u8,
    /// SAM between the two class centroids (mean spectra).
    pub inter_centroid_sam: f64,
    pub chi2: f64,
    pub p_value: f64,
}

/// Intra-/inter-cluster distances and chi-squared separability per class pair.
#[derive(Debug, Clone)]
pub struct SeparabilityReport {
    pub classes: Vec<ClassClusterStats>,
    pub pairs: Vec<PairStats>,
}

impl SeparabilityReport {
    /// Tab-separated report, one block per section.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("class\tname\tpixels\tintra_mean_sam\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                c.class_id, CLASS_NAMES[c.class_id as usize], c.pixel_count, c.intra_mean_sam
            ));
        }
        out.push_str("class_a\tclass_b\tinter_centroid_sam\tchi2\tp_value\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.4}\t{:.6}\n",
                p.class_a, p.class_b, p.inter_centroid_sam, p.chi2, p.p_value
            ));
        }
        out
    }
}

fn class_spectra(cube: &HsiCube, mask: &AnnotationMask, class_id: u8) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            if cube.is_valid(r, c) && mask.label(r, c) == class_id {
                out.push(cube.spectrum(r, c));
            }
        }
    }
    out
}

fn mean_pairwise_sam(spectra: &[Vec<f64>]) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for i in 0..spectra.len() {
        for j in (i + 1)..spectra.len() {
            sum += sam_distance(&spectra[i], &spectra[j])?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Per-band two-sample chi-squared statistic comparing two pixel
/// populations: `sum_b (mu1 - mu2)^2 / (s1^2/n1 + s2^2/n2)` with one
/// degree of freedom per band.
fn chi2_two_sample(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, f64)> {
    let bands = a[0].len();
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let mu1 = mean_spectrum(a)?;
    let mu2 = mean_spectrum(b)?;
    let var = |set: &[Vec<f64>], mu: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0f64; bands];
        for s in set {
            for k in 0..bands {
                let d = s[k] - mu[k];
                v[k] += d * d;
            }
        }
        let denom = (set.len() as f64 - 1.0).max(1.0);
        for x in &mut v {
            *x /= denom;
        }
        v
    };
    let v1 = var(a, &mu1);
    let v2 = var(b, &mu2);
    let mut stat = 0.0f64;
    for k in 0..bands {
        let denom = v1[k] / n1 + v2[k] / n2;
        if denom > 0.0 {
            let d = mu1[k] - mu2[k];
            stat += d * d / denom;
        }
    }
    let dist = ChiSquared::new(bands as f64)
        .map_err(|e| HsiError::numeric(format!("chi-squared dof: {e}")))?;
    let p = 1.0 - dist.cdf(stat);
    Ok((stat, p.clamp(0.0, 1.0)))
}

/// Intra-/inter-cluster SAM distances and chi-squared statistics over the
/// requested annotation classes. Every class must be present with at
/// least two valid pixels.
pub fn cluster_separability(
    cube: &HsiCube,
    mask: &AnnotationMask,
    classes: &[u8],
) -> Result<SeparabilityReport> {
    if classes.len() < 2 {
        return Err(HsiError::invalid("need at least two classes"));
    }
    if mask.height() != cube.height() || mask.width() != cube.width() {
        return Err(HsiError::shape("mask shape differs from cube"));
    }
    let mut populations = Vec::new();
    for &cid in classes {
        let spectra = class_spectra(cube, mask, cid);
        if spectra.len() < 2 {
            return Err(HsiError::invalid(format!(
                "class {cid} has {} valid pixels, need at least 2",
                spectra.len()
            )));
        }
        populations.push((cid, spectra));
    }
    // fixed stream so reports are reproducible run to run
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e9a7ab1e);
    let mut class_stats = Vec::new();
    let mut subsampled = Vec::new();
    for (cid, spectra) in &populations {
        let sample: Vec<Vec<f64>> = if spectra.len() > INTRA_SUBSAMPLE_CAP {
            let mut idx: Vec<usize> = (0..spectra.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(INTRA_SUBSAMPLE_CAP);
            idx.sort_unstable();
            idx.into_iter().map(|i| spectra[i].clone()).collect()
        } else {
            spectra.clone()
        };
        class_stats.push(ClassClusterStats {
            class_id: *cid,
            pixel_count: spectra.len(),
            intra_mean_sam: mean_pairwise_sam(&sample)?,
        });
        subsampled.push(sample);
    }
    let mut pairs = Vec::new();
    for i in 0..populations.len() {
        for j in (i + 1)..populations.len() {
            let ca = mean_spectrum(&populations[i].1)?;
            let cb = mean_spectrum(&populations[j].1)?;
            let inter = sam_distance(&ca, &cb)?;
            let (chi2, p) = chi2_two_sample(&populations[i].1, &populations[j].1)?;
            pairs.push(PairStats {
                class_a: populations[i].0,
                class_b: populations[j].0,
                inter_centroid_sam: inter,
                chi2,
                p_value: p,
            });
        }
    }
    Ok(SeparabilityReport {
        classes: class_stats,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array3};
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    use crate::cube::SpectralAxis;

    // Independent naive oracle: textbook formula with simple summation.
    fn sam_oracle(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn sam_analytic_cases() {
        assert_abs_diff_eq!(
            sam_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sam_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sam_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            FRAC_PI_4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sam_errors() {
        assert!(sam_distance(&[1.0, 2.0], &[1.0]).is_err());
        assert!(sam_distance(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn sam_matches_oracle_on_random_104_band_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: Vec<f64> = (0..104).map(|_| rng.gen_range(0.01..1.0)).collect();
            let b: Vec<f64> = (0..104).map(|_| rng.gen_range(0.01..1.0)).collect();
            assert_abs_diff_eq!(
                sam_distance(&a, &b).unwrap(),
                sam_oracle(&a, &b),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn l2_cases_and_oracle() {
        assert_abs_diff_eq!(l2_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(l2_distance(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 5.0);
        assert!(l2_distance(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let a: Vec<f64> = (0..104).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..104).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let oracle = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let got = l2_distance(&a, &b).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
    }

    #[test]
    fn mean_spectrum_cases() {
        let single = vec![vec![1.0, 2.0, 3.0]];
        assert_eq!(mean_spectrum(&single).unwrap(), vec![1.0, 2.0, 3.0]);
        let two = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        assert_eq!(mean_spectrum(&two).unwrap(), vec![1.0, 1.0]);
        assert!(mean_spectrum(&[]).is_err());
        // accumulation oracle on 1000 random spectra
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let set: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..8).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let got = mean_spectrum(&set).unwrap();
        for k in 0..8 {
            let oracle: f64 = set.iter().map(|s| s[k]).sum::<f64>() / 1000.0;
            assert_abs_diff_eq!(got[k], oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn sam_scale_invariance_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let a: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..1.0)).collect();
            let k: f64 = rng.gen_range(0.001..1000.0);
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            assert_abs_diff_eq!(
                sam_distance(&ka, &b).unwrap(),
                sam_distance(&a, &b).unwrap(),
                epsilon = 1e-12
            );
            assert_eq!(
                sam_distance(&a, &b).unwrap().to_bits(),
                sam_distance(&b, &a).unwrap().to_bits()
            );
            let d = sam_distance(&a, &b).unwrap();
            assert!((0.0..=std::f64::consts::PI).contains(&d));
        }
    }

    fn two_class_scene(
        bands: usize,
        spec_a: &[f64],
        spec_b: &[f64],
        noise: f64,
        seed: u64,
    ) -> (HsiCube, AnnotationMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 8;
        let w = 8;
        let mut data = Array3::<f32>::zeros((h, w, bands));
        let mut labels = Array2::<u8>::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let (spec, lab) = if c < w / 2 { (spec_a, 1u8) } else { (spec_b, 6u8) };
                labels[[r, c]] = lab;
                for k in 0..bands {
                    data[[r, c, k]] = (spec[k] + rng.gen_range(-noise..=noise)) as f32;
                }
            }
        }
        let axis = SpectralAxis::new((0..bands).map(|i| 500.0 + i as f64).collect()).unwrap();
        let valid = Array2::from_elem((h, w), true);
        (
            HsiCube::new(axis, data, valid).unwrap(),
            AnnotationMask::new(labels).unwrap(),
        )
    }

    #[test]
    fn identical_populations_indistinguishable() {
        let spec = vec![0.5, 0.6, 0.7, 0.8];
        let (cube, mask) = two_class_scene(4, &spec, &spec, 0.0, 1);
        let rep = cluster_separability(&cube, &mask, &[1, 6]).unwrap();
        assert_abs_diff_eq!(rep.pairs[0].inter_centroid_sam, 0.0, epsilon = 1e-9);
        assert!(rep.pairs[0].p_value > 0.999);
    }

    #[test]
    fn disjoint_directions_fully_separated() {
        let a = vec![1.0, 0.0, 0.0, 0.0];
        let b = vec![0.0, 0.0, 0.0, 1.0];
        let (cube, mask) = two_class_scene(4, &a, &b, 0.0, 2);
        let rep = cluster_separability(&cube, &mask, &[1, 6]).unwrap();
        let intra_max = rep
            .classes
            .iter()
            .map(|c| c.intra_mean_sam)
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(intra_max, 0.0, epsilon = 1e-9);
        assert!(rep.pairs[0].inter_centroid_sam > 1.0);
        // zero noise leaves the chi-squared denominators degenerate; a
        // small-noise variant must separate at high significance
        let (cube_n, mask_n) = two_class_scene(4, &a, &b, 0.01, 21);
        let rep_n = cluster_separability(&cube_n, &mask_n, &[1, 6]).unwrap();
        assert!(rep_n.pairs[0].p_value < 1e-6);
    }

    #[test]
    fn subsampled_report_matches_exhaustive_small_instance() {
        // below the subsample cap the computation is exact, so the report
        // must equal a brute-force all-pairs oracle
        let a = vec![0.5, 0.55, 0.6, 0.65];
        let b = vec![0.6, 0.55, 0.5, 0.45];
        let (cube, mask) = two_class_scene(4, &a, &b, 0.05, 3);
        let rep = cluster_separability(&cube, &mask, &[1, 6]).unwrap();
        for stats in &rep.classes {
            let spectra = class_spectra(&cube, &mask, stats.class_id);
            let mut sum = 0.0;
            let mut n = 0u64;
            for i in 0..spectra.len() {
                for j in (i + 1)..spectra.len() {
                    sum += sam_oracle(&spectra[i], &spectra[j]);
                    n += 1;
                }
            }
            let oracle = sum / n as f64;
            assert!((stats.intra_mean_sam - oracle).abs() <= 0.02 * oracle.max(1e-9));
        }
    }

    #[test]
    fn missing_and_degenerate_classes_rejected() {
        let spec = vec![0.5, 0.6, 0.7, 0.8];
        let (cube, mask) = two_class_scene(4, &spec, &spec, 0.0, 4);
        assert!(cluster_separability(&cube, &mask, &[1, 9]).is_err());
        assert!(cluster_separability(&cube, &mask, &[1]).is_err());
    }

    #[test]
    fn l2_metric_axioms_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..300 {
            let dims = 8;
            let a: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ab = l2_distance(&a, &b).unwrap();
            let ba = l2_distance(&b, &a).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            let cb = l2_distance(&c, &b).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
            assert_abs_diff_eq!(l2_distance(&a, &a).unwrap(), 0.0);
            assert!(ab <= ac + cb + 1e-12);
        }
    }
}
