//! Hyperspectral cube data model, spectral axis, annotation masks,
//! white-reference calibration and cube/annotation file I/O.
//!
//! Cube container layout (all integers little-endian):
//! magic `HSIC`, version u16, height u32, width u32, bands u32,
//! wavelength table (bands x f32, nm), run-length-encoded valid mask
//! (u8 first value, u32 run count, run lengths u32, row-major), payload
//! band-sequential f32. Annotation container: magic `HSIA`, height u32,
//! width u32, payload u8 labels row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{HsiError, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSIC";
pub const ANNOTATION_MAGIC: &[u8; 4] = b"HSIA";
pub const CUBE_VERSION: u16 = 1;

/// Reflectance values above this are treated as saturated and the pixel
/// is flagged invalid during calibration.
pub const SATURATION_CAP: f64 = 1.2;

/// Number of classes in the annotation schema (0 Background .. 13 Histo Healthy).
pub const CLASS_COUNT: u8 = 14;

pub const CLASS_NAMES: [&str; 14] = [
    "Background",
    "Healthy",
    "Foreign object",
    "Blood",
    "Coagulation",
    "HGG",
    "LGG",
    "Histo HGG",
    "Histo LGG",
    "Blood vessel",
    "White matter",
    "Deep Cortex",
    "Pia",
    "Histo Healthy",
];

/// Ordered band-center wavelengths in nanometers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAxis {
    wavelengths_nm: Vec<f64>,
}

impl SpectralAxis {
    pub fn new(wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.is_empty() {
            return Err(HsiError::invalid("spectral axis needs at least one band"));
        }
        if wavelengths_nm.iter().any(|w| !w.is_finite()) {
            return Err(HsiError::invalid("non-finite wavelength"));
        }
        if wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HsiError::invalid(
                "wavelengths must be strictly increasing",
            ));
        }
        Ok(SpectralAxis { wavelengths_nm })
    }

    /// 104 bands evenly spanning 468-787 nm.
    pub fn default_snapscan() -> Self {
        let n = 104usize;
        let (lo, hi) = (468.0, 787.0);
        let step = (hi - lo) / (n - 1) as f64;
        let wl = (0..n).map(|i| lo + step * i as f64).collect();
        SpectralAxis { wavelengths_nm: wl }
    }

    pub fn band_count(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    /// Index of the band whose center is nearest to `wavelength_nm`;
    /// ties break toward the lower index. Out-of-range queries (beyond
    /// half a band spacing past either end) are rejected.
    pub fn band_index(&self, wavelength_nm: f64) -> Result<usize> {
        let wl = &self.wavelengths_nm;
        let n = wl.len();
        let lo_margin = if n > 1 { (wl[1] - wl[0]) / 2.0 } else { 0.5 };
        let hi_margin = if n > 1 {
            (wl[n - 1] - wl[n - 2]) / 2.0
        } else {
            0.5
        };
        if wavelength_nm < wl[0] - lo_margin || wavelength_nm > wl[n - 1] + hi_margin {
            return Err(HsiError::invalid(format!(
                "wavelength {wavelength_nm} nm outside axis range [{}, {}]",
                wl[0],
                wl[n - 1]
            )));
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &w) in wl.iter().enumerate() {
            let d = (wavelength_nm - w).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }
}

/// 3-D reflectance array (height x width x bands) with validity mask.
///
/// Cubes are immutable after construction; concurrent read access is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    axis: SpectralAxis,
    data: Array3<f32>,
    valid: Array2<bool>,
}

impl HsiCube {
    pub fn new(axis: SpectralAxis, data: Array3<f32>, valid: Array2<bool>) -> Result<Self> {
        let (h, w, b) = data.dim();
        if b != axis.band_count() {
            return Err(HsiError::shape(format!(
                "data has {b} bands but axis declares {}",
                axis.band_count()
            )));
        }
        if valid.dim() != (h, w) {
            return Err(HsiError::shape("valid mask shape differs from data"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(HsiError::numeric("cube payload contains non-finite values"));
        }
        Ok(HsiCube { axis, data, valid })
    }

    pub fn axis(&self) -> &SpectralAxis {
        &self.axis
    }
    pub fn height(&self) -> usize {
        self.data.dim().0
    }
    pub fn width(&self) -> usize {
        self.data.dim().1
    }
    pub fn bands(&self) -> usize {
        self.data.dim().2
    }
    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }
    pub fn valid(&self) -> &Array2<bool> {
        &self.valid
    }
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[[row, col]]
    }

    /// Pixel spectrum as f64 (compute precision).
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        self.data
            .slice(ndarray::s![row, col, ..])
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Per-pixel class labels from the 14-class annotation schema.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMask {
    labels: Array2<u8>,
}

impl AnnotationMask {
    pub fn new(labels: Array2<u8>) -> Result<Self> {
        if labels.iter().any(|&l| l >= CLASS_COUNT) {
            return Err(HsiError::invalid(format!(
                "annotation label outside 0..={}",
                CLASS_COUNT - 1
            )));
        }
        Ok(AnnotationMask { labels })
    }

    pub fn height(&self) -> usize {
        self.labels.dim().0
    }
    pub fn width(&self) -> usize {
        self.labels.dim().1
    }
    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }
    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[[row, col]]
    }
}

/// Per-band raw intensity of the calibration target.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteReference {
    spectrum: Vec<f64>,
    target_reflectance: f64,
}

impl WhiteReference {
    pub fn new(spectrum: Vec<f64>, target_reflectance: f64) -> Result<Self> {
        if spectrum.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(HsiError::invalid(
                "white reference entries must be strictly positive",
            ));
        }
        if !(target_reflectance > 0.0 && target_reflectance <= 1.0) {
            return Err(HsiError::invalid("target reflectance must be in (0, 1]"));
        }
        Ok(WhiteReference {
            spectrum,
            target_reflectance,
        })
    }

    /// Standard 95% reflectance calibration target.
    pub fn with_default_target(spectrum: Vec<f64>) -> Result<Self> {
        Self::new(spectrum, 0.95)
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }
    pub fn target_reflectance(&self) -> f64 {
        self.target_reflectance
    }
    pub fn band_count(&self) -> usize {
        self.spectrum.len()
    }
}

/// Convert raw counts to absolute reflectance:
/// `out[p, b] = raw[p, b] / white[b] * target_reflectance`.
///
/// The valid mask is preserved; pixels with any calibrated band above
/// [`SATURATION_CAP`] are additionally flagged invalid. Never converts
/// an invalid pixel to valid.
pub fn calibrate_reflectance(raw: &HsiCube, white: &WhiteReference) -> Result<HsiCube> {
    if white.band_count() != raw.bands() {
        return Err(HsiError::shape(format!(
            "white reference has {} bands, cube has {}",
            white.band_count(),
            raw.bands()
        )));
    }
    let (h, w, b) = raw.data.dim();
    let mut out = Array3::<f32>::zeros((h, w, b));
    let mut valid = raw.valid.clone();
    for r in 0..h {
        for c in 0..w {
            let mut saturated = false;
            for k in 0..b {
                let v = raw.data[[r, c, k]] as f64 / white.spectrum[k]
                    * white.target_reflectance;
                if v > SATURATION_CAP {
                    saturated = true;
                }
                out[[r, c, k]] = v as f32;
            }
            if saturated {
                valid[[r, c]] = false;
            }
        }
    }
    HsiCube::new(raw.axis.clone(), out, valid)
}

// ---------------------------------------------------------------------------
// Container I/O
// ---------------------------------------------------------------------------

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| HsiError::format(format!("truncated file: {e}")))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn rle_encode(mask: &Array2<bool>) -> (u8, Vec<u32>) {
    let flat: Vec<bool> = mask.iter().copied().collect();
    if flat.is_empty() {
        return (0, vec![]);
    }
    let first = flat[0] as u8;
    let mut runs = Vec::new();
    let mut cur = flat[0];
    let mut len: u32 = 0;
    for v in flat {
        if v == cur {
            len += 1;
        } else {
            runs.push(len);
            cur = v;
            len = 1;
        }
    }
    runs.push(len);
    (first, runs)
}

fn rle_decode(first: u8, runs: &[u32], h: usize, w: usize) -> Result<Array2<bool>> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (h * w) as u64 {
        return Err(HsiError::format(format!(
            "valid-mask RLE covers {total} pixels, expected {}",
            h * w
        )));
    }
    let mut flat = Vec::with_capacity(h * w);
    let mut cur = first != 0;
    for &r in runs {
        flat.extend(std::iter::repeat(cur).take(r as usize));
        cur = !cur;
    }
    Array2::from_shape_vec((h, w), flat).map_err(|e| HsiError::format(e.to_string()))
}

/// Write a cube to the `HSIC` container format.
pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    // HsiCube construction already rejects non-finite values; re-check in
    // case the payload was built through unchecked paths.
    if cube.data.iter().any(|v| !v.is_finite()) {
        return Err(HsiError::numeric("refusing to write non-finite payload"));
    }
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&CUBE_VERSION.to_le_bytes())?;
    w.write_all(&(cube.height() as u32).to_le_bytes())?;
    w.write_all(&(cube.width() as u32).to_le_bytes())?;
    w.write_all(&(cube.bands() as u32).to_le_bytes())?;
    for &wl in cube.axis.wavelengths() {
        w.write_all(&(wl as f32).to_le_bytes())?;
    }
    let (first, runs) = rle_encode(&cube.valid);
    w.write_all(&[first])?;
    w.write_all(&(runs.len() as u32).to_le_bytes())?;
    for run in &runs {
        w.write_all(&run.to_le_bytes())?;
    }
    // band-sequential payload
    for b in 0..cube.bands() {
        for r in 0..cube.height() {
            for c in 0..cube.width() {
                w.write_all(&cube.data[[r, c, b]].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a cube from the `HSIC` container format.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let f = File::open(path)?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != CUBE_MAGIC {
        return Err(HsiError::format("bad magic, not an HSIC cube file"));
    }
    let version = read_u16(&mut r)?;
    if version != CUBE_VERSION {
        return Err(HsiError::format(format!(
            "unsupported cube version {version}"
        )));
    }
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let b = read_u32(&mut r)? as usize;
    if h == 0 || w == 0 || b == 0 {
        return Err(HsiError::format("zero dimension in cube header"));
    }
    let mut wl = Vec::with_capacity(b);
    for _ in 0..b {
        wl.push(read_f32(&mut r)? as f64);
    }
    let axis = SpectralAxis::new(wl)?;
    let mut first = [0u8; 1];
    read_exact(&mut r, &mut first)?;
    let n_runs = read_u32(&mut r)? as usize;
    let mut runs = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        runs.push(read_u32(&mut r)?);
    }
    let valid = rle_decode(first[0], &runs, h, w)?;
    let mut payload = vec![0u8; h * w * b * 4];
    r.read_exact(&mut payload).map_err(|_| {
        HsiError::shape(format!(
            "payload shorter than declared shape {h}x{w}x{b}"
        ))
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(HsiError::shape("payload longer than declared shape"));
    }
    let mut data = Array3::<f32>::zeros((h, w, b));
    let mut idx = 0usize;
    for band in 0..b {
        for row in 0..h {
            for col in 0..w {
                let v = f32::from_le_bytes(payload[idx..idx + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(HsiError::numeric(
                        "cube payload contains non-finite values",
                    ));
                }
                data[[row, col, band]] = v;
                idx += 4;
            }
        }
    }
    HsiCube::new(axis, data, valid)
}

/// Write an annotation mask to the `HSIA` container format.
pub fn save_annotation(mask: &AnnotationMask, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(ANNOTATION_MAGIC)?;
    w.write_all(&(mask.height() as u32).to_le_bytes())?;
    w.write_all(&(mask.width() as u32).to_le_bytes())?;
    for row in mask.labels.rows() {
        let bytes: Vec<u8> = row.iter().copied().collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an annotation mask from the `HSIA` container format.
pub fn load_annotation(path: impl AsRef<Path>) -> Result<AnnotationMask> {
    let f = File::open(path)?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != ANNOTATION_MAGIC {
        return Err(HsiError::format("bad magic, not an HSIA annotation file"));
    }
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let mut payload = vec![0u8; h * w];
    r.read_exact(&mut payload)
        .map_err(|_| HsiError::shape("annotation payload shorter than declared"))?;
    let labels =
        Array2::from_shape_vec((h, w), payload).map_err(|e| HsiError::format(e.to_string()))?;
    AnnotationMask::new(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn small_cube() -> HsiCube {
        let axis = SpectralAxis::new(vec![500.0, 510.0, 520.0]).unwrap();
        let data = Array3::from_shape_fn((2, 2, 3), |(r, c, b)| (r * 4 + c * 2 + b) as f32 * 0.1);
        let valid = arr2(&[[true, true], [true, false]]);
        HsiCube::new(axis, data, valid).unwrap()
    }

    #[test]
    fn cube_round_trip_bit_exact() {
        let cube = small_cube();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&cube, &path).unwrap();
        let loaded = load_cube(&path).unwrap();
        assert_eq!(cube, loaded);
    }

    #[test]
    fn truncated_payload_is_shape_error() {
        let cube = small_cube();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&cube, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match load_cube(&path) {
            Err(HsiError::Shape(_)) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_payload_is_shape_error() {
        let cube = small_cube();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&cube, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cube(&path), Err(HsiError::Shape(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_cube(&path), Err(HsiError::Format(_))));
    }

    #[test]
    fn nan_payload_rejected_before_write() {
        let axis = SpectralAxis::new(vec![500.0, 510.0, 520.0]).unwrap();
        let mut data = Array3::<f32>::zeros((4, 4, 3));
        data[[1, 2, 1]] = f32::NAN;
        let valid = Array2::from_elem((4, 4), true);
        assert!(HsiCube::new(axis, data, valid).is_err());
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let cube = small_cube();
        let res = save_cube(&cube, "/nonexistent-dir/sub/c.hsic");
        assert!(matches!(res, Err(HsiError::Io(_))));
    }

    #[test]
    fn calibration_definition() {
        let axis = SpectralAxis::new(vec![500.0, 510.0]).unwrap();
        let white = WhiteReference::with_default_target(vec![2000.0, 4000.0]).unwrap();
        // raw equal to white -> flat 0.95
        let data = Array3::from_shape_fn((1, 2, 2), |(_, _, b)| [2000.0f32, 4000.0][b]);
        let valid = Array2::from_elem((1, 2), true);
        let raw = HsiCube::new(axis.clone(), data, valid.clone()).unwrap();
        let cal = calibrate_reflectance(&raw, &white).unwrap();
        for v in cal.data().iter() {
            assert!((v - 0.95).abs() < 1e-6);
        }
        // all zeros -> all zeros
        let raw0 = HsiCube::new(axis.clone(), Array3::zeros((1, 2, 2)), valid.clone()).unwrap();
        let cal0 = calibrate_reflectance(&raw0, &white).unwrap();
        assert!(cal0.data().iter().all(|&v| v == 0.0));
        // 2x white at one band -> 1.90 there, saturated -> pixel invalid
        let mut d2 = Array3::from_shape_fn((1, 2, 2), |(_, _, b)| [2000.0f32, 4000.0][b]);
        d2[[0, 0, 1]] = 8000.0;
        let raw2 = HsiCube::new(axis, d2, valid).unwrap();
        let cal2 = calibrate_reflectance(&raw2, &white).unwrap();
        assert!((cal2.data()[[0, 0, 1]] - 1.90).abs() < 1e-6);
        assert!(!cal2.is_valid(0, 0));
        assert!(cal2.is_valid(0, 1));
    }

    #[test]
    fn calibration_band_mismatch() {
        let cube = small_cube();
        let white = WhiteReference::with_default_target(vec![1.0, 1.0]).unwrap();
        assert!(calibrate_reflectance(&cube, &white).is_err());
    }

    #[test]
    fn white_reference_rejects_nonpositive() {
        assert!(WhiteReference::with_default_target(vec![1.0, 0.0]).is_err());
        assert!(WhiteReference::with_default_target(vec![1.0, -2.0]).is_err());
    }

    #[test]
    fn band_index_nearest_and_ties() {
        let axis = SpectralAxis::new(vec![500.0, 510.0, 520.0]).unwrap();
        assert_eq!(axis.band_index(510.0).unwrap(), 1);
        assert_eq!(axis.band_index(514.0).unwrap(), 1);
        // tie at 515 breaks toward the lower index
        assert_eq!(axis.band_index(515.0).unwrap(), 1);
        assert!(axis.band_index(1000.0).is_err());
        let default = SpectralAxis::default_snapscan();
        assert!(default.band_index(1000.0).is_err());
        assert_eq!(default.band_index(468.0).unwrap(), 0);
    }

    #[test]
    fn default_axis_shape() {
        let axis = SpectralAxis::default_snapscan();
        assert_eq!(axis.band_count(), 104);
        assert!((axis.wavelengths()[0] - 468.0).abs() < 1e-9);
        assert!((axis.wavelengths()[103] - 787.0).abs() < 1e-9);
    }

    #[test]
    fn rle_round_trip() {
        let mask = arr2(&[
            [true, true, false, false],
            [false, true, true, true],
            [false, false, false, true],
        ]);
        let (first, runs) = rle_encode(&mask);
        let back = rle_decode(first, &runs, 3, 4).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn annotation_round_trip_and_validation() {
        let mask = AnnotationMask::new(arr2(&[[0u8, 1], [6, 13]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hsia");
        save_annotation(&mask, &path).unwrap();
        assert_eq!(load_annotation(&path).unwrap(), mask);
        assert!(AnnotationMask::new(arr2(&[[14u8]])).is_err());
    }

    #[test]
    fn calibration_homogeneity_property() {
        // calibrate(k*raw) == k*calibrate(raw) elementwise
        let axis = SpectralAxis::new(vec![500.0, 510.0, 520.0]).unwrap();
        let white = WhiteReference::with_default_target(vec![100.0, 200.0, 300.0]).unwrap();
        let data = Array3::from_shape_fn((3, 3, 3), |(r, c, b)| {
            (1.0 + r as f32 * 0.3 + c as f32 * 0.2 + b as f32 * 0.1) * 10.0
        });
        let valid = Array2::from_elem((3, 3), true);
        let raw = HsiCube::new(axis.clone(), data.clone(), valid.clone()).unwrap();
        let k = 0.007f32; // keep below saturation
        let scaled = HsiCube::new(axis, data.mapv(|v| v * k), valid).unwrap();
        let a = calibrate_reflectance(&raw, &white).unwrap();
        let b = calibrate_reflectance(&scaled, &white).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!(((*x as f64) * (k as f64) - *y as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration_never_validates_invalid_pixels() {
        let axis = SpectralAxis::new(vec![500.0]).unwrap();
        let white = WhiteReference::with_default_target(vec![100.0]).unwrap();
        let data = Array3::from_elem((2, 1, 1), 50.0f32);
        let valid = arr2(&[[false], [true]]);
        let raw = HsiCube::new(axis, data, valid).unwrap();
        let cal = calibrate_reflectance(&raw, &white).unwrap();
        assert!(!cal.is_valid(0, 0));
        assert!(cal.is_valid(1, 0));
    }
}
