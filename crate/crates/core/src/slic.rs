//! SLIC macro-pixel segmentation under the SAM distance, tile quality
//! filtration, purity bookkeeping and padded-patch extraction.
//!
//! The joint distance is `D = sam(pixel, center) + compactness * d_xy / S`
//! with `S = sqrt(target_pixels_per_tile)`. Iteration stops on center
//! convergence (< 0.5 px movement), `max_iters`, or as soon as the total
//! objective would increase, so the accepted objective sequence is
//! non-increasing by construction. Connectivity is enforced afterwards by
//! merging orphan fragments into the largest adjacent tile.

use ndarray::{Array2, Array3};

use rayon::prelude::*;

use crate::cube::{AnnotationMask, HsiCube};
use crate::error::{HsiError, Result};

/// Fixed spatial size of extracted patches.
pub const PATCH_SIZE: usize = 40;

/// Sentinel tile id for unassigned (invalid) pixels.
pub const NO_TILE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileLabel {
    /// No annotation applied yet.
    Unlabeled,
    /// All member pixels share this annotation class.
    Class(u8),
    /// Members straddle an annotation boundary.
    Mixed,
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub id: u32,
    pub pixels: Vec<(u32, u32)>,
    pub mean_spectrum: Vec<f64>,
    /// Mean SAM distance of member pixels to the tile mean spectrum.
    pub mean_sam_uniformity: f64,
    /// Mean L2 distance of member pixels to the tile mean spectrum.
    pub mean_l2_uniformity: f64,
    /// Mean reflectance over member pixels and bands.
    pub mean_intensity: f64,
    pub label: TileLabel,
    pub quality: bool,
    /// (row_min, col_min, row_max, col_max), inclusive.
    pub bbox: (u32, u32, u32, u32),
}

impl Tile {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }
    pub fn bbox_height(&self) -> usize {
        (self.bbox.2 - self.bbox.0 + 1) as usize
    }
    pub fn bbox_width(&self) -> usize {
        (self.bbox.3 - self.bbox.1 + 1) as usize
    }
}

#[derive(Debug, Clone)]
pub struct TileMap {
    /// Per-pixel tile id; `NO_TILE` for invalid pixels.
    pub assignment: Array2<u32>,
    pub tiles: Vec<Tile>,
    /// Accepted total joint distance after each assignment step.
    pub objective_history: Vec<f64>,
}

/// Patch tensor 40 x 40 x C with the tile centered by bounding-box
/// center and exact zeros outside the tile.
#[derive(Debug, Clone)]
pub struct PaddedPatch {
    pub data: Array3<f32>,
    pub tile_id: u32,
    pub label: TileLabel,
}

struct PixelData {
    /// (row, col) of each valid pixel.
    coords: Vec<(u32, u32)>,
    /// Flattened spectra, bands contiguous per pixel.
    spectra: Vec<f64>,
    norms: Vec<f64>,
    bands: usize,
    /// Valid-pixel index per (row, col), usize::MAX if invalid.
    index: Array2<usize>,
}

fn collect_pixels(cube: &HsiCube) -> PixelData {
    let (h, w, bands) = (cube.height(), cube.width(), cube.bands());
    let mut coords = Vec::new();
    let mut spectra = Vec::new();
    let mut norms = Vec::new();
    let mut index = Array2::from_elem((h, w), usize::MAX);
    for r in 0..h {
        for c in 0..w {
            if !cube.is_valid(r, c) {
                continue;
            }
            index[[r, c]] = coords.len();
            coords.push((r as u32, c as u32));
            let mut norm = 0.0f64;
            for b in 0..bands {
                let v = cube.data()[[r, c, b]] as f64;
                spectra.push(v);
                norm += v * v;
            }
            norms.push(norm.sqrt());
        }
    }
    PixelData {
        coords,
        spectra,
        norms,
        bands,
        index,
    }
}

fn sam_fast(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        // degenerate all-zero spectrum: treat as maximally distant unless
        // both are zero
        return if na == nb { 0.0 } else { std::f64::consts::FRAC_PI_2 };
    }
    let mut dot = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

struct Center {
    row: f64,
    col: f64,
    spectrum: Vec<f64>,
    norm: f64,
}

/// SLIC segmentation of the valid pixels of `cube`.
pub fn slic_segment(
    cube: &HsiCube,
    target_pixels_per_tile: usize,
    compactness: f64,
    max_iters: usize,
) -> Result<TileMap> {
    if target_pixels_per_tile < 16 {
        return Err(HsiError::invalid("target tile size must be at least 16"));
    }
    let px = collect_pixels(cube);
    if px.coords.is_empty() {
        return Err(HsiError::invalid("cube has no valid pixels"));
    }
    let bands = px.bands;
    let spacing = (target_pixels_per_tile as f64).sqrt();

    // seed centers on a regular grid over the valid-pixel bounding box,
    // snapped to the nearest valid pixel in a local window
    let r_min = px.coords.iter().map(|p| p.0).min().unwrap() as f64;
    let r_max = px.coords.iter().map(|p| p.0).max().unwrap() as f64;
    let c_min = px.coords.iter().map(|p| p.1).min().unwrap() as f64;
    let c_max = px.coords.iter().map(|p| p.1).max().unwrap() as f64;
    let mut centers: Vec<Center> = Vec::new();
    let snap = |r0: f64, c0: f64| -> Option<usize> {
        let win = spacing.ceil() as i64 / 2 + 1;
        let mut best: Option<(f64, usize)> = None;
        for dr in -win..=win {
            for dc in -win..=win {
                let r = r0.round() as i64 + dr;
                let c = c0.round() as i64 + dc;
                if r < 0 || c < 0 || r as usize >= px.index.dim().0 || c as usize >= px.index.dim().1
                {
                    continue;
                }
                let idx = px.index[[r as usize, c as usize]];
                if idx == usize::MAX {
                    continue;
                }
                let d = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, idx));
                }
            }
        }
        best.map(|(_, i)| i)
    };
    let mut gr = r_min + spacing / 2.0;
    while gr <= r_max + spacing / 2.0 {
        let mut gc = c_min + spacing / 2.0;
        while gc <= c_max + spacing / 2.0 {
            if let Some(idx) = snap(gr, gc) {
                let (r, c) = px.coords[idx];
                let spec = px.spectra[idx * bands..(idx + 1) * bands].to_vec();
                let norm = px.norms[idx];
                // avoid duplicate centers snapping to the same pixel
                if !centers
                    .iter()
                    .any(|ct| ct.row == r as f64 && ct.col == c as f64)
                {
                    centers.push(Center {
                        row: r as f64,
                        col: c as f64,
                        spectrum: spec,
                        norm,
                    });
                }
            }
            gc += spacing;
        }
        gr += spacing;
    }
    if centers.is_empty() {
        return Err(HsiError::invalid("failed to seed any SLIC centers"));
    }

    let assign_pass = |centers: &[Center]| -> (Vec<u32>, f64) {
        // spatial bucket grid over centers for 2S-window lookup
        let cell = spacing.max(1.0);
        let gh = ((r_max / cell) as usize) + 2;
        let gw = ((c_max / cell) as usize) + 2;
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); gh * gw];
        for (i, ct) in centers.iter().enumerate() {
            let gr = (ct.row / cell) as usize;
            let gc = (ct.col / cell) as usize;
            buckets[gr * gw + gc].push(i);
        }
        let results: Vec<(u32, f64)> = (0..px.coords.len())
            .into_par_iter()
            .map(|i| {
                let (r, c) = px.coords[i];
                let spec = &px.spectra[i * bands..(i + 1) * bands];
                let norm = px.norms[i];
                let gr = (r as f64 / cell) as i64;
                let gc = (c as f64 / cell) as i64;
                let mut best = (NO_TILE, f64::INFINITY);
                for dgr in -2i64..=2 {
                    for dgc in -2i64..=2 {
                        let (br, bc) = (gr + dgr, gc + dgc);
                        if br < 0 || bc < 0 || br as usize >= gh || bc as usize >= gw {
                            continue;
                        }
                        for &ci in &buckets[br as usize * gw + bc as usize] {
                            let ct = &centers[ci];
                            let dr = ct.row - r as f64;
                            let dc = ct.col - c as f64;
                            let spatial = (dr * dr + dc * dc).sqrt();
                            if spatial > 2.0 * spacing * 1.5 {
                                continue;
                            }
                            let d = sam_fast(spec, norm, &ct.spectrum, ct.norm)
                                + compactness * spatial / spacing;
                            if d < best.1 || (d == best.1 && (ci as u32) < best.0) {
                                best = (ci as u32, d);
                            }
                        }
                    }
                }
                if best.0 == NO_TILE {
                    // no center in the window: fall back to a full scan
                    for (ci, ct) in centers.iter().enumerate() {
                        let dr = ct.row - r as f64;
                        let dc = ct.col - c as f64;
                        let spatial = (dr * dr + dc * dc).sqrt();
                        let d = sam_fast(spec, norm, &ct.spectrum, ct.norm)
                            + compactness * spatial / spacing;
                        if d < best.1 {
                            best = (ci as u32, d);
                        }
                    }
                }
                best
            })
            .collect();
        let assignment: Vec<u32> = results.iter().map(|r| r.0).collect();
        let objective: f64 = results.iter().map(|r| r.1).sum();
        (assignment, objective)
    };

    let mut assignment;
    let mut objective_history = Vec::new();
    let (mut cur_assign, mut cur_obj) = assign_pass(&centers);
    objective_history.push(cur_obj);
    assignment = cur_assign.clone();
    for _iter in 0..max_iters {
        // center update: mean spectrum and centroid per cluster, fixed
        // accumulation order (valid-pixel index order) for determinism
        let k = centers.len();
        let mut acc_spec = vec![0.0f64; k * bands];
        let mut acc_pos = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, &a) in cur_assign.iter().enumerate() {
            let ci = a as usize;
            let (r, c) = px.coords[i];
            let spec = &px.spectra[i * bands..(i + 1) * bands];
            for b in 0..bands {
                acc_spec[ci * bands + b] += spec[b];
            }
            acc_pos[ci].0 += r as f64;
            acc_pos[ci].1 += c as f64;
            acc_pos[ci].2 += 1;
        }
        let mut max_move = 0.0f64;
        for ci in 0..k {
            let n = acc_pos[ci].2;
            if n == 0 {
                continue; // empty cluster keeps its previous state
            }
            let inv = 1.0 / n as f64;
            let mut norm = 0.0f64;
            for b in 0..bands {
                let v = acc_spec[ci * bands + b] * inv;
                centers[ci].spectrum[b] = v;
                norm += v * v;
            }
            centers[ci].norm = norm.sqrt();
            let nr = acc_pos[ci].0 * inv;
            let nc = acc_pos[ci].1 * inv;
            let movement = ((nr - centers[ci].row).powi(2) + (nc - centers[ci].col).powi(2)).sqrt();
            max_move = max_move.max(movement);
            centers[ci].row = nr;
            centers[ci].col = nc;
        }
        let (next_assign, next_obj) = assign_pass(&centers);
        if next_obj > cur_obj {
            // keep the better state; guarantees a non-increasing history
            break;
        }
        cur_assign = next_assign;
        cur_obj = next_obj;
        objective_history.push(cur_obj);
        assignment = cur_assign.clone();
        if max_move < 0.5 {
            break;
        }
    }

    let tile_map = finalize(cube, &px, &assignment, objective_history)?;
    Ok(tile_map)
}

/// Connectivity repair + tile construction from a raw per-pixel cluster
/// assignment.
fn finalize(
    cube: &HsiCube,
    px: &PixelData,
    assignment: &[u32],
    objective_history: Vec<f64>,
) -> Result<TileMap> {
    let (h, w) = (cube.height(), cube.width());
    // connected components (4-connectivity) of equal assignment
    let mut comp = vec![usize::MAX; px.coords.len()];
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut comp_cluster: Vec<u32> = Vec::new();
    for start in 0..px.coords.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let cid = comp_pixels.len();
        let cluster = assignment[start];
        let mut stack = vec![start];
        comp[start] = cid;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            let (r, c) = px.coords[i];
            let neighbors = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            for (nr, nc) in neighbors {
                if (nr as usize) >= h || (nc as usize) >= w {
                    continue;
                }
                let ni = px.index[[nr as usize, nc as usize]];
                if ni == usize::MAX || comp[ni] != usize::MAX || assignment[ni] != cluster {
                    continue;
                }
                comp[ni] = cid;
                stack.push(ni);
            }
        }
        comp_pixels.push(members);
        comp_cluster.push(cluster);
    }

    // the largest component of each cluster keeps the tile; smaller
    // fragments become orphans to merge
    let n_clusters = assignment.iter().map(|&a| a as usize + 1).max().unwrap_or(0);
    let mut keeper: Vec<Option<usize>> = vec![None; n_clusters];
    for (cid, members) in comp_pixels.iter().enumerate() {
        let cl = comp_cluster[cid] as usize;
        if keeper[cl].map_or(true, |k| comp_pixels[k].len() < members.len()) {
            keeper[cl] = Some(cid);
        }
    }
    // component -> final tile index; keepers first, in cluster order
    let mut comp_tile = vec![usize::MAX; comp_pixels.len()];
    let mut tile_sizes: Vec<usize> = Vec::new();
    let mut tile_of_pixel = vec![usize::MAX; px.coords.len()];
    for cl in 0..n_clusters {
        if let Some(k) = keeper[cl] {
            comp_tile[k] = tile_sizes.len();
            tile_sizes.push(comp_pixels[k].len());
        }
    }
    for (cid, members) in comp_pixels.iter().enumerate() {
        if comp_tile[cid] != usize::MAX {
            for &i in members {
                tile_of_pixel[i] = comp_tile[cid];
            }
        }
    }
    // merge orphans into the largest adjacent assigned tile; repeat while
    // progress is possible (orphans may initially touch only orphans)
    let mut orphans: Vec<usize> = (0..comp_pixels.len())
        .filter(|&c| comp_tile[c] == usize::MAX)
        .collect();
    while !orphans.is_empty() {
        let mut progressed = false;
        let mut remaining = Vec::new();
        for &cid in &orphans {
            let mut best: Option<(usize, usize)> = None; // (size, tile)
            for &i in &comp_pixels[cid] {
                let (r, c) = px.coords[i];
                let neighbors = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in neighbors {
                    if (nr as usize) >= h || (nc as usize) >= w {
                        continue;
                    }
                    let ni = px.index[[nr as usize, nc as usize]];
                    if ni == usize::MAX {
                        continue;
                    }
                    let t = tile_of_pixel[ni];
                    if t == usize::MAX {
                        continue;
                    }
                    let sz = tile_sizes[t];
                    if best.map_or(true, |(bs, bt)| sz > bs || (sz == bs && t < bt)) {
                        best = Some((sz, t));
                    }
                }
            }
            if let Some((_, t)) = best {
                for &i in &comp_pixels[cid] {
                    tile_of_pixel[i] = t;
                }
                tile_sizes[t] += comp_pixels[cid].len();
                comp_tile[cid] = t;
                progressed = true;
            } else {
                remaining.push(cid);
            }
        }
        if !progressed {
            // fully isolated fragments become their own tiles
            for cid in remaining.drain(..) {
                let t = tile_sizes.len();
                tile_sizes.push(comp_pixels[cid].len());
                for &i in &comp_pixels[cid] {
                    tile_of_pixel[i] = t;
                }
                comp_tile[cid] = t;
            }
            break;
        }
        orphans = remaining;
    }

    // build tiles
    let n_tiles = tile_sizes.len();
    let bands = px.bands;
    let mut pixels_per_tile: Vec<Vec<usize>> = vec![Vec::new(); n_tiles];
    for (i, &t) in tile_of_pixel.iter().enumerate() {
        pixels_per_tile[t].push(i);
    }
    let mut assignment_img = Array2::from_elem((h, w), NO_TILE);
    let mut tiles = Vec::with_capacity(n_tiles);
    for (tid, members) in pixels_per_tile.iter().enumerate() {
        debug_assert!(!members.is_empty());
        let mut mean = vec![0.0f64; bands];
        let mut bbox = (u32::MAX, u32::MAX, 0u32, 0u32);
        for &i in members {
            let (r, c) = px.coords[i];
            assignment_img[[r as usize, c as usize]] = tid as u32;
            bbox.0 = bbox.0.min(r);
            bbox.1 = bbox.1.min(c);
            bbox.2 = bbox.2.max(r);
            bbox.3 = bbox.3.max(c);
            let spec = &px.spectra[i * bands..(i + 1) * bands];
            for b in 0..bands {
                mean[b] += spec[b];
            }
        }
        let n = members.len() as f64;
        for v in &mut mean {
            *v /= n;
        }
        let mean_norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut sam_sum = 0.0f64;
        let mut l2_sum = 0.0f64;
        let mut intensity_sum = 0.0f64;
        for &i in members {
            let spec = &px.spectra[i * bands..(i + 1) * bands];
            sam_sum += sam_fast(spec, px.norms[i], &mean, mean_norm);
            let mut acc = 0.0f64;
            let mut isum = 0.0f64;
            for b in 0..bands {
                let d = spec[b] - mean[b];
                acc += d * d;
                isum += spec[b];
            }
            l2_sum += acc.sqrt();
            intensity_sum += isum / bands as f64;
        }
        tiles.push(Tile {
            id: tid as u32,
            pixels: members.iter().map(|&i| px.coords[i]).collect(),
            mean_spectrum: mean,
            mean_sam_uniformity: sam_sum / n,
            mean_l2_uniformity: l2_sum / n,
            mean_intensity: intensity_sum / n,
            label: TileLabel::Unlabeled,
            quality: false,
            bbox,
        });
    }
    Ok(TileMap {
        assignment: assignment_img,
        tiles,
        objective_history,
    })
}

impl TileMap {
    /// Annotate each tile with the unique class of its member pixels, or
    /// `Mixed` when members straddle an annotation boundary.
    pub fn label_tiles(&mut self, mask: &AnnotationMask) -> Result<()> {
        if mask.height() != self.assignment.dim().0 || mask.width() != self.assignment.dim().1 {
            return Err(HsiError::shape("mask shape differs from tile map"));
        }
        for tile in &mut self.tiles {
            let first = mask.label(tile.pixels[0].0 as usize, tile.pixels[0].1 as usize);
            let uniform = tile
                .pixels
                .iter()
                .all(|&(r, c)| mask.label(r as usize, c as usize) == first);
            tile.label = if uniform {
                TileLabel::Class(first)
            } else {
                TileLabel::Mixed
            };
        }
        Ok(())
    }

    /// Tab-separated tile statistics table.
    pub fn stats_tsv(&self) -> String {
        let mut out =
            String::from("tile\tsize\tlabel\tmean_sam\tmean_l2\tmean_intensity\tquality\n");
        for t in &self.tiles {
            let label = match t.label {
                TileLabel::Unlabeled => "-".to_string(),
                TileLabel::Class(c) => c.to_string(),
                TileLabel::Mixed => "mixed".to_string(),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                t.id,
                t.size(),
                label,
                t.mean_sam_uniformity,
                t.mean_l2_uniformity,
                t.mean_intensity,
                if t.quality { "pass" } else { "fail" }
            ));
        }
        out
    }

    /// Serialize the tile-index image: magic `HSIX`, height u32, width
    /// u32, u32 tile id per pixel row-major (`NO_TILE` for unassigned).
    pub fn save_index_image(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write;
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        w.write_all(b"HSIX")?;
        let (h, wd) = self.assignment.dim();
        w.write_all(&(h as u32).to_le_bytes())?;
        w.write_all(&(wd as u32).to_le_bytes())?;
        for v in self.assignment.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Percentile with linear interpolation between order statistics.
fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.len() == 1 {
        return v[0];
    }
    let rank = pct / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

/// Quality filtration: mixed tiles are discarded first, then a tile
/// passes iff it is simultaneously within the lowest `sam_pctl` percent
/// in SAM uniformity, the lowest `l2_pctl` percent in L2 uniformity, and
/// the `[intensity_lo, intensity_hi]` percentile range in mean intensity.
/// Thresholds are computed per image over the candidate (pure) tiles and
/// comparisons are inclusive.
pub fn filter_tiles(
    map: &TileMap,
    sam_pctl: f64,
    l2_pctl: f64,
    intensity_lo: f64,
    intensity_hi: f64,
) -> Result<TileMap> {
    if map.tiles.is_empty() {
        return Err(HsiError::invalid("empty tile list"));
    }
    for p in [sam_pctl, l2_pctl, intensity_lo, intensity_hi] {
        if !(0.0..=100.0).contains(&p) {
            return Err(HsiError::invalid("percentiles must be in [0, 100]"));
        }
    }
    if intensity_lo >= intensity_hi {
        return Err(HsiError::invalid("inverted intensity percentile bounds"));
    }
    let candidates: Vec<&Tile> = map
        .tiles
        .iter()
        .filter(|t| matches!(t.label, TileLabel::Class(_)))
        .collect();
    let mut out = map.clone();
    if candidates.is_empty() {
        for t in &mut out.tiles {
            t.quality = false;
        }
        return Ok(out);
    }
    let sams: Vec<f64> = candidates.iter().map(|t| t.mean_sam_uniformity).collect();
    let l2s: Vec<f64> = candidates.iter().map(|t| t.mean_l2_uniformity).collect();
    let ints: Vec<f64> = candidates.iter().map(|t| t.mean_intensity).collect();
    let sam_thr = percentile(&sams, sam_pctl);
    let l2_thr = percentile(&l2s, l2_pctl);
    let int_lo = percentile(&ints, intensity_lo);
    let int_hi = percentile(&ints, intensity_hi);
    for t in &mut out.tiles {
        t.quality = matches!(t.label, TileLabel::Class(_))
            && t.mean_sam_uniformity <= sam_thr
            && t.mean_l2_uniformity <= l2_thr
            && t.mean_intensity >= int_lo
            && t.mean_intensity <= int_hi;
    }
    Ok(out)
}

/// Copy the selected channels of a tile's member pixels into a centered
/// 40 x 40 patch, zeros elsewhere.
pub fn extract_patch(cube: &HsiCube, tile: &Tile, channels: &[usize]) -> Result<PaddedPatch> {
    if channels.is_empty() {
        return Err(HsiError::invalid("empty channel list"));
    }
    for &ch in channels {
        if ch >= cube.bands() {
            return Err(HsiError::invalid(format!("channel {ch} out of range")));
        }
    }
    let bh = tile.bbox_height();
    let bw = tile.bbox_width();
    if bh > PATCH_SIZE || bw > PATCH_SIZE {
        return Err(HsiError::invalid(format!(
            "tile {} bounding box {bh}x{bw} exceeds {PATCH_SIZE}x{PATCH_SIZE}",
            tile.id
        )));
    }
    let off_r = (PATCH_SIZE - bh) / 2;
    let off_c = (PATCH_SIZE - bw) / 2;
    let mut data = Array3::<f32>::zeros((PATCH_SIZE, PATCH_SIZE, channels.len()));
    for &(r, c) in &tile.pixels {
        let pr = off_r + (r - tile.bbox.0) as usize;
        let pc = off_c + (c - tile.bbox.1) as usize;
        for (k, &ch) in channels.iter().enumerate() {
            data[[pr, pc, k]] = cube.data()[[r as usize, c as usize, ch]];
        }
    }
    Ok(PaddedPatch {
        data,
        tile_id: tile.id,
        label: tile.label,
    })
}

/// Flood-fill connectivity check used by invariants and tests.
pub fn tile_is_connected(tile: &Tile) -> bool {
    use std::collections::HashSet;
    let set: HashSet<(u32, u32)> = tile.pixels.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut stack = vec![tile.pixels[0]];
    seen.insert(tile.pixels[0]);
    while let Some((r, c)) = stack.pop() {
        for (nr, nc) in [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ] {
            if set.contains(&(nr, nc)) && seen.insert((nr, nc)) {
                stack.push((nr, nc));
            }
        }
    }
    seen.len() == tile.pixels.len()
}
