//! Patch tiling and per-patch normalization for the inpainting pipeline.
//!
//! A K×N matrix is covered by a regular grid of overlapping patches. Patches
//! whose window overhangs the matrix edge are completed according to the
//! grid's padding policy; on reassembly every cell takes the arithmetic mean
//! of all patch values that cover it and padding regions are discarded.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Minimum per-patch gain, used when a patch is constant.
pub const GAIN_FLOOR: f64 = 1e-8;

/// How to fill patch cells that fall outside the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadPolicy {
    /// Mirror about the last valid index (no edge duplication).
    Reflect,
    Zero,
}

/// Regular tiling grid. Strides must satisfy 1 ≤ stride ≤ patch dimension,
/// which makes consecutive windows overlap by `dimension − stride ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_height: usize,
    pub patch_width: usize,
    pub stride_rows: usize,
    pub stride_cols: usize,
    pub pad_policy: PadPolicy,
}

impl PatchGrid {
    pub fn new(
        patch_height: usize,
        patch_width: usize,
        stride_rows: usize,
        stride_cols: usize,
        pad_policy: PadPolicy,
    ) -> Result<Self> {
        if patch_height == 0 || patch_width == 0 {
            return Err(Error::invalid("patch dimensions must be positive"));
        }
        if stride_rows == 0 || stride_rows > patch_height {
            return Err(Error::invalid(format!(
                "row stride {stride_rows} must be in 1..={patch_height}"
            )));
        }
        if stride_cols == 0 || stride_cols > patch_width {
            return Err(Error::invalid(format!(
                "column stride {stride_cols} must be in 1..={patch_width}"
            )));
        }
        Ok(Self { patch_height, patch_width, stride_rows, stride_cols, pad_policy })
    }

    /// Grid with patch dimensions clamped to the matrix shape. Keeps the
    /// tiling applicable to arrays narrower than the configured patch, e.g.
    /// a 16-microphone array under a 64-column patch.
    pub fn clamped_to(&self, rows: usize, cols: usize) -> Result<PatchGrid> {
        let ph = self.patch_height.min(rows.max(1));
        let pw = self.patch_width.min(cols.max(1));
        PatchGrid::new(
            ph,
            pw,
            self.stride_rows.min(ph),
            self.stride_cols.min(pw),
            self.pad_policy,
        )
    }
}

/// Top-left coordinate of one patch within the output matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub row: usize,
    pub col: usize,
}

/// Affine scale of one normalized patch: `normalized = (x − offset) / gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScale {
    pub offset: f64,
    pub gain: f64,
}

impl PatchScale {
    /// Scale derived from the value range `[min, max]`, mapping it onto
    /// [−1, 1]. Degenerate ranges fall back to [`GAIN_FLOOR`].
    pub fn from_range(min: f64, max: f64) -> PatchScale {
        let offset = 0.5 * (max + min);
        let gain = (0.5 * (max - min)).max(GAIN_FLOOR);
        PatchScale { offset, gain }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.offset) / self.gain
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.gain + self.offset
    }
}

/// Start offsets along one axis: 0, stride, 2·stride, … until the windows
/// cover the whole extent. The last window may overhang into padding.
fn axis_placements(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    if dim <= patch {
        return vec![0];
    }
    let count = (dim - patch).div_ceil(stride) + 1;
    (0..count).map(|i| i * stride).collect()
}

/// Map a possibly out-of-range index to a source index under the padding
/// policy. `None` means the cell is zero-filled.
pub fn pad_source_index(idx: isize, dim: usize, policy: PadPolicy) -> Option<usize> {
    debug_assert!(dim >= 1);
    if idx >= 0 && (idx as usize) < dim {
        return Some(idx as usize);
    }
    match policy {
        PadPolicy::Zero => None,
        PadPolicy::Reflect => {
            if dim == 1 {
                return Some(0);
            }
            // Mirror about both edges until the index lands inside.
            let period = 2 * (dim as isize - 1);
            let mut i = idx.rem_euclid(period);
            if i >= dim as isize {
                i = period - i;
            }
            Some(i as usize)
        }
    }
}

/// Split a matrix into overlapping patches on the grid. Returns the patches
/// together with their placements; every matrix cell is covered by at least
/// one patch.
pub fn tile_patches(
    matrix: &Array2<f64>,
    grid: &PatchGrid,
) -> Result<(Vec<Array2<f64>>, Vec<Placement>)> {
    let (rows, cols) = matrix.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("cannot tile an empty matrix"));
    }
    let grid = grid.clamped_to(rows, cols)?;
    let row_starts = axis_placements(rows, grid.patch_height, grid.stride_rows);
    let col_starts = axis_placements(cols, grid.patch_width, grid.stride_cols);

    let mut patches = Vec::with_capacity(row_starts.len() * col_starts.len());
    let mut placements = Vec::with_capacity(patches.capacity());
    for &r0 in &row_starts {
        for &c0 in &col_starts {
            let mut patch = Array2::zeros((grid.patch_height, grid.patch_width));
            for pr in 0..grid.patch_height {
                let sr = pad_source_index((r0 + pr) as isize, rows, grid.pad_policy);
                for pc in 0..grid.patch_width {
                    let sc = pad_source_index((c0 + pc) as isize, cols, grid.pad_policy);
                    patch[(pr, pc)] = match (sr, sc) {
                        (Some(r), Some(c)) => matrix[(r, c)],
                        _ => 0.0,
                    };
                }
            }
            patches.push(patch);
            placements.push(Placement { row: r0, col: c0 });
        }
    }
    Ok((patches, placements))
}

/// Reassemble patches into a matrix of the given shape. Each cell becomes the
/// arithmetic mean of every patch value covering it; patch cells beyond the
/// output shape (padding) are dropped.
pub fn untile_patches(
    patches: &[Array2<f64>],
    placements: &[Placement],
    shape: (usize, usize),
) -> Result<Array2<f64>> {
    if patches.len() != placements.len() {
        return Err(Error::invalid(format!(
            "{} patches but {} placements",
            patches.len(),
            placements.len()
        )));
    }
    let (rows, cols) = shape;
    let mut sum = Array2::<f64>::zeros(shape);
    let mut count = Array2::<f64>::zeros(shape);
    for (patch, place) in patches.iter().zip(placements) {
        if place.row >= rows || place.col >= cols {
            return Err(Error::invalid(format!(
                "placement ({}, {}) outside output shape {}x{}",
                place.row, place.col, rows, cols
            )));
        }
        let (ph, pw) = patch.dim();
        for pr in 0..ph {
            let r = place.row + pr;
            if r >= rows {
                break;
            }
            for pc in 0..pw {
                let c = place.col + pc;
                if c >= cols {
                    break;
                }
                sum[(r, c)] += patch[(pr, pc)];
                count[(r, c)] += 1.0;
            }
        }
    }
    if count.iter().any(|&c| c == 0.0) {
        return Err(Error::invalid("placements do not cover the output shape"));
    }
    Ok(sum / &count)
}

/// Map a patch affinely onto [−1, 1]. Constant patches come back all-zero
/// with the gain floored.
pub fn normalize_patch(patch: &Array2<f64>) -> (Array2<f64>, PatchScale) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in patch.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    let scale = PatchScale::from_range(min, max);
    let normalized = patch.mapv(|v| scale.normalize(v).clamp(-1.0, 1.0));
    (normalized, scale)
}

pub fn denormalize_patch(patch: &Array2<f64>, scale: &PatchScale) -> Array2<f64> {
    patch.mapv(|v| scale.denormalize(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-5.0..5.0))
    }

    #[test]
    fn exact_fit_yields_single_patch() {
        let m = random_matrix(64, 64, 1);
        let grid = PatchGrid::new(64, 64, 64, 64, PadPolicy::Reflect).unwrap();
        let (patches, placements) = tile_patches(&m, &grid).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(placements[0], Placement { row: 0, col: 0 });
    }

    #[test]
    fn row_overlap_placement_count() {
        // ceil((128−64)/32) + 1 = 3 placements at rows {0, 32, 64}
        let m = random_matrix(128, 64, 2);
        let grid = PatchGrid::new(64, 64, 32, 64, PadPolicy::Reflect).unwrap();
        let (_, placements) = tile_patches(&m, &grid).unwrap();
        let rows: Vec<usize> = placements.iter().map(|p| p.row).collect();
        assert_eq!(rows, vec![0, 32, 64]);
    }

    #[test]
    fn ula_tiling_covers_everything() {
        // 2048×16 with a 64×64 patch clamps the width to 16 and needs
        // (2048−64)/32 + 1 = 63 placements. Brute-force the coverage.
        let m = random_matrix(2048, 16, 3);
        let grid = PatchGrid::new(64, 64, 32, 64, PadPolicy::Reflect).unwrap();
        let (patches, placements) = tile_patches(&m, &grid).unwrap();
        assert_eq!(patches.len(), 63);
        assert!(patches.iter().all(|p| p.dim() == (64, 16)));
        let mut covered = Array2::<u32>::zeros((2048, 16));
        for p in &placements {
            for r in p.row..(p.row + 64).min(2048) {
                for c in p.col..(p.col + 16).min(16) {
                    covered[(r, c)] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&c| c >= 1));
    }

    #[test]
    fn untile_is_inverse_of_tile() {
        let m = random_matrix(100, 16, 4);
        let grid = PatchGrid::new(32, 8, 16, 4, PadPolicy::Reflect).unwrap();
        let (patches, placements) = tile_patches(&m, &grid).unwrap();
        let back = untile_patches(&patches, &placements, m.dim()).unwrap();
        let max_err = (&back - &m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_err < 1e-12, "round-trip error {max_err}");
    }

    #[test]
    fn overlap_averages_values() {
        let a = Array2::from_elem((1, 1), 1.0);
        let b = Array2::from_elem((1, 1), 3.0);
        let placements = vec![Placement { row: 0, col: 0 }, Placement { row: 0, col: 0 }];
        let out = untile_patches(&[a, b], &placements, (1, 1)).unwrap();
        assert_eq!(out[(0, 0)], 2.0);
    }

    #[test]
    fn untile_rejects_bad_placement() {
        let p = Array2::from_elem((2, 2), 1.0);
        let err = untile_patches(&[p], &[Placement { row: 5, col: 0 }], (4, 4));
        assert!(err.is_err());
    }

    #[test]
    fn normalize_maps_endpoints() {
        let patch = ndarray::arr2(&[[-3.0, 1.0], [5.0, 1.0]]);
        let (norm, scale) = normalize_patch(&patch);
        assert_eq!(scale.offset, 1.0);
        assert_eq!(scale.gain, 4.0);
        assert_eq!(norm[(1, 0)], 1.0);
        assert_eq!(norm[(0, 0)], -1.0);
    }

    #[test]
    fn normalize_constant_patch_uses_gain_floor() {
        let patch = Array2::zeros((4, 4));
        let (norm, scale) = normalize_patch(&patch);
        assert!(norm.iter().all(|&v| v == 0.0));
        assert_eq!(scale.gain, GAIN_FLOOR);
        let back = denormalize_patch(&norm, &scale);
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_round_trip() {
        let patch = random_matrix(16, 8, 5);
        let (norm, scale) = normalize_patch(&patch);
        assert!(norm.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let back = denormalize_patch(&norm, &scale);
        for (a, b) in back.iter().zip(patch.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn reflect_padding_mirrors_without_duplication() {
        assert_eq!(pad_source_index(4, 4, PadPolicy::Reflect), Some(2));
        assert_eq!(pad_source_index(5, 4, PadPolicy::Reflect), Some(1));
        assert_eq!(pad_source_index(-1, 4, PadPolicy::Reflect), Some(1));
        assert_eq!(pad_source_index(3, 4, PadPolicy::Reflect), Some(3));
        assert_eq!(pad_source_index(4, 4, PadPolicy::Zero), None);
        assert_eq!(pad_source_index(0, 1, PadPolicy::Reflect), Some(0));
        assert_eq!(pad_source_index(7, 1, PadPolicy::Reflect), Some(0));
    }
}
