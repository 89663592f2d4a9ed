use std::f64::consts::FRAC_1_SQRT_2;

use super::{check_probe, nearest_class_scores_by};
use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset};

pub const LBP_RADIUS: usize = 1;
pub const LBP_NEIGHBORS: usize = 8;
pub const DEFAULT_LBPH_GRID: (usize, usize) = (8, 8);

const BINS: usize = 256;

// Neighbor offsets (dx, dy) at radius 1, starting east and turning
// counterclockwise as seen on screen (image y grows downwards).
const OFFSETS: [(f64, f64); LBP_NEIGHBORS] = [
    (1.0, 0.0),
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (0.0, -1.0),
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (0.0, 1.0),
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
];

/// 8-neighbor local binary pattern at `(x, y)`: bit `b` is set when neighbor
/// `b` is at least as bright as the center. Diagonal neighbors are bilinearly
/// interpolated.
pub fn lbp_code(img: &FaceImage, x: usize, y: usize) -> Result<u8> {
    if x < 1 || y < 1 || x + 1 >= img.width() || y + 1 >= img.height() {
        return Err(Error::invalid(format!(
            "LBP needs an interior pixel, got ({x}, {y}) in {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(code_unchecked(img, x, y))
}

#[inline]
fn code_unchecked(img: &FaceImage, x: usize, y: usize) -> u8 {
    let center = img.get(x, y);
    let mut code = 0u8;
    for (b, &(dx, dy)) in OFFSETS.iter().enumerate() {
        let v = if dx.fract() == 0.0 && dy.fract() == 0.0 {
            img.get((x as f64 + dx) as usize, (y as f64 + dy) as usize)
        } else {
            img.sample_bilinear(x as f64 + dx, y as f64 + dy)
        };
        if v >= center {
            code |= 1 << b;
        }
    }
    code
}

// Interior coordinate -> cell index; remainder pixels go to the last cells.
fn cell_map(len: usize, cells: usize) -> Vec<usize> {
    let base = len / cells;
    let rem = len % cells;
    let mut map = Vec::with_capacity(len);
    for c in 0..cells {
        let size = base + usize::from(c >= cells - rem);
        map.extend(std::iter::repeat_n(c, size));
    }
    map
}

/// Concatenated per-cell 256-bin histograms of LBP codes over the interior.
pub fn lbph_histogram(img: &FaceImage, grid: (usize, usize)) -> Result<Vec<f64>> {
    let (gx, gy) = grid;
    if gx == 0 || gy == 0 {
        return Err(Error::invalid("LBPH grid must be at least 1x1"));
    }
    let iw = img.width().saturating_sub(2);
    let ih = img.height().saturating_sub(2);
    if iw < gx || ih < gy {
        return Err(Error::invalid(format!(
            "LBPH grid {gx}x{gy} exceeds the {iw}x{ih} interior"
        )));
    }
    let xs = cell_map(iw, gx);
    let ys = cell_map(ih, gy);
    let mut hist = vec![0.0; gx * gy * BINS];
    for (iy, &cy) in ys.iter().enumerate() {
        for (ix, &cx) in xs.iter().enumerate() {
            let code = code_unchecked(img, ix + 1, iy + 1) as usize;
            hist[(cy * gx + cx) * BINS + code] += 1.0;
        }
    }
    Ok(hist)
}

/// χ² distance `Σ (h − g)² / (h + g)`, with empty bins contributing 0.
pub fn chi_square(h: &[f64], g: &[f64]) -> f64 {
    h.iter()
        .zip(g)
        .map(|(&a, &b)| {
            let s = a + b;
            if s == 0.0 {
                0.0
            } else {
                (a - b) * (a - b) / s
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbphModel {
    pub dims: (usize, usize),
    pub grid: (usize, usize),
    pub radius: usize,
    pub neighbors: usize,
    pub gallery_histograms: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
    pub class_count: usize,
}

pub fn lbph_train(train: &GalleryDataset, grid: (usize, usize)) -> Result<LbphModel> {
    let dims = train
        .image_dims()
        .ok_or_else(|| Error::invalid("LBPH needs at least one training image"))?;
    let gallery_histograms = train
        .samples()
        .iter()
        .map(|s| lbph_histogram(&s.image, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(LbphModel {
        dims,
        grid,
        radius: LBP_RADIUS,
        neighbors: LBP_NEIGHBORS,
        gallery_histograms,
        gallery_labels: train.labels(),
        class_count: train.class_count(),
    })
}

impl LbphModel {
    pub fn score(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        check_probe(self.dims, probe)?;
        let h = lbph_histogram(probe, self.grid)?;
        Ok(nearest_class_scores_by(
            &self.gallery_histograms,
            &self.gallery_labels,
            self.class_count,
            |g| chi_square(&h, g),
        ))
    }
}
