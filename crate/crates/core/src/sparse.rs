//! Two-phase sparse-reconstruction classifier.
//!
//! Phase 1 reconstructs the probe from every gallery face and keeps the `M`
//! faces whose individual contribution `aᵢxᵢ` deviates least from the probe.
//! Phase 2 reconstructs the probe again from those `M` faces only, sums the
//! contributions per class and scores each class by its deviation from the
//! probe.

use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset};
use crate::numerics::{norm2, Matrix, RidgeSolver, DEFAULT_RIDGE};
use crate::ABSENT_SCORE;

/// Fraction of the gallery kept for the second phase.
pub const DEFAULT_M_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseConfig {
    pub m_fraction: f64,
    pub ridge: f64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            m_fraction: DEFAULT_M_FRACTION,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl SparseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_fraction > 0.0 && self.m_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "m_fraction must lie in (0, 1], got {}",
                self.m_fraction
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }

    /// `M = max(1, ⌊m_fraction·n⌋)`.
    pub fn selection_size(&self, n: usize) -> usize {
        ((self.m_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n)
    }
}

#[derive(Debug, Clone)]
pub struct SparseModel {
    pub dims: (usize, usize),
    /// `d × n`, one unit-norm column per gallery face.
    pub gallery: Matrix,
    pub gallery_labels: Vec<usize>,
    pub class_count: usize,
    pub config: SparseConfig,
    solver: RidgeSolver,
}

impl PartialEq for SparseModel {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.gallery == other.gallery
            && self.gallery_labels == other.gallery_labels
            && self.class_count == other.class_count
            && self.config == other.config
    }
}

/// Outcome of the first phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOne {
    pub coefficients: Vec<f64>,
    /// `eᵢ = ‖y − aᵢxᵢ‖²`
    pub deviations: Vec<f64>,
    /// Indices of the `M` smallest deviations, ascending by deviation.
    pub selected: Vec<usize>,
}

/// Per-class result of the second phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDecision {
    /// `−‖y − y_c‖²` for classes in the selection, [`ABSENT_SCORE`] otherwise.
    pub scores: Vec<f64>,
    /// Classes with no face among the selected ones.
    pub absent: Vec<usize>,
    pub phase_one: PhaseOne,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm2(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

impl SparseModel {
    /// Builds a model from raw gallery columns (`d × n`); columns are
    /// L2-normalized here.
    pub fn from_columns(
        dims: (usize, usize),
        columns: &[Vec<f64>],
        labels: Vec<usize>,
        class_count: usize,
        config: SparseConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = columns.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "sparse recognizer needs at least 2 gallery faces, got {n}"
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} >= class count {class_count}")));
        }
        let normalized: Vec<Vec<f64>> = columns.iter().map(|c| unit(c)).collect();
        if normalized.iter().any(|c| norm2(c) == 0.0) {
            return Err(Error::invalid("sparse recognizer: all-black gallery face"));
        }
        let refs: Vec<&[f64]> = normalized.iter().map(|c| c.as_slice()).collect();
        let gallery = Matrix::from_columns(&refs)?;
        let solver = RidgeSolver::new(&gallery, config.ridge)?;
        Ok(Self {
            dims,
            gallery,
            gallery_labels: labels,
            class_count,
            config,
            solver,
        })
    }

    pub fn train(train: &GalleryDataset, config: SparseConfig) -> Result<Self> {
        let dims = train
            .image_dims()
            .ok_or_else(|| Error::invalid("sparse recognizer needs training images"))?;
        let columns: Vec<Vec<f64>> = train
            .samples()
            .iter()
            .map(|s| s.image.pixels().to_vec())
            .collect();
        Self::from_columns(dims, &columns, train.labels(), train.class_count(), config)
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery.cols()
    }

    /// First phase on an already normalized probe vector.
    pub fn phase_one(&self, y: &[f64]) -> Result<PhaseOne> {
        let a = self.solver.solve(y)?;
        let n = self.gallery_size();
        let mut deviations = Vec::with_capacity(n);
        for (i, &ai) in a.iter().enumerate() {
            let e: f64 = (0..y.len())
                .map(|r| {
                    let diff = y[r] - ai * self.gallery[(r, i)];
                    diff * diff
                })
                .sum();
            deviations.push(e);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| deviations[i].total_cmp(&deviations[j]).then(i.cmp(&j)));
        order.truncate(self.config.selection_size(n));
        Ok(PhaseOne {
            coefficients: a,
            deviations,
            selected: order,
        })
    }

    /// Both phases on an already normalized probe vector.
    pub fn classify_vector(&self, y: &[f64]) -> Result<SparseDecision> {
        if y.len() != self.gallery.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.gallery.rows(),
                actual: y.len(),
            });
        }
        let phase_one = self.phase_one(y)?;
        let selected = &phase_one.selected;
        let sub = self.gallery.select_columns(selected);
        let b = RidgeSolver::new(&sub, self.config.ridge)?.solve(y)?;

        let d = y.len();
        let mut contributions = vec![None::<Vec<f64>>; self.class_count];
        for (col, (&idx, &coef)) in selected.iter().zip(&b).enumerate() {
            let class = self.gallery_labels[idx];
            let acc = contributions[class].get_or_insert_with(|| vec![0.0; d]);
            for (r, a) in acc.iter_mut().enumerate() {
                *a += coef * sub[(r, col)];
            }
        }
        let mut scores = vec![ABSENT_SCORE; self.class_count];
        let mut absent = Vec::new();
        for (c, contrib) in contributions.iter().enumerate() {
            match contrib {
                Some(yc) => {
                    let dev: f64 = y.iter().zip(yc).map(|(a, b)| (a - b) * (a - b)).sum();
                    scores[c] = -dev;
                }
                None => absent.push(c),
            }
        }
        Ok(SparseDecision {
            scores,
            absent,
            phase_one,
        })
    }

    /// Normalizes the probe and runs both phases.
    pub fn classify(&self, probe: &FaceImage) -> Result<SparseDecision> {
        if probe.dims() != self.dims {
            return Err(Error::invalid(format!(
                "probe is {:?}, model expects {:?}",
                probe.dims(),
                self.dims
            )));
        }
        self.classify_vector(&unit(probe.pixels()))
    }

    pub fn score(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        Ok(self.classify(probe)?.scores)
    }
}
