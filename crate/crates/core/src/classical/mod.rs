//! Off-the-shelf face recognition baselines: Eigenfaces, Fisherfaces and
//! local binary pattern histograms.
//!
//! Every recognizer scores a probe against each class with "higher is
//! better": the negated distance to the nearest gallery sample of that class.

mod eigenfaces;
mod fisherfaces;
mod lbph;

pub use eigenfaces::{eigenfaces_train, EigenfacesModel, DEFAULT_EIGEN_COMPONENTS};
pub use fisherfaces::{fisherfaces_train, FisherfacesModel};
pub use lbph::{
    chi_square, lbp_code, lbph_histogram, lbph_train, LbphModel, DEFAULT_LBPH_GRID,
    LBP_NEIGHBORS, LBP_RADIUS,
};

use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset};
use crate::numerics::{gram_matrix, sym_eigen, Matrix};
use crate::ABSENT_SCORE;

/// Per-class score: minus the smallest Euclidean distance from `probe` to a
/// gallery vector of that class. Classes without gallery vectors get
/// [`ABSENT_SCORE`].
pub fn nearest_class_scores(
    gallery: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
    probe: &[f64],
) -> Vec<f64> {
    nearest_class_scores_by(gallery, labels, class_count, |g| {
        g.iter()
            .zip(probe)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

pub(crate) fn nearest_class_scores_by(
    gallery: &[Vec<f64>],
    labels: &[usize],
    class_count: usize,
    distance: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; class_count];
    for (g, &label) in gallery.iter().zip(labels) {
        let dist = distance(g);
        if dist < best[label] {
            best[label] = dist;
        }
    }
    best.into_iter()
        .map(|d| if d.is_finite() { -d } else { ABSENT_SCORE })
        .collect()
}

/// Column-per-sample data matrix with the mean face removed.
pub(crate) fn centered_data(ds: &GalleryDataset) -> (Matrix, Vec<f64>) {
    let n = ds.len();
    let d = ds.samples()[0].image.pixels().len();
    let mut mean = vec![0.0; d];
    for s in ds.samples() {
        for (m, &p) in mean.iter_mut().zip(s.image.pixels()) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut x = Matrix::zeros(d, n);
    for (j, s) in ds.samples().iter().enumerate() {
        for (i, (&p, &m)) in s.image.pixels().iter().zip(&mean).enumerate() {
            x[(i, j)] = p - m;
        }
    }
    (x, mean)
}

/// Principal directions of the columns of `centered` via the `n × n` Gram
/// matrix. Returns at most `k` orthonormal `d`-dimensional components (fewer
/// when the data has lower rank) and their variances.
pub(crate) fn snapshot_pca(centered: &Matrix, k: usize) -> Result<(Matrix, Vec<f64>)> {
    let (d, n) = (centered.rows(), centered.cols());
    let eig = sym_eigen(&gram_matrix(centered))?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let tol = 1e-10 * top.max(0.0);
    let kept: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > tol && eig.eigenvalues[i] > 0.0)
        .take(k)
        .collect();
    let mut components = Matrix::zeros(d, kept.len());
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(kept.len());
    for &i in &kept {
        let u = eig.eigenvector(i);
        let mut v = centered.matvec(&u)?;
        let s = eig.eigenvalues[i].sqrt();
        for x in &mut v {
            *x /= s;
        }
        // one modified Gram-Schmidt pass against numerical drift
        for prev in &cols {
            let p = crate::numerics::dot(prev, &v);
            for (x, q) in v.iter_mut().zip(prev) {
                *x -= p * q;
            }
        }
        let norm = crate::numerics::norm2(&v);
        for x in &mut v {
            *x /= norm;
        }
        cols.push(v);
    }
    for (j, c) in cols.iter().enumerate() {
        components.set_column(j, c);
    }
    let variances = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok((components, variances))
}

pub(crate) fn check_probe(expected: (usize, usize), probe: &FaceImage) -> Result<()> {
    if probe.dims() != expected {
        return Err(Error::invalid(format!(
            "probe is {}x{}, model expects {}x{}",
            probe.width(),
            probe.height(),
            expected.0,
            expected.1
        )));
    }
    Ok(())
}

/// `Wᵀ(x − mean)` for a `d × K` basis `W`.
pub(crate) fn project(basis: &Matrix, mean: &[f64], x: &[f64]) -> Vec<f64> {
    let centered: Vec<f64> = x.iter().zip(mean).map(|(a, m)| a - m).collect();
    basis.tr_matvec(&centered).expect("basis rows match image size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_neighbor_in_one_dimension() {
        let gallery = vec![vec![0.0], vec![10.0]];
        let scores = nearest_class_scores(&gallery, &[0, 1], 2, &[4.0]);
        assert_eq!(scores, vec![-4.0, -6.0]);
    }

    #[test]
    fn absent_classes_score_lowest() {
        let gallery = vec![vec![0.0]];
        let scores = nearest_class_scores(&gallery, &[1], 3, &[1.0]);
        assert_eq!(scores, vec![ABSENT_SCORE, -1.0, ABSENT_SCORE]);
    }
}
