use log::info;

use super::{centered_data, check_probe, nearest_class_scores, project, snapshot_pca};
use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset};
use crate::numerics::{cholesky, solve_lower, solve_lower_transposed, sym_eigen, Matrix};

/// PCA followed by Fisher discriminant projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherfacesModel {
    pub dims: (usize, usize),
    pub mean_face: Vec<f64>,
    /// Combined `d × K` PCA·LDA basis.
    pub projection: Matrix,
    pub discriminant_values: Vec<f64>,
    pub projected_gallery: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
    pub class_count: usize,
}

/// Fits Fisherfaces: PCA down to `N − C` dimensions, then the directions
/// maximizing between-class over within-class scatter. Keeps every
/// discriminant direction, at most `C − 1`.
///
/// `C` counts the classes that actually have training samples.
pub fn fisherfaces_train(train: &GalleryDataset) -> Result<FisherfacesModel> {
    let labels = train.labels();
    let counts = train.class_counts();
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    let c = present.len();
    let n = train.len();
    if c < 2 {
        return Err(Error::invalid("Fisherfaces needs at least 2 classes"));
    }
    if n <= c {
        return Err(Error::invalid(format!(
            "Fisherfaces needs more samples than classes (N = {n}, C = {c})"
        )));
    }

    let (x, mean_face) = centered_data(train);
    let (pca, _) = snapshot_pca(&x, n - c)?;
    let p = pca.cols();
    if p == 0 {
        return Err(Error::invalid("Fisherfaces: training images have zero variance"));
    }
    let reduced: Vec<Vec<f64>> = (0..n)
        .map(|j| pca.tr_matvec(&x.column(j)).expect("shapes agree"))
        .collect();

    let mut class_means = vec![vec![0.0; p]; counts.len()];
    let mut overall = vec![0.0; p];
    for (y, &l) in reduced.iter().zip(&labels) {
        for i in 0..p {
            class_means[l][i] += y[i];
            overall[i] += y[i];
        }
    }
    for &cl in &present {
        for v in &mut class_means[cl] {
            *v /= counts[cl] as f64;
        }
    }
    for v in &mut overall {
        *v /= n as f64;
    }

    let mut sw = Matrix::zeros(p, p);
    for (y, &l) in reduced.iter().zip(&labels) {
        let diff: Vec<f64> = y.iter().zip(&class_means[l]).map(|(a, b)| a - b).collect();
        add_outer(&mut sw, &diff, 1.0);
    }
    let mut sb = Matrix::zeros(p, p);
    for &cl in &present {
        let diff: Vec<f64> = class_means[cl].iter().zip(&overall).map(|(a, b)| a - b).collect();
        add_outer(&mut sb, &diff, counts[cl] as f64);
    }

    let mut ridge = 1e-6 * sw.trace() / p as f64;
    if ridge <= 0.0 {
        ridge = 1e-6 * sb.trace().max(1e-12) / p as f64;
    }
    for i in 0..p {
        sw[(i, i)] += ridge;
    }

    // Symmetric form of S_w⁻¹S_b: with S_w = LLᵀ, eigenvectors u of
    // L⁻¹S_bL⁻ᵀ map to discriminants w = L⁻ᵀu.
    let l = cholesky(&sw)?;
    let tmp = solve_lower(&l, &sb);
    let m = solve_lower(&l, &tmp.transpose());
    let mut sym = m.clone();
    for i in 0..p {
        for j in 0..p {
            sym[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    let eig = sym_eigen(&sym)?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..p)
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * top && eig.eigenvalues[i] > 0.0)
        .take(c - 1)
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("Fisherfaces: classes have identical means"));
    }
    if keep.len() < c - 1 {
        info!("Fisherfaces: {} discriminant directions available (C - 1 = {})", keep.len(), c - 1);
    }
    let mut u = Matrix::zeros(p, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        u.set_column(col, &eig.eigenvector(i));
    }
    let w_lda = solve_lower_transposed(&l, &u);
    let projection = pca.matmul(&w_lda)?;

    let projected_gallery = train
        .samples()
        .iter()
        .map(|s| project(&projection, &mean_face, s.image.pixels()))
        .collect();
    Ok(FisherfacesModel {
        dims: train.image_dims().expect("non-empty"),
        mean_face,
        projection,
        discriminant_values: keep.iter().map(|&i| eig.eigenvalues[i]).collect(),
        projected_gallery,
        gallery_labels: labels,
        class_count: train.class_count(),
    })
}

fn add_outer(m: &mut Matrix, v: &[f64], weight: f64) {
    for (i, &a) in v.iter().enumerate() {
        for (j, &b) in v.iter().enumerate() {
            m[(i, j)] += weight * a * b;
        }
    }
}

impl FisherfacesModel {
    pub fn num_components(&self) -> usize {
        self.projection.cols()
    }

    pub fn project(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        check_probe(self.dims, probe)?;
        Ok(project(&self.projection, &self.mean_face, probe.pixels()))
    }

    pub fn score(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        let p = self.project(probe)?;
        Ok(nearest_class_scores(
            &self.projected_gallery,
            &self.gallery_labels,
            self.class_count,
            &p,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(points: &[(Vec<f64>, usize)], classes: usize) -> GalleryDataset {
        let d = points[0].0.len();
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, (px, c))| Sample {
                image: FaceImage::new(d, 1, px.clone(), format!("s{i}")).unwrap(),
                class_index: *c,
            })
            .collect();
        let labels = (0..classes).map(|c| format!("c{c}")).collect();
        GalleryDataset::new("t", labels, samples).unwrap().0
    }

    fn toy_1d() -> GalleryDataset {
        // {0, 0.1} and {10, 10.1}, scaled into the unit intensity range
        let s = 1.0 / 10.1;
        dataset(
            &[
                (vec![0.0], 0),
                (vec![0.1 * s], 0),
                (vec![10.0 * s], 1),
                (vec![10.1 * s], 1),
            ],
            2,
        )
    }

    #[test]
    fn one_dimensional_toy_separates_means() {
        let model = fisherfaces_train(&toy_1d()).unwrap();
        assert_eq!(model.num_components(), 1);
        let g: Vec<f64> = model.projected_gallery.iter().map(|v| v[0]).collect();
        let spread = ((g[0] - g[1]).abs()).max((g[2] - g[3]).abs());
        let sep = ((g[0] + g[1]) / 2.0 - (g[2] + g[3]) / 2.0).abs();
        assert!(sep > 50.0 * spread, "sep {sep} spread {spread}");
        let probe = FaceImage::new(1, 1, vec![9.0 / 10.1], "p").unwrap();
        let scores = model.score(&probe).unwrap();
        assert!(scores[1] > scores[0]);
    }

    #[test]
    fn single_point_classes_are_rejected() {
        let ds = dataset(&[(vec![0.1], 0), (vec![0.9], 1)], 2);
        assert!(fisherfaces_train(&ds).is_err());
        let one = dataset(&[(vec![0.1], 0), (vec![0.2], 0)], 1);
        assert!(fisherfaces_train(&one).is_err());
    }

    #[test]
    fn training_probe_wins_and_symmetric_midpoint_ties() {
        let ds = dataset(
            &[
                (vec![0.2, 0.5], 0),
                (vec![0.3, 0.5], 0),
                (vec![0.7, 0.5], 1),
                (vec![0.8, 0.5], 1),
            ],
            2,
        );
        let model = fisherfaces_train(&ds).unwrap();
        for s in ds.samples() {
            let scores = model.score(&s.image).unwrap();
            let other = 1 - s.class_index;
            assert!(scores[s.class_index] > scores[other]);
        }
        let mid = FaceImage::new(2, 1, vec![0.5, 0.5], "m").unwrap();
        let scores = model.score(&mid).unwrap();
        assert!((scores[0] - scores[1]).abs() < 1e-9 * scores[0].abs().max(1.0));
    }

    fn fisher_ratio(points: &[(Vec<f64>, usize)], dir: &[f64]) -> f64 {
        let proj: Vec<(f64, usize)> = points
            .iter()
            .map(|(p, c)| (p.iter().zip(dir).map(|(a, b)| a * b).sum(), *c))
            .collect();
        let mean = |c: usize| {
            let v: Vec<f64> = proj.iter().filter(|p| p.1 == c).map(|p| p.0).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (m0, m1) = (mean(0), mean(1));
        let within: f64 = proj
            .iter()
            .map(|&(v, c)| {
                let m = if c == 0 { m0 } else { m1 };
                (v - m) * (v - m)
            })
            .sum();
        (m0 - m1).powi(2) / within
    }

    #[test]
    fn beats_random_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points = Vec::new();
        for c in 0..2 {
            for _ in 0..6 {
                let base = if c == 0 { [0.3, 0.4, 0.5] } else { [0.5, 0.45, 0.5] };
                let p: Vec<f64> = base
                    .iter()
                    .enumerate()
                    .map(|(i, b)| b + rng.random_range(-0.1..0.1) * if i == 0 { 0.3 } else { 1.0 })
                    .collect();
                points.push((p, c));
            }
        }
        let model = fisherfaces_train(&dataset(&points, 2)).unwrap();
        let dir = model.projection.column(0);
        let best = fisher_ratio(&points, &dir);
        for _ in 0..100 {
            let mut r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= n);
            assert!(best >= fisher_ratio(&points, &r) - 1e-9);
        }
    }
}
