use log::warn;

use super::{centered_data, check_probe, nearest_class_scores, project, snapshot_pca};
use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset};
use crate::numerics::Matrix;

pub const DEFAULT_EIGEN_COMPONENTS: usize = 80;

/// PCA subspace of the training faces with the projected gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenfacesModel {
    pub dims: (usize, usize),
    pub mean_face: Vec<f64>,
    /// `d × K`, orthonormal columns ordered by decreasing variance.
    pub components: Matrix,
    pub variances: Vec<f64>,
    pub projected_gallery: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
    pub class_count: usize,
    pub requested_components: usize,
}

/// Fits an Eigenfaces model keeping `num_components` principal directions,
/// clamped to `N − 1` (and to the data rank).
pub fn eigenfaces_train(train: &GalleryDataset, num_components: usize) -> Result<EigenfacesModel> {
    if num_components == 0 {
        return Err(Error::invalid("Eigenfaces needs at least one component"));
    }
    let n = train.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "Eigenfaces needs at least 2 training images, got {n}"
        )));
    }
    let (x, mean_face) = centered_data(train);
    let k = num_components.min(n - 1);
    if k < num_components {
        warn!("Eigenfaces: {num_components} components requested, clamped to N-1 = {k}");
    }
    let (components, variances) = snapshot_pca(&x, k)?;
    if components.cols() == 0 {
        return Err(Error::invalid(
            "Eigenfaces: training images have zero variance",
        ));
    }
    if components.cols() < k {
        warn!(
            "Eigenfaces: data rank limits the subspace to {} components",
            components.cols()
        );
    }
    let projected_gallery = train
        .samples()
        .iter()
        .map(|s| project(&components, &mean_face, s.image.pixels()))
        .collect();
    Ok(EigenfacesModel {
        dims: train.image_dims().expect("non-empty"),
        mean_face,
        components,
        variances,
        projected_gallery,
        gallery_labels: train.labels(),
        class_count: train.class_count(),
        requested_components: num_components,
    })
}

impl EigenfacesModel {
    pub fn num_components(&self) -> usize {
        self.components.cols()
    }

    pub fn project(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        check_probe(self.dims, probe)?;
        Ok(project(&self.components, &self.mean_face, probe.pixels()))
    }

    /// Squared error of reconstructing `img` from its first `k` coefficients.
    pub fn reconstruction_error(&self, img: &FaceImage, k: usize) -> Result<f64> {
        let coeffs = self.project(img)?;
        let k = k.min(coeffs.len());
        let mut recon = self.mean_face.clone();
        for (c, &a) in coeffs.iter().enumerate().take(k) {
            for (i, r) in recon.iter_mut().enumerate() {
                *r += a * self.components[(i, c)];
            }
        }
        Ok(recon
            .iter()
            .zip(img.pixels())
            .map(|(r, p)| (r - p) * (r - p))
            .sum())
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
    use crate::numerics::dot;

    fn dataset(images: Vec<(Vec<f64>, usize)>, w: usize, h: usize, classes: usize) -> GalleryDataset {
        let samples = images
            .into_iter()
            .enumerate()
            .map(|(i, (px, c))| Sample {
                image: FaceImage::new(w, h, px, format!("s{i}")).unwrap(),
                class_index: c,
            })
            .collect();
        let labels = (0..classes).map(|c| format!("c{c}")).collect();
        GalleryDataset::new("t", labels, samples).unwrap().0
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64) / ((1u64 << 53) as f64)
            })
            .collect()
    }

    #[test]
    fn clamps_components_to_n_minus_one() {
        let imgs = (0..5).map(|i| (pseudo_random(16, i), (i % 2) as usize)).collect();
        let model = eigenfaces_train(&dataset(imgs, 4, 4, 2), 80).unwrap();
        assert_eq!(model.num_components(), 4);
        assert_eq!(model.requested_components, 80);
    }

    #[test]
    fn two_images_give_difference_direction() {
        let a = vec![0.1, 0.5, 0.9, 0.2];
        let b = vec![0.3, 0.1, 0.4, 0.6];
        let model = eigenfaces_train(&dataset(vec![(a.clone(), 0), (b.clone(), 1)], 2, 2, 2), 3).unwrap();
        assert_eq!(model.num_components(), 1);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let norm = dot(&diff, &diff).sqrt();
        let c = model.components.column(0);
        let cos = dot(&c, &diff) / norm;
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_images_are_rejected() {
        let px = vec![0.5; 4];
        let ds = dataset(vec![(px.clone(), 0), (px.clone(), 1), (px, 1)], 2, 2, 2);
        assert!(eigenfaces_train(&ds, 2).is_err());
        let one = dataset(vec![(vec![0.5; 4], 0)], 2, 2, 1);
        assert!(eigenfaces_train(&one, 2).is_err());
    }

    #[test]
    fn components_are_orthonormal_and_training_probe_wins() {
        let imgs: Vec<_> = (0..9).map(|i| (pseudo_random(36, 7 + i), (i % 3) as usize)).collect();
        let ds = dataset(imgs, 6, 6, 3);
        let model = eigenfaces_train(&ds, 80).unwrap();
        let k = model.num_components();
        for i in 0..k {
            for j in 0..k {
                let v = dot(&model.components.column(i), &model.components.column(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-6);
            }
        }
        for s in ds.samples() {
            let scores = model.score(&s.image).unwrap();
            assert_eq!(scores[s.class_index], 0.0);
            assert!(scores.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn reconstruction_error_non_increasing() {
        let imgs: Vec<_> = (0..8).map(|i| (pseudo_random(25, 100 + i), (i % 2) as usize)).collect();
        let ds = dataset(imgs, 5, 5, 2);
        let model = eigenfaces_train(&ds, 80).unwrap();
        for s in ds.samples() {
            let mut prev = f64::INFINITY;
            for k in 1..=model.num_components() {
                let e = model.reconstruction_error(&s.image, k).unwrap();
                assert!(e <= prev + 1e-12);
                prev = e;
            }
            assert!(prev < 1e-20);
        }
    }

    #[test]
    fn scores_invariant_to_training_order() {
        let imgs: Vec<_> = (0..7).map(|i| (pseudo_random(16, 40 + i), (i % 3) as usize)).collect();
        let mut rev = imgs.clone();
        rev.reverse();
        let m1 = eigenfaces_train(&dataset(imgs, 4, 4, 3), 80).unwrap();
        let m2 = eigenfaces_train(&dataset(rev, 4, 4, 3), 80).unwrap();
        let probe = FaceImage::new(4, 4, pseudo_random(16, 999), "p").unwrap();
        let s1 = m1.score(&probe).unwrap();
        let s2 = m2.score(&probe).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn probe_size_mismatch() {
        let imgs = (0..3).map(|i| (pseudo_random(4, i), (i % 2) as usize)).collect();
        let model = eigenfaces_train(&dataset(imgs, 2, 2, 2), 2).unwrap();
        let probe = FaceImage::constant(3, 3, 0.1).unwrap();
        assert!(model.score(&probe).is_err());
    }
}
