//! Synthetic galleries with known identity structure.
//!
//! Each individual is a smooth random texture (a sum of plane cosines, some
//! coarse and some finer). Its samples are the texture shifted by whole
//! pixels plus Gaussian noise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub individuals: usize,
    pub samples_per_individual: usize,
    pub size: usize,
    pub noise_sigma: f64,
    /// Largest shift in pixels along each axis.
    pub max_shift: i32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            individuals: 10,
            samples_per_individual: 8,
            size: 64,
            noise_sigma: 0.05,
            max_shift: 2,
            seed: 0,
        }
    }
}

const COARSE_WAVES: usize = 4;
const FINE_WAVES: usize = 6;
const RANGE: (f64, f64) = (0.15, 0.85);

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

/// Texture of one individual, evaluated at any real coordinate.
struct Pattern {
    waves: Vec<Wave>,
    offset: f64,
    scale: f64,
}

impl Pattern {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let mut waves = Vec::new();
        let mut push = |rng: &mut ChaCha8Rng, cycles: (f64, f64), amplitude: f64| {
            let angle = rng.random_range(0.0..TAU);
            let k = rng.random_range(cycles.0..cycles.1) * TAU / size as f64;
            waves.push(Wave {
                kx: k * angle.cos(),
                ky: k * angle.sin(),
                phase: rng.random_range(0.0..TAU),
                amplitude,
            });
        };
        for _ in 0..COARSE_WAVES {
            push(rng, (0.5, 2.5), 1.0);
        }
        for _ in 0..FINE_WAVES {
            push(rng, (4.0, 9.0), 0.5);
        }
        let mut p = Pattern {
            waves,
            offset: 0.0,
            scale: 1.0,
        };
        let (lo, hi) = (0..size * size)
            .map(|i| p.raw((i % size) as f64, (i / size) as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        p.scale = (RANGE.1 - RANGE.0) / (hi - lo).max(1e-12);
        p.offset = RANGE.0 - lo * p.scale;
        p
    }

    fn raw(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).cos())
            .sum()
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.offset + self.scale * self.raw(x, y)
    }
}

/// Generates the gallery; labels are `dog00`, `dog01`, ... and source ids
/// `dogNN_sMM`.
pub fn synthetic_gallery(cfg: &SynthConfig) -> Result<GalleryDataset> {
    if cfg.individuals < 2 || cfg.samples_per_individual == 0 || cfg.size < 4 {
        return Err(Error::config(
            "synthetic gallery needs at least 2 individuals, 1 sample each and 4x4 images",
        ));
    }
    if !(cfg.noise_sigma >= 0.0) || cfg.max_shift < 0 {
        return Err(Error::config("noise and shift must be non-negative"));
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let n = cfg.size;
    let width = (cfg.individuals - 1).to_string().len().max(2);
    let labels: Vec<String> = (0..cfg.individuals).map(|c| format!("dog{c:0width$}")).collect();
    let mut samples = Vec::with_capacity(cfg.individuals * cfg.samples_per_individual);
    for (c, label) in labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2 * c as u64);
        let pattern = Pattern::random(&mut rng, n);
        rng.set_stream(2 * c as u64 + 1);
        for s in 0..cfg.samples_per_individual {
            let dx = rng.random_range(-cfg.max_shift..=cfg.max_shift) as f64;
            let dy = rng.random_range(-cfg.max_shift..=cfg.max_shift) as f64;
            let pixels = (0..n * n)
                .map(|i| {
                    let v = pattern.at((i % n) as f64 + dx, (i / n) as f64 + dy);
                    v + noise.sample(&mut rng)
                })
                .collect();
            samples.push(Sample {
                image: FaceImage::from_clamped(n, n, pixels, format!("{label}_s{s}"))?,
                class_index: c,
            });
        }
    }
    let name = format!("synthetic-{}x{}-seed{}", cfg.individuals, cfg.samples_per_individual, cfg.seed);
    Ok(GalleryDataset::new(name, labels, samples)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig {
            individuals: 3,
            samples_per_individual: 4,
            size: 16,
            ..SynthConfig::default()
        };
        let ds = synthetic_gallery(&cfg).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.class_counts(), vec![4, 4, 4]);
        assert_eq!(ds.image_dims(), Some((16, 16)));
        assert_eq!(ds.key(5).to_string(), "dog01/dog01_s1");
        assert_eq!(ds, synthetic_gallery(&cfg).unwrap());
        assert_ne!(ds, synthetic_gallery(&SynthConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn noiseless_unshifted_samples_equal_the_pattern() {
        let cfg = SynthConfig {
            individuals: 2,
            samples_per_individual: 3,
            size: 20,
            noise_sigma: 0.0,
            max_shift: 0,
            seed: 9,
        };
        let ds = synthetic_gallery(&cfg).unwrap();
        let s = ds.samples();
        assert_eq!(s[0].image.pixels(), s[2].image.pixels());
        assert_ne!(s[0].image.pixels(), s[3].image.pixels());
        let (lo, hi) = s[0]
            .image
            .pixels()
            .iter()
            .fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!((lo - RANGE.0).abs() < 1e-9 && (hi - RANGE.1).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(synthetic_gallery(&SynthConfig {
            individuals: 1,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(synthetic_gallery(&SynthConfig {
            noise_sigma: -1.0,
            ..SynthConfig::default()
        })
        .is_err());
    }
}
