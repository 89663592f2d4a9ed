//! Face rasters, gallery datasets and the on-disk dataset layout
//! (`root/<individual>/<image files>`).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Individuals with fewer photos than this trigger a conformance warning.
pub const MIN_SAMPLES_PER_INDIVIDUAL: usize = 5;

/// Aligned grayscale face raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    source_id: String,
}

impl FaceImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_id: source_id.into(),
        })
    }

    /// Builds an image from arbitrary values, clamping them into `[0, 1]`.
    pub fn from_clamped(
        width: usize,
        height: usize,
        mut pixels: Vec<f64>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self::new(width, height, pixels, source_id)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], "constant")
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at real coordinates where pixel `(x, y)` has its
    /// center at `(x, y)`. Coordinates are clamped to the raster.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.pixels, self.width, self.height, x, y)
    }
}

#[inline]
pub(crate) fn bilinear(pixels: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| pixels[yy * width + xx];
    // lerp form keeps equal corners bit-exact
    let top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
    let bottom = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
    top + fy * (bottom - top)
}

/// Interleaved raster with one or three channels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ColorRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Luma conversion `0.299·R + 0.587·G + 0.114·B`; one-channel input passes
/// through unchanged.
pub fn to_grayscale(raster: &ColorRaster, source_id: &str) -> Result<FaceImage> {
    let n = raster.width * raster.height;
    if raster.data.len() != n * raster.channels {
        return Err(Error::DimensionMismatch {
            expected: n * raster.channels,
            actual: raster.data.len(),
        });
    }
    match raster.channels {
        1 => FaceImage::new(raster.width, raster.height, raster.data.clone(), source_id),
        3 => {
            let gray = raster
                .data
                .chunks_exact(3)
                .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
                .collect();
            FaceImage::new(raster.width, raster.height, gray, source_id)
        }
        c => Err(Error::invalid(format!(
            "grayscale conversion expects 1 or 3 channels, got {c}"
        ))),
    }
}

/// Bilinear resize with pixel-center alignment: output pixel `i` samples the
/// input at `(i + 0.5)·(in/out) − 0.5`.
pub fn resize_bilinear(img: &FaceImage, width: usize, height: usize) -> Result<FaceImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if (width, height) == img.dims() {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut out = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = (j as f64 + 0.5) * sy - 0.5;
        for i in 0..width {
            let x = (i as f64 + 0.5) * sx - 0.5;
            out.push(img.sample_bilinear(x, y).clamp(0.0, 1.0));
        }
    }
    FaceImage::new(width, height, out, img.source_id.clone())
}

/// Rotates the image about the eye midpoint so the eyes end up on one
/// horizontal line, left eye on the left. Pixels sourced from outside the
/// frame are 0.
pub fn align_by_eyes(
    img: &FaceImage,
    left_eye: (f64, f64),
    right_eye: (f64, f64),
) -> Result<FaceImage> {
    let (lx, ly) = left_eye;
    let (rx, ry) = right_eye;
    let inside = |x: f64, y: f64| {
        x >= 0.0 && y >= 0.0 && x <= (img.width - 1) as f64 && y <= (img.height - 1) as f64
    };
    if !inside(lx, ly) || !inside(rx, ry) {
        return Err(Error::invalid("eye coordinates must lie inside the image"));
    }
    if lx == rx && ly == ry {
        return Err(Error::invalid("eye points coincide"));
    }
    let angle = eye_angle(left_eye, right_eye);
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = ((lx + rx) / 2.0, (ly + ry) / 2.0);
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in 0..img.width {
            // inverse map: output point rotated forward by `angle`
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let eps = 1e-9;
            if sx < -eps || sy < -eps || sx > max_x + eps || sy > max_y + eps {
                out.push(0.0);
            } else {
                out.push(img.sample_bilinear(sx, sy).clamp(0.0, 1.0));
            }
        }
    }
    FaceImage::new(img.width, img.height, out, img.source_id.clone())
}

fn eye_angle(left_eye: (f64, f64), right_eye: (f64, f64)) -> f64 {
    (right_eye.1 - left_eye.1).atan2(right_eye.0 - left_eye.0)
}

/// Where a point of the input lands after [`align_by_eyes`].
pub fn aligned_point(left_eye: (f64, f64), right_eye: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let angle = eye_angle(left_eye, right_eye);
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = (
        (left_eye.0 + right_eye.0) / 2.0,
        (left_eye.1 + right_eye.1) / 2.0,
    );
    let dx = p.0 - cx;
    let dy = p.1 - cy;
    (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
}

/// One labeled face.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: FaceImage,
    pub class_index: usize,
}

/// Identity of a source file: the individual's label and the image id
/// (file name without extension).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub label: String,
    pub source_id: String,
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.label, self.source_id)
    }
}

/// Labeled collection of equally sized faces grouped by individual.
///
/// Subsets produced by [`GalleryDataset::subset`] keep the full list of
/// individuals so class indices stay comparable across folds; such subsets
/// may contain individuals without samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryDataset {
    pub name: String,
    individuals: Vec<String>,
    samples: Vec<Sample>,
}

impl GalleryDataset {
    /// Validates the gallery invariants. Returns the dataset together with
    /// conformance warnings (individuals below the five-photo minimum).
    pub fn new(
        name: impl Into<String>,
        individuals: Vec<String>,
        samples: Vec<Sample>,
    ) -> Result<(Self, Vec<String>)> {
        let mut seen = HashSet::new();
        for label in &individuals {
            if !seen.insert(label.as_str()) {
                return Err(Error::config(format!("duplicate individual label {label:?}")));
            }
        }
        let mut counts = vec![0usize; individuals.len()];
        for s in &samples {
            if s.class_index >= individuals.len() {
                return Err(Error::invalid(format!(
                    "class index {} out of range for {} individuals",
                    s.class_index,
                    individuals.len()
                )));
            }
            counts[s.class_index] += 1;
        }
        if let Some(first) = samples.first() {
            let dims = first.image.dims();
            if let Some(bad) = samples.iter().find(|s| s.image.dims() != dims) {
                return Err(Error::invalid(format!(
                    "image {} is {:?}, expected {:?}",
                    bad.image.source_id,
                    bad.image.dims(),
                    dims
                )));
            }
        }
        let mut warnings = Vec::new();
        for (label, &count) in individuals.iter().zip(&counts) {
            if count == 0 {
                return Err(Error::config(format!("individual {label:?} has no samples")));
            }
            if count < MIN_SAMPLES_PER_INDIVIDUAL {
                warnings.push(format!(
                    "individual {label:?} has {count} samples, fewer than {MIN_SAMPLES_PER_INDIVIDUAL}"
                ));
            }
        }
        Ok((
            Self {
                name: name.into(),
                individuals,
                samples,
            },
            warnings,
        ))
    }

    pub fn individuals(&self) -> &[String] {
        &self.individuals
    }

    pub fn class_count(&self) -> usize {
        self.individuals.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class_index).collect()
    }

    pub fn key(&self, index: usize) -> SampleKey {
        let s = &self.samples[index];
        SampleKey {
            label: self.individuals[s.class_index].clone(),
            source_id: s.image.source_id.clone(),
        }
    }

    /// Shared `(width, height)` of the gallery images.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.image.dims())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.individuals.len()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order, with the full label list.
    pub fn subset(&self, indices: &[usize]) -> GalleryDataset {
        GalleryDataset {
            name: self.name.clone(),
            individuals: self.individuals.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Per-file problems and conformance warnings collected while loading.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub skipped: Vec<(PathBuf, String)>,
    pub warnings: Vec<String>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (path, why) in &self.skipped {
            writeln!(f, "skipped {}: {}", path.display(), why)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Decodes an image file into a grayscale face (not resized).
pub fn read_image(path: &Path) -> Result<FaceImage> {
    let decoded = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let raster = if decoded.color().has_color() {
        let rgb = decoded.to_rgb32f();
        ColorRaster {
            width: w,
            height: h,
            channels: 3,
            data: rgb.into_raw().into_iter().map(f64::from).collect(),
        }
    } else {
        let luma = decoded.to_luma32f();
        ColorRaster {
            width: w,
            height: h,
            channels: 1,
            data: luma.into_raw().into_iter().map(f64::from).collect(),
        }
    };
    to_grayscale(&raster, &source_id)
}

/// Writes a face as an 8-bit grayscale PNG.
pub fn write_png(img: &FaceImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let hidden = path
            .file_name()
            .map(|n| n.to_string_lossy().starts_with('.'))
            .unwrap_or(true);
        if !hidden {
            entries.push(path);
        }
    }
    entries.sort();
    Ok(entries)
}

fn individual_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::config(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if dirs.is_empty() {
        return Err(Error::config(format!(
            "dataset root {} has no individual subdirectories",
            root.display()
        )));
    }
    Ok(dirs)
}

/// Size of the first decodable image in the dataset tree, in load order.
pub fn native_size(root: &Path) -> Result<(usize, usize)> {
    for dir in individual_dirs(root)? {
        for path in sorted_entries(&dir)? {
            if path.is_file() {
                if let Ok(img) = read_image(&path) {
                    return Ok(img.dims());
                }
            }
        }
    }
    Err(Error::config(format!(
        "no decodable images under {}",
        root.display()
    )))
}

/// Loads `root/<individual>/<images>` into a gallery: grayscale, resized to
/// `target_size`, individuals sorted by name and samples by file name.
pub fn load_dataset(root: &Path, target_size: (usize, usize)) -> Result<(GalleryDataset, LoadReport)> {
    let (tw, th) = target_size;
    if tw == 0 || th == 0 {
        return Err(Error::config("target size must be at least 1x1"));
    }
    let mut report = LoadReport::default();
    let mut individuals = Vec::new();
    let mut samples = Vec::new();
    for dir in individual_dirs(root)? {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let class_index = individuals.len();
        let mut ids = HashSet::new();
        let mut loaded = 0usize;
        for path in sorted_entries(&dir)? {
            if !path.is_file() {
                continue;
            }
            match read_image(&path).and_then(|img| resize_bilinear(&img, tw, th)) {
                Ok(img) => {
                    if !ids.insert(img.source_id().to_string()) {
                        report.skipped.push((
                            path.clone(),
                            format!("duplicate image id {:?} within {label:?}", img.source_id()),
                        ));
                        continue;
                    }
                    samples.push(Sample { image: img, class_index });
                    loaded += 1;
                }
                Err(e) => report.skipped.push((path.clone(), e.to_string())),
            }
        }
        if loaded == 0 {
            return Err(Error::config(format!(
                "individual {label:?} has no decodable images"
            )));
        }
        individuals.push(label);
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let (ds, warnings) = GalleryDataset::new(name, individuals, samples)?;
    report.warnings.extend(warnings);
    Ok((ds, report))
}

/// Writes a gallery back to the on-disk layout as PNG files.
pub fn write_dataset(ds: &GalleryDataset, root: &Path) -> Result<()> {
    for label in ds.individuals() {
        std::fs::create_dir_all(root.join(label))?;
    }
    for s in ds.samples() {
        let label = &ds.individuals()[s.class_index];
        let path = root.join(label).join(format!("{}.png", s.image.source_id()));
        write_png(&s.image, &path)?;
    }
    Ok(())
}
