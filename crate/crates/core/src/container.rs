//! On-disk model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PAWS"  u32 version
//! u32 len, method tag (UTF-8)
//! u32 len, metadata: `key=value` lines (UTF-8)
//! u32 array count
//! per array: u32 len, name (UTF-8), u64 count, count × f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::classical::{EigenfacesModel, FisherfacesModel, LbphModel};
use crate::deepfeat::FeatureNormalization;
use crate::error::{Error, Result};
use crate::imaging::GalleryDataset;
use crate::numerics::Matrix;
use crate::randconv::{ArchitectureSpec, BarkNetwork};
use crate::recognizer::{BarkModel, Method, TrainedModel, WoofModel};
use crate::sparse::{SparseConfig, SparseModel};
use crate::svm::{LabeledSvm, SvmConfig, SvmModel};

pub const CONTAINER_MAGIC: &[u8; 4] = b"PAWS";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub method: Method,
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl ModelContainer {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            metadata: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Container(format!("metadata lacks {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Container(format!("bad metadata value {key}={v}")))
    }

    pub fn push_array(&mut self, name: &str, values: Vec<f64>) {
        self.arrays.push((name.to_string(), values));
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Container(format!("missing array {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        put_str(&mut out, self.method.tag())?;
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Container(format!("metadata entry {k:?} cannot be stored")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        put_str(&mut out, &meta)?;
        out.extend_from_slice(&len_u32(self.arrays.len())?.to_le_bytes());
        for (name, values) in &self.arrays {
            put_str(&mut out, name)?;
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(CONTAINER_MAGIC.as_slice()) {
            return Err(Error::Container("not a PAWS model".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Container(format!("unsupported container version {version}")));
        }
        let tag = r.string()?;
        let method: Method = tag
            .parse()
            .map_err(|_| Error::Container(format!("unknown method tag {tag:?}")))?;
        let mut metadata = BTreeMap::new();
        for line in r.string()?.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Container(format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let n = r.u64()?;
            let byte_len = n
                .checked_mul(8)
                .and_then(|b| usize::try_from(b).ok())
                .ok_or_else(|| Error::Container(format!("array {name:?} is too large")))?;
            let raw = r.take(byte_len)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after the last array",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            method,
            metadata,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Container(format!("length {n} exceeds u32")))
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    out.extend_from_slice(&len_u32(s.len())?.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Container("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Container("invalid UTF-8".into()))
    }
}

/// SHA-256 over the labels, sample keys and pixel values of a dataset.
pub fn dataset_fingerprint(ds: &GalleryDataset) -> String {
    let mut h = Sha256::new();
    for l in ds.individuals() {
        h.update(l.as_bytes());
        h.update([0u8]);
    }
    for (i, s) in ds.samples().iter().enumerate() {
        h.update(ds.key(i).to_string().as_bytes());
        h.update([0u8]);
        for p in s.image.pixels() {
            h.update(p.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Model plus the individual labels it ranks.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub model: TrainedModel,
    pub labels: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

fn usize_array(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn array_usize(c: &ModelContainer, name: &str) -> Result<Vec<usize>> {
    c.array(name)?
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(Error::Container(format!("array {name:?} holds non-index value {x}")))
            }
        })
        .collect()
}

fn rows(flat: &[f64], width: usize, name: &str) -> Result<Vec<Vec<f64>>> {
    if width == 0 || !flat.len().is_multiple_of(width) {
        return Err(Error::Container(format!("array {name:?} is not a multiple of {width}")));
    }
    Ok(flat.chunks(width).map(<[f64]>::to_vec).collect())
}

fn matrix(c: &ModelContainer, name: &str, r: usize, k: usize) -> Result<Matrix> {
    Matrix::from_vec(r, k, c.array(name)?.to_vec())
        .map_err(|_| Error::Container(format!("array {name:?} does not hold a {r}x{k} matrix")))
}

fn put_dims(c: &mut ModelContainer, dims: (usize, usize)) {
    c.set("width", dims.0);
    c.set("height", dims.1);
}

fn get_dims(c: &ModelContainer) -> Result<(usize, usize)> {
    Ok((c.parse("width")?, c.parse("height")?))
}

fn put_svm(c: &mut ModelContainer, svm: &LabeledSvm) {
    c.set("class_count", svm.class_count);
    c.set("feature_dim", svm.feature_dim);
    c.push_array("present_classes", usize_array(&svm.present));
    if let Some(m) = &svm.model {
        c.set("svm.c", m.config.c);
        c.set("svm.tolerance", m.config.tolerance);
        c.set("svm.max_iterations", m.config.max_iterations);
        c.set("svm.fit_bias", m.config.fit_bias);
        c.set("svm.seed", m.config.seed);
        c.push_array("svm_weights", m.weights.concat());
        c.push_array("svm_biases", m.biases.clone());
    }
}

fn get_svm(c: &ModelContainer) -> Result<LabeledSvm> {
    let class_count: usize = c.parse("class_count")?;
    let feature_dim: usize = c.parse("feature_dim")?;
    let present = array_usize(c, "present_classes")?;
    if present.is_empty() || present.iter().any(|&p| p >= class_count) {
        return Err(Error::Container("bad present class list".into()));
    }
    let model = if present.len() >= 2 {
        let weights = rows(c.array("svm_weights")?, feature_dim, "svm_weights")?;
        let biases = c.array("svm_biases")?.to_vec();
        if weights.len() != present.len() || biases.len() != present.len() {
            return Err(Error::Container("SVM arrays do not match the class list".into()));
        }
        Some(SvmModel {
            config: SvmConfig {
                c: c.parse("svm.c")?,
                tolerance: c.parse("svm.tolerance")?,
                max_iterations: c.parse("svm.max_iterations")?,
                fit_bias: c.parse("svm.fit_bias")?,
                seed: c.parse("svm.seed")?,
            },
            weights,
            biases,
            feature_dim,
            diagnostics: Vec::new(),
        })
    } else {
        None
    };
    Ok(LabeledSvm {
        class_count,
        present,
        model,
        feature_dim,
    })
}

impl SavedModel {
    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new(self.model.method());
        c.metadata = self.metadata.clone();
        c.set("labels", self.labels.len());
        for (i, l) in self.labels.iter().enumerate() {
            c.set(&format!("label.{i}"), l);
        }
        match &self.model {
            TrainedModel::Eigen(m) => {
                put_dims(&mut c, m.dims);
                c.set("class_count", m.class_count);
                c.set("components", m.components.cols());
                c.set("requested_components", m.requested_components);
                c.push_array("mean_face", m.mean_face.clone());
                c.push_array("components", m.components.data().to_vec());
                c.push_array("variances", m.variances.clone());
                c.push_array("projected_gallery", m.projected_gallery.concat());
                c.push_array("gallery_labels", usize_array(&m.gallery_labels));
            }
            TrainedModel::Fisher(m) => {
                put_dims(&mut c, m.dims);
                c.set("class_count", m.class_count);
                c.set("components", m.projection.cols());
                c.push_array("mean_face", m.mean_face.clone());
                c.push_array("projection", m.projection.data().to_vec());
                c.push_array("discriminant_values", m.discriminant_values.clone());
                c.push_array("projected_gallery", m.projected_gallery.concat());
                c.push_array("gallery_labels", usize_array(&m.gallery_labels));
            }
            TrainedModel::Lbph(m) => {
                put_dims(&mut c, m.dims);
                c.set("class_count", m.class_count);
                c.set("grid", format!("{}x{}", m.grid.0, m.grid.1));
                c.set("radius", m.radius);
                c.set("neighbors", m.neighbors);
                c.push_array("gallery_histograms", m.gallery_histograms.concat());
                c.push_array("gallery_labels", usize_array(&m.gallery_labels));
            }
            TrainedModel::Sparse(m) => {
                put_dims(&mut c, m.dims);
                c.set("class_count", m.class_count);
                c.set("m_fraction", m.config.m_fraction);
                c.set("ridge", m.config.ridge);
                c.set("gallery_size", m.gallery_size());
                c.push_array("gallery", m.gallery.data().to_vec());
                c.push_array("gallery_labels", usize_array(&m.gallery_labels));
            }
            TrainedModel::Bark(m) => {
                put_dims(&mut c, m.dims);
                c.set("spec", m.network.spec.to_line());
                put_svm(&mut c, &m.svm);
            }
            TrainedModel::Woof(m) => {
                c.set(
                    "normalization",
                    match m.normalization {
                        FeatureNormalization::None => "none",
                        FeatureNormalization::L2 => "l2",
                    },
                );
                put_svm(&mut c, &m.svm);
            }
        }
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let n_labels: usize = c.parse("labels")?;
        let labels = (0..n_labels)
            .map(|i| c.get(&format!("label.{i}")).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let model = match c.method {
            Method::Eigen => {
                let dims = get_dims(c)?;
                let d = dims.0 * dims.1;
                let k: usize = c.parse("components")?;
                TrainedModel::Eigen(EigenfacesModel {
                    dims,
                    mean_face: c.array("mean_face")?.to_vec(),
                    components: matrix(c, "components", d, k)?,
                    variances: c.array("variances")?.to_vec(),
                    projected_gallery: rows(c.array("projected_gallery")?, k, "projected_gallery")?,
                    gallery_labels: array_usize(c, "gallery_labels")?,
                    class_count: c.parse("class_count")?,
                    requested_components: c.parse("requested_components")?,
                })
            }
            Method::Fisher => {
                let dims = get_dims(c)?;
                let d = dims.0 * dims.1;
                let k: usize = c.parse("components")?;
                TrainedModel::Fisher(FisherfacesModel {
                    dims,
                    mean_face: c.array("mean_face")?.to_vec(),
                    projection: matrix(c, "projection", d, k)?,
                    discriminant_values: c.array("discriminant_values")?.to_vec(),
                    projected_gallery: rows(c.array("projected_gallery")?, k, "projected_gallery")?,
                    gallery_labels: array_usize(c, "gallery_labels")?,
                    class_count: c.parse("class_count")?,
                })
            }
            Method::Lbph => {
                let grid = parse_grid(c.get("grid")?).map_err(|e| Error::Container(e.to_string()))?;
                let neighbors: usize = c.parse("neighbors")?;
                let width = grid.0 * grid.1 * (1 << neighbors);
                TrainedModel::Lbph(LbphModel {
                    dims: get_dims(c)?,
                    grid,
                    radius: c.parse("radius")?,
                    neighbors,
                    gallery_histograms: rows(c.array("gallery_histograms")?, width, "gallery_histograms")?,
                    gallery_labels: array_usize(c, "gallery_labels")?,
                    class_count: c.parse("class_count")?,
                })
            }
            Method::Sparse => {
                let dims = get_dims(c)?;
                let n: usize = c.parse("gallery_size")?;
                let gallery = matrix(c, "gallery", dims.0 * dims.1, n)?;
                let columns: Vec<Vec<f64>> = (0..n).map(|j| gallery.column(j)).collect();
                TrainedModel::Sparse(SparseModel::from_columns(
                    dims,
                    &columns,
                    array_usize(c, "gallery_labels")?,
                    c.parse("class_count")?,
                    SparseConfig {
                        m_fraction: c.parse("m_fraction")?,
                        ridge: c.parse("ridge")?,
                    },
                )?)
            }
            Method::Bark => {
                let spec: ArchitectureSpec = c.get("spec")?.parse()?;
                TrainedModel::Bark(BarkModel {
                    network: BarkNetwork::new(spec)?,
                    dims: get_dims(c)?,
                    svm: get_svm(c)?,
                })
            }
            Method::Woof => TrainedModel::Woof(WoofModel {
                svm: get_svm(c)?,
                normalization: match c.get("normalization")? {
                    "none" => FeatureNormalization::None,
                    "l2" => FeatureNormalization::L2,
                    other => return Err(Error::Container(format!("unknown normalization {other:?}"))),
                },
                features: None,
            }),
        };
        if model.class_count() != labels.len() {
            return Err(Error::Container(format!(
                "model ranks {} classes but stores {} labels",
                model.class_count(),
                labels.len()
            )));
        }
        Ok(Self {
            model,
            labels,
            metadata: c.metadata.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&ModelContainer::load(path)?)
    }
}

/// Parses `WxH` (for example `8x8`).
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::config(format!("grid must look like 8x8, got {s:?}"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    let g = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if g.0 == 0 || g.1 == 0 {
        return Err(bad());
    }
    Ok(g)
}
