//! The six recognition methods behind one [`Recognizer`] implementation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::archsearch::{run_search_with, BarkEvaluatorFactory, EvaluatorFactory, SearchConfig};
use crate::classical::{
    eigenfaces_train, fisherfaces_train, lbph_train, EigenfacesModel, FisherfacesModel, LbphModel,
    DEFAULT_EIGEN_COMPONENTS, DEFAULT_LBPH_GRID,
};
use crate::deepfeat::{FeatureFile, FeatureNormalization};
use crate::error::{Error, Result};
use crate::evalkit::{Recognizer, Scorer};
use crate::imaging::{FaceImage, GalleryDataset, SampleKey};
use crate::randconv::{ArchitectureSpec, BarkNetwork};
use crate::sparse::{SparseConfig, SparseModel};
use crate::svm::{LabeledSvm, SvmConfig, BARK_SVM_C, WOOF_SVM_C};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Eigen,
    Fisher,
    Lbph,
    Sparse,
    Bark,
    Woof,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Eigen,
        Method::Fisher,
        Method::Lbph,
        Method::Sparse,
        Method::Bark,
        Method::Woof,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Eigen => "eigen",
            Method::Fisher => "fisher",
            Method::Lbph => "lbph",
            Method::Sparse => "sparse",
            Method::Bark => "bark",
            Method::Woof => "woof",
        }
    }

    /// SVM penalty used when none is given.
    pub fn default_svm_c(self) -> f64 {
        match self {
            Method::Woof => WOOF_SVM_C,
            _ => BARK_SVM_C,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// Deep feature vectors keyed by source file.
pub type FeatureTable = HashMap<SampleKey, Vec<f64>>;

pub fn feature_table(ff: &FeatureFile) -> FeatureTable {
    ff.records.iter().map(|r| (r.key(), r.values.clone())).collect()
}

/// How a BARK recognizer gets its architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum BarkArchitecture {
    Fixed(ArchitectureSpec),
    /// Searched on each training split it is given.
    Search(SearchConfig),
}

#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub method: Method,
    pub components: usize,
    pub grid: (usize, usize),
    pub sparse: SparseConfig,
    /// `None` picks the method's default.
    pub svm_c: Option<f64>,
    pub svm_seed: u64,
    pub bark: Option<BarkArchitecture>,
    pub woof_features: Option<Arc<FeatureTable>>,
    pub normalization: FeatureNormalization,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            components: DEFAULT_EIGEN_COMPONENTS,
            grid: DEFAULT_LBPH_GRID,
            sparse: SparseConfig::default(),
            svm_c: None,
            svm_seed: 0,
            bark: None,
            woof_features: None,
            normalization: FeatureNormalization::None,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            seed: self.svm_seed,
            ..SvmConfig::with_c(self.svm_c.unwrap_or(self.method.default_svm_c()))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Bark if self.bark.is_none() => Err(Error::config(
                "BARK needs an architecture spec or a search budget",
            )),
            Method::Woof if self.woof_features.is_none() => {
                Err(Error::config("WOOF needs a deep feature file"))
            }
            Method::Sparse => self.sparse.validate(),
            _ => self.svm_config().validate(),
        }
    }
}

/// Trains any [`Method`]. `F` builds the candidate evaluator used when BARK
/// searches its architecture inside a training split.
#[derive(Debug, Clone)]
pub struct MethodRecognizer<F = BarkEvaluatorFactory> {
    pub config: MethodConfig,
    pub factory: F,
}

impl MethodRecognizer {
    pub fn new(config: MethodConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            factory: BarkEvaluatorFactory,
        })
    }
}

impl<F: EvaluatorFactory> MethodRecognizer<F> {
    pub fn with_factory(config: MethodConfig, factory: F) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, factory })
    }
}

impl<F: EvaluatorFactory> Recognizer for MethodRecognizer<F> {
    type Model = TrainedModel;

    fn name(&self) -> String {
        self.config.method.tag().to_string()
    }

    fn train(&self, train: &GalleryDataset) -> Result<TrainedModel> {
        let cfg = &self.config;
        Ok(match cfg.method {
            Method::Eigen => TrainedModel::Eigen(eigenfaces_train(train, cfg.components)?),
            Method::Fisher => TrainedModel::Fisher(fisherfaces_train(train)?),
            Method::Lbph => TrainedModel::Lbph(lbph_train(train, cfg.grid)?),
            Method::Sparse => TrainedModel::Sparse(SparseModel::train(train, cfg.sparse)?),
            Method::Bark => {
                let spec = match cfg.bark.as_ref().expect("validated") {
                    BarkArchitecture::Fixed(spec) => spec.clone(),
                    BarkArchitecture::Search(search) => {
                        let evaluator = self.factory.evaluator(train, search);
                        run_search_with(evaluator.as_ref(), search)?.best.spec
                    }
                };
                TrainedModel::Bark(BarkModel::train(train, spec, &cfg.svm_config())?)
            }
            Method::Woof => {
                let table = cfg.woof_features.clone().expect("validated");
                TrainedModel::Woof(WoofModel::train(train, table, cfg.normalization, &cfg.svm_config())?)
            }
        })
    }
}

/// Random-weight convnet features followed by a linear SVM.
#[derive(Debug, Clone)]
pub struct BarkModel {
    pub network: BarkNetwork,
    /// `(width, height)` of the training images.
    pub dims: (usize, usize),
    pub svm: LabeledSvm,
}

impl BarkModel {
    pub fn train(train: &GalleryDataset, spec: ArchitectureSpec, svm: &SvmConfig) -> Result<Self> {
        let dims = train
            .image_dims()
            .ok_or_else(|| Error::invalid("BARK needs training images"))?;
        let network = BarkNetwork::new(spec)?;
        let features: Vec<Vec<f64>> = train
            .samples()
            .par_iter()
            .map(|s| network.extract(&s.image))
            .collect::<Result<_>>()?;
        let svm = LabeledSvm::train(&features, &train.labels(), train.class_count(), svm)?;
        Ok(Self { network, dims, svm })
    }

    pub fn score(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        crate::classical::check_probe(self.dims, probe)?;
        self.svm.scores(&self.network.extract(probe)?)
    }
}

/// Linear SVM over precomputed deep features, looked up by sample key.
#[derive(Debug, Clone)]
pub struct WoofModel {
    pub svm: LabeledSvm,
    pub normalization: FeatureNormalization,
    /// Features of probes; absent in models loaded from disk.
    pub features: Option<Arc<FeatureTable>>,
}

impl WoofModel {
    pub fn train(
        train: &GalleryDataset,
        table: Arc<FeatureTable>,
        normalization: FeatureNormalization,
        svm: &SvmConfig,
    ) -> Result<Self> {
        let mut missing = Vec::new();
        let mut features = Vec::with_capacity(train.len());
        for i in 0..train.len() {
            let key = train.key(i);
            match table.get(&key) {
                Some(v) => features.push(normalization.apply(v)),
                None => missing.push(key.to_string()),
            }
        }
        if !missing.is_empty() {
            let n = missing.len();
            missing.truncate(10);
            return Err(Error::config(format!(
                "{n} training samples have no feature record: {}",
                missing.join(", ")
            )));
        }
        let svm = LabeledSvm::train(&features, &train.labels(), train.class_count(), svm)?;
        Ok(Self {
            svm,
            normalization,
            features: Some(table),
        })
    }

    pub fn score_feature(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.svm.scores(&self.normalization.apply(feature))
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Eigen(EigenfacesModel),
    Fisher(FisherfacesModel),
    Lbph(LbphModel),
    Sparse(SparseModel),
    Bark(BarkModel),
    Woof(WoofModel),
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Eigen(_) => Method::Eigen,
            TrainedModel::Fisher(_) => Method::Fisher,
            TrainedModel::Lbph(_) => Method::Lbph,
            TrainedModel::Sparse(_) => Method::Sparse,
            TrainedModel::Bark(_) => Method::Bark,
            TrainedModel::Woof(_) => Method::Woof,
        }
    }

    /// Probe size the model expects; `None` for feature-based models.
    pub fn input_dims(&self) -> Option<(usize, usize)> {
        match self {
            TrainedModel::Eigen(m) => Some(m.dims),
            TrainedModel::Fisher(m) => Some(m.dims),
            TrainedModel::Lbph(m) => Some(m.dims),
            TrainedModel::Sparse(m) => Some(m.dims),
            TrainedModel::Bark(m) => Some(m.dims),
            TrainedModel::Woof(_) => None,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            TrainedModel::Eigen(m) => m.class_count,
            TrainedModel::Fisher(m) => m.class_count,
            TrainedModel::Lbph(m) => m.class_count,
            TrainedModel::Sparse(m) => m.class_count,
            TrainedModel::Bark(m) => m.svm.class_count,
            TrainedModel::Woof(m) => m.svm.class_count,
        }
    }

    pub fn score_image(&self, probe: &FaceImage) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Eigen(m) => m.score(probe),
            TrainedModel::Fisher(m) => m.score(probe),
            TrainedModel::Lbph(m) => m.score(probe),
            TrainedModel::Sparse(m) => m.score(probe),
            TrainedModel::Bark(m) => m.score(probe),
            TrainedModel::Woof(_) => Err(Error::config(
                "WOOF models score deep feature vectors, not images",
            )),
        }
    }
}

impl Scorer for TrainedModel {
    fn score(&self, probe: &FaceImage, key: &SampleKey) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Woof(m) => {
                let table = m
                    .features
                    .as_ref()
                    .ok_or_else(|| Error::config("WOOF model has no feature table for probes"))?;
                let v = table
                    .get(key)
                    .ok_or_else(|| Error::config(format!("no feature record for {key}")))?;
                m.score_feature(v)
            }
            other => other.score_image(probe),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::run_protocol;
    use crate::imaging::Sample;
    use crate::randconv::{InputSize, LayerSpec};

    fn striped(class: usize, i: usize) -> FaceImage {
        let w = 16;
        let px = (0..w * w)
            .map(|p| {
                let (x, y) = ((p % w) as f64, (p / w) as f64);
                let t = if class == 0 { x } else if class == 1 { y } else { x + y };
                0.5 + 0.35 * (t * 0.8 + i as f64 * 0.1).sin()
            })
            .collect();
        FaceImage::new(w, w, px, format!("s{i}")).unwrap()
    }

    fn gallery() -> GalleryDataset {
        let samples = (0..3)
            .flat_map(|c| (0..6).map(move |i| Sample {
                image: striped(c, i),
                class_index: c,
            }))
            .collect();
        GalleryDataset::new("stripes", vec!["a".into(), "b".into(), "c".into()], samples)
            .unwrap()
            .0
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("cnn".parse::<Method>().is_err());
        assert_eq!(Method::Woof.default_svm_c(), 1.0);
        assert_eq!(Method::Bark.default_svm_c(), 1e5);
    }

    #[test]
    fn feature_methods_need_their_inputs() {
        assert!(MethodRecognizer::new(MethodConfig::new(Method::Bark)).is_err());
        assert!(MethodRecognizer::new(MethodConfig::new(Method::Woof)).is_err());
        assert!(MethodRecognizer::new(MethodConfig::new(Method::Lbph)).is_ok());
    }

    #[test]
    fn every_method_separates_stripes() {
        let ds = gallery();
        let table: FeatureTable = (0..ds.len())
            .map(|i| {
                let c = ds.samples()[i].class_index;
                let mut v: Vec<f64> = (0..3).map(|j| if j == c { 1.0 } else { 0.0 }).collect();
                v.push(0.1 * i as f64 / 18.0);
                (ds.key(i), v)
            })
            .collect();
        for method in Method::ALL {
            let mut cfg = MethodConfig::new(method);
            cfg.grid = (2, 2);
            cfg.bark = Some(BarkArchitecture::Fixed(ArchitectureSpec {
                input_size: InputSize::Original,
                layers: vec![LayerSpec {
                    num_filters: 32,
                    filter_size: 3,
                    pool_exponent: 2,
                    pool_stride: 2,
                    normalize: true,
                }],
                seed: 4,
            }));
            cfg.woof_features = Some(Arc::new(table.clone()));
            let rec = MethodRecognizer::new(cfg).unwrap();
            let report = run_protocol(&ds, &rec, 3, 0).unwrap();
            assert!(report.balanced_accuracy >= 0.99, "{method}: {}", report.balanced_accuracy);
        }
    }
}
