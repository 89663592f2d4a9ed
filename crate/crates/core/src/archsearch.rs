//! Architecture search for the random-weight convnet: random sampling and a
//! categorical Tree-of-Parzen-Estimators optimizer. Candidates are scored by
//! cross-validated SVM balanced accuracy on the training split they are given.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::{balanced_accuracy, confusion_matrix, stratified_folds_for_labels};
use crate::imaging::GalleryDataset;
use crate::numerics::argmax;
use crate::randconv::{
    feature_len, ArchitectureSpec, BarkNetwork, LayerSpec, FILTER_COUNTS, FILTER_SIZES, INPUT_SIZES,
    LAYER_COUNTS, MAX_LAYERS, NORMALIZE_CHOICES, POOL_EXPONENTS, POOL_STRIDES,
};
use crate::svm::{LabeledSvm, SvmConfig, BARK_SVM_C};

pub const DEFAULT_SEARCH_BUDGET: usize = 2000;
pub const DEFAULT_INNER_FOLDS: usize = 3;
pub const DEFAULT_TPE_GAMMA: f64 = 0.25;
pub const DEFAULT_TPE_CANDIDATES: usize = 24;
pub const DEFAULT_TPE_STARTUP: usize = 20;
/// Candidates whose per-image feature vector exceeds this many values are
/// marked failed instead of being evaluated.
pub const DEFAULT_MAX_FEATURE_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Random,
    Tpe,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Optimizer::Random),
            "tpe" => Ok(Optimizer::Tpe),
            _ => Err(Error::config(format!("unknown optimizer {s:?} (expected random or tpe)"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Random => "random",
            Optimizer::Tpe => "tpe",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub budget: usize,
    pub optimizer: Optimizer,
    pub master_seed: u64,
    pub inner_folds: usize,
    pub tpe_gamma: f64,
    pub tpe_candidates: usize,
    pub tpe_startup: usize,
    pub svm_c: f64,
    pub max_feature_len: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_SEARCH_BUDGET,
            optimizer: Optimizer::Tpe,
            master_seed: 0,
            inner_folds: DEFAULT_INNER_FOLDS,
            tpe_gamma: DEFAULT_TPE_GAMMA,
            tpe_candidates: DEFAULT_TPE_CANDIDATES,
            tpe_startup: DEFAULT_TPE_STARTUP,
            svm_c: BARK_SVM_C,
            max_feature_len: DEFAULT_MAX_FEATURE_LEN,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::config("search budget must be at least 1"));
        }
        if !(self.tpe_gamma > 0.0 && self.tpe_gamma < 1.0) {
            return Err(Error::config(format!("TPE gamma must lie in (0, 1), got {}", self.tpe_gamma)));
        }
        if self.tpe_candidates == 0 {
            return Err(Error::config("TPE needs at least one candidate per round"));
        }
        if self.inner_folds < 2 {
            return Err(Error::config("inner cross-validation needs at least 2 folds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialStatus {
    Ok,
    RejectedShape,
    Failed,
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialStatus::Ok => "ok",
            TrialStatus::RejectedShape => "rejected_shape",
            TrialStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub spec: ArchitectureSpec,
    /// Mean inner-fold balanced accuracy; present only for `Ok` trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

impl Trial {
    /// One line of the search log.
    pub fn to_line(&self) -> String {
        let objective = self.objective.map_or("NA".to_string(), |o| o.to_string());
        format!(
            "index={} status={} objective={} {}",
            self.index,
            self.status,
            objective,
            self.spec.to_line()
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let field = |key: &str| {
            line.split_whitespace()
                .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::config(format!("search log line lacks {key}")))
        };
        let index = field("index")?
            .parse()
            .map_err(|_| Error::config("bad trial index"))?;
        let status = match field("status")? {
            "ok" => TrialStatus::Ok,
            "rejected_shape" => TrialStatus::RejectedShape,
            "failed" => TrialStatus::Failed,
            other => return Err(Error::config(format!("bad trial status {other:?}"))),
        };
        let objective = match field("objective")? {
            "NA" => None,
            v => Some(v.parse().map_err(|_| Error::config(format!("bad objective {v:?}")))?),
        };
        Ok(Trial {
            index,
            spec: line.parse()?,
            objective,
            status,
        })
    }
}

/// Scores one architecture. `Err(Error::Shape)` marks the spec as rejected
/// for shape; any other error marks it failed.
pub trait CandidateEvaluator: Sync {
    fn evaluate(&self, spec: &ArchitectureSpec) -> Result<f64>;
}

/// Builds the evaluator for a training split. Recognizers that search inside
/// the protocol go through this, so the split handed to the search is
/// observable.
pub trait EvaluatorFactory: Sync {
    fn evaluator<'a>(&self, train: &'a GalleryDataset, config: &SearchConfig) -> Box<dyn CandidateEvaluator + 'a>;
}

/// Factory for [`BarkEvaluator`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BarkEvaluatorFactory;

impl EvaluatorFactory for BarkEvaluatorFactory {
    fn evaluator<'a>(&self, train: &'a GalleryDataset, config: &SearchConfig) -> Box<dyn CandidateEvaluator + 'a> {
        Box::new(BarkEvaluator::new(train, config))
    }
}

/// Extracts features for every training image and runs stratified inner
/// cross-validation of a linear SVM on them.
pub struct BarkEvaluator<'a> {
    train: &'a GalleryDataset,
    inner_folds: usize,
    svm: SvmConfig,
    fold_seed: u64,
    max_feature_len: usize,
}

impl<'a> BarkEvaluator<'a> {
    pub fn new(train: &'a GalleryDataset, config: &SearchConfig) -> Self {
        Self {
            train,
            inner_folds: config.inner_folds,
            svm: SvmConfig::with_c(config.svm_c),
            fold_seed: config.master_seed,
            max_feature_len: config.max_feature_len,
        }
    }
}

impl CandidateEvaluator for BarkEvaluator<'_> {
    fn evaluate(&self, spec: &ArchitectureSpec) -> Result<f64> {
        let native = self
            .train
            .image_dims()
            .ok_or_else(|| Error::invalid("empty training split"))?;
        let len = feature_len(spec, native)?;
        if len > self.max_feature_len {
            return Err(Error::invalid(format!(
                "{len} features per image exceeds the limit of {}",
                self.max_feature_len
            )));
        }
        let net = BarkNetwork::new(spec.clone())?;
        let features: Vec<Vec<f64>> = self
            .train
            .samples()
            .par_iter()
            .map(|s| net.extract(&s.image))
            .collect::<Result<_>>()?;
        let labels = self.train.labels();
        let k = self.inner_folds.min(labels.len());
        let plan = stratified_folds_for_labels(&labels, self.train.class_count(), k, self.fold_seed)?;
        let mut total = 0.0;
        for fold in 0..k {
            let (tr, te): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| plan.assignments[i] != fold);
            let xs: Vec<Vec<f64>> = tr.iter().map(|&i| features[i].clone()).collect();
            let ys: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
            let model = LabeledSvm::train(&xs, &ys, self.train.class_count(), &self.svm)?;
            let pairs = te
                .iter()
                .map(|&i| {
                    let scores = model.scores(&features[i])?;
                    Ok((labels[i], argmax(&scores).unwrap_or(0)))
                })
                .collect::<Result<Vec<_>>>()?;
            total += balanced_accuracy(&confusion_matrix(pairs, self.train.class_count()))?;
        }
        Ok(total / k as f64)
    }
}

/// One searchable hyperparameter. Layer axes exist only when the network is
/// deep enough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    InputSize,
    Layers,
    Filters(usize),
    FilterSize(usize),
    PoolExponent(usize),
    PoolStride(usize),
    Normalize(usize),
}

impl Axis {
    pub fn all() -> Vec<Axis> {
        let mut axes = vec![Axis::InputSize, Axis::Layers];
        for l in 0..MAX_LAYERS {
            axes.extend([
                Axis::Filters(l),
                Axis::FilterSize(l),
                Axis::PoolExponent(l),
                Axis::PoolStride(l),
                Axis::Normalize(l),
            ]);
        }
        axes
    }

    pub fn domain_size(self) -> usize {
        match self {
            Axis::InputSize => INPUT_SIZES.len(),
            Axis::Layers => LAYER_COUNTS.len(),
            Axis::Filters(_) => FILTER_COUNTS.len(),
            Axis::FilterSize(_) => FILTER_SIZES.len(),
            Axis::PoolExponent(_) => POOL_EXPONENTS.len(),
            Axis::PoolStride(_) => POOL_STRIDES.len(),
            Axis::Normalize(_) => NORMALIZE_CHOICES.len(),
        }
    }

    /// Position of the spec's value in this axis' domain, if the axis applies.
    pub fn value_index(self, spec: &ArchitectureSpec) -> Option<usize> {
        let pos = |slice: &[usize], v: usize| slice.iter().position(|&x| x == v);
        match self {
            Axis::InputSize => INPUT_SIZES.iter().position(|&s| s == spec.input_size),
            Axis::Layers => pos(&LAYER_COUNTS, spec.layers.len()),
            Axis::Filters(l) => spec.layers.get(l).and_then(|x| pos(&FILTER_COUNTS, x.num_filters)),
            Axis::FilterSize(l) => spec.layers.get(l).and_then(|x| pos(&FILTER_SIZES, x.filter_size)),
            Axis::PoolExponent(l) => spec
                .layers
                .get(l)
                .and_then(|x| POOL_EXPONENTS.iter().position(|&p| p == x.pool_exponent)),
            Axis::PoolStride(l) => spec.layers.get(l).and_then(|x| pos(&POOL_STRIDES, x.pool_stride)),
            Axis::Normalize(l) => spec
                .layers
                .get(l)
                .and_then(|x| NORMALIZE_CHOICES.iter().position(|&n| n == x.normalize)),
        }
    }
}

/// Builds a spec by asking `choose(axis)` for a domain index, drawing the
/// layer count first and then each present layer's fields.
fn build_spec(mut choose: impl FnMut(Axis) -> usize, seed_rng: &mut impl RngCore) -> ArchitectureSpec {
    let layers = LAYER_COUNTS[choose(Axis::Layers)];
    let input_size = INPUT_SIZES[choose(Axis::InputSize)];
    let layers = (0..layers)
        .map(|l| LayerSpec {
            num_filters: FILTER_COUNTS[choose(Axis::Filters(l))],
            filter_size: FILTER_SIZES[choose(Axis::FilterSize(l))],
            pool_exponent: POOL_EXPONENTS[choose(Axis::PoolExponent(l))],
            pool_stride: POOL_STRIDES[choose(Axis::PoolStride(l))],
            normalize: NORMALIZE_CHOICES[choose(Axis::Normalize(l))],
        })
        .collect();
    ArchitectureSpec {
        input_size,
        layers,
        seed: seed_rng.next_u64(),
    }
}

fn trial_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

/// Uniform draw from the search space, determined by `(master_seed, index)`.
pub fn sample_random(master_seed: u64, index: usize) -> ArchitectureSpec {
    let mut rng = trial_rng(master_seed, index);
    let mut choices = ChaCha8Rng::from_rng(&mut rng);
    build_spec(|axis| choices.random_range(0..axis.domain_size()), &mut rng)
}

/// Smoothed categorical densities of the good (`l`) and bad (`g`) trials,
/// per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TpeModel {
    axes: Vec<(Axis, Vec<f64>, Vec<f64>)>,
}

impl TpeModel {
    /// Splits the ok trials into the best `ceil(γ·n)` (ties to the earlier
    /// index) and the rest. Returns `None` below `tpe_startup` ok trials.
    pub fn fit(history: &[Trial], config: &SearchConfig) -> Option<Self> {
        let mut ok: Vec<&Trial> = history
            .iter()
            .filter(|t| t.status == TrialStatus::Ok && t.objective.is_some())
            .collect();
        if ok.is_empty() || ok.len() < config.tpe_startup {
            return None;
        }
        ok.sort_by(|a, b| {
            b.objective
                .unwrap()
                .total_cmp(&a.objective.unwrap())
                .then(a.index.cmp(&b.index))
        });
        let n_good = ((config.tpe_gamma * ok.len() as f64).ceil() as usize).clamp(1, ok.len());
        let (good, bad) = ok.split_at(n_good);
        let density = |axis: Axis, trials: &[&Trial]| {
            let mut counts = vec![1.0; axis.domain_size()];
            for t in trials {
                if let Some(v) = axis.value_index(&t.spec) {
                    counts[v] += 1.0;
                }
            }
            let total: f64 = counts.iter().sum();
            counts.into_iter().map(|c| c / total).collect::<Vec<f64>>()
        };
        let axes = Axis::all()
            .into_iter()
            .map(|a| (a, density(a, good), density(a, bad)))
            .collect();
        Some(Self { axes })
    }

    fn entry(&self, axis: Axis) -> &(Axis, Vec<f64>, Vec<f64>) {
        self.axes.iter().find(|(a, _, _)| *a == axis).expect("every axis is modeled")
    }

    /// Probability the good-trial density `l` gives to a domain index.
    pub fn probability(&self, axis: Axis, value_index: usize) -> f64 {
        self.entry(axis).1[value_index]
    }

    /// `Σ log l(x) − log g(x)` over the axes the spec has.
    pub fn log_ratio(&self, spec: &ArchitectureSpec) -> f64 {
        self.axes
            .iter()
            .filter_map(|(a, l, g)| a.value_index(spec).map(|v| l[v].ln() - g[v].ln()))
            .sum()
    }

    /// Draws from `l` axis by axis.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ArchitectureSpec {
        let mut choices = ChaCha8Rng::from_rng(&mut *rng);
        build_spec(
            |axis| {
                let l = &self.entry(axis).1;
                let u: f64 = choices.random();
                let mut acc = 0.0;
                for (i, p) in l.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                l.len() - 1
            },
            rng,
        )
    }
}

/// Next TPE proposal for trial `index`. Falls back to [`sample_random`] (the
/// same draw) until enough ok trials exist.
pub fn sample_tpe(history: &[Trial], config: &SearchConfig, index: usize) -> ArchitectureSpec {
    let Some(model) = TpeModel::fit(history, config) else {
        return sample_random(config.master_seed, index);
    };
    let mut rng = trial_rng(config.master_seed, index);
    let candidates: Vec<ArchitectureSpec> = (0..config.tpe_candidates).map(|_| model.sample(&mut rng)).collect();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let s = model.log_ratio(c);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    candidates.into_iter().nth(best).expect("at least one candidate")
}

/// Scores one spec and records the outcome.
pub fn evaluate_candidate(evaluator: &dyn CandidateEvaluator, spec: ArchitectureSpec, index: usize) -> Trial {
    let (status, objective) = match evaluator.evaluate(&spec) {
        Ok(v) if v.is_finite() => (TrialStatus::Ok, Some(v)),
        Ok(v) => {
            log::warn!("trial {index}: non-finite objective {v}");
            (TrialStatus::Failed, None)
        }
        Err(Error::Shape { layer, reason }) => {
            log::debug!("trial {index}: rejected at layer {layer}: {reason}");
            (TrialStatus::RejectedShape, None)
        }
        Err(e) => {
            log::warn!("trial {index}: {e}");
            (TrialStatus::Failed, None)
        }
    };
    Trial {
        index,
        spec,
        objective,
        status,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Trial,
    pub history: Vec<Trial>,
}

impl SearchOutcome {
    /// The history as a line-per-trial log.
    pub fn history_log(&self) -> String {
        self.history.iter().map(|t| t.to_line() + "\n").collect()
    }
}

pub fn parse_history(text: &str) -> Result<Vec<Trial>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(Trial::parse_line)
        .collect()
}

/// Runs `config.budget` trials and returns the best ok trial (ties to the
/// earliest) with the full history.
pub fn run_search_with(evaluator: &dyn CandidateEvaluator, config: &SearchConfig) -> Result<SearchOutcome> {
    config.validate()?;
    let history: Vec<Trial> = match config.optimizer {
        Optimizer::Random => (0..config.budget)
            .into_par_iter()
            .map(|i| evaluate_candidate(evaluator, sample_random(config.master_seed, i), i))
            .collect(),
        Optimizer::Tpe => {
            let mut history = Vec::with_capacity(config.budget);
            for i in 0..config.budget {
                let spec = sample_tpe(&history, config, i);
                history.push(evaluate_candidate(evaluator, spec, i));
            }
            history
        }
    };
    let best = history
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .fold(None::<&Trial>, |best, t| match best {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
        .cloned();
    let Some(best) = best else {
        let rejected = history.iter().filter(|t| t.status == TrialStatus::RejectedShape).count();
        let failed = history.iter().filter(|t| t.status == TrialStatus::Failed).count();
        return Err(Error::config(format!(
            "no usable architecture among {} trials ({rejected} rejected for shape, {failed} failed)",
            history.len()
        )));
    };
    log::info!(
        "search ({} trials, {}): best objective {:.4} from trial {}",
        history.len(),
        config.optimizer,
        best.objective.unwrap_or(f64::NAN),
        best.index
    );
    Ok(SearchOutcome { best, history })
}

/// Searches with the convnet evaluator on `train` only.
pub fn run_search(train: &GalleryDataset, config: &SearchConfig) -> Result<SearchOutcome> {
    run_search_with(&BarkEvaluator::new(train, config), config)
}
