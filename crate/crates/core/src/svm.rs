//! One-vs-rest linear SVM trained by dual coordinate descent on the hinge
//! loss.
//!
//! The bias is learned as the weight of an extra constant feature equal to 1,
//! so it is regularized together with `w` (the liblinear convention).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{argmax, dot};
use crate::ABSENT_SCORE;

pub const BARK_SVM_C: f64 = 1e5;
pub const WOOF_SVM_C: f64 = 1.0;
pub const DEFAULT_SVM_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SVM_MAX_ITERATIONS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop once the spread of the projected gradient falls below this.
    pub tolerance: f64,
    /// Cap on full passes over the data.
    pub max_iterations: usize,
    pub fit_bias: bool,
    /// Seeds the per-epoch visiting order.
    pub seed: u64,
}

impl SvmConfig {
    pub fn with_c(c: f64) -> Self {
        Self {
            c,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::config(format!("SVM C must be positive, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config(format!(
                "SVM tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("SVM max_iterations must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: WOOF_SVM_C,
            tolerance: DEFAULT_SVM_TOLERANCE,
            max_iterations: DEFAULT_SVM_MAX_ITERATIONS,
            fit_bias: true,
            seed: 0,
        }
    }
}

/// Solver state of one binary problem after training.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDiagnostics {
    pub epochs: usize,
    pub converged: bool,
    /// Spread `max PG − min PG` of the projected gradient at the final iterate.
    pub kkt_violation: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub config: SvmConfig,
    /// One weight vector per class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub feature_dim: usize,
    pub diagnostics: Vec<BinaryDiagnostics>,
}

impl SvmModel {
    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        svm_scores(self, x)
    }
}

struct Binary {
    w: Vec<f64>,
    bias: f64,
    diag: BinaryDiagnostics,
}

/// Dual coordinate descent for `min ½‖w‖² + C Σ max(0, 1 − yᵢ wᵀxᵢ)`.
fn train_binary(features: &[Vec<f64>], positive: &[bool], config: &SvmConfig, stream: u64) -> Binary {
    let n = features.len();
    let dim = features[0].len();
    let b_feat = if config.fit_bias { 1.0 } else { 0.0 };
    let y: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let qii: Vec<f64> = features.iter().map(|x| dot(x, x) + b_feat * b_feat).collect();
    let c = config.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let projected = |g: f64, a: f64| {
        if a <= 0.0 {
            g.min(0.0)
        } else if a >= c {
            g.max(0.0)
        } else {
            g
        }
    };
    let spread = |w: &[f64], bias: f64, alpha: &[f64]| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let g = y[i] * (dot(w, &features[i]) + bias * b_feat) - 1.0;
            let pg = projected(g, alpha[i]);
            lo = lo.min(pg);
            hi = hi.max(pg);
        }
        hi - lo
    };

    let mut epochs = 0;
    let mut converged = false;
    while epochs < config.max_iterations {
        epochs += 1;
        order.shuffle(&mut rng);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &order {
            let x = &features[i];
            let g = y[i] * (dot(&w, x) + bias * b_feat) - 1.0;
            let pg = projected(g, alpha[i]);
            lo = lo.min(pg);
            hi = hi.max(pg);
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = if qii[i] > 0.0 {
                (old - g / qii[i]).clamp(0.0, c)
            } else if g < 0.0 {
                c
            } else {
                0.0
            };
            let step = (alpha[i] - old) * y[i];
            if step != 0.0 {
                w.iter_mut().zip(x).for_each(|(wj, xj)| *wj += step * xj);
                bias += step * b_feat;
            }
        }
        // The in-epoch spread mixes iterates; confirm on the final one.
        if hi - lo <= config.tolerance && spread(&w, bias, &alpha) <= config.tolerance {
            converged = true;
            break;
        }
    }
    let kkt_violation = spread(&w, bias, &alpha);
    let (alpha_min, alpha_max) = alpha
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    Binary {
        w,
        bias,
        diag: BinaryDiagnostics {
            epochs,
            converged,
            kkt_violation,
            alpha_min,
            alpha_max,
        },
    }
}

/// Trains one binary problem per class (class `c` against the rest).
/// `labels` must cover `0..class_count` with every class present.
pub fn svm_train(features: &[Vec<f64>], labels: &[usize], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let Some(first) = features.first() else {
        return Err(Error::invalid("SVM training needs at least one sample"));
    };
    let dim = first.len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("SVM features must be finite"));
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    if class_count < 2 {
        return Err(Error::invalid("SVM training needs at least two classes"));
    }
    let mut counts = vec![0usize; class_count];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {missing} has no training samples")));
    }

    let binaries: Vec<Binary> = (0..class_count)
        .into_par_iter()
        .map(|class| {
            let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
            train_binary(features, &positive, config, class as u64)
        })
        .collect();

    for (class, b) in binaries.iter().enumerate() {
        if !b.diag.converged {
            log::warn!(
                "SVM class {class} stopped after {} epochs without converging (KKT spread {:.3e}); using last iterate",
                b.diag.epochs,
                b.diag.kkt_violation
            );
        }
    }
    let mut weights = Vec::with_capacity(class_count);
    let mut biases = Vec::with_capacity(class_count);
    let mut diagnostics = Vec::with_capacity(class_count);
    for b in binaries {
        weights.push(b.w);
        biases.push(b.bias);
        diagnostics.push(b.diag);
    }
    Ok(SvmModel {
        config: *config,
        weights,
        biases,
        feature_dim: dim,
        diagnostics,
    })
}

/// Raw decision values `w_c·x + b_c`, one per class.
pub fn svm_scores(model: &SvmModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            actual: x.len(),
        });
    }
    Ok(model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(w, b)| dot(w, x) + b)
        .collect())
}

pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<usize> {
    let scores = svm_scores(model, x)?;
    argmax(&scores).ok_or_else(|| Error::invalid("decision scores are all NaN"))
}

/// An SVM over the classes present in a training split, scoring the full
/// label set. Classes without training samples get [`ABSENT_SCORE`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSvm {
    pub class_count: usize,
    /// Full-set class index of each inner SVM class.
    pub present: Vec<usize>,
    /// `None` when only one class was present.
    pub model: Option<SvmModel>,
    pub feature_dim: usize,
}

impl LabeledSvm {
    pub fn train(features: &[Vec<f64>], labels: &[usize], class_count: usize, config: &SvmConfig) -> Result<Self> {
        let Some(first) = features.first() else {
            return Err(Error::invalid("SVM training needs at least one sample"));
        };
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} out of range for {class_count} classes")));
        }
        let mut present: Vec<usize> = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        let model = if present.len() >= 2 {
            let inner: Vec<usize> = labels
                .iter()
                .map(|l| present.binary_search(l).unwrap_or_default())
                .collect();
            Some(svm_train(features, &inner, config)?)
        } else {
            config.validate()?;
            None
        };
        Ok(Self {
            class_count,
            present,
            model,
            feature_dim: first.len(),
        })
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![ABSENT_SCORE; self.class_count];
        match &self.model {
            Some(m) => {
                for (s, &c) in svm_scores(m, x)?.into_iter().zip(&self.present) {
                    out[c] = s;
                }
            }
            None => {
                if x.len() != self.feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.feature_dim,
                        actual: x.len(),
                    });
                }
                out[self.present[0]] = 0.0;
            }
        }
        Ok(out)
    }
}

/// Softmax of decision scores, for display only. Rankings use raw scores.
pub fn pseudo_probabilities(scores: &[f64]) -> Vec<f64> {
    let finite = scores.iter().copied().filter(|v| v.is_finite());
    let max = finite.fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; scores.len()];
    }
    let exp: Vec<f64> = scores
        .iter()
        .map(|&s| if s.is_finite() { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn accuracy(model: &SvmModel, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| svm_predict(model, x).unwrap() == y)
            .count();
        hits as f64 / xs.len() as f64
    }

    #[test]
    fn one_dimensional_separable() {
        let xs = vec![vec![-1.0], vec![1.0]];
        let ys = vec![0, 1];
        let m = svm_train(&xs, &ys, &SvmConfig::with_c(BARK_SVM_C)).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys), 1.0);
        // the class-1 score changes sign strictly between the two points
        let at = |x: f64| svm_scores(&m, &[x]).unwrap()[1];
        assert!(at(-1.0) < 0.0 && at(1.0) > 0.0);
        assert!(m.diagnostics.iter().all(|d| d.converged));
    }

    #[test]
    fn contradictory_labels_still_give_finite_model() {
        let xs = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let m = svm_train(&xs, &[0, 1], &SvmConfig::default()).unwrap();
        assert!(m.weights.iter().flatten().chain(&m.biases).all(|v| v.is_finite()));
    }

    #[test]
    fn xor_is_not_linearly_fittable() {
        // Any line splits the four XOR corners into at most 3 correct points.
        let xs = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let ys = vec![0, 0, 1, 1];
        for c in [1.0, 1e5] {
            let m = svm_train(&xs, &ys, &SvmConfig::with_c(c)).unwrap();
            assert!(accuracy(&m, &xs, &ys) <= 0.75);
        }
    }

    #[test]
    fn hand_built_scores() {
        let m = SvmModel {
            config: SvmConfig::default(),
            weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            biases: vec![0.0, 0.0],
            feature_dim: 2,
            diagnostics: vec![],
        };
        assert_eq!(svm_scores(&m, &[2.0, 1.0]).unwrap(), vec![2.0, 1.0]);
        assert_eq!(svm_predict(&m, &[2.0, 1.0]).unwrap(), 0);
        assert_eq!(svm_predict(&m, &[1.0, 1.0]).unwrap(), 0);
        assert!(svm_scores(&m, &[1.0]).is_err());
        let zero = SvmModel {
            weights: vec![vec![0.0; 2]; 2],
            biases: vec![0.25, -1.0],
            ..m
        };
        assert_eq!(svm_scores(&zero, &[3.0, 4.0]).unwrap(), vec![0.25, -1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = SvmConfig::default();
        assert!(svm_train(&[vec![1.0], vec![2.0]], &[0, 0], &cfg).is_err());
        assert!(svm_train(&[vec![1.0], vec![2.0, 1.0]], &[0, 1], &cfg).is_err());
        assert!(svm_train(&[vec![1.0], vec![2.0]], &[0, 2], &cfg).is_err());
        assert!(svm_train(&[vec![1.0], vec![2.0]], &[0, 1], &SvmConfig::with_c(0.0)).is_err());
    }

    #[test]
    fn non_convergence_returns_last_iterate() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let cfg = SvmConfig {
            max_iterations: 1,
            ..SvmConfig::with_c(1e5)
        };
        let m = svm_train(&xs, &[0, 0, 1, 1], &cfg).unwrap();
        assert!(m.diagnostics.iter().any(|d| !d.converged && d.epochs == 1));
    }

    #[test]
    fn labeled_svm_handles_absent_classes() {
        let xs = vec![vec![-1.0], vec![-0.8], vec![1.0], vec![0.9]];
        let m = LabeledSvm::train(&xs, &[0, 0, 3, 3], 4, &SvmConfig::with_c(BARK_SVM_C)).unwrap();
        let s = m.scores(&[0.95]).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!((s[1], s[2]), (ABSENT_SCORE, ABSENT_SCORE));
        assert!(s[3] > s[0]);
        let single = LabeledSvm::train(&xs[..2], &[2, 2], 3, &SvmConfig::default()).unwrap();
        assert_eq!(single.scores(&[5.0]).unwrap(), vec![ABSENT_SCORE, ABSENT_SCORE, 0.0]);
        assert!(LabeledSvm::train(&xs, &[0, 0, 3, 4], 4, &SvmConfig::default()).is_err());
    }

    #[test]
    fn pseudo_probabilities_sum_to_one() {
        let p = pseudo_probabilities(&[1.0, 2.0, f64::MIN, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0] && p[0] > p[3]);
    }

    fn separable_fixture() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        // Three clusters around well separated centers; the per-point jitter
        // keeps every pair of classes at least 0.1 apart along some axis.
        (prop::collection::vec((0usize..3, -0.2f64..0.2, -0.2f64..0.2), 6..30)).prop_map(|pts| {
            let centers = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (i, &(c, dx, dy)) in pts.iter().enumerate() {
                let class = if i < 3 { i } else { c };
                xs.push(vec![centers[class].0 + dx, centers[class].1 + dy]);
                ys.push(class);
            }
            (xs, ys)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn separable_fixtures_fit_exactly((xs, ys) in separable_fixture()) {
            let cfg = SvmConfig::with_c(BARK_SVM_C);
            let m = svm_train(&xs, &ys, &cfg).unwrap();
            prop_assert_eq!(accuracy(&m, &xs, &ys), 1.0);
            for d in &m.diagnostics {
                prop_assert!(d.alpha_min >= 0.0 && d.alpha_max <= cfg.c);
                if d.converged {
                    prop_assert!(d.kkt_violation <= cfg.tolerance);
                }
            }
            let again = svm_train(&xs, &ys, &cfg).unwrap();
            prop_assert_eq!(m, again);
        }

        #[test]
        fn scores_are_linear_without_bias(
            (xs, ys) in separable_fixture(),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            p in prop::array::uniform2(-2.0f64..2.0),
            q in prop::array::uniform2(-2.0f64..2.0),
        ) {
            let cfg = SvmConfig { fit_bias: false, ..SvmConfig::with_c(10.0) };
            let m = svm_train(&xs, &ys, &cfg).unwrap();
            prop_assert!(m.biases.iter().all(|&v| v == 0.0));
            let mix = [a * p[0] + b * q[0], a * p[1] + b * q[1]];
            let sp = svm_scores(&m, &p).unwrap();
            let sq = svm_scores(&m, &q).unwrap();
            let sm = svm_scores(&m, &mix).unwrap();
            for c in 0..3 {
                prop_assert!((sm[c] - (a * sp[c] + b * sq[c])).abs() < 1e-9);
            }
        }
    }
}
