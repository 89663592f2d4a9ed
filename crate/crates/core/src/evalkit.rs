//! Stratified k-fold protocol and the metrics reported for every recognizer:
//! balanced accuracy, top-k recall, confusion matrix, and odds ratio against
//! a chance baseline.
//!
//! Ranking ties are broken by the lower class index everywhere, matching
//! [`crate::numerics::argmax`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{FaceImage, GalleryDataset, SampleKey};
use crate::numerics::argmax;

pub const DEFAULT_FOLDS: usize = 10;

/// A trained model that ranks every class for one probe. Higher is better.
pub trait Scorer: Send + Sync {
    /// `key` identifies the probe's source file; only recognizers that look
    /// up precomputed features use it.
    fn score(&self, probe: &FaceImage, key: &SampleKey) -> Result<Vec<f64>>;
}

/// Something that can be trained on a gallery split.
pub trait Recognizer: Sync {
    type Model: Scorer;

    fn name(&self) -> String;

    /// Trains on `train` only; the returned model scores all
    /// `train.class_count()` classes.
    fn train(&self, train: &GalleryDataset) -> Result<Self::Model>;
}

/// Fold index of every sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignments.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }
}

pub fn stratified_folds(ds: &GalleryDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_folds_for_labels(&ds.labels(), ds.class_count(), k, seed)
}

/// Shuffles each class, then deals all classes in class order round-robin
/// into folds, continuing from where the previous class stopped and starting
/// at a seed-derived fold. Each class and the folds overall stay within one
/// sample of even.
pub fn stratified_folds_for_labels(labels: &[usize], class_count: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::config(format!(
            "{k} folds requested but only {} samples",
            labels.len()
        )));
    }
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::invalid(format!("label {l} out of range")));
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut position = rng.random_range(0..k);
    let mut assignments = vec![0; labels.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignments[i] = position % k;
            position += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(pairs: impl IntoIterator<Item = (usize, usize)>, class_count: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; class_count]; class_count];
    for (t, p) in pairs {
        m[t][p] += 1;
    }
    m
}

/// Per-class accuracy `diag / rowsum`; `None` for classes never tested.
pub fn class_accuracies(confusion: &[Vec<usize>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect()
}

/// Mean of the per-class accuracies. Classes without test samples are left
/// out (with a warning).
pub fn balanced_accuracy(confusion: &[Vec<usize>]) -> Result<f64> {
    let accs = class_accuracies(confusion);
    let present: Vec<f64> = accs.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::invalid("confusion matrix has no test samples"));
    }
    let missing = accs.len() - present.len();
    if missing > 0 {
        log::warn!("{missing} classes have no test samples and are left out of balanced accuracy");
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// 1-based position of `true_class` when classes are sorted by descending
/// score, ties to the lower index.
pub fn rank_of(scores: &[f64], true_class: usize) -> usize {
    let t = scores[true_class];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < true_class))
        .count()
}

/// Class indices sorted best first.
pub fn ranked_classes(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// One scored test: the true class and the score of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub true_class: usize,
    pub scores: Vec<f64>,
}

/// Fraction of tests whose true class is among the `k` best scores.
pub fn topk_recall(rankings: &[Ranking], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::invalid("no rankings to evaluate"));
    }
    let c = rankings[0].scores.len();
    if k == 0 || k > c {
        return Err(Error::invalid(format!("k must be in 1..={c}, got {k}")));
    }
    if let Some(bad) = rankings.iter().find(|r| r.scores.len() != c || r.true_class >= c) {
        return Err(Error::DimensionMismatch {
            expected: c,
            actual: bad.scores.len(),
        });
    }
    let hits = rankings
        .iter()
        .filter(|r| rank_of(&r.scores, r.true_class) <= k)
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// `odds(p) / odds(q)` with `odds(x) = x / (1 − x)`; infinite at `p = 1`.
pub fn odds_ratio(p: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("chance level {q} must lie in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("recall {p} must lie in [0, 1]")));
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok((p / (1.0 - p)) / (q / (1.0 - q)))
}

/// Prints `∞` for infinite ratios.
pub fn format_ratio(r: f64) -> String {
    if r == f64::INFINITY {
        "∞".to_string()
    } else {
        format!("{r}")
    }
}

/// Parses `label<TAB>group` lines; blank lines and `#` comments are skipped.
pub fn parse_groups(text: &str, path: &str) -> Result<BTreeMap<String, String>> {
    let mut groups = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((label, group)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_string(),
                line: n + 1,
                column: 1,
                message: "expected label<TAB>group".into(),
            });
        };
        groups.insert(label.to_string(), group.trim().to_string());
    }
    Ok(groups)
}

/// One test of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fold: usize,
    pub key: SampleKey,
    pub true_class: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub method: String,
    pub dataset: String,
    pub k: usize,
    pub seed: u64,
    pub labels: Vec<String>,
    pub predictions: Vec<Prediction>,
    pub confusion: Vec<Vec<usize>>,
    pub balanced_accuracy: f64,
    /// `topk_recall[k − 1]` for `k = 1..=C`.
    pub topk_recall: Vec<f64>,
    /// Denominator of the chance level `q = k / chance_classes`.
    pub chance_classes: usize,
    pub fold_sizes: Vec<usize>,
}

impl EvaluationReport {
    pub fn from_predictions(
        method: impl Into<String>,
        ds: &GalleryDataset,
        plan: &FoldPlan,
        predictions: Vec<Prediction>,
    ) -> Result<Self> {
        let c = ds.class_count();
        let confusion = confusion_matrix(predictions.iter().map(|p| (p.true_class, p.predicted)), c);
        let rankings: Vec<Ranking> = predictions
            .iter()
            .map(|p| Ranking {
                true_class: p.true_class,
                scores: p.scores.clone(),
            })
            .collect();
        let topk_recall = (1..=c)
            .map(|k| topk_recall(&rankings, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method: method.into(),
            dataset: ds.name.clone(),
            k: plan.k,
            seed: plan.seed,
            labels: ds.individuals().to_vec(),
            balanced_accuracy: balanced_accuracy(&confusion)?,
            confusion,
            predictions,
            topk_recall,
            chance_classes: c,
            fold_sizes: plan.fold_sizes(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    /// Odds ratio of each top-k recall against `k / chance_classes`;
    /// `None` where the chance level reaches 1.
    pub fn odds_ratios(&self) -> Vec<Option<f64>> {
        self.topk_recall
            .iter()
            .enumerate()
            .map(|(i, &p)| odds_ratio(p, (i + 1) as f64 / self.chance_classes as f64).ok())
            .collect()
    }

    /// Mean per-class accuracy of each group's classes.
    pub fn group_accuracies(&self, groups: &BTreeMap<String, String>) -> BTreeMap<String, f64> {
        let accs = class_accuracies(&self.confusion);
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (label, acc) in self.labels.iter().zip(&accs) {
            if let (Some(group), Some(acc)) = (groups.get(label), acc) {
                let e = sums.entry(group.clone()).or_default();
                e.0 += acc;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
    }

    pub fn to_text(&self, groups: Option<&BTreeMap<String, String>>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method             {}", self.method);
        let _ = writeln!(out, "dataset            {}", self.dataset);
        let _ = writeln!(
            out,
            "protocol           {}-fold stratified, seed {}",
            self.k, self.seed
        );
        let _ = writeln!(
            out,
            "samples/classes    {}/{}",
            self.predictions.len(),
            self.class_count()
        );
        let _ = writeln!(out, "balanced accuracy  {:.4}", self.balanced_accuracy);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>4}  {:>8}  {:>8}  {:>10}", "k", "recall", "chance", "odds ratio");
        for (i, (r, odds)) in self.topk_recall.iter().zip(self.odds_ratios()).enumerate() {
            let k = i + 1;
            let chance = k as f64 / self.chance_classes as f64;
            let odds = odds.map_or("NA".to_string(), |o| {
                if o.is_infinite() {
                    "∞".to_string()
                } else {
                    format!("{o:.3}")
                }
            });
            let _ = writeln!(out, "{k:>4}  {r:>8.4}  {:>8.4}  {odds:>10}", chance.min(1.0));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "per-class accuracy");
        for (label, acc) in self.labels.iter().zip(class_accuracies(&self.confusion)) {
            let acc = acc.map_or("untested".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(out, "  {label:<24} {acc}");
        }
        if let Some(groups) = groups {
            let _ = writeln!(out);
            let _ = writeln!(out, "per-group accuracy");
            for (g, acc) in self.group_accuracies(groups) {
                let _ = writeln!(out, "  {g:<24} {acc:.4}");
            }
        }
        out
    }

    /// `metric<TAB>key<TAB>value` lines.
    pub fn to_tsv(&self, groups: Option<&BTreeMap<String, String>>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method\tall\t{}", self.method);
        let _ = writeln!(out, "folds\tall\t{}", self.k);
        let _ = writeln!(out, "seed\tall\t{}", self.seed);
        let _ = writeln!(out, "samples\tall\t{}", self.predictions.len());
        let _ = writeln!(out, "classes\tall\t{}", self.class_count());
        let _ = writeln!(out, "balanced_accuracy\tall\t{}", self.balanced_accuracy);
        for (i, r) in self.topk_recall.iter().enumerate() {
            let _ = writeln!(out, "topk_recall\t{}\t{r}", i + 1);
        }
        for (i, o) in self.odds_ratios().into_iter().enumerate() {
            let v = o.map_or("NA".to_string(), format_ratio);
            let _ = writeln!(out, "odds_ratio\t{}\t{v}", i + 1);
        }
        for (label, acc) in self.labels.iter().zip(class_accuracies(&self.confusion)) {
            let v = acc.map_or("NA".to_string(), |a| a.to_string());
            let _ = writeln!(out, "class_accuracy\t{label}\t{v}");
        }
        if let Some(groups) = groups {
            for (g, acc) in self.group_accuracies(groups) {
                let _ = writeln!(out, "group_accuracy\t{g}\t{acc}");
            }
        }
        for (f, n) in self.fold_sizes.iter().enumerate() {
            let _ = writeln!(out, "fold_size\t{f}\t{n}");
        }
        out
    }

    /// Confusion matrix with class labels as header row and column; rows are
    /// true classes.
    pub fn confusion_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(&quote(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(&quote(l));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// `k<TAB>recall<TAB>odds_ratio` lines with a header.
    pub fn recall_curve(&self) -> String {
        let mut out = String::from("k\trecall\todds_ratio\n");
        for (i, (r, o)) in self.topk_recall.iter().zip(self.odds_ratios()).enumerate() {
            let v = o.map_or("NA".to_string(), format_ratio);
            let _ = writeln!(out, "{}\t{r}\t{v}", i + 1);
        }
        out
    }

    /// One line per test with its rank-1 guess and the true class's rank.
    pub fn predictions_tsv(&self) -> String {
        let mut out = String::from("fold\tsample\ttrue\tpredicted\trank\n");
        for p in &self.predictions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                p.fold,
                p.key,
                self.labels[p.true_class],
                self.labels[p.predicted],
                rank_of(&p.scores, p.true_class)
            );
        }
        out
    }
}

/// Runs the k-fold protocol: each fold trains on the other folds and scores
/// its own samples. Folds run in parallel and are merged in fold order.
pub fn run_protocol<R: Recognizer>(ds: &GalleryDataset, recognizer: &R, k: usize, seed: u64) -> Result<EvaluationReport> {
    let plan = stratified_folds(ds, k, seed)?;
    let per_fold: Vec<Vec<Prediction>> = (0..k)
        .into_par_iter()
        .map(|fold| run_fold(ds, recognizer, &plan, fold))
        .collect::<Result<_>>()?;
    EvaluationReport::from_predictions(recognizer.name(), ds, &plan, per_fold.into_iter().flatten().collect())
}

fn run_fold<R: Recognizer>(ds: &GalleryDataset, recognizer: &R, plan: &FoldPlan, fold: usize) -> Result<Vec<Prediction>> {
    let train = ds.subset(&plan.train_indices(fold));
    let missing: Vec<&str> = train
        .class_counts()
        .iter()
        .zip(ds.individuals())
        .filter(|(&n, _)| n == 0)
        .map(|(_, l)| l.as_str())
        .collect();
    if !missing.is_empty() {
        log::warn!(
            "fold {fold}: no training samples for {}; those classes cannot be predicted",
            missing.join(", ")
        );
    }
    let model = recognizer.train(&train)?;
    plan.test_indices(fold)
        .into_iter()
        .map(|i| {
            let sample = &ds.samples()[i];
            let key = ds.key(i);
            let scores = model.score(&sample.image, &key)?;
            if scores.len() != ds.class_count() {
                return Err(Error::DimensionMismatch {
                    expected: ds.class_count(),
                    actual: scores.len(),
                });
            }
            let predicted = argmax(&scores).ok_or_else(|| Error::invalid(format!("{key}: all scores are NaN")))?;
            Ok(Prediction {
                fold,
                key,
                true_class: sample.class_index,
                predicted,
                scores,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Sample;
    use proptest::prelude::*;

    fn dataset(counts: &[usize]) -> GalleryDataset {
        let labels: Vec<String> = (0..counts.len()).map(|c| format!("dog{c}")).collect();
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let v = (c as f64 + 1.0) / (counts.len() as f64 + 1.0);
                samples.push(Sample {
                    image: FaceImage::new(2, 2, vec![v; 4], format!("img{i}")).unwrap(),
                    class_index: c,
                });
            }
        }
        GalleryDataset::new("toy", labels, samples).unwrap().0
    }

    struct Oracle;
    struct OracleModel(Vec<f64>, usize);
    impl Scorer for OracleModel {
        fn score(&self, probe: &FaceImage, _: &SampleKey) -> Result<Vec<f64>> {
            // class c images have intensity (c + 1) / (C + 1)
            let c = (probe.get(0, 0) * (self.1 as f64 + 1.0)).round() as usize - 1;
            let mut s = self.0.clone();
            s[c] = 1.0;
            Ok(s)
        }
    }
    impl Recognizer for Oracle {
        type Model = OracleModel;
        fn name(&self) -> String {
            "oracle".into()
        }
        fn train(&self, train: &GalleryDataset) -> Result<OracleModel> {
            Ok(OracleModel(vec![0.0; train.class_count()], train.class_count()))
        }
    }

    struct Constant;
    struct ConstantModel(usize);
    impl Scorer for ConstantModel {
        fn score(&self, _: &FaceImage, _: &SampleKey) -> Result<Vec<f64>> {
            let mut s = vec![0.0; self.0];
            s[0] = 1.0;
            Ok(s)
        }
    }
    impl Recognizer for Constant {
        type Model = ConstantModel;
        fn name(&self) -> String {
            "constant".into()
        }
        fn train(&self, train: &GalleryDataset) -> Result<ConstantModel> {
            Ok(ConstantModel(train.class_count()))
        }
    }

    #[test]
    fn fold_examples() {
        let ds = dataset(&[10, 5]);
        let plan = stratified_folds(&ds, 10, 3).unwrap();
        let per_class = |c: usize| {
            let mut counts = vec![0; 10];
            for (i, s) in ds.samples().iter().enumerate() {
                if s.class_index == c {
                    counts[plan.assignments[i]] += 1;
                }
            }
            counts
        };
        assert!(per_class(0).iter().all(|&n| n == 1));
        let c1 = per_class(1);
        assert_eq!(c1.iter().filter(|&&n| n == 1).count(), 5);
        assert_eq!(c1.iter().filter(|&&n| n == 0).count(), 5);
        assert_eq!(plan, stratified_folds(&ds, 10, 3).unwrap());
        assert!(stratified_folds(&dataset(&[3, 3]), 7, 0).is_err());
        assert!(stratified_folds(&ds, 1, 0).is_err());
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[vec![3, 0], vec![0, 4]]).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[vec![2, 0], vec![1, 1]]).unwrap(), 0.75);
        let ba = balanced_accuracy(&[vec![9, 1], vec![1, 1]]).unwrap();
        assert!((ba - 0.7).abs() < 1e-12);
        assert!((ba - 10.0 / 12.0).abs() > 0.1);
        assert_eq!(balanced_accuracy(&[vec![2, 0, 0], vec![0, 0, 0], vec![0, 0, 1]]).unwrap(), 1.0);
        assert!(balanced_accuracy(&[vec![0, 0], vec![0, 0]]).is_err());
    }

    fn ranking_with_rank(rank: usize, c: usize) -> Ranking {
        // true class 0 scored so that exactly rank − 1 classes beat it
        let mut scores = vec![0.0; c];
        scores[0] = 0.5;
        for s in scores.iter_mut().skip(1).take(rank - 1) {
            *s = 1.0;
        }
        Ranking { true_class: 0, scores }
    }

    #[test]
    fn topk_examples() {
        let rs: Vec<Ranking> = [1, 2, 4, 5].iter().map(|&r| ranking_with_rank(r, 6)).collect();
        assert_eq!(topk_recall(&rs, 2).unwrap(), 0.5);
        assert_eq!(topk_recall(&rs, 6).unwrap(), 1.0);
        let third = [ranking_with_rank(3, 5)];
        assert_eq!(topk_recall(&third, 2).unwrap(), 0.0);
        assert_eq!(topk_recall(&third, 3).unwrap(), 1.0);
        assert!(topk_recall(&rs, 0).is_err());
        assert!(topk_recall(&rs, 7).is_err());
        // ties go to the lower class index
        assert_eq!(rank_of(&[1.0, 1.0, 0.0], 1), 2);
        assert_eq!(rank_of(&[1.0, 1.0, 0.0], 0), 1);
        assert_eq!(ranked_classes(&[0.2, 0.9, 0.9, f64::MIN]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn odds_examples() {
        assert!((odds_ratio(0.3, 0.3).unwrap() - 1.0).abs() < 1e-12);
        assert!((odds_ratio(0.9, 5.0 / 21.0).unwrap() - 28.8).abs() < 1e-9);
        assert_eq!(odds_ratio(0.0, 0.5).unwrap(), 0.0);
        assert_eq!(odds_ratio(1.0, 0.5).unwrap(), f64::INFINITY);
        assert_eq!(format_ratio(f64::INFINITY), "∞");
        assert!(odds_ratio(0.5, 1.0).is_err());
        assert!(odds_ratio(0.5, 0.0).is_err());
    }

    #[test]
    fn protocol_with_stubs() {
        let ds = dataset(&[6, 6, 5]);
        let r = run_protocol(&ds, &Oracle, 5, 1).unwrap();
        assert_eq!(r.balanced_accuracy, 1.0);
        assert_eq!(r.topk_recall[0], 1.0);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), ds.len());
        assert_eq!(r, run_protocol(&ds, &Oracle, 5, 1).unwrap());

        let two = dataset(&[6, 6]);
        let r = run_protocol(&two, &Constant, 3, 9).unwrap();
        assert_eq!(r.balanced_accuracy, 0.5);
        assert_eq!(r.confusion, vec![vec![6, 0], vec![6, 0]]);
    }

    #[test]
    fn report_outputs() {
        let ds = dataset(&[4, 4]);
        let mut r = run_protocol(&ds, &Constant, 2, 0).unwrap();
        r.chance_classes = 21;
        let tsv = r.to_tsv(None);
        assert!(tsv.contains("balanced_accuracy\tall\t0.5\n"));
        assert!(tsv.contains("topk_recall\t2\t1\n"));
        assert!(tsv.contains("odds_ratio\t2\t∞\n"));
        assert_eq!(r.confusion_csv(), "true\\predicted,dog0,dog1\ndog0,4,0\ndog1,4,0\n");
        assert!(r.recall_curve().starts_with("k\trecall\todds_ratio\n1\t0.5\t"));
        r.chance_classes = 2;
        assert!(r.recall_curve().ends_with("2\t1\tNA\n"));
        let groups = parse_groups("dog0\thusky\ndog1\thusky\n", "g").unwrap();
        assert_eq!(r.group_accuracies(&groups)["husky"], 0.5);
        assert!(r.to_text(Some(&groups)).contains("husky"));
        assert_eq!(r.predictions_tsv().lines().count(), 9);
        assert!(parse_groups("nogroup\n", "g").is_err());
    }

    #[test]
    fn random_scorer_balanced_accuracy_is_chance() {
        // 10 000 uniform guesses over 4 balanced classes; the balanced accuracy
        // is a mean of 4 binomial proportions with n = 2500, p = 1/4.
        let c = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs = (0..10_000).map(|i| (i % c, rand::Rng::random_range(&mut rng, 0..c)));
        let ba = balanced_accuracy(&confusion_matrix(pairs, c)).unwrap();
        let p = 1.0 / c as f64;
        let sigma = (p * (1.0 - p) / 2500.0).sqrt() / (c as f64).sqrt();
        assert!((ba - p).abs() < 3.0 * sigma, "{ba}");
    }

    proptest! {
        #[test]
        fn folds_are_balanced(counts in prop::collection::vec(1usize..15, 2..8), k in 2usize..11, seed: u64) {
            let n: usize = counts.iter().sum();
            prop_assume!(k <= n);
            let ds = dataset(&counts);
            let plan = stratified_folds(&ds, k, seed).unwrap();
            let sizes = plan.fold_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for c in 0..counts.len() {
                let mut per = vec![0usize; k];
                for (i, s) in ds.samples().iter().enumerate() {
                    if s.class_index == c { per[plan.assignments[i]] += 1; }
                }
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn recall_is_monotone(raw in prop::collection::vec((0usize..6, prop::collection::vec(-1.0f64..1.0, 6)), 1..40)) {
            let rs: Vec<Ranking> = raw.into_iter().map(|(t, scores)| Ranking { true_class: t, scores }).collect();
            let curve: Vec<f64> = (1..=6).map(|k| topk_recall(&rs, k).unwrap()).collect();
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(curve[5], 1.0);
        }

        #[test]
        fn odds_above_one_iff_beats_chance(p in 0.0f64..1.0, q in 0.001f64..0.999) {
            let r = odds_ratio(p, q).unwrap();
            prop_assert_eq!(r > 1.0, p > q);
        }
    }
}
