//! Precomputed deep features: the `DOGFEAT` text format, binding records to
//! gallery samples, and the linear SVM trained on them.
//!
//! ```text
//! DOGFEAT 1 <count> <dim>
//! <label>\t<image_id>\t<v1> <v2> ... <v_dim>
//! ```
//!
//! Lines starting with `#` after the header are ignored.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{GalleryDataset, SampleKey};
use crate::svm::{svm_scores, svm_train, SvmConfig, SvmModel, WOOF_SVM_C};

pub const DOGFEAT_MAGIC: &str = "DOGFEAT";
pub const DOGFEAT_VERSION: u32 = 1;

const MAX_LISTED_MISSING: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub label: String,
    pub image_id: String,
    pub values: Vec<f64>,
}

impl FeatureRecord {
    pub fn key(&self) -> SampleKey {
        SampleKey {
            label: self.label.clone(),
            source_id: self.image_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub records: Vec<FeatureRecord>,
    /// Comment lines without the leading `#`.
    pub comments: Vec<String>,
}

impl FeatureFile {
    pub fn new(dim: usize, records: Vec<FeatureRecord>) -> Self {
        Self {
            dim,
            records,
            comments: Vec::new(),
        }
    }
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    let text = std::fs::read_to_string(path)?;
    parse_feature_file(&text, &path.display().to_string())
}

/// Parses the text form; `path` only labels error locations.
pub fn parse_feature_file(text: &str, path: &str) -> Result<FeatureFile> {
    let err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_string(),
        line,
        column,
        message,
    };
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next().filter(|(_, h)| !h.trim().is_empty()) else {
        return Err(err(1, 1, "missing header".into()));
    };
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != DOGFEAT_MAGIC {
        return Err(err(
            1,
            1,
            format!("expected header \"{DOGFEAT_MAGIC} {DOGFEAT_VERSION} <count> <dim>\""),
        ));
    }
    let column_of = |i: usize| fields[..i].iter().map(|f| f.len() + 1).sum::<usize>() + 1;
    if fields[1] != DOGFEAT_VERSION.to_string() {
        return Err(err(1, column_of(1), format!("unsupported version {:?}", fields[1])));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| err(1, column_of(2), format!("bad record count {:?}", fields[2])))?;
    let dim: usize = fields[3]
        .parse()
        .map_err(|_| err(1, column_of(3), format!("bad dimension {:?}", fields[3])))?;
    if dim == 0 {
        return Err(err(1, column_of(3), "dimension must be positive".into()));
    }

    let mut records = Vec::with_capacity(count);
    let mut comments = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.to_string());
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(label), Some(id), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(n, 1, "expected <label>\\t<image_id>\\t<values>".into()));
        };
        if label.is_empty() || id.is_empty() {
            return Err(err(n, 1, "empty label or image id".into()));
        }
        let values_start = label.len() + id.len() + 2;
        let mut parsed = Vec::with_capacity(dim);
        let mut offset = 0;
        for token in values.split(' ') {
            let column = values_start + offset + 1;
            offset += token.len() + 1;
            let v: f64 = token
                .parse()
                .map_err(|_| err(n, column, format!("bad value {token:?}")))?;
            if !v.is_finite() {
                return Err(err(n, column, format!("non-finite value {token:?}")));
            }
            parsed.push(v);
        }
        if parsed.len() != dim {
            return Err(err(
                n,
                values_start + 1,
                format!("record {label}/{id} has {} values, header says {dim}", parsed.len()),
            ));
        }
        if !seen.insert((label, id)) {
            return Err(err(n, 1, format!("duplicate record {label}/{id}")));
        }
        records.push(FeatureRecord {
            label: label.to_string(),
            image_id: id.to_string(),
            values: parsed,
        });
    }
    if records.len() != count {
        return Err(err(
            text.lines().count().max(1),
            1,
            format!("header announces {count} records, found {}", records.len()),
        ));
    }
    Ok(FeatureFile {
        dim,
        records,
        comments,
    })
}

/// Text form of `ff`. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn format_feature_file(ff: &FeatureFile) -> Result<String> {
    let mut out = format!("{DOGFEAT_MAGIC} {DOGFEAT_VERSION} {} {}\n", ff.records.len(), ff.dim);
    for c in &ff.comments {
        let _ = writeln!(out, "#{c}");
    }
    for r in &ff.records {
        if r.values.len() != ff.dim {
            return Err(Error::DimensionMismatch {
                expected: ff.dim,
                actual: r.values.len(),
            });
        }
        if [&r.label, &r.image_id].iter().any(|s| s.is_empty() || s.contains(['\t', '\n'])) {
            return Err(Error::invalid(format!("unwritable key {}/{}", r.label, r.image_id)));
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value in {}/{}", r.label, r.image_id)));
        }
        let _ = write!(out, "{}\t{}\t", r.label, r.image_id);
        for (i, v) in r.values.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_feature_file(ff: &FeatureFile, path: &Path) -> Result<()> {
    std::fs::write(path, format_feature_file(ff)?)?;
    Ok(())
}

/// Feature vectors in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundFeatures {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Records that matched no sample.
    pub unmatched: usize,
}

/// Looks up every sample of `ds` by `(label, file stem)`.
pub fn bind_features(ff: &FeatureFile, ds: &GalleryDataset) -> Result<BoundFeatures> {
    let index = feature_index(ff);
    let mut features = Vec::with_capacity(ds.len());
    let mut missing = Vec::new();
    for i in 0..ds.len() {
        let key = ds.key(i);
        match index.get(&key) {
            Some(v) => features.push(v.to_vec()),
            None => missing.push(key),
        }
    }
    if !missing.is_empty() {
        let listed: Vec<String> = missing.iter().take(MAX_LISTED_MISSING).map(|k| k.to_string()).collect();
        let more = missing.len().saturating_sub(MAX_LISTED_MISSING);
        return Err(Error::config(format!(
            "{} samples have no feature record: {}{}",
            missing.len(),
            listed.join(", "),
            if more > 0 { format!(" and {more} more") } else { String::new() }
        )));
    }
    let wanted: HashSet<SampleKey> = (0..ds.len()).map(|i| ds.key(i)).collect();
    let unmatched = ff.records.iter().filter(|r| !wanted.contains(&r.key())).count();
    if unmatched > 0 {
        log::warn!("{unmatched} unmatched feature records ignored");
    }
    Ok(BoundFeatures {
        features,
        labels: ds.labels(),
        unmatched,
    })
}

/// Records keyed by `(label, image_id)`.
pub fn feature_index(ff: &FeatureFile) -> HashMap<SampleKey, &[f64]> {
    ff.records.iter().map(|r| (r.key(), r.values.as_slice())).collect()
}

/// Optional preprocessing of deep features before the SVM. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureNormalization {
    #[default]
    None,
    /// Scale each vector to unit Euclidean norm.
    L2,
}

impl FeatureNormalization {
    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        match self {
            FeatureNormalization::None => v.to_vec(),
            FeatureNormalization::L2 => {
                let n = crate::numerics::norm2(v);
                if n > 0.0 {
                    v.iter().map(|x| x / n).collect()
                } else {
                    v.to_vec()
                }
            }
        }
    }
}

pub fn woof_svm_config() -> SvmConfig {
    SvmConfig::with_c(WOOF_SVM_C)
}

/// Linear SVM with `C = 1` over deep features.
pub fn woof_train(features: &[Vec<f64>], labels: &[usize]) -> Result<SvmModel> {
    svm_train(features, labels, &woof_svm_config())
}

pub fn woof_scores(model: &SvmModel, feature: &[f64]) -> Result<Vec<f64>> {
    svm_scores(model, feature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{FaceImage, Sample};
    use proptest::prelude::*;

    const SMALL: &str = "DOGFEAT 1 2 3\nrex\ta\t0.5 -1 2e-3\nfido\tb\t1 2 3\n";

    fn parse(text: &str) -> Result<FeatureFile> {
        parse_feature_file(text, "f.txt")
    }

    fn location(e: Error) -> (usize, usize, String) {
        match e {
            Error::Parse {
                line, column, message, ..
            } => (line, column, message),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn reads_valid_file() {
        let ff = parse(SMALL).unwrap();
        assert_eq!(ff.dim, 3);
        assert_eq!(ff.records.len(), 2);
        assert_eq!(ff.records[0].values, vec![0.5, -1.0, 0.002]);
        let with_comment = "DOGFEAT 1 1 2\n# layer=19\nrex\ta\t1 2\n";
        assert_eq!(parse(with_comment).unwrap().comments, vec![" layer=19"]);
    }

    #[test]
    fn reports_error_locations() {
        let (line, col, msg) = location(parse("DOGFEAT 1 1 3\nrex\ta\t1 2\n").unwrap_err());
        assert_eq!((line, col), (2, 7));
        assert!(msg.contains("rex/a"));
        assert!(location(parse("").unwrap_err()).2.contains("missing header"));
        assert_eq!(location(parse("DOGFEET 1 0 3\n").unwrap_err()).0, 1);
        assert_eq!(location(parse("DOGFEAT 2 0 3\n").unwrap_err()).1, 9);
        let (line, col, _) = location(parse("DOGFEAT 1 1 2\nrex\ta\t1 inf\n").unwrap_err());
        assert_eq!((line, col), (2, 9));
        let (line, _, msg) = location(parse("DOGFEAT 1 2 1\nrex\ta\t1\nrex\ta\t2\n").unwrap_err());
        assert_eq!(line, 3);
        assert!(msg.contains("duplicate"));
        assert!(location(parse("DOGFEAT 1 3 1\nrex\ta\t1\n").unwrap_err()).2.contains("announces 3"));
        assert!(parse("DOGFEAT 1 1 1\nrex a 1\n").is_err());
    }

    fn gallery(keys: &[(&str, &str)]) -> GalleryDataset {
        let mut labels: Vec<String> = keys.iter().map(|k| k.0.to_string()).collect();
        labels.dedup();
        let samples = keys
            .iter()
            .map(|(l, id)| Sample {
                image: FaceImage::constant(2, 2, 0.5).unwrap().with_source_id(*id),
                class_index: labels.iter().position(|x| x == l).unwrap(),
            })
            .collect();
        GalleryDataset::new("g", labels, samples).unwrap().0
    }

    fn record(label: &str, id: &str, v: f64) -> FeatureRecord {
        FeatureRecord {
            label: label.into(),
            image_id: id.into(),
            values: vec![v, -v],
        }
    }

    #[test]
    fn binding_follows_dataset_order() {
        let ds = gallery(&[("rex", "a"), ("rex", "b"), ("fido", "c")]);
        let ff = FeatureFile::new(2, vec![record("fido", "c", 3.0), record("rex", "b", 2.0), record("rex", "a", 1.0)]);
        let b = bind_features(&ff, &ds).unwrap();
        assert_eq!(b.features, vec![vec![1.0, -1.0], vec![2.0, -2.0], vec![3.0, -3.0]]);
        assert_eq!(b.labels, vec![0, 0, 1]);
        assert_eq!(b.unmatched, 0);

        let short = FeatureFile::new(2, ff.records[..2].to_vec());
        let msg = bind_features(&short, &ds).unwrap_err().to_string();
        assert!(msg.contains("rex/a"), "{msg}");

        let mut extra = ff.clone();
        for i in 0..5 {
            extra.records.push(record("stray", &format!("x{i}"), 0.0));
        }
        assert_eq!(bind_features(&extra, &ds).unwrap().unmatched, 5);
    }

    #[test]
    fn woof_svm_uses_unit_c() {
        let xs = vec![vec![0.0, 0.1], vec![0.1, 0.0], vec![5.0, 5.1], vec![5.1, 5.0]];
        let ys = vec![0, 0, 1, 1];
        let m = woof_train(&xs, &ys).unwrap();
        assert_eq!(m.config.c, 1.0);
        for (x, &y) in xs.iter().zip(&ys) {
            let s = woof_scores(&m, x).unwrap();
            assert_eq!(crate::numerics::argmax(&s), Some(y));
        }
        assert!(woof_train(&xs, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn normalization_flag() {
        assert_eq!(FeatureNormalization::default().apply(&[3.0, 4.0]), vec![3.0, 4.0]);
        assert_eq!(FeatureNormalization::L2.apply(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(FeatureNormalization::L2.apply(&[0.0]), vec![0.0]);
    }

    proptest! {
        #[test]
        fn write_then_read_is_exact(
            rows in prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 4), 1..6)
        ) {
            let records: Vec<FeatureRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(i, values)| FeatureRecord { label: format!("dog{}", i % 2), image_id: format!("img{i}"), values })
                .collect();
            let mut ff = FeatureFile::new(4, records);
            ff.comments.push(" exported".into());
            let text = format_feature_file(&ff).unwrap();
            let back = parse(&text).unwrap();
            prop_assert_eq!(back.records.len(), ff.records.len());
            for (a, b) in back.records.iter().zip(&ff.records) {
                prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            prop_assert_eq!(back, ff);
        }
    }
}
