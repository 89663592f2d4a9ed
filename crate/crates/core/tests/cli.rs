use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dogid::deepfeat::{write_feature_file, FeatureFile, FeatureRecord};
use dogid::imaging::load_dataset;
use dogid::randconv::ArchitectureSpec;
use tempfile::TempDir;

fn dogid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dogid")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dogid(args);
    assert!(
        out.status.success(),
        "dogid {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Gallery {
    _dir: TempDir,
    root: PathBuf,
}

impl Gallery {
    fn new(individuals: usize, samples: usize, size: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth", "--out", &s(&root.join("gallery")), "--individuals", &individuals.to_string(), "--samples",
            &samples.to_string(), "--size", &size.to_string(), "--seed", "3",
        ]);
        Self { _dir: dir, root }
    }

    fn gallery(&self) -> String {
        s(&self.root.join("gallery"))
    }

    fn path(&self, name: &str) -> String {
        s(&self.root.join(name))
    }
}

#[test]
fn evaluate_writes_all_reports() {
    let g = Gallery::new(4, 5, 24);
    let out = g.path("rep");
    let stdout = ok(&["evaluate", "--dataset", &g.gallery(), "--method", "eigen", "--folds", "5", "--out", &out]);
    assert!(stdout.contains("balanced accuracy"));
    for f in ["report.txt", "metrics.tsv", "confusion.csv", "recall_curve.tsv", "predictions.tsv"] {
        assert!(Path::new(&out).join(f).is_file(), "{f} missing");
    }
    let curve = std::fs::read_to_string(Path::new(&out).join("recall_curve.tsv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#') && !l.starts_with('k')).count(), 4);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let g = Gallery::new(4, 5, 24);
    let run = |jobs: &str| {
        let out = g.path(&format!("rep{jobs}"));
        ok(&["--jobs", jobs, "evaluate", "--dataset", &g.gallery(), "--method", "lbph", "--grid", "4x4", "--folds", "5", "--out", &out]);
        std::fs::read(Path::new(&out).join("predictions.tsv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn train_then_query() {
    let g = Gallery::new(4, 5, 24);
    let model = g.path("m.paws");
    ok(&["train", "--dataset", &g.gallery(), "--method", "sparse", "--out", &model]);
    let probe = s(&Path::new(&g.gallery()).join("dog02").join("dog02_s3.png"));
    let out = dogid(&["query", "--model", &model, "--probe", &probe, "--top-k", "10"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let first = stdout.lines().nth(1).unwrap();
    assert!(first.trim_start().starts_with("1 ") && first.contains("dog02"), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains("dog0")).count(), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--top-k 10"));
}

#[test]
fn query_rejects_a_probe_of_the_wrong_size_unless_resizing() {
    let g = Gallery::new(3, 5, 24);
    let model = g.path("m.paws");
    ok(&["train", "--dataset", &g.gallery(), "--method", "lbph", "--grid", "4x4", "--out", &model]);
    let big = g.path("big");
    ok(&["synth", "--out", &big, "--individuals", "2", "--samples", "1", "--size", "32"]);
    let probe = s(&Path::new(&big).join("dog00").join("dog00_s0.png"));
    let out = dogid(&["query", "--model", &model, "--probe", &probe]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--resize"));
    ok(&["query", "--model", &model, "--probe", &probe, "--resize"]);
}

/// One-hot identity code plus a little per-image jitter.
fn write_features(g: &Gallery) -> String {
    let (ds, _) = load_dataset(Path::new(&g.gallery()), (24, 24)).unwrap();
    let c = ds.class_count();
    let records = (0..ds.len())
        .map(|i| {
            let key = ds.key(i);
            let class = ds.samples()[i].class_index;
            let mut values: Vec<f64> = (0..c).map(|j| if j == class { 1.0 } else { 0.0 }).collect();
            values.push(i as f64 / ds.len() as f64);
            FeatureRecord { label: key.label, image_id: key.source_id, values }
        })
        .collect();
    let path = g.path("features.dogfeat");
    write_feature_file(&FeatureFile::new(c + 1, records), Path::new(&path)).unwrap();
    path
}

#[test]
fn woof_evaluates_train_and_query_from_feature_files() {
    let g = Gallery::new(3, 5, 24);
    let features = write_features(&g);
    let stdout = ok(&["evaluate", "--dataset", &g.gallery(), "--method", "woof", "--features", &features, "--folds", "5", "--out", &g.path("rep")]);
    assert!(stdout.contains("balanced accuracy  1.0000"), "{stdout}");
    let model = g.path("woof.paws");
    ok(&["train", "--dataset", &g.gallery(), "--method", "woof", "--features", &features, "--out", &model]);
    let stdout = ok(&["query", "--model", &model, "--features", &features, "--probe-key", "dog01/dog01_s2"]);
    assert!(stdout.lines().nth(1).unwrap().contains("dog01"), "{stdout}");
    let out = dogid(&["query", "--model", &model, "--features", &features]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    let g = Gallery::new(2, 2, 16);
    for args in [
        vec!["evaluate", "--dataset", &g.gallery(), "--method", "woof"],
        vec!["evaluate", "--dataset", &g.gallery(), "--method", "bark"],
        vec!["evaluate", "--dataset", &g.gallery(), "--method", "bark", "--search-budget", "0"],
        vec!["search-arch", "--dataset", &g.gallery(), "--search-budget", "0"],
        vec!["evaluate", "--dataset", &g.gallery(), "--method", "eigen", "--folds", "1"],
        vec!["evaluate", "--dataset", &g.gallery(), "--method", "nope"],
    ] {
        assert_eq!(dogid(&args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(dogid(&["evaluate", "--dataset", &g.path("missing"), "--method", "eigen"]).status.code(), Some(1));
}

#[test]
fn search_arch_writes_history_and_a_loadable_spec() {
    let g = Gallery::new(3, 4, 16);
    let out = g.path("search");
    ok(&["search-arch", "--dataset", &g.gallery(), "--search-budget", "3", "--optimizer", "random", "--seed", "2", "--out", &out]);
    let history = std::fs::read_to_string(Path::new(&out).join("history.log")).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let text = std::fs::read_to_string(Path::new(&out).join("best.spec")).unwrap();
    let spec: ArchitectureSpec = text.parse().unwrap();
    spec.validate().unwrap();

    let rep = g.path("rep");
    let spec_path = s(&Path::new(&out).join("best.spec"));
    ok(&["evaluate", "--dataset", &g.gallery(), "--method", "bark", "--spec", &spec_path, "--folds", "4", "--out", &rep]);
}

#[test]
fn align_levels_and_resizes() {
    let g = Gallery::new(2, 1, 32);
    let src = s(&Path::new(&g.gallery()).join("dog00").join("dog00_s0.png"));
    let dst = g.path("aligned.png");
    ok(&["align", "--image", &src, "--left-eye", "10,12", "--right-eye", "22,14", "--size", "20x20", "--out", &dst]);
    let img = dogid::imaging::read_image(Path::new(&dst)).unwrap();
    assert_eq!(img.dims(), (20, 20));
}
