use std::fs;
use std::path::{Path, PathBuf};

use probfuse::energy::PowerSource;
use probfuse::metrics::evaluate;
use probfuse::dataset::LabelVector;
use probfuse::pipeline::{compare_runs, run_pipeline, PipelineConfig, SplitConfig};
use probfuse::report::{read_manifest, sha256_hex, Manifest, ManifestEntry, ResultIndex, Strategy, MANIFEST_FILE};
use probfuse::stacking::{MetaKind, MetaModel};
use probfuse::synthetic::{self, write_bundle, BundleFiles};
use probfuse::Error;

fn bundle_files(dir: &Path, k: usize) -> BundleFiles {
    let b = synthetic::mixed_bundle(3, 160, 4, 0.7);
    let keep: Vec<usize> = (0..k).collect();
    write_bundle(&b.with_models(&keep), &dir.join("data")).unwrap()
}

fn config(files: &BundleFiles, out: PathBuf) -> PipelineConfig {
    let mut c = PipelineConfig {
        model_prob_paths: files.models.clone(),
        label_path: files.labels.clone(),
        class_list_path: files.classes.clone(),
        output_dir: out,
        seed: 11,
        ..PipelineConfig::default()
    };
    c.energy.source = PowerSource::ConstantModel {
        cpu_w: 40.0,
        gpu_w: 0.0,
        ram_w: 5.0,
    };
    c.energy.sampling_period_s = 0.05;
    c
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_model_run_writes_the_full_inventory() {
    let tmp = tempfile::tempdir().unwrap();
    let files = bundle_files(tmp.path(), 2);
    let c = config(&files, tmp.path().join("run"));
    let artifacts = run_pipeline(&c).unwrap();
    assert_eq!(artifacts.results.len(), 3);

    let tag = "expert_a+expert_b";
    let listed = files_under(&c.output_dir);
    let expected = [
        "energy/emissions.json".to_string(),
        format!("histograms/{tag}__simple.csv"),
        format!("histograms/{tag}__simple.svg"),
        format!("histograms/{tag}__stacking-logistic.csv"),
        format!("histograms/{tag}__stacking-logistic.svg"),
        format!("histograms/{tag}__weighted.csv"),
        format!("histograms/{tag}__weighted.svg"),
        "manifest.json".to_string(),
        format!("metrics/{tag}__simple.json"),
        format!("metrics/{tag}__stacking-logistic.json"),
        format!("metrics/{tag}__weighted.json"),
        format!("models/{tag}__stacking-logistic.json"),
        format!("predictions/{tag}__simple.csv"),
        format!("predictions/{tag}__stacking-logistic.csv"),
        format!("predictions/{tag}__weighted.csv"),
        "split.json".to_string(),
        "tables/emissions.txt".to_string(),
        "tables/metrics.txt".to_string(),
        format!("weights/{tag}.json"),
    ];
    assert_eq!(listed, expected);

    let m = read_manifest(&c.output_dir).unwrap();
    assert_eq!(m.files.len(), expected.len() - 1);
    assert_eq!(m.root_seed, 11);
    assert_eq!(m.inputs.len(), 4);
    assert!(m.energy_file.is_some());
    let volatile: Vec<&str> = m.files.iter().filter(|f| f.volatile).map(|f| f.path.as_str()).collect();
    assert_eq!(volatile, ["energy/emissions.json", "tables/emissions.txt"]);

    let e = artifacts.energy.unwrap();
    assert!(e.emissions.breakdown.total_kwh > 0.0);
    assert!(e.emissions.breakdown.gpu_kwh == 0.0);
}

#[test]
fn predictions_csv_has_one_row_per_test_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let files = bundle_files(tmp.path(), 2);
    let c = config(&files, tmp.path().join("run"));
    run_pipeline(&c).unwrap();
    let text = fs::read_to_string(c.output_dir.join("predictions/expert_a+expert_b__simple.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,true_label,predicted_label,confidence,p_class0,p_class1,p_class2,p_class3"
    );
    // 160 samples over 4 balanced classes at 0.2 gives 32 test rows
    assert_eq!(lines.count(), 32);
}

#[test]
fn stacking_three_models_widens_meta_features() {
    let tmp = tempfile::tempdir().unwrap();
    let files = bundle_files(tmp.path(), 3);
    let mut c = config(&files, tmp.path().join("run"));
    c.strategies = vec![Strategy::Stacking];
    c.combination_sizes = vec![3];
    c.meta_kinds = vec![MetaKind::Logistic, MetaKind::RandomForest];
    let artifacts = run_pipeline(&c).unwrap();
    assert_eq!(artifacts.results.len(), 2);
    for kind in ["logistic", "random_forest"] {
        let path = c
            .output_dir
            .join(format!("models/expert_a+expert_b+generalist__stacking-{kind}.json"));
        let model = MetaModel::from_json(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(model.input_width, 3 * 4);
        assert_eq!(model.class_count, 4);
    }
}

#[test]
fn failed_run_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let files = bundle_files(tmp.path(), 2);
    let mut c = config(&files, tmp.path().join("run"));
    let bad = tmp.path().join("split.json");
    fs::write(&bad, r#"{"train":[0,1],"test":[1,2],"seed":0}"#).unwrap();
    c.split = SplitConfig::Explicit { split_file: bad };
    assert!(run_pipeline(&c).is_err());
    assert!(!c.output_dir.exists());
    let leftovers: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("staging"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn previous_run_is_replaced_but_foreign_dir_is_not() {
    let tmp = tempfile::tempdir().unwrap();
    let files = bundle_files(tmp.path(), 2);
    let c = config(&files, tmp.path().join("run"));
    run_pipeline(&c).unwrap();
    fs::write(c.output_dir.join("stale.txt"), "x").unwrap();
    run_pipeline(&c).unwrap();
    assert!(!c.output_dir.join("stale.txt").exists());

    let foreign = tmp.path().join("photos");
    fs::create_dir(&foreign).unwrap();
    fs::write(foreign.join("cat.jpg"), "meow").unwrap();
    let c2 = config(&files, foreign.clone());
    assert!(matches!(run_pipeline(&c2), Err(Error::OutputDirOccupied(_))));
    assert_eq!(fs::read_to_string(foreign.join("cat.jpg")).unwrap(), "meow");
}

#[test]
fn tampered_run_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let files = bundle_files(tmp.path(), 2);
    let c = config(&files, tmp.path().join("run"));
    run_pipeline(&c).unwrap();
    let other = config(&files, tmp.path().join("run2"));
    run_pipeline(&other).unwrap();
    fs::write(c.output_dir.join("metrics/expert_a+expert_b__simple.json"), "{}").unwrap();
    let err = compare_runs(&[c.output_dir.clone(), other.output_dir.clone()], 1).unwrap_err();
    assert!(matches!(err, Error::ChecksumMismatch(_)), "{err}");
}

/// A run directory holding only metrics files at the given accuracies (out of 50).
fn fake_run(dir: &Path, results: &[(&str, usize)]) {
    fs::create_dir_all(dir.join("metrics")).unwrap();
    let truth = LabelVector::new(
        (0..50).map(|i| format!("s{i}")).collect(),
        vec!["a".into(), "b".into()],
        vec![0; 50],
    )
    .unwrap();
    let mut files = Vec::new();
    let mut index = Vec::new();
    for (strategy, correct) in results {
        let pred: Vec<usize> = (0..50).map(|i| usize::from(i >= *correct)).collect();
        let pred = LabelVector::new(truth.sample_ids().to_vec(), truth.class_names().to_vec(), pred).unwrap();
        let report = evaluate(&pred, &truth).unwrap();
        let rel = format!("metrics/m1+m2__{strategy}.json");
        let text = serde_json::json!({ "combo": ["m1", "m2"], "strategy": strategy, "report": report }).to_string();
        fs::write(dir.join(&rel), &text).unwrap();
        files.push(ManifestEntry {
            path: rel.clone(),
            sha256: sha256_hex(text.as_bytes()),
            volatile: false,
        });
        index.push(ResultIndex {
            combo: "m1+m2".into(),
            strategy: strategy.to_string(),
            metrics_file: rel,
        });
    }
    let manifest = Manifest {
        format_version: 1,
        tool: "probfuse".into(),
        tool_version: "test".into(),
        config_hash: "0".into(),
        root_seed: 0,
        inputs: Vec::new(),
        results: index,
        energy_file: None,
        files,
        notes: Vec::new(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
}

#[test]
fn compare_reports_strategy_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    fake_run(&a, &[("simple", 35), ("stacking-logistic", 47)]);
    fake_run(&b, &[("simple", 35), ("stacking-logistic", 47)]);
    let cmp = compare_runs(&[a, b], 1).unwrap();
    assert_eq!(cmp.rows.len(), 4);
    let stack = cmp.rows.iter().find(|r| r.strategy == "stacking-logistic").unwrap();
    assert!((stack.accuracy - 0.94).abs() < 1e-12);
    assert!((stack.delta_vs_simple.unwrap() - 0.24).abs() < 1e-12);
    for r in &cmp.rows {
        assert_eq!(r.delta_vs_first_run, Some(0.0));
    }
    let s = cmp.strategies.iter().find(|s| s.strategy == "simple").unwrap();
    assert!((s.mean_accuracy - 0.70).abs() < 1e-12);
    assert_eq!(s.delta_vs_simple, Some(0.0));
    assert!(cmp.energy_ratio.is_none());
}

#[test]
fn compare_needs_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    fake_run(&a, &[("simple", 10)]);
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let err = compare_runs(&[a, empty], 1).unwrap_err();
    assert!(matches!(err, Error::ManifestMissing(_)), "{err}");
}
