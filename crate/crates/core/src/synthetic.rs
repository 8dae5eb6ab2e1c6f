//! Seeded synthetic bundles for tests, benchmarks and demos.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{align, AlignedBundle, LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:05}")).collect()
}

pub fn class_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class{i}")).collect()
}

fn random_row(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-6).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// Row with `confidence` on `class` and the rest spread at random.
fn peaked_row(rng: &mut ChaCha8Rng, c: usize, class: usize, confidence: f64) -> Vec<f64> {
    let rest = random_row(rng, c - 1);
    let mut row = Vec::with_capacity(c);
    let mut it = rest.into_iter();
    for k in 0..c {
        if k == class {
            row.push(confidence);
        } else {
            row.push(it.next().unwrap() * (1.0 - confidence));
        }
    }
    row
}

pub fn bundle_from_rows(models: Vec<(String, Vec<Vec<f64>>)>, labels: Vec<usize>, c: usize) -> AlignedBundle {
    let n = labels.len();
    let names = class_names(c);
    let mats = models
        .into_iter()
        .map(|(id, rows)| ProbabilityMatrix::new(id, ids(n), names.clone(), rows).expect("valid synthetic rows"))
        .collect();
    let labels = LabelVector::new(ids(n), names, labels).expect("valid synthetic labels");
    align(mats, labels).expect("synthetic models share one sample order")
}

/// `k` models emitting unrelated random rows; labels uniform at random.
pub fn random_bundle(seed: u64, k: usize, n: usize, c: usize) -> AlignedBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let models = (0..k)
        .map(|m| (format!("model{m}"), (0..n).map(|_| random_row(&mut rng, c)).collect()))
        .collect();
    bundle_from_rows(models, labels, c)
}

/// Labels cycling through all classes so every class is populated.
fn cycled_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), rng);
    labels
}

/// Models that are individually noisy: each one is right with probability
/// `skill` (peaked on the true class) and otherwise peaked on a random class.
pub fn noisy_bundle(seed: u64, k: usize, n: usize, c: usize, skill: f64) -> AlignedBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = cycled_labels(&mut rng, n, c);
    let models = (0..k)
        .map(|m| {
            let rows = labels
                .iter()
                .map(|&y| {
                    let target = if rng.gen::<f64>() < skill { y } else { rng.gen_range(0..c) };
                    let conf = rng.gen_range(0.4..0.95);
                    peaked_row(&mut rng, c, target, conf)
                })
                .collect();
            (format!("model{m}"), rows)
        })
        .collect();
    bundle_from_rows(models, labels, c)
}

/// Two models with complementary expertise: model A is confident and correct on
/// the first half of the classes and uninformative on the rest; model B the reverse.
pub fn complementary_bundle(seed: u64, n: usize, c: usize) -> AlignedBundle {
    assert!(c >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = cycled_labels(&mut rng, n, c);
    let half = c / 2;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for &y in &labels {
        let in_a = y < half;
        let expert = |rng: &mut ChaCha8Rng| {
            let conf = rng.gen_range(0.6..0.95);
            peaked_row(rng, c, y, conf)
        };
        if in_a {
            a.push(expert(&mut rng));
            b.push(random_row(&mut rng, c));
        } else {
            a.push(random_row(&mut rng, c));
            b.push(expert(&mut rng));
        }
    }
    bundle_from_rows(vec![("expert_a".into(), a), ("expert_b".into(), b)], labels, c)
}

/// [`complementary_bundle`] plus a third model, `generalist`, right on every
/// class with probability `skill`.
pub fn mixed_bundle(seed: u64, n: usize, c: usize, skill: f64) -> AlignedBundle {
    let base = complementary_bundle(seed, n, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let generalist: Vec<Vec<f64>> = base
        .labels()
        .labels()
        .iter()
        .map(|&y| {
            let target = if rng.gen::<f64>() < skill { y } else { rng.gen_range(0..c) };
            let conf = rng.gen_range(0.4..0.9);
            peaked_row(&mut rng, c, target, conf)
        })
        .collect();
    let labels = base.labels().labels().to_vec();
    let mut models: Vec<(String, Vec<Vec<f64>>)> = base
        .models()
        .iter()
        .map(|m| (m.model_id().to_string(), m.rows().map(<[f64]>::to_vec).collect()))
        .collect();
    models.push(("generalist".into(), generalist));
    bundle_from_rows(models, labels, c)
}

/// Model A is one-hot on the true class; the others are random.
pub fn oracle_bundle(seed: u64, k: usize, n: usize, c: usize) -> AlignedBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = cycled_labels(&mut rng, n, c);
    let mut models = vec![(
        "oracle".to_string(),
        labels
            .iter()
            .map(|&y| (0..c).map(|k| if k == y { 1.0 } else { 0.0 }).collect())
            .collect(),
    )];
    for m in 1..k {
        models.push((format!("noise{m}"), (0..n).map(|_| random_row(&mut rng, c)).collect()));
    }
    bundle_from_rows(models, labels, c)
}

/// Paths of a bundle written by [`write_bundle`].
#[derive(Debug, Clone)]
pub struct BundleFiles {
    pub models: Vec<PathBuf>,
    pub labels: PathBuf,
    pub classes: PathBuf,
}

/// Writes `<model_id>.csv` per model plus `labels.csv` and `classes.txt` under `dir`.
pub fn write_bundle(bundle: &AlignedBundle, dir: &Path) -> Result<BundleFiles> {
    let put = |name: &str, text: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    };
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut models = Vec::new();
    for m in bundle.models() {
        let mut text = format!("sample_id,{}\n", m.class_names().join(","));
        for (id, row) in m.sample_ids().iter().zip(m.rows()) {
            text.push_str(id);
            for p in row {
                let _ = write!(text, ",{p}");
            }
            text.push('\n');
        }
        models.push(put(&format!("{}.csv", m.model_id()), text)?);
    }
    let names = bundle.class_names();
    let mut labels = String::from("sample_id,label\n");
    for (id, &y) in bundle.sample_ids().iter().zip(bundle.labels().labels()) {
        let _ = writeln!(labels, "{id},{}", names[y]);
    }
    Ok(BundleFiles {
        models,
        labels: put("labels.csv", labels)?,
        classes: put("classes.txt", names.join("\n") + "\n")?,
    })
}
