//! Probability matrices, label vectors, and the aligned bundles the
//! ensemble strategies consume.
//!
//! Every [`ProbabilityMatrix`] is row-stochastic once constructed: rows whose
//! sum drifts from 1 by at most [`RENORMALIZE_TOLERANCE`] are rescaled, larger
//! deviations are rejected.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest row-sum drift that is silently corrected on load.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

/// Drift below this is rounding noise and left alone, so normalized data
/// survives a write/load cycle bit for bit.
const ROUNDING_SLACK: f64 = 1e-12;

/// N x C matrix of per-sample class probabilities emitted by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    model_id: String,
    sample_ids: Vec<String>,
    class_names: Vec<String>,
    /// Row-major, `sample_ids.len() * class_names.len()` entries.
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Validates and (if needed) renormalizes `rows`.
    pub fn new(
        model_id: impl Into<String>,
        sample_ids: Vec<String>,
        class_names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let c = class_names.len();
        if rows.len() != sample_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} sample ids",
                rows.len(),
                sample_ids.len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has {} entries, expected {c}",
                    sample_ids[i],
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(model_id, sample_ids, class_names, data)
    }

    /// Like [`ProbabilityMatrix::new`] but takes the row-major buffer directly.
    pub fn from_flat(
        model_id: impl Into<String>,
        sample_ids: Vec<String>,
        class_names: Vec<String>,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        let c = class_names.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("matrix has no samples".into()));
        }
        if c < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        if data.len() != n * c {
            return Err(Error::ShapeMismatch(format!(
                "buffer has {} entries, expected {}",
                data.len(),
                n * c
            )));
        }
        check_unique(&sample_ids)?;
        for (i, row) in data.chunks_mut(c).enumerate() {
            normalize_row(row, &sample_ids[i])?;
        }
        Ok(Self {
            model_id: model_id.into(),
            sample_ids,
            class_names,
            data,
        })
    }

    /// Skips validation; callers guarantee the rows are already row-stochastic.
    pub(crate) fn from_trusted(
        model_id: String,
        sample_ids: Vec<String>,
        class_names: Vec<String>,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), sample_ids.len() * class_names.len());
        Self {
            model_id,
            sample_ids,
            class_names,
            data,
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_classes();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_classes())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let c = self.n_classes();
        let mut data = Vec::with_capacity(indices.len() * c);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            ids.push(self.sample_ids[i].clone());
        }
        Self::from_trusted(self.model_id.clone(), ids, self.class_names.clone(), data)
    }
}

fn normalize_row(row: &mut [f64], sample: &str) -> Result<()> {
    for (class, &value) in row.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::ProbabilityOutOfRange {
                sample: sample.to_string(),
                class,
                value,
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(Error::RowSumViolation {
            sample: sample.to_string(),
            sum,
        });
    }
    if (sum - 1.0).abs() > ROUNDING_SLACK {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSampleId(id.clone()));
        }
    }
    Ok(())
}

/// Ground-truth labels or predictions, as class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    sample_ids: Vec<String>,
    class_names: Vec<String>,
    labels: Vec<usize>,
}

impl LabelVector {
    pub fn new(sample_ids: Vec<String>, class_names: Vec<String>, labels: Vec<usize>) -> Result<Self> {
        if sample_ids.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} sample ids",
                labels.len(),
                sample_ids.len()
            )));
        }
        check_unique(&sample_ids)?;
        let c = class_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::UnknownClassName(bad.to_string()));
        }
        Ok(Self {
            sample_ids,
            class_names,
            labels,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Per-class sample counts, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            class_names: self.class_names.clone(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// `k` probability matrices sharing one sample order, plus the labels for that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedBundle {
    models: Vec<ProbabilityMatrix>,
    labels: LabelVector,
}

impl AlignedBundle {
    pub fn models(&self) -> &[ProbabilityMatrix] {
        &self.models
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    pub fn class_names(&self) -> &[String] {
        self.labels.class_names()
    }

    pub fn sample_ids(&self) -> &[String] {
        self.labels.sample_ids()
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.model_id().to_string()).collect()
    }

    /// Bundle restricted to the given rows (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            models: self.models.iter().map(|m| m.select(indices)).collect(),
            labels: self.labels.select(indices),
        }
    }

    /// Bundle restricted to the given models (in the given order).
    pub fn with_models(&self, model_indices: &[usize]) -> Self {
        Self {
            models: model_indices.iter().map(|&m| self.models[m].clone()).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn into_parts(self) -> (Vec<ProbabilityMatrix>, LabelVector) {
        (self.models, self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbFormat {
    Csv,
    Json,
}

impl ProbFormat {
    /// Guesses from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ProbFormat::Json,
            _ => ProbFormat::Csv,
        }
    }
}

#[derive(Deserialize)]
struct JsonProbFile {
    model_id: Option<String>,
    class_names: Vec<String>,
    samples: Vec<JsonProbSample>,
}

#[derive(Deserialize)]
struct JsonProbSample {
    id: String,
    probs: Vec<f64>,
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string())
}

/// Loads one model's probability dump.
///
/// CSV files carry a `sample_id,<class_0>,...` header and take their model id
/// from the file stem; JSON files may name the model themselves.
pub fn load_probability_matrix(path: &Path, format: ProbFormat) -> Result<ProbabilityMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
    match format {
        ProbFormat::Csv => parse_probability_csv(path, &text),
        ProbFormat::Json => {
            let file: JsonProbFile = serde_json::from_str(&text)
                .map_err(|e| Error::malformed(path, e.to_string()))?;
            let c = file.class_names.len();
            let mut ids = Vec::with_capacity(file.samples.len());
            let mut rows = Vec::with_capacity(file.samples.len());
            for s in file.samples {
                if s.probs.len() != c {
                    return Err(Error::malformed(
                        path,
                        format!("sample {} has {} probabilities, expected {c}", s.id, s.probs.len()),
                    ));
                }
                ids.push(s.id);
                rows.push(s.probs);
            }
            let model_id = file.model_id.unwrap_or_else(|| file_stem(path));
            ProbabilityMatrix::new(model_id, ids, file.class_names, rows)
        }
    }
}

fn parse_probability_csv(path: &Path, text: &str) -> Result<ProbabilityMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::malformed(path, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "sample_id" {
        return Err(Error::malformed(
            path,
            "header must be `sample_id,<class_0>,...,<class_C-1>` with at least 2 classes",
        ));
    }
    let class_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let c = class_names.len();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        if record.len() != c + 1 {
            return Err(Error::malformed(
                path,
                format!("row {} has {} fields, expected {}", line + 1, record.len(), c + 1),
            ));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                Error::malformed(path, format!("row {}: {field:?} is not a number", line + 1))
            })?;
            data.push(v);
        }
    }
    if ids.is_empty() {
        return Err(Error::malformed(path, "no sample rows"));
    }
    ProbabilityMatrix::from_flat(file_stem(path), ids, class_names, data)
}

/// One class name per line; blank lines and `#` comments are skipped.
pub fn load_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if names.len() < 2 {
        return Err(Error::malformed(path, "class list needs at least 2 classes"));
    }
    if let Some(dup) = first_duplicate(&names) {
        return Err(Error::malformed(path, format!("class {dup:?} listed twice")));
    }
    Ok(names)
}

fn first_duplicate(names: &[String]) -> Option<&str> {
    let mut seen = HashSet::new();
    names.iter().find(|n| !seen.insert(n.as_str())).map(String::as_str)
}

/// Loads a `sample_id,label` CSV. Labels are class names from `class_names`
/// or, failing that, integer class indices.
pub fn load_labels(path: &Path, class_names: &[String]) -> Result<LabelVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::malformed(path, e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(Error::malformed(path, "header must be `sample_id,label`"));
    }
    let index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(Error::malformed(path, format!("row {} needs 2 fields", line + 1)));
        }
        let raw = &record[1];
        let label = match index.get(raw) {
            Some(&i) => i,
            None => match raw.parse::<usize>() {
                Ok(i) if i < class_names.len() => i,
                _ => return Err(Error::UnknownClassName(raw.to_string())),
            },
        };
        ids.push(record[0].to_string());
        labels.push(label);
    }
    LabelVector::new(ids, class_names.to_vec(), labels)
}

/// Reorders every matrix into the label file's sample order.
pub fn align(models: Vec<ProbabilityMatrix>, labels: LabelVector) -> Result<AlignedBundle> {
    if models.is_empty() {
        return Err(Error::ShapeMismatch("no models to align".into()));
    }
    let position: HashMap<&str, usize> = labels
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut aligned = Vec::with_capacity(models.len());
    for model in &models {
        if model.class_names() != labels.class_names() {
            return Err(Error::ClassSetMismatch(format!(
                "model {} has classes {:?}, labels use {:?}",
                model.model_id(),
                model.class_names(),
                labels.class_names()
            )));
        }
        let mut order = vec![usize::MAX; labels.len()];
        for (row, id) in model.sample_ids().iter().enumerate() {
            match position.get(id.as_str()) {
                Some(&target) => order[target] = row,
                None => {
                    return Err(Error::SampleSetMismatch(format!(
                        "sample {id} in model {} has no label",
                        model.model_id()
                    )))
                }
            }
        }
        if let Some(missing) = order.iter().position(|&r| r == usize::MAX) {
            return Err(Error::SampleSetMismatch(format!(
                "model {} lacks sample {}",
                model.model_id(),
                labels.sample_ids()[missing]
            )));
        }
        aligned.push(model.select(&order));
    }
    Ok(AlignedBundle {
        models: aligned,
        labels,
    })
}

/// Train/test row indices of a stratified split, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub(crate) fn round_half_up(x: f64) -> usize {
    // the epsilon absorbs products like 2.5 landing at 2.4999999999999996
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Per-class test counts: round-half-up per class, then single-unit
/// corrections (largest classes first) until the total hits the global target.
pub fn stratified_test_counts(counts: &[usize], test_fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = round_half_up(total as f64 * test_fraction);
    let exact: Vec<f64> = counts.iter().map(|&n| n as f64 * test_fraction).collect();
    let mut test: Vec<usize> = exact.iter().map(|&x| round_half_up(x)).collect();

    let mut by_size: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    by_size.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut assigned: usize = test.iter().sum();
    let mut touched = vec![false; counts.len()];
    while assigned != target {
        let grow = assigned < target;
        let eligible = |c: usize| {
            !touched[c]
                && if grow {
                    test[c] < counts[c]
                } else {
                    test[c] > 0
                }
        };
        // prefer a class whose rounding went the other way, so it moves toward its exact share
        let pick = by_size
            .iter()
            .copied()
            .find(|&c| eligible(c) && if grow { (test[c] as f64) < exact[c] } else { (test[c] as f64) > exact[c] })
            .or_else(|| by_size.iter().copied().find(|&c| eligible(c)));
        let Some(c) = pick else { break };
        touched[c] = true;
        if grow {
            test[c] += 1;
            assigned += 1;
        } else {
            test[c] -= 1;
            assigned -= 1;
        }
    }
    test
}

/// Seeded stratified train/test split. Classes absent from `labels` are ignored.
pub fn stratified_split(labels: &LabelVector, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let counts = labels.class_counts();
    for (c, &n) in counts.iter().enumerate() {
        if n == 1 {
            return Err(Error::ClassTooSmall {
                class: labels.class_names()[c].clone(),
                count: n,
            });
        }
    }
    if counts.iter().filter(|&&n| n > 0).count() == 0 {
        return Err(Error::ShapeMismatch("no labels to split".into()));
    }
    let test_counts = stratified_test_counts(&counts, test_fraction);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, &l) in labels.labels().iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for (class, mut idx) in members.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let cut = test_counts[class];
        test.extend_from_slice(&idx[..cut]);
        train.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}
