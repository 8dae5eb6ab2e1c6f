//! End-to-end runs: load, split, fuse, stack, score, write, checksum.
//!
//! Every random choice descends from `PipelineConfig::seed` through
//! [`derive_seed`], which takes the first 8 bytes (little-endian) of
//! `SHA-256(seed.to_le_bytes() || label)`. Labels used:
//!
//! - `split` for the train/test split,
//! - `validation` for the weight-fitting slice of the training partition,
//! - `optimizer/<combo>` for optimizer restarts,
//! - `stack/<combo>/<kind>` for meta-model training.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    align, load_class_list, load_labels, load_probability_matrix, stratified_split, AlignedBundle, ProbFormat,
    SplitIndices,
};
use crate::energy::{
    compare_sessions, compute_emissions, emissions_table, integrate_energy, load_trace, record_session, EmissionsReport, EnergyBreakdown,
    PowerSource, RatioReport, DEFAULT_GRID_INTENSITY,
};
use crate::error::{Error, Result};
use crate::fusion::{average_probabilities, optimize_weights, predict_argmax, ObjectiveSplit, OptimizerConfig};
use crate::metrics::{confidence_histogram, evaluate, Averaging};
use crate::report::{
    emit_report, metrics_path, sha256_hex, verify_manifest, EnergyArtifact, Manifest,
    ManifestEntry, ReportFormat, ResultIndex, RunArtifacts, Strategy, StrategyResult, ENERGY_JSON, ENERGY_TABLE,
    MANIFEST_FILE,
};
use crate::stacking::{evaluate_stack, MetaHyper, MetaKind};

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitConfig {
    /// A `SplitIndices` JSON document, as written by the `split` command.
    Explicit { split_file: PathBuf },
    Fraction {
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Fraction {
            test_fraction: default_test_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub source: PowerSource,
    /// Used when `source` reports its counters unavailable; `None` makes that fatal.
    pub fallback: Option<PowerSource>,
    pub sampling_period_s: f64,
    pub grid_intensity: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            source: PowerSource::os_counters(),
            fallback: Some(PowerSource::ConstantModel {
                cpu_w: 0.0,
                gpu_w: 0.0,
                ram_w: 0.0,
            }),
            sampling_period_s: 1.0,
            grid_intensity: DEFAULT_GRID_INTENSITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model_prob_paths: Vec<PathBuf>,
    pub label_path: PathBuf,
    pub class_list_path: PathBuf,
    pub split: SplitConfig,
    pub strategies: Vec<Strategy>,
    pub meta_kinds: Vec<MetaKind>,
    /// Combination sizes to evaluate; empty means every size from 2 to k (or 1 when k = 1).
    pub combination_sizes: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub meta_hyper: MetaHyper,
    /// Cross-fitting folds for the out-of-fold stacking diagnostic; 0 disables it.
    pub oof_folds: usize,
    pub histogram_bins: usize,
    pub averaging: Averaging,
    pub formats: Vec<ReportFormat>,
    pub energy: EnergyConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model_prob_paths: Vec::new(),
            label_path: PathBuf::new(),
            class_list_path: PathBuf::new(),
            split: SplitConfig::default(),
            strategies: vec![Strategy::Simple, Strategy::Weighted, Strategy::Stacking],
            meta_kinds: vec![MetaKind::Logistic],
            combination_sizes: Vec::new(),
            optimizer: OptimizerConfig::default(),
            meta_hyper: MetaHyper::default(),
            oof_folds: 0,
            histogram_bins: 10,
            averaging: Averaging::Macro,
            formats: ReportFormat::ALL.to_vec(),
            energy: EnergyConfig::default(),
            output_dir: PathBuf::from("run"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths inside it resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        self.model_prob_paths.iter_mut().for_each(fix);
        fix(&mut self.label_path);
        fix(&mut self.class_list_path);
        fix(&mut self.output_dir);
        if let SplitConfig::Explicit { split_file } = &mut self.split {
            fix(split_file);
        }
        match &mut self.energy.source {
            PowerSource::TraceReplay { path } => fix(path),
            PowerSource::OsCounters { powercap_root } => fix(powercap_root),
            PowerSource::ConstantModel { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_prob_paths.is_empty() {
            return Err(Error::InvalidArgument("at least one model probability file is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidArgument("strategies must not be empty".into()));
        }
        if self.strategies.contains(&Strategy::Stacking) && self.meta_kinds.is_empty() {
            return Err(Error::InvalidArgument("stacking needs at least one meta_kind".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidArgument("histogram_bins must be at least 1".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::InvalidArgument("formats must not be empty".into()));
        }
        if let SplitConfig::Fraction { test_fraction } = self.split {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "test_fraction must lie in (0, 1), got {test_fraction}"
                )));
            }
        }
        let k = self.model_prob_paths.len();
        if let Some(&s) = self.combination_sizes.iter().find(|&&s| s == 0 || s > k) {
            return Err(Error::InvalidArgument(format!(
                "combination size {s} outside 1..={k}"
            )));
        }
        self.optimizer.validate()?;
        self.energy.source.validate()?;
        if let Some(f) = &self.energy.fallback {
            f.validate()?;
        }
        if self.energy.grid_intensity.is_nan() || self.energy.grid_intensity < 0.0 {
            return Err(Error::InvalidArgument("grid_intensity must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring where the output goes.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
    }

    fn sizes(&self, k: usize) -> Vec<usize> {
        if !self.combination_sizes.is_empty() {
            let mut s = self.combination_sizes.clone();
            s.sort_unstable();
            s.dedup();
            return s;
        }
        if k == 1 {
            vec![1]
        } else {
            (2..=k).collect()
        }
    }
}

/// Loads and aligns the configured inputs.
pub fn load_bundle(config: &PipelineConfig) -> Result<AlignedBundle> {
    let classes = load_class_list(&config.class_list_path)?;
    let labels = load_labels(&config.label_path, &classes)?;
    let models = config
        .model_prob_paths
        .iter()
        .map(|p| load_probability_matrix(p, ProbFormat::from_path(p)))
        .collect::<Result<Vec<_>>>()?;
    align(models, labels)
}

pub fn load_split(path: &Path, n: usize) -> Result<SplitIndices> {
    let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
    let split: SplitIndices = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.test) {
        if i >= n || seen[i] {
            return Err(Error::malformed(path, format!("index {i} out of range or repeated")));
        }
        seen[i] = true;
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::malformed(path, "train and test must both be non-empty"));
    }
    Ok(split)
}

fn combinations(k: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, size, &mut Vec::new(), &mut out);
    out
}

/// Computes every configured strategy on every model combination, without touching disk.
pub fn compute_results(config: &PipelineConfig, bundle: &AlignedBundle) -> Result<RunArtifacts> {
    let split = match &config.split {
        SplitConfig::Fraction { test_fraction } => {
            stratified_split(bundle.labels(), *test_fraction, derive_seed(config.seed, "split"))?
        }
        SplitConfig::Explicit { split_file } => load_split(split_file, bundle.n_samples())?,
    };
    let train = bundle.subset(&split.train);
    let test = bundle.subset(&split.test);

    let mut strategies = config.strategies.clone();
    strategies.sort_unstable();
    strategies.dedup();
    let mut notes = Vec::new();

    let fit_slice = if strategies.contains(&Strategy::Weighted) {
        match config.optimizer.objective_split {
            ObjectiveSplit::Validation => {
                let inner = stratified_split(
                    train.labels(),
                    config.optimizer.validation_fraction,
                    derive_seed(config.seed, "validation"),
                )?;
                Some(train.subset(&inner.test))
            }
            ObjectiveSplit::TestPaperFaithful => {
                notes.push("weights were fitted on the test partition; weighted test metrics are not held out".into());
                None
            }
        }
    } else {
        None
    };

    let mut results = Vec::new();
    let mut weights = Vec::new();
    let mut meta_models = Vec::new();
    for size in config.sizes(bundle.k()) {
        for combo in combinations(bundle.k(), size) {
            let train_c = train.with_models(&combo);
            let test_c = test.with_models(&combo);
            let ids = test_c.model_ids();
            let combo_label = ids.join("+");
            let mut push = |strategy, meta_kind, predictions, probabilities, out_of_fold| -> Result<String> {
                let report = evaluate(&predictions, test_c.labels())?;
                let histogram = confidence_histogram(&probabilities, config.histogram_bins)?;
                let result = StrategyResult {
                    combo: ids.clone(),
                    strategy,
                    meta_kind,
                    report,
                    truth: test_c.labels().clone(),
                    predictions,
                    probabilities,
                    histogram,
                    out_of_fold,
                };
                let tag = result.file_tag();
                results.push(result);
                Ok(tag)
            };

            for &strategy in &strategies {
                match strategy {
                    Strategy::Simple => {
                        let probs = average_probabilities(&test_c, None)?;
                        push(strategy, None, predict_argmax(&probs), probs, None)?;
                    }
                    Strategy::Weighted => {
                        if combo.len() < 2 {
                            continue;
                        }
                        let opt = OptimizerConfig {
                            seed: derive_seed(config.seed, &format!("optimizer/{combo_label}")),
                            ..config.optimizer.clone()
                        };
                        let target = match &fit_slice {
                            Some(slice) => slice.with_models(&combo),
                            None => test_c.clone(),
                        };
                        let fit = optimize_weights(&target, &opt)?;
                        let probs = average_probabilities(&test_c, Some(&fit.weights))?;
                        push(strategy, None, predict_argmax(&probs), probs, None)?;
                        weights.push(fit.to_file(ids.clone(), config.optimizer.objective_split));
                    }
                    Strategy::Stacking => {
                        for &kind in &config.meta_kinds {
                            let seed = derive_seed(config.seed, &format!("stack/{combo_label}/{}", kind.name()));
                            let out = evaluate_stack(&train_c, &test_c, kind, &config.meta_hyper, seed, config.oof_folds)?;
                            let tag =
                                push(strategy, Some(kind), out.predictions, out.probabilities, out.out_of_fold)?;
                            meta_models.push((tag, out.model));
                        }
                    }
                }
            }
        }
    }

    let mut artifacts = RunArtifacts {
        results,
        weights,
        meta_models,
        split: Some(split),
        energy: None,
        notes,
        averaging: config.averaging,
    };
    if strategies.contains(&Strategy::Weighted) && artifacts.weights.is_empty() {
        artifacts
            .notes
            .push("weighted averaging skipped: no combination has two or more models".into());
    }
    if artifacts.results.is_empty() {
        artifacts.notes.push("no results: metrics, predictions and histogram sections omitted".into());
    }
    Ok(artifacts)
}

fn measure_start(config: &EnergyConfig, notes: &mut Vec<String>) -> Result<(crate::energy::EnergySession, String)> {
    match record_session(&config.source, config.sampling_period_s) {
        Ok(s) => Ok((s, source_name(&config.source))),
        Err(Error::CountersUnavailable(reason)) if config.fallback.is_some() => {
            let fallback = config.fallback.as_ref().expect("checked");
            notes.push(format!(
                "energy counters unavailable ({reason}); measured with fallback {}",
                source_name(fallback)
            ));
            Ok((record_session(fallback, config.sampling_period_s)?, source_name(fallback)))
        }
        Err(e) => Err(e),
    }
}

fn source_name(s: &PowerSource) -> String {
    match s {
        PowerSource::OsCounters { powercap_root } => format!("os_counters({})", powercap_root.display()),
        PowerSource::ConstantModel { cpu_w, gpu_w, ram_w } => {
            format!("constant_model(cpu={cpu_w} W, gpu={gpu_w} W, ram={ram_w} W)")
        }
        PowerSource::TraceReplay { path } => format!("trace_replay({})", path.display()),
    }
}

/// Runs the whole pipeline and publishes `config.output_dir` atomically.
///
/// Files are written to a sibling staging directory which is renamed into place
/// only once everything succeeded. An existing output directory is replaced only
/// if it holds a previous run (a manifest) or is empty.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let out = &config.output_dir;
    check_output_dir(out)?;

    let mut notes = Vec::new();
    let (session, source) = measure_start(&config.energy, &mut notes)?;
    let computed = load_bundle(config).and_then(|b| compute_results(config, &b));
    let record = session.stop();
    let mut artifacts = computed?;
    let record = record?;
    let breakdown = integrate_energy(&record.samples, record.duration_s)?;
    let emissions = compute_emissions(&breakdown, config.energy.grid_intensity)?;
    artifacts.energy = Some(EnergyArtifact {
        emissions,
        record,
        source,
    });
    notes.append(&mut artifacts.notes);
    artifacts.notes = notes;

    let staging = staging_dir(out)?;
    let written = write_run(config, &artifacts, &staging);
    if let Err(e) = written.and_then(|_| publish(&staging, out)) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(artifacts)
}

fn check_output_dir(out: &Path) -> Result<()> {
    if !out.exists() {
        return Ok(());
    }
    if !out.is_dir() {
        return Err(Error::OutputDirOccupied(out.to_path_buf()));
    }
    let empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
    if empty || out.join(MANIFEST_FILE).is_file() {
        Ok(())
    } else {
        Err(Error::OutputDirOccupied(out.to_path_buf()))
    }
}

fn staging_dir(out: &Path) -> Result<PathBuf> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("run");
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    Ok(staging)
}

fn publish(staging: &Path, out: &Path) -> Result<()> {
    check_output_dir(out)?;
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    fs::rename(staging, out).map_err(|e| Error::io(out, e))
}

fn input_checksums(config: &PipelineConfig) -> Result<Vec<ManifestEntry>> {
    let mut paths: Vec<&PathBuf> = config.model_prob_paths.iter().collect();
    paths.push(&config.label_path);
    paths.push(&config.class_list_path);
    if let SplitConfig::Explicit { split_file } = &config.split {
        paths.push(split_file);
    }
    paths
        .into_iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::unreadable(p, e))?;
            Ok(ManifestEntry {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
                volatile: false,
            })
        })
        .collect()
}

fn write_run(config: &PipelineConfig, artifacts: &RunArtifacts, dir: &Path) -> Result<()> {
    let mut formats = config.formats.clone();
    formats.dedup();
    let mut written = Vec::new();
    for f in &formats {
        written.extend(emit_report(artifacts, *f, dir)?);
    }
    let mut notes = artifacts.notes.clone();
    if !formats.contains(&ReportFormat::Json) {
        notes.push("json format not requested: metrics files omitted".into());
    }

    let mut files = Vec::new();
    for path in written {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let rel = path
            .strip_prefix(dir)
            .expect("written under dir")
            .to_string_lossy()
            .replace('\\', "/");
        let volatile = rel == ENERGY_JSON || rel == ENERGY_TABLE;
        files.push(ManifestEntry {
            sha256: sha256_hex(&bytes),
            path: rel,
            volatile,
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));

    let has_json = formats.contains(&ReportFormat::Json);
    let manifest = Manifest {
        format_version: 1,
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash()?,
        root_seed: config.seed,
        inputs: input_checksums(config)?,
        results: artifacts
            .results
            .iter()
            .filter(|_| has_json)
            .map(|r| ResultIndex {
                combo: r.combo_label(),
                strategy: r.strategy_label(),
                metrics_file: metrics_path(r),
            })
            .collect(),
        energy_file: (has_json && artifacts.energy.is_some()).then(|| ENERGY_JSON.to_string()),
        files,
        notes,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub combo: String,
    pub strategy: String,
    pub accuracy: f64,
    /// Against the simple-averaging result for the same run and combination.
    pub delta_vs_simple: Option<f64>,
    /// Against the same combination and strategy in the first run.
    pub delta_vs_first_run: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    /// Mean accuracy over every run and combination that used this strategy.
    pub mean_accuracy: f64,
    pub delta_vs_simple: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    pub strategies: Vec<StrategySummary>,
    pub energy: Vec<(String, EmissionsReport)>,
    /// First `baseline_runs` runs as group A, the rest as group B.
    pub energy_ratio: Option<RatioReport>,
    pub notes: Vec<String>,
}

#[derive(Deserialize)]
struct MetricsDoc {
    report: crate::metrics::MetricsReport,
}

/// Compares finished runs. The first `baseline_runs` directories form energy group A.
pub fn compare_runs(run_dirs: &[PathBuf], baseline_runs: usize) -> Result<Comparison> {
    if run_dirs.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two run directories".into()));
    }
    let mut runs = Vec::new();
    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut energy = Vec::new();
    let mut notes = Vec::new();
    for dir in run_dirs {
        let manifest = verify_manifest(dir)?;
        let name = dir.display().to_string();
        let mut run_rows = Vec::new();
        for r in &manifest.results {
            let path = dir.join(&r.metrics_file);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let doc: MetricsDoc = serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
            run_rows.push(ComparisonRow {
                run: name.clone(),
                combo: r.combo.clone(),
                strategy: r.strategy.clone(),
                accuracy: doc.report.accuracy,
                delta_vs_simple: None,
                delta_vs_first_run: None,
            });
        }
        for i in 0..run_rows.len() {
            let simple = run_rows
                .iter()
                .find(|s| s.combo == run_rows[i].combo && s.strategy == "simple")
                .map(|s| s.accuracy);
            run_rows[i].delta_vs_simple = simple.map(|s| run_rows[i].accuracy - s);
        }
        for row in &mut run_rows {
            row.delta_vs_first_run = match runs.first() {
                None => Some(0.0),
                Some(first) => rows
                    .iter()
                    .find(|f| &f.run == first && f.combo == row.combo && f.strategy == row.strategy)
                    .map(|f| row.accuracy - f.accuracy),
            };
        }
        rows.extend(run_rows);
        match &manifest.energy_file {
            Some(rel) => {
                let path = dir.join(rel);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let e: EnergyArtifact =
                    serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
                energy.push((name.clone(), e.emissions));
            }
            None => notes.push(format!("{name}: no energy report")),
        }
        runs.push(name);
    }

    let mut names: Vec<String> = rows.iter().map(|r| r.strategy.clone()).collect();
    names.sort();
    names.dedup();
    let mean_of = |s: &str| {
        let acc: Vec<f64> = rows.iter().filter(|r| r.strategy == s).map(|r| r.accuracy).collect();
        acc.iter().sum::<f64>() / acc.len() as f64
    };
    let simple_mean = names.iter().any(|s| s == "simple").then(|| mean_of("simple"));
    let strategies = names
        .iter()
        .map(|s| {
            let mean_accuracy = mean_of(s);
            StrategySummary {
                strategy: s.clone(),
                mean_accuracy,
                delta_vs_simple: simple_mean.map(|m| mean_accuracy - m),
            }
        })
        .collect();

    let baseline = baseline_runs.clamp(1, runs.len() - 1);
    let energy_ratio = if energy.len() == runs.len() {
        let reports: Vec<EmissionsReport> = energy.iter().map(|(_, e)| *e).collect();
        let (a, b) = reports.split_at(baseline);
        let ratio = compare_sessions(a, b)?;
        if ratio.mean_energy_b == 0.0 {
            notes.push("energy and emissions ratios undefined: group B measured zero energy".into());
        }
        Some(ratio)
    } else {
        notes.push("energy ratio omitted: not every run has an energy report".into());
        None
    };

    Ok(Comparison {
        runs,
        rows,
        strategies,
        energy,
        energy_ratio,
        notes,
    })
}

pub fn comparison_text(c: &Comparison) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let fmt_delta = |d: Option<f64>| d.map_or("-".to_string(), |d| format!("{:+.2}", d * 100.0));

    let run_w = c.rows.iter().map(|r| r.run.len()).chain([3]).max().unwrap_or(3);
    let combo_w = c.rows.iter().map(|r| r.combo.len()).chain([5]).max().unwrap_or(5);
    let strat_w = c.rows.iter().map(|r| r.strategy.len()).chain([8]).max().unwrap_or(8);
    let _ = writeln!(
        out,
        "{:<run_w$}  {:<combo_w$}  {:<strat_w$}  {:>12}  {:>14}  {:>16}",
        "Run", "Combo", "Strategy", "Accuracy (%)", "vs simple (pp)", "vs first run (pp)"
    );
    for r in &c.rows {
        let _ = writeln!(
            out,
            "{:<run_w$}  {:<combo_w$}  {:<strat_w$}  {:>12.2}  {:>14}  {:>16}",
            r.run,
            r.combo,
            r.strategy,
            r.accuracy * 100.0,
            fmt_delta(r.delta_vs_simple),
            fmt_delta(r.delta_vs_first_run)
        );
    }
    out.push('\n');
    let _ = writeln!(out, "{:<strat_w$}  {:>17}  {:>14}", "Strategy", "Mean accuracy (%)", "vs simple (pp)");
    for s in &c.strategies {
        let _ = writeln!(
            out,
            "{:<strat_w$}  {:>17.2}  {:>14}",
            s.strategy,
            s.mean_accuracy * 100.0,
            fmt_delta(s.delta_vs_simple)
        );
    }
    if !c.energy.is_empty() {
        out.push('\n');
        out.push_str(&emissions_table(&c.energy));
    }
    if let Some(r) = &c.energy_ratio {
        let _ = writeln!(
            out,
            "\nGroup A/B ratios: duration {:.2}, energy {:.2}, emissions {:.2}",
            r.duration_ratio, r.energy_ratio, r.emissions_ratio
        );
    }
    for n in &c.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

/// Runs [`compare_runs`] and writes `comparison.txt` and `comparison.json` into `out_dir`.
pub fn compare_command(run_dirs: &[PathBuf], baseline_runs: usize, out_dir: &Path) -> Result<(Comparison, Vec<PathBuf>)> {
    let comparison = compare_runs(run_dirs, baseline_runs)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let txt = out_dir.join("comparison.txt");
    fs::write(&txt, comparison_text(&comparison)).map_err(|e| Error::io(&txt, e))?;
    let json = out_dir.join("comparison.json");
    let mut body = serde_json::to_string_pretty(&comparison)?;
    body.push('\n');
    fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
    Ok((comparison, vec![txt, json]))
}


/// One pre-measured session in an energy-report JSON list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub label: String,
    pub duration_s: f64,
    pub cpu_kwh: f64,
    pub gpu_kwh: f64,
    pub ram_kwh: f64,
    /// Reported total, checked against the component sum (1% relative).
    #[serde(default)]
    pub total_kwh: Option<f64>,
}

impl SessionEntry {
    /// The total is always the component sum; a reported total only has to agree with it.
    pub fn breakdown(&self) -> Result<EnergyBreakdown> {
        let b = EnergyBreakdown::from_components(self.duration_s, self.cpu_kwh, self.gpu_kwh, self.ram_kwh);
        if let Some(t) = self.total_kwh {
            if (t - b.total_kwh).abs() > 0.01 * t.abs().max(b.total_kwh.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "session {:?}: reported total {t} kWh disagrees with component sum {} kWh",
                    self.label, b.total_kwh
                )));
            }
        }
        Ok(b)
    }
}

/// Reads sessions from a power trace CSV, a JSON list of [`SessionEntry`], or a run directory.
pub fn load_sessions(path: &Path) -> Result<Vec<(String, EnergyBreakdown)>> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    if path.is_dir() {
        let manifest = verify_manifest(path)?;
        let rel = manifest
            .energy_file
            .ok_or_else(|| Error::malformed(path, "run has no energy report"))?;
        let file = path.join(rel);
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let e: EnergyArtifact = serde_json::from_str(&text).map_err(|e| Error::malformed(&file, e.to_string()))?;
        return Ok(vec![(path.display().to_string(), e.emissions.breakdown)]);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
            let entries: Vec<SessionEntry> =
                serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
            entries.iter().map(|e| Ok((e.label.clone(), e.breakdown()?))).collect()
        }
        _ => {
            let samples = load_trace(path)?;
            let duration = samples.last().map_or(0.0, |s| s.timestamp);
            Ok(vec![(stem, integrate_energy(&samples, duration)?)])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub rows: Vec<(String, EmissionsReport)>,
    /// Present when a baseline group size was given.
    pub ratio: Option<RatioReport>,
}

/// Emissions for every session in `inputs`; the first `baseline` sessions form ratio group A.
pub fn energy_report(inputs: &[PathBuf], grid_intensity: f64, baseline: Option<usize>) -> Result<EnergySummary> {
    let mut rows = Vec::new();
    for path in inputs {
        for (label, b) in load_sessions(path)? {
            rows.push((label, compute_emissions(&b, grid_intensity)?));
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no energy sessions given".into()));
    }
    let ratio = match baseline {
        None => None,
        Some(n) => {
            let reports: Vec<EmissionsReport> = rows.iter().map(|(_, r)| *r).collect();
            let (a, b) = reports.split_at(n.min(reports.len()));
            Some(compare_sessions(a, b)?)
        }
    };
    Ok(EnergySummary { rows, ratio })
}

pub fn energy_summary_text(s: &EnergySummary) -> String {
    let mut out = emissions_table(&s.rows);
    if let Some(r) = &s.ratio {
        out.push_str(&format!(
            "\nGroup A/B ratios: duration {:.2}, energy {:.2}, emissions {:.2}\n",
            r.duration_ratio, r.energy_ratio, r.emissions_ratio
        ));
    }
    out
}
