//! Run artifacts and the files they are written to.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{LabelVector, ProbabilityMatrix, SplitIndices};
use crate::energy::{emissions_table, EmissionsReport, SessionRecord};
use crate::error::{Error, Result};
use crate::fusion::WeightsFile;
use crate::metrics::{metrics_table, Averaging, ConfidenceHistogram, MetricsReport};
use crate::stacking::{MetaKind, MetaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Simple,
    Weighted,
    Stacking,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Simple => "simple",
            Strategy::Weighted => "weighted",
            Strategy::Stacking => "stacking",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Strategy::Simple),
            "weighted" => Ok(Strategy::Weighted),
            "stacking" => Ok(Strategy::Stacking),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Output of one strategy on one model combination, scored on the test partition.
#[derive(Debug, Clone)]
pub struct StrategyResult {
    pub combo: Vec<String>,
    pub strategy: Strategy,
    pub meta_kind: Option<MetaKind>,
    pub report: MetricsReport,
    pub truth: LabelVector,
    pub predictions: LabelVector,
    pub probabilities: ProbabilityMatrix,
    pub histogram: ConfidenceHistogram,
    pub out_of_fold: Option<MetricsReport>,
}

impl StrategyResult {
    pub fn strategy_label(&self) -> String {
        match self.meta_kind {
            Some(kind) => format!("{}-{}", self.strategy.name(), kind.name()),
            None => self.strategy.name().to_string(),
        }
    }

    pub fn combo_label(&self) -> String {
        self.combo.join("+")
    }

    /// File-name stem shared by every file derived from this result.
    pub fn file_tag(&self) -> String {
        format!("{}__{}", sanitize(&self.combo_label()), self.strategy_label())
    }
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+') { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyArtifact {
    pub emissions: EmissionsReport,
    pub record: SessionRecord,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    /// Files that legitimately differ between identical runs (self-measured energy).
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultIndex {
    pub combo: String,
    pub strategy: String,
    pub metrics_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub root_seed: u64,
    /// Input files with their digests at run time.
    pub inputs: Vec<ManifestEntry>,
    pub results: Vec<ResultIndex>,
    pub energy_file: Option<String>,
    pub files: Vec<ManifestEntry>,
    pub notes: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub results: Vec<StrategyResult>,
    pub weights: Vec<WeightsFile>,
    pub meta_models: Vec<(String, MetaModel)>,
    pub split: Option<SplitIndices>,
    pub energy: Option<EnergyArtifact>,
    pub notes: Vec<String>,
    pub averaging: Averaging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
    TextTable,
    SvgHistogram,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::TextTable,
        ReportFormat::SvgHistogram,
    ];
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "text-table" | "text" => Ok(ReportFormat::TextTable),
            "svg-histogram" | "svg" => Ok(ReportFormat::SvgHistogram),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, rel: &str, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn metrics_path(r: &StrategyResult) -> String {
    format!("metrics/{}.json", r.file_tag())
}

pub const ENERGY_JSON: &str = "energy/emissions.json";
pub const ENERGY_TABLE: &str = "tables/emissions.txt";

/// Writes `artifacts` in one format under `dir`; returns the files written.
pub fn emit_report(artifacts: &RunArtifacts, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            for r in &artifacts.results {
                #[derive(Serialize)]
                struct MetricsFile<'a> {
                    combo: &'a [String],
                    strategy: String,
                    report: &'a MetricsReport,
                    out_of_fold: &'a Option<MetricsReport>,
                }
                let doc = MetricsFile {
                    combo: &r.combo,
                    strategy: r.strategy_label(),
                    report: &r.report,
                    out_of_fold: &r.out_of_fold,
                };
                write_file(dir, &metrics_path(r), &to_json(&doc)?, &mut written)?;
            }
            for w in &artifacts.weights {
                let rel = format!("weights/{}.json", sanitize(&w.model_ids.join("+")));
                write_file(dir, &rel, &to_json(w)?, &mut written)?;
            }
            for (tag, model) in &artifacts.meta_models {
                let mut text = model.to_json()?;
                text.push('\n');
                write_file(dir, &format!("models/{tag}.json"), text.as_bytes(), &mut written)?;
            }
            if let Some(split) = &artifacts.split {
                write_file(dir, "split.json", &to_json(split)?, &mut written)?;
            }
            if let Some(energy) = &artifacts.energy {
                write_file(dir, ENERGY_JSON, &to_json(energy)?, &mut written)?;
            }
        }
        ReportFormat::Csv => {
            for r in &artifacts.results {
                let tag = r.file_tag();
                write_file(dir, &format!("predictions/{tag}.csv"), predictions_csv(r).as_bytes(), &mut written)?;
                write_file(dir, &format!("histograms/{tag}.csv"), r.histogram.to_csv().as_bytes(), &mut written)?;
            }
        }
        ReportFormat::TextTable => {
            if !artifacts.results.is_empty() {
                let rows: Vec<(String, &MetricsReport)> = artifacts
                    .results
                    .iter()
                    .map(|r| (format!("{} [{}]", r.strategy_label(), r.combo_label()), &r.report))
                    .collect();
                let table = metrics_table(&rows, artifacts.averaging);
                write_file(dir, "tables/metrics.txt", table.as_bytes(), &mut written)?;
            }
            if let Some(energy) = &artifacts.energy {
                let table = emissions_table(&[("this run".to_string(), energy.emissions)]);
                write_file(dir, ENERGY_TABLE, table.as_bytes(), &mut written)?;
            }
        }
        ReportFormat::SvgHistogram => {
            for r in &artifacts.results {
                let title = format!("{} [{}]", r.strategy_label(), r.combo_label());
                let svg = histogram_svg(&r.histogram, &title);
                write_file(dir, &format!("histograms/{}.svg", r.file_tag()), svg.as_bytes(), &mut written)?;
            }
        }
    }
    Ok(written)
}

fn predictions_csv(r: &StrategyResult) -> String {
    let mut out = String::from("sample_id,true_label,predicted_label,confidence");
    for c in r.probabilities.class_names() {
        let _ = write!(out, ",p_{c}");
    }
    out.push('\n');
    let names = r.predictions.class_names();
    for (i, id) in r.predictions.sample_ids().iter().enumerate() {
        let row = r.probabilities.row(i);
        let conf = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = write!(
            out,
            "{id},{},{},{conf}",
            names[r.truth.labels()[i]],
            names[r.predictions.labels()[i]]
        );
        for p in row {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}

/// Static bar chart of a confidence histogram.
pub fn histogram_svg(h: &ConfidenceHistogram, title: &str) -> String {
    let (width, height) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = plot_w / h.bin_count as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        width / 2.0,
        escape_xml(title)
    );
    for (i, &count) in h.counts.iter().enumerate() {
        let bh = plot_h * count as f64 / max;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a7ab5" stroke="white"><title>[{}, {}): {count}</title></rect>"##,
            left + i as f64 * bar_w,
            top + plot_h - bh,
            bar_w,
            bh,
            h.bin_edges[i],
            h.bin_edges[i + 1]
        );
    }
    let axis_y = top + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{axis_y}" x2="{:.1}" y2="{axis_y}" stroke="black"/>"#,
        left + plot_w
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{axis_y}" stroke="black"/>"#);
    for tick in 0..=10 {
        let x = left + plot_w * tick as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{:.1}</text>"#,
            axis_y + 16.0,
            tick as f64 / 10.0
        );
    }
    for tick in 0..=4 {
        let value = max * tick as f64 / 4.0;
        let y = axis_y - plot_h * tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            left - 6.0,
            y + 4.0,
            value.round()
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">confidence</text>"#,
        left + plot_w / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {:.1})">count</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Checks every manifest entry exists under `dir` with the recorded digest.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    for entry in &manifest.files {
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(|_| Error::ChecksumMismatch(path.clone()))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::ChecksumMismatch(path));
        }
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|_| Error::ManifestMissing(dir.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))
}
