use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use probfuse::dataset::{load_class_list, load_labels, stratified_split};
use probfuse::energy::DEFAULT_GRID_INTENSITY;
use probfuse::fusion::ObjectiveSplit;
use probfuse::metrics::metrics_table;
use probfuse::pipeline::{
    compare_command, comparison_text, derive_seed, energy_report, energy_summary_text, run_pipeline, PipelineConfig,
    SplitConfig,
};
use probfuse::report::{ReportFormat, Strategy};
use probfuse::stacking::MetaKind;
use probfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "probfuse", version, about = "Probability-level ensembling, stacking and energy reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured strategy and write a run directory.
    Eval(RunArgs),
    /// Fit simplex weights only.
    OptimizeWeights(RunArgs),
    /// Train and score stacking meta-models only.
    Stack {
        #[command(flatten)]
        run: RunArgs,
        /// Meta-learners to train (overrides the config).
        #[arg(long = "meta", value_delimiter = ',')]
        meta: Vec<MetaKind>,
    },
    /// Emissions table from power traces, session lists or run directories.
    EnergyReport {
        /// `.csv` power traces, `.json` session lists or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GRID_INTENSITY)]
        grid_intensity: f64,
        /// Treat the first N sessions as group A and report A/B ratios.
        #[arg(long)]
        baseline: Option<usize>,
        #[arg(long, default_value = "energy-report")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "text-table,json")]
        format: Vec<String>,
    },
    /// Side-by-side accuracy and energy for finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Number of leading runs forming energy group A.
        #[arg(long, default_value_t = 1)]
        baseline: usize,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Write a stratified train/test split.
    Split {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output formats: json, csv, text-table, svg-histogram.
    #[arg(long, value_delimiter = ',')]
    format: Vec<String>,
    #[arg(long)]
    grid_intensity: Option<f64>,
    /// Fit weights on the test partition instead of a validation slice.
    #[arg(long)]
    optimize_on_test: bool,
    /// Cross-fitting folds for the stacking diagnostic (0 = off).
    #[arg(long)]
    oof_folds: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        if !self.format.is_empty() {
            c.formats = parse_formats(&self.format)?;
        }
        if let Some(g) = self.grid_intensity {
            c.energy.grid_intensity = g;
        }
        if self.optimize_on_test {
            c.optimizer.objective_split = ObjectiveSplit::TestPaperFaithful;
        }
        if let Some(f) = self.oof_folds {
            c.oof_folds = f;
        }
        Ok(c)
    }
}

/// Stdout writes that tolerate a closed pipe (`probfuse ... | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

macro_rules! emitln {
    ($($arg:tt)*) => {
        emit(&(format!($($arg)*) + "\n"))
    };
}

fn parse_formats(raw: &[String]) -> Result<Vec<ReportFormat>> {
    raw.iter().map(|f| f.parse()).collect()
}

fn run(config: PipelineConfig) -> Result<()> {
    let artifacts = run_pipeline(&config)?;
    let rows: Vec<(String, &_)> = artifacts
        .results
        .iter()
        .map(|r| (format!("{} [{}]", r.strategy_label(), r.combo_label()), &r.report))
        .collect();
    emit(&metrics_table(&rows, config.averaging));
    if let Some(e) = &artifacts.energy {
        emitln!(
            "energy: {:.3e} kWh, {:.3e} kgCO2eq over {:.2} s ({})",
            e.emissions.breakdown.total_kwh, e.emissions.emissions_kg, e.emissions.breakdown.duration_s, e.source
        );
    }
    for n in &artifacts.notes {
        emitln!("note: {n}");
    }
    emitln!("wrote {}", config.output_dir.display());
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(args) => run(args.load()?),
        Command::OptimizeWeights(args) => {
            let mut c = args.load()?;
            c.strategies = vec![Strategy::Weighted];
            run(c)
        }
        Command::Stack { run: args, meta } => {
            let mut c = args.load()?;
            c.strategies = vec![Strategy::Stacking];
            if !meta.is_empty() {
                c.meta_kinds = meta;
            }
            run(c)
        }
        Command::EnergyReport {
            inputs,
            grid_intensity,
            baseline,
            out,
            format,
        } => {
            let formats = parse_formats(&format)?;
            if formats.contains(&ReportFormat::SvgHistogram) {
                return Err(Error::UnsupportedFormat("svg-histogram (energy reports are tabular)".into()));
            }
            let summary = energy_report(&inputs, grid_intensity, baseline)?;
            let text = energy_summary_text(&summary);
            emit(&text);
            create_dir(&out)?;
            for f in formats {
                match f {
                    ReportFormat::TextTable => write(&out.join("emissions.txt"), &text)?,
                    ReportFormat::Json => {
                        write(&out.join("emissions.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?
                    }
                    ReportFormat::Csv => {
                        let mut csv = String::from("label,duration_s,total_kwh,cpu_kwh,gpu_kwh,ram_kwh,emissions_kg,rate_kg_per_s\n");
                        for (label, r) in &summary.rows {
                            let b = &r.breakdown;
                            csv.push_str(&format!(
                                "{label},{},{},{},{},{},{},{}\n",
                                b.duration_s, b.total_kwh, b.cpu_kwh, b.gpu_kwh, b.ram_kwh, r.emissions_kg, r.rate_kg_per_s
                            ));
                        }
                        write(&out.join("emissions.csv"), &csv)?
                    }
                    ReportFormat::SvgHistogram => unreachable!("rejected above"),
                }
            }
            Ok(())
        }
        Command::Compare { runs, baseline, out } => {
            let (comparison, _) = compare_command(&runs, baseline, &out)?;
            emit(&comparison_text(&comparison));
            emitln!("wrote {}", out.display());
            Ok(())
        }
        Command::Split {
            config,
            labels,
            classes,
            fraction,
            seed,
            out,
        } => {
            let base = match &config {
                Some(p) => Some(PipelineConfig::from_file(p)?),
                None => None,
            };
            let pick = |flag: Option<PathBuf>, from_config: Option<PathBuf>, name: &str| {
                flag.or(from_config)
                    .ok_or_else(|| Error::InvalidArgument(format!("--{name} or --config is required")))
            };
            let labels_path = pick(labels, base.as_ref().map(|c| c.label_path.clone()), "labels")?;
            let classes_path = pick(classes, base.as_ref().map(|c| c.class_list_path.clone()), "classes")?;
            let fraction = fraction
                .or(match base.as_ref().map(|c| &c.split) {
                    Some(SplitConfig::Fraction { test_fraction }) => Some(*test_fraction),
                    _ => None,
                })
                .unwrap_or(0.2);
            let root = seed.or(base.as_ref().map(|c| c.seed)).unwrap_or(0);

            let class_names = load_class_list(&classes_path)?;
            let labels = load_labels(&labels_path, &class_names)?;
            let split = stratified_split(&labels, fraction, derive_seed(root, "split"))?;
            let mut test_counts = vec![0usize; class_names.len()];
            for &i in &split.test {
                test_counts[labels.labels()[i]] += 1;
            }
            for ((name, total), test) in class_names.iter().zip(labels.class_counts()).zip(test_counts) {
                emitln!("{name}: {} train, {test} test", total - test);
            }
            create_dir(&out)?;
            let path = out.join("split.json");
            write(&path, &(serde_json::to_string_pretty(&split)? + "\n"))?;
            emitln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
