//! Writes a small synthetic three-model dataset and a matching run config.
//!
//! cargo run -p probfuse --example demo_data -- <dir>

use std::path::PathBuf;

use probfuse::pipeline::PipelineConfig;
use probfuse::stacking::MetaKind;
use probfuse::synthetic::{mixed_bundle, write_bundle};

fn main() -> probfuse::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    let bundle = mixed_bundle(7, 400, 4, 0.7);
    let files = write_bundle(&bundle, &dir)?;
    let name = |p: &PathBuf| PathBuf::from(p.file_name().expect("file"));
    let config = PipelineConfig {
        model_prob_paths: files.models.iter().map(name).collect(),
        label_path: name(&files.labels),
        class_list_path: name(&files.classes),
        meta_kinds: vec![MetaKind::Logistic, MetaKind::LinearSvm, MetaKind::Mlp, MetaKind::RandomForest],
        output_dir: "run".into(),
        seed: 42,
        ..Default::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)? + "\n").map_err(|source| probfuse::Error::Io {
        path: path.clone(),
        source,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}
