//! Z-scored cosine similarity of indicator tokens before and after GLEN
//! training, written as TSV and SVG.
//!
//!     cargo run --release --example similarity_heatmap [OUT_DIR]

use std::path::PathBuf;

use glen::corpus::{generate_synthetic_pair, SyntheticSpec};
use glen::heatmap::{build_heatmap, HeatmapSpec, Stage};
use glen::io::write_atomic;
use glen::model::{Ablation, ModelConfig};
use glen::train::{run_experiment, ExperimentData, TrainConfig};

fn main() -> glen::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmap-example".into()));
    let pair = generate_synthetic_pair(&SyntheticSpec::cross_domain(), 0);
    let docs: Vec<_> = pair.documents().cloned().collect();
    let model = ModelConfig {
        classes: 2,
        ..ModelConfig::default()
    };
    let (data, vocab) = ExperimentData::from_documents("src", "tgt", &docs, &pair.vectors, model, 0)?;
    let config = TrainConfig {
        lr_grid: vec![1e-3],
        seeds: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let report = run_experiment(&data, Ablation::Glen, 1.0, &config)?;
    let inputs = data.inputs(report.graph.as_ref());
    let (_, model) = &report.models[0];

    let mut tokens: Vec<String> = pair.source_indicators.iter().flatten().cloned().collect();
    tokens.extend(pair.target_indicators.iter().flatten().cloned());
    for stage in [Stage::Before, Stage::After] {
        let spec = HeatmapSpec {
            tokens: tokens.clone(),
            stage,
        };
        let h = build_heatmap(&spec, &vocab, &inputs, Some(model))?;
        write_atomic(&out.join(format!("heatmap-{stage}.tsv")), h.to_text().as_bytes())?;
        write_atomic(&out.join(format!("heatmap-{stage}.svg")), h.to_svg().as_bytes())?;
        println!("{stage}:");
        print!("{}", h.to_text().lines().skip(1).map(|l| format!("  {l}\n")).collect::<String>());
    }
    println!("wrote {}", out.display());
    Ok(())
}
