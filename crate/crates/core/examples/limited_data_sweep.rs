//! Ablations crossed with limited-data fractions, as the command line's
//! `--sweep` runs them, on a reduced grid.
//!
//!     cargo run --release --example limited_data_sweep

use glen::corpus::{generate_synthetic_pair, SyntheticSpec, LIMITED_DATA_FRACTIONS};
use glen::model::{Ablation, ModelConfig};
use glen::train::{run_sweep, summary_table, ExperimentData, TrainConfig};

fn main() -> glen::Result<()> {
    let pair = generate_synthetic_pair(&SyntheticSpec::cross_domain(), 0);
    let docs: Vec<_> = pair.documents().cloned().collect();
    let model = ModelConfig {
        classes: 2,
        ..ModelConfig::default()
    };
    let (data, _) = ExperimentData::from_documents("synth-src", "synth-tgt", &docs, &pair.vectors, model, 0)?;
    let config = TrainConfig {
        lr_grid: vec![1e-3],
        seeds: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let reports = run_sweep(&data, &[Ablation::Len, Ablation::Glen], &LIMITED_DATA_FRACTIONS, &config)?;
    print!("{}", summary_table(&reports));
    Ok(())
}
