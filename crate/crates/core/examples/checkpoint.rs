//! Save a briefly trained model, reload it and check the predictions agree.
//!
//!     cargo run --release --example checkpoint

use glen::corpus::{generate_synthetic_pair, Domain, Split, SyntheticSpec};
use glen::global_graph::{build_scoped_graph, GraphScope};
use glen::model::{GlenModel, ModelConfig};
use glen::train::{ExperimentData, Trainer};

fn main() -> glen::Result<()> {
    let pair = generate_synthetic_pair(&SyntheticSpec::default(), 0);
    let docs: Vec<_> = pair.documents().cloned().collect();
    let model = ModelConfig {
        classes: 2,
        ..ModelConfig::default()
    };
    let (data, vocab) = ExperimentData::from_documents("src", "tgt", &docs, &pair.vectors, model, 0)?;
    let graph = build_scoped_graph(&data.instances, data.n_tokens, 1, GraphScope::All)?;
    let inputs = data.inputs(Some(&graph));
    let train = data.select(Domain::Source, Split::Train);
    let test = data.select(Domain::Target, Split::Test);

    let mut trainer = Trainer::new(data.model.clone(), 1e-3, 32, 0)?;
    for _ in 0..3 {
        trainer.run_epoch(&inputs, &train)?;
    }
    let model = trainer.into_model();

    let dir = std::env::temp_dir().join("glen-checkpoint-example");
    let path = dir.join("glen.ckpt");
    model.save(&path, &vocab.digest())?;
    let (loaded, digest) = GlenModel::load(&path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    println!("vocabulary digest matches: {}", digest == vocab.digest());
    let a = model.logits(&inputs, &test)?;
    let b = loaded.logits(&inputs, &test)?;
    println!("max logit difference after reload: {:e}", a.max_abs_diff(&b));
    Ok(())
}
