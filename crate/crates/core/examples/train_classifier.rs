//! One GLEN training run with the epoch loop spelled out: mini-batch
//! updates, validation F1 and the patience rule.
//!
//!     cargo run --release --example train_classifier

use glen::corpus::{generate_synthetic_pair, Domain, Split, SyntheticSpec};
use glen::global_graph::{build_scoped_graph, GraphScope};
use glen::model::{Ablation, ModelConfig};
use glen::train::{EarlyStopping, ExperimentData, StopDecision, Trainer};

fn main() -> glen::Result<()> {
    let pair = generate_synthetic_pair(&SyntheticSpec::default(), 0);
    let docs: Vec<_> = pair.documents().cloned().collect();
    let config = ModelConfig {
        classes: 2,
        ablation: Ablation::Glen,
        ..ModelConfig::default()
    };
    let (data, _) = ExperimentData::from_documents("src", "tgt", &docs, &pair.vectors, config, 0)?;
    let graph = build_scoped_graph(&data.instances, data.n_tokens, 1, GraphScope::All)?;
    let inputs = data.inputs(Some(&graph));
    let train = data.select(Domain::Source, Split::Train);
    let val = data.select(Domain::Source, Split::Val);
    let test = data.select(Domain::Target, Split::Test);
    println!("{} train / {} val / {} target test", train.len(), val.len(), test.len());

    let mut trainer = Trainer::new(data.model.clone(), 1e-3, 32, 0)?;
    println!("{} trainable parameters", trainer.model().param_count());
    let mut stopping = EarlyStopping::new(4);
    let mut best = None;
    for epoch in 1..=100 {
        let loss = trainer.run_epoch(&inputs, &train)?;
        let score = trainer.evaluate(&inputs, &val)?;
        println!("epoch {epoch:>3}  loss {loss:.4}  val weighted F1 {:.4}", score.weighted);
        match stopping.observe(epoch, score.weighted) {
            StopDecision::Improved => best = Some(trainer.model().clone()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (epoch, score) = stopping.best().expect("ran at least one epoch");
    let best = best.expect("first epoch improves");
    let target = glen::train::evaluate(&best, &inputs, &test)?;
    println!("best epoch {epoch} (val {score:.4}); target test weighted {:.4} micro {:.4} macro {:.4}", target.weighted, target.micro, target.macro_);
    Ok(())
}
