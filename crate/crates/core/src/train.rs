//! Training loop, learning-rate grid, ablation and limited-data experiments.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState};
use crate::corpus::{
    subsample_train, Document, Domain, EmbeddingTable, Instance, PretrainedVectors, Split, Vocabulary,
};
use crate::error::{GlenError, Result};
use crate::global_graph::{build_scoped_graph, TokenGraph};
use crate::metrics::{f1_suite, F1Scores};
use crate::model::{Ablation, GlenModel, ModelConfig, ModelInputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_grid: Vec<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Runs per learning rate; seed `k` is `base_seed + k`.
    pub seeds: usize,
    pub base_seed: u64,
    pub fraction: f64,
    /// Run grid cells on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_grid: vec![1e-3, 1e-4, 1e-5],
            patience: 4,
            max_epochs: 100,
            batch_size: 32,
            seeds: 3,
            base_seed: 0,
            fraction: 1.0,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(GlenError::Config("learning-rate grid must be nonempty and positive".into()));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.seeds == 0 {
            return Err(GlenError::Config("patience, epochs, batch size and seeds must be positive".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(GlenError::Config(format!("fraction {} outside (0, 1]", self.fraction)));
        }
        Ok(())
    }

    pub fn seed_values(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds as u64).map(|k| self.base_seed + k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience rule: stop after `patience` consecutive epochs without a
/// strictly better score.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if score <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, score)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// A model with its optimizer and seeded shuffling and dropout streams.
pub struct Trainer {
    model: GlenModel,
    adam: AdamState,
    batch_size: usize,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: ModelConfig, lr: f64, batch_size: usize, seed: u64) -> Result<Self> {
        let model = GlenModel::new(config, seed)?;
        let adam = AdamState::new(AdamConfig::with_lr(lr), model.params().named().into_iter().map(|(_, t)| t));
        Ok(Trainer {
            model,
            adam,
            batch_size,
            shuffle_rng: ChaCha8Rng::seed_from_u64(derived_seed(seed, 1)),
            dropout_rng: ChaCha8Rng::seed_from_u64(derived_seed(seed, 2)),
        })
    }

    pub fn model(&self) -> &GlenModel {
        &self.model
    }

    pub fn into_model(self) -> GlenModel {
        self.model
    }

    /// One pass over shuffled mini-batches; returns the mean batch loss.
    pub fn run_epoch(&mut self, inputs: &ModelInputs, train: &[Instance]) -> Result<f64> {
        if train.is_empty() {
            return Err(GlenError::Invalid("no training instances".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.model.train_step(&mut self.adam, inputs, &batch, &mut self.dropout_rng)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    pub fn evaluate(&self, inputs: &ModelInputs, instances: &[Instance]) -> Result<F1Scores> {
        evaluate(&self.model, inputs, instances)
    }
}

pub fn evaluate(model: &GlenModel, inputs: &ModelInputs, instances: &[Instance]) -> Result<F1Scores> {
    let truths = instances
        .iter()
        .map(|i| {
            i.labels
                .clone()
                .ok_or_else(|| GlenError::Invalid(format!("instance {} has no labels", i.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions = model.predict_all(inputs, instances)?;
    f1_suite(&predictions, &truths, model.config().classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val: F1Scores,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: GlenModel,
    pub lr: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val: F1Scores,
    pub history: Vec<EpochRecord>,
}

/// Trains one (lr, seed) cell with early stopping on validation weighted F1.
pub fn train(
    model_config: &ModelConfig,
    inputs: &ModelInputs,
    train_set: &[Instance],
    val_set: &[Instance],
    config: &TrainConfig,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    if val_set.is_empty() {
        return Err(GlenError::Invalid("validation set is empty".into()));
    }
    let mut trainer = Trainer::new(model_config.clone(), lr, config.batch_size, seed)?;
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best: Option<(GlenModel, F1Scores)> = None;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let loss = trainer
            .run_epoch(inputs, train_set)
            .map_err(|e| match e {
                GlenError::Diverged(m) | GlenError::NonFiniteGradient(m) => {
                    GlenError::Diverged(format!("lr {lr}, seed {seed}, epoch {epoch}: {m}"))
                }
                other => other,
            })?;
        let val = trainer.evaluate(inputs, val_set)?;
        log::debug!("lr {lr} seed {seed} epoch {epoch}: loss {loss:.5} val wF1 {:.4}", val.weighted);
        history.push(EpochRecord { epoch, loss, val });
        match stopping.observe(epoch, val.weighted) {
            StopDecision::Improved => best = Some((trainer.model().clone(), val)),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (best_epoch, _) = stopping.best().expect("at least one epoch");
    let (model, best_val) = best.expect("first epoch always improves");
    Ok(TrainOutcome {
        model,
        lr,
        seed,
        best_epoch,
        best_val,
        history,
    })
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best_lr: f64,
    /// Mean validation weighted F1 per lr over the seeds that finished.
    pub lr_scores: Vec<(f64, Option<f64>)>,
    /// Every finished cell, sorted by (lr, seed).
    pub cells: Vec<TrainOutcome>,
    /// Diverged cells as (lr, seed, message).
    pub failures: Vec<(f64, u64, String)>,
}

impl GridResult {
    pub fn best_cells(&self) -> impl Iterator<Item = &TrainOutcome> {
        self.cells.iter().filter(move |c| c.lr == self.best_lr)
    }
}

/// One [`train`] per (lr, seed); the lr with the highest mean validation
/// weighted F1 wins, ties going to the smaller lr.
pub fn grid_search(
    model_config: &ModelConfig,
    inputs: &ModelInputs,
    train_set: &[Instance],
    val_set: &[Instance],
    config: &TrainConfig,
) -> Result<GridResult> {
    config.validate()?;
    let mut grid = config.lr_grid.clone();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let cells: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&lr| config.seed_values().map(move |s| (lr, s)))
        .collect();
    let run = |&(lr, seed): &(f64, u64)| train(model_config, inputs, train_set, val_set, config, lr, seed);
    let results: Vec<Result<TrainOutcome>> = if config.parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    let mut finished = Vec::new();
    let mut failures = Vec::new();
    for (&(lr, seed), r) in cells.iter().zip(results) {
        match r {
            Ok(o) => finished.push(o),
            Err(GlenError::Diverged(m)) => {
                log::warn!("diverged: {m}");
                failures.push((lr, seed, m));
            }
            Err(e) => return Err(e),
        }
    }
    let lr_scores: Vec<(f64, Option<f64>)> = grid
        .iter()
        .map(|&lr| {
            let scores: Vec<f64> = finished.iter().filter(|o| o.lr == lr).map(|o| o.best_val.weighted).collect();
            (lr, (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for &(lr, score) in &lr_scores {
        if let Some(s) = score {
            // Ascending lr order, so only a strictly better score displaces.
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((lr, s));
            }
        }
    }
    let (best_lr, _) = best.ok_or_else(|| GlenError::Diverged("every grid cell diverged".into()))?;
    Ok(GridResult {
        best_lr,
        lr_scores,
        cells: finished,
        failures,
    })
}

/// Everything shared by the experiments of one source/target pair.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub source_name: String,
    pub target_name: String,
    /// Source train/val/unlabeled(/test) and target unlabeled/test instances.
    pub instances: Vec<Instance>,
    pub n_tokens: usize,
    pub embeddings: EmbeddingTable,
    pub model: ModelConfig,
}

impl ExperimentData {
    /// Vocabulary over every non-test document, pretrained rows where available.
    pub fn from_documents(
        source_name: &str,
        target_name: &str,
        docs: &[Document],
        vectors: &PretrainedVectors,
        model: ModelConfig,
        seed: u64,
    ) -> Result<(Self, Vocabulary)> {
        if vectors.dim() != model.d_in {
            return Err(GlenError::Config(format!(
                "embedding dimension {} but model expects {}",
                vectors.dim(),
                model.d_in
            )));
        }
        let vocab = Vocabulary::build(docs.iter().filter(|d| d.split != Split::Test));
        let embeddings = EmbeddingTable::build(vectors, &vocab, seed);
        let data = ExperimentData {
            source_name: source_name.to_string(),
            target_name: target_name.to_string(),
            instances: vocab.encode_all(docs),
            n_tokens: vocab.len(),
            embeddings,
            model,
        };
        Ok((data, vocab))
    }

    pub fn inputs<'a>(&'a self, graph: Option<&'a TokenGraph>) -> ModelInputs<'a> {
        ModelInputs {
            embeddings: &self.embeddings,
            graph,
        }
    }

    pub fn select(&self, domain: Domain, split: Split) -> Vec<Instance> {
        self.instances
            .iter()
            .filter(|i| i.domain == domain && i.split == split)
            .cloned()
            .collect()
    }
}

/// One line of the report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub source: String,
    pub target: String,
    pub ablation: Ablation,
    pub fraction: f64,
    pub lr: f64,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub weighted_f1: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub experiment: String,
    pub source: String,
    pub target: String,
    pub ablation: Ablation,
    pub fraction: f64,
    pub train_size: usize,
    pub best_lr: f64,
    pub rows: Vec<ReportRow>,
    /// Seed means per evaluated split, e.g. `("target_test", scores)`.
    pub means: Vec<(String, F1Scores)>,
    pub graph: Option<TokenGraph>,
    /// Best-lr models, one per seed.
    pub models: Vec<(u64, GlenModel)>,
}

impl ExperimentReport {
    pub fn mean(&self, split: &str) -> Option<F1Scores> {
        self.means.iter().find(|(s, _)| s == split).map(|(_, m)| *m)
    }
}

pub fn experiment_id(source: &str, target: &str, ablation: Ablation, fraction: f64) -> String {
    format!("{source}->{target}/{ablation}/{fraction}")
}

/// Subsample, build the ablation's token graph, grid-search the lr and
/// evaluate the best-lr models of every seed on the test splits.
pub fn run_experiment(
    data: &ExperimentData,
    ablation: Ablation,
    fraction: f64,
    config: &TrainConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let instances = subsample_train(&data.instances, fraction, config.base_seed)?;
    let pick = |domain, split| -> Vec<Instance> {
        instances
            .iter()
            .filter(|i| i.domain == domain && i.split == split)
            .cloned()
            .collect()
    };
    let train_set = pick(Domain::Source, Split::Train);
    let val_set = pick(Domain::Source, Split::Val);
    let model_config = ModelConfig {
        ablation,
        ..data.model.clone()
    };
    let graph = match ablation.scope() {
        Some(scope) => Some(build_scoped_graph(&instances, data.n_tokens, model_config.window, scope)?),
        None => None,
    };
    let inputs = ModelInputs {
        embeddings: &data.embeddings,
        graph: graph.as_ref(),
    };
    let experiment = experiment_id(&data.source_name, &data.target_name, ablation, fraction);
    log::info!("{experiment}: {} training instances", train_set.len());
    let grid = grid_search(&model_config, &inputs, &train_set, &val_set, config)?;

    let row = |lr: f64, seed: u64, epoch: usize, split: &str, s: F1Scores| ReportRow {
        experiment: experiment.clone(),
        source: data.source_name.clone(),
        target: data.target_name.clone(),
        ablation,
        fraction,
        lr,
        seed,
        epoch,
        split: split.to_string(),
        weighted_f1: s.weighted,
        micro_f1: s.micro,
        macro_f1: s.macro_,
    };
    let mut rows: Vec<ReportRow> = grid
        .cells
        .iter()
        .map(|c| row(c.lr, c.seed, c.best_epoch, "val", c.best_val))
        .collect();

    let eval_splits = [
        ("target_test", pick(Domain::Target, Split::Test)),
        ("source_test", pick(Domain::Source, Split::Test)),
    ];
    let mut means = Vec::new();
    let best: Vec<&TrainOutcome> = grid.best_cells().collect();
    means.push(("val".to_string(), F1Scores::mean(&best.iter().map(|c| c.best_val).collect::<Vec<_>>())));
    for (name, set) in &eval_splits {
        if set.is_empty() {
            continue;
        }
        let mut scores = Vec::new();
        for cell in &best {
            let s = evaluate(&cell.model, &inputs, set)?;
            rows.push(row(cell.lr, cell.seed, cell.best_epoch, name, s));
            scores.push(s);
        }
        means.push((name.to_string(), F1Scores::mean(&scores)));
    }
    Ok(ExperimentReport {
        experiment,
        source: data.source_name.clone(),
        target: data.target_name.clone(),
        ablation,
        fraction,
        train_size: train_set.len(),
        best_lr: grid.best_lr,
        rows,
        means,
        models: best.iter().map(|c| (c.seed, c.model.clone())).collect(),
        graph,
    })
}

/// Every ablation crossed with every fraction, in that nesting order.
pub fn run_sweep(
    data: &ExperimentData,
    ablations: &[Ablation],
    fractions: &[f64],
    config: &TrainConfig,
) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    for &ablation in ablations {
        for &fraction in fractions {
            let cfg = TrainConfig {
                fraction,
                ..config.clone()
            };
            out.push(run_experiment(data, ablation, fraction, &cfg)?);
        }
    }
    Ok(out)
}

pub fn report_jsonl(reports: &[ExperimentReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        for row in &r.rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Plain-text table of seed-mean scores (percent), one row per experiment:
/// target-test weighted, micro and macro F1, then source-test weighted F1.
pub fn summary_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<7} {:>8} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "pair", "model", "fraction", "train", "lr", "weighted", "micro", "macro", "source"
    );
    let pct = |m: Option<F1Scores>, f: fn(&F1Scores) -> f64| m.map_or_else(|| "-".to_string(), |m| format!("{:.2}", 100.0 * f(&m)));
    for r in reports {
        let target = r.mean("target_test");
        let _ = writeln!(
            out,
            "{:<28} {:<7} {:>8} {:>6} {:>8.0e} {:>8} {:>8} {:>8} {:>8}",
            format!("{}->{}", r.source, r.target),
            r.ablation.as_str(),
            r.fraction,
            r.train_size,
            r.best_lr,
            pct(target, |m| m.weighted),
            pct(target, |m| m.micro),
            pct(target, |m| m.macro_),
            pct(r.mean("source_test"), |m| m.weighted),
        );
    }
    out
}
