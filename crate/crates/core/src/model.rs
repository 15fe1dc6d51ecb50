//! The full network: global GCN rows and local GAT rows concatenated per
//! position, a stacked BiLSTM over the sequence, and an affine classifier on
//! the final forward and backward states.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamState, Tape, Tensor, Var};
use crate::corpus::{EmbeddingTable, Instance};
use crate::error::{GlenError, Result};
use crate::global_graph::{gcn_embed, gcn_forward, GcnActivations, GcnParams, GcnVars, GraphScope, TokenGraph};
use crate::instance_graph::{build_instance_graph, gat_forward, GatParams, GatVars, InstanceGraph};

const CHECKPOINT_HEADER: &str = "GLEN-CHECKPOINT v1";

/// Which token graph feeds the global half, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "LEN")]
    Len,
    #[serde(rename = "S-GLEN")]
    SGlen,
    #[serde(rename = "T-GLEN")]
    TGlen,
    #[serde(rename = "GLEN")]
    Glen,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Len, Ablation::SGlen, Ablation::TGlen, Ablation::Glen];

    /// Graph scope of the global half; `None` for LEN.
    pub fn scope(self) -> Option<GraphScope> {
        match self {
            Ablation::Len => None,
            Ablation::SGlen => Some(GraphScope::SourceOnly),
            Ablation::TGlen => Some(GraphScope::SourceLabeledTargetUnlabeled),
            Ablation::Glen => Some(GraphScope::All),
        }
    }

    pub fn uses_global(self) -> bool {
        self != Ablation::Len
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Len => "LEN",
            Ablation::SGlen => "S-GLEN",
            Ablation::TGlen => "T-GLEN",
            Ablation::Glen => "GLEN",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "len" => Ok(Ablation::Len),
            "s-glen" => Ok(Ablation::SGlen),
            "t-glen" => Ok(Ablation::TGlen),
            "glen" => Ok(Ablation::Glen),
            _ => Err(GlenError::Config(format!("unknown ablation `{s}` (len, s-glen, t-glen, glen)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Single-label: softmax cross-entropy, argmax prediction.
    SoftmaxCe,
    /// Multi-label: per-label binary cross-entropy, thresholded sigmoid.
    PerLabelBce,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::SoftmaxCe => "softmax_ce",
            LossMode::PerLabelBce => "per_label_bce",
        })
    }
}

impl FromStr for LossMode {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_ce" | "softmax" => Ok(LossMode::SoftmaxCe),
            "per_label_bce" | "bce" => Ok(LossMode::PerLabelBce),
            _ => Err(GlenError::Config(format!("unknown loss mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub classes: usize,
    /// Co-occurrence radius for both the token graph and instance graphs.
    pub window: usize,
    pub ablation: Ablation,
    pub loss: LossMode,
    pub lstm_layers: usize,
    /// Dropout between stacked LSTM layers, training only.
    pub lstm_dropout: f64,
    pub threshold: f64,
    pub gat_heads: usize,
    pub gat_between: Activation,
    pub gcn_activations: GcnActivations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 300,
            d_h: 100,
            classes: 4,
            window: 1,
            ablation: Ablation::Glen,
            loss: LossMode::SoftmaxCe,
            lstm_layers: 2,
            lstm_dropout: 0.2,
            threshold: 0.5,
            gat_heads: 2,
            gat_between: Activation::Identity,
            gcn_activations: GcnActivations::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(GlenError::Config(m.to_string()));
        if self.classes < 2 {
            return fail("classes must be at least 2");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.lstm_dropout) {
            return fail("lstm dropout must lie in [0, 1)");
        }
        if self.d_in == 0 || self.d_h == 0 || self.lstm_layers == 0 || self.gat_heads == 0 || self.window == 0 {
            return fail("dimensions, layer counts, heads and window must be positive");
        }
        Ok(())
    }

    /// Width of the per-position sequence fed to the BiLSTM.
    pub fn sequence_width(&self) -> usize {
        if self.ablation.uses_global() {
            2 * self.d_h
        } else {
            self.d_h
        }
    }
}

/// Weights of one LSTM direction; gate blocks ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    /// `input x 4h`
    pub w_ih: Tensor,
    /// `h x 4h`
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl LstmCell {
    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        LstmCell {
            w_ih: Tensor::glorot(input, 4 * hidden, rng),
            w_hh: Tensor::glorot(hidden, 4 * hidden, rng),
            b_ih: Tensor::zeros(&[4 * hidden]),
            b_hh: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }
}

/// `layers[l][0]` runs forward in time, `layers[l][1]` backward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<[LstmCell; 2]>,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let width = if l == 0 { input } else { 2 * hidden };
                [LstmCell::init(width, hidden, rng), LstmCell::init(width, hidden, rng)]
            })
            .collect();
        LstmParams { layers }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlenParams {
    /// Absent for LEN.
    pub gcn: Option<GcnParams>,
    pub gat: GatParams,
    pub lstm: LstmParams,
    /// `2h x classes`
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

impl GlenParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn = config.ablation.uses_global().then(|| GcnParams::init(config.d_in, config.d_h, &mut rng));
        let gat = GatParams::init(config.d_in, config.d_h, config.gat_heads, &mut rng);
        let lstm = LstmParams::init(config.sequence_width(), config.d_h, config.lstm_layers, &mut rng);
        GlenParams {
            gcn,
            gat,
            lstm,
            fc_w: Tensor::glorot(2 * config.d_h, config.classes, &mut rng),
            fc_b: Tensor::zeros(&[config.classes]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(g) = &self.gcn {
            out.extend(g.named());
        }
        out.extend(self.gat.named());
        for (l, pair) in self.lstm.layers.iter().enumerate() {
            for (dir, cell) in ["fwd", "bwd"].iter().zip(pair) {
                let p = format!("lstm.l{l}.{dir}");
                out.push((format!("{p}.w_ih"), &cell.w_ih));
                out.push((format!("{p}.w_hh"), &cell.w_hh));
                out.push((format!("{p}.b_ih"), &cell.b_ih));
                out.push((format!("{p}.b_hh"), &cell.b_hh));
            }
        }
        out.push(("fc.w".into(), &self.fc_w));
        out.push(("fc.b".into(), &self.fc_b));
        out
    }

    /// Same names and order as [`GlenParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(g) = &mut self.gcn {
            out.extend(g.named_mut());
        }
        out.extend(self.gat.named_mut());
        for (l, pair) in self.lstm.layers.iter_mut().enumerate() {
            for (dir, cell) in ["fwd", "bwd"].iter().zip(pair) {
                let p = format!("lstm.l{l}.{dir}");
                out.push((format!("{p}.w_ih"), &mut cell.w_ih));
                out.push((format!("{p}.w_hh"), &mut cell.w_hh));
                out.push((format!("{p}.b_ih"), &mut cell.b_ih));
                out.push((format!("{p}.b_hh"), &mut cell.b_hh));
            }
        }
        out.push(("fc.w".into(), &mut self.fc_w));
        out.push(("fc.b".into(), &mut self.fc_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Binds every parameter; leaves when `trainable`, constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GlenVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        let gcn = self.gcn.as_ref().map(|g| GcnVars {
            w0: put(&g.w0),
            w1: put(&g.w1),
        });
        let mut gat_tape_vars = |p: &crate::instance_graph::GatLayerParams| crate::instance_graph::GatLayerVars {
            w: put(&p.w),
            attn: p.attn.iter().map(&mut put).collect(),
            d_out: p.d_out(),
        };
        let gat = GatVars {
            layer1: gat_tape_vars(&self.gat.layer1),
            layer2: gat_tape_vars(&self.gat.layer2),
        };
        let lstm = self
            .lstm
            .layers
            .iter()
            .map(|pair| {
                pair.clone().map(|c| LstmVars {
                    w_ih: put(&c.w_ih),
                    w_hh: put(&c.w_hh),
                    b_ih: put(&c.b_ih),
                    b_hh: put(&c.b_hh),
                    hidden: c.hidden(),
                })
            })
            .collect();
        GlenVars {
            gcn,
            gat,
            lstm,
            fc_w: put(&self.fc_w),
            fc_b: put(&self.fc_b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct GlenVars {
    pub gcn: Option<GcnVars>,
    pub gat: GatVars,
    pub lstm: Vec<[LstmVars; 2]>,
    pub fc_w: Var,
    pub fc_b: Var,
}

impl GlenVars {
    /// Same order as [`GlenParams::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(g) = &self.gcn {
            out.extend(g.all());
        }
        out.extend(self.gat.all());
        for pair in &self.lstm {
            for c in pair {
                out.extend([c.w_ih, c.w_hh, c.b_ih, c.b_hh]);
            }
        }
        out.extend([self.fc_w, self.fc_b]);
        out
    }
}

/// Fixed inputs shared by every forward pass of a run.
#[derive(Clone, Copy, Debug)]
pub struct ModelInputs<'a> {
    pub embeddings: &'a EmbeddingTable,
    /// Required unless the ablation is LEN.
    pub graph: Option<&'a TokenGraph>,
}

/// Per-position `[local || global]` rows. `global` holds one row per
/// instance token, already gathered from the GCN output.
pub fn combine(
    tape: &mut Tape,
    graph: &InstanceGraph,
    local: Var,
    global: Option<Var>,
    len: usize,
) -> Result<Var> {
    if graph.positions().len() != len {
        return Err(GlenError::Invalid(format!(
            "position map covers {} of {len} positions",
            graph.positions().len()
        )));
    }
    let local = tape.gather_rows(local, graph.positions())?;
    match global {
        Some(g) => tape.concat_cols(&[local, g]),
        None => Ok(local),
    }
}

fn lstm_direction(tape: &mut Tape, input: Var, cell: &LstmVars, reverse: bool) -> Result<(Var, Var)> {
    let h = cell.hidden;
    let proj = tape.matmul(input, cell.w_ih)?;
    let proj = tape.add_bias(proj, cell.b_ih)?;
    let proj = tape.add_bias(proj, cell.b_hh)?;
    let steps = tape.value(input).rows();
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    let mut outputs = vec![None; steps];
    let mut state: Option<(Var, Var)> = None;
    for &t in &order {
        let x_t = tape.slice_rows(proj, t, 1)?;
        let gates = match state {
            Some((h_prev, _)) => {
                let rec = tape.matmul(h_prev, cell.w_hh)?;
                tape.add(x_t, rec)?
            }
            None => x_t,
        };
        let i = tape.slice_cols(gates, 0, h)?;
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h, h)?;
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h_t = tape.mul(o, tc)?;
        outputs[t] = Some(h_t);
        state = Some((h_t, c));
    }
    let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
    let seq = tape.concat_rows(&outputs)?;
    Ok((seq, state.expect("nonempty sequence").0))
}

/// Stacked BiLSTM then the affine map; returns `1 x classes` logits.
pub fn bilstm_classify<R: Rng + ?Sized>(
    tape: &mut Tape,
    seq: Var,
    lstm: &[[LstmVars; 2]],
    fc_w: Var,
    fc_b: Var,
    dropout: Option<(f64, &mut R)>,
) -> Result<Var> {
    if tape.value(seq).rows() == 0 {
        return Err(GlenError::Invalid("empty sequence".into()));
    }
    let mut dropout = dropout;
    let mut input = seq;
    let mut last = None;
    for (l, pair) in lstm.iter().enumerate() {
        if l > 0 {
            if let Some((p, rng)) = dropout.as_mut() {
                input = tape.dropout(input, *p, *rng)?;
            }
        }
        let (fwd_seq, fwd_last) = lstm_direction(tape, input, &pair[0], false)?;
        let (bwd_seq, bwd_last) = lstm_direction(tape, input, &pair[1], true)?;
        input = tape.concat_cols(&[fwd_seq, bwd_seq])?;
        last = Some((fwd_last, bwd_last));
    }
    let (f, b) = last.ok_or_else(|| GlenError::Config("no LSTM layers".into()))?;
    let rep = tape.concat_cols(&[f, b])?;
    let logits = tape.matmul(rep, fc_w)?;
    tape.add_bias(logits, fc_b)
}

/// Label vector from one row of logits; argmax ties go to the lowest index.
pub fn predict(logits: &[f64], config: &ModelConfig) -> Vec<u8> {
    match config.loss {
        LossMode::PerLabelBce => {
            // sigmoid(z) >= t  <=>  z >= logit(t)
            let cut = (config.threshold / (1.0 - config.threshold)).ln();
            logits.iter().map(|&z| u8::from(z >= cut)).collect()
        }
        LossMode::SoftmaxCe => {
            let mut best = 0;
            for (j, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = j;
                }
            }
            let mut out = vec![0; logits.len()];
            if !logits.is_empty() {
                out[best] = 1;
            }
            out
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    vocab_digest: String,
    params: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlenModel {
    config: ModelConfig,
    params: GlenParams,
}

impl GlenModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = GlenParams::init(&config, seed);
        Ok(GlenModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: GlenParams) -> Result<Self> {
        config.validate()?;
        Ok(GlenModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &GlenParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GlenParams {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    fn check_inputs(&self, inputs: &ModelInputs) -> Result<()> {
        if inputs.embeddings.dim() != self.config.d_in {
            return Err(GlenError::Config(format!(
                "embedding dimension {} but model expects {}",
                inputs.embeddings.dim(),
                self.config.d_in
            )));
        }
        if self.config.ablation.uses_global() {
            let graph = inputs
                .graph
                .ok_or_else(|| GlenError::Config(format!("{} needs a token graph", self.config.ablation)))?;
            if Some(graph.scope()) != self.config.ablation.scope() {
                return Err(GlenError::Config(format!(
                    "{} needs a {:?} graph, got {}",
                    self.config.ablation,
                    self.config.ablation.scope().map(|s| s.as_str()),
                    graph.scope()
                )));
            }
            if graph.n_nodes() != inputs.embeddings.matrix().rows() {
                return Err(GlenError::Config(format!(
                    "graph has {} nodes but the embedding table {} rows",
                    graph.n_nodes(),
                    inputs.embeddings.matrix().rows()
                )));
            }
        }
        Ok(())
    }

    /// GCN output over the whole vocabulary, or `None` for LEN.
    pub fn global_forward(&self, tape: &mut Tape, vars: &GlenVars, inputs: &ModelInputs) -> Result<Option<Var>> {
        if !self.config.ablation.uses_global() {
            return Ok(None);
        }
        self.check_inputs(inputs)?;
        let graph = inputs.graph.expect("checked");
        let gcn = vars
            .gcn
            .as_ref()
            .ok_or_else(|| GlenError::Config("GCN parameters missing".into()))?;
        let x = tape.constant(inputs.embeddings.matrix().clone());
        Ok(Some(gcn_forward(tape, graph, x, gcn, self.config.gcn_activations)?))
    }

    /// `batch x classes` logits. `global` comes from [`GlenModel::global_forward`].
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        vars: &GlenVars,
        inputs: &ModelInputs,
        global: Option<Var>,
        batch: &[&Instance],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_inputs(inputs)?;
        if batch.is_empty() {
            return Err(GlenError::Invalid("empty batch".into()));
        }
        let emb = inputs.embeddings.matrix();
        // Gather every global row of the batch at once; each instance slices its span.
        let global_rows = match global {
            Some(g) => {
                let ids: Vec<usize> = batch.iter().flat_map(|i| i.tokens.iter().copied()).collect();
                Some(tape.gather_rows(g, &ids)?)
            }
            None => None,
        };
        let mut offset = 0;
        let mut rows = Vec::with_capacity(batch.len());
        for inst in batch {
            let graph = build_instance_graph(&inst.tokens, self.config.window)?;
            let h0 = Tensor::matrix(
                graph.n_nodes(),
                emb.cols(),
                graph.nodes().iter().flat_map(|&t| emb.row(t).iter().copied()).collect(),
            )?;
            let h0 = tape.constant(h0);
            let local = gat_forward(tape, &graph, h0, &vars.gat, self.config.gat_between)?;
            let g = match global_rows {
                Some(all) => Some(tape.slice_rows(all, offset, inst.tokens.len())?),
                None => None,
            };
            offset += inst.tokens.len();
            let seq = combine(tape, &graph, local, g, inst.tokens.len())?;
            let dropout = dropout_rng.as_deref_mut().map(|r| (self.config.lstm_dropout, r));
            rows.push(bilstm_classify(tape, seq, &vars.lstm, vars.fc_w, vars.fc_b, dropout)?);
        }
        tape.concat_rows(&rows)
    }

    pub fn loss(&self, tape: &mut Tape, logits: Var, batch: &[&Instance]) -> Result<Var> {
        let labels = batch
            .iter()
            .map(|i| {
                i.labels
                    .as_ref()
                    .ok_or_else(|| GlenError::Invalid(format!("instance {} has no labels", i.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        match self.config.loss {
            LossMode::SoftmaxCe => {
                let targets = batch
                    .iter()
                    .map(|i| {
                        i.class_index().ok_or_else(|| {
                            GlenError::Invalid(format!("instance {} is not single-label", i.id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                tape.softmax_cross_entropy(logits, &targets)
            }
            LossMode::PerLabelBce => {
                let targets: Vec<f64> = labels.iter().flat_map(|l| l.iter().map(|&v| f64::from(v))).collect();
                tape.bce_with_logits(logits, &targets)
            }
        }
    }

    /// Records the whole training graph for one batch on `tape`.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        batch: &[&Instance],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(GlenVars, Var, Var)> {
        let vars = self.params.bind(tape, true);
        let global = self.global_forward(tape, &vars, inputs)?;
        let logits = self.forward_batch(tape, &vars, inputs, global, batch, dropout_rng)?;
        let loss = self.loss(tape, logits, batch)?;
        Ok((vars, logits, loss))
    }

    /// One Adam step on `batch`; returns the loss before the update.
    pub fn train_step(
        &mut self,
        adam: &mut AdamState,
        inputs: &ModelInputs,
        batch: &[&Instance],
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let (vars, _, loss) = self.forward_loss(&mut tape, inputs, batch, Some(dropout_rng))?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(GlenError::Diverged(format!("loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars.all().into_iter().map(|v| grads.wrt(v)).collect();
        adam.step(self.params.named_mut(), &grads)?;
        Ok(value)
    }

    /// Inference logits, one row per instance, without dropout.
    pub fn logits(&self, inputs: &ModelInputs, instances: &[Instance]) -> Result<Tensor> {
        const CHUNK: usize = 128;
        self.check_inputs(inputs)?;
        let global = match (self.config.ablation.uses_global(), &self.params.gcn) {
            (true, Some(gcn)) => Some(gcn_embed(
                inputs.graph.expect("checked"),
                inputs.embeddings.matrix(),
                gcn,
                self.config.gcn_activations,
            )?),
            (true, None) => return Err(GlenError::Config("GCN parameters missing".into())),
            (false, _) => None,
        };
        let mut values = Vec::with_capacity(instances.len() * self.config.classes);
        for chunk in instances.chunks(CHUNK) {
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape, false);
            let g = global.as_ref().map(|t| tape.constant(t.clone()));
            let batch: Vec<&Instance> = chunk.iter().collect();
            let out = self.forward_batch(&mut tape, &vars, inputs, g, &batch, None)?;
            values.extend_from_slice(tape.value(out).values());
        }
        Tensor::matrix(instances.len(), self.config.classes, values)
    }

    pub fn predict_all(&self, inputs: &ModelInputs, instances: &[Instance]) -> Result<Vec<Vec<u8>>> {
        let logits = self.logits(inputs, instances)?;
        Ok((0..instances.len()).map(|r| predict(logits.row(r), &self.config)).collect())
    }

    /// GCN output rows, or `None` for LEN.
    pub fn token_representations(&self, inputs: &ModelInputs) -> Result<Option<Tensor>> {
        self.check_inputs(inputs)?;
        match (&self.params.gcn, inputs.graph) {
            (Some(gcn), Some(graph)) if self.config.ablation.uses_global() => Ok(Some(gcn_embed(
                graph,
                inputs.embeddings.matrix(),
                gcn,
                self.config.gcn_activations,
            )?)),
            _ => Ok(None),
        }
    }

    pub fn to_checkpoint(&self, vocab_digest: &str) -> Result<String> {
        let ck = Checkpoint {
            config: self.config.clone(),
            vocab_digest: vocab_digest.to_string(),
            params: self.params.named().into_iter().map(|(k, t)| (k, t.clone())).collect(),
        };
        Ok(format!("{CHECKPOINT_HEADER}\n{}\n", serde_json::to_string(&ck)?))
    }

    /// Returns the model and the vocabulary digest it was trained against.
    pub fn from_checkpoint(text: &str) -> Result<(Self, String)> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        if header.trim() != CHECKPOINT_HEADER {
            return Err(GlenError::Invalid(format!("not a checkpoint (header `{header}`)")));
        }
        let mut ck: Checkpoint = serde_json::from_str(body)?;
        let mut model = GlenModel::new(ck.config, 0)?;
        for (name, slot) in model.params.named_mut() {
            let t = ck
                .params
                .remove(&name)
                .ok_or_else(|| GlenError::Invalid(format!("checkpoint lacks `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(GlenError::shape("checkpoint", slot.shape(), t.shape()));
            }
            *slot = t;
        }
        if let Some(extra) = ck.params.keys().next() {
            return Err(GlenError::Invalid(format!("unexpected checkpoint entry `{extra}`")));
        }
        Ok((model, ck.vocab_digest))
    }

    pub fn save(&self, path: &Path, vocab_digest: &str) -> Result<()> {
        crate::io::write_atomic(path, self.to_checkpoint(vocab_digest)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| GlenError::io(path, e))?;
        GlenModel::from_checkpoint(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, Split};

    fn small_config(ablation: Ablation) -> ModelConfig {
        ModelConfig {
            d_in: 6,
            d_h: 4,
            classes: 3,
            ablation,
            ..ModelConfig::default()
        }
    }

    fn instance(tokens: Vec<usize>, class: usize) -> Instance {
        let mut labels = vec![0; 3];
        labels[class] = 1;
        Instance {
            id: format!("{tokens:?}"),
            tokens,
            labels: Some(labels),
            domain: Domain::Source,
            split: Split::Train,
        }
    }

    fn fixture(ablation: Ablation) -> (GlenModel, EmbeddingTable, TokenGraph, Vec<Instance>) {
        let insts = vec![instance(vec![1, 2, 3], 0), instance(vec![3, 4, 1, 4], 2), instance(vec![5], 1)];
        let scope = ablation.scope().unwrap_or(GraphScope::All);
        let graph = crate::global_graph::build_scoped_graph(&insts, 6, 1, scope).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = EmbeddingTable::from_matrix(Tensor::uniform(&[6, 6], 0.5, &mut rng));
        (GlenModel::new(small_config(ablation), 11).unwrap(), emb, graph, insts)
    }

    #[test]
    fn default_parameter_count() {
        let model = GlenModel::new(ModelConfig::default(), 0).unwrap();
        let gcn = 300 * 100 + 100 * 100;
        let gat = 300 * 200 + 2 * 200 + 200 * 100 + 200;
        let lstm_cell = |input: usize| input * 400 + 100 * 400 + 2 * 400;
        let lstm = 2 * lstm_cell(200) + 2 * lstm_cell(200);
        let fc = 200 * 4 + 4;
        assert_eq!(model.param_count(), gcn + gat + lstm + fc);
    }

    #[test]
    fn len_has_narrow_sequence_and_no_gcn() {
        let model = GlenModel::new(ModelConfig { ablation: Ablation::Len, ..ModelConfig::default() }, 0).unwrap();
        assert!(model.params().gcn.is_none());
        assert_eq!(model.params().lstm.layers[0][0].w_ih.shape(), &[100, 400]);
    }

    #[test]
    fn predict_rules() {
        let bce = ModelConfig { loss: LossMode::PerLabelBce, ..ModelConfig::default() };
        assert_eq!(predict(&[2.0, -2.0], &bce), vec![1, 0]);
        assert_eq!(predict(&[0.0, -1e-12], &bce), vec![1, 0]);
        let ce = ModelConfig::default();
        assert_eq!(predict(&[0.3, 0.3, 0.3, 0.3], &ce), vec![1, 0, 0, 0]);
        assert_eq!(predict(&[0.0, 5.0, 5.0, 1.0], &ce), vec![0, 1, 0, 0]);
    }

    #[test]
    fn zero_sequence_zero_weights_gives_bias() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell {
            w_ih: Tensor::zeros(&[4, 8]),
            w_hh: Tensor::zeros(&[2, 8]),
            b_ih: Tensor::zeros(&[8]),
            b_hh: Tensor::zeros(&[8]),
        };
        let params = LstmParams { layers: vec![[cell.clone(), cell]] };
        let bind = |tape: &mut Tape, c: &LstmCell| LstmVars {
            w_ih: tape.constant(c.w_ih.clone()),
            w_hh: tape.constant(c.w_hh.clone()),
            b_ih: tape.constant(c.b_ih.clone()),
            b_hh: tape.constant(c.b_hh.clone()),
            hidden: 2,
        };
        let lstm = vec![[bind(&mut tape, &params.layers[0][0]), bind(&mut tape, &params.layers[0][1])]];
        let seq = tape.constant(Tensor::zeros(&[3, 4]));
        let fc_w = tape.constant(Tensor::zeros(&[4, 3]));
        let fc_b = tape.constant(Tensor::from_rows(&[vec![0.1, -0.2, 0.3]]));
        let out = bilstm_classify(&mut tape, seq, &lstm, fc_w, fc_b, Some((0.5, &mut rng))).unwrap();
        assert_eq!(tape.value(out).values(), &[0.1, -0.2, 0.3]);
    }

    #[test]
    fn len_ignores_gcn_params() {
        let (mut model, emb, _, insts) = fixture(Ablation::Len);
        let inputs = ModelInputs { embeddings: &emb, graph: None };
        let before = model.logits(&inputs, &insts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        model.params_mut().gcn = Some(GcnParams::init(6, 4, &mut rng));
        assert_eq!(model.logits(&inputs, &insts).unwrap(), before);
    }

    #[test]
    fn loss_decreases_over_five_steps() {
        let (mut model, emb, graph, insts) = fixture(Ablation::Glen);
        let inputs = ModelInputs { embeddings: &emb, graph: Some(&graph) };
        let batch: Vec<&Instance> = insts.iter().collect();
        let mut adam = AdamState::new(crate::autodiff::AdamConfig::with_lr(1e-2), model.params().named().into_iter().map(|(_, t)| t));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        model.config.lstm_dropout = 0.0;
        let losses: Vec<f64> = (0..6).map(|_| model.train_step(&mut adam, &inputs, &batch, &mut rng).unwrap()).collect();
        assert!(losses[5] < losses[0], "{losses:?}");
    }

    #[test]
    fn gradient_reaches_gcn() {
        let (model, emb, graph, insts) = fixture(Ablation::Glen);
        let inputs = ModelInputs { embeddings: &emb, graph: Some(&graph) };
        let batch: Vec<&Instance> = insts.iter().collect();
        let mut tape = Tape::new();
        let (vars, _, loss) = model.forward_loss(&mut tape, &inputs, &batch, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(vars.gcn.unwrap().w0);
        assert!(g.values().iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn unlabeled_instance_rejected() {
        let (model, emb, graph, mut insts) = fixture(Ablation::Glen);
        insts[0].labels = None;
        let inputs = ModelInputs { embeddings: &emb, graph: Some(&graph) };
        let batch: Vec<&Instance> = insts.iter().collect();
        let mut tape = Tape::new();
        assert!(model.forward_loss(&mut tape, &inputs, &batch, None).is_err());
    }

    #[test]
    fn wrong_scope_rejected() {
        let (model, emb, _, insts) = fixture(Ablation::Glen);
        let other = crate::global_graph::build_scoped_graph(&insts, 6, 1, GraphScope::SourceOnly).unwrap();
        let inputs = ModelInputs { embeddings: &emb, graph: Some(&other) };
        assert!(model.logits(&inputs, &insts).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (model, emb, graph, insts) = fixture(Ablation::TGlen);
        let text = model.to_checkpoint("abc").unwrap();
        let (back, digest) = GlenModel::from_checkpoint(&text).unwrap();
        assert_eq!(digest, "abc");
        assert_eq!(back, model);
        let graph = crate::global_graph::build_scoped_graph(&insts, 6, 1, graph.scope()).unwrap();
        let inputs = ModelInputs { embeddings: &emb, graph: Some(&graph) };
        assert_eq!(back.logits(&inputs, &insts).unwrap(), model.logits(&inputs, &insts).unwrap());
        assert!(GlenModel::from_checkpoint("nope\n{}").is_err());
    }

    #[test]
    fn deterministic_construction() {
        let a = GlenModel::new(ModelConfig::default(), 5).unwrap();
        let b = GlenModel::new(ModelConfig::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_names() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!("s_glen".parse::<Ablation>().unwrap(), Ablation::SGlen);
        assert!("x".parse::<Ablation>().is_err());
    }
}
