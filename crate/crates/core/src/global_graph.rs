//! Cross-domain token co-occurrence graph and the GCN that runs over it.
//!
//! Edge weights average, over the two domains, the pair count normalized by
//! the summed occurrence counts of both tokens:
//!
//! ```text
//! rho(t, u) = 1/2 * ( n_S(t,u) / (n_S(t) + n_S(u)) + n_T(t,u) / (n_T(t) + n_T(u)) )
//! ```
//!
//! A term whose denominator is zero contributes 0. The GCN propagates over the
//! symmetrically normalized adjacency `D^-1/2 (A + I) D^-1/2`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, SparseMatrix, Tape, Tensor, Var};
use crate::corpus::{Domain, Instance, Split};
use crate::error::{GlenError, Result};

/// Which instances feed the global graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphScope {
    /// Labeled and unlabeled source posts.
    SourceOnly,
    /// Labeled source posts and unlabeled target posts.
    SourceLabeledTargetUnlabeled,
    /// Labeled source, unlabeled source and unlabeled target posts.
    All,
}

impl GraphScope {
    pub fn includes(self, inst: &Instance) -> bool {
        match (inst.domain, inst.split) {
            (Domain::Source, Split::Train) => true,
            (Domain::Source, Split::Unlabeled) => self != GraphScope::SourceLabeledTargetUnlabeled,
            (Domain::Target, Split::Unlabeled) => self != GraphScope::SourceOnly,
            _ => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GraphScope::SourceOnly => "S_only",
            GraphScope::SourceLabeledTargetUnlabeled => "SL_plus_TU",
            GraphScope::All => "all",
        }
    }
}

impl fmt::Display for GraphScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphScope {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S_only" => Ok(GraphScope::SourceOnly),
            "SL_plus_TU" => Ok(GraphScope::SourceLabeledTargetUnlabeled),
            "all" => Ok(GraphScope::All),
            other => Err(GlenError::Config(format!("unknown graph scope `{other}`"))),
        }
    }
}

fn domain_slot(d: Domain) -> usize {
    match d {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

/// Per-domain token occurrences and windowed pair counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceCounts {
    radius: usize,
    occurrences: [Vec<u64>; 2],
    /// Keyed by `(min id, max id)`.
    pairs: [BTreeMap<(usize, usize), u64>; 2],
}

impl CooccurrenceCounts {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn n_tokens(&self) -> usize {
        self.occurrences[0].len()
    }

    pub fn occurrences(&self, token: usize, domain: Domain) -> u64 {
        self.occurrences[domain_slot(domain)][token]
    }

    /// Symmetric in its arguments.
    pub fn pair(&self, a: usize, b: usize, domain: Domain) -> u64 {
        let key = (a.min(b), a.max(b));
        self.pairs[domain_slot(domain)].get(&key).copied().unwrap_or(0)
    }

    /// Unordered pairs with a nonzero count in either domain.
    pub fn pair_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut keys: Vec<(usize, usize)> = self.pairs[0].keys().chain(self.pairs[1].keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
    }
}

/// Counts every unordered pair of positions at distance `1..=radius` in each
/// instance, under the instance's domain.
pub fn count_cooccurrences<'a>(
    instances: impl IntoIterator<Item = &'a Instance>,
    n_tokens: usize,
    radius: usize,
) -> Result<CooccurrenceCounts> {
    if radius == 0 {
        return Err(GlenError::Config("co-occurrence radius must be at least 1".into()));
    }
    let mut counts = CooccurrenceCounts {
        radius,
        occurrences: [vec![0; n_tokens], vec![0; n_tokens]],
        pairs: [BTreeMap::new(), BTreeMap::new()],
    };
    for inst in instances {
        let slot = domain_slot(inst.domain);
        for (i, &t) in inst.tokens.iter().enumerate() {
            if t >= n_tokens {
                return Err(GlenError::Invalid(format!("token id {t} outside vocabulary of {n_tokens}")));
            }
            counts.occurrences[slot][t] += 1;
            for &u in inst.tokens.iter().skip(i + 1).take(radius) {
                *counts.pairs[slot].entry((t.min(u), t.max(u))).or_insert(0) += 1;
            }
        }
    }
    Ok(counts)
}

/// Edge weight between two distinct tokens; 0 means no edge.
///
/// The two domain terms are summed as one integer fraction so the result is
/// the correctly rounded value of the exact rational.
pub fn edge_weight(t: usize, u: usize, counts: &CooccurrenceCounts) -> f64 {
    let term = |d: Domain| {
        let denom = counts.occurrences(t, d) + counts.occurrences(u, d);
        (counts.pair(t, u, d) as u128, denom as u128)
    };
    let (ns, ds) = term(Domain::Source);
    let (nt, dt) = term(Domain::Target);
    let (num, den) = match (ds, dt) {
        (0, 0) => return 0.0,
        (0, _) => (nt, 2 * dt),
        (_, 0) => (ns, 2 * ds),
        _ => (ns * dt + nt * ds, 2 * ds * dt),
    };
    num as f64 / den as f64
}

/// `D^-1/2 (A + I) D^-1/2` with unit self-loops and weighted degrees.
pub fn normalize_adjacency(adjacency: &SparseMatrix) -> SparseMatrix {
    let n = adjacency.n_rows();
    let degree: Vec<f64> = (0..n).map(|r| 1.0 + adjacency.row(r).map(|(_, w)| w).sum::<f64>()).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(adjacency.nnz() + n);
    for r in 0..n {
        triplets.push((r, r, inv_sqrt[r] * inv_sqrt[r]));
        for (c, w) in adjacency.row(r) {
            triplets.push((r, c, inv_sqrt[r] * w * inv_sqrt[c]));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets).expect("indices within n")
}

/// Weighted symmetric token graph with its cached normalized adjacency.
#[derive(Clone, Debug)]
pub struct TokenGraph {
    scope: GraphScope,
    radius: usize,
    adjacency: SparseMatrix,
    normalized: Arc<SparseMatrix>,
}

impl TokenGraph {
    pub fn from_adjacency(adjacency: SparseMatrix, scope: GraphScope, radius: usize) -> Self {
        let normalized = Arc::new(normalize_adjacency(&adjacency));
        TokenGraph {
            scope,
            radius,
            adjacency,
            normalized,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.n_rows()
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn scope(&self) -> GraphScope {
        self.scope
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn normalized(&self) -> &Arc<SparseMatrix> {
        &self.normalized
    }

    pub fn weight(&self, t: usize, u: usize) -> f64 {
        self.adjacency.get(t, u)
    }

    /// `(t, u, rho)` with `t < u`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_nodes()).flat_map(move |r| self.adjacency.row(r).filter(move |(c, _)| *c > r).map(move |(c, w)| (r, c, w)))
    }

    pub fn weight_range(&self) -> Option<(f64, f64)> {
        let ws = self.adjacency.values();
        if ws.is_empty() {
            return None;
        }
        Some(ws.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w))))
    }

    /// Text export: header `|V| |E| scope radius`, then `t u rho` per edge.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {} {}\n", self.n_nodes(), self.n_edges(), self.scope, self.radius);
        for (t, u, w) in self.edges() {
            out.push_str(&format!("{t} {u} {w:.9e}\n"));
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| GlenError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [n, e, scope, radius] = fields[..] else {
            return Err(bad(1, format!("expected `|V| |E| scope radius`, got `{header}`")));
        };
        let n: usize = n.parse().map_err(|_| bad(1, format!("bad node count `{n}`")))?;
        let e: usize = e.parse().map_err(|_| bad(1, format!("bad edge count `{e}`")))?;
        let scope: GraphScope = scope.parse().map_err(|err: GlenError| bad(1, err.to_string()))?;
        let radius: usize = radius.parse().map_err(|_| bad(1, format!("bad radius `{radius}`")))?;
        let mut triplets = Vec::with_capacity(2 * e);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f[..] {
                [t, u, w] => t.parse::<usize>().ok().zip(u.parse::<usize>().ok()).zip(w.parse::<f64>().ok()),
                _ => None,
            };
            let ((t, u), w) = parsed.ok_or_else(|| bad(i + 1, format!("expected `t u rho`, got `{line}`")))?;
            if t >= n || u >= n || t == u || !(w > 0.0 && w.is_finite()) {
                return Err(bad(i + 1, format!("invalid edge `{line}`")));
            }
            triplets.push((t, u, w));
            triplets.push((u, t, w));
        }
        if triplets.len() != 2 * e {
            return Err(bad(1, format!("header declares {e} edges, found {}", triplets.len() / 2)));
        }
        let adjacency = SparseMatrix::from_triplets(n, n, triplets)?;
        Ok(TokenGraph::from_adjacency(adjacency, scope, radius))
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GlenError::io(path, e))?;
        TokenGraph::from_text(&text, path)
    }
}

/// Graph over `n_nodes` ids with an edge for every pair of positive weight.
pub fn build_token_graph(counts: &CooccurrenceCounts, scope: GraphScope) -> TokenGraph {
    let n = counts.n_tokens();
    let mut triplets = Vec::new();
    for (t, u) in counts.pair_keys() {
        if t == u {
            continue;
        }
        let w = edge_weight(t, u, counts);
        if w > 0.0 {
            triplets.push((t, u, w));
            triplets.push((u, t, w));
        }
    }
    let adjacency = SparseMatrix::from_triplets(n, n, triplets).expect("ids within vocabulary");
    TokenGraph::from_adjacency(adjacency, scope, counts.radius())
}

/// Counts over the instances selected by `scope` and builds the graph.
pub fn build_scoped_graph(instances: &[Instance], n_tokens: usize, radius: usize, scope: GraphScope) -> Result<TokenGraph> {
    let counts = count_cooccurrences(instances.iter().filter(|i| scope.includes(i)), n_tokens, radius)?;
    Ok(build_token_graph(&counts, scope))
}

/// Weights of the two graph-convolution layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    /// `d_in x d_h`
    pub w0: Tensor,
    /// `d_h x d_h`
    pub w1: Tensor,
}

impl GcnParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, rng: &mut R) -> Self {
        GcnParams {
            w0: Tensor::glorot(d_in, d_h, rng),
            w1: Tensor::glorot(d_h, d_h, rng),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![("gcn.w0".into(), &self.w0), ("gcn.w1".into(), &self.w1)]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("gcn.w0".into(), &mut self.w0), ("gcn.w1".into(), &mut self.w1)]
    }

    pub fn bind(&self, tape: &mut Tape) -> GcnVars {
        GcnVars {
            w0: tape.leaf(self.w0.clone()),
            w1: tape.leaf(self.w1.clone()),
        }
    }

    pub fn bind_constant(&self, tape: &mut Tape) -> GcnVars {
        GcnVars {
            w0: tape.constant(self.w0.clone()),
            w1: tape.constant(self.w1.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GcnVars {
    pub w0: Var,
    pub w1: Var,
}

impl GcnVars {
    pub fn all(&self) -> Vec<Var> {
        vec![self.w0, self.w1]
    }
}

/// Activations applied after each graph convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnActivations {
    pub hidden: Activation,
    pub output: Activation,
}

impl Default for GcnActivations {
    fn default() -> Self {
        GcnActivations {
            hidden: Activation::Relu,
            output: Activation::Identity,
        }
    }
}

/// Two propagation steps: `H1 = act(N H0 W0)`, `H2 = act_out(N H1 W1)`.
pub fn gcn_forward(
    tape: &mut Tape,
    graph: &TokenGraph,
    features: Var,
    params: &GcnVars,
    activations: GcnActivations,
) -> Result<Var> {
    if tape.value(features).rows() != graph.n_nodes() {
        return Err(GlenError::shape(
            "gcn_forward",
            tape.value(features).shape(),
            &[graph.n_nodes()],
        ));
    }
    let n = graph.normalized();
    let agg0 = tape.spmm(n, features)?;
    let h1 = tape.matmul(agg0, params.w0)?;
    let h1 = activations.hidden.apply(tape, h1);
    let agg1 = tape.spmm(n, h1)?;
    let h2 = tape.matmul(agg1, params.w1)?;
    Ok(activations.output.apply(tape, h2))
}

/// Token representations without recording gradients.
pub fn gcn_embed(graph: &TokenGraph, features: &Tensor, params: &GcnParams, activations: GcnActivations) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let vars = params.bind_constant(&mut tape);
    let out = gcn_forward(&mut tape, graph, x, &vars, activations)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Document, Vocabulary};

    fn docs(texts: &[&str], domain: Domain, split: Split) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: format!("{domain}{i}"),
                tokens: tokenize(t),
                labels: split.is_labeled().then(|| vec![1, 0]),
                domain,
                split,
            })
            .collect()
    }

    fn toy() -> (Vocabulary, Vec<Instance>) {
        let mut all = docs(&["a b", "a c"], Domain::Source, Split::Train);
        all.extend(docs(&["a b"], Domain::Target, Split::Unlabeled));
        let vocab = Vocabulary::build(&all);
        let inst = vocab.encode_all(&all);
        (vocab, inst)
    }

    #[test]
    fn toy_pair_counts() {
        let (v, inst) = toy();
        let c = count_cooccurrences(inst.iter().filter(|i| i.domain == Domain::Source), v.len(), 1).unwrap();
        let (a, b, cc) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        assert_eq!(c.pair(a, b, Domain::Source), 1);
        assert_eq!(c.pair(b, a, Domain::Source), 1);
        assert_eq!(c.pair(a, cc, Domain::Source), 1);
        assert_eq!(c.pair(b, cc, Domain::Source), 0);
    }

    #[test]
    fn repeated_token_counts_each_adjacent_pair() {
        let all = docs(&["a b a"], Domain::Source, Split::Train);
        let v = Vocabulary::build(&all);
        let c = count_cooccurrences(&v.encode_all(&all), v.len(), 1).unwrap();
        assert_eq!(c.pair(v.id("a").unwrap(), v.id("b").unwrap(), Domain::Source), 2);
        // distance 2 is outside radius 1
        assert_eq!(c.pair(v.id("a").unwrap(), v.id("a").unwrap(), Domain::Source), 0);
        let c2 = count_cooccurrences(&v.encode_all(&all), v.len(), 2).unwrap();
        assert_eq!(c2.pair(v.id("a").unwrap(), v.id("a").unwrap(), Domain::Source), 1);
    }

    #[test]
    fn single_token_instance_has_no_pairs() {
        let all = docs(&["alone"], Domain::Source, Split::Train);
        let v = Vocabulary::build(&all);
        let c = count_cooccurrences(&v.encode_all(&all), v.len(), 3).unwrap();
        assert_eq!(c.pair_keys().count(), 0);
        assert!(count_cooccurrences(&v.encode_all(&all), v.len(), 0).is_err());
    }

    #[test]
    fn toy_edge_weights() {
        let (v, inst) = toy();
        let c = count_cooccurrences(&inst, v.len(), 1).unwrap();
        let (a, b, cc) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        assert!((edge_weight(a, b, &c) - 5.0 / 12.0).abs() < 1e-15);
        assert!((edge_weight(a, cc, &c) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(edge_weight(b, cc, &c), 0.0);
        let g = build_token_graph(&c, GraphScope::All);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.weight(b, cc), 0.0);
    }

    #[test]
    fn two_node_normalization() {
        let adj = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let n = normalize_adjacency(&adj).to_dense();
        let expected = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (x, y) in n.values().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_keeps_unit_self_loop() {
        let adj = SparseMatrix::from_triplets(3, 3, vec![(0, 1, 0.25), (1, 0, 0.25)]).unwrap();
        let n = normalize_adjacency(&adj);
        assert_eq!(n.get(2, 2), 1.0);
        assert_eq!(n.row(2).count(), 1);
    }

    #[test]
    fn source_only_scope_has_no_target_term() {
        let (v, inst) = toy();
        let g = build_scoped_graph(&inst, v.len(), 1, GraphScope::SourceOnly).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        // only the source term: 1/2 * 1/3
        assert!((g.weight(a, b) - 1.0 / 6.0).abs() < 1e-15);
        assert!(!GraphScope::SourceOnly.includes(&inst[2]));
        assert!(GraphScope::SourceLabeledTargetUnlabeled.includes(&inst[2]));
    }

    #[test]
    fn text_round_trip() {
        let (v, inst) = toy();
        let g = build_scoped_graph(&inst, v.len(), 1, GraphScope::All).unwrap();
        let text = g.to_text();
        assert!(text.starts_with(&format!("{} 2 all 1\n", v.len())));
        let back = TokenGraph::from_text(&text, Path::new("g.txt")).unwrap();
        assert_eq!(back.n_edges(), 2);
        assert_eq!(back.to_text(), text);
        assert!(TokenGraph::from_text("4 3 all 1\n1 2 0.5\n", Path::new("g.txt")).is_err());
        assert!(TokenGraph::from_text("4 1 everywhere 1\n1 2 0.5\n", Path::new("g.txt")).is_err());
    }

    #[test]
    fn gcn_single_node_is_two_linear_maps() {
        let g = TokenGraph::from_adjacency(SparseMatrix::zeros(1, 1), GraphScope::All, 1);
        let params = GcnParams {
            w0: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]),
            w1: Tensor::identity(2),
        };
        let x = Tensor::from_rows(&[vec![0.5, 2.0, -3.0]]);
        let out = gcn_embed(&g, &x, &params, GcnActivations::default()).unwrap();
        assert_eq!(out.values(), &[0.5, 2.0]);
    }

    #[test]
    fn gcn_zero_features_zero_output() {
        let (v, inst) = toy();
        let g = build_scoped_graph(&inst, v.len(), 1, GraphScope::All).unwrap();
        let params = GcnParams {
            w0: Tensor::filled(&[5, 3], 0.3),
            w1: Tensor::filled(&[3, 3], -0.7),
        };
        let out = gcn_embed(&g, &Tensor::zeros(&[v.len(), 5]), &params, GcnActivations::default()).unwrap();
        assert!(out.values().iter().all(|&x| x == 0.0));
        assert!(gcn_embed(&g, &Tensor::zeros(&[v.len() + 1, 5]), &params, GcnActivations::default()).is_err());
    }
}
