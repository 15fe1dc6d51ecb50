//! Per-post window graph and the graph attention network over it.
//!
//! Nodes are the distinct tokens of a post in first-occurrence order; two
//! nodes are joined when some of their positions lie within the window radius.
//! Every node also attends to itself. A layer scores each neighbour `j` of `i`
//! per head as `LeakyReLU(a_self . W h_i + a_nbr . W h_j)`, normalizes the
//! scores over `N(i)` and sums the projected neighbour features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Tensor, Var, LEAKY_RELU_SLOPE};
use crate::error::{GlenError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceGraph {
    nodes: Vec<usize>,
    positions: Vec<usize>,
    edges: Vec<(usize, usize)>,
    /// Attention edges grouped by receiving node, self-loop included.
    dst: Vec<usize>,
    src: Vec<usize>,
}

impl InstanceGraph {
    /// Token ids of the nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node index for every position of the post.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Undirected edges `(u, v)` with `u < v`, self-loops excluded.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Receiving node of each attention edge; nondecreasing.
    pub fn attention_dst(&self) -> &[usize] {
        &self.dst
    }

    /// Sending node of each attention edge.
    pub fn attention_src(&self) -> &[usize] {
        &self.src
    }

    /// Neighbours of `i`, itself included, ascending.
    pub fn neighbours(&self, i: usize) -> &[usize] {
        let start = self.dst.partition_point(|&d| d < i);
        let end = self.dst.partition_point(|&d| d <= i);
        &self.src[start..end]
    }
}

pub fn build_instance_graph(tokens: &[usize], radius: usize) -> Result<InstanceGraph> {
    if tokens.is_empty() {
        return Err(GlenError::Invalid("instance graph of an empty post".into()));
    }
    if radius == 0 {
        return Err(GlenError::Config("window radius must be at least 1".into()));
    }
    let mut nodes: Vec<usize> = Vec::new();
    let positions: Vec<usize> = tokens
        .iter()
        .map(|t| match nodes.iter().position(|n| n == t) {
            Some(i) => i,
            None => {
                nodes.push(*t);
                nodes.len() - 1
            }
        })
        .collect();
    let n = nodes.len();
    let mut adjacent = vec![false; n * n];
    for (i, &u) in positions.iter().enumerate() {
        for &v in positions.iter().skip(i + 1).take(radius) {
            if u != v {
                adjacent[u * n + v] = true;
                adjacent[v * n + u] = true;
            }
        }
    }
    let mut edges = Vec::new();
    let (mut dst, mut src) = (Vec::new(), Vec::new());
    for u in 0..n {
        for v in 0..n {
            if u == v || adjacent[u * n + v] {
                dst.push(u);
                src.push(v);
                if u < v {
                    edges.push((u, v));
                }
            }
        }
    }
    Ok(InstanceGraph {
        nodes,
        positions,
        edges,
        dst,
        src,
    })
}

/// Projection and per-head attention vectors of one GAT layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    /// `d_in x (heads * d_out)`, heads side by side.
    pub w: Tensor,
    /// One `(2 * d_out) x 1` vector per head: self half, then neighbour half.
    pub attn: Vec<Tensor>,
}

impl GatLayerParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, heads: usize, rng: &mut R) -> Self {
        let w = Tensor::glorot(d_in, heads * d_out, rng);
        let attn = (0..heads)
            .map(|_| {
                let t = Tensor::glorot(2 * d_out, 1, rng);
                Tensor::new(vec![2 * d_out, 1], t.into_values()).expect("shape")
            })
            .collect();
        GatLayerParams { w, attn }
    }

    pub fn heads(&self) -> usize {
        self.attn.len()
    }

    pub fn d_out(&self) -> usize {
        self.w.cols() / self.heads()
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.w"), &self.w)];
        for (k, a) in self.attn.iter().enumerate() {
            out.push((format!("{prefix}.attn{k}"), a));
        }
        out
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(format!("{prefix}.w"), &mut self.w)];
        for (k, a) in self.attn.iter_mut().enumerate() {
            out.push((format!("{prefix}.attn{k}"), a));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> GatLayerVars {
        GatLayerVars {
            w: tape.leaf(self.w.clone()),
            attn: self.attn.iter().map(|a| tape.leaf(a.clone())).collect(),
            d_out: self.d_out(),
        }
    }

    pub fn bind_constant(&self, tape: &mut Tape) -> GatLayerVars {
        GatLayerVars {
            w: tape.constant(self.w.clone()),
            attn: self.attn.iter().map(|a| tape.constant(a.clone())).collect(),
            d_out: self.d_out(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatLayerVars {
    pub w: Var,
    pub attn: Vec<Var>,
    pub d_out: usize,
}

impl GatLayerVars {
    fn all(&self) -> Vec<Var> {
        let mut out = vec![self.w];
        out.extend(&self.attn);
        out
    }
}

/// Two-layer GAT: several concatenated heads, then one head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    pub layer1: GatLayerParams,
    pub layer2: GatLayerParams,
}

impl GatParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, heads: usize, rng: &mut R) -> Self {
        GatParams {
            layer1: GatLayerParams::init(d_in, d_h, heads, rng),
            layer2: GatLayerParams::init(heads * d_h, d_h, 1, rng),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.layer1.named("gat.l1");
        out.extend(self.layer2.named("gat.l2"));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.layer1.named_mut("gat.l1");
        out.extend(self.layer2.named_mut("gat.l2"));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> GatVars {
        GatVars {
            layer1: self.layer1.bind(tape),
            layer2: self.layer2.bind(tape),
        }
    }

    pub fn bind_constant(&self, tape: &mut Tape) -> GatVars {
        GatVars {
            layer1: self.layer1.bind_constant(tape),
            layer2: self.layer2.bind_constant(tape),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatVars {
    pub layer1: GatLayerVars,
    pub layer2: GatLayerVars,
}

impl GatVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.layer1.all();
        out.extend(self.layer2.all());
        out
    }
}

/// Output of one layer plus the per-head attention coefficients, one per
/// attention edge in [`InstanceGraph::attention_dst`] order.
#[derive(Clone, Debug)]
pub struct GatLayerOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

pub fn gat_layer(
    tape: &mut Tape,
    graph: &InstanceGraph,
    h: Var,
    layer: &GatLayerVars,
    concat_heads: bool,
) -> Result<GatLayerOutput> {
    let n = graph.n_nodes();
    if tape.value(h).rows() != n {
        return Err(GlenError::shape("gat_layer", tape.value(h).shape(), &[n]));
    }
    let heads = layer.attn.len();
    let d = layer.d_out;
    let (dst, src) = (graph.attention_dst(), graph.attention_src());
    let wh = tape.matmul(h, layer.w)?;
    let mut outputs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for (k, &a) in layer.attn.iter().enumerate() {
        let wh_k = if heads == 1 { wh } else { tape.slice_cols(wh, k * d, d)? };
        let a_self = tape.slice_rows(a, 0, d)?;
        let a_nbr = tape.slice_rows(a, d, d)?;
        let s_self = tape.matmul(wh_k, a_self)?;
        let s_nbr = tape.matmul(wh_k, a_nbr)?;
        let e_self = tape.gather_rows(s_self, dst)?;
        let e_nbr = tape.gather_rows(s_nbr, src)?;
        let e = tape.add(e_self, e_nbr)?;
        let e = tape.leaky_relu(e, LEAKY_RELU_SLOPE);
        let alpha = tape.segment_softmax(e, dst)?;
        outputs.push(tape.segment_weighted_sum(alpha, wh_k, dst, src, n)?);
        attention.push(alpha);
    }
    let output = if outputs.len() == 1 {
        outputs[0]
    } else if concat_heads {
        tape.concat_cols(&outputs)?
    } else {
        let mut acc = outputs[0];
        for &o in &outputs[1..] {
            acc = tape.add(acc, o)?;
        }
        tape.scale(acc, 1.0 / outputs.len() as f64)
    };
    Ok(GatLayerOutput { output, attention })
}

/// Layer 1 with concatenated heads, optional activation, then layer 2.
pub fn gat_forward(
    tape: &mut Tape,
    graph: &InstanceGraph,
    h0: Var,
    params: &GatVars,
    between_layers: Activation,
) -> Result<Var> {
    let h1 = gat_layer(tape, graph, h0, &params.layer1, true)?.output;
    let h1 = between_layers.apply(tape, h1);
    Ok(gat_layer(tape, graph, h1, &params.layer2, true)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_of_three() {
        let g = build_instance_graph(&[7, 8, 9], 1).unwrap();
        assert_eq!(g.nodes(), &[7, 8, 9]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbours(0), &[0, 1]);
        assert_eq!(g.neighbours(1), &[0, 1, 2]);
        assert_eq!(g.neighbours(2), &[1, 2]);
    }

    #[test]
    fn single_token_self_loop_only() {
        let g = build_instance_graph(&[4], 1).unwrap();
        assert_eq!(g.n_nodes(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(g.attention_dst(), &[0]);
        assert!(build_instance_graph(&[], 1).is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let g = build_instance_graph(&[3, 5, 3], 1).unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.positions(), &[0, 1, 0]);
    }

    #[test]
    fn wider_window() {
        let g = build_instance_graph(&[1, 2, 3, 4], 2).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
    }

    fn layer(d_in: usize, d_out: usize, heads: usize, seed: u64) -> GatLayerParams {
        use rand::SeedableRng;
        GatLayerParams::init(d_in, d_out, heads, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn identical_features_give_uniform_attention() {
        let g = build_instance_graph(&[1, 2, 3, 4], 1).unwrap();
        let p = layer(3, 2, 2, 1);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&vec![vec![0.3, -1.0, 2.0]; 4]));
        let vars = p.bind(&mut tape);
        let out = gat_layer(&mut tape, &g, h, &vars, true).unwrap();
        for alpha in out.attention {
            let a = tape.value(alpha).values();
            for i in 0..g.n_nodes() {
                let deg = g.neighbours(i).len() as f64;
                let start = g.attention_dst().partition_point(|&d| d < i);
                for v in &a[start..start + g.neighbours(i).len()] {
                    assert!((v - 1.0 / deg).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_node_output_is_projection() {
        let g = build_instance_graph(&[9], 1).unwrap();
        let p = layer(3, 2, 1, 2);
        let x = Tensor::from_rows(&[vec![0.5, 1.5, -2.0]]);
        let mut tape = Tape::new();
        let h = tape.constant(x.clone());
        let vars = p.bind(&mut tape);
        let out = gat_layer(&mut tape, &g, h, &vars, true).unwrap();
        let expected = x.matmul(&p.w).unwrap();
        assert!(tape.value(out.output).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn zero_input_zero_output() {
        use rand::SeedableRng;
        let g = build_instance_graph(&[1, 2, 3], 1).unwrap();
        let p = GatParams::init(5, 4, 2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[3, 5]));
        let vars = p.bind(&mut tape);
        let out = gat_forward(&mut tape, &g, h, &vars, Activation::Identity).unwrap();
        assert_eq!(tape.value(out).shape(), &[3, 4]);
        assert!(tape.value(out).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_shapes_follow_heads() {
        use rand::SeedableRng;
        let p = GatParams::init(300, 100, 2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.layer1.w.shape(), &[300, 200]);
        assert_eq!(p.layer2.w.shape(), &[200, 100]);
        let total: usize = p.named().iter().map(|(_, t)| t.len()).sum();
        assert_eq!(total, 60_000 + 2 * 200 + 20_000 + 200);
    }
}
