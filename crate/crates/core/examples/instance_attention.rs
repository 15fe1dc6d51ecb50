//! Window graph of one post and the attention each token pays to its
//! neighbours in a freshly initialised GAT layer.
//!
//!     cargo run --example instance_attention

use glen::autodiff::{Tape, Tensor};
use glen::corpus::tokenize;
use glen::instance_graph::{build_instance_graph, gat_layer, GatLayerParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> glen::Result<()> {
    let tokens = tokenize("nepal quake need tents need medicine");
    // Ids by first occurrence, as the vocabulary would assign them.
    let mut names: Vec<&str> = Vec::new();
    let ids: Vec<usize> = tokens
        .iter()
        .map(|t| match names.iter().position(|n| *n == t) {
            Some(i) => i,
            None => {
                names.push(t);
                names.len() - 1
            }
        })
        .collect();

    let graph = build_instance_graph(&ids, 1)?;
    println!("{} positions, {} nodes, {} undirected edges", ids.len(), graph.n_nodes(), graph.edges().len());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features = Tensor::uniform(&[graph.n_nodes(), 8], 1.0, &mut rng);
    let params = GatLayerParams::init(8, 4, 2, &mut rng);
    let mut tape = Tape::new();
    let h = tape.constant(features);
    let vars = params.bind_constant(&mut tape);
    let out = gat_layer(&mut tape, &graph, h, &vars, true)?;
    println!("layer output {:?}", tape.value(out.output).shape());

    let alpha = tape.value(out.attention[0]).values();
    let (dst, src) = (graph.attention_dst(), graph.attention_src());
    println!("head 0 attention:");
    for i in 0..graph.n_nodes() {
        let row: Vec<String> = (0..dst.len())
            .filter(|&e| dst[e] == i)
            .map(|e| format!("{}={:.3}", names[graph.nodes()[src[e]]], alpha[e]))
            .collect();
        println!("  {:<9} {}", names[graph.nodes()[i]], row.join("  "));
    }
    Ok(())
}
