//! Global token graph on a handful of posts: co-occurrence edge weights,
//! the normalized adjacency, and the text export.
//!
//!     cargo run --example token_graph

use glen::corpus::{tokenize, Document, Domain, Split, Vocabulary};
use glen::global_graph::{build_scoped_graph, GraphScope};

fn doc(text: &str, domain: Domain, split: Split) -> Document {
    Document {
        id: text.to_string(),
        tokens: tokenize(text),
        labels: split.is_labeled().then(|| vec![1, 0]),
        domain,
        split,
    }
}

fn main() -> glen::Result<()> {
    let docs = vec![
        doc("need water in kathmandu", Domain::Source, Split::Train),
        doc("water and food needed", Domain::Source, Split::Unlabeled),
        doc("need wifi near amatrice", Domain::Target, Split::Unlabeled),
        doc("wifi down after earthquake", Domain::Target, Split::Unlabeled),
    ];
    let vocab = Vocabulary::build(&docs);
    let instances = vocab.encode_all(&docs);

    for scope in [GraphScope::SourceOnly, GraphScope::All] {
        let graph = build_scoped_graph(&instances, vocab.len(), 1, scope)?;
        let (lo, hi) = graph.weight_range().unwrap_or_default();
        println!("scope {scope}: {} nodes, {} edges, weights in [{lo:.4}, {hi:.4}]", graph.n_nodes(), graph.n_edges());
    }

    let graph = build_scoped_graph(&instances, vocab.len(), 1, GraphScope::All)?;
    // `water` and `wifi` share the neighbour `need`: two hops apart.
    for (a, b) in [("need", "water"), ("need", "wifi"), ("water", "wifi")] {
        let (i, j) = (vocab.id(a).unwrap(), vocab.id(b).unwrap());
        println!("rho({a}, {b}) = {:.4}", graph.weight(i, j));
    }
    let need = vocab.id("need").unwrap();
    println!("normalized row of `need`:");
    for (j, v) in graph.normalized().row(need) {
        println!("  {:<12} {v:.4}", vocab.token(j));
    }
    print!("\nexport:\n{}", graph.to_text());
    Ok(())
}
