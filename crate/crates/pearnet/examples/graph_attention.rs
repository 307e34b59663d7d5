//! Score the same node set with each attention mechanism and show the
//! learned edges and attention weights of one head.

use pearnet::diff::{Tape, Tensor};
use pearnet::graph::{AdjacencyInit, GraphAttention, GraphConfig, Mechanism};
use pearnet::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn print_matrix(name: &str, t: &Tensor) {
    println!("  {name}:");
    for i in 0..t.shape()[0] {
        let row: Vec<String> = t.row(i).iter().map(|v| format!("{v:7.3}")).collect();
        println!("    {}", row.join(" "));
    }
}

fn main() -> pearnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, f) = (5, 8);
    let h = Tensor::new(vec![n, f], (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    for mechanism in Mechanism::ALL {
        let cfg = GraphConfig {
            mechanism,
            heads: 2,
            out_dim: 4,
            adjacency_init: AdjacencyInit::Uniform,
            ..GraphConfig::default()
        };
        let mut store = ParamStore::new();
        let attention = GraphAttention::new(&mut store, &mut ChaCha8Rng::seed_from_u64(1), &cfg, f)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(h.clone());
        let trace = attention.forward(&mut tape, &p, x)?;
        let head = &trace.heads[0];
        println!("{mechanism}: {} learned edges, output {:?}", head.adjacency.edges.len(), tape.shape(trace.output));
        print_matrix("e", tape.value(head.e));
        print_matrix("A", &head.adjacency.a);
        print_matrix("alpha", tape.value(head.alpha));
    }
    Ok(())
}
