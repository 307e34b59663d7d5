//! Run the ablation grid (segment count, level count, attention mechanism,
//! VIF on/off) with a short training schedule and print the result table.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs]
//! ```

use pearnet::cli::{ablation_table, cmd_ablate, RunConfig};
use pearnet::signal::SynthConfig;
use pearnet::train::TrainConfig;

fn main() -> pearnet::Result<()> {
    let epochs = std::env::args().nth(1).map_or(3, |a| a.parse().expect("epochs"));
    let cfg = RunConfig {
        tag: "ablation".into(),
        synth: SynthConfig { n_per_class: 20, ..SynthConfig::default() },
        train: TrainConfig { epochs, batch_size: 32, k_folds: 2, ..TrainConfig::default() },
        ..RunConfig::default()
    };
    let dir = std::env::temp_dir().join("pearnet-ablation");
    let rows = cmd_ablate(&cfg, &dir, true, |m| eprintln!("{m}"))?;
    print!("{}", ablation_table(&rows));
    println!("artifacts in {}", dir.display());
    Ok(())
}
