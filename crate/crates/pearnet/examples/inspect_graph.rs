//! Train briefly on synthetic data, then write the learned graph of one
//! epoch (nodes, adjacency, per-head attention) as JSON.

use pearnet::model::{ModelConfig, PearNetModel};
use pearnet::signal::{synthesize, SynthConfig, STAGE_NAMES};
use pearnet::train::{fit, TrainConfig};

fn main() -> pearnet::Result<()> {
    let data = synthesize(&SynthConfig { n_per_class: 8, ..SynthConfig::default() }, 0)?.z_normalized(1e-8);
    let mut model = PearNetModel::new(ModelConfig::default(), 0)?;
    let cfg = TrainConfig { epochs: 5, batch_size: 20, ..TrainConfig::default() };
    let all: Vec<usize> = (0..data.len()).collect();
    let trace = fit(&mut model, &data, &all, &cfg, &[1.0; 5], 1)?;
    println!("loss {:.4} -> {:.4}", trace[0].loss.total, trace.last().unwrap().loss.total);

    let epoch = &data.epochs()[2 * 8];
    let dump = model.graph_dump(&epoch.samples)?;
    for (h, alpha) in dump.alpha_per_head.iter().enumerate() {
        let strongest: Vec<usize> = alpha
            .iter()
            .enumerate()
            .map(|(i, row)| (0..row.len()).filter(|&j| j != i).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap())
            .collect();
        let self_weight = alpha.iter().enumerate().map(|(i, row)| row[i]).sum::<f64>() / alpha.len() as f64;
        println!("head {h}: mean self weight {self_weight:.3}, strongest other neighbour {strongest:?}");
    }
    let path = std::env::temp_dir().join("pearnet-graph.json");
    std::fs::write(&path, serde_json::to_string_pretty(&dump)?).expect("write dump");
    println!("{} epoch, {} nodes -> {}", STAGE_NAMES[epoch.label as usize], dump.nodes.len(), path.display());
    Ok(())
}
