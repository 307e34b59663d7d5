//! Cross-validate the classifier on a synthetic dataset.
//!
//! ```text
//! cargo run --release --example train_cv -- [epochs] [folds]
//! ```

use std::time::Instant;

use pearnet::model::ModelConfig;
use pearnet::signal::{synthesize, SynthConfig};
use pearnet::train::{cross_validate, TrainConfig};

fn main() -> pearnet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(40);
    let folds = args.next().unwrap_or(5);

    let data = synthesize(&SynthConfig::default(), 0)?.z_normalized(1e-8);
    let model = ModelConfig::default();
    let train = TrainConfig { epochs, batch_size: 32, k_folds: folds, ..TrainConfig::default() };

    let start = Instant::now();
    let out = cross_validate(&data, &model, &train, |f, m| {
        eprintln!("fold {f}: accuracy {:.4}  MF1 {:.4}  ({:.1?})", m.accuracy, m.macro_f1, start.elapsed());
    })?;
    print!("{}", out.report.to_table());
    eprintln!("total {:.1?}", start.elapsed());
    Ok(())
}
