//! Generate the synthetic five-stage dataset, save it in both formats and
//! read it back.
//!
//! ```text
//! cargo run --example synthesize -- [n_per_class] [seed]
//! ```

use pearnet::signal::{load_dataset, save_dataset, synthesize, DatasetFormat, SynthConfig, STAGE_NAMES};

fn main() -> pearnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_per_class = args.next().map_or(10, |a| a.parse().expect("n_per_class"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));

    let cfg = SynthConfig { n_per_class, ..SynthConfig::default() };
    let data = synthesize(&cfg, seed)?;
    for (name, count) in STAGE_NAMES.iter().zip(data.class_counts()) {
        println!("{name:>4}: {count} epochs");
    }

    let dir = std::env::temp_dir().join(format!("pearnet-synth-{seed}"));
    std::fs::create_dir_all(&dir).expect("temp dir");
    for (file, format) in [("data.csv", DatasetFormat::Csv), ("data.bin", DatasetFormat::Bin)] {
        let path = dir.join(file);
        save_dataset(&data, &path, format)?;
        let back = load_dataset(&path, format)?;
        let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
        println!("{}: {} bytes, round trip exact: {}", path.display(), size, back == data);
    }
    Ok(())
}
