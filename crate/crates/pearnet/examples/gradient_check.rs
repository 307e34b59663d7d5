//! Compare every analytic parameter gradient of the full loss with central
//! finite differences on the tiny configuration.

use pearnet::diff::gradcheck::check_gradients;
use pearnet::model::{ModelConfig, PearNetModel};
use pearnet::params::Bound;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pearnet::Result<()> {
    let model = PearNetModel::new(ModelConfig::tiny(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let epochs: Vec<Vec<f64>> = (0..2).map(|_| (0..40).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let batch: Vec<&[f64]> = epochs.iter().map(Vec::as_slice).collect();
    let weights = [1.0, 1.5, 1.0, 0.8, 1.2];

    let report = check_gradients(model.store.values(), 1e-6, |tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let mut dropout = ChaCha8Rng::seed_from_u64(7);
        Ok(model.total_loss(tape, &p, &batch, &[0, 3], &weights, true, true, &mut dropout)?.total)
    })?;
    println!("checked {} scalars over {} tensors", report.checked, model.store.len());
    println!("max relative error {:.3e}", report.max_rel_error);
    if let Some((tensor, index)) = report.worst {
        println!("worst entry: {}[{index}]", model.store.names()[tensor]);
    }
    println!("{}", if report.passes(1e-5) { "PASS" } else { "FAIL" });
    Ok(())
}
