//! Push a set of strongly correlated nodes apart by descending the
//! variance-inflation loss directly on their features.

use pearnet::diff::{Tape, Tensor};
use pearnet::nodegen::vif::{pearson_matrix, vif_all, vif_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn summary(nodes: &Tensor) -> pearnet::Result<String> {
    let v = vif_all(&pearson_matrix(nodes)?)?;
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    Ok(format!("mean VIF {:8.3}  max VIF {:8.3}", v.iter().sum::<f64>() / v.len() as f64, max))
}

fn main() -> pearnet::Result<()> {
    let (n, f) = (6, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shared: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = (0..n * f).map(|k| 0.8 * shared[k % f] + rng.random_range(-1.0..1.0)).collect();
    let mut nodes = Tensor::new(vec![n, f], data)?;

    let lr = 20.0;
    for step in 0..=200 {
        let mut tape = Tape::new();
        let x = tape.param(nodes.clone());
        let loss = vif_loss(&mut tape, x)?;
        if step % 40 == 0 {
            println!("step {step:>3}  loss {:.6}  {}", tape.value(loss).item(), summary(&nodes)?);
        }
        tape.backward(loss)?;
        let g = tape.grad(x).expect("param");
        for (v, gi) in nodes.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * gi;
        }
    }
    Ok(())
}
