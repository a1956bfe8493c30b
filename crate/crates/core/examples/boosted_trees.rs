//! Fits histogram gradient-boosted trees on a noisy two-feature problem,
//! then a three-class problem, and round-trips a model through a file.
//!
//! ```bash
//! cargo run --release -p valve-fdd --example boosted_trees
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use valve_fdd::eval;
use valve_fdd::gbt::{self, GbtConfig, GbtEnsemble};

fn sample(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let margin = x[0] * x[0] + x[1] - 0.3 + rng.random_range(-0.2..0.2);
            (x, margin)
        })
        .unzip()
}

fn main() -> valve_fdd::Result<()> {
    let (x, m) = sample(2000, 1);
    let (xt, mt) = sample(1000, 2);
    let y: Vec<u32> = m.iter().map(|&v| (v > 0.0) as u32).collect();
    let truth: Vec<bool> = mt.iter().map(|&v| v > 0.0).collect();

    let cfg = GbtConfig { max_iter: 40, ..GbtConfig::detector() };
    let model = gbt::fit(&x, &y, None, &cfg)?;
    let scores = model.positive_scores(&xt)?;
    println!("binary: {} trees, test AUROC {:.4}", model.trees.len(), eval::auroc(&scores, &truth)?);
    let loss = &model.training_loss;
    println!("training loss {:.4} -> {:.4}", loss[0], loss[loss.len() - 1]);

    let y3: Vec<u32> = m.iter().map(|&v| if v < -0.3 { 16 } else if v < 0.3 { 64 } else { 128 }).collect();
    let t3: Vec<u32> = mt.iter().map(|&v| if v < -0.3 { 16 } else if v < 0.3 { 64 } else { 128 }).collect();
    let multi = gbt::fit(&x, &y3, None, &GbtConfig { max_iter: 30, ..GbtConfig::diagnoser() })?;
    let pred = multi.predict_classes(&xt)?;
    let acc = pred.iter().zip(&t3).filter(|(a, b)| a == b).count() as f64 / t3.len() as f64;
    println!("multiclass {:?}: accuracy {:.3}", multi.classes, acc);

    let path = std::env::temp_dir().join("boosted_trees_example.vfdd");
    model.save(&path)?;
    let back = GbtEnsemble::load(&path)?;
    assert_eq!(back.positive_scores(&xt)?, scores);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
