//! Compares class-imbalance remedies (weighting, random over/under-sampling,
//! SMOTE, threshold moving) on a synthetic set where faults dominate.
//!
//! ```bash
//! cargo run --release -p valve-fdd --example imbalance_benchmark
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use valve_fdd::eval::{self, LabeledSet};
use valve_fdd::gbt::GbtConfig;

/// Ten faulty samples per nominal one, overlapping in feature space.
fn sample(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let faulty = rng.random_bool(10.0 / 11.0);
            let c = if faulty { 0.6 } else { 0.0 };
            (vec![c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], faulty as u32)
        })
        .unzip()
}

fn main() -> valve_fdd::Result<()> {
    let (x, y) = sample(4000, 1);
    let (cx, cy) = sample(2000, 2);
    let (tx, ty) = sample(4000, 3);
    let cfg = GbtConfig { max_iter: 30, ..GbtConfig::detector() };
    let rows = eval::benchmark_imbalance(
        LabeledSet { x: &x, y: &y },
        LabeledSet { x: &cx, y: &cy },
        LabeledSet { x: &tx, y: &ty },
        &cfg,
        10.0 / 11.0,
        5,
        0,
    )?;
    eval::imbalance_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}
