//! Calibrates an overconfident three-class classifier with Platt scaling and
//! isotonic regression (one-vs-all), reporting ECE, MCE and Brier score.
//!
//! ```bash
//! cargo run --release -p valve-fdd --example calibrate_scores
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use valve_fdd::calib::{self, Method};

/// Labels follow softmax(logits); the reported scores use 3·logits.
fn overconfident(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
    let softmax = |v: &[f64]| {
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let p = softmax(&logits);
            let u: f64 = rng.random();
            let label = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
            (softmax(&logits.iter().map(|l| 3.0 * l).collect::<Vec<_>>()), label)
        })
        .unzip()
}

fn main() -> valve_fdd::Result<()> {
    let classes = [0, 1, 2];
    let (cal_s, cal_y) = overconfident(5000, 1);
    let (test_s, test_y) = overconfident(5000, 2);

    let raw = calib::multiclass_metrics(&test_s, &test_y, &classes, 10)?;
    println!("{:<9} ece {:.4}  mce {:.4}  brier {:.4}", "raw", raw.ece, raw.mce, raw.brier);
    for method in [Method::Platt, Method::Isotonic] {
        let c = calib::calibrate_multiclass(&cal_s, &cal_y, &classes, method)?;
        let m = calib::multiclass_metrics(&c.apply_all(&test_s), &test_y, &classes, 10)?;
        println!("{:<9} ece {:.4}  mce {:.4}  brier {:.4}", format!("{method:?}").to_lowercase(), m.ece, m.mce, m.brier);
    }

    // Reliability diagram of the raw top-label confidences.
    let (conf, correct) = calib::top_label(&test_s, &test_y, &classes);
    calib::reliability(&conf, &correct, 5)?.write_csv(std::io::stdout().lock())?;
    Ok(())
}
