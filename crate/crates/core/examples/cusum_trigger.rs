//! CUSUM gating of a noisy failure-probability stream that shifts upward
//! half-way, and threshold moving under a prevalence shift.
//!
//! ```bash
//! cargo run -p valve-fdd --example cusum_trigger
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use valve_fdd::detect::{adapt_threshold, default_threshold, CusumDetector, CusumParams};

fn main() -> valve_fdd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Nominal windows hover around 0.3 with occasional spikes; the fault
    // starts at window 60.
    let probs: Vec<f64> = (0..120)
        .map(|i| {
            let level = if i < 60 { 0.3 } else { 0.9 };
            let spike = if rng.random_bool(0.05) { 0.6 } else { 0.0 };
            (level + spike + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0)
        })
        .collect();

    for trigger_threshold in [0.0, 1.0, 4.0] {
        let params = CusumParams { trigger_threshold, ..CusumParams::default() };
        let at = CusumDetector::first_trigger(params, &probs)?;
        println!("T_cs {trigger_threshold:>3}: triggers at window {at:?}");
    }

    let mut d = CusumDetector::new(CusumParams::default())?;
    for (i, &p) in probs.iter().enumerate().skip(55).take(12) {
        d.step(p)?;
        println!("window {i:>3}  p {p:.3}  sum {:.3}  triggered {}", d.sum(), d.triggered());
    }

    println!("balanced default threshold for 10 fault classes: {:.4}", default_threshold(10, true)?);
    println!("threshold after prevalence 0.75 -> 0.15: {:.4}", adapt_threshold(0.75, 0.15)?);
    Ok(())
}
