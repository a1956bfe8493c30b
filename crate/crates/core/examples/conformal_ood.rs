//! Inductive conformal OOD detection: a threshold calibrated on nominal
//! scores bounds the false-alarm rate; a trajectory is warned once enough of
//! its windows are flagged.
//!
//! ```bash
//! cargo run -p valve-fdd --example conformal_ood
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use valve_fdd::ood::{conformal_rank, ConformalThreshold, OodTrajectoryMonitor};

fn main() -> valve_fdd::Result<()> {
    let nominal = LogNormal::new(-3.0, 0.4).expect("valid parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let calibration: Vec<f64> = (0..1000).map(|_| nominal.sample(&mut rng)).collect();

    for alpha in [0.01, 0.05, 0.1] {
        let t = ConformalThreshold::calibrate(&calibration, alpha)?;
        let fresh: Vec<f64> = (0..20_000).map(|_| nominal.sample(&mut rng)).collect();
        let rate = fresh.iter().filter(|&&e| t.is_ood(e)).count() as f64 / fresh.len() as f64;
        println!(
            "alpha {alpha:<4}  rank {}/{}  threshold {:.4}  false alarms {:.4}",
            conformal_rank(calibration.len(), alpha),
            t.n,
            t.threshold,
            rate
        );
    }

    // An unknown condition shifts the errors up by a factor of three.
    let t = ConformalThreshold::calibrate(&calibration, 0.01)?;
    let mut monitor = OodTrajectoryMonitor::new(OodTrajectoryMonitor::DEFAULT_MAX_FLAGGED);
    for _ in 0..400 {
        monitor.step(t.is_ood(3.0 * nominal.sample(&mut rng)));
    }
    println!("shifted trajectory: {} of 400 windows flagged, warned at window {:?}", monitor.flagged(), monitor.warned_at());
    Ok(())
}
