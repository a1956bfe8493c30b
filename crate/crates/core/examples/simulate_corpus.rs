//! Generates a few trajectories of each class and exports them as CSV.
//!
//! ```bash
//! cargo run -p valve-fdd --example simulate_corpus -- /tmp/corpus
//! ```

use std::path::PathBuf;

use valve_fdd::sim::{self, DatasetSpec, OodTransform, CHANNEL_NAMES};

fn main() -> valve_fdd::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "corpus_csv".into()).into();
    std::fs::create_dir_all(&out)?;

    let spec = DatasetSpec::development(12).with_duration_scale(0.5);
    let corpus = sim::generate_dataset(&spec, 7)?;
    for traj in &corpus {
        let path = out.join(format!("traj_{:04}_class{}_{}.csv", traj.id, traj.label, traj.traj_type));
        traj.save_csv(&path)?;
        let iq = traj.channel("Iq_Meas").unwrap();
        let mean_iq = iq.iter().map(|&x| x as f64).sum::<f64>() / iq.len() as f64;
        println!(
            "id {:>3}  class {:>3}  {}  {:>6} samples  mean Iq_Meas {:+.3} A",
            traj.id,
            traj.label,
            traj.traj_type,
            traj.len(),
            mean_iq
        );
    }

    // One synthetic out-of-distribution variant per corruption class.
    for t in OodTransform::TABLE {
        let ood = sim::make_ood(&corpus[0], &t);
        ood.save_csv(&out.join(format!("ood_class{}.csv", t.class)))?;
    }
    println!("{} channels: {}", CHANNEL_NAMES.len(), CHANNEL_NAMES.join(", "));
    println!("wrote {} files to {}", corpus.len() + 3, out.display());
    Ok(())
}
