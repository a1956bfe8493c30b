//! Runs every pipeline stage on a small configuration, then replays one
//! held-out trajectory sample by sample through the online monitor.
//!
//! ```bash
//! cargo run --release -p valve-fdd --example end_to_end -- /tmp/valve-fdd-demo
//! ```

use valve_fdd::pipeline::artifacts::{load_corpus, CorpusSet};
use valve_fdd::pipeline::{Pipeline, PipelineConfig, StreamMonitor};

#[allow(clippy::field_reassign_with_default)]
fn main() -> valve_fdd::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "valve-fdd-demo".into());
    let mut cfg = PipelineConfig::default();
    cfg.data_root = root.into();
    cfg.corpus.development = 40;
    cfg.corpus.duration_scale = 0.1;
    cfg.window.max_tcae_windows = 400;
    cfg.tcae.filters = 16;
    cfg.training.max_epochs = 4;

    let p = Pipeline::new(cfg)?;
    let report = p.run_all()?;
    print!("{}", report.to_text());

    let deployment = p.deployment()?;
    let splits = p.splits()?;
    let dev = load_corpus(&p.layout, &p.manifest()?, CorpusSet::Development)?;
    let traj = dev
        .iter()
        .find(|t| splits.test.contains(&t.id) && t.label.is_fault())
        .expect("a faulty test trajectory");
    println!("\nreplaying trajectory {} (class {}, {})", traj.id, traj.label, traj.traj_type);
    let mut monitor = StreamMonitor::new(&deployment, traj.id)?;
    for i in 0..traj.len() {
        let sample: Vec<f32> = traj.channels.iter().map(|c| c[i]).collect();
        if let Some(out) = monitor.push_sample(&sample)? {
            for e in &out.events {
                println!("{}", serde_json::to_string(e)?);
            }
        }
    }
    println!("cusum sum at end of stream: {:.3}", monitor.detector().sum());
    Ok(())
}
