// Shared by several test targets; not every target uses every helper.
#![allow(dead_code)]

use std::path::Path;

use valve_fdd::pipeline::PipelineConfig;

/// A pipeline small enough to run end to end in a few seconds.
#[allow(clippy::field_reassign_with_default)]
pub fn tiny_config(root: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.seed = 3;
    c.data_root = root.to_path_buf();
    c.corpus.development = 40;
    c.corpus.final_validation = 12;
    c.corpus.ood_per_class = 1;
    c.corpus.duration_scale = 0.1;
    c.window.max_tcae_windows = 200;
    c.tcae.filters = 8;
    c.tcae.pointwise_filters = 4;
    c.tcae.latent_channels = 4;
    c.training.max_epochs = 2;
    for g in [&mut c.detector.gbt, &mut c.diagnoser.gbt] {
        g.max_iter = 10;
        g.max_depth = 3;
        g.max_leaf_nodes = 8;
        g.min_samples_leaf = 5.0;
        g.learning_rate = 0.3;
    }
    // The tiny detector is weak; a lower reference lets streams trigger.
    c.cusum.prob_threshold = 0.6;
    c.cusum.trigger_threshold = 2.0;
    c.bench.kernel_sizes = vec![3];
    c.bench.latent_channels = vec![2];
    c.bench.epochs = 1;
    c
}

pub fn sha256_file(path: &Path) -> String {
    valve_fdd::container::sha256_hex(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}
