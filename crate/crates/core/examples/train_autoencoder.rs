//! Trains a small autoencoder on nominal windows and compares the
//! reconstruction error of nominal and faulty windows.
//!
//! ```bash
//! cargo run --release -p valve-fdd --example train_autoencoder
//! ```

use valve_fdd::data::{self, Scaler};
use valve_fdd::sim::{self, DatasetSpec, Label};
use valve_fdd::tcae::{self, TcaeConfig, TcaeModel, TrainOptions};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> valve_fdd::Result<()> {
    let corpus = sim::generate_dataset(&DatasetSpec::development(30).with_duration_scale(0.1), 1)?;
    let (nominal, faulty): (Vec<_>, Vec<_>) = corpus.into_iter().partition(|t| t.label == Label::NOMINAL);
    let scaler = Scaler::fit(&nominal)?;

    let cfg = TcaeConfig { filters: 16, pointwise_filters: 8, latent_channels: 8, ..TcaeConfig::default() };
    println!("blocks {}  receptive field {}", cfg.block_count()?, cfg.receptive_field()?);
    let mut windows = Vec::new();
    for t in &nominal {
        windows.extend(data::windows(t, &scaler, cfg.window_len, 25)?);
    }
    let split = windows.len() * 4 / 5;
    let (train, val) = windows.split_at(split);

    let model = TcaeModel::new(cfg, 0)?;
    let opts = TrainOptions { max_epochs: 8, batch_size: 32, ..TrainOptions::default() };
    let model = tcae::train(model, train, val, &opts)?;
    println!("{} parameters, {} training windows", model.n_params(), train.len());

    let errors = |trajs: &[sim::Trajectory]| -> valve_fdd::Result<Vec<f64>> {
        let mut e = Vec::new();
        for t in trajs {
            for start in data::window_starts(t.len(), model.config.window_len, 50) {
                e.push(model.features_unclamped(&data::unclamped_window_at(t, &scaler, model.config.window_len, start))?.e);
            }
        }
        Ok(e)
    };
    let (e_nom, e_fault) = (errors(&nominal)?, errors(&faulty)?);
    println!("mean e nominal {:.4}  faulty {:.4}", mean(&e_nom), mean(&e_fault));

    let f = model.features(&val[0].values)?;
    println!("z has {} entries, r has {}", f.z.len(), f.r.len());
    Ok(())
}
