//! Adam training with early stopping on a validation set.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TcaeModel;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::sim::Label;

/// Samples per parallel work item. Chunk gradients are summed in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub learning_rate: f64,
    /// Capped at the number of training windows.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 1e-3,
            batch_size: 4096,
            max_epochs: 200,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub batch_size: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], o: &TrainOptions) {
        self.t += 1;
        let c1 = 1.0 - o.beta1.powi(self.t);
        let c2 = 1.0 - o.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = o.beta1 * self.m[i] + (1.0 - o.beta1) * grad[i];
            self.v[i] = o.beta2 * self.v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
            params[i] -= o.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + o.epsilon);
        }
    }
}

fn to_f64(w: &Window) -> Vec<f64> {
    w.values.iter().map(|&v| v as f64).collect()
}

fn check_nominal(windows: &[Window], what: &str, expected_len: usize) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!("no {what} windows for autoencoder training")));
    }
    if let Some(w) = windows.iter().find(|w| w.label != Label::NOMINAL) {
        return Err(Error::invalid(format!(
            "autoencoder trains on nominal data only; {what} window from trajectory {} has label {}",
            w.traj_id, w.label
        )));
    }
    if let Some(w) = windows.iter().find(|w| w.values.len() != expected_len) {
        return Err(Error::shape(format!("{expected_len} values per window"), w.values.len()));
    }
    Ok(())
}

/// Mean eval-mode MSE over a set of windows.
fn mean_loss(model: &TcaeModel, params: &[f64], windows: &[Window]) -> f64 {
    let sums: Vec<f64> = windows
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|w| {
                    let x = to_f64(w);
                    super::mse(&model.run(params, &x, None).xhat, &x)
                })
                .sum()
        })
        .collect();
    sums.iter().sum::<f64>() / windows.len() as f64
}

/// Trains `model` on nominal windows, keeping the parameters with the best
/// validation loss. Training is deterministic for a given `options.seed`.
pub fn train(mut model: TcaeModel, train: &[Window], val: &[Window], options: &TrainOptions) -> Result<TcaeModel> {
    let n_in = model.input_len();
    check_nominal(train, "training", n_in)?;
    check_nominal(val, "validation", n_in)?;
    if options.batch_size == 0 || options.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    let batch = options.batch_size.min(train.len());
    let n_params = model.n_params();
    let mut params = model.params.clone();
    let mut adam = Adam::new(n_params);
    let mut log = TrainingLog { batch_size: batch, ..TrainingLog::default() };
    let mut best = (mean_loss(&model, &params, val), params.clone(), 0);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=options.max_epochs {
        order.shuffle(&mut stream_rng(options.seed, derive_seed(epoch as u64, 0x5_4ff1e)));
        let epoch_seed = derive_seed(options.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for (step, idx) in order.chunks(batch).enumerate() {
            let step_seed = derive_seed(epoch_seed, step as u64);
            let parts: Vec<(Vec<f64>, f64)> = idx
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut grad = vec![0.0; n_params];
                    let mut loss = 0.0;
                    for (j, &i) in chunk.iter().enumerate() {
                        let mut rng = stream_rng(step_seed, (c * CHUNK + j) as u64);
                        loss += model.loss_and_grad_with(&params, &to_f64(&train[i]), Some(&mut rng), &mut grad);
                    }
                    (grad, loss)
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for (g, l) in &parts {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
                epoch_loss += l;
            }
            let scale = 1.0 / idx.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad, options);
        }
        let val_loss = mean_loss(&model, &params, val);
        log.train_loss.push(epoch_loss / train.len() as f64);
        log.val_loss.push(val_loss);
        log.epochs = epoch;
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
        } else if epoch - best.2 >= options.patience {
            break;
        }
    }
    log.best_epoch = best.2;
    model.params = best.1;
    model.round_to_f32();
    model.training = log;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TrajType;
    use crate::tcae::TcaeConfig;

    fn cfg() -> TcaeConfig {
        TcaeConfig {
            window_len: 16,
            channels: 2,
            blocks: Some(2),
            kernel_size: 3,
            filters: 6,
            pointwise_filters: 4,
            latent_channels: 3,
            pool: 4,
            dropout: 0.0,
            ..TcaeConfig::default()
        }
    }

    fn window(values: Vec<f32>, label: Label) -> Window {
        Window { values, label, traj_id: 0, traj_type: TrajType::T1, start_index: 0 }
    }

    fn constant(level: f32) -> Window {
        window(vec![level; 32], Label::NOMINAL)
    }

    fn step(level: f32) -> Window {
        let mut v = vec![level; 32];
        for c in 0..2 {
            for t in 8..16 {
                v[c * 16 + t] = 1.0 - level;
            }
        }
        window(v, Label::NOMINAL)
    }

    fn constants(n: usize, offset: f32) -> Vec<Window> {
        (0..n).map(|i| constant(offset + 0.8 * i as f32 / n as f32)).collect()
    }

    fn quick() -> TrainOptions {
        TrainOptions { batch_size: 8, max_epochs: 40, patience: 40, learning_rate: 3e-3, seed: 1, ..TrainOptions::default() }
    }

    #[test]
    fn loss_decreases_and_constants_reconstruct_better_than_steps() {
        let m = TcaeModel::new(cfg(), 0).unwrap();
        let trained = train(m, &constants(48, 0.1), &constants(8, 0.15), &quick()).unwrap();
        let log = &trained.training;
        assert!(log.train_loss.last().unwrap() < &log.train_loss[0]);
        assert!(log.val_loss[log.best_epoch - 1] < log.val_loss[0]);
        let e_const: f64 = (0..5).map(|i| trained.features(&constant(0.2 + 0.1 * i as f32).values).unwrap().e).sum();
        let e_step: f64 = (0..5).map(|i| trained.features(&step(0.2 + 0.1 * i as f32).values).unwrap().e).sum();
        assert!(e_const < e_step, "constant {e_const} vs step {e_step}");
    }

    #[test]
    fn training_is_reproducible_and_parameters_are_f32() {
        let opts = TrainOptions { max_epochs: 3, ..quick() };
        let mut c = cfg();
        c.dropout = 0.2;
        let a = train(TcaeModel::new(c.clone(), 5).unwrap(), &constants(20, 0.1), &constants(4, 0.2), &opts).unwrap();
        let b = train(TcaeModel::new(c, 5).unwrap(), &constants(20, 0.1), &constants(4, 0.2), &opts).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert!(a.params().iter().all(|&p| p == p as f32 as f64));
    }

    #[test]
    fn early_stopping_returns_best_checkpoint() {
        // A huge learning rate makes validation loss blow up after a few steps.
        let opts = TrainOptions { learning_rate: 0.5, max_epochs: 30, patience: 3, ..quick() };
        let m = TcaeModel::new(cfg(), 2).unwrap();
        let val = constants(6, 0.3);
        let trained = train(m, &constants(16, 0.1), &val, &opts).unwrap();
        let log = &trained.training;
        assert!(log.epochs <= log.best_epoch + 3);
        let best_val = if log.best_epoch == 0 {
            None
        } else {
            Some(log.val_loss[log.best_epoch - 1])
        };
        if let Some(b) = best_val {
            assert!(log.val_loss.iter().all(|&v| v >= b));
        }
    }

    #[test]
    fn rejects_faulty_or_empty_training_data() {
        let m = TcaeModel::new(cfg(), 0).unwrap();
        let mut bad = constants(4, 0.1);
        bad[2].label = Label(4);
        assert!(train(m.clone(), &bad, &constants(2, 0.1), &quick()).is_err());
        assert!(train(m.clone(), &[], &constants(2, 0.1), &quick()).is_err());
        assert!(train(m, &constants(2, 0.1), &[], &quick()).is_err());
    }

    #[test]
    fn batch_is_capped_at_corpus_size() {
        let opts = TrainOptions { max_epochs: 1, ..TrainOptions::default() };
        let trained = train(TcaeModel::new(cfg(), 0).unwrap(), &constants(10, 0.1), &constants(2, 0.1), &opts).unwrap();
        assert_eq!(trained.training.batch_size, 10);
    }
}
