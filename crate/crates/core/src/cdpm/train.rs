use serde::{Deserialize, Serialize};

use super::{ddpm_loss, ConditionalDenoiser};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{Rng, SgdMomentum, Stream};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpmTrainConfig {
    /// Step budget.
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; `0` disables.
    pub clip_norm: f64,
    /// Window of the loss moving average.
    pub ma_window: usize,
    /// Stop when the moving average improved by less than `min_rel_improvement`
    /// over the last `patience` steps.
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub trace_every: usize,
}

impl Default for CdpmTrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 6000,
            batch_size: 128,
            lr: 0.02,
            momentum: 0.9,
            clip_norm: 5.0,
            ma_window: 200,
            patience: 1000,
            min_rel_improvement: 1e-3,
            trace_every: 50,
        }
    }
}

impl CdpmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.batch_size == 0 || self.ma_window == 0 || self.trace_every == 0 {
            return Err(Error::Config(
                "cdpm steps, batch size, window and trace interval must be positive".into(),
            ));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpmTracePoint {
    pub step: usize,
    pub loss: f64,
    pub loss_ma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpmTrace {
    pub steps_run: usize,
    pub converged: bool,
    pub final_loss_ma: f64,
    pub points: Vec<CdpmTracePoint>,
}

/// Trains the denoiser on labeled rows by minibatch SGD on the conditional
/// ε-prediction loss, stopping early once the moving-average loss plateaus.
pub fn train_cdpm(
    sched: &NoiseSchedule,
    model: &mut ConditionalDenoiser,
    data: &LabeledDataset,
    cfg: &CdpmTrainConfig,
    seed: u64,
) -> Result<CdpmTrace> {
    cfg.validate()?;
    let labels = data.require_labels()?;
    if data.is_empty() {
        return Err(Error::Argument(
            "cannot train the diffusion model on an empty dataset".into(),
        ));
    }
    if data.dim() != model.config().data_dim {
        return Err(Error::dim("train_cdpm", model.config().data_dim, data.dim()));
    }
    let mut shuffle = Rng::new(seed, Stream::Shuffle).keyed(0xcd);
    let mut noise = Rng::new(seed, Stream::Noise).keyed(0xcd);
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum)?;

    let n = data.len();
    let batch = cfg.batch_size.min(n.max(1));
    let mut order = shuffle.permutation(n);
    let mut cursor = 0;
    let mut window = std::collections::VecDeque::with_capacity(cfg.ma_window);
    let mut window_sum = 0.0;
    let mut ma_history: Vec<f64> = Vec::with_capacity(cfg.max_steps);
    let mut points = Vec::new();
    let mut converged = false;
    let mut steps_run = 0;

    for step in 0..cfg.max_steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == n {
                order = shuffle.permutation(n);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let x0 = data.features().select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (loss, mut grads) = ddpm_loss(sched, model, &x0, &y, &mut noise)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                what: "non-finite diffusion loss".into(),
            });
        }
        if cfg.clip_norm > 0.0 {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        let progress = step as f64 / cfg.max_steps as f64;
        opt.step_with_lr(model, &grads, crate::numerics::annealed_lr(cfg.lr, progress))
            .map_err(|e| match e {
                Error::TrainingDiverged { what, .. } => Error::TrainingDiverged { step, what },
                other => other,
            })?;

        window.push_back(loss);
        window_sum += loss;
        if window.len() > cfg.ma_window {
            window_sum -= window.pop_front().unwrap();
        }
        let ma = window_sum / window.len() as f64;
        ma_history.push(ma);
        steps_run = step + 1;
        if step % cfg.trace_every == 0 || step + 1 == cfg.max_steps {
            points.push(CdpmTracePoint {
                step,
                loss,
                loss_ma: ma,
            });
        }
        if step >= cfg.patience && step >= cfg.ma_window {
            let earlier = ma_history[step - cfg.patience];
            if earlier - ma < cfg.min_rel_improvement * earlier.abs() {
                converged = true;
                if points.last().map(|p| p.step) != Some(step) {
                    points.push(CdpmTracePoint {
                        step,
                        loss,
                        loss_ma: ma,
                    });
                }
                break;
            }
        }
    }
    Ok(CdpmTrace {
        steps_run,
        converged,
        final_loss_ma: *ma_history.last().unwrap_or(&f64::NAN),
        points,
    })
}
