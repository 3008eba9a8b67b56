use serde::{Deserialize, Serialize};

use super::losses::{adversarial_reg, cross_entropy, median_bandwidths, mmd};
use super::model::{RegularizerKind, UdaModel};
use crate::dataset::{Domain, LabeledDataset, TargetView};
use crate::error::{Error, Result};
use crate::numerics::{annealed_lr, Matrix, MlpGrads, Rng, SgdMomentum, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdaTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Ramp the trade-off weight with `2/(1+e^{−10p}) − 1`.
    pub warmup: bool,
    pub trace_every: usize,
}

impl Default for UdaTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            warmup: true,
            trace_every: 50,
        }
    }
}

impl UdaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.trace_every == 0 {
            return Err(Error::Config(
                "uda batch size and trace interval must be positive".into(),
            ));
        }
        SgdMomentum::new(self.lr, self.momentum).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdaTracePoint {
    pub step: usize,
    pub task_loss: f64,
    pub reg_loss: f64,
    pub lambda_eff: f64,
    pub disc_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UdaTrace {
    pub points: Vec<UdaTracePoint>,
    /// Mean discriminator accuracy over the last 20% of steps, when one was trained.
    pub tail_disc_accuracy: Option<f64>,
}

impl UdaTrace {
    /// `step,task_loss,reg_loss,lambda_eff` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,task_loss,reg_loss,lambda_eff\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                p.step,
                crate::format::sig6(p.task_loss),
                crate::format::sig6(p.reg_loss),
                crate::format::sig6(p.lambda_eff)
            ));
        }
        s
    }
}

/// `2/(1 + e^{−10p}) − 1`.
pub fn warmup_factor(progress: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0
}

/// Cycles through epoch permutations of `0..n`.
struct BatchCursor {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(mut rng: Rng, n: usize) -> Self {
        let order = rng.permutation(n);
        Self { rng, order, pos: 0 }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        let mut idx = Vec::with_capacity(size);
        while idx.len() < size {
            if self.pos == n {
                self.order = self.rng.permutation(n);
                self.pos = 0;
            }
            idx.push(self.order[self.pos]);
            self.pos += 1;
        }
        idx
    }
}

fn add_grads(into: &mut [Vec<f64>], from: &[Vec<f64>]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

fn diverged(step: usize, what: &str) -> Error {
    Error::TrainingDiverged {
        step,
        what: what.to_string(),
    }
}

fn restep(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::TrainingDiverged { what, .. } => Error::TrainingDiverged { step, what },
        other => other,
    }
}

/// Minimizes `mean L_c(source) + λ·R(T(source), T(target))` by minibatch
/// SGD-momentum with an annealed learning rate. Source and target batches
/// have equal size. With `λ = 0` the target is never touched, so the run is
/// identical to [`train_source_only`].
pub fn train_uda(
    source: &LabeledDataset,
    target: TargetView<'_>,
    model: &mut UdaModel,
    cfg: &UdaTrainConfig,
    seed: u64,
) -> Result<UdaTrace> {
    cfg.validate()?;
    let labels = source.require_labels()?;
    if source.is_empty() {
        return Err(Error::Argument("cannot train on an empty source set".into()));
    }
    if source.dim() != model.input_dim() {
        return Err(Error::dim("train_uda source", model.input_dim(), source.dim()));
    }
    if source.classes() > model.classes() || labels.iter().any(|&y| y >= model.classes()) {
        return Err(Error::Config(format!(
            "source has {} classes but the head predicts {}",
            source.classes(),
            model.classes()
        )));
    }
    let regularize = model.lambda > 0.0;
    if regularize {
        if target.features().cols() != model.input_dim() {
            return Err(Error::dim(
                "train_uda target",
                model.input_dim(),
                target.features().cols(),
            ));
        }
        if target.len() < 2 {
            return Err(Error::Argument(
                "the transfer regularizer needs at least 2 target rows".into(),
            ));
        }
        if model.regularizer == RegularizerKind::Adversarial && model.discriminator.is_none() {
            return Err(Error::Config(
                "adversarial regularizer requires a domain discriminator".into(),
            ));
        }
    }

    let batch = cfg.batch_size.min(source.len());
    let mut src_cursor = BatchCursor::new(Rng::new(seed, Stream::Shuffle).keyed(0x0da), source.len());
    let mut tgt_cursor =
        regularize.then(|| BatchCursor::new(Rng::new(seed, Stream::Target).keyed(0x0da), target.len()));
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum)?;
    let mut disc_opt = SgdMomentum::new(cfg.lr, cfg.momentum)?;

    let mut trace = UdaTrace::default();
    let mut disc_acc_history = Vec::new();
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        let lr = annealed_lr(cfg.lr, progress);
        let lambda_eff = if cfg.warmup {
            model.lambda * warmup_factor(progress)
        } else {
            model.lambda
        };

        let idx = src_cursor.next(batch);
        let xs = source.features().select_rows(&idx);
        let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let fs_cache = model.transform.forward_cached(&xs, None)?;
        let head_cache = model.head.forward_cached(fs_cache.output(), None)?;
        let (task_loss, dlogits) = cross_entropy(head_cache.output(), &ys)?;
        if !task_loss.is_finite() {
            return Err(diverged(step, "non-finite task loss"));
        }
        let head_grads = model.head.backward(&head_cache, &dlogits)?;
        let mut dfs = head_grads.input;

        let mut reg_loss = 0.0;
        let mut disc_accuracy = None;
        let mut target_grads: Option<MlpGrads> = None;
        if let Some(cursor) = tgt_cursor.as_mut() {
            let xt = target.features().select_rows(&cursor.next(batch));
            let ft_cache = model.transform.forward_cached(&xt, None)?;
            let (fs, ft) = (fs_cache.output(), ft_cache.output());
            let dft = match model.regularizer {
                RegularizerKind::Mmd => {
                    let out = mmd(fs, ft, &median_bandwidths(fs, ft))?;
                    reg_loss = out.unbiased;
                    dfs.axpy(lambda_eff, &out.grad_a)?;
                    out.grad_b.scale(lambda_eff)
                }
                RegularizerKind::Adversarial => {
                    let out = adversarial_reg(model.discriminator.as_ref(), fs, ft)?;
                    reg_loss = out.loss;
                    disc_accuracy = Some(out.disc_accuracy);
                    disc_acc_history.push(out.disc_accuracy);
                    dfs.axpy(lambda_eff, &out.reversed_src)?;
                    let disc = model.discriminator.as_mut().expect("checked above");
                    disc_opt.step_with_lr(disc, &out.disc_grads, lr).map_err(restep(step))?;
                    out.reversed_tgt.scale(lambda_eff)
                }
            };
            if !reg_loss.is_finite() {
                return Err(diverged(step, "non-finite regularizer"));
            }
            target_grads = Some(model.transform.backward(&ft_cache, &dft)?);
        }

        let mut grads = model.transform.backward(&fs_cache, &dfs)?.params;
        if let Some(tg) = target_grads {
            add_grads(&mut grads, &tg.params);
        }
        grads.extend(head_grads.params);
        opt.step_with_lr(model, &grads, lr).map_err(restep(step))?;

        if step % cfg.trace_every == 0 || step + 1 == cfg.steps {
            trace.points.push(UdaTracePoint {
                step,
                task_loss,
                reg_loss,
                lambda_eff,
                disc_accuracy,
            });
        }
    }
    if !disc_acc_history.is_empty() {
        let tail = &disc_acc_history[disc_acc_history.len() * 4 / 5..];
        let tail = if tail.is_empty() { &disc_acc_history[..] } else { tail };
        trace.tail_disc_accuracy = Some(tail.iter().sum::<f64>() / tail.len() as f64);
    }
    Ok(trace)
}

/// Plain empirical-risk minimization on the source, ignoring the regularizer.
pub fn train_source_only(
    source: &LabeledDataset,
    model: &mut UdaModel,
    cfg: &UdaTrainConfig,
    seed: u64,
) -> Result<UdaTrace> {
    let lambda = model.lambda;
    model.lambda = 0.0;
    let empty = Matrix::zeros(0, source.dim());
    let out = train_uda(source, TargetView::new(&empty), model, cfg, seed);
    model.lambda = lambda;
    out
}

/// Labels every row with the classifier's argmax; the domain tag is kept.
pub fn pseudo_label(model: &UdaModel, target: &LabeledDataset) -> Result<LabeledDataset> {
    let labels = model.predict(target.features())?;
    LabeledDataset::labeled(target.features().clone(), labels, model.classes(), target.domain())
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(model: &UdaModel, data: &LabeledDataset) -> Result<f64> {
    let labels = data.require_labels()?;
    if data.is_empty() {
        return Err(Error::Argument("accuracy of an empty set".into()));
    }
    let pred = model.predict(data.features())?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Convenience for the unlabeled target: pseudo-labels with a `target` tag.
pub fn pseudo_label_view(model: &UdaModel, target: TargetView<'_>) -> Result<LabeledDataset> {
    let labels = model.predict(target.features())?;
    LabeledDataset::labeled(target.features().clone(), labels, model.classes(), Domain::Target)
}
