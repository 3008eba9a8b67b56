use crate::error::{Error, Result};

/// Anything that exposes its trainable tensors as flat slices, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

/// SGD with heavy-ball momentum: `v ← m·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
    steps: usize,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
            steps: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[Vec<f64>]) -> Result<()> {
        self.step_with_lr(params, grads, self.lr)
    }

    /// One update with an explicit learning rate (for annealing schedules).
    pub fn step_with_lr<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() {
            return Err(Error::dim("sgd_step tensors", tensors.len(), grads.len()));
        }
        for (i, (p, g)) in tensors.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim(
                    "sgd_step tensor",
                    format!("{} (tensor {i})", p.len()),
                    g.len(),
                ));
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                step: self.steps,
                what: "non-finite gradient".into(),
            });
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        } else if self.velocity.len() != grads.len() || self.velocity.iter().zip(grads).any(|(v, g)| v.len() != g.len())
        {
            return Err(Error::dim(
                "sgd_step velocity",
                "buffers matching the first step",
                "different parameter shapes",
            ));
        }
        for ((p, g), v) in tensors.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Annealed learning rate `lr0 / (1 + 10·p)^0.75` at training progress `p ∈ [0,1]`.
pub fn annealed_lr(lr0: f64, progress: f64) -> f64 {
    lr0 / (1.0 + 10.0 * progress).powf(0.75)
}
