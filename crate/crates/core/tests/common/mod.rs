#![allow(dead_code)]

use dtskit_core::cdpm::NoisePredictor;
use dtskit_core::numerics::{Matrix, Parameters, Rng};
use dtskit_core::schedule::NoiseSchedule;
use dtskit_core::Result;

/// Posterior-mean noise predictor for `x₀ | l ~ N(μ_l, s²I)`.
///
/// `x_t = √ᾱ x₀ + √(1−ᾱ) ε` is jointly Gaussian with `ε`, with
/// `Cov(ε, x_t) = √(1−ᾱ) I` and `Var(x_t) = (ᾱ s² + 1 − ᾱ) I`, so
/// `E[ε | x_t] = √(1−ᾱ) (x_t − √ᾱ μ) / (ᾱ s² + 1 − ᾱ)`.
pub struct GaussianScore {
    pub alpha_bars: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub s: f64,
}

impl GaussianScore {
    pub fn new(sched: &NoiseSchedule, means: Vec<Vec<f64>>, s: f64) -> Self {
        // own cumulative product rather than the schedule's table
        let mut alpha_bars = Vec::with_capacity(sched.steps());
        let mut acc = 1.0;
        for t in 1..=sched.steps() {
            acc *= 1.0 - sched.beta(t);
            alpha_bars.push(acc);
        }
        Self { alpha_bars, means, s }
    }
}

impl NoisePredictor for GaussianScore {
    fn data_dim(&self) -> usize {
        self.means[0].len()
    }

    fn classes(&self) -> usize {
        self.means.len()
    }

    fn predict_eps(&self, x_t: &Matrix, labels: &[usize], steps: &[usize]) -> Result<Matrix> {
        Ok(Matrix::from_fn(x_t.rows(), x_t.cols(), |i, j| {
            let ab = self.alpha_bars[steps[i] - 1];
            let mu = self.means[labels[i]][j];
            (x_t.get(i, j) - ab.sqrt() * mu) * (1.0 - ab).sqrt() / (ab * self.s * self.s + 1.0 - ab)
        }))
    }
}

/// Every parameter redrawn from `N(0, 0.5²)`.
pub fn randomized<P: Parameters>(mut model: P, rng: &mut Rng) -> P {
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.5 * rng.normal());
    }
    model
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` over every
/// parameter of `model`; returns the worst relative error.
pub fn max_param_grad_error<P: Parameters + Clone>(
    model: &P,
    analytic: &[Vec<f64>],
    h: f64,
    loss: impl Fn(&P) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(shapes.len(), analytic.len(), "gradient tensor count");
    for (ti, &len) in shapes.iter().enumerate() {
        assert_eq!(len, analytic[ti].len(), "gradient tensor {ti} length");
        for k in 0..len {
            let mut plus = model.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = model.clone();
            minus.tensors_mut()[ti][k] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[ti][k], numeric));
        }
    }
    worst
}

/// Same as [`max_param_grad_error`] for a gradient with respect to a matrix input.
pub fn max_input_grad_error(x: &Matrix, analytic: &Matrix, h: f64, loss: impl Fn(&Matrix) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + h);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - h);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.get(i, j), numeric));
        }
    }
    worst
}

/// `x_t` by composing single forward steps `x_k = √(1−β_k) x_{k−1} + √β_k z`.
pub fn forward_by_steps(sched: &NoiseSchedule, x0: &[f64], t: usize, rng: &mut Rng) -> Vec<f64> {
    let mut x = x0.to_vec();
    for k in 1..=t {
        let b = sched.beta(k);
        for v in x.iter_mut() {
            *v = (1.0 - b).sqrt() * *v + b.sqrt() * rng.normal();
        }
    }
    x
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Unbiased variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn column(m: &Matrix, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|i| m.get(i, j)).collect()
}
