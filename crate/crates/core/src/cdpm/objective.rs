use std::f64::consts::PI;

use super::{ConditionalDenoiser, NoisePredictor};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::schedule::NoiseSchedule;

/// `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε` at one step for every row.
pub fn q_sample(sched: &NoiseSchedule, x0: &Matrix, t: usize, eps: &Matrix) -> Result<Matrix> {
    sched.check_step(t)?;
    x0.ensure_same_shape(eps, "q_sample")?;
    let (a, s) = (sched.solver_alpha(t), sched.solver_sigma(t));
    x0.zip_with(eps, "q_sample", |x, e| a * x + s * e)
}

/// [`q_sample`] with a separate step per row.
pub fn q_sample_rows(sched: &NoiseSchedule, x0: &Matrix, steps: &[usize], eps: &Matrix) -> Result<Matrix> {
    x0.ensure_same_shape(eps, "q_sample_rows")?;
    if steps.len() != x0.rows() {
        return Err(Error::dim("q_sample_rows steps", x0.rows(), steps.len()));
    }
    let mut out = Matrix::zeros(x0.rows(), x0.cols());
    for (i, &t) in steps.iter().enumerate() {
        sched.check_step(t)?;
        let (a, s) = (sched.solver_alpha(t), sched.solver_sigma(t));
        for ((o, &x), &e) in out.row_mut(i).iter_mut().zip(x0.row(i)).zip(eps.row(i)) {
            *o = a * x + s * e;
        }
    }
    Ok(out)
}

/// One draw of `(t, ε, x_t)` per row for the denoising objective.
#[derive(Debug, Clone)]
pub struct TrainingDraw {
    pub steps: Vec<usize>,
    pub eps: Matrix,
    pub x_t: Matrix,
}

/// Samples `t ~ Uniform{1..T}` and `ε ~ N(0, I)` per row of `x0`.
pub fn draw_training_batch(sched: &NoiseSchedule, x0: &Matrix, rng: &mut Rng) -> TrainingDraw {
    let steps: Vec<usize> = (0..x0.rows()).map(|_| rng.int_inclusive(1, sched.steps())).collect();
    let eps = rng.normal_matrix(x0.rows(), x0.cols());
    let x_t = q_sample_rows(sched, x0, &steps, &eps).expect("shapes agree by construction");
    TrainingDraw { steps, eps, x_t }
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::dim("labels", rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    Ok(())
}

/// Mean over rows of `‖ε − ε_θ(x_t, ȳ, t)‖²` on a fixed draw.
pub fn ddpm_loss_value<P: NoisePredictor + ?Sized>(model: &P, draw: &TrainingDraw, labels: &[usize]) -> Result<f64> {
    check_labels(labels, model.classes(), draw.x_t.rows())?;
    if labels.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let pred = model.predict_eps(&draw.x_t, labels, &draw.steps)?;
    Ok(pred.sub(&draw.eps)?.sq_norm() / labels.len() as f64)
}

/// Loss and exact parameter gradients on a fixed draw.
pub fn ddpm_loss_on_draw(
    model: &ConditionalDenoiser,
    draw: &TrainingDraw,
    labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_labels(labels, model.classes(), draw.x_t.rows())?;
    if labels.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n = labels.len() as f64;
    let cache = model.forward_cached(&draw.x_t, labels, &draw.steps)?;
    let resid = cache.output().sub(&draw.eps)?;
    let loss = resid.sq_norm() / n;
    let upstream = resid.scale(2.0 / n);
    let grads = model.backward(&cache, &upstream)?;
    Ok((loss, grads))
}

/// The conditional denoising objective: draws `(t, ε)` per row from `rng`,
/// returns the mean squared ε-prediction error and its gradients.
pub fn ddpm_loss(
    sched: &NoiseSchedule,
    model: &ConditionalDenoiser,
    x0: &Matrix,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_labels(labels, model.classes(), x0.rows())?;
    let draw = draw_training_batch(sched, x0, rng);
    ddpm_loss_on_draw(model, &draw, labels)
}

/// Per-term decomposition of the variational bound for a single sample, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct VlbReport {
    /// `KL(q(x_T|x₀) ‖ N(0, I))`.
    pub prior: f64,
    /// `L_{t−1}` for `t = 2..=T`, index `t − 2`.
    pub transitions: Vec<f64>,
    /// `−log p_θ(x₀|x₁)`.
    pub reconstruction: f64,
}

impl VlbReport {
    pub fn total(&self) -> f64 {
        self.prior + self.transitions.iter().sum::<f64>() + self.reconstruction
    }
}

/// Mean and variance of the forward posterior `q(x_{t−1} | x_t, x₀)`, `t ≥ 2`.
pub fn forward_posterior(sched: &NoiseSchedule, t: usize, x0: &[f64], x_t: &[f64]) -> (Vec<f64>, f64) {
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let beta = sched.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
    let ct = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let mean = x0.iter().zip(x_t).map(|(a, b)| c0 * a + ct * b).collect();
    (mean, (1.0 - ab_prev) / (1.0 - ab_t) * beta)
}

/// Mean of the reverse model `p_θ(x_{t−1} | x_t)` given its ε prediction.
pub fn reverse_mean(sched: &NoiseSchedule, t: usize, x_t: &[f64], eps_hat: &[f64]) -> Vec<f64> {
    let k = sched.beta(t) / sched.solver_sigma(t);
    let s = 1.0 / sched.alpha(t).sqrt();
    x_t.iter().zip(eps_hat).map(|(x, e)| s * (x - k * e)).collect()
}

/// `KL(N(μ_q, v_q I) ‖ N(μ_p, v_p I))` for isotropic Gaussians.
pub fn gaussian_kl(mu_q: &[f64], var_q: f64, mu_p: &[f64], var_p: f64) -> f64 {
    let d = mu_q.len() as f64;
    let sq: f64 = mu_q.iter().zip(mu_p).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * (d * ((var_p / var_q).ln() + var_q / var_p - 1.0) + sq / var_p)
}

/// `L_{t−1}` as the direct Gaussian KL between the forward posterior and the
/// reverse model with variance `σ_t²`, for one `(x₀, x_t, ε̂)`.
pub fn transition_kl_direct(sched: &NoiseSchedule, t: usize, x0: &[f64], x_t: &[f64], eps_hat: &[f64]) -> f64 {
    let (mu_q, var_q) = forward_posterior(sched, t, x0, x_t);
    let mu_p = reverse_mean(sched, t, x_t, eps_hat);
    gaussian_kl(&mu_q, var_q, &mu_p, sched.ancestral_var(t))
}

/// Weight `λ_t = β_t² / (2 σ_t² α_t (1 − ᾱ_t))` of the ε-form of `L_{t−1}`.
pub fn eps_weight(sched: &NoiseSchedule, t: usize) -> f64 {
    let b = sched.beta(t);
    b * b / (2.0 * sched.ancestral_var(t) * sched.alpha(t) * (1.0 - sched.alpha_bar(t)))
}

/// The θ-independent constant of the ε-form, from the two variances.
pub fn eps_form_constant(sched: &NoiseSchedule, t: usize, dim: usize) -> f64 {
    let var_q = (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * sched.beta(t);
    let var_p = sched.ancestral_var(t);
    0.5 * dim as f64 * ((var_p / var_q).ln() + var_q / var_p - 1.0)
}

/// `L_{t−1}` in its ε-form `λ_t‖ε − ε̂‖² + C′`.
pub fn transition_kl_eps_form(sched: &NoiseSchedule, t: usize, eps: &[f64], eps_hat: &[f64]) -> f64 {
    let sq: f64 = eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    eps_weight(sched, t) * sq + eps_form_constant(sched, t, eps.len())
}

/// Variational-bound decomposition for one sample `x0` (a single row),
/// Monte-Carlo averaging each term over `mc_samples` draws of `x_t`.
pub fn vlb<P: NoisePredictor + ?Sized>(
    sched: &NoiseSchedule,
    model: &P,
    x0: &[f64],
    label: usize,
    rng: &mut Rng,
    mc_samples: usize,
) -> Result<VlbReport> {
    if mc_samples == 0 {
        return Err(Error::Argument("mc_samples must be >= 1".into()));
    }
    if x0.len() != model.data_dim() {
        return Err(Error::dim("vlb", model.data_dim(), x0.len()));
    }
    check_labels(&[label], model.classes(), 1)?;
    let d = x0.len();
    let big_t = sched.steps();

    let ab_t = sched.alpha_bar(big_t);
    let prior = gaussian_kl(
        &x0.iter().map(|v| ab_t.sqrt() * v).collect::<Vec<_>>(),
        1.0 - ab_t,
        &vec![0.0; d],
        1.0,
    );

    let x0_rep = Matrix::from_fn(mc_samples, d, |_, j| x0[j]);
    let labels = vec![label; mc_samples];
    let mut transitions = Vec::with_capacity(big_t.saturating_sub(1));
    for t in 2..=big_t {
        let eps = rng.normal_matrix(mc_samples, d);
        let x_t = q_sample(sched, &x0_rep, t, &eps)?;
        let eps_hat = model.predict_eps(&x_t, &labels, &vec![t; mc_samples])?;
        let mean = (0..mc_samples)
            .map(|i| transition_kl_direct(sched, t, x0, x_t.row(i), eps_hat.row(i)))
            .sum::<f64>()
            / mc_samples as f64;
        transitions.push(mean);
    }

    // σ₁ = 0 under the ancestral convention, so the decoder uses variance β₁.
    let var0 = sched.beta(1);
    let eps = rng.normal_matrix(mc_samples, d);
    let x1 = q_sample(sched, &x0_rep, 1, &eps)?;
    let eps_hat = model.predict_eps(&x1, &labels, &vec![1; mc_samples])?;
    let mut reconstruction = 0.0;
    for i in 0..mc_samples {
        let mu = reverse_mean(sched, 1, x1.row(i), eps_hat.row(i));
        let sq: f64 = x0.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
        reconstruction += 0.5 * (d as f64 * (2.0 * PI * var0).ln() + sq / var0);
    }
    reconstruction /= mc_samples as f64;

    Ok(VlbReport {
        prior,
        transitions,
        reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Stream;

    struct Zero(usize);

    impl NoisePredictor for Zero {
        fn data_dim(&self) -> usize {
            self.0
        }
        fn classes(&self) -> usize {
            2
        }
        fn predict_eps(&self, x_t: &Matrix, _: &[usize], _: &[usize]) -> Result<Matrix> {
            Ok(Matrix::zeros(x_t.rows(), x_t.cols()))
        }
    }

    /// Teacher-forced: returns the exact noise that produced each row.
    struct Teacher {
        x0: Matrix,
        sched: NoiseSchedule,
    }

    impl NoisePredictor for Teacher {
        fn data_dim(&self) -> usize {
            self.x0.cols()
        }
        fn classes(&self) -> usize {
            2
        }
        fn predict_eps(&self, x_t: &Matrix, _: &[usize], steps: &[usize]) -> Result<Matrix> {
            Ok(Matrix::from_fn(x_t.rows(), x_t.cols(), |i, j| {
                let t = steps[i];
                (x_t.get(i, j) - self.sched.solver_alpha(t) * self.x0.get(i % self.x0.rows(), j))
                    / self.sched.solver_sigma(t)
            }))
        }
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let x0 = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let eps = Matrix::from_fn(3, 2, |i, j| 1.0 - (i * j) as f64);
        let zero = Matrix::zeros(3, 2);
        assert_eq!(q_sample(&s, &x0, 4, &zero).unwrap(), x0.scale(s.solver_alpha(4)));
        assert_eq!(q_sample(&s, &zero, 4, &eps).unwrap(), eps.scale(s.solver_sigma(4)));
        assert!(q_sample(&s, &x0, 11, &eps).is_err());
        assert!(q_sample(&s, &x0, 1, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn teacher_forced_loss_is_zero() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap();
        let mut rng = Rng::new(4, Stream::Noise);
        let x0 = rng.normal_matrix(16, 3);
        let draw = draw_training_batch(&s, &x0, &mut rng);
        let teacher = Teacher { x0, sched: s };
        let loss = ddpm_loss_value(&teacher, &draw, &[0; 16]).unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn label_out_of_range_rejected() {
        let s = NoiseSchedule::linear(5, 0.1, 0.2).unwrap();
        let mut rng = Rng::new(0, Stream::Noise);
        let draw = draw_training_batch(&s, &Matrix::zeros(2, 2), &mut rng);
        assert!(matches!(
            ddpm_loss_value(&Zero(2), &draw, &[0, 2]),
            Err(Error::Label { label: 2, .. })
        ));
    }

    #[test]
    fn perfect_model_has_zero_transition_terms() {
        let s = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let x0 = [0.4, -1.2];
        let teacher = Teacher {
            x0: Matrix::from_vec(1, 2, x0.to_vec()).unwrap(),
            sched: s.clone(),
        };
        let r = vlb(&s, &teacher, &x0, 0, &mut Rng::new(5, Stream::Eval), 8).unwrap();
        assert_eq!(r.transitions.len(), 19);
        assert!(r.transitions.iter().all(|&v| v.abs() < 1e-9), "{:?}", r.transitions);
        // decoder mean is exactly x0, so L_0 is the Gaussian normalizer
        let expect = 0.5 * 2.0 * (2.0 * PI * s.beta(1)).ln();
        assert!((r.reconstruction - expect).abs() < 1e-9);
    }

    #[test]
    fn kl_terms_are_nonnegative_for_a_bad_model() {
        let s = NoiseSchedule::linear(15, 1e-3, 0.2).unwrap();
        let r = vlb(&s, &Zero(3), &[1.0, 2.0, -0.5], 1, &mut Rng::new(6, Stream::Eval), 4).unwrap();
        assert!(r.prior >= 0.0);
        assert!(r.transitions.iter().all(|&v| v >= -1e-9));
        assert!(r.total() >= r.reconstruction);
        assert!(vlb(&s, &Zero(3), &[1.0, 2.0, -0.5], 1, &mut Rng::new(6, Stream::Eval), 0).is_err());
    }
}
