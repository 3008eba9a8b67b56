use super::NoisePredictor;
use crate::error::{Error, Result};
use crate::numerics::{chain_rngs, normal_rows, Matrix, Rng};
use crate::schedule::NoiseSchedule;

/// `n` ancestral chains conditioned on `label`. Chain `i` draws its initial
/// noise and every `z` from sub-stream `i` of `rng`.
pub fn ancestral_sample<P: NoisePredictor + ?Sized>(
    sched: &NoiseSchedule,
    model: &P,
    label: usize,
    n: usize,
    rng: &Rng,
) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Argument("need at least one chain".into()));
    }
    ancestral_sample_labels(sched, model, &vec![label; n], rng)
}

/// One ancestral chain per entry of `labels`.
pub fn ancestral_sample_labels<P: NoisePredictor + ?Sized>(
    sched: &NoiseSchedule,
    model: &P,
    labels: &[usize],
    rng: &Rng,
) -> Result<Matrix> {
    let mut chains = chain_rngs(rng, labels.len());
    let x_start = normal_rows(&mut chains, model.data_dim());
    ancestral_from(sched, model, labels, x_start, Some(&mut chains))
}

/// Runs the reverse chain from `x_start` at `t = T` down to `t = 1`:
///
/// `x_{t−1} = (x_t − β_t/√(1−ᾱ_t)·ε_θ(x_t, l, t)) / √α_t + σ_t·z`
///
/// with `z ~ N(0, I)` from `noise[i]` for row `i` when `t > 1`, and `z = 0`
/// at `t = 1` or when `noise` is `None`.
pub fn ancestral_from<P: NoisePredictor + ?Sized>(
    sched: &NoiseSchedule,
    model: &P,
    labels: &[usize],
    x_start: Matrix,
    mut noise: Option<&mut [Rng]>,
) -> Result<Matrix> {
    if x_start.rows() != labels.len() || x_start.cols() != model.data_dim() {
        return Err(Error::dim(
            "ancestral_from",
            format!("{}x{}", labels.len(), model.data_dim()),
            format!("{}x{}", x_start.rows(), x_start.cols()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.classes()) {
        return Err(Error::Label {
            label: bad,
            classes: model.classes(),
        });
    }
    if let Some(n) = noise.as_deref() {
        if n.len() != labels.len() {
            return Err(Error::dim("ancestral_from noise streams", labels.len(), n.len()));
        }
    }
    let mut x = x_start;
    let mut steps = vec![0; labels.len()];
    for t in (1..=sched.steps()).rev() {
        steps.fill(t);
        let eps = model.predict_eps(&x, labels, &steps)?;
        let k = sched.beta(t) / sched.solver_sigma(t);
        let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
        let sigma = sched.ancestral_sigma(t);
        for (i, row) in (0..x.rows()).map(|i| (i, eps.row(i))) {
            let xr = x.row_mut(i);
            for (xv, &e) in xr.iter_mut().zip(row) {
                *xv = inv_sqrt_alpha * (*xv - k * e);
            }
            if t > 1 {
                if let Some(chains) = noise.as_deref_mut() {
                    let r = &mut chains[i];
                    for xv in xr.iter_mut() {
                        *xv += sigma * r.normal();
                    }
                }
            }
        }
        if !x.is_finite() {
            return Err(Error::SamplingDiverged { step: t });
        }
    }
    Ok(x)
}
