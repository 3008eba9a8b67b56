//! Multistep second-order fast sampler on a log-SNR-uniform time grid.
//!
//! With `h_i = λ_{t_i} − λ_{t_{i−1}}` and `r_i = h_{i−1}/h_i`, each step is
//!
//! ```text
//! W_i     = (1 + 1/(2 r_i))·m(x_{t_{i−1}}) − (h_i / (2 h_{i−1}))·m(x_{t_{i−2}})
//! x_{t_i} = (σ_{t_i}/σ_{t_{i−1}})·x_{t_{i−1}} − α_{t_i}(e^{−h_i} − 1)·W_i
//! ```
//!
//! where `α = √ᾱ`, `σ = √(1−ᾱ)` and `m` is the model output in the form
//! selected by [`ModelForm`]. The first transition uses `W_1 = m(x_{t_0})`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cdpm::NoisePredictor;
use crate::error::{Error, Result};
use crate::numerics::{chain_rngs, normal_rows, Matrix, Rng};
use crate::schedule::NoiseSchedule;

/// What the update extrapolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelForm {
    /// The ε prediction itself is plugged into `W_i`.
    AsPrinted,
    /// ε is converted to the data prediction `x̂₀ = (x − σ_t ε̂)/α_t` first.
    DataPrediction,
}

impl fmt::Display for ModelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelForm::AsPrinted => "as-printed",
            ModelForm::DataPrediction => "data-prediction",
        })
    }
}

impl FromStr for ModelForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(ModelForm::AsPrinted),
            "data-prediction" => Ok(ModelForm::DataPrediction),
            other => Err(Error::Config(format!(
                "unknown solver model form '{other}' (expected as-printed or data-prediction)"
            ))),
        }
    }
}

/// A strictly decreasing grid of diffusion steps from `T` to `1` for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerPlan {
    grid: Vec<usize>,
    lambdas: Vec<f64>,
    label: usize,
}

impl SamplerPlan {
    /// Number of transitions `M`.
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// `t_0 = T, …, t_M = 1`.
    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn with_label(&self, label: usize) -> Self {
        Self { label, ..self.clone() }
    }

    /// `λ_{t_i}` along the grid.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `h_i` for `i = 1..=M` (index `i − 1`).
    pub fn step_sizes(&self) -> Vec<f64> {
        self.lambdas.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Index (0-based, i.e. `t − 1`) of the table entry closest to `target`.
/// The table is strictly decreasing.
fn nearest_step(table: &[f64], target: f64) -> usize {
    let idx = table.partition_point(|&l| l > target);
    if idx == 0 {
        return 0;
    }
    if idx == table.len() {
        return table.len() - 1;
    }
    if (table[idx - 1] - target).abs() <= (table[idx] - target).abs() {
        idx - 1
    } else {
        idx
    }
}

/// Builds an `M`-step grid uniform in log-SNR between `λ_T` and `λ_1`,
/// rounded to the nearest discrete step and deduplicated.
///
/// When `M + 1 ≥ T` the grid saturates to every step `T, T−1, …, 1`.
pub fn make_plan(sched: &NoiseSchedule, m: usize, label: usize) -> Result<SamplerPlan> {
    let big_t = sched.steps();
    if m < 2 {
        return Err(Error::Plan(format!("the second-order sampler needs M >= 2, got {m}")));
    }
    if m > big_t {
        return Err(Error::Plan(format!("M = {m} exceeds the {big_t} available steps")));
    }
    let table = sched.log_snr_table();
    let mut grid: Vec<usize> = if m + 1 >= big_t {
        (1..=big_t).rev().collect()
    } else {
        let (lo, hi) = (table[big_t - 1], table[0]);
        (0..=m)
            .map(|i| {
                let target = lo + (hi - lo) * i as f64 / m as f64;
                nearest_step(table, target) + 1
            })
            .collect()
    };
    grid.dedup();
    if grid.len() < 3 {
        return Err(Error::Plan(format!(
            "only {} distinct steps after rounding; M = {m} is too large for this schedule",
            grid.len()
        )));
    }
    debug_assert!(grid.windows(2).all(|w| w[0] > w[1]));
    let lambdas = grid.iter().map(|&t| table[t - 1]).collect();
    Ok(SamplerPlan { grid, lambdas, label })
}

/// `n` samples of class `plan.label()`, each chain's initial noise drawn from
/// sub-stream `i` of `rng`. No noise is injected after initialization.
pub fn multistep_sample<P: NoisePredictor + ?Sized>(
    sched: &NoiseSchedule,
    model: &P,
    plan: &SamplerPlan,
    n: usize,
    rng: &Rng,
    form: ModelForm,
) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Argument("need at least one chain".into()));
    }
    let mut chains = chain_rngs(rng, n);
    let x_start = normal_rows(&mut chains, model.data_dim());
    multistep_from(sched, model, plan, x_start, form)
}

/// The deterministic solver from a given `x_{t_0}`.
pub fn multistep_from<P: NoisePredictor + ?Sized>(
    sched: &NoiseSchedule,
    model: &P,
    plan: &SamplerPlan,
    x_start: Matrix,
    form: ModelForm,
) -> Result<Matrix> {
    if plan.label >= model.classes() {
        return Err(Error::Label {
            label: plan.label,
            classes: model.classes(),
        });
    }
    if x_start.cols() != model.data_dim() {
        return Err(Error::dim("multistep_from", model.data_dim(), x_start.cols()));
    }
    if plan.grid[0] > sched.steps() {
        return Err(Error::Plan("plan was built for a longer schedule".into()));
    }
    let n = x_start.rows();
    let labels = vec![plan.label; n];
    let evaluate = |x: &Matrix, t: usize| -> Result<Matrix> {
        let eps = model.predict_eps(x, &labels, &vec![t; n])?;
        Ok(match form {
            ModelForm::AsPrinted => eps,
            ModelForm::DataPrediction => {
                let (a, s) = (sched.solver_alpha(t), sched.solver_sigma(t));
                x.zip_with(&eps, "data prediction", |xv, e| (xv - s * e) / a)?
            }
        })
    };

    let h = plan.step_sizes();
    let mut x = x_start;
    let mut prev_output: Option<Matrix> = None;
    for i in 1..=plan.steps() {
        let (t_prev, t_cur) = (plan.grid[i - 1], plan.grid[i]);
        let out = evaluate(&x, t_prev)?;
        let w = match &prev_output {
            None => out.clone(),
            Some(older) => {
                let r = h[i - 2] / h[i - 1];
                let c_new = 1.0 + 1.0 / (2.0 * r);
                let c_old = -h[i - 1] / (2.0 * h[i - 2]);
                assert!((c_new + c_old - 1.0).abs() < 1e-9, "multistep weights must sum to one");
                out.zip_with(older, "multistep", |a, b| c_new * a + c_old * b)?
            }
        };
        let ratio = sched.solver_sigma(t_cur) / sched.solver_sigma(t_prev);
        let coef = sched.solver_alpha(t_cur) * ((-h[i - 1]).exp() - 1.0);
        x = x.zip_with(&w, "multistep", |xv, wv| ratio * xv - coef * wv)?;
        if !x.is_finite() {
            return Err(Error::SamplingDiverged { step: t_cur });
        }
        prev_output = Some(out);
    }
    Ok(x)
}
