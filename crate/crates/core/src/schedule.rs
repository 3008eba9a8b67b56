//! Discrete-time diffusion noise schedule.
//!
//! Two noise-scale conventions live here side by side:
//!
//! * the ancestral standard deviation `σ_t` of the reverse chain, with
//!   `σ_t² = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`, and
//! * the solver pair `α_t = √ᾱ_t`, `σ_t = √(1 − ᾱ_t)` used by the
//!   multistep sampler, with log-SNR `λ_t = log(α_t / σ_t)`.
//!
//! Steps are 1-based; `ᾱ₀ = 1` is stored so step-1 formulas need no special case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    ancestral_var: Vec<f64>,
    log_snr: Vec<f64>,
    source: ScheduleSpec,
}

/// The parameters a schedule was built from; enough to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Linear {
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    },
    Explicit {
        betas: Vec<f64>,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self {
            ScheduleSpec::Linear {
                steps,
                beta_start,
                beta_end,
            } => NoiseSchedule::linear(*steps, *beta_start, *beta_end),
            ScheduleSpec::Explicit { betas } => NoiseSchedule::from_betas(betas.clone()),
        }
    }
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule needs 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let span = beta_end - beta_start;
        let betas = (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect();
        let mut s = Self::from_betas(betas)?;
        s.source = ScheduleSpec::Linear {
            steps,
            beta_start,
            beta_end,
        };
        Ok(s)
    }

    /// Schedule from explicit, non-decreasing betas in `(0, 1)`. Allows `T = 1`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("every beta must lie in (0, 1)".into()));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("betas must be non-decreasing".into()));
        }
        let steps = betas.len();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        for &b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        let ancestral_var = (1..=steps)
            .map(|t| (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t - 1])
            .collect();
        let log_snr = (1..=steps)
            .map(|t| {
                let ab = alpha_bars[t];
                0.5 * (ab.ln() - (1.0 - ab).ln())
            })
            .collect();
        Ok(Self {
            source: ScheduleSpec::Explicit { betas: betas.clone() },
            betas,
            alpha_bars,
            ancestral_var,
            log_snr,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.source
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Ancestral `σ_t²` for `1 ≤ t ≤ T`; zero at `t = 1`.
    #[inline]
    pub fn ancestral_var(&self, t: usize) -> f64 {
        self.ancestral_var[t - 1]
    }

    #[inline]
    pub fn ancestral_sigma(&self, t: usize) -> f64 {
        self.ancestral_var[t - 1].sqrt()
    }

    /// Solver-convention `α_t = √ᾱ_t`.
    #[inline]
    pub fn solver_alpha(&self, t: usize) -> f64 {
        self.alpha_bars[t].sqrt()
    }

    /// Solver-convention `σ_t = √(1 − ᾱ_t)`.
    #[inline]
    pub fn solver_sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]).sqrt()
    }

    /// `λ_t = log(√ᾱ_t / √(1 − ᾱ_t))`.
    pub fn log_snr(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index {
                index: t,
                range: format!("1..={}", self.steps()),
            });
        }
        Ok(self.log_snr[t - 1])
    }

    /// The full λ table, index `t − 1`.
    pub fn log_snr_table(&self) -> &[f64] {
        &self.log_snr
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index {
                index: t,
                range: format!("1..={}", self.steps()),
            });
        }
        Ok(())
    }
}
