//! Class-conditional denoising diffusion model: forward noising, the
//! conditional ε-prediction objective, the variational-bound decomposition,
//! the ancestral reverse sampler, training, and checkpoints.

mod denoiser;
mod objective;
mod sampler;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use denoiser::{time_embedding, ConditionalDenoiser, DenoiserCache, DenoiserConfig, NoisePredictor};
pub use objective::{
    ddpm_loss, ddpm_loss_on_draw, ddpm_loss_value, draw_training_batch, eps_form_constant, eps_weight,
    forward_posterior, gaussian_kl, q_sample, q_sample_rows, reverse_mean, transition_kl_direct,
    transition_kl_eps_form, vlb, TrainingDraw, VlbReport,
};
pub use sampler::{ancestral_from, ancestral_sample, ancestral_sample_labels};
pub use train::{train_cdpm, CdpmTrace, CdpmTracePoint, CdpmTrainConfig};

use crate::error::Result;
use crate::schedule::{NoiseSchedule, ScheduleSpec};

pub const CHECKPOINT_FORMAT: &str = "dtskit-cdpm";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained denoiser together with the schedule it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct CdpmCheckpoint {
    pub schedule: NoiseSchedule,
    pub model: ConditionalDenoiser,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    schedule: ScheduleSpec,
    denoiser: DenoiserConfig,
    backbone: crate::numerics::Mlp,
    label_embedding: crate::numerics::Matrix,
    projections: Vec<crate::numerics::Matrix>,
}

impl CdpmCheckpoint {
    pub fn to_text(&self) -> Result<String> {
        let body = CheckpointBody {
            schedule: self.schedule.spec().clone(),
            denoiser: self.model.config().clone(),
            backbone: self.model.backbone().clone(),
            label_embedding: self.model.label_embedding().clone(),
            projections: self.model.projections().to_vec(),
        };
        crate::checkpoint::to_string(CHECKPOINT_FORMAT, CHECKPOINT_VERSION, &body)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body: CheckpointBody = crate::checkpoint::from_str(CHECKPOINT_FORMAT, CHECKPOINT_VERSION, text)?;
        Ok(Self {
            schedule: body.schedule.build()?,
            model: ConditionalDenoiser::from_parts(
                body.denoiser,
                body.backbone,
                body.label_embedding,
                body.projections,
            )?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| crate::error::Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::Error::io(path, e))?;
        Self::from_text(&text)
    }
}
