//! The three-step procedure: pretrain a UDA classifier, fit the conditional
//! diffusion model on pseudo-labeled target rows, generate class-balanced
//! synthetic target data, and retrain on the augmented source.

mod report;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    a_distance_table, evaluate, load_cdpm_trace, load_uda_trace, save_cdpm_trace, save_uda_trace, AccuracySummary,
    RunReport, StageTraces, REPORT_FORMAT, REPORT_VERSION,
};

use crate::cdpm::{
    ancestral_sample, train_cdpm, CdpmCheckpoint, CdpmTrace, CdpmTrainConfig, ConditionalDenoiser, DenoiserConfig,
};
use crate::data::write_dataset;
use crate::dataset::{Domain, DomainPair, LabeledDataset, TargetView};
use crate::error::{Error, Result, StageExt};
use crate::numerics::{Activation, Matrix, Rng, Stream};
use crate::schedule::ScheduleSpec;
use crate::solver::{make_plan, multistep_sample, ModelForm};
use crate::uda::{pseudo_label, train_uda, RegularizerKind, UdaArch, UdaModel, UdaTrace, UdaTrainConfig};

macro_rules! kebab_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " '{}' (expected one of: {})"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

kebab_enum!(SamplerKind { Ancestral => "ancestral", DpmSolverPp => "dpm_solver_pp" });
kebab_enum!(RetrainMode { FromScratch => "from_scratch", Finetune => "finetune" });
kebab_enum!(Ablation {
    Full => "full",
    NoGeneration => "no_generation",
    NoOriginalSource => "no_original_source",
});

/// Width settings of the conditional denoiser; data dimension and class
/// count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSettings {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for DenoiserSettings {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtsConfig {
    pub seed: u64,
    pub n_generated_per_class: usize,
    pub sampler: SamplerKind,
    pub solver_steps: usize,
    pub model_form: ModelForm,
    pub retrain: RetrainMode,
    pub ablation: Ablation,
    pub regularizer: RegularizerKind,
    pub lambda: f64,
    pub arch: UdaArch,
    pub uda: UdaTrainConfig,
    pub schedule: ScheduleSpec,
    pub denoiser: DenoiserSettings,
    pub cdpm: CdpmTrainConfig,
}

impl Default for DtsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_generated_per_class: 200,
            sampler: SamplerKind::DpmSolverPp,
            solver_steps: 20,
            model_form: ModelForm::DataPrediction,
            retrain: RetrainMode::FromScratch,
            ablation: Ablation::Full,
            regularizer: RegularizerKind::Mmd,
            lambda: 1.0,
            arch: UdaArch::default(),
            uda: UdaTrainConfig::default(),
            schedule: ScheduleSpec::Linear {
                steps: 200,
                beta_start: 1e-4,
                beta_end: 0.05,
            },
            denoiser: DenoiserSettings::default(),
            cdpm: CdpmTrainConfig {
                max_steps: 3000,
                ..CdpmTrainConfig::default()
            },
        }
    }
}

impl DtsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.arch.feature_dim == 0 || self.arch.feature_hidden.contains(&0) || self.arch.head_hidden.contains(&0) {
            return Err(Error::Config("uda layer widths must be positive".into()));
        }
        if self.ablation == Ablation::NoOriginalSource && self.n_generated_per_class == 0 {
            return Err(Error::Config(
                "no_original_source trains on generated rows only and needs n_generated_per_class > 0".into(),
            ));
        }
        self.uda.validate()?;
        self.cdpm.validate()?;
        let sched = self.schedule.build()?;
        if self.sampler == SamplerKind::DpmSolverPp {
            make_plan(&sched, self.solver_steps, 0)?;
        }
        self.denoiser_config(1, 1).validate()
    }

    /// Whether this configuration trains the diffusion model at all.
    pub fn needs_cdpm(&self) -> bool {
        self.ablation != Ablation::NoGeneration && self.n_generated_per_class > 0
    }

    pub fn denoiser_config(&self, data_dim: usize, classes: usize) -> DenoiserConfig {
        DenoiserConfig {
            data_dim,
            classes,
            embed_dim: self.denoiser.embed_dim,
            hidden: self.denoiser.hidden.clone(),
            activation: self.denoiser.activation,
        }
    }
}

/// Step 1: a fresh classifier trained on the source with the target as the
/// unlabeled adaptation domain.
pub fn pretrain(source: &LabeledDataset, target: TargetView<'_>, cfg: &DtsConfig) -> Result<(UdaModel, UdaTrace)> {
    let mut model = UdaModel::new(
        source.dim(),
        source.classes(),
        &cfg.arch,
        cfg.regularizer,
        cfg.lambda,
        cfg.seed,
    )?;
    let trace = train_uda(source, target, &mut model, &cfg.uda, cfg.seed)?;
    Ok((model, trace))
}

/// Step 2: the denoiser trained on pseudo-labeled target rows.
pub fn train_cdpm_stage(pseudo: &LabeledDataset, cfg: &DtsConfig) -> Result<(CdpmCheckpoint, CdpmTrace)> {
    let schedule = cfg.schedule.build()?;
    let dcfg = cfg.denoiser_config(pseudo.dim(), pseudo.classes());
    let mut model = ConditionalDenoiser::new(dcfg, &mut Rng::new(cfg.seed, Stream::Init).keyed(0xcd))?;
    let trace = train_cdpm(&schedule, &mut model, pseudo, &cfg.cdpm, cfg.seed)?;
    Ok((CdpmCheckpoint { schedule, model }, trace))
}

/// Step 3a: `n_per_class` rows for every class, each carrying the label it
/// was conditioned on. Class `c` uses its own keyed sampling stream and chain
/// `i` its own sub-stream, so a larger count extends a smaller one.
pub fn generate(ck: &CdpmCheckpoint, n_per_class: usize, cfg: &DtsConfig) -> Result<LabeledDataset> {
    let classes = ck.model.config().classes;
    let dim = ck.model.config().data_dim;
    if n_per_class == 0 {
        return LabeledDataset::labeled(Matrix::zeros(0, dim), vec![], classes, Domain::Generated);
    }
    let plan = match cfg.sampler {
        SamplerKind::DpmSolverPp => Some(make_plan(&ck.schedule, cfg.solver_steps, 0)?),
        SamplerKind::Ancestral => None,
    };
    let blocks: Vec<Matrix> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let rng = Rng::new(cfg.seed, Stream::Sampling).keyed(c as u64);
            match &plan {
                Some(p) => multistep_sample(
                    &ck.schedule,
                    &ck.model,
                    &p.with_label(c),
                    n_per_class,
                    &rng,
                    cfg.model_form,
                ),
                None => ancestral_sample(&ck.schedule, &ck.model, c, n_per_class, &rng),
            }
        })
        .collect::<Result<_>>()?;
    let mut features = Matrix::zeros(0, dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for (c, block) in blocks.iter().enumerate() {
        features = features.vstack(block)?;
        labels.extend(std::iter::repeat_n(c, block.rows()));
    }
    LabeledDataset::labeled(features, labels, classes, Domain::Generated)
}

/// `D_ŝ = D_s ∪ D_g`, rows concatenated in that order.
pub fn augment_source(source: &LabeledDataset, generated: &LabeledDataset) -> Result<LabeledDataset> {
    let (ls, lg) = (source.require_labels()?, generated.require_labels()?);
    if !generated.is_empty() && generated.dim() != source.dim() {
        return Err(Error::Argument(format!(
            "generated rows have dimension {}, source has {}",
            generated.dim(),
            source.dim()
        )));
    }
    if !generated.is_empty() && generated.classes() != source.classes() {
        return Err(Error::Argument(format!(
            "generated set has {} classes, source has {}",
            generated.classes(),
            source.classes()
        )));
    }
    let features = if generated.is_empty() {
        source.features().clone()
    } else {
        source.features().vstack(generated.features())?
    };
    let labels = ls.iter().chain(lg).copied().collect();
    LabeledDataset::labeled(features, labels, source.classes(), Domain::Augmented)
}

/// Step 3b: the final classifier `g*` trained on the augmented source.
pub fn retrain_final(
    augmented: &LabeledDataset,
    target: TargetView<'_>,
    cfg: &DtsConfig,
    pretrained: Option<&UdaModel>,
) -> Result<(UdaModel, UdaTrace)> {
    let mut model = match (cfg.retrain, pretrained) {
        (RetrainMode::FromScratch, _) => UdaModel::new(
            augmented.dim(),
            augmented.classes(),
            &cfg.arch,
            cfg.regularizer,
            cfg.lambda,
            cfg.seed,
        )?,
        (RetrainMode::Finetune, Some(m)) => m.clone(),
        (RetrainMode::Finetune, None) => {
            return Err(Error::Config("finetune mode requires the pretrained classifier".into()))
        }
    };
    let trace = train_uda(augmented, target, &mut model, &cfg.uda, cfg.seed)?;
    Ok((model, trace))
}

/// Step-1 and step-2 outputs, which do not depend on the generated count.
#[derive(Debug, Clone)]
pub struct Prefix {
    pub pretrained: UdaModel,
    pub pretrain_trace: UdaTrace,
    pub pseudo: LabeledDataset,
    pub cdpm: Option<(CdpmCheckpoint, CdpmTrace)>,
}

/// Every intermediate of one run.
#[derive(Debug, Clone)]
pub struct DtsArtifacts {
    pub pretrained: UdaModel,
    pub pseudo: LabeledDataset,
    pub cdpm: Option<CdpmCheckpoint>,
    pub generated: LabeledDataset,
    pub augmented: LabeledDataset,
    pub final_model: UdaModel,
    pub traces: StageTraces,
}

pub fn run_prefix(pair: &DomainPair, cfg: &DtsConfig, with_cdpm: bool) -> Result<Prefix> {
    let (pretrained, pretrain_trace) = pretrain(&pair.source, pair.target_view(), cfg).stage("pretrain")?;
    let pseudo = pseudo_label(&pretrained, pair.target()).stage("pseudo-label")?;
    let cdpm = if with_cdpm {
        Some(train_cdpm_stage(&pseudo, cfg).stage("train-cdpm")?)
    } else {
        None
    };
    Ok(Prefix {
        pretrained,
        pretrain_trace,
        pseudo,
        cdpm,
    })
}

pub fn run_suffix(pair: &DomainPair, cfg: &DtsConfig, prefix: &Prefix) -> Result<DtsArtifacts> {
    let cdpm = if cfg.needs_cdpm() {
        Some(
            prefix
                .cdpm
                .as_ref()
                .ok_or_else(|| Error::Config("the diffusion model was not trained".into()))
                .stage("sample")?,
        )
    } else {
        None
    };
    let dim = pair.source.dim();
    let generated = match cdpm {
        Some((ck, _)) => generate(ck, cfg.n_generated_per_class, cfg).stage("sample")?,
        None => LabeledDataset::labeled(Matrix::zeros(0, dim), vec![], pair.classes(), Domain::Generated)?,
    };
    let augmented = match cfg.ablation {
        Ablation::Full => augment_source(&pair.source, &generated),
        Ablation::NoGeneration => augment_source(&pair.source, &prefix.pseudo.clone().with_domain(Domain::Generated)),
        Ablation::NoOriginalSource => Ok(generated.clone().with_domain(Domain::Augmented)),
    }
    .stage("augment")?;
    let (final_model, retrain_trace) =
        retrain_final(&augmented, pair.target_view(), cfg, Some(&prefix.pretrained)).stage("retrain")?;
    Ok(DtsArtifacts {
        pretrained: prefix.pretrained.clone(),
        pseudo: prefix.pseudo.clone(),
        cdpm: cdpm.map(|(ck, _)| ck.clone()),
        generated,
        augmented,
        final_model,
        traces: StageTraces {
            pretrain: prefix.pretrain_trace.clone(),
            cdpm: cdpm.map(|(_, t)| t.clone()),
            retrain: retrain_trace,
        },
    })
}

/// The whole procedure followed by evaluation.
pub fn run_dts(pair: &DomainPair, cfg: &DtsConfig) -> Result<(DtsArtifacts, RunReport)> {
    cfg.validate()?;
    let prefix = run_prefix(pair, cfg, cfg.needs_cdpm())?;
    let artifacts = run_suffix(pair, cfg, &prefix)?;
    let report = evaluate(pair, &artifacts, cfg).stage("evaluate")?;
    Ok((artifacts, report))
}

/// Writes every intermediate dataset and model under `dir`.
pub fn write_artifacts(artifacts: &DtsArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(&artifacts.pseudo, &dir.join("pseudo_labeled.csv"))?;
    write_dataset(&artifacts.generated, &dir.join("generated.csv"))?;
    write_dataset(&artifacts.augmented, &dir.join("augmented.csv"))?;
    artifacts.pretrained.save(&dir.join("pretrained.json"))?;
    artifacts.final_model.save(&dir.join("final.json"))?;
    if let Some(ck) = &artifacts.cdpm {
        ck.save(&dir.join("cdpm.json"))?;
    }
    artifacts.traces.save(dir)
}

/// One row of the generated-count sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_generated_per_class: usize,
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub final_accuracy: f64,
}

/// Runs every `(count, seed)` cell; the step-1 model and diffusion model are
/// shared across counts of one seed. `make_pair` builds the data for a seed.
pub fn sweep<F>(cfg: &DtsConfig, counts: &[usize], seeds: &[u64], make_pair: F) -> Result<Vec<SweepRow>>
where
    F: Fn(u64) -> Result<DomainPair> + Sync,
{
    if counts.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one count and one seed".into()));
    }
    let per_seed: Vec<Vec<SweepRow>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SweepRow>> {
            let base = DtsConfig { seed, ..cfg.clone() };
            let pair = make_pair(seed)?;
            let with_cdpm = counts.iter().any(|&n| {
                DtsConfig {
                    n_generated_per_class: n,
                    ..base.clone()
                }
                .needs_cdpm()
            });
            let prefix = run_prefix(&pair, &base, with_cdpm)?;
            counts
                .par_iter()
                .map(|&n| {
                    let cell = DtsConfig {
                        n_generated_per_class: n,
                        ..base.clone()
                    };
                    cell.validate()?;
                    let art = run_suffix(&pair, &cell, &prefix)?;
                    let acc = report::accuracies(pair.target_eval(), &art)?;
                    Ok(SweepRow {
                        n_generated_per_class: n,
                        seed,
                        baseline_accuracy: acc.0,
                        final_accuracy: acc.1,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<SweepRow> = per_seed.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.n_generated_per_class, r.seed));
    Ok(rows)
}
