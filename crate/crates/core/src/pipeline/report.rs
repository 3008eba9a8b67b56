use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DtsArtifacts, DtsConfig};
use crate::cdpm::CdpmTrace;
use crate::checkpoint;
use crate::dataset::{DomainPair, LabeledDataset};
use crate::error::{Error, Result};
use crate::format::{round_floats, sig6};
use crate::metrics::{bound_report, BoundReport};
use crate::numerics::{Rng, Stream};
use crate::uda::{accuracy, UdaTrace};

pub const REPORT_FORMAT: &str = "dtskit-run-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTraces {
    pub pretrain: UdaTrace,
    pub cdpm: Option<CdpmTrace>,
    pub retrain: UdaTrace,
}

const UDA_TRACE_FORMAT: &str = "dtskit-uda-trace";
const CDPM_TRACE_FORMAT: &str = "dtskit-cdpm-trace";
const TRACE_VERSION: u32 = 1;

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `trace_<stage>.json` (exact) and `trace_<stage>.csv` (for reading).
pub fn save_uda_trace(trace: &UdaTrace, dir: &Path, stage: &str) -> Result<()> {
    checkpoint::save(
        &dir.join(format!("trace_{stage}.json")),
        UDA_TRACE_FORMAT,
        TRACE_VERSION,
        trace,
    )?;
    write_text(&dir.join(format!("trace_{stage}.csv")), trace.to_csv())
}

pub fn load_uda_trace(dir: &Path, stage: &str) -> Result<UdaTrace> {
    checkpoint::load(
        &dir.join(format!("trace_{stage}.json")),
        UDA_TRACE_FORMAT,
        TRACE_VERSION,
    )
}

pub fn save_cdpm_trace(trace: &CdpmTrace, dir: &Path) -> Result<()> {
    checkpoint::save(&dir.join("trace_cdpm.json"), CDPM_TRACE_FORMAT, TRACE_VERSION, trace)?;
    let mut s = String::from("step,loss,loss_ma\n");
    for p in &trace.points {
        s.push_str(&format!("{},{},{}\n", p.step, sig6(p.loss), sig6(p.loss_ma)));
    }
    write_text(&dir.join("trace_cdpm.csv"), s)
}

pub fn load_cdpm_trace(dir: &Path) -> Result<CdpmTrace> {
    checkpoint::load(&dir.join("trace_cdpm.json"), CDPM_TRACE_FORMAT, TRACE_VERSION)
}

impl StageTraces {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_uda_trace(&self.pretrain, dir, "pretrain")?;
        if let Some(t) = &self.cdpm {
            save_cdpm_trace(t, dir)?;
        }
        save_uda_trace(&self.retrain, dir, "retrain")
    }

    /// The diffusion trace is read only when `with_cdpm` is set.
    pub fn load(dir: &Path, with_cdpm: bool) -> Result<Self> {
        Ok(Self {
            pretrain: load_uda_trace(dir, "pretrain")?,
            cdpm: if with_cdpm { Some(load_cdpm_trace(dir)?) } else { None },
            retrain: load_uda_trace(dir, "retrain")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// Step-1 classifier on the held-out target sample.
    pub baseline: f64,
    /// Final classifier on the held-out target sample.
    #[serde(rename = "final")]
    pub final_: f64,
    pub baseline_train_target: f64,
    pub final_train_target: f64,
    /// Agreement of pseudo-labels with the hidden target labels.
    pub pseudo_label: f64,
    pub final_source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: DtsConfig,
    pub accuracy: AccuracySummary,
    pub n_source: usize,
    pub n_generated: usize,
    pub n_augmented: usize,
    pub generated_histogram: Vec<usize>,
    pub pseudo_histogram: Vec<usize>,
    pub bound: BoundReport,
    pub traces: StageTraces,
}

impl RunReport {
    /// Versioned JSON with every non-integer number at 6 significant digits.
    pub fn to_text(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        round_floats(&mut v);
        checkpoint::to_string(REPORT_FORMAT, REPORT_VERSION, &v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, self.to_text()?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        checkpoint::from_str(REPORT_FORMAT, REPORT_VERSION, text)
    }

    /// Table of the three proxy distances, one pairing per row.
    pub fn a_distance_table(&self) -> String {
        let b = &self.bound;
        a_distance_table(
            b.proxy_d_source_target,
            b.proxy_d_generated_target,
            b.proxy_d_augmented_target,
        )
    }
}

/// `source-target`, `generated-target`, `augmented-target` rows; an absent
/// generated distance prints as `n/a`.
pub fn a_distance_table(source_target: f64, generated_target: Option<f64>, augmented_target: f64) -> String {
    format!(
        "pairing,proxy_a_distance\nsource-target,{}\ngenerated-target,{}\naugmented-target,{}\n",
        sig6(source_target),
        generated_target.map_or("n/a".to_string(), sig6),
        sig6(augmented_target)
    )
}

/// `(baseline, final)` accuracy on `eval`.
pub(crate) fn accuracies(eval: &LabeledDataset, art: &DtsArtifacts) -> Result<(f64, f64)> {
    Ok((accuracy(&art.pretrained, eval)?, accuracy(&art.final_model, eval)?))
}

pub fn evaluate(pair: &DomainPair, art: &DtsArtifacts, cfg: &DtsConfig) -> Result<RunReport> {
    let truth = pair.target_with_truth();
    let (baseline, final_) = accuracies(pair.target_eval(), art)?;
    let pseudo_hits = art
        .pseudo
        .require_labels()?
        .iter()
        .zip(truth.require_labels()?)
        .filter(|(a, b)| a == b)
        .count();
    let mut rng = Rng::new(cfg.seed, Stream::Eval);
    Ok(RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        accuracy: AccuracySummary {
            baseline,
            final_,
            baseline_train_target: accuracy(&art.pretrained, &truth)?,
            final_train_target: accuracy(&art.final_model, &truth)?,
            pseudo_label: pseudo_hits as f64 / truth.len() as f64,
            final_source: accuracy(&art.final_model, &pair.source)?,
        },
        n_source: pair.source.len(),
        n_generated: art.generated.len(),
        n_augmented: art.augmented.len(),
        generated_histogram: histogram(&art.generated, pair.classes())?,
        pseudo_histogram: histogram(&art.pseudo, pair.classes())?,
        bound: bound_report(pair, &art.generated, &art.augmented, &art.final_model, &mut rng)?,
        traces: StageTraces {
            cdpm: if cfg.needs_cdpm() {
                art.traces.cdpm.clone()
            } else {
                None
            },
            ..art.traces.clone()
        },
    })
}

fn histogram(ds: &LabeledDataset, classes: usize) -> Result<Vec<usize>> {
    let mut h = vec![0; classes];
    for &l in ds.require_labels()? {
        *h.get_mut(l).ok_or(Error::Label { label: l, classes })? += 1;
    }
    Ok(h)
}
