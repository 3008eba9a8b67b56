use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtskit_core::cdpm::CdpmCheckpoint;
use dtskit_core::config::RunConfig;
use dtskit_core::data::{generate_pair, read_dataset, write_dataset, ShiftSpec};
use dtskit_core::format::sig6;
use dtskit_core::metrics::proxy_distances;
use dtskit_core::numerics::{Matrix, Rng, Stream};
use dtskit_core::pipeline::{
    a_distance_table, augment_source, evaluate, generate, load_cdpm_trace, load_uda_trace, pretrain, retrain_final,
    run_dts, save_cdpm_trace, save_uda_trace, sweep, train_cdpm_stage, write_artifacts, Ablation, DtsArtifacts,
    DtsConfig, RetrainMode, RunReport, StageTraces,
};
use dtskit_core::uda::{pseudo_label, UdaModel};
use dtskit_core::{Domain, DomainPair, Error, LabeledDataset};

/// Diffusion-based target sampling for unsupervised domain adaptation.
#[derive(Debug, Parser)]
#[command(name = "dtskit", version)]
struct Cli {
    /// Config file of dotted `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, wins over file and environment.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Working directory holding inputs and outputs.
    #[arg(long, default_value = ".")]
    dir: PathBuf,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw the source, target and held-out target samples.
    GenData,
    /// Train the step-1 classifier and pseudo-label the target.
    Pretrain,
    /// Train the conditional diffusion model on the pseudo-labeled target.
    TrainCdpm,
    /// Draw the class-balanced generated target set.
    Sample,
    /// Build the augmented source.
    Augment,
    /// Train the final classifier on the augmented source.
    Retrain,
    /// Score every artifact and write report.json.
    Evaluate,
    /// Proxy A-distance table for the three pairings.
    Adist,
    /// A-distance and bound-term tables from report.json.
    Report,
    /// Every stage in sequence.
    Run,
    /// Final accuracy over generated counts and seeds.
    Sweep,
}

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PARSE: u8 = 4;
const EXIT_DIVERGED: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_OTHER;
    };
    match e.root() {
        Error::Config(_)
        | Error::Plan(_)
        | Error::Label { .. }
        | Error::Argument(_)
        | Error::Dimension { .. }
        | Error::Index { .. } => EXIT_USAGE,
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } | Error::Checkpoint(_) => EXIT_PARSE,
        Error::TrainingDiverged { .. } | Error::SamplingDiverged { .. } => EXIT_DIVERGED,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?),
        None => None,
    };
    Ok(RunConfig::load(text.as_deref(), std::env::vars(), &cli.sets).map_err(|e| e.in_stage("config"))?)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let rc = load_config(cli)?;
    if cli.dump_config {
        print!("{}", rc.dump());
        return Ok(());
    }
    let dir = cli.dir.as_path();
    if matches!(cli.command, Command::GenData | Command::Run | Command::Sweep) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let cfg = &rc.dts;
    let (stage, result) = match cli.command {
        Command::GenData => ("gen-data", gen_data(&rc.data, dir)),
        Command::Pretrain => ("pretrain", stage_pretrain(cfg, dir)),
        Command::TrainCdpm => ("train-cdpm", stage_train_cdpm(cfg, dir)),
        Command::Sample => ("sample", stage_sample(cfg, dir)),
        Command::Augment => ("augment", stage_augment(cfg, dir)),
        Command::Retrain => ("retrain", stage_retrain(cfg, dir)),
        Command::Evaluate => ("evaluate", stage_evaluate(cfg, dir)),
        Command::Adist => ("adist", stage_adist(cfg, dir)),
        Command::Report => ("report", stage_report(dir)),
        Command::Run => return run(&rc, dir),
        Command::Sweep => ("sweep", run_sweep(&rc, dir)),
    };
    Ok(result.map_err(|e| e.in_stage(stage))?)
}

type CoreResult<T> = dtskit_core::Result<T>;

fn write_pair(pair: &DomainPair, dir: &Path) -> CoreResult<()> {
    write_dataset(&pair.source, &dir.join("source.csv"))?;
    write_dataset(pair.target(), &dir.join("target.csv"))?;
    write_dataset(&pair.target_with_truth(), &dir.join("target_truth.csv"))?;
    write_dataset(pair.target_eval(), &dir.join("target_eval.csv"))
}

fn read_pair(dir: &Path) -> CoreResult<DomainPair> {
    DomainPair::new(
        read_dataset(&dir.join("source.csv"))?,
        read_dataset(&dir.join("target_truth.csv"))?,
        read_dataset(&dir.join("target_eval.csv"))?,
    )
}

fn read_source(dir: &Path) -> CoreResult<LabeledDataset> {
    read_dataset(&dir.join("source.csv"))
}

/// A labeled file whose class count is widened to the source's, since files
/// only imply `max label + 1`.
fn read_labeled(dir: &Path, name: &str, classes: usize) -> CoreResult<LabeledDataset> {
    read_dataset(&dir.join(name))?.with_classes(classes)
}

fn gen_data(spec: &ShiftSpec, dir: &Path) -> CoreResult<()> {
    write_pair(&generate_pair(spec)?, dir)
}

fn stage_pretrain(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    cfg.validate()?;
    let source = read_source(dir)?;
    let target = read_dataset(&dir.join("target.csv"))?.with_domain(Domain::Target);
    let (model, trace) = pretrain(&source, target.unlabeled_view(), cfg)?;
    let pseudo = pseudo_label(&model, &target)?;
    model.save(&dir.join("pretrained.json"))?;
    write_dataset(&pseudo, &dir.join("pseudo_labeled.csv"))?;
    save_uda_trace(&trace, dir, "pretrain")
}

fn stage_train_cdpm(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    cfg.validate()?;
    let classes = read_source(dir)?.classes();
    let pseudo = read_labeled(dir, "pseudo_labeled.csv", classes)?;
    let (ck, trace) = train_cdpm_stage(&pseudo, cfg)?;
    ck.save(&dir.join("cdpm.json"))?;
    save_cdpm_trace(&trace, dir)
}

fn stage_sample(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    cfg.validate()?;
    let generated = if cfg.needs_cdpm() {
        generate(
            &CdpmCheckpoint::load(&dir.join("cdpm.json"))?,
            cfg.n_generated_per_class,
            cfg,
        )?
    } else {
        let source = read_source(dir)?;
        LabeledDataset::labeled(
            Matrix::zeros(0, source.dim()),
            vec![],
            source.classes(),
            Domain::Generated,
        )?
    };
    write_dataset(&generated, &dir.join("generated.csv"))
}

fn stage_augment(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    cfg.validate()?;
    let source = read_source(dir)?;
    let classes = source.classes();
    let augmented = match cfg.ablation {
        Ablation::Full => augment_source(&source, &read_labeled(dir, "generated.csv", classes)?)?,
        Ablation::NoGeneration => augment_source(
            &source,
            &read_labeled(dir, "pseudo_labeled.csv", classes)?.with_domain(Domain::Generated),
        )?,
        Ablation::NoOriginalSource => read_labeled(dir, "generated.csv", classes)?.with_domain(Domain::Augmented),
    };
    write_dataset(&augmented, &dir.join("augmented.csv"))
}

fn stage_retrain(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    cfg.validate()?;
    let classes = read_source(dir)?.classes();
    let augmented = read_labeled(dir, "augmented.csv", classes)?;
    let target = read_dataset(&dir.join("target.csv"))?;
    let pretrained = match cfg.retrain {
        RetrainMode::Finetune => Some(UdaModel::load(&dir.join("pretrained.json"))?),
        RetrainMode::FromScratch => None,
    };
    let (model, trace) = retrain_final(&augmented, target.unlabeled_view(), cfg, pretrained.as_ref())?;
    model.save(&dir.join("final.json"))?;
    save_uda_trace(&trace, dir, "retrain")
}

/// With no generated rows, the full ablation and a from-scratch retrain, step
/// 3 retrains the step-1 classifier on the source with the same seed, so
/// `evaluate` can follow `pretrain` directly: absent step-3 files are taken
/// to be the step-1 outputs.
fn degenerate(cfg: &DtsConfig) -> bool {
    cfg.n_generated_per_class == 0 && cfg.ablation == Ablation::Full && cfg.retrain == RetrainMode::FromScratch
}

fn load_artifacts(cfg: &DtsConfig, pair: &DomainPair, dir: &Path) -> CoreResult<DtsArtifacts> {
    let classes = pair.classes();
    let fallback = |name: &str| degenerate(cfg) && !dir.join(name).exists();
    let pretrained = UdaModel::load(&dir.join("pretrained.json"))?;
    let pretrain_trace = load_uda_trace(dir, "pretrain")?;
    let generated = if fallback("generated.csv") {
        LabeledDataset::labeled(Matrix::zeros(0, pair.source.dim()), vec![], classes, Domain::Generated)?
    } else {
        read_labeled(dir, "generated.csv", classes)?
    };
    let augmented = if fallback("augmented.csv") {
        augment_source(&pair.source, &generated)?
    } else {
        read_labeled(dir, "augmented.csv", classes)?
    };
    let (final_model, retrain_trace) = if fallback("final.json") && fallback("trace_retrain.json") {
        (pretrained.clone(), pretrain_trace.clone())
    } else {
        (
            UdaModel::load(&dir.join("final.json"))?,
            load_uda_trace(dir, "retrain")?,
        )
    };
    let cdpm = if cfg.needs_cdpm() {
        Some(load_cdpm_trace(dir)?)
    } else {
        None
    };
    Ok(DtsArtifacts {
        pretrained,
        pseudo: read_labeled(dir, "pseudo_labeled.csv", classes)?,
        cdpm: if cfg.needs_cdpm() {
            Some(CdpmCheckpoint::load(&dir.join("cdpm.json"))?)
        } else {
            None
        },
        generated,
        augmented,
        final_model,
        traces: StageTraces {
            pretrain: pretrain_trace,
            cdpm,
            retrain: retrain_trace,
        },
    })
}

fn stage_evaluate(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    cfg.validate()?;
    let pair = read_pair(dir)?;
    let art = load_artifacts(cfg, &pair, dir)?;
    let report = evaluate(&pair, &art, cfg)?;
    report.save(&dir.join("report.json"))?;
    print_summary(&report);
    Ok(())
}

fn stage_adist(cfg: &DtsConfig, dir: &Path) -> CoreResult<()> {
    let pair = read_pair(dir)?;
    let classes = pair.classes();
    let generated = read_labeled(dir, "generated.csv", classes)?;
    let augmented = read_labeled(dir, "augmented.csv", classes)?;
    let mut rng = Rng::new(cfg.seed, Stream::Eval);
    let (st, gt, at) = proxy_distances(
        pair.source.features(),
        pair.target_eval().features(),
        generated.features(),
        augmented.features(),
        &mut rng,
    )?;
    let table = a_distance_table(st, gt, at);
    std::fs::write(dir.join("adist.csv"), &table).map_err(|e| Error::Io {
        path: dir.join("adist.csv"),
        source: e,
    })?;
    print!("{table}");
    Ok(())
}

fn bound_table(report: &RunReport) -> String {
    let b = &report.bound;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), sig6);
    let premise = b.premise_holds.map_or("n/a".to_string(), |p| p.to_string());
    format!(
        "term,value\nsource_risk,{}\ngenerated_risk,{}\naugmented_risk,{}\nalpha,{}\npremise_holds,{premise}\nconstant_c,{}\n",
        sig6(b.source_risk),
        opt(b.generated_risk),
        sig6(b.augmented_risk),
        sig6(b.alpha),
        b.constant_c
    )
}

fn stage_report(dir: &Path) -> CoreResult<()> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
    let report = RunReport::from_text(&text)?;
    let tables = format!("{}\n{}", report.a_distance_table(), bound_table(&report));
    std::fs::write(dir.join("bound.csv"), bound_table(&report)).map_err(|e| Error::Io {
        path: dir.join("bound.csv"),
        source: e,
    })?;
    print!("{tables}");
    Ok(())
}

fn run(rc: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    let pair = generate_pair(&rc.data).map_err(|e| e.in_stage("gen-data"))?;
    write_pair(&pair, dir).map_err(|e| e.in_stage("gen-data"))?;
    let (art, report) = run_dts(&pair, &rc.dts)?;
    write_artifacts(&art, dir).map_err(|e| e.in_stage("write"))?;
    report
        .save(&dir.join("report.json"))
        .map_err(|e| e.in_stage("evaluate"))?;
    print_summary(&report);
    Ok(())
}

fn run_sweep(rc: &RunConfig, dir: &Path) -> CoreResult<()> {
    let counts = &rc.sweep.counts;
    let rows = sweep(&rc.dts, counts, &rc.sweep.seeds, |seed| {
        generate_pair(&ShiftSpec {
            seed,
            ..rc.data.clone()
        })
    })?;
    let mut csv = String::from("n_generated_per_class,seed,baseline_accuracy,final_accuracy\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.n_generated_per_class,
            r.seed,
            sig6(r.baseline_accuracy),
            sig6(r.final_accuracy)
        ));
    }
    let mut summary = String::from("n_generated_per_class,mean_final_accuracy\n");
    for &n in counts {
        let acc: Vec<f64> = rows
            .iter()
            .filter(|r| r.n_generated_per_class == n)
            .map(|r| r.final_accuracy)
            .collect();
        summary.push_str(&format!("{n},{}\n", sig6(acc.iter().sum::<f64>() / acc.len() as f64)));
    }
    for (name, text) in [("sweep.csv", &csv), ("sweep_summary.csv", &summary)] {
        std::fs::write(dir.join(name), text).map_err(|e| Error::Io {
            path: dir.join(name),
            source: e,
        })?;
    }
    print!("{summary}");
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!(
        "baseline accuracy {}  final accuracy {}",
        sig6(report.accuracy.baseline),
        sig6(report.accuracy.final_)
    );
    print!("{}", report.a_distance_table());
}
