mod common;

use common::mean;
use dtskit_core::cdpm::CdpmTrainConfig;
use dtskit_core::data::{generate_pair, ShiftSpec};
use dtskit_core::numerics::Matrix;
use dtskit_core::pipeline::{
    augment_source, retrain_final, run_dts, run_prefix, run_suffix, Ablation, DtsConfig, RetrainMode,
};
use dtskit_core::uda::{accuracy, UdaTrainConfig};
use dtskit_core::{Domain, DomainPair, Error, LabeledDataset};

fn small(seed: u64) -> DtsConfig {
    DtsConfig {
        seed,
        n_generated_per_class: 30,
        uda: UdaTrainConfig {
            steps: 300,
            ..UdaTrainConfig::default()
        },
        cdpm: CdpmTrainConfig {
            max_steps: 300,
            ..CdpmTrainConfig::default()
        },
        ..DtsConfig::default()
    }
}

fn pair(seed: u64) -> DomainPair {
    generate_pair(&ShiftSpec {
        seed,
        ..ShiftSpec::default()
    })
    .unwrap()
}

#[test]
fn equal_config_and_seed_give_identical_reports() {
    let (p, cfg) = (pair(1), small(1));
    let (a1, r1) = run_dts(&p, &cfg).unwrap();
    let (a2, r2) = run_dts(&p, &cfg).unwrap();
    assert_eq!(r1.to_text().unwrap(), r2.to_text().unwrap());
    assert_eq!(a1.generated, a2.generated);
    assert_eq!(a1.final_model, a2.final_model);
}

#[test]
fn generation_is_class_balanced_with_conditioning_labels() {
    let (p, cfg) = (pair(2), small(2));
    let (art, rep) = run_dts(&p, &cfg).unwrap();
    assert_eq!(rep.generated_histogram, vec![30, 30]);
    let labels = art.generated.labels().unwrap();
    for (c, block) in labels.chunks(30).enumerate() {
        assert!(block.iter().all(|&l| l == c), "block {c}");
    }
    assert_eq!(art.generated.domain(), Domain::Generated);
    assert_eq!(art.augmented.len(), p.source.len() + 60);
    assert_eq!(rep.bound.alpha, p.source.len() as f64 / (p.source.len() + 60) as f64);
    assert!(rep.traces.cdpm.is_some());
}

#[test]
fn no_original_source_trains_on_generated_only() {
    let cfg = DtsConfig {
        ablation: Ablation::NoOriginalSource,
        ..small(3)
    };
    let (art, _) = run_dts(&pair(3), &cfg).unwrap();
    assert_eq!(art.augmented.features(), art.generated.features());
    assert_eq!(art.augmented.labels(), art.generated.labels());
    assert_eq!(art.augmented.domain(), Domain::Augmented);
}

#[test]
fn no_generation_uses_source_and_pseudo_labels() {
    let p = pair(4);
    let cfg = DtsConfig {
        ablation: Ablation::NoGeneration,
        ..small(4)
    };
    let (art, rep) = run_dts(&p, &cfg).unwrap();
    assert!(art.cdpm.is_none() && rep.traces.cdpm.is_none());
    assert!(art.generated.is_empty());
    let expected = augment_source(&p.source, &art.pseudo.clone().with_domain(Domain::Generated)).unwrap();
    assert_eq!(art.augmented, expected);
    assert_eq!(art.augmented.len(), p.source.len() + p.target().len());
}

#[test]
fn zero_generated_rows_reduce_to_the_baseline() {
    let p = pair(5);
    let cfg = DtsConfig {
        n_generated_per_class: 0,
        ..small(5)
    };
    assert!(!cfg.needs_cdpm());
    let (art, rep) = run_dts(&p, &cfg).unwrap();
    assert!(art.cdpm.is_none());
    assert_eq!(art.final_model, art.pretrained);
    assert_eq!(rep.accuracy.final_, rep.accuracy.baseline);
    assert_eq!(rep.bound.alpha, 1.0);
    assert_eq!(art.augmented.features(), p.source.features());
}

#[test]
fn augment_source_concatenates() {
    let src = LabeledDataset::labeled(
        Matrix::zeros(100, 2),
        (0..100).map(|i| i % 2).collect(),
        2,
        Domain::Source,
    )
    .unwrap();
    let gen = LabeledDataset::labeled(Matrix::filled(60, 2, 1.0), vec![1; 60], 2, Domain::Generated).unwrap();
    let aug = augment_source(&src, &gen).unwrap();
    assert_eq!(aug.len(), 160);
    assert_eq!(aug.domain(), Domain::Augmented);
    assert_eq!(aug.label_histogram(), vec![50, 110]);
    assert_eq!(
        aug.select_rows(&(0..100).collect::<Vec<_>>()).features(),
        src.features()
    );

    let empty = LabeledDataset::labeled(Matrix::zeros(0, 2), vec![], 2, Domain::Generated).unwrap();
    let same = augment_source(&src, &empty).unwrap();
    assert_eq!(same.features(), src.features());
    assert_eq!(same.labels(), src.labels());

    let wide = LabeledDataset::labeled(Matrix::zeros(3, 3), vec![0; 3], 2, Domain::Generated).unwrap();
    assert!(matches!(augment_source(&src, &wide), Err(Error::Argument(_))));
    let three = LabeledDataset::labeled(Matrix::zeros(3, 2), vec![2; 3], 3, Domain::Generated).unwrap();
    assert!(matches!(augment_source(&src, &three), Err(Error::Argument(_))));
}

#[test]
fn retrain_modes() {
    let p = pair(6);
    let cfg = small(6);
    let prefix = run_prefix(&p, &cfg, false).unwrap();

    let zero = DtsConfig {
        retrain: RetrainMode::Finetune,
        uda: UdaTrainConfig {
            steps: 0,
            ..cfg.uda.clone()
        },
        ..cfg.clone()
    };
    let (m, _) = retrain_final(&p.source, p.target_view(), &zero, Some(&prefix.pretrained)).unwrap();
    assert_eq!(m, prefix.pretrained);

    let (a, _) = retrain_final(&p.source, p.target_view(), &cfg, None).unwrap();
    let (b, _) = retrain_final(&p.source, p.target_view(), &cfg, Some(&prefix.pretrained)).unwrap();
    assert_eq!(a, b);

    let finetune = DtsConfig {
        retrain: RetrainMode::Finetune,
        ..cfg
    };
    assert!(matches!(
        retrain_final(&p.source, p.target_view(), &finetune, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn from_scratch_not_worse_than_finetune() {
    let (mut scratch, mut finetune) = (vec![], vec![]);
    for seed in 0..10 {
        let p = pair(seed);
        let cfg = DtsConfig {
            seed,
            ..DtsConfig::default()
        };
        let prefix = run_prefix(&p, &cfg, true).unwrap();
        for (mode, out) in [
            (RetrainMode::FromScratch, &mut scratch),
            (RetrainMode::Finetune, &mut finetune),
        ] {
            let art = run_suffix(
                &p,
                &DtsConfig {
                    retrain: mode,
                    ..cfg.clone()
                },
                &prefix,
            )
            .unwrap();
            out.push(accuracy(&art.final_model, p.target_eval()).unwrap());
        }
    }
    let (s, f) = (mean(&scratch), mean(&finetune));
    assert!(s >= f - 0.01, "from scratch {s} vs finetune {f}");
}
