//! Acceptance suite: one PASS/FAIL line per criterion, INFO lines for
//! measurements that do not gate the result. Exits nonzero on any FAIL.

mod common;

use std::time::Instant;

use common::{column, max_input_grad_error, max_param_grad_error, mean, median, variance, GaussianScore};
use dtskit_core::cdpm::{
    ancestral_sample, ddpm_loss_on_draw, ddpm_loss_value, draw_training_batch, eps_form_constant, eps_weight, q_sample,
    transition_kl_direct, ConditionalDenoiser, DenoiserConfig,
};
use dtskit_core::data::{generate_pair, ShiftFamily, ShiftSpec};
use dtskit_core::metrics::{random_directions, sliced_wasserstein_with};
use dtskit_core::numerics::{Activation, Matrix, Mlp, Rng, Stream};
use dtskit_core::pipeline::{
    evaluate, run_dts, run_prefix, run_suffix, sweep, train_cdpm_stage, Ablation, DtsConfig, RunReport,
};
use dtskit_core::schedule::NoiseSchedule;
use dtskit_core::solver::{make_plan, multistep_sample, ModelForm};
use dtskit_core::uda::{adversarial_reg, cross_entropy, median_bandwidths, mmd, RegularizerKind};
use dtskit_core::DomainPair;

struct Suite {
    failed: usize,
}

impl Suite {
    fn check(&mut self, id: &str, name: &str, f: impl FnOnce() -> (bool, String)) {
        let start = Instant::now();
        let (ok, detail) = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {id} {name}: {detail} [{secs:.1}s]",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failed += 1;
        }
    }
}

fn info(name: &str, detail: String) {
    println!("INFO {name}: {detail}");
}

// ---- 1

const H: f64 = 1e-5;

fn worst(errors: impl Iterator<Item = f64>) -> f64 {
    errors.fold(0.0, f64::max)
}

fn gradient_errors() -> Vec<(&'static str, f64)> {
    let n = 25;
    let mut rng = Rng::new(2024, Stream::Init);
    let act = |r: &mut Rng| {
        if r.below(2) == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        }
    };

    let mlp = worst((0..n).map(|_| {
        let widths: Vec<usize> = (0..rng.int_inclusive(2, 4)).map(|_| rng.int_inclusive(1, 5)).collect();
        let net = common::randomized(Mlp::new(&widths, act(&mut rng), &mut rng).unwrap(), &mut rng);
        let rows = rng.int_inclusive(1, 5);
        let x = rng.normal_matrix(rows, widths[0]);
        let up = rng.normal_matrix(rows, *widths.last().unwrap());
        let g = net.gradients(&x, &up).unwrap();
        let dot = |o: Matrix| o.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum::<f64>();
        max_param_grad_error(&net, &g.params, H, |m| dot(m.forward(&x).unwrap())).max(max_input_grad_error(
            &x,
            &g.input,
            H,
            |xx| dot(net.forward(xx).unwrap()),
        ))
    }));

    let ce = worst((0..n).map(|_| {
        let (rows, classes) = (rng.int_inclusive(1, 7), rng.int_inclusive(2, 5));
        let logits = rng.normal_matrix(rows, classes).scale(3.0);
        let labels: Vec<usize> = (0..rows).map(|_| rng.below(classes)).collect();
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        max_input_grad_error(&logits, &g, H, |l| cross_entropy(l, &labels).unwrap().0)
    }));

    let sched = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap();
    let ddpm = worst((0..n).map(|_| {
        let (dim, classes) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let cfg = DenoiserConfig {
            data_dim: dim,
            classes,
            embed_dim: 4,
            hidden: vec![rng.int_inclusive(2, 6), rng.int_inclusive(2, 6)],
            activation: act(&mut rng),
        };
        let model = common::randomized(ConditionalDenoiser::new(cfg, &mut rng).unwrap(), &mut rng);
        let x0 = rng.normal_matrix(5, dim);
        let labels: Vec<usize> = (0..5).map(|_| rng.below(classes)).collect();
        let draw = draw_training_batch(&sched, &x0, &mut rng);
        let (_, g) = ddpm_loss_on_draw(&model, &draw, &labels).unwrap();
        max_param_grad_error(&model, &g, H, |m| ddpm_loss_value(m, &draw, &labels).unwrap())
    }));

    let mmd_err = worst((0..n).map(|_| {
        let (m, k, d) = (
            rng.int_inclusive(2, 6),
            rng.int_inclusive(2, 6),
            rng.int_inclusive(1, 3),
        );
        let a = rng.normal_matrix(m, d);
        let b = rng.normal_matrix(k, d).map(|v| v + 0.5);
        let bw = median_bandwidths(&a, &b);
        let out = mmd(&a, &b, &bw).unwrap();
        max_input_grad_error(&a, &out.grad_a, H, |aa| mmd(aa, &b, &bw).unwrap().unbiased).max(max_input_grad_error(
            &b,
            &out.grad_b,
            H,
            |bb| mmd(&a, bb, &bw).unwrap().unbiased,
        ))
    }));

    let adv = worst((0..n).map(|_| {
        let disc = common::randomized(Mlp::new(&[3, 5, 1], act(&mut rng), &mut rng).unwrap(), &mut rng);
        let (ns, nt) = (rng.int_inclusive(1, 5), rng.int_inclusive(1, 5));
        let fs = rng.normal_matrix(ns, 3);
        let ft = rng.normal_matrix(nt, 3).map(|v| v + 1.0);
        let out = adversarial_reg(Some(&disc), &fs, &ft).unwrap();
        let e_disc = max_param_grad_error(&disc, &out.disc_grads, H, |dd| {
            adversarial_reg(Some(dd), &fs, &ft).unwrap().loss
        });
        // reversed feature gradients are the negated loss gradients
        let neg_s = out.reversed_src.scale(-1.0);
        let neg_t = out.reversed_tgt.scale(-1.0);
        let e_s = max_input_grad_error(&fs, &neg_s, H, |x| adversarial_reg(Some(&disc), x, &ft).unwrap().loss);
        let e_t = max_input_grad_error(&ft, &neg_t, H, |x| adversarial_reg(Some(&disc), &fs, x).unwrap().loss);
        e_disc.max(e_s).max(e_t)
    }));

    vec![
        ("mlp", mlp),
        ("cross_entropy", ce),
        ("ddpm_loss", ddpm),
        ("mmd", mmd_err),
        ("adversarial_reg", adv),
    ]
}

// ---- 2

fn forward_marginal() -> (bool, String) {
    let s = NoiseSchedule::linear(200, 1e-4, 0.05).unwrap();
    let big_t = s.steps();
    let x0 = [1.5, -0.5];
    let n = 100_000;
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for t in [1, big_t / 2, big_t] {
        let ab = s.alpha_bar(t);
        let var = 1.0 - ab;
        let mut rng = Rng::new(1, Stream::Noise).keyed(t as u64);
        let mut stepwise = Matrix::zeros(n, 2);
        for i in 0..n {
            stepwise
                .row_mut(i)
                .copy_from_slice(&common::forward_by_steps(&s, &x0, t, &mut rng));
        }
        let eps = Rng::new(2, Stream::Noise).keyed(t as u64).normal_matrix(n, 2);
        let closed = q_sample(&s, &Matrix::from_fn(n, 2, |_, j| x0[j]), t, &eps).unwrap();
        let (cs, cc) = (stepwise.covariance(), closed.covariance());
        let (ms, mc) = (stepwise.col_means(), closed.col_means());
        // two-sample standard errors of the mean, variance and covariance estimates
        let se_mean = (2.0 * var / n as f64).sqrt();
        let se_var = var * (4.0 / n as f64).sqrt();
        let se_cov = var * (2.0 / n as f64).sqrt();
        for j in 0..2 {
            let z = [
                (ms[j] - mc[j]).abs() / se_mean,
                (ms[j] - ab.sqrt() * x0[j]).abs() / (var / n as f64).sqrt(),
                (cs.get(j, j) - cc.get(j, j)).abs() / se_var,
            ];
            worst_z = z.iter().fold(worst_z, |a, &b| a.max(b));
        }
        worst_z = worst_z.max((cs.get(0, 1) - cc.get(0, 1)).abs() / se_cov);
        ok &= worst_z <= 3.0;
    }
    (
        ok,
        format!(
            "worst deviation {worst_z:.2} standard errors at t in {{1, {}, {big_t}}}, 1e5 draws",
            big_t / 2
        ),
    )
}

// ---- 3

fn vlb_dual_form() -> (bool, String) {
    let s = NoiseSchedule::linear(200, 1e-4, 0.05).unwrap();
    let mut rng = Rng::new(7, Stream::Eval).keyed(3);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..100 {
        let d = 1 + rng.below(4);
        let t = rng.int_inclusive(2, s.steps());
        let x0: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
        let eps: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let eps_hat: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let x_t = q_sample(
            &s,
            &Matrix::from_vec(1, d, x0.clone()).unwrap(),
            t,
            &Matrix::from_vec(1, d, eps.clone()).unwrap(),
        )
        .unwrap();
        let direct = transition_kl_direct(&s, t, &x0, x_t.row(0), &eps_hat);
        let sq: f64 = eps.iter().zip(&eps_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let form = eps_weight(&s, t) * sq + eps_form_constant(&s, t, d);
        worst_gap = worst_gap.max((direct - form).abs());
    }
    (
        worst_gap <= 1e-6,
        format!("max |direct - weighted| = {worst_gap:.2e} over 100 draws"),
    )
}

// ---- 4

fn moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    (0..x.cols())
        .map(|j| {
            let c = column(x, j);
            (mean(&c), variance(&c))
        })
        .unzip()
}

fn analytic_sampler() -> (bool, String) {
    let s = NoiseSchedule::linear(200, 1e-4, 0.1).unwrap();
    let (mu, sd) = (vec![1.0, -2.0], 0.5);
    let oracle = GaussianScore::new(&s, vec![mu.clone()], sd);
    let rng = Rng::new(3, Stream::Sampling);
    let mut ok = true;
    let mut parts = vec![];
    let samples = [
        (
            "ancestral T=200",
            ancestral_sample(&s, &oracle, 0, 10_000, &rng).unwrap(),
        ),
        (
            "dpm-solver++ M=10",
            multistep_sample(
                &s,
                &oracle,
                &make_plan(&s, 10, 0).unwrap(),
                10_000,
                &rng,
                ModelForm::DataPrediction,
            )
            .unwrap(),
        ),
    ];
    for (name, x) in samples {
        let (m, v) = moments(&x);
        let dm = (0..2).map(|j| (m[j] - mu[j]).abs() / sd).fold(0.0, f64::max);
        let dv = (0..2).map(|j| (v[j] - sd * sd).abs() / (sd * sd)).fold(0.0, f64::max);
        ok &= dm < 0.05 && dv < 0.1;
        parts.push(format!("{name}: mean off {dm:.3}s, variance off {:.1}%", 100.0 * dv));
    }
    (ok, parts.join("; "))
}

// ---- 5, 6

fn balanced(ck: &dtskit_core::cdpm::CdpmCheckpoint, per_class: usize, ancestral: bool, seed: u64) -> Matrix {
    let classes = ck.model.config().classes;
    let mut out = Matrix::zeros(0, ck.model.config().data_dim);
    for c in 0..classes {
        let rng = Rng::new(seed, Stream::Sampling).keyed(c as u64);
        let block = if ancestral {
            ancestral_sample(&ck.schedule, &ck.model, c, per_class, &rng).unwrap()
        } else {
            let plan = make_plan(&ck.schedule, 20, c).unwrap();
            multistep_sample(
                &ck.schedule,
                &ck.model,
                &plan,
                per_class,
                &rng,
                ModelForm::DataPrediction,
            )
            .unwrap()
        };
        out = out.vstack(&block).unwrap();
    }
    out
}

fn solver_consistency() -> (bool, String) {
    let pair = generate_pair(&ShiftSpec::default()).unwrap();
    let cfg = DtsConfig::default();
    let (ck, _) = train_cdpm_stage(&pair.source, &cfg).unwrap();
    let anc = balanced(&ck, 1000, true, 1);
    let sol = balanced(&ck, 1000, false, 2);
    let noise = Rng::new(3, Stream::Eval).normal_matrix(2000, 2);
    let dirs = random_directions(2, 50, &mut Rng::new(4, Stream::Eval));
    let d_sol = sliced_wasserstein_with(&sol, &anc, &dirs).unwrap();
    let d_noise = sliced_wasserstein_with(&anc, &noise, &dirs).unwrap();
    (
        d_sol <= d_noise / 5.0,
        format!(
            "SW(solver M=20, ancestral) {d_sol:.4} vs SW(ancestral, noise)/5 {:.4}",
            d_noise / 5.0
        ),
    )
}

fn conditional_control() -> (bool, String) {
    let spec = ShiftSpec {
        family: ShiftFamily::GaussianMixtureAffine {
            means: vec![vec![-1.5, 0.0], vec![1.5, 0.0]],
            scales: vec![0.5, 0.5],
            a: Matrix::from_rows(&[vec![0.866, -0.5], vec![0.5, 0.866]]).unwrap(),
            b: vec![0.5, 0.5],
        },
        n_target_eval: 1000,
        seed: 21,
        ..ShiftSpec::default()
    };
    let pair = generate_pair(&spec).unwrap();
    let target = pair.target_eval();
    let means: Vec<Vec<f64>> = (0..2).map(|c| target.class_rows(c).col_means()).collect();
    let (ck, _) = train_cdpm_stage(
        target,
        &DtsConfig {
            seed: 21,
            ..DtsConfig::default()
        },
    )
    .unwrap();
    let x = balanced(&ck, 1000, false, 5);
    let nearest = |row: &[f64]| {
        let d = |m: &[f64]| row.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        usize::from(d(&means[1]) < d(&means[0]))
    };
    let hits = (0..x.rows()).filter(|&i| nearest(x.row(i)) == i / 1000).count();
    let frac = hits as f64 / x.rows() as f64;
    (
        frac >= 0.95,
        format!(
            "{:.1}% of 2000 conditioned samples nearest their class mean",
            100.0 * frac
        ),
    )
}

// ---- 7 to 11

const SEEDS: std::ops::Range<u64> = 0..10;

fn default_pair(seed: u64) -> DomainPair {
    generate_pair(&ShiftSpec {
        seed,
        ..ShiftSpec::default()
    })
    .unwrap()
}

struct SeedRuns {
    full: RunReport,
    no_generation: f64,
    no_original_source: f64,
}

fn seed_runs(regularizer: RegularizerKind) -> Vec<SeedRuns> {
    SEEDS
        .map(|seed| {
            let pair = default_pair(seed);
            let cfg = DtsConfig {
                seed,
                regularizer,
                ..DtsConfig::default()
            };
            let prefix = run_prefix(&pair, &cfg, true).unwrap();
            let full = evaluate(&pair, &run_suffix(&pair, &cfg, &prefix).unwrap(), &cfg).unwrap();
            let ablate = |ablation| {
                let c = DtsConfig {
                    ablation,
                    ..cfg.clone()
                };
                evaluate(&pair, &run_suffix(&pair, &c, &prefix).unwrap(), &c)
                    .unwrap()
                    .accuracy
                    .final_
            };
            SeedRuns {
                no_generation: ablate(Ablation::NoGeneration),
                no_original_source: ablate(Ablation::NoOriginalSource),
                full,
            }
        })
        .collect()
}

fn distance_ordering(runs: &[SeedRuns]) -> (bool, String) {
    let pick = |f: fn(&RunReport) -> f64| median(&runs.iter().map(|r| f(&r.full)).collect::<Vec<_>>());
    let st = pick(|r| r.bound.proxy_d_source_target);
    let gt = pick(|r| r.bound.proxy_d_generated_target.unwrap());
    let at = pick(|r| r.bound.proxy_d_augmented_target);
    (
        gt < st && at < st,
        format!("median d(G,T) {gt:.3}, d(S^,T) {at:.3}, d(S,T) {st:.3}"),
    )
}

fn premise_count(runs: &[SeedRuns]) -> usize {
    runs.iter().filter(|r| r.full.bound.premise_holds == Some(true)).count()
}

fn gain(runs: &[SeedRuns]) -> (f64, f64) {
    let b = mean(&runs.iter().map(|r| r.full.accuracy.baseline).collect::<Vec<_>>());
    let f = mean(&runs.iter().map(|r| r.full.accuracy.final_).collect::<Vec<_>>());
    (b, f)
}

fn ablation_means(runs: &[SeedRuns]) -> (f64, f64, f64) {
    let m = |f: fn(&SeedRuns) -> f64| mean(&runs.iter().map(f).collect::<Vec<_>>());
    (
        m(|r| r.full.accuracy.final_),
        m(|r| r.no_generation),
        m(|r| r.no_original_source),
    )
}

fn sensitivity() -> (bool, String) {
    let counts = [0, 10, 25, 50, 100];
    let seeds: Vec<u64> = SEEDS.collect();
    let rows = sweep(&DtsConfig::default(), &counts, &seeds, |s| {
        generate_pair(&ShiftSpec {
            seed: s,
            ..ShiftSpec::default()
        })
    })
    .unwrap();
    let curve: Vec<f64> = counts
        .iter()
        .map(|&n| {
            mean(
                &rows
                    .iter()
                    .filter(|r| r.n_generated_per_class == n)
                    .map(|r| r.final_accuracy)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let minimum = curve[1..].iter().all(|&v| curve[0] <= v);
    let tail = (curve[4] - curve[3]).abs();
    let shown: Vec<String> = counts.iter().zip(&curve).map(|(n, v)| format!("{n}:{v:.4}")).collect();
    (
        minimum && tail < 0.005,
        format!(
            "seed-mean accuracy {}; last-two gap {:.2} points",
            shown.join(" "),
            100.0 * tail
        ),
    )
}

fn determinism() -> (bool, String) {
    let pair = default_pair(0);
    let cfg = DtsConfig::default();
    let a = run_dts(&pair, &cfg).unwrap().1.to_text().unwrap();
    let b = run_dts(&pair, &cfg).unwrap().1.to_text().unwrap();
    (
        a == b,
        format!("two runs, {} report bytes, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let mut suite = Suite { failed: 0 };
    suite.check("1", "gradient correctness", || {
        let errs = gradient_errors();
        let ok = errs.iter().all(|(_, e)| *e < 1e-4);
        let shown: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
        (
            ok,
            format!("worst relative error over 25 instances each: {}", shown.join(", ")),
        )
    });
    suite.check("2", "forward-marginal oracle", forward_marginal);
    suite.check("3", "VLB dual-formula equality", vlb_dual_form);
    suite.check("4", "analytic-score sampler oracle", analytic_sampler);
    suite.check("5", "solver/ancestral consistency", solver_consistency);
    suite.check("6", "conditional control", conditional_control);

    let start = Instant::now();
    let mmd_runs = seed_runs(RegularizerKind::Mmd);
    let adv_runs = seed_runs(RegularizerKind::Adversarial);
    info(
        "10-seed runs",
        format!("both regularizers, {:.1}s", start.elapsed().as_secs_f64()),
    );

    suite.check("7", "A-distance ordering (adversarial host)", || {
        distance_ordering(&adv_runs)
    });
    info("criterion 7 with the mmd host", distance_ordering(&mmd_runs).1);
    info(
        "premise d(G,T) < d(S,T) per seed",
        format!(
            "adversarial {}/10, mmd {}/10",
            premise_count(&adv_runs),
            premise_count(&mmd_runs)
        ),
    );
    suite.check("8", "end-to-end gain", || {
        let ((bm, fm), (ba, fa)) = (gain(&mmd_runs), gain(&adv_runs));
        (
            fm - bm >= 0.01 && fa - ba >= 0.01,
            format!("mmd {bm:.4} -> {fm:.4}, adversarial {ba:.4} -> {fa:.4}"),
        )
    });
    suite.check("9", "sensitivity shape", sensitivity);
    suite.check("10", "ablation ordering", || {
        let (full, ng, ns) = ablation_means(&mmd_runs);
        (
            full >= ng && full >= ns,
            format!("full {full:.4}, no_generation {ng:.4}, no_original_source {ns:.4}"),
        )
    });
    let (full, ng, ns) = ablation_means(&adv_runs);
    info(
        "criterion 10 with the adversarial host",
        format!("full {full:.4}, no_generation {ng:.4}, no_original_source {ns:.4}"),
    );
    suite.check("11", "determinism", determinism);

    println!("{} criteria failed", suite.failed);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
