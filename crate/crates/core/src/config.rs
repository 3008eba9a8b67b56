//! Run configuration: dotted `key = value` files, `DTSKIT_` environment
//! overrides, and `--set key=value` overrides, applied in that order.
//!
//! Environment names map to keys by lowercasing and turning `__` into `.`,
//! e.g. `DTSKIT_DTS__N_GENERATED_PER_CLASS` → `dts.n_generated_per_class`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::data::{ShiftFamily, ShiftSpec};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix};
use crate::pipeline::DtsConfig;
use crate::schedule::ScheduleSpec;

pub const ENV_PREFIX: &str = "DTSKIT_";

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "seed",
    "data.family",
    "data.rotation_degrees",
    "data.means",
    "data.scales",
    "data.affine_a",
    "data.affine_b",
    "data.noise",
    "data.n_source",
    "data.n_target",
    "data.n_target_eval",
    "dts.n_generated_per_class",
    "dts.sampler",
    "dts.solver_steps",
    "dts.model_form",
    "dts.retrain",
    "dts.ablation",
    "uda.regularizer",
    "uda.lambda",
    "uda.steps",
    "uda.batch_size",
    "uda.lr",
    "uda.momentum",
    "uda.warmup",
    "uda.trace_every",
    "uda.feature_hidden",
    "uda.feature_dim",
    "uda.head_hidden",
    "uda.disc_hidden",
    "uda.activation",
    "schedule.T",
    "schedule.beta_start",
    "schedule.beta_end",
    "cdpm.embed_dim",
    "cdpm.hidden",
    "cdpm.activation",
    "cdpm.max_steps",
    "cdpm.batch_size",
    "cdpm.lr",
    "cdpm.momentum",
    "cdpm.clip_norm",
    "cdpm.ma_window",
    "cdpm.patience",
    "cdpm.min_rel_improvement",
    "cdpm.trace_every",
    "sweep.counts",
    "sweep.seeds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            counts: vec![0, 10, 25, 50, 100],
            seeds: (0..10).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: ShiftSpec,
    pub dts: DtsConfig,
    pub sweep: SweepSettings,
}

impl RunConfig {
    /// Defaults for every key except the seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self {
            seed,
            data: ShiftSpec::default(),
            dts: DtsConfig::default(),
            sweep: SweepSettings::default(),
        };
        c.set_seed(seed);
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.dts.seed = seed;
    }

    /// Merges the three sources (later wins) and validates the result.
    pub fn load<I>(file_text: Option<&str>, env: I, sets: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut map = BTreeMap::new();
        if let Some(text) = file_text {
            for (k, v) in parse_lines(text)? {
                map.insert(k, v);
            }
        }
        for (name, value) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let dotted = rest.to_lowercase().replace("__", ".");
            let key = KEYS
                .iter()
                .find(|k| k.to_lowercase() == dotted)
                .ok_or_else(|| Error::Config(format!("environment variable {name} names no config key")))?;
            map.insert((*key).to_string(), value);
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{s}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key '{k}'")));
        }
        let seed_text = map.get("seed").ok_or_else(|| {
            Error::Config("`seed` is mandatory; set it in the config file, DTSKIT_SEED or --set seed=N".into())
        })?;
        let mut c = Self::with_seed(parse_value("seed", seed_text)?);
        let get = |k: &str| map.get(k).map(String::as_str);

        macro_rules! set {
            ($key:literal, $target:expr) => {
                if let Some(v) = get($key) {
                    $target = parse_value($key, v)?;
                }
            };
            ($key:literal, $target:expr, $parse:expr) => {
                if let Some(v) = get($key) {
                    $target = $parse(v).map_err(|e: Error| Error::Config(format!("{}: {}", $key, e)))?;
                }
            };
        }

        // data family and its parameters
        let family = get("data.family").unwrap_or("two_moons_rotation");
        let current = default_family_params();
        let mut degrees = current.0;
        let (mut means, mut scales, mut a, mut b) = (current.1, current.2, current.3, current.4);
        set!("data.rotation_degrees", degrees);
        set!("data.means", means, parse_rows);
        set!("data.scales", scales, parse_list::<f64>);
        set!("data.affine_a", a, parse_rows);
        set!("data.affine_b", b, parse_list::<f64>);
        c.data.family = match family {
            "two_moons_rotation" => ShiftFamily::TwoMoonsRotation { degrees },
            "gaussian_mixture_affine" => {
                let d = a.len();
                let flat: Vec<f64> = a.concat();
                if a.iter().any(|r| r.len() != d) {
                    return Err(Error::Config("data.affine_a must be square".into()));
                }
                ShiftFamily::GaussianMixtureAffine {
                    means,
                    scales,
                    a: Matrix::from_vec(d, d, flat)?,
                    b,
                }
            }
            other => return Err(Error::Config(format!("unknown data.family '{other}'"))),
        };
        set!("data.noise", c.data.noise);
        set!("data.n_source", c.data.n_source);
        set!("data.n_target", c.data.n_target);
        set!("data.n_target_eval", c.data.n_target_eval);

        let d = &mut c.dts;
        set!("dts.n_generated_per_class", d.n_generated_per_class);
        set!("dts.sampler", d.sampler);
        set!("dts.solver_steps", d.solver_steps);
        set!("dts.model_form", d.model_form);
        set!("dts.retrain", d.retrain);
        set!("dts.ablation", d.ablation);
        set!("uda.regularizer", d.regularizer);
        set!("uda.lambda", d.lambda);
        set!("uda.steps", d.uda.steps);
        set!("uda.batch_size", d.uda.batch_size);
        set!("uda.lr", d.uda.lr);
        set!("uda.momentum", d.uda.momentum);
        set!("uda.warmup", d.uda.warmup);
        set!("uda.trace_every", d.uda.trace_every);
        set!("uda.feature_hidden", d.arch.feature_hidden, parse_list::<usize>);
        set!("uda.feature_dim", d.arch.feature_dim);
        set!("uda.head_hidden", d.arch.head_hidden, parse_list::<usize>);
        set!("uda.disc_hidden", d.arch.disc_hidden, parse_list::<usize>);
        set!("uda.activation", d.arch.activation, parse_activation);

        let (mut steps, mut beta_start, mut beta_end) = match &d.schedule {
            ScheduleSpec::Linear {
                steps,
                beta_start,
                beta_end,
            } => (*steps, *beta_start, *beta_end),
            ScheduleSpec::Explicit { .. } => unreachable!("defaults use a linear schedule"),
        };
        set!("schedule.T", steps);
        set!("schedule.beta_start", beta_start);
        set!("schedule.beta_end", beta_end);
        d.schedule = ScheduleSpec::Linear {
            steps,
            beta_start,
            beta_end,
        };

        set!("cdpm.embed_dim", d.denoiser.embed_dim);
        set!("cdpm.hidden", d.denoiser.hidden, parse_list::<usize>);
        set!("cdpm.activation", d.denoiser.activation, parse_activation);
        set!("cdpm.max_steps", d.cdpm.max_steps);
        set!("cdpm.batch_size", d.cdpm.batch_size);
        set!("cdpm.lr", d.cdpm.lr);
        set!("cdpm.momentum", d.cdpm.momentum);
        set!("cdpm.clip_norm", d.cdpm.clip_norm);
        set!("cdpm.ma_window", d.cdpm.ma_window);
        set!("cdpm.patience", d.cdpm.patience);
        set!("cdpm.min_rel_improvement", d.cdpm.min_rel_improvement);
        set!("cdpm.trace_every", d.cdpm.trace_every);

        set!("sweep.counts", c.sweep.counts, parse_list::<usize>);
        set!("sweep.seeds", c.sweep.seeds, parse_seeds);

        c.validate()?;
        Ok(c)
    }

    /// Range checks on every value.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.dts.validate()?;
        if self.dts.denoiser.hidden.is_empty() {
            return Err(Error::Config("cdpm.hidden needs at least one layer".into()));
        }
        if self.sweep.counts.is_empty() || self.sweep.seeds.is_empty() {
            return Err(Error::Config("sweep.counts and sweep.seeds must be nonempty".into()));
        }
        Ok(())
    }

    /// Every key with its current value, as `key = value` lines that
    /// [`RunConfig::load`] reads back to an equal configuration.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let d = &self.dts;
        put("seed", self.seed.to_string());
        let (degrees, means, scales, a, b) = match &self.data.family {
            ShiftFamily::TwoMoonsRotation { degrees } => {
                let def = default_family_params();
                put("data.family", "two_moons_rotation".into());
                (*degrees, def.1, def.2, def.3, def.4)
            }
            ShiftFamily::GaussianMixtureAffine { means, scales, a, b } => {
                put("data.family", "gaussian_mixture_affine".into());
                let rows = a.iter_rows().map(<[f64]>::to_vec).collect();
                (
                    default_family_params().0,
                    means.clone(),
                    scales.clone(),
                    rows,
                    b.clone(),
                )
            }
        };
        put("data.rotation_degrees", fmt_f(degrees));
        put("data.means", fmt_rows(&means));
        put("data.scales", fmt_list(&scales));
        put("data.affine_a", fmt_rows(&a));
        put("data.affine_b", fmt_list(&b));
        put("data.noise", fmt_f(self.data.noise));
        put("data.n_source", self.data.n_source.to_string());
        put("data.n_target", self.data.n_target.to_string());
        put("data.n_target_eval", self.data.n_target_eval.to_string());
        put("dts.n_generated_per_class", d.n_generated_per_class.to_string());
        put("dts.sampler", d.sampler.to_string());
        put("dts.solver_steps", d.solver_steps.to_string());
        put("dts.model_form", d.model_form.to_string());
        put("dts.retrain", d.retrain.to_string());
        put("dts.ablation", d.ablation.to_string());
        put("uda.regularizer", d.regularizer.to_string());
        put("uda.lambda", fmt_f(d.lambda));
        put("uda.steps", d.uda.steps.to_string());
        put("uda.batch_size", d.uda.batch_size.to_string());
        put("uda.lr", fmt_f(d.uda.lr));
        put("uda.momentum", fmt_f(d.uda.momentum));
        put("uda.warmup", d.uda.warmup.to_string());
        put("uda.trace_every", d.uda.trace_every.to_string());
        put("uda.feature_hidden", fmt_list(&d.arch.feature_hidden));
        put("uda.feature_dim", d.arch.feature_dim.to_string());
        put("uda.head_hidden", fmt_list(&d.arch.head_hidden));
        put("uda.disc_hidden", fmt_list(&d.arch.disc_hidden));
        put("uda.activation", fmt_activation(d.arch.activation));
        if let ScheduleSpec::Linear {
            steps,
            beta_start,
            beta_end,
        } = &d.schedule
        {
            put("schedule.T", steps.to_string());
            put("schedule.beta_start", fmt_f(*beta_start));
            put("schedule.beta_end", fmt_f(*beta_end));
        }
        put("cdpm.embed_dim", d.denoiser.embed_dim.to_string());
        put("cdpm.hidden", fmt_list(&d.denoiser.hidden));
        put("cdpm.activation", fmt_activation(d.denoiser.activation));
        put("cdpm.max_steps", d.cdpm.max_steps.to_string());
        put("cdpm.batch_size", d.cdpm.batch_size.to_string());
        put("cdpm.lr", fmt_f(d.cdpm.lr));
        put("cdpm.momentum", fmt_f(d.cdpm.momentum));
        put("cdpm.clip_norm", fmt_f(d.cdpm.clip_norm));
        put("cdpm.ma_window", d.cdpm.ma_window.to_string());
        put("cdpm.patience", d.cdpm.patience.to_string());
        put("cdpm.min_rel_improvement", fmt_f(d.cdpm.min_rel_improvement));
        put("cdpm.trace_every", d.cdpm.trace_every.to_string());
        put("sweep.counts", fmt_list(&self.sweep.counts));
        put("sweep.seeds", fmt_list(&self.sweep.seeds));
        m
    }

    pub fn dump(&self) -> String {
        let m = self.to_map();
        KEYS.iter()
            .filter_map(|k| m.get(*k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got '{line}'"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

type FamilyParams = (f64, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>);

fn default_family_params() -> FamilyParams {
    (
        30.0,
        vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
        vec![0.5, 0.5],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![5.0, 0.0],
    )
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{v}': {e}")))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::Config(format!("cannot parse '{s}': {e}"))))
        .collect()
}

/// Rows separated by `;`, entries by `,`.
fn parse_rows(v: &str) -> Result<Vec<Vec<f64>>> {
    v.split(';').map(parse_list).collect()
}

/// A list like `0,3,7` or an inclusive range `0-9`.
fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.trim().split_once('-') {
        let (a, b): (u64, u64) = (parse_value("seed range", a)?, parse_value("seed range", b)?);
        if a > b {
            return Err(Error::Config(format!("empty seed range '{v}'")));
        }
        return Ok((a..=b).collect());
    }
    parse_list(v)
}

fn parse_activation(v: &str) -> Result<Activation> {
    match v.trim() {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(Error::Config(format!("unknown activation '{other}'"))),
    }
}

fn fmt_activation(a: Activation) -> String {
    match a {
        Activation::Tanh => "tanh".into(),
        Activation::Relu => "relu".into(),
    }
}

/// Shortest round-trip form.
fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn fmt_rows(rows: &[Vec<f64>]) -> String {
    rows.iter()
        .map(|r| r.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}
