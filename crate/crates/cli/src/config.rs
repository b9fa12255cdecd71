//! Flat key=value experiment configs with section headers.
//!
//! Unknown sections or keys are hard errors: a misspelled hyperparameter
//! must fail loudly instead of silently running with a default. The emitted
//! run manifest reuses this format (plus a `[meta]` section), so any
//! manifest is itself a valid config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Train,
    Align,
    Sample,
    Eval,
    SweepSteps,
    SweepGuidance,
    SweepNoiseLevel,
    AblateNormalization,
    AblateClipping,
    AutoguideUncond,
    AutoguideCond,
    DualCondition,
    CrossModel,
    RescueWorst,
    BaselineBestOfN,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Self::Train,
            "align" => Self::Align,
            "sample" => Self::Sample,
            "eval" => Self::Eval,
            "sweep_steps" => Self::SweepSteps,
            "sweep_guidance" => Self::SweepGuidance,
            "sweep_noise_level" => Self::SweepNoiseLevel,
            "ablate_normalization" => Self::AblateNormalization,
            "ablate_clipping" => Self::AblateClipping,
            "autoguide_uncond" => Self::AutoguideUncond,
            "autoguide_cond" => Self::AutoguideCond,
            "dual_condition" => Self::DualCondition,
            "cross_model" => Self::CrossModel,
            "rescue_worst" => Self::RescueWorst,
            "baseline_best_of_n" => Self::BaselineBestOfN,
            other => bail!("unknown experiment kind '{other}'"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Align => "align",
            Self::Sample => "sample",
            Self::Eval => "eval",
            Self::SweepSteps => "sweep_steps",
            Self::SweepGuidance => "sweep_guidance",
            Self::SweepNoiseLevel => "sweep_noise_level",
            Self::AblateNormalization => "ablate_normalization",
            Self::AblateClipping => "ablate_clipping",
            Self::AutoguideUncond => "autoguide_uncond",
            Self::AutoguideCond => "autoguide_cond",
            Self::DualCondition => "dual_condition",
            Self::CrossModel => "cross_model",
            Self::RescueWorst => "rescue_worst",
            Self::BaselineBestOfN => "baseline_best_of_n",
        }
    }

    /// Which CLI subcommand runs this kind.
    pub fn subcommand(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Align => "align",
            Self::Sample => "sample",
            Self::SweepSteps | Self::SweepGuidance | Self::SweepNoiseLevel => "sweep",
            Self::AblateNormalization | Self::AblateClipping => "ablate",
            _ => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    Ring8,
    Mix1d,
    Mix2d,
}

impl DatasetName {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ring8" => Self::Ring8,
            "mix1d" => Self::Mix1d,
            "mix2d" => Self::Mix2d,
            other => bail!("unknown dataset '{other}' (expected ring8, mix1d, or mix2d)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ring8 => "ring8",
            Self::Mix1d => "mix1d",
            Self::Mix2d => "mix2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Vp,
    Rf,
}

impl ModelFamily {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "vp" => Self::Vp,
            "rf" => Self::Rf,
            other => bail!("unknown model family '{other}' (expected vp or rf)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Vp => "vp",
            Self::Rf => "rf",
        }
    }
}

/// A model reference: a checkpoint path or the analytic oracle of the
/// configured dataset (`oracle:vp` / `oracle:rf`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Checkpoint(PathBuf),
    Oracle(ModelFamily),
}

impl ModelRef {
    fn parse(s: &str) -> Result<Self> {
        if let Some(fam) = s.strip_prefix("oracle:") {
            return Ok(ModelRef::Oracle(ModelFamily::parse(fam)?));
        }
        Ok(ModelRef::Checkpoint(PathBuf::from(s)))
    }

    fn render(&self) -> String {
        match self {
            ModelRef::Checkpoint(p) => p.display().to_string(),
            ModelRef::Oracle(f) => format!("oracle:{}", f.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,

    // [dataset]
    pub dataset: DatasetName,
    pub train_samples: usize,
    pub data_seed: u64,

    // [models]
    pub model: Option<ModelRef>,
    pub model_d0: Option<ModelRef>,
    pub align_model: Option<ModelRef>,

    // [train]
    pub family: ModelFamily,
    pub hidden: Vec<usize>,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub uncond_dropout_prob: f64,
    pub budget_ratio: Option<f64>,

    // [nlg]
    pub nlg_steps: usize,
    pub clip_threshold: f64,
    pub extra_noise_var: f64,
    pub renormalize: bool,
    pub align_condition: Option<usize>,

    // [sampler]
    pub sampler_kind: String,
    pub inference_steps: usize,
    pub guidance_mode: String,
    pub guidance_weight: f64,

    // [eval]
    pub count: usize,
    pub quantile: f64,
    pub candidates: usize,
    pub classifier_steps: usize,
    pub step_grid: Vec<usize>,
    pub weight_grid: Vec<f64>,
    pub noise_grid: Vec<f64>,
    pub rescue_steps: Vec<usize>,
    pub gen_condition: Option<usize>,
    pub autoguide_weight: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Eval,
            seeds: vec![0],
            out: PathBuf::from("out"),
            jobs: 1,
            dataset: DatasetName::Ring8,
            train_samples: 4096,
            data_seed: 42,
            model: None,
            model_d0: None,
            align_model: None,
            family: ModelFamily::Vp,
            hidden: vec![128, 128, 128],
            train_steps: 4000,
            batch_size: 64,
            learning_rate: 0.02,
            uncond_dropout_prob: 0.1,
            budget_ratio: None,
            nlg_steps: 20,
            clip_threshold: 0.5,
            extra_noise_var: 0.001,
            renormalize: true,
            align_condition: None,
            sampler_kind: "ancestral_vp".into(),
            inference_steps: 20,
            guidance_mode: "none".into(),
            guidance_weight: 1.0,
            count: 512,
            quantile: 0.1,
            candidates: 16,
            classifier_steps: 1500,
            step_grid: vec![0, 2, 5, 10, 20, 30, 40],
            weight_grid: vec![1.0, 2.5, 5.0, 7.5],
            noise_grid: vec![0.0, 0.001, 0.0025, 0.005, 0.01],
            rescue_steps: vec![5, 10],
            gen_condition: None,
            autoguide_weight: 1.4,
        }
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T>>(s: &str, f: F) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| f(p.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut seen_kind = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("{source}:{}: malformed section header", lineno + 1))?;
                section = name.trim().to_string();
                match section.as_str() {
                    "experiment" | "dataset" | "models" | "train" | "nlg" | "sampler"
                    | "eval" | "meta" => {}
                    other => bail!("{source}:{}: unknown section [{other}]", lineno + 1),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{source}:{}: expected key = value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let ctx = || format!("{source}:{}: key '{key}'", lineno + 1);
            match (section.as_str(), key) {
                ("experiment", "kind") => {
                    cfg.kind = ExperimentKind::parse(value).with_context(ctx)?;
                    seen_kind = true;
                }
                ("experiment", "seeds") => {
                    cfg.seeds = parse_list(value, |p| Ok(p.parse::<u64>()?)).with_context(ctx)?;
                }
                ("experiment", "out") => cfg.out = PathBuf::from(value),
                ("experiment", "jobs") => cfg.jobs = value.parse().with_context(ctx)?,
                ("dataset", "name") => cfg.dataset = DatasetName::parse(value).with_context(ctx)?,
                ("dataset", "train_samples") => {
                    cfg.train_samples = value.parse().with_context(ctx)?
                }
                ("dataset", "data_seed") => cfg.data_seed = value.parse().with_context(ctx)?,
                ("models", "model") => cfg.model = Some(ModelRef::parse(value).with_context(ctx)?),
                ("models", "model_d0") => {
                    cfg.model_d0 = Some(ModelRef::parse(value).with_context(ctx)?)
                }
                ("models", "align_model") => {
                    cfg.align_model = Some(ModelRef::parse(value).with_context(ctx)?)
                }
                ("train", "family") => cfg.family = ModelFamily::parse(value).with_context(ctx)?,
                ("train", "hidden") => {
                    cfg.hidden = parse_list(value, |p| Ok(p.parse::<usize>()?)).with_context(ctx)?
                }
                ("train", "train_steps") => cfg.train_steps = value.parse().with_context(ctx)?,
                ("train", "batch_size") => cfg.batch_size = value.parse().with_context(ctx)?,
                ("train", "learning_rate") => {
                    cfg.learning_rate = value.parse().with_context(ctx)?
                }
                ("train", "uncond_dropout_prob") => {
                    cfg.uncond_dropout_prob = value.parse().with_context(ctx)?
                }
                ("train", "budget_ratio") => {
                    cfg.budget_ratio = Some(value.parse().with_context(ctx)?)
                }
                ("nlg", "steps") => cfg.nlg_steps = value.parse().with_context(ctx)?,
                ("nlg", "clip_threshold") => {
                    cfg.clip_threshold = value.parse().with_context(ctx)?
                }
                ("nlg", "extra_noise_var") => {
                    cfg.extra_noise_var = value.parse().with_context(ctx)?
                }
                ("nlg", "renormalize") => cfg.renormalize = parse_bool(value).with_context(ctx)?,
                ("nlg", "align_condition") => {
                    cfg.align_condition = Some(parse_class(value).with_context(ctx)?)
                }
                ("sampler", "kind") => {
                    match value {
                        "ancestral_vp" | "deterministic_vp" | "rf_euler" => {}
                        other => bail!("{}: unknown sampler kind '{other}'", ctx()),
                    }
                    cfg.sampler_kind = value.into();
                }
                ("sampler", "inference_steps") => {
                    cfg.inference_steps = value.parse().with_context(ctx)?
                }
                ("sampler", "guidance_mode") => {
                    match value {
                        "none" | "cfg" | "autoguide" => {}
                        other => bail!("{}: unknown guidance mode '{other}'", ctx()),
                    }
                    cfg.guidance_mode = value.into();
                }
                ("sampler", "guidance_weight") => {
                    cfg.guidance_weight = value.parse().with_context(ctx)?
                }
                ("eval", "count") => cfg.count = value.parse().with_context(ctx)?,
                ("eval", "quantile") => cfg.quantile = value.parse().with_context(ctx)?,
                ("eval", "candidates") => cfg.candidates = value.parse().with_context(ctx)?,
                ("eval", "classifier_steps") => {
                    cfg.classifier_steps = value.parse().with_context(ctx)?
                }
                ("eval", "step_grid") => {
                    cfg.step_grid =
                        parse_list(value, |p| Ok(p.parse::<usize>()?)).with_context(ctx)?
                }
                ("eval", "weight_grid") => {
                    cfg.weight_grid =
                        parse_list(value, |p| Ok(p.parse::<f64>()?)).with_context(ctx)?
                }
                ("eval", "noise_grid") => {
                    cfg.noise_grid =
                        parse_list(value, |p| Ok(p.parse::<f64>()?)).with_context(ctx)?
                }
                ("eval", "rescue_steps") => {
                    cfg.rescue_steps =
                        parse_list(value, |p| Ok(p.parse::<usize>()?)).with_context(ctx)?
                }
                ("eval", "gen_condition") => {
                    cfg.gen_condition = Some(parse_class(value).with_context(ctx)?)
                }
                ("eval", "autoguide_weight") => {
                    cfg.autoguide_weight = value.parse().with_context(ctx)?
                }
                ("meta", _) => {} // manifests carry provenance here; ignored on replay
                ("", k) => bail!("{source}:{}: key '{k}' appears before any section", lineno + 1),
                (s, k) => bail!("{source}:{}: unknown key '{k}' in section [{s}]", lineno + 1),
            }
        }
        if !seen_kind {
            bail!("{source}: missing required key 'kind' in [experiment]");
        }
        if cfg.seeds.is_empty() {
            bail!("{source}: seeds list must not be empty");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Render the fully resolved config in the same format it is parsed
    /// from. `meta` lines (key, value) go into a trailing [meta] section.
    pub fn render(&self, meta: &BTreeMap<String, String>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "jobs = {}", self.jobs);
        let _ = writeln!(s, "\n[dataset]");
        let _ = writeln!(s, "name = {}", self.dataset.name());
        let _ = writeln!(s, "train_samples = {}", self.train_samples);
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "\n[models]");
        if let Some(m) = &self.model {
            let _ = writeln!(s, "model = {}", m.render());
        }
        if let Some(m) = &self.model_d0 {
            let _ = writeln!(s, "model_d0 = {}", m.render());
        }
        if let Some(m) = &self.align_model {
            let _ = writeln!(s, "align_model = {}", m.render());
        }
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "family = {}", self.family.name());
        let hidden: Vec<String> = self.hidden.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "train_steps = {}", self.train_steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "uncond_dropout_prob = {}", self.uncond_dropout_prob);
        if let Some(r) = self.budget_ratio {
            let _ = writeln!(s, "budget_ratio = {r}");
        }
        let _ = writeln!(s, "\n[nlg]");
        let _ = writeln!(s, "steps = {}", self.nlg_steps);
        let _ = writeln!(s, "clip_threshold = {}", self.clip_threshold);
        let _ = writeln!(s, "extra_noise_var = {}", self.extra_noise_var);
        let _ = writeln!(s, "renormalize = {}", self.renormalize);
        if let Some(c) = self.align_condition {
            let _ = writeln!(s, "align_condition = class{c}");
        }
        let _ = writeln!(s, "\n[sampler]");
        let _ = writeln!(s, "kind = {}", self.sampler_kind);
        let _ = writeln!(s, "inference_steps = {}", self.inference_steps);
        let _ = writeln!(s, "guidance_mode = {}", self.guidance_mode);
        let _ = writeln!(s, "guidance_weight = {}", self.guidance_weight);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "count = {}", self.count);
        let _ = writeln!(s, "quantile = {}", self.quantile);
        let _ = writeln!(s, "candidates = {}", self.candidates);
        let _ = writeln!(s, "classifier_steps = {}", self.classifier_steps);
        let join_us = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "step_grid = {}", join_us(&self.step_grid));
        let _ = writeln!(s, "weight_grid = {}", join_f(&self.weight_grid));
        let _ = writeln!(s, "noise_grid = {}", join_f(&self.noise_grid));
        let _ = writeln!(s, "rescue_steps = {}", join_us(&self.rescue_steps));
        if let Some(c) = self.gen_condition {
            let _ = writeln!(s, "gen_condition = class{c}");
        }
        let _ = writeln!(s, "autoguide_weight = {}", self.autoguide_weight);
        if !meta.is_empty() {
            let _ = writeln!(s, "\n[meta]");
            for (k, v) in meta {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => bail!("expected a boolean, got '{other}'"),
    }
}

/// Class tokens in configs are written `classK` or bare `K`.
fn parse_class(s: &str) -> Result<usize> {
    let digits = s.strip_prefix("class").unwrap_or(s);
    Ok(digits.parse::<usize>()?)
}

/// Read the `[meta]` section of a manifest as key/value pairs.
pub fn read_meta(text: &str) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    let mut in_meta = false;
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            in_meta = line == "[meta]";
            continue;
        }
        if in_meta {
            if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    meta
}
