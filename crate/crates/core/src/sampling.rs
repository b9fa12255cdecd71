//! Reverse-process samplers with pluggable guidance.
//!
//! RNG consumption protocol: the initial noise (and the alignment loop's
//! stabilizing noise) is drawn from one substream, the ancestral sampler's
//! noise from another. Toggling alignment therefore never perturbs the
//! sampler's randomness, which makes per-seed paired comparisons exact.

use crate::align::{align_noise_with, AlignOptions, AlignmentTrace, NLGConfig};
use crate::error::{Error, Result};
use crate::guidance::{guided_output, GuidanceMode, GuidanceSpec};
use crate::models::{AnalyticMixtureModel, ConditionToken, ModelPair};
use crate::rng::{sample_gaussian, RngStream};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::vector::Vector;

const NOISE_STREAM: u64 = 0x6e6f_6973;
const SAMPLER_STREAM: u64 = 0x7374_6570;

/// Substream that item `i` draws its initial (and alignment) noise from.
pub fn item_noise_stream(root: &RngStream, item: u64) -> RngStream {
    root.derive(NOISE_STREAM).derive(item)
}

/// Substream that item `i` draws ancestral sampling noise from.
pub fn item_sampler_stream(root: &RngStream, item: u64) -> RngStream {
    root.derive(SAMPLER_STREAM).derive(item)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    AncestralVp,
    DeterministicVp,
    RfEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub inference_steps: usize,
    pub guidance: GuidanceSpec,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, inference_steps: usize, guidance: GuidanceSpec, seed: u64) -> Self {
        SamplerConfig {
            kind,
            inference_steps,
            guidance,
            seed,
        }
    }

    /// The spec with the positive condition swapped to `y`. Autoguidance
    /// specs whose negative tracks the positive keep them in sync.
    pub fn guidance_for(&self, y: ConditionToken) -> GuidanceSpec {
        let mut g = self.guidance;
        if g.mode == GuidanceMode::Autoguide && g.negative_cond == g.positive_cond {
            g.negative_cond = y;
        }
        g.positive_cond = y;
        g
    }
}

/// Run the reverse process from `n_init`, consuming ancestral noise from the
/// caller's stream. Caller-supplied noise whose norm is more than 20% away
/// from the expected shell radius draws a warning; batch generation skips
/// the check for noise it drew itself (in low dimension honest Gaussian
/// draws routinely sit far from the shell).
pub fn sample_with_rng(
    pair: &ModelPair,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    n_init: &Vector,
    rng: &mut RngStream,
) -> Result<Vector> {
    let shell = schedule.initial_noise_std() * (n_init.dim() as f64).sqrt();
    let norm = n_init.l2_norm();
    if (norm - shell).abs() / shell > 0.2 {
        log::warn!(
            "initial noise norm {norm:.4} is more than 20% away from the expected {shell:.4}"
        );
    }
    sample_inner(pair, schedule, cfg, n_init, rng)
}

fn sample_inner(
    pair: &ModelPair,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    n_init: &Vector,
    rng: &mut RngStream,
) -> Result<Vector> {
    if n_init.dim() != pair.data_dim() {
        return Err(Error::DimMismatch {
            expected: pair.data_dim(),
            got: n_init.dim(),
        });
    }
    cfg.guidance.validate_for(pair)?;
    match cfg.kind {
        SamplerKind::AncestralVp => vp_reverse(pair, schedule, cfg, n_init, rng, true),
        SamplerKind::DeterministicVp => vp_reverse(pair, schedule, cfg, n_init, rng, false),
        SamplerKind::RfEuler => rf_euler(pair, schedule, cfg, n_init),
    }
}

/// Run the reverse process with a fresh stream derived from `cfg.seed`.
pub fn sample(
    pair: &ModelPair,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    n_init: &Vector,
) -> Result<Vector> {
    let mut rng = RngStream::new(cfg.seed, SAMPLER_STREAM);
    sample_with_rng(pair, schedule, cfg, n_init, &mut rng)
}

fn non_finite(step: usize) -> Error {
    Error::Numerical {
        step,
        detail: "non-finite intermediate sample".into(),
    }
}

fn vp_reverse(
    pair: &ModelPair,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    n_init: &Vector,
    rng: &mut RngStream,
    ancestral: bool,
) -> Result<Vector> {
    if schedule.kind() != ScheduleKind::VariancePreserving {
        return Err(Error::invalid("VP samplers need a variance-preserving schedule"));
    }
    let indices = schedule.inference_indices(cfg.inference_steps)?;
    let dim = n_init.dim();
    let mut x = n_init.clone();
    for (k, &idx) in indices.iter().enumerate() {
        let abar = schedule.alpha_bar(idx)?;
        let abar_prev = match indices.get(k + 1) {
            Some(&next) => schedule.alpha_bar(next)?,
            None => 1.0,
        };
        let eps = guided_output(pair, &cfg.guidance, &x, idx)
            .map_err(|e| step_context(e, k))?;
        let beta = 1.0 - abar;
        let sqrt_abar = abar.sqrt();
        let sqrt_beta = beta.sqrt();
        // Noise-free update with the posterior variance re-injected when
        // running ancestrally (eta = 1 in the generalized update).
        let var = if ancestral {
            ((1.0 - abar_prev) / beta * (1.0 - abar / abar_prev)).max(0.0)
        } else {
            0.0
        };
        let dir_coeff = (1.0 - abar_prev - var).max(0.0).sqrt();
        let mut next = Vec::with_capacity(dim);
        for (&xi, &ei) in x.as_slice().iter().zip(eps.as_slice()) {
            let x0_pred = (xi - sqrt_beta * ei) / sqrt_abar;
            next.push(abar_prev.sqrt() * x0_pred + dir_coeff * ei);
        }
        let mut next = Vector::new(next).map_err(|_| non_finite(k))?;
        if ancestral && var > 0.0 {
            let z = sample_gaussian(dim, var, rng)?;
            next = next.add(&z).map_err(|_| non_finite(k))?;
        }
        x = next;
    }
    Ok(x)
}

fn rf_euler(
    pair: &ModelPair,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    n_init: &Vector,
) -> Result<Vector> {
    if schedule.kind() != ScheduleKind::RectifiedFlow {
        return Err(Error::invalid("the Euler sampler needs a rectified-flow schedule"));
    }
    let indices = schedule.inference_indices(cfg.inference_steps)?;
    let mut x = n_init.clone();
    for (k, &idx) in indices.iter().enumerate() {
        let t = schedule.time_of_step(idx)?;
        let t_next = match indices.get(k + 1) {
            Some(&next) => schedule.time_of_step(next)?,
            None => 0.0,
        };
        let dt = t - t_next;
        let v = guided_output(pair, &cfg.guidance, &x, idx).map_err(|e| step_context(e, k))?;
        x = x.sub(&v.scale(dt)?).map_err(|_| non_finite(k))?;
    }
    Ok(x)
}

fn step_context(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical { detail, .. } => Error::Numerical { step, detail },
        other => other,
    }
}

/// How the per-item alignment chooses its positive condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlignCondition {
    /// Align toward the item's own generation condition.
    ItemCondition,
    /// Align toward a fixed token, independent of the generation condition.
    Fixed(ConditionToken),
}

/// Alignment settings for batch generation.
#[derive(Clone, Copy)]
pub struct AlignerSpec<'a> {
    pub config: NLGConfig,
    pub positive: AlignCondition,
    pub negative: AlignCondition,
    /// Model pair used for alignment; defaults to the sampling pair. Used
    /// for cross-model noise transfer.
    pub align_pair: Option<&'a ModelPair>,
    pub disable_renormalization: bool,
    pub probe: Option<&'a AnalyticMixtureModel>,
}

impl<'a> AlignerSpec<'a> {
    /// Classifier-free style alignment: the item's condition against null.
    pub fn toward_item_condition(config: NLGConfig) -> Self {
        AlignerSpec {
            config,
            positive: AlignCondition::ItemCondition,
            negative: AlignCondition::Fixed(ConditionToken::Null),
            align_pair: None,
            disable_renormalization: false,
            probe: None,
        }
    }

    /// Autoguidance-style alignment: the same condition fed to both models
    /// of the pair.
    pub fn autoguide(config: NLGConfig) -> Self {
        AlignerSpec {
            config,
            positive: AlignCondition::ItemCondition,
            negative: AlignCondition::ItemCondition,
            align_pair: None,
            disable_renormalization: false,
            probe: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub index: usize,
    pub condition: ConditionToken,
    pub sample: Vector,
    pub trace: Option<AlignmentTrace>,
}

#[derive(Debug, Default)]
pub struct BatchOutput {
    pub items: Vec<BatchItem>,
    pub failures: Vec<(usize, Error)>,
}

/// Generate `count` samples. Conditions cycle over `conditions`; item `i`
/// owns the substreams `(seed, noise, i)` and `(seed, sampler, i)`.
pub fn generate_batch(
    pair: &ModelPair,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    count: usize,
    conditions: &[ConditionToken],
    aligner: Option<&AlignerSpec<'_>>,
    rng: &RngStream,
) -> Result<BatchOutput> {
    if count == 0 {
        return Err(Error::invalid("batch count must be at least 1"));
    }
    if conditions.is_empty() {
        return Err(Error::invalid("batch needs at least one condition"));
    }
    let mut out = BatchOutput::default();
    let dim = pair.data_dim();
    let sigma_max = schedule.initial_noise_std();
    for i in 0..count {
        let condition = conditions[i % conditions.len()];
        let mut noise_rng = item_noise_stream(rng, i as u64);
        let mut sampler_rng = item_sampler_stream(rng, i as u64);
        let item = (|| -> Result<BatchItem> {
            let (n_init, trace) = match aligner {
                Some(spec) => {
                    let resolve = |c: AlignCondition| match c {
                        AlignCondition::ItemCondition => condition,
                        AlignCondition::Fixed(tok) => tok,
                    };
                    let align_pair = spec.align_pair.unwrap_or(pair);
                    let (n, trace) = align_noise_with(
                        align_pair,
                        resolve(spec.positive),
                        resolve(spec.negative),
                        &spec.config,
                        AlignOptions {
                            disable_renormalization: spec.disable_renormalization,
                            probe: spec.probe,
                        },
                        &mut noise_rng,
                    )?;
                    (n, Some(trace))
                }
                None => (
                    sample_gaussian(dim, sigma_max * sigma_max, &mut noise_rng)?,
                    None,
                ),
            };
            let item_cfg = SamplerConfig {
                guidance: cfg.guidance_for(condition),
                ..*cfg
            };
            let sample = sample_inner(pair, schedule, &item_cfg, &n_init, &mut sampler_rng)?;
            Ok(BatchItem {
                index: i,
                condition,
                sample,
                trace,
            })
        })();
        match item {
            Ok(item) => out.items.push(item),
            Err(e) => out.failures.push((i, e)),
        }
    }
    Ok(out)
}

/// Write a batch as CSV: `sample_index, condition, x0, x1, ...`.
pub fn write_samples_csv(items: &[BatchItem], out: &mut impl std::io::Write) -> std::io::Result<()> {
    let dim = items.first().map(|i| i.sample.dim()).unwrap_or(0);
    write!(out, "sample_index,condition")?;
    for d in 0..dim {
        write!(out, ",x{d}")?;
    }
    writeln!(out)?;
    for item in items {
        write!(out, "{},{}", item.index, item.condition)?;
        for v in item.sample.as_slice() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
