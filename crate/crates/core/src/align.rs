//! Noise-level guidance: forward-only refinement of initial noise.
//!
//! Starting from `n ~ N(0, sigma_max^2 I)`, each aligning step computes an
//! edit direction as the difference of two model outputs, clips its length,
//! subtracts it from the noise, injects a little fresh Gaussian noise, and
//! renormalizes the result back onto the shell of radius `sigma_max *
//! sqrt(a)` where high-dimensional Gaussian samples concentrate. No gradients
//! are ever computed; the only model access is forward evaluation.

use crate::error::{Error, Result};
use crate::models::{AnalyticMixtureModel, ConditionToken, ModelPair};
use crate::rng::{sample_gaussian, RngStream};
use crate::vector::Vector;

/// Default aligning step count for classifier-free setups.
pub const DEFAULT_ALIGN_STEPS: usize = 20;
/// Default clip threshold for unit-sigma models.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.5;
/// Clip threshold for large-sigma (variance-exploding / autoguidance) setups.
pub const CLIP_THRESHOLD_LARGE_SIGMA: f64 = 5.0;
/// Default variance of the per-step stabilizing noise.
pub const DEFAULT_EXTRA_NOISE_VAR: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NLGConfig {
    /// Total aligning steps `s`.
    pub steps: usize,
    /// Clip threshold `tau` for the edit direction length.
    pub clip_threshold: f64,
    /// Variance `l` of the per-step stabilizing noise.
    pub extra_noise_var: f64,
    /// Starting noise scale.
    pub sigma_max: f64,
    /// Latent dimension `a`.
    pub dim: usize,
}

impl NLGConfig {
    pub fn new(dim: usize, sigma_max: f64) -> Self {
        NLGConfig {
            steps: DEFAULT_ALIGN_STEPS,
            clip_threshold: DEFAULT_CLIP_THRESHOLD,
            extra_noise_var: DEFAULT_EXTRA_NOISE_VAR,
            sigma_max,
            dim,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::invalid("clip_threshold must be positive"));
        }
        if !(self.extra_noise_var >= 0.0) {
            return Err(Error::invalid("extra_noise_var must be nonnegative"));
        }
        if !(self.sigma_max > 0.0) {
            return Err(Error::invalid("sigma_max must be positive"));
        }
        Ok(())
    }

    /// Radius of the target shell, `sigma_max * sqrt(a)`.
    pub fn shell_radius(&self) -> f64 {
        self.sigma_max * (self.dim as f64).sqrt()
    }
}

/// One recorded aligning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `||d||` before clipping.
    pub d_norm_preclip: f64,
    pub clipped: bool,
    /// `||n||` after the step completed (post renormalization).
    pub n_norm_post: f64,
    /// Oracle posterior of the positive condition at the probe step, when a
    /// probe model was supplied.
    pub probe_posterior: Option<f64>,
}

/// Record of one alignment run.
#[derive(Debug, Clone, Default)]
pub struct AlignmentTrace {
    pub steps: Vec<StepRecord>,
    pub model_eval_count: u64,
    /// Always zero; the procedure is forward-only by construction. Kept as an
    /// explicit counter so the contract is testable.
    pub gradient_eval_count: u64,
}

impl AlignmentTrace {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "step,d_norm_preclip,clipped,n_norm_post,probe_posterior")?;
        for r in &self.steps {
            let probe = r
                .probe_posterior
                .map(|p| p.to_string())
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.step,
                r.d_norm_preclip,
                u8::from(r.clipped),
                r.n_norm_post,
                probe
            )?;
        }
        Ok(())
    }
}

/// Options beyond the core config: the renormalization ablation switch and
/// an optional oracle probe recorded per step.
#[derive(Clone, Copy, Default)]
pub struct AlignOptions<'a> {
    pub disable_renormalization: bool,
    pub probe: Option<&'a AnalyticMixtureModel>,
}

/// Edit direction `d = D1(n|y1) - D0(n|y0)` evaluated at the highest-noise
/// schedule index. With an aliased pair and `y1 == y0` the second evaluation
/// is skipped and the result is exactly zero.
pub fn edit_direction(
    pair: &ModelPair,
    y1: ConditionToken,
    y0: ConditionToken,
    n: &Vector,
) -> Result<Vector> {
    if n.dim() != pair.data_dim() {
        return Err(Error::DimMismatch {
            expected: pair.data_dim(),
            got: n.dim(),
        });
    }
    if pair.d1.schedule().initial_noise_std() != pair.d0.schedule().initial_noise_std() {
        return Err(Error::invalid("edit direction needs matching sigma_max"));
    }
    let step = pair.d1.schedule().max_step();
    let out1 = pair.d1.predict(n, step, y1)?;
    if pair.is_aliased() && y1 == y0 {
        return Ok(Vector::zeros(n.dim()));
    }
    let step0 = pair.d0.schedule().max_step();
    let out0 = pair.d0.predict(n, step0, y0)?;
    out1.sub(&out0)
}

/// Rescale `d` to length `tau` when it is longer; shorter directions (and
/// the zero vector) pass through bit-identically.
pub fn norm_clip(d: &Vector, tau: f64) -> Result<Vector> {
    if !(tau > 0.0) {
        return Err(Error::invalid("clip threshold must be positive"));
    }
    let norm = d.l2_norm();
    if norm <= tau {
        return Ok(d.clone());
    }
    d.scale(tau / norm)
}

/// Project `n` onto the shell of radius `sigma_max * sqrt(a)`.
pub fn renormalize(n: &Vector, sigma_max: f64) -> Result<Vector> {
    let norm = n.l2_norm();
    if norm == 0.0 {
        return Err(Error::DegenerateInput(
            "cannot renormalize the zero vector".into(),
        ));
    }
    n.scale(sigma_max * (n.dim() as f64).sqrt() / norm)
}

/// Run the full alignment loop and return the refined noise with its trace.
pub fn align_noise(
    pair: &ModelPair,
    y1: ConditionToken,
    y0: ConditionToken,
    config: &NLGConfig,
    rng: &mut RngStream,
) -> Result<(Vector, AlignmentTrace)> {
    align_noise_with(pair, y1, y0, config, AlignOptions::default(), rng)
}

pub fn align_noise_with(
    pair: &ModelPair,
    y1: ConditionToken,
    y0: ConditionToken,
    config: &NLGConfig,
    options: AlignOptions<'_>,
    rng: &mut RngStream,
) -> Result<(Vector, AlignmentTrace)> {
    config.validate()?;
    if config.dim != pair.data_dim() {
        return Err(Error::DimMismatch {
            expected: pair.data_dim(),
            got: config.dim,
        });
    }
    let mut n = sample_gaussian(config.dim, config.sigma_max * config.sigma_max, rng)?;
    let mut trace = AlignmentTrace::default();
    let aliased_degenerate = pair.is_aliased() && y1 == y0;

    for step in 0..config.steps {
        let d = edit_direction(pair, y1, y0, &n)?;
        let d_norm_preclip = norm_checked(&d, step)?;
        let clipped = d_norm_preclip > config.clip_threshold;
        let d = norm_clip(&d, config.clip_threshold)?;
        let extra = sample_gaussian(config.dim, config.extra_noise_var, rng)?;
        n = n.sub(&d)?.add(&extra)?;
        if !options.disable_renormalization {
            n = renormalize(&n, config.sigma_max)?;
        }
        let n_norm_post = norm_checked(&n, step)?;
        let probe_posterior = match options.probe {
            Some(oracle) => Some(oracle.posterior(&n, oracle.probe_step(), y1)?),
            None => None,
        };
        trace.steps.push(StepRecord {
            step,
            d_norm_preclip,
            clipped,
            n_norm_post,
            probe_posterior,
        });
        trace.model_eval_count += if aliased_degenerate { 1 } else { 2 };
    }
    Ok((n, trace))
}

fn norm_checked(v: &Vector, step: usize) -> Result<f64> {
    let norm = v.l2_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical {
            step,
            detail: "noise norm became non-finite during alignment".into(),
        });
    }
    Ok(norm)
}

/// Aligning step count for a given guidance scale: linear interpolation
/// between `(w = 1, s = 20)` and `(w = 7.5, s = 2)`, rounded to the nearest
/// integer and clamped to [2, 20].
pub fn steps_for_guidance_scale(w: f64) -> Result<usize> {
    if !(w >= 1.0) {
        return Err(Error::invalid("guidance scale must be at least 1"));
    }
    let s = 20.0 + (2.0 - 20.0) * (w - 1.0) / (7.5 - 1.0);
    Ok((s.round() as i64).clamp(2, 20) as usize)
}
