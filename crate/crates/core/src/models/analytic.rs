//! Exact Gaussian-mixture oracle.
//!
//! The data distribution is a mixture of isotropic Gaussians, one component
//! per class. Under any affine corruption `x_t = c x0 + d eps` the marginal
//! stays a Gaussian mixture with means `c mu_k` and per-coordinate variance
//! `v = c^2 s^2 + d^2`, so scores, class posteriors, and optimal epsilon /
//! velocity predictions all have closed forms. This model is what the rest
//! of the crate is verified against.

use crate::error::{Error, Result};
use crate::models::{ConditionToken, Denoiser, Parameterization};
use crate::rng::RngStream;
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::vector::Vector;

#[derive(Debug, Clone)]
pub struct AnalyticMixtureModel {
    means: Vec<Vector>,
    weights: Vec<f64>,
    base_variance: f64,
    schedule: NoiseSchedule,
}

impl AnalyticMixtureModel {
    pub fn new(
        means: Vec<Vector>,
        weights: Vec<f64>,
        base_variance: f64,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(Error::invalid(
                "mixture needs equally many means and weights",
            ));
        }
        let dim = means[0].dim();
        if means.iter().any(|m| m.dim() != dim) {
            return Err(Error::invalid("mixture means must share a dimension"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must sum to 1"));
        }
        if base_variance <= 0.0 {
            return Err(Error::invalid("base variance must be positive"));
        }
        Ok(AnalyticMixtureModel {
            means,
            weights,
            base_variance,
            schedule,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vector] {
        &self.means
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn base_variance(&self) -> f64 {
        self.base_variance
    }

    /// Marginal parameters at a step: per-class means and shared variance.
    fn marginal(&self, step: usize) -> Result<(f64, f64)> {
        let (c, d) = self.schedule.mixing(step)?;
        Ok((c, c * c * self.base_variance + d * d))
    }

    fn check_class(&self, y: ConditionToken) -> Result<usize> {
        match y {
            ConditionToken::Class(k) if k < self.means.len() => Ok(k),
            ConditionToken::Class(k) => Err(Error::invalid(format!(
                "unknown class id {k} for {}-component mixture",
                self.means.len()
            ))),
            other => Err(Error::invalid(format!(
                "mixture oracle needs a class token, got {other}"
            ))),
        }
    }

    fn log_responsibilities_at(&self, x: &Vector, c: f64, v: f64) -> Vec<f64> {
        // log w_k - ||x - c mu_k||^2 / (2v), normalized by log-sum-exp. The
        // shared Gaussian normalizer cancels.
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(mu, &w)| {
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let sq: f64 = x
                    .as_slice()
                    .iter()
                    .zip(mu.as_slice())
                    .map(|(xi, mi)| {
                        let d = xi - c * mi;
                        d * d
                    })
                    .sum();
                w.ln() - 0.5 * sq / v
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + logits
                .iter()
                .map(|l| (l - max).exp())
                .sum::<f64>()
                .ln();
        logits.into_iter().map(|l| l - lse).collect()
    }

    /// Exact class posterior p(y | x at the noise level of `step`).
    pub fn posterior(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<f64> {
        let k = self.check_class(y)?;
        let (c, v) = self.marginal(step)?;
        Ok(self.log_responsibilities_at(x, c, v)[k].exp())
    }

    /// Exact log posterior at noise level zero (the raw data mixture).
    pub fn log_posterior_data(&self, x: &Vector, y: ConditionToken) -> Result<f64> {
        let k = self.check_class(y)?;
        Ok(self.log_responsibilities_at(x, 1.0, self.base_variance)[k])
    }

    pub fn posterior_data(&self, x: &Vector, y: ConditionToken) -> Result<f64> {
        Ok(self.log_posterior_data(x, y)?.exp())
    }

    /// Exact score of the class-conditional marginal at a step.
    pub fn score_conditional(&self, x: &Vector, step: usize, k: usize) -> Result<Vector> {
        let (c, v) = self.marginal(step)?;
        let mu = &self.means[k];
        Vector::new(
            x.as_slice()
                .iter()
                .zip(mu.as_slice())
                .map(|(xi, mi)| (c * mi - xi) / v)
                .collect(),
        )
    }

    /// Exact score of the unconditional marginal at a step.
    pub fn score_unconditional(&self, x: &Vector, step: usize) -> Result<Vector> {
        let (c, v) = self.marginal(step)?;
        let resp = self.log_responsibilities_at(x, c, v);
        let mut out = vec![0.0; x.dim()];
        for (k, mu) in self.means.iter().enumerate() {
            let r = resp[k].exp();
            if r == 0.0 {
                continue;
            }
            for (o, (xi, mi)) in out
                .iter_mut()
                .zip(x.as_slice().iter().zip(mu.as_slice()))
            {
                *o += r * (c * mi - xi) / v;
            }
        }
        Vector::new(out)
    }

    pub fn score(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector> {
        match y {
            ConditionToken::Null => self.score_unconditional(x, step),
            _ => {
                let k = self.check_class(y)?;
                self.score_conditional(x, step, k)
            }
        }
    }

    /// Optimal velocity E[eps - x0 | x_t] for the rectified-flow path.
    fn velocity(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector> {
        let t = self.schedule.time_of_step(step)?;
        let (c, v) = self.marginal(step)?;
        debug_assert_eq!(c, 1.0 - t);
        // Per component: E[eps|x,k] - E[x0|x,k]
        //   = ((t - (1-t) s^2) / v) (x - c mu_k) - mu_k.
        let coef = (t - (1.0 - t) * self.base_variance) / v;
        let per_class = |k: usize| -> Vec<f64> {
            let mu = self.means[k].as_slice();
            x.as_slice()
                .iter()
                .zip(mu)
                .map(|(xi, mi)| coef * (xi - c * mi) - mi)
                .collect()
        };
        match y {
            ConditionToken::Null => {
                let resp = self.log_responsibilities_at(x, c, v);
                let mut out = vec![0.0; x.dim()];
                for k in 0..self.means.len() {
                    let r = resp[k].exp();
                    if r == 0.0 {
                        continue;
                    }
                    for (o, val) in out.iter_mut().zip(per_class(k)) {
                        *o += r * val;
                    }
                }
                Vector::new(out)
            }
            _ => {
                let k = self.check_class(y)?;
                Vector::new(per_class(k))
            }
        }
    }

    /// Step whose marginal the alignment probe is evaluated at: the highest
    /// noise level at which the class posteriors still depend on x. For the
    /// rectified-flow grid that excludes t = 1, where every component's
    /// marginal collapses to N(0, I).
    pub fn probe_step(&self) -> usize {
        match self.schedule.kind() {
            ScheduleKind::RectifiedFlow => self.schedule.max_step() - 1,
            _ => self.schedule.max_step(),
        }
    }

    /// Draw one labeled sample from the data mixture.
    pub fn sample_labeled(&self, rng: &mut RngStream) -> Result<(Vector, usize)> {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let noise = crate::rng::sample_gaussian(self.means[k].dim(), self.base_variance, rng)?;
        Ok((self.means[k].add(&noise)?, k))
    }
}

impl Denoiser for AnalyticMixtureModel {
    fn data_dim(&self) -> usize {
        self.means[0].dim()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn parameterization(&self) -> Parameterization {
        match self.schedule.kind() {
            ScheduleKind::RectifiedFlow => Parameterization::Velocity,
            _ => Parameterization::EpsilonPrediction,
        }
    }

    fn predict(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector> {
        if x.dim() != self.data_dim() {
            return Err(Error::DimMismatch {
                expected: self.data_dim(),
                got: x.dim(),
            });
        }
        match self.parameterization() {
            Parameterization::EpsilonPrediction => {
                // eps_hat = -d * score.
                let d = self.schedule.noise_scale(step)?;
                self.score(x, step, y)?.scale(-d)
            }
            Parameterization::Velocity => self.velocity(x, step, y),
        }
    }
}
