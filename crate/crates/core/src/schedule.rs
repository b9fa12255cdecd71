//! Forward-corruption schedules.
//!
//! Every schedule describes an affine corruption `x_t = c_t * x0 + d_t * eps`
//! over a discrete grid of `T` steps, ordered from clean (step 0) to the
//! maximal noise level (step T-1):
//!
//! * variance preserving: `c = sqrt(alpha_bar)`, `d = sqrt(1 - alpha_bar)`
//! * variance exploding:  `c = 1`, `d = sigma[step]`
//! * rectified flow:      `c = 1 - t`, `d = t` with `t = step / (T - 1)`

use crate::error::{Error, Result};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    VariancePreserving,
    VarianceExploding,
    RectifiedFlow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    num_steps: usize,
    sigma_max: f64,
    /// VP: alpha_bar per step. VE: sigma per step. RF: the time grid.
    levels: Vec<f64>,
}

/// Default number of training steps for VP schedules.
pub const DEFAULT_VP_STEPS: usize = 100;
/// Default rectified-flow grid size; 101 points put `t = k/100` on the grid
/// so the common inference step counts (20, 10, 5) hit exact grid times.
pub const DEFAULT_RF_STEPS: usize = 101;
/// Default maximal noise level for variance-exploding schedules.
pub const DEFAULT_VE_SIGMA_MAX: f64 = 80.0;

const VP_ALPHA_BAR_FLOOR: f64 = 1e-4;

impl NoiseSchedule {
    /// Cosine-shaped variance-preserving schedule.
    pub fn cosine_vp(num_steps: usize) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        let s = 0.008;
        let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let alpha_bar: Vec<f64> = (0..num_steps)
            .map(|i| (f((i + 1) as f64 / num_steps as f64) / f0).max(VP_ALPHA_BAR_FLOOR))
            .collect();
        Self::vp_from_alpha_bar(alpha_bar)
    }

    pub fn vp_from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        let t = alpha_bar.len();
        if t < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        for w in alpha_bar.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::invalid("VP alpha_bar must be strictly decreasing"));
            }
        }
        if !alpha_bar.iter().all(|&a| a > 0.0 && a <= 1.0) {
            return Err(Error::invalid("VP alpha_bar must lie in (0, 1]"));
        }
        Ok(NoiseSchedule {
            kind: ScheduleKind::VariancePreserving,
            num_steps: t,
            sigma_max: 1.0,
            levels: alpha_bar,
        })
    }

    /// Geometrically spaced variance-exploding schedule ending at `sigma_max`.
    pub fn geometric_ve(num_steps: usize, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(Error::invalid("VE requires 0 < sigma_min < sigma_max"));
        }
        let ratio = sigma_max / sigma_min;
        let sigma: Vec<f64> = (0..num_steps)
            .map(|i| sigma_min * ratio.powf(i as f64 / (num_steps - 1) as f64))
            .collect();
        Ok(NoiseSchedule {
            kind: ScheduleKind::VarianceExploding,
            num_steps,
            sigma_max,
            levels: sigma,
        })
    }

    pub fn ve_from_sigma(sigma: Vec<f64>) -> Result<Self> {
        let t = sigma.len();
        if t < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if sigma[0] <= 0.0 || sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("VE sigma must be positive and strictly increasing"));
        }
        let sigma_max = sigma[t - 1];
        Ok(NoiseSchedule {
            kind: ScheduleKind::VarianceExploding,
            num_steps: t,
            sigma_max,
            levels: sigma,
        })
    }

    /// Uniform time grid `t_i = i / (T - 1)` on [0, 1].
    pub fn rectified_flow(num_steps: usize) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        let grid: Vec<f64> = (0..num_steps)
            .map(|i| i as f64 / (num_steps - 1) as f64)
            .collect();
        Ok(NoiseSchedule {
            kind: ScheduleKind::RectifiedFlow,
            num_steps,
            sigma_max: 1.0,
            levels: grid,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Std of the starting distribution N(0, sigma_max^2 I).
    pub fn initial_noise_std(&self) -> f64 {
        self.sigma_max
    }

    pub fn max_step(&self) -> usize {
        self.num_steps - 1
    }

    pub(crate) fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.num_steps {
            return Err(Error::invalid(format!(
                "step {step} out of range for schedule with {} steps",
                self.num_steps
            )));
        }
        Ok(())
    }

    /// Coefficients `(c, d)` of the corruption `x_t = c x0 + d eps`.
    pub fn mixing(&self, step: usize) -> Result<(f64, f64)> {
        self.check_step(step)?;
        Ok(match self.kind {
            ScheduleKind::VariancePreserving => {
                let a = self.levels[step];
                (a.sqrt(), (1.0 - a).sqrt())
            }
            ScheduleKind::VarianceExploding => (1.0, self.levels[step]),
            ScheduleKind::RectifiedFlow => {
                let t = self.levels[step];
                (1.0 - t, t)
            }
        })
    }

    /// Noise scale `d` at a step; the factor relating score to the
    /// epsilon parameterization (`eps_hat = -d * score`).
    pub fn noise_scale(&self, step: usize) -> Result<f64> {
        Ok(self.mixing(step)?.1)
    }

    /// Normalized time in [0, 1] fed to the networks' time features.
    pub fn time_of_step(&self, step: usize) -> Result<f64> {
        self.check_step(step)?;
        Ok(step as f64 / (self.num_steps - 1) as f64)
    }

    pub fn alpha_bar(&self, step: usize) -> Result<f64> {
        if self.kind != ScheduleKind::VariancePreserving {
            return Err(Error::invalid("alpha_bar is only defined for VP schedules"));
        }
        self.check_step(step)?;
        Ok(self.levels[step])
    }

    /// Evenly spaced inference indices, largest noise level first, ending at
    /// step 0.
    pub fn inference_indices(&self, inference_steps: usize) -> Result<Vec<usize>> {
        if inference_steps == 0 || inference_steps > self.num_steps {
            return Err(Error::invalid(format!(
                "inference_steps must be in [1, {}]",
                self.num_steps
            )));
        }
        let top = self.max_step() as f64;
        let s = inference_steps as f64;
        let idx: Vec<usize> = (0..inference_steps)
            .map(|k| (top * (s - k as f64) / s).round() as usize)
            .collect();
        Ok(idx)
    }
}

/// Apply the forward corruption at a step.
pub fn perturb(schedule: &NoiseSchedule, x0: &Vector, step: usize, eps: &Vector) -> Result<Vector> {
    if x0.dim() != eps.dim() {
        return Err(Error::DimMismatch {
            expected: x0.dim(),
            got: eps.dim(),
        });
    }
    let (c, d) = schedule.mixing(step)?;
    crate::vector::linear_combine(&[c, d], &[x0, eps])
}
