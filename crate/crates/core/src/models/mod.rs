//! Denoiser and velocity models: trainable score networks, the exact
//! Gaussian-mixture oracle, and the pairing used by guidance.

pub mod analytic;
pub mod checkpoint;
pub mod scorenet;
pub mod train;

pub use analytic::AnalyticMixtureModel;
pub use scorenet::{CondVocab, ScoreNet, EMBED_DIM, TIME_FEATURE_DIM};
pub use train::{make_quality_pair, train_diffusion, train_flow, TrainConfig};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vector::Vector;

/// Condition fed to a model: a class label, the unconditional symbol, or a
/// quality tag used by the unified-model casework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionToken {
    Class(usize),
    Null,
    Quality(QualityLevel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QualityLevel {
    High,
    Low,
}

impl std::fmt::Display for ConditionToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditionToken::Class(k) => write!(f, "class{k}"),
            ConditionToken::Null => write!(f, "null"),
            ConditionToken::Quality(QualityLevel::High) => write!(f, "quality_high"),
            ConditionToken::Quality(QualityLevel::Low) => write!(f, "quality_low"),
        }
    }
}

/// What a model's raw output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// Predicts the noise component of the corrupted input.
    EpsilonPrediction,
    /// Predicts the interpolation velocity `eps - x0`.
    Velocity,
}

/// Anything that can be evaluated inside guidance and noise alignment.
pub trait Denoiser: Send + Sync {
    fn data_dim(&self) -> usize;
    fn schedule(&self) -> &NoiseSchedule;
    fn parameterization(&self) -> Parameterization;
    fn predict(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector>;
}

/// A denoiser plus an evaluation counter. Counting happens here so that
/// efficiency accounting reflects real calls, not bookkeeping formulas.
pub struct ModelHandle {
    model: Box<dyn Denoiser>,
    evals: AtomicU64,
}

impl ModelHandle {
    pub fn new(model: Box<dyn Denoiser>) -> Arc<Self> {
        Arc::new(ModelHandle {
            model,
            evals: AtomicU64::new(0),
        })
    }

    pub fn predict(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.model.predict(x, step, y)
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    pub fn data_dim(&self) -> usize {
        self.model.data_dim()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        self.model.schedule()
    }

    pub fn parameterization(&self) -> Parameterization {
        self.model.parameterization()
    }
}

impl Denoiser for ModelHandle {
    fn data_dim(&self) -> usize {
        ModelHandle::data_dim(self)
    }
    fn schedule(&self) -> &NoiseSchedule {
        ModelHandle::schedule(self)
    }
    fn parameterization(&self) -> Parameterization {
        ModelHandle::parameterization(self)
    }
    fn predict(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector> {
        ModelHandle::predict(self, x, step, y)
    }
}

/// The `(high-quality, reference)` model pair guidance operates on. For
/// classifier-free guidance both handles alias the same model; for
/// autoguidance they are distinct.
#[derive(Clone)]
pub struct ModelPair {
    pub d1: Arc<ModelHandle>,
    pub d0: Arc<ModelHandle>,
}

impl ModelPair {
    pub fn new(d1: Arc<ModelHandle>, d0: Arc<ModelHandle>) -> Result<Self> {
        if d1.data_dim() != d0.data_dim() {
            return Err(Error::DimMismatch {
                expected: d1.data_dim(),
                got: d0.data_dim(),
            });
        }
        if d1.schedule().initial_noise_std() != d0.schedule().initial_noise_std() {
            return Err(Error::invalid(format!(
                "model pair sigma_max mismatch: {} vs {}",
                d1.schedule().initial_noise_std(),
                d0.schedule().initial_noise_std()
            )));
        }
        Ok(ModelPair { d1, d0 })
    }

    /// Single-model pair, as used by classifier-free guidance.
    pub fn aliased(model: Arc<ModelHandle>) -> Self {
        ModelPair {
            d1: Arc::clone(&model),
            d0: model,
        }
    }

    pub fn is_aliased(&self) -> bool {
        Arc::ptr_eq(&self.d1, &self.d0)
    }

    pub fn data_dim(&self) -> usize {
        self.d1.data_dim()
    }

    pub fn total_eval_count(&self) -> u64 {
        if self.is_aliased() {
            self.d1.eval_count()
        } else {
            self.d1.eval_count() + self.d0.eval_count()
        }
    }

    pub fn reset_eval_counts(&self) {
        self.d1.reset_eval_count();
        self.d0.reset_eval_count();
    }
}
