//! Trainable denoiser / velocity network over low-dimensional data.
//!
//! Input layout: data coordinates, then sinusoidal time features, then a
//! learned condition embedding. The condition vocabulary is the class set
//! plus a dedicated null row plus two quality rows.

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::models::{ConditionToken, Denoiser, Parameterization, QualityLevel};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::vector::Vector;

pub const TIME_FEATURE_DIM: usize = 32;
pub const EMBED_DIM: usize = 16;

/// Maps condition tokens to rows of the embedding table. Layout: classes
/// `0..K`, then null, then quality high, then quality low.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondVocab {
    pub num_classes: usize,
}

impl CondVocab {
    pub fn new(num_classes: usize) -> Self {
        CondVocab { num_classes }
    }

    pub fn size(&self) -> usize {
        self.num_classes + 3
    }

    pub fn index(&self, token: ConditionToken) -> Result<usize> {
        match token {
            ConditionToken::Class(k) if k < self.num_classes => Ok(k),
            ConditionToken::Class(k) => Err(Error::invalid(format!(
                "unknown class id {k}; vocabulary has {} classes",
                self.num_classes
            ))),
            ConditionToken::Null => Ok(self.num_classes),
            ConditionToken::Quality(QualityLevel::High) => Ok(self.num_classes + 1),
            ConditionToken::Quality(QualityLevel::Low) => Ok(self.num_classes + 2),
        }
    }
}

/// Sinusoidal features of normalized time in [0, 1]: pairs
/// `(sin(pi k t), cos(pi k t))` for k = 1..=16. Half-period frequencies keep
/// the endpoints t = 0 and t = 1 distinguishable.
pub fn time_features(t: f64, out: &mut Vec<f64>) {
    out.clear();
    for k in 1..=(TIME_FEATURE_DIM / 2) {
        let w = std::f64::consts::PI * k as f64 * t;
        out.push(w.sin());
        out.push(w.cos());
    }
}

#[derive(Debug, Clone)]
pub struct ScoreNet {
    pub(crate) mlp: Mlp,
    /// Row-major (vocab_size x EMBED_DIM) table.
    pub(crate) embedding: Vec<f64>,
    pub(crate) vocab: CondVocab,
    data_dim: usize,
    parameterization: Parameterization,
    schedule: NoiseSchedule,
}

impl ScoreNet {
    /// Fresh network. `hidden` lists hidden-layer widths; the default
    /// architecture is three layers of 128 units.
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        vocab: CondVocab,
        parameterization: Parameterization,
        schedule: NoiseSchedule,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::invalid("data_dim must be positive"));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(data_dim + TIME_FEATURE_DIM + EMBED_DIM);
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let mlp = Mlp::init(&dims, rng)?;
        let embedding = (0..vocab.size() * EMBED_DIM)
            .map(|_| rng.next_gaussian() * 0.3)
            .collect();
        Ok(ScoreNet {
            mlp,
            embedding,
            vocab,
            data_dim,
            parameterization,
            schedule,
        })
    }

    pub(crate) fn from_parts(
        mlp: Mlp,
        embedding: Vec<f64>,
        vocab: CondVocab,
        parameterization: Parameterization,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        let input = mlp.input_dim();
        let data_dim = mlp.output_dim();
        if embedding.len() != vocab.size() * EMBED_DIM {
            return Err(Error::invalid("embedding table size mismatch"));
        }
        if input != data_dim + TIME_FEATURE_DIM + EMBED_DIM {
            return Err(Error::invalid("network input layout mismatch"));
        }
        Ok(ScoreNet {
            mlp,
            embedding,
            vocab,
            data_dim,
            parameterization,
            schedule,
        })
    }

    pub fn vocab(&self) -> CondVocab {
        self.vocab
    }

    pub fn embedding_row(&self, idx: usize) -> &[f64] {
        &self.embedding[idx * EMBED_DIM..(idx + 1) * EMBED_DIM]
    }

    /// Assemble the full network input for `(x, step, y)`.
    pub(crate) fn build_input(&self, x: &[f64], t: f64, token_idx: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(x);
        let mut tf = Vec::with_capacity(TIME_FEATURE_DIM);
        time_features(t, &mut tf);
        buf.extend_from_slice(&tf);
        buf.extend_from_slice(self.embedding_row(token_idx));
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let layers = self.mlp.layers();
        layers[..layers.len() - 1].iter().map(|l| l.rows).collect()
    }
}

impl Denoiser for ScoreNet {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    fn predict(&self, x: &Vector, step: usize, y: ConditionToken) -> Result<Vector> {
        if x.dim() != self.data_dim {
            return Err(Error::DimMismatch {
                expected: self.data_dim,
                got: x.dim(),
            });
        }
        let t = self.schedule.time_of_step(step)?;
        let idx = self.vocab.index(y)?;
        let mut input = Vec::with_capacity(self.mlp.input_dim());
        self.build_input(x.as_slice(), t, idx, &mut input);
        Vector::new(self.mlp.forward(&input))
    }
}
