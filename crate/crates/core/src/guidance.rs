//! Guided model outputs for the generation phase.
//!
//! Classifier-free guidance and autoguidance share one form: a weighted
//! combination `w * D1(x|y1) + (1 - w) * D0(x|y0)` of two raw model outputs.
//! The combination is applied to the models' native parameterization
//! (epsilon or velocity), not to converted scores.

use crate::error::{Error, Result};
use crate::models::{ConditionToken, ModelPair};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    None,
    Cfg,
    Autoguide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub weight: f64,
    pub positive_cond: ConditionToken,
    /// Defaults to the unconditional symbol.
    pub negative_cond: ConditionToken,
}

impl GuidanceSpec {
    pub fn none(y: ConditionToken) -> Self {
        GuidanceSpec {
            mode: GuidanceMode::None,
            weight: 1.0,
            positive_cond: y,
            negative_cond: ConditionToken::Null,
        }
    }

    pub fn cfg(weight: f64, y: ConditionToken) -> Self {
        GuidanceSpec {
            mode: GuidanceMode::Cfg,
            weight,
            positive_cond: y,
            negative_cond: ConditionToken::Null,
        }
    }

    pub fn autoguide(weight: f64, y: ConditionToken) -> Self {
        GuidanceSpec {
            mode: GuidanceMode::Autoguide,
            weight,
            positive_cond: y,
            negative_cond: y,
        }
    }

    pub fn validate_for(&self, pair: &ModelPair) -> Result<()> {
        if self.mode == GuidanceMode::None && self.weight != 1.0 {
            return Err(Error::invalid("guidance mode none forces weight = 1"));
        }
        if self.mode == GuidanceMode::Cfg && !pair.is_aliased() {
            return Err(Error::invalid(
                "classifier-free guidance needs d1 and d0 to be the same model",
            ));
        }
        if pair.d1.parameterization() != pair.d0.parameterization() {
            return Err(Error::invalid(
                "guidance cannot mix epsilon and velocity outputs",
            ));
        }
        Ok(())
    }

    /// Model evaluations per guided output.
    pub fn evals_per_step(&self) -> u64 {
        if self.mode == GuidanceMode::None || self.weight == 1.0 {
            1
        } else {
            2
        }
    }
}

/// `w * D1(x|y1) + (1 - w) * D0(x|y0)` in the models' output space. The
/// `w = 1` path evaluates only D1 and returns its output bit-identically.
pub fn guided_output(
    pair: &ModelPair,
    spec: &GuidanceSpec,
    x: &Vector,
    step: usize,
) -> Result<Vector> {
    spec.validate_for(pair)?;
    let positive = pair.d1.predict(x, step, spec.positive_cond)?;
    if spec.evals_per_step() == 1 {
        return Ok(positive);
    }
    let negative = pair.d0.predict(x, step, spec.negative_cond)?;
    crate::vector::linear_combine(&[spec.weight, 1.0 - spec.weight], &[&positive, &negative])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Denoiser, ModelHandle, Parameterization};
    use crate::schedule::NoiseSchedule;

    /// Test stub returning a constant output.
    struct ConstantModel {
        out: Vec<f64>,
        schedule: NoiseSchedule,
        parameterization: Parameterization,
    }

    impl ConstantModel {
        fn new(out: Vec<f64>) -> Self {
            ConstantModel {
                out,
                schedule: NoiseSchedule::cosine_vp(10).unwrap(),
                parameterization: Parameterization::EpsilonPrediction,
            }
        }
    }

    impl Denoiser for ConstantModel {
        fn data_dim(&self) -> usize {
            self.out.len()
        }
        fn schedule(&self) -> &NoiseSchedule {
            &self.schedule
        }
        fn parameterization(&self) -> Parameterization {
            self.parameterization
        }
        fn predict(&self, _x: &Vector, _step: usize, _y: ConditionToken) -> Result<Vector> {
            Vector::new(self.out.clone())
        }
    }

    fn stub_pair(a: Vec<f64>, b: Vec<f64>) -> ModelPair {
        ModelPair::new(
            ModelHandle::new(Box::new(ConstantModel::new(a))),
            ModelHandle::new(Box::new(ConstantModel::new(b))),
        )
        .unwrap()
    }

    #[test]
    fn weight_one_is_exactly_d1() {
        let pair = stub_pair(vec![0.25, -0.5], vec![9.0, 9.0]);
        let spec = GuidanceSpec {
            mode: GuidanceMode::Autoguide,
            weight: 1.0,
            positive_cond: ConditionToken::Null,
            negative_cond: ConditionToken::Null,
        };
        let out = guided_output(&pair, &spec, &Vector::zeros(2), 0).unwrap();
        assert_eq!(out.as_slice(), &[0.25, -0.5]);
        assert_eq!(pair.total_eval_count(), 1);
    }

    #[test]
    fn weight_zero_is_exactly_d0() {
        let pair = stub_pair(vec![1.0, 0.0], vec![0.125, -3.5]);
        let spec = GuidanceSpec {
            mode: GuidanceMode::Autoguide,
            weight: 0.0,
            positive_cond: ConditionToken::Null,
            negative_cond: ConditionToken::Null,
        };
        let out = guided_output(&pair, &spec, &Vector::zeros(2), 0).unwrap();
        assert_eq!(out.as_slice(), &[0.125, -3.5]);
    }

    #[test]
    fn stable_diffusion_default_weight_arithmetic() {
        let pair = stub_pair(vec![1.0, 0.0], vec![0.0, 1.0]);
        let spec = GuidanceSpec {
            mode: GuidanceMode::Autoguide,
            weight: 7.5,
            positive_cond: ConditionToken::Null,
            negative_cond: ConditionToken::Null,
        };
        let out = guided_output(&pair, &spec, &Vector::zeros(2), 0).unwrap();
        assert_eq!(out.as_slice(), &[7.5, -6.5]);
        assert_eq!(pair.total_eval_count(), 2);
    }

    #[test]
    fn cfg_requires_aliased_pair() {
        let pair = stub_pair(vec![1.0], vec![2.0]);
        let spec = GuidanceSpec::cfg(2.0, ConditionToken::Null);
        assert!(guided_output(&pair, &spec, &Vector::zeros(1), 0).is_err());
    }

    #[test]
    fn weight_difference_equals_edit_direction() {
        // guided(w=1) - guided(w=0) is the alignment module's edit direction
        // on the same inputs, bit for bit.
        use crate::dataset::mix2d_components;
        use crate::models::AnalyticMixtureModel;

        let (means, weights, var) = mix2d_components();
        let schedule = NoiseSchedule::cosine_vp(100).unwrap();
        let oracle = AnalyticMixtureModel::new(means, weights, var, schedule.clone()).unwrap();
        let pair = ModelPair::aliased(ModelHandle::new(Box::new(oracle)));
        let y = ConditionToken::Class(1);
        let step = schedule.max_step();
        let x = Vector::new(vec![0.6, -0.3]).unwrap();
        let at = |w: f64| {
            let spec = GuidanceSpec {
                mode: GuidanceMode::Cfg,
                weight: w,
                positive_cond: y,
                negative_cond: ConditionToken::Null,
            };
            guided_output(&pair, &spec, &x, step).unwrap()
        };
        let diff = at(1.0).sub(&at(0.0)).unwrap();
        let d = crate::align::edit_direction(&pair, y, ConditionToken::Null, &x).unwrap();
        assert_eq!(diff, d);
    }

    #[test]
    fn guided_output_is_affine_in_weight() {
        let pair = stub_pair(vec![2.0, 4.0], vec![-1.0, 1.0]);
        let at = |w: f64| {
            let spec = GuidanceSpec {
                mode: GuidanceMode::Autoguide,
                weight: w,
                positive_cond: ConditionToken::Null,
                negative_cond: ConditionToken::Null,
            };
            guided_output(&pair, &spec, &Vector::zeros(2), 0).unwrap()
        };
        let a = at(0.0);
        let b = at(1.0);
        let mid = at(0.5);
        for i in 0..2 {
            let interp = 0.5 * a.as_slice()[i] + 0.5 * b.as_slice()[i];
            assert!((mid.as_slice()[i] - interp).abs() < 1e-15);
        }
    }
}
