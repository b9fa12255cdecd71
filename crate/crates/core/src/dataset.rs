//! Labeled toy datasets drawn from Gaussian mixtures.

use crate::error::{Error, Result};
use crate::models::analytic::AnalyticMixtureModel;
use crate::rng::RngStream;
use crate::vector::Vector;

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub points: Vec<Vector>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vector>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::invalid("dataset needs equally many points and labels"));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::invalid("dataset label outside class set"));
        }
        Ok(LabeledDataset {
            points,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Draw `count` labeled points from the mixture a model describes.
    pub fn from_mixture(
        mixture: &AnalyticMixtureModel,
        count: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let (x, k) = mixture.sample_labeled(rng)?;
            points.push(x);
            labels.push(k);
        }
        LabeledDataset::new(points, labels, mixture.num_classes())
    }
}

/// Mixture behind the default multi-class benchmark: 8 components with means
/// on a circle of radius 4 and per-coordinate std 0.3.
pub fn ring8_mixture() -> (Vec<Vector>, Vec<f64>, f64) {
    let k = 8usize;
    let radius = 4.0;
    let means = (0..k)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            Vector::new(vec![radius * theta.cos(), radius * theta.sin()]).unwrap()
        })
        .collect();
    (means, vec![1.0 / k as f64; k], 0.09)
}

/// 1-D two-component mixture (means +-2, std 1); the closed-form
/// verification default.
pub fn mix1d_components() -> (Vec<Vector>, Vec<f64>, f64) {
    (
        vec![
            Vector::new(vec![-2.0]).unwrap(),
            Vector::new(vec![2.0]).unwrap(),
        ],
        vec![0.5, 0.5],
        1.0,
    )
}

/// 2-D two-component mixture (means (+-2, 0), std 1); used where the loop
/// dynamics need more than one dimension.
pub fn mix2d_components() -> (Vec<Vector>, Vec<f64>, f64) {
    (
        vec![
            Vector::new(vec![-2.0, 0.0]).unwrap(),
            Vector::new(vec![2.0, 0.0]).unwrap(),
        ],
        vec![0.5, 0.5],
        1.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::NoiseSchedule;

    #[test]
    fn mixture_sampling_covers_classes() {
        let (means, weights, var) = ring8_mixture();
        let schedule = NoiseSchedule::cosine_vp(100).unwrap();
        let m = AnalyticMixtureModel::new(means, weights, var, schedule).unwrap();
        let mut rng = RngStream::new(1, 0);
        let ds = LabeledDataset::from_mixture(&m, 800, &mut rng).unwrap();
        assert_eq!(ds.dim(), 2);
        let mut counts = vec![0usize; 8];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 50), "class counts {counts:?}");
    }

    #[test]
    fn label_out_of_range_rejected() {
        let p = vec![Vector::zeros(1)];
        assert!(LabeledDataset::new(p, vec![3], 2).is_err());
    }
}
