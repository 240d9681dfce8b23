//! The three multiple-instance classifiers and their max-aggregated losses.
//!
//! * [`LinearModel`]: `Wᵀx + b` (MI-max).
//! * [`PolyhedralModel`]: `max_j W_jᵀx + b_j` (MaxOfMax), a concave polyhedral boundary.
//! * [`HiddenLayerModel`]: `Ωᵀ tanh(Wx + b) + β` (MI-max-HL).

mod loss;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm_sq, Scalar};

pub use loss::{
    bag_score, batch_gradient, batch_loss, batch_loss_and_gradient, detection_confidence,
    weighted_instance_score, BagScore, ClassWeights,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(weights: Vec<T>, bias: T) -> Self {
        Self { weights, bias }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn eval(&self, x: &[T]) -> T {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralModel<T> {
    pub hyperplanes: Vec<LinearModel<T>>,
}

impl<T: Scalar> PolyhedralModel<T> {
    /// Max over hyperplanes; ties go to the lowest index.
    #[inline]
    pub fn eval(&self, x: &[T]) -> (T, usize) {
        let mut best = (self.hyperplanes[0].eval(x), 0);
        for (j, plane) in self.hyperplanes.iter().enumerate().skip(1) {
            let v = plane.eval(x);
            if v > best.0 {
                best = (v, j);
            }
        }
        best
    }
}

/// One tanh hidden layer of width `L` followed by a linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayerModel<T> {
    pub dim: usize,
    pub width: usize,
    /// `L x M`, row-major.
    pub weights: Vec<T>,
    pub biases: Vec<T>,
    pub output_weights: Vec<T>,
    pub output_bias: T,
}

impl<T: Scalar> HiddenLayerModel<T> {
    pub fn zeros(dim: usize, width: usize) -> Self {
        Self {
            dim,
            width,
            weights: vec![T::zero(); dim * width],
            biases: vec![T::zero(); width],
            output_weights: vec![T::zero(); width],
            output_bias: T::zero(),
        }
    }

    pub fn hidden(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.biases)
            .map(|(row, b)| (dot(row, x) + *b).tanh())
            .collect()
    }

    #[inline]
    pub fn eval(&self, x: &[T]) -> T {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.biases)
            .zip(&self.output_weights)
            .fold(T::zero(), |acc, ((row, b), o)| {
                acc + *o * (dot(row, x) + *b).tanh()
            })
            + self.output_bias
    }
}

/// Which architecture to train, with its size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum VariantSpec {
    Linear,
    Polyhedral { hyperplanes: usize },
    Hidden { width: usize },
}

impl VariantSpec {
    pub fn name(&self) -> &'static str {
        match self {
            VariantSpec::Linear => "linear",
            VariantSpec::Polyhedral { .. } => "polyhedral",
            VariantSpec::Hidden { .. } => "hidden",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelVariant<T> {
    Linear(LinearModel<T>),
    Polyhedral(PolyhedralModel<T>),
    Hidden(HiddenLayerModel<T>),
}

impl<T: Scalar> ModelVariant<T> {
    pub fn zeros(spec: VariantSpec, dim: usize) -> Self {
        match spec {
            VariantSpec::Linear => ModelVariant::Linear(LinearModel::zeros(dim)),
            VariantSpec::Polyhedral { hyperplanes } => ModelVariant::Polyhedral(PolyhedralModel {
                hyperplanes: vec![LinearModel::zeros(dim); hyperplanes],
            }),
            VariantSpec::Hidden { width } => ModelVariant::Hidden(HiddenLayerModel::zeros(dim, width)),
        }
    }

    pub fn spec(&self) -> VariantSpec {
        match self {
            ModelVariant::Linear(_) => VariantSpec::Linear,
            ModelVariant::Polyhedral(p) => VariantSpec::Polyhedral {
                hyperplanes: p.hyperplanes.len(),
            },
            ModelVariant::Hidden(h) => VariantSpec::Hidden { width: h.width },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelVariant::Linear(m) => m.dim(),
            ModelVariant::Polyhedral(p) => p.hyperplanes[0].dim(),
            ModelVariant::Hidden(h) => h.dim,
        }
    }

    /// `(raw value, active hyperplane)`; the index is 0 except for polyhedral models.
    pub fn forward(&self, x: &[T]) -> Result<(T, usize)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, x: &[T]) -> (T, usize) {
        match self {
            ModelVariant::Linear(m) => (m.eval(x), 0),
            ModelVariant::Polyhedral(p) => p.eval(x),
            ModelVariant::Hidden(h) => (h.eval(x), 0),
        }
    }

    /// `‖W‖²` over the weight matrices only (never biases, Ω or β).
    pub fn weight_norm_sq(&self) -> T {
        match self {
            ModelVariant::Linear(m) => norm_sq(&m.weights),
            ModelVariant::Polyhedral(p) => p
                .hyperplanes
                .iter()
                .fold(T::zero(), |acc, h| acc + norm_sq(&h.weights)),
            ModelVariant::Hidden(h) => norm_sq(&h.weights),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelVariant::Linear(m) => m.dim() + 1,
            ModelVariant::Polyhedral(p) => p.hyperplanes.iter().map(|h| h.dim() + 1).sum(),
            ModelVariant::Hidden(h) => h.width * (h.dim + 2) + 1,
        }
    }

    /// Flat parameter vector. Linear: `W, b`; polyhedral: `W_1, b_1, ..., W_J, b_J`;
    /// hidden: `W` (row-major), `b`, `Ω`, `β`.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            ModelVariant::Linear(m) => {
                out.extend_from_slice(&m.weights);
                out.push(m.bias);
            }
            ModelVariant::Polyhedral(p) => {
                for h in &p.hyperplanes {
                    out.extend_from_slice(&h.weights);
                    out.push(h.bias);
                }
            }
            ModelVariant::Hidden(h) => {
                out.extend_from_slice(&h.weights);
                out.extend_from_slice(&h.biases);
                out.extend_from_slice(&h.output_weights);
                out.push(h.output_bias);
            }
        }
        out
    }

    /// Overwrites the parameters from the layout of [`Self::parameters`].
    pub fn set_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let mut it = params.iter().copied();
        let mut fill = |dst: &mut [T]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        match self {
            ModelVariant::Linear(m) => {
                fill(&mut m.weights);
                fill(std::slice::from_mut(&mut m.bias));
            }
            ModelVariant::Polyhedral(p) => {
                for h in &mut p.hyperplanes {
                    fill(&mut h.weights);
                    fill(std::slice::from_mut(&mut h.bias));
                }
            }
            ModelVariant::Hidden(h) => {
                fill(&mut h.weights);
                fill(&mut h.biases);
                fill(&mut h.output_weights);
                fill(std::slice::from_mut(&mut h.output_bias));
            }
        }
        Ok(())
    }

    /// `self += alpha * other` for two models of the same shape.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        fn axpy<T: Scalar>(dst: &mut [T], alpha: T, src: &[T]) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + alpha * *s);
        }
        match (self, other) {
            (ModelVariant::Linear(a), ModelVariant::Linear(b)) => {
                axpy(&mut a.weights, alpha, &b.weights);
                a.bias = a.bias + alpha * b.bias;
            }
            (ModelVariant::Polyhedral(a), ModelVariant::Polyhedral(b)) => {
                for (ha, hb) in a.hyperplanes.iter_mut().zip(&b.hyperplanes) {
                    axpy(&mut ha.weights, alpha, &hb.weights);
                    ha.bias = ha.bias + alpha * hb.bias;
                }
            }
            (ModelVariant::Hidden(a), ModelVariant::Hidden(b)) => {
                axpy(&mut a.weights, alpha, &b.weights);
                axpy(&mut a.biases, alpha, &b.biases);
                axpy(&mut a.output_weights, alpha, &b.output_weights);
                a.output_bias = a.output_bias + alpha * b.output_bias;
            }
            _ => panic!("add_scaled on models of different variants"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Tanh,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub kind: LossKind,
    /// Multiply raw scores by `objectness + ε`.
    pub use_score: bool,
    pub epsilon: T,
    /// Regularization weight on `‖W‖²`.
    pub c: T,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(kind: LossKind, use_score: bool, epsilon: T, c: T) -> Result<Self> {
        if !(epsilon >= T::zero() && c >= T::zero()) {
            return Err(Error::Config("epsilon and C must be non-negative".into()));
        }
        Ok(Self {
            kind,
            use_score,
            epsilon,
            c,
        })
    }
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            kind: LossKind::Tanh,
            use_score: true,
            epsilon: T::of(0.01),
            c: T::one(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward() {
        let m = ModelVariant::Linear(LinearModel::new(vec![1.0, 0.0], 0.0));
        assert_eq!(m.forward(&[2.0, 0.0]).unwrap(), (2.0, 0));
    }

    #[test]
    fn polyhedral_forward_picks_argmax() {
        let m = ModelVariant::Polyhedral(PolyhedralModel {
            hyperplanes: vec![
                LinearModel::new(vec![1.0, 0.0], 0.0),
                LinearModel::new(vec![0.0, 1.0], 0.0),
            ],
        });
        assert_eq!(m.forward(&[1.0, 3.0]).unwrap(), (3.0, 1));
        // tie goes to the lowest index
        assert_eq!(m.forward(&[2.0, 2.0]).unwrap(), (2.0, 0));
    }

    #[test]
    fn hidden_forward_zero_activation() {
        let m = ModelVariant::Hidden(HiddenLayerModel {
            dim: 2,
            width: 1,
            weights: vec![1.0, 0.0],
            biases: vec![0.0],
            output_weights: vec![1.0],
            output_bias: 0.0,
        });
        assert_eq!(m.forward(&[0.0, 5.0]).unwrap(), (0.0, 0));
    }

    #[test]
    fn forward_dimension_mismatch() {
        let m = ModelVariant::<f64>::zeros(VariantSpec::Linear, 3);
        assert!(matches!(
            m.forward(&[1.0, 2.0]),
            Err(Error::Dimension { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn hidden_parameter_count() {
        let (dim, width) = (7, 4);
        let m = ModelVariant::<f64>::zeros(VariantSpec::Hidden { width }, dim);
        assert_eq!(m.param_count(), width * (dim + 2) + 1);
        assert_eq!(m.parameters().len(), m.param_count());
    }

    #[test]
    fn parameters_roundtrip() {
        for spec in [
            VariantSpec::Linear,
            VariantSpec::Polyhedral { hyperplanes: 3 },
            VariantSpec::Hidden { width: 2 },
        ] {
            let mut m = ModelVariant::<f64>::zeros(spec, 4);
            let p: Vec<f64> = (0..m.param_count()).map(|i| i as f64 * 0.5).collect();
            m.set_parameters(&p).unwrap();
            assert_eq!(m.parameters(), p);
            assert!(m.set_parameters(&p[1..]).is_err());
        }
    }

    #[test]
    fn negative_regularization_rejected() {
        assert!(LossConfig::new(LossKind::Tanh, true, 0.01, -1.0).is_err());
        assert!(LossConfig::new(LossKind::Tanh, true, -0.01, 1.0).is_err());
    }
}
