use super::{LossConfig, LossKind, ModelVariant};
use crate::bagdata::{FeatureBag, Label, LabeledBag};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(s + ε) · raw` when objectness weighting is on, `raw` otherwise.
#[inline]
pub fn weighted_instance_score<T: Scalar>(raw: T, objectness: T, epsilon: T, use_score: bool) -> T {
    if use_score {
        (objectness + epsilon) * raw
    } else {
        raw
    }
}

/// Ranking score of one region at inference: `tanh((s + ε)(raw))`, or `tanh(raw)`
/// without objectness weighting.
pub fn detection_confidence<T: Scalar>(
    model: &ModelVariant<T>,
    x: &[T],
    objectness: T,
    config: &LossConfig<T>,
) -> Result<T> {
    let (raw, _) = model.forward(x)?;
    Ok(weighted_instance_score(raw, objectness, config.epsilon, config.use_score).tanh())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BagScore<T> {
    pub value: T,
    pub instance: usize,
    pub hyperplane: usize,
}

/// Max over regions of the weighted instance score; ties go to the lowest region index.
pub fn bag_score<T: Scalar>(
    model: &ModelVariant<T>,
    bag: &FeatureBag<T>,
    config: &LossConfig<T>,
) -> Result<BagScore<T>> {
    if bag.regions.is_empty() {
        return Err(Error::EmptyBag(bag.image_id.clone()));
    }
    let dim = model.dim();
    if let Some(r) = bag.regions.iter().find(|r| r.features.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            found: r.features.len(),
        });
    }
    Ok(bag_score_unchecked(model, bag, config))
}

#[inline]
fn bag_score_unchecked<T: Scalar>(
    model: &ModelVariant<T>,
    bag: &FeatureBag<T>,
    config: &LossConfig<T>,
) -> BagScore<T> {
    let mut best: Option<BagScore<T>> = None;
    for (k, region) in bag.regions.iter().enumerate() {
        let (raw, hyperplane) = model.forward_unchecked(&region.features);
        let value = weighted_instance_score(raw, region.objectness, config.epsilon, config.use_score);
        if best.map_or(true, |b| value > b.value) {
            best = Some(BagScore {
                value,
                instance: k,
                hyperplane,
            });
        }
    }
    best.expect("bag checked non-empty")
}

/// Class sizes `n_1`, `n_{-1}` of the full training set, used to weight each bag by `1 / n_{Y_i}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassWeights {
    pub positives: usize,
    pub negatives: usize,
}

impl ClassWeights {
    pub fn new(positives: usize, negatives: usize) -> Result<Self> {
        if positives == 0 || negatives == 0 {
            return Err(Error::Validation(format!(
                "class weights need both signs, got {positives} positive and {negatives} negative bags"
            )));
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    pub fn from_bags<T>(bags: &[LabeledBag<'_, T>]) -> Result<Self> {
        let positives = bags.iter().filter(|(_, l)| l.is_positive()).count();
        Self::new(positives, bags.len() - positives)
    }

    fn inverse<T: Scalar>(&self, label: Label) -> T {
        let n = match label {
            Label::Positive => self.positives,
            Label::Negative => self.negatives,
        };
        T::one() / T::of(n as f64)
    }
}

pub fn batch_loss<T: Scalar>(
    model: &ModelVariant<T>,
    batch: &[LabeledBag<'_, T>],
    weights: ClassWeights,
    config: &LossConfig<T>,
) -> Result<T> {
    check_batch(model, batch)?;
    Ok(accumulate(model, batch, weights, config, None))
}

/// Gradient of [`batch_loss`] with each bag's argmax region (and active
/// hyperplane) held fixed at the current parameters.
pub fn batch_gradient<T: Scalar>(
    model: &ModelVariant<T>,
    batch: &[LabeledBag<'_, T>],
    weights: ClassWeights,
    config: &LossConfig<T>,
) -> Result<ModelVariant<T>> {
    batch_loss_and_gradient(model, batch, weights, config).map(|(_, g)| g)
}

pub fn batch_loss_and_gradient<T: Scalar>(
    model: &ModelVariant<T>,
    batch: &[LabeledBag<'_, T>],
    weights: ClassWeights,
    config: &LossConfig<T>,
) -> Result<(T, ModelVariant<T>)> {
    check_batch(model, batch)?;
    let mut grad = ModelVariant::zeros(model.spec(), model.dim());
    let loss = accumulate(model, batch, weights, config, Some(&mut grad));
    Ok((loss, grad))
}

fn check_batch<T: Scalar>(model: &ModelVariant<T>, batch: &[LabeledBag<'_, T>]) -> Result<()> {
    let dim = model.dim();
    for (bag, _) in batch {
        if bag.regions.is_empty() {
            return Err(Error::EmptyBag(bag.image_id.clone()));
        }
        if let Some(r) = bag.regions.iter().find(|r| r.features.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: r.features.len(),
            });
        }
    }
    Ok(())
}

fn accumulate<T: Scalar>(
    model: &ModelVariant<T>,
    batch: &[LabeledBag<'_, T>],
    weights: ClassWeights,
    config: &LossConfig<T>,
    mut grad: Option<&mut ModelVariant<T>>,
) -> T {
    let mut data = T::zero();
    for (bag, label) in batch {
        let score = bag_score_unchecked(model, bag, config);
        let y: T = label.sign();
        let inv_n: T = weights.inverse(*label);
        // d(loss)/d(score)
        let slope = match config.kind {
            LossKind::Tanh => {
                let t = score.value.tanh();
                data = data + y * inv_n * t;
                -(y * inv_n) * (T::one() - t * t)
            }
            LossKind::Hinge => {
                let gap = T::one() - y * score.value;
                if gap > T::zero() {
                    data = data + inv_n * gap;
                    -(y * inv_n)
                } else {
                    T::zero()
                }
            }
        };
        if let Some(grad) = grad.as_deref_mut() {
            let region = &bag.regions[score.instance];
            let g = slope
                * weighted_instance_score(T::one(), region.objectness, config.epsilon, config.use_score);
            add_instance_gradient(model, grad, &region.features, score.hyperplane, g);
        }
    }

    if let Some(grad) = grad {
        let two_c = config.c + config.c;
        add_regularizer_gradient(model, grad, two_c);
    }

    let regularizer = config.c * model.weight_norm_sq();
    match config.kind {
        LossKind::Tanh => T::of(2.0) - data + regularizer,
        LossKind::Hinge => data + regularizer,
    }
}

/// `grad += g · ∂raw/∂θ` at region `x`.
fn add_instance_gradient<T: Scalar>(
    model: &ModelVariant<T>,
    grad: &mut ModelVariant<T>,
    x: &[T],
    hyperplane: usize,
    g: T,
) {
    match (model, grad) {
        (ModelVariant::Linear(_), ModelVariant::Linear(gm)) => {
            gm.weights.iter_mut().zip(x).for_each(|(w, xi)| *w = *w + g * *xi);
            gm.bias = gm.bias + g;
        }
        (ModelVariant::Polyhedral(_), ModelVariant::Polyhedral(gp)) => {
            let gm = &mut gp.hyperplanes[hyperplane];
            gm.weights.iter_mut().zip(x).for_each(|(w, xi)| *w = *w + g * *xi);
            gm.bias = gm.bias + g;
        }
        (ModelVariant::Hidden(h), ModelVariant::Hidden(gh)) => {
            let hidden = h.hidden(x);
            for (l, a) in hidden.iter().enumerate() {
                gh.output_weights[l] = gh.output_weights[l] + g * *a;
                let back = g * h.output_weights[l] * (T::one() - *a * *a);
                gh.biases[l] = gh.biases[l] + back;
                let row = &mut gh.weights[l * h.dim..(l + 1) * h.dim];
                row.iter_mut().zip(x).for_each(|(w, xi)| *w = *w + back * *xi);
            }
            gh.output_bias = gh.output_bias + g;
        }
        _ => unreachable!("gradient shape follows the model"),
    }
}

fn add_regularizer_gradient<T: Scalar>(model: &ModelVariant<T>, grad: &mut ModelVariant<T>, two_c: T) {
    fn add<T: Scalar>(dst: &mut [T], src: &[T], two_c: T) {
        dst.iter_mut().zip(src).for_each(|(d, w)| *d = *d + two_c * *w);
    }
    match (model, grad) {
        (ModelVariant::Linear(m), ModelVariant::Linear(g)) => add(&mut g.weights, &m.weights, two_c),
        (ModelVariant::Polyhedral(m), ModelVariant::Polyhedral(g)) => {
            for (hm, hg) in m.hyperplanes.iter().zip(&mut g.hyperplanes) {
                add(&mut hg.weights, &hm.weights, two_c);
            }
        }
        (ModelVariant::Hidden(m), ModelVariant::Hidden(g)) => add(&mut g.weights, &m.weights, two_c),
        _ => unreachable!("gradient shape follows the model"),
    }
}
