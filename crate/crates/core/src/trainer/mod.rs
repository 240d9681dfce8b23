//! Plain gradient descent with random restarts, one binary problem per class.

mod sidecar;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagdata::{Dataset, LabeledBag};
use crate::error::{Error, Result};
use crate::milmodels::{
    batch_loss, batch_loss_and_gradient, detection_confidence, ClassWeights, HiddenLayerModel,
    LinearModel, LossConfig, LossKind, ModelVariant, PolyhedralModel, VariantSpec,
};
use crate::scalar::Scalar;

pub use sidecar::{decode_models, encode_models, read_models, write_models, MIMX_MAGIC, MIMX_VERSION};

const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Bags per gradient step; the full set is used when it is not larger.
    pub batch_bags: usize,
    pub restarts: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    pub use_score: bool,
    pub variant: VariantSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(VariantSpec::Linear)
    }
}

impl TrainConfig {
    /// Defaults: 300 iterations for the linear model, 3000 otherwise;
    /// batches of 1000 bags, 500 for the hidden-layer model.
    pub fn for_variant(variant: VariantSpec) -> Self {
        let (iterations, batch_bags) = match variant {
            VariantSpec::Linear => (300, 1000),
            VariantSpec::Polyhedral { .. } => (3000, 1000),
            VariantSpec::Hidden { .. } => (3000, 500),
        };
        Self {
            learning_rate: 0.01,
            iterations,
            batch_bags,
            restarts: 12,
            c: 1.0,
            epsilon: 0.01,
            loss: LossKind::Tanh,
            use_score: true,
            variant,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if self.iterations == 0 || self.restarts == 0 || self.batch_bags == 0 {
            return fail("iterations, restarts and batch size must be at least 1");
        }
        if !(self.c >= 0.0 && self.epsilon >= 0.0) {
            return fail("C and epsilon must be non-negative");
        }
        match self.variant {
            VariantSpec::Polyhedral { hyperplanes: 0 } => fail("polyhedral model needs J >= 1"),
            VariantSpec::Hidden { width: 0 } => fail("hidden layer needs L >= 1"),
            _ => Ok(()),
        }
    }

    pub fn loss_config<T: Scalar>(&self) -> LossConfig<T> {
        LossConfig {
            kind: self.loss,
            use_score: self.use_score,
            epsilon: T::of(self.epsilon),
            c: T::of(self.c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassModel<T> {
    pub class_name: String,
    pub model: ModelVariant<T>,
    /// Full-training-set loss at the last iterate of each restart; `None` for failed restarts.
    pub restart_losses: Vec<Option<f64>>,
    pub selected_restart: usize,
    pub config: TrainConfig,
}

impl<T: Scalar> TrainedClassModel<T> {
    pub fn selected_loss(&self) -> f64 {
        self.restart_losses[self.selected_restart].unwrap_or(f64::NAN)
    }

    pub fn loss_config(&self) -> LossConfig<T> {
        self.config.loss_config()
    }

    pub fn confidence(&self, x: &[T], objectness: T) -> Result<T> {
        detection_confidence(&self.model, x, objectness, &self.loss_config())
    }
}

pub type ModelSet<T> = BTreeMap<String, TrainedClassModel<T>>;

#[derive(Debug, Default)]
pub struct MulticlassTraining<T> {
    pub models: ModelSet<T>,
    pub failures: BTreeMap<String, Error>,
}

/// Seed of one restart. Restart `ρ` gets the same seed whatever the total
/// number of restarts, so best-of-r is monotone in r.
pub fn restart_seed(seed: u64, stream: u64, restart: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(stream)) ^ restart as u64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gaussian weights (std 0.01), zero biases.
pub fn initialize_model<T: Scalar>(
    variant: VariantSpec,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> ModelVariant<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(normal.sample(rng))).collect() };
    match variant {
        VariantSpec::Linear => ModelVariant::Linear(LinearModel::new(draw(dim), T::zero())),
        VariantSpec::Polyhedral { hyperplanes } => ModelVariant::Polyhedral(PolyhedralModel {
            hyperplanes: (0..hyperplanes)
                .map(|_| LinearModel::new(draw(dim), T::zero()))
                .collect(),
        }),
        VariantSpec::Hidden { width } => {
            let weights = draw(width * dim);
            let output_weights = draw(width);
            ModelVariant::Hidden(HiddenLayerModel {
                dim,
                width,
                weights,
                biases: vec![T::zero(); width],
                output_weights,
                output_bias: T::zero(),
            })
        }
    }
}

pub fn train_class<T: Scalar>(
    dataset: &Dataset<T>,
    class: &str,
    config: &TrainConfig,
) -> Result<TrainedClassModel<T>> {
    let class_index = dataset.class_index(class)?;
    dataset.require_both_signs(class_index)?;
    let bags = dataset.labeled_bags(class_index);
    train_labeled(&bags, dataset.dim, class, class_index as u64, config)
}

/// Trains on explicit `(bag, label)` pairs. `stream` separates the seed
/// sequences of independent problems that share one `config.seed`.
pub fn train_labeled<T: Scalar>(
    bags: &[LabeledBag<'_, T>],
    dim: usize,
    class_name: &str,
    stream: u64,
    config: &TrainConfig,
) -> Result<TrainedClassModel<T>> {
    config.validate()?;
    let weights = ClassWeights::from_bags(bags).map_err(|_| {
        let positives = bags.iter().filter(|(_, l)| l.is_positive()).count();
        Error::SingleSign {
            class: class_name.to_string(),
            positives,
            negatives: bags.len() - positives,
        }
    })?;
    let loss_config = config.loss_config::<T>();

    let runs: Vec<Option<(ModelVariant<T>, f64)>> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| {
            let seed = restart_seed(config.seed, stream, restart);
            run_restart(bags, dim, weights, &loss_config, config, seed)
        })
        .collect::<Result<_>>()?;

    let selected = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|(_, loss)| (i, *loss)))
        .fold(None, |best: Option<(usize, f64)>, (i, loss)| match best {
            Some((_, b)) if b <= loss => best,
            _ => Some((i, loss)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::Training(format!(
                "all {} restarts diverged for class {class_name:?}",
                config.restarts
            ))
        })?;

    let restart_losses = runs.iter().map(|r| r.as_ref().map(|(_, l)| *l)).collect();
    let model = runs
        .into_iter()
        .nth(selected)
        .flatten()
        .map(|(m, _)| m)
        .expect("selected restart succeeded");
    Ok(TrainedClassModel {
        class_name: class_name.to_string(),
        model,
        restart_losses,
        selected_restart: selected,
        config: config.clone(),
    })
}

/// One restart; `Ok(None)` when the loss or parameters stop being finite.
fn run_restart<T: Scalar>(
    bags: &[LabeledBag<'_, T>],
    dim: usize,
    weights: ClassWeights,
    loss_config: &LossConfig<T>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Option<(ModelVariant<T>, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = initialize_model::<T>(config.variant, dim, &mut rng);
    let step = -T::of(config.learning_rate);
    let mut sampler = BatchSampler::new(bags.len(), config.batch_bags);
    let mut batch = Vec::with_capacity(config.batch_bags.min(bags.len()));

    for _ in 0..config.iterations {
        let (loss, grad) = if sampler.is_full() {
            batch_loss_and_gradient(&model, bags, weights, loss_config)?
        } else {
            batch.clear();
            batch.extend(sampler.next(&mut rng).iter().map(|&i| bags[i]));
            batch_loss_and_gradient(&model, &batch, weights, loss_config)?
        };
        if !loss.is_finite() {
            return Ok(None);
        }
        model.add_scaled(step, &grad);
    }

    let final_loss = batch_loss(&model, bags, weights, loss_config)?.as_f64();
    if !final_loss.is_finite() || !model.is_finite() {
        return Ok(None);
    }
    Ok(Some((model, final_loss)))
}

/// Epoch-shuffled batches drawn without replacement; reshuffles when fewer
/// than a full batch remains.
struct BatchSampler {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize) -> Self {
        Self {
            order: (0..n).collect(),
            batch: batch.min(n),
            cursor: n,
        }
    }

    fn is_full(&self) -> bool {
        self.batch == self.order.len()
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

/// Trains every class independently; classes that cannot be trained are
/// reported in `failures` without affecting the others.
pub fn train_multiclass<T: Scalar>(dataset: &Dataset<T>, config: &TrainConfig) -> MulticlassTraining<T> {
    let results: Vec<(String, Result<TrainedClassModel<T>>)> = dataset
        .class_names
        .par_iter()
        .map(|class| (class.clone(), train_class(dataset, class, config)))
        .collect();
    let mut out = MulticlassTraining {
        models: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for (class, result) in results {
        match result {
            Ok(m) => {
                out.models.insert(class, m);
            }
            Err(e) => {
                out.failures.insert(class, e);
            }
        }
    }
    out
}
