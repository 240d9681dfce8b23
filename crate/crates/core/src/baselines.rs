//! MAX and MAX-A single-instance baselines: pick regions by objectness,
//! then fit a linear hinge classifier with cross-validated `C`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bagdata::{Dataset, FeatureBag, Label, LabeledBag, RegionInstance};
use crate::error::{Error, Result};
use crate::milmodels::{LossKind, ModelVariant, VariantSpec};
use crate::scalar::Scalar;
use crate::trainer::{train_labeled, TrainConfig, TrainedClassModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Highest-objectness region of every image, labeled with the bag label.
    #[serde(rename = "MAX")]
    Max,
    /// Highest-objectness region of every positive image plus every region of every negative image.
    #[serde(rename = "MAXA")]
    MaxA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub folds: usize,
    /// Candidate values of the regularization weight `C`.
    pub grid: Vec<f64>,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Max,
            folds: 3,
            grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            learning_rate: 0.01,
            iterations: 300,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("cross-validation needs at least 2 folds".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Config("regularization grid must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectedInstance<'a, T> {
    pub bag: usize,
    pub region: usize,
    pub instance: &'a RegionInstance<T>,
    pub label: Label,
}

/// Index of the region with the highest objectness; ties go to the lowest index.
pub fn highest_objectness<T: Scalar>(bag: &FeatureBag<T>) -> usize {
    let mut best = 0;
    for (k, r) in bag.regions.iter().enumerate().skip(1) {
        if r.objectness > bag.regions[best].objectness {
            best = k;
        }
    }
    best
}

pub fn select_training_instances<'a, T: Scalar>(
    dataset: &'a Dataset<T>,
    class: &str,
    kind: BaselineKind,
) -> Result<Vec<SelectedInstance<'a, T>>> {
    let class_index = dataset.class_index(class)?;
    dataset.require_both_signs(class_index)?;
    let mut out = Vec::new();
    for (i, bag) in dataset.bags.iter().enumerate() {
        let label = bag.labels[class_index];
        let all_regions = kind == BaselineKind::MaxA && !label.is_positive();
        if all_regions {
            out.extend(bag.regions.iter().enumerate().map(|(k, r)| SelectedInstance {
                bag: i,
                region: k,
                instance: r,
                label,
            }));
        } else {
            let k = highest_objectness(bag);
            out.push(SelectedInstance {
                bag: i,
                region: k,
                instance: &bag.regions[k],
                label,
            });
        }
    }
    Ok(out)
}

fn instance_config(config: &BaselineConfig, c: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: config.learning_rate,
        iterations: config.iterations,
        batch_bags: usize::MAX,
        restarts: 1,
        c,
        epsilon: 0.0,
        loss: LossKind::Hinge,
        use_score: false,
        variant: VariantSpec::Linear,
        seed,
    }
}

fn accuracy<T: Scalar>(model: &ModelVariant<T>, items: &[LabeledBag<'_, T>]) -> f64 {
    let correct = items
        .iter()
        .filter(|(bag, label)| {
            let (raw, _) = model.forward_unchecked(&bag.regions[0].features);
            (raw > T::zero()) == label.is_positive()
        })
        .count();
    correct as f64 / items.len().max(1) as f64
}

/// Fits the baseline for one class. `C` is chosen from the grid by best
/// mean held-out accuracy over stratified folds (ties: first grid value),
/// then the classifier is refit on all selected instances.
pub fn train_baseline<T: Scalar>(
    dataset: &Dataset<T>,
    class: &str,
    config: &BaselineConfig,
    seed: u64,
) -> Result<TrainedClassModel<T>> {
    config.validate()?;
    let selected = select_training_instances(dataset, class, config.kind)?;
    let bags: Vec<FeatureBag<T>> = selected
        .iter()
        .map(|s| FeatureBag {
            image_id: dataset.bags[s.bag].image_id.clone(),
            regions: vec![s.instance.clone()],
            labels: vec![s.label],
        })
        .collect();
    let items: Vec<LabeledBag<'_, T>> = bags.iter().map(|b| (b, b.labels[0])).collect();
    let positives = items.iter().filter(|(_, l)| l.is_positive()).count();
    if positives == 0 || positives == items.len() {
        return Err(Error::SingleSign {
            class: class.to_string(),
            positives,
            negatives: items.len() - positives,
        });
    }

    let best_c = if config.grid.len() == 1 {
        config.grid[0]
    } else {
        let folds = stratified_folds(&items, config.folds, seed);
        let mut best = (config.grid[0], f64::NEG_INFINITY);
        for &c in &config.grid {
            let mut scores = Vec::new();
            for fold in 0..config.folds {
                let train: Vec<LabeledBag<'_, T>> = items
                    .iter()
                    .zip(&folds)
                    .filter(|(_, f)| **f != fold)
                    .map(|(b, _)| *b)
                    .collect();
                let held: Vec<LabeledBag<'_, T>> = items
                    .iter()
                    .zip(&folds)
                    .filter(|(_, f)| **f == fold)
                    .map(|(b, _)| *b)
                    .collect();
                if held.is_empty() {
                    continue;
                }
                // folds whose training part lacks a sign cannot be fit
                let Ok(m) = train_labeled(&train, dataset.dim, class, fold as u64 + 1, &instance_config(config, c, seed)) else {
                    continue;
                };
                scores.push(accuracy(&m.model, &held));
            }
            if !scores.is_empty() {
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                if mean > best.1 {
                    best = (c, mean);
                }
            }
        }
        best.0
    };

    train_labeled(&items, dataset.dim, class, 0, &instance_config(config, best_c, seed))
}

/// Fold index per item, positives and negatives dealt round-robin after a seeded shuffle.
fn stratified_folds<T>(items: &[LabeledBag<'_, T>], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; items.len()];
    for sign in [Label::Positive, Label::Negative] {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].1 == sign).collect();
        idx.shuffle(&mut rng);
        for (n, i) in idx.into_iter().enumerate() {
            assignment[i] = n % folds;
        }
    }
    assignment
}

/// Training accuracy of a baseline model on its own selected instances.
pub fn training_accuracy<T: Scalar>(
    model: &TrainedClassModel<T>,
    dataset: &Dataset<T>,
    kind: BaselineKind,
) -> Result<f64> {
    let selected = select_training_instances(dataset, &model.class_name, kind)?;
    let correct = selected
        .iter()
        .filter(|s| {
            let (raw, _) = model.model.forward_unchecked(&s.instance.features);
            (raw > T::zero()) == s.label.is_positive()
        })
        .count();
    Ok(correct as f64 / selected.len() as f64)
}
