//! Planted-model generator.
//!
//! Each class owns `P` orthonormal planted directions `u_{c,j}` with zero
//! offset. In latent coordinates `z_{c,j} = u_{c,j}·x`, a witness of class
//! `c` in mode `j` has `z_{c,j} ∈ [γ, γ + spread]` and every other planted
//! coordinate in `[-γ - depth, -γ]`; background regions have every planted
//! coordinate in `[-γ - depth, -γ]`. The orthogonal complement carries
//! isotropic Gaussian noise. Consequently `max_j u_{c,j}·x ≥ γ` exactly for
//! witnesses of `c` and `≤ -γ` for everything else.
//!
//! Regions of one image occupy distinct cells of a grid, so no two boxes
//! in an image overlap.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, Dataset, FeatureBag, GroundTruthBox, Label, RegionInstance};
use crate::error::{Error, Result};
use crate::milmodels::{LinearModel, ModelVariant, PolyhedralModel};
use crate::scalar::Scalar;

const CELL: f64 = 100.0;
// keeps planted margins intact after rounding features to f32
const MARGIN_GUARD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub num_classes: usize,
    /// Positive bags per class.
    pub positive_bags: usize,
    /// Background-only bags, negative for every class.
    pub negative_bags: usize,
    pub min_regions: usize,
    pub max_regions: usize,
    /// Planted margin γ.
    pub margin: f64,
    /// Width of the positive side of a planted coordinate beyond γ.
    pub spread: f64,
    /// Width of the negative side of a planted coordinate beyond -γ.
    pub depth: f64,
    /// Planted hyperplanes per class (modes).
    pub hyperplanes: usize,
    pub witness_rate: f64,
    pub objectness_correlation: f64,
    /// Std of the Gaussian noise in the unplanted directions.
    pub noise_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            num_classes: 1,
            positive_bags: 100,
            negative_bags: 100,
            min_regions: 30,
            max_regions: 30,
            margin: 1.0,
            spread: 1.0,
            depth: 3.0,
            hyperplanes: 1,
            witness_rate: 0.1,
            objectness_correlation: 0.8,
            noise_std: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail("margin must be positive");
        }
        if self.num_classes == 0 {
            return fail("at least one class is required");
        }
        if self.positive_bags == 0 || self.negative_bags == 0 {
            return fail("every class needs positive and negative bags");
        }
        if self.min_regions == 0 || self.min_regions > self.max_regions {
            return fail("region range must satisfy 1 <= min <= max");
        }
        if self.hyperplanes == 0 {
            return fail("at least one planted hyperplane is required");
        }
        if self.dim < self.num_classes * self.hyperplanes {
            return fail("dimension must hold one planted direction per class and mode");
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return fail("witness rate must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.objectness_correlation) {
            return fail("objectness correlation must lie in [0, 1]");
        }
        if !(self.spread > 0.0 && self.depth > 0.0 && self.noise_std >= 0.0) {
            return fail("spread and depth must be positive, noise non-negative");
        }
        Ok(())
    }
}

/// Planted separators and per-instance labels of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth<T> {
    /// `separators[c][j]` is the `j`-th planted hyperplane of class `c`.
    pub separators: Vec<Vec<LinearModel<T>>>,
    /// `instance_labels[c][i][k]`: planted label of region `k` of bag `i` for class `c`.
    pub instance_labels: Vec<Vec<Vec<Label>>>,
}

impl<T: Scalar> PlantedTruth<T> {
    /// The planted classifier: the single hyperplane when `P = 1`, else the polyhedral max.
    pub fn oracle_model(&self, class_index: usize) -> ModelVariant<T> {
        let planes = &self.separators[class_index];
        if planes.len() == 1 {
            ModelVariant::Linear(planes[0].clone())
        } else {
            ModelVariant::Polyhedral(PolyhedralModel {
                hyperplanes: planes.clone(),
            })
        }
    }

    pub fn single_hyperplane_oracle(&self, class_index: usize, plane: usize) -> ModelVariant<T> {
        ModelVariant::Linear(self.separators[class_index][plane].clone())
    }
}

fn round32<T: Scalar>(v: f64) -> T {
    T::from_f32_bits(v as f32)
}

/// Draws `num_classes x hyperplanes` orthonormal planted hyperplanes with zero offset.
pub fn planted_separators<T: Scalar>(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<Vec<Vec<LinearModel<T>>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = config.num_classes * config.hyperplanes;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..config.dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        for u in &basis {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    Ok(basis
        .chunks(config.hyperplanes)
        .map(|chunk| {
            chunk
                .iter()
                .map(|u| LinearModel {
                    weights: u.iter().map(|&a| T::of(a)).collect(),
                    bias: T::zero(),
                })
                .collect()
        })
        .collect())
}

/// Generates a dataset with fresh planted separators; deterministic in `(config, seed)`.
pub fn generate_synthetic<T: Scalar>(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Dataset<T>, PlantedTruth<T>)> {
    let separators = planted_separators::<T>(config, seed)?;
    sample_synthetic(config, &separators, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
}

#[derive(Clone, Copy)]
enum Role {
    Background,
    Witness { class: usize, mode: usize },
}

/// Samples bags around given planted separators. Two calls with the same
/// separators and different seeds give datasets that share their planted truth.
pub fn sample_synthetic<T: Scalar>(
    config: &SyntheticConfig,
    separators: &[Vec<LinearModel<T>>],
    seed: u64,
) -> Result<(Dataset<T>, PlantedTruth<T>)> {
    config.validate()?;
    if separators.len() != config.num_classes
        || separators
            .iter()
            .any(|s| s.len() != config.hyperplanes || s.iter().any(|p| p.dim() != config.dim))
    {
        return Err(Error::Config(
            "planted separators do not match the configuration".into(),
        ));
    }
    let directions: Vec<Vec<f64>> = separators
        .iter()
        .flatten()
        .map(|p| p.weights.iter().map(|w| w.as_f64()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut owners: Vec<Option<usize>> = (0..config.num_classes)
        .flat_map(|c| std::iter::repeat(Some(c)).take(config.positive_bags))
        .chain(std::iter::repeat(None).take(config.negative_bags))
        .collect();
    owners.shuffle(&mut rng);

    let grid = (config.max_regions as f64).sqrt().ceil() as usize;
    let gamma = config.margin;
    let mut bags = Vec::with_capacity(owners.len());
    let mut ground_truth = Vec::new();
    let mut instance_labels = vec![Vec::with_capacity(owners.len()); config.num_classes];

    for (i, owner) in owners.iter().enumerate() {
        let image_id = format!("img{i:05}");
        let k = rng.gen_range(config.min_regions..=config.max_regions);
        let mut roles = vec![Role::Background; k];
        if let Some(class) = *owner {
            let witnesses = ((config.witness_rate * k as f64).ceil() as usize).clamp(1, k);
            let mut slots: Vec<usize> = (0..k).collect();
            slots.shuffle(&mut rng);
            for &slot in &slots[..witnesses] {
                let mode = rng.gen_range(0..config.hyperplanes);
                roles[slot] = Role::Witness { class, mode };
            }
        }

        let mut cells: Vec<usize> = (0..grid * grid).collect();
        cells.shuffle(&mut rng);

        let mut regions = Vec::with_capacity(k);
        for (slot, role) in roles.iter().enumerate() {
            let (row, col) = (cells[slot] / grid, cells[slot] % grid);
            let x1 = col as f64 * CELL + rng.gen_range(0.0..20.0);
            let y1 = row as f64 * CELL + rng.gen_range(0.0..20.0);
            let bbox = BoundingBox::new(
                round32(x1),
                round32(y1),
                round32(x1 + rng.gen_range(50.0..75.0)),
                round32(y1 + rng.gen_range(50.0..75.0)),
            );

            let rho = config.objectness_correlation;
            let informative: f64 = match role {
                Role::Witness { .. } => rng.gen_range(0.5..=1.0),
                Role::Background => rng.gen_range(0.0..0.5),
            };
            let uninformative: f64 = rng.gen_range(0.0..=1.0);
            let objectness = (rho * informative + (1.0 - rho) * uninformative).clamp(0.0, 1.0);

            let mut x: Vec<f64> = (0..config.dim)
                .map(|_| config.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for (d, u) in directions.iter().enumerate() {
                let planted_class = d / config.hyperplanes;
                let planted_mode = d % config.hyperplanes;
                let on = matches!(role, Role::Witness { class, mode }
                    if *class == planted_class && *mode == planted_mode);
                let z = if on {
                    rng.gen_range(gamma * (1.0 + MARGIN_GUARD)..=gamma + config.spread)
                } else {
                    rng.gen_range(-gamma - config.depth..=-gamma * (1.0 + MARGIN_GUARD))
                };
                let current: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
                x.iter_mut().zip(u).for_each(|(a, b)| *a += (z - current) * b);
            }

            if let Role::Witness { class, .. } = role {
                ground_truth.push(GroundTruthBox {
                    image_id: image_id.clone(),
                    class_index: *class,
                    bbox,
                });
            }
            regions.push(RegionInstance {
                bbox,
                objectness: round32(objectness),
                features: x.into_iter().map(round32).collect(),
            });
        }

        for (c, per_class) in instance_labels.iter_mut().enumerate() {
            per_class.push(
                roles
                    .iter()
                    .map(|r| Label::from_bool(matches!(r, Role::Witness { class, .. } if *class == c)))
                    .collect(),
            );
        }
        bags.push(FeatureBag {
            image_id,
            regions,
            labels: (0..config.num_classes)
                .map(|c| Label::from_bool(*owner == Some(c)))
                .collect(),
        });
    }

    let dataset = Dataset {
        name: "synthetic".into(),
        dim: config.dim,
        class_names: (0..config.num_classes).map(|c| format!("class{c}")).collect(),
        bags,
        ground_truth: Some(ground_truth),
    };
    dataset.validate()?;
    Ok((
        dataset,
        PlantedTruth {
            separators: separators.to_vec(),
            instance_labels,
        },
    ))
}
