//! Feature bags, ground truth, the FBAG binary format and the planted
//! synthetic generator.
//!
//! One bag is one image: a set of candidate regions, each with a box, a
//! class-agnostic objectness score and a feature vector. Bags carry one
//! `{-1, +1}` label per class; a bag is positive for a class when at least
//! one of its regions is.

mod format;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use format::{decode_dataset, encode_dataset, load_dataset, write_dataset, FBAG_MAGIC, FBAG_VERSION};
pub use synthetic::{
    generate_synthetic, planted_separators, sample_synthetic, PlantedTruth, SyntheticConfig,
};

/// Axis-aligned box in pixel coordinates, `(x1, y1)` top-left, `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn area(&self) -> T {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn to_i8(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// `+1` or `-1` in the scalar type.
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Negative => -T::one(),
            Label::Positive => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionInstance<T> {
    pub bbox: BoundingBox<T>,
    pub objectness: T,
    pub features: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag<T> {
    pub image_id: String,
    pub regions: Vec<RegionInstance<T>>,
    /// One label per class, in the dataset's class order.
    pub labels: Vec<Label>,
}

impl<T> FeatureBag<T> {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox<T> {
    pub image_id: String,
    pub class_index: usize,
    pub bbox: BoundingBox<T>,
}

/// A bag together with its label for the class being trained.
pub type LabeledBag<'a, T> = (&'a FeatureBag<T>, Label);

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    /// Feature dimension `M`, shared by every region.
    pub dim: usize,
    pub class_names: Vec<String>,
    pub bags: Vec<FeatureBag<T>>,
    /// `None` when the file carries no ground-truth section.
    pub ground_truth: Option<Vec<GroundTruthBox<T>>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    /// `(n_1, n_{-1})` for a class.
    pub fn label_counts(&self, class_index: usize) -> (usize, usize) {
        let positives = self
            .bags
            .iter()
            .filter(|b| b.labels[class_index].is_positive())
            .count();
        (positives, self.bags.len() - positives)
    }

    /// Fails unless the class has at least one bag of each sign.
    pub fn require_both_signs(&self, class_index: usize) -> Result<()> {
        let (positives, negatives) = self.label_counts(class_index);
        if positives == 0 || negatives == 0 {
            return Err(Error::SingleSign {
                class: self.class_names[class_index].clone(),
                positives,
                negatives,
            });
        }
        Ok(())
    }

    pub fn labeled_bags(&self, class_index: usize) -> Vec<LabeledBag<'_, T>> {
        self.bags
            .iter()
            .map(|b| (b, b.labels[class_index]))
            .collect()
    }

    /// Ground-truth boxes of one class; empty when the dataset has none.
    pub fn ground_truth_for(&self, class_index: usize) -> Vec<&GroundTruthBox<T>> {
        self.ground_truth
            .iter()
            .flatten()
            .filter(|g| g.class_index == class_index)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bags.is_empty() {
            return Err(Error::Validation("dataset has no bags".into()));
        }
        if self.dim == 0 {
            return Err(Error::Validation("feature dimension must be positive".into()));
        }
        let num_classes = self.num_classes();
        for bag in &self.bags {
            if bag.regions.is_empty() {
                return Err(Error::Validation(format!(
                    "image {:?} has no regions",
                    bag.image_id
                )));
            }
            if bag.labels.len() != num_classes {
                return Err(Error::Validation(format!(
                    "image {:?} has {} labels for {} classes",
                    bag.image_id,
                    bag.labels.len(),
                    num_classes
                )));
            }
            for (k, region) in bag.regions.iter().enumerate() {
                validate_region(&bag.image_id, k, region, self.dim)?;
            }
        }
        for gt in self.ground_truth.iter().flatten() {
            if gt.class_index >= num_classes {
                return Err(Error::Validation(format!(
                    "ground truth for {:?} references class {} of {}",
                    gt.image_id, gt.class_index, num_classes
                )));
            }
            if !gt.bbox.is_valid() {
                return Err(Error::Validation(format!(
                    "degenerate ground-truth box in {:?}",
                    gt.image_id
                )));
            }
        }
        Ok(())
    }
}

fn validate_region<T: Scalar>(
    image_id: &str,
    k: usize,
    region: &RegionInstance<T>,
    dim: usize,
) -> Result<()> {
    if region.features.len() != dim {
        return Err(Error::Validation(format!(
            "image {image_id:?} region {k}: {} features, dataset declares {dim}",
            region.features.len()
        )));
    }
    if !region.bbox.is_valid() {
        return Err(Error::Validation(format!(
            "image {image_id:?} region {k}: degenerate box {:?}",
            region.bbox.to_array().map(Scalar::as_f64)
        )));
    }
    let s = region.objectness;
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::Validation(format!(
            "image {image_id:?} region {k}: objectness {s} outside [0, 1]"
        )));
    }
    if region.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "image {image_id:?} region {k}: non-finite feature"
        )));
    }
    Ok(())
}
