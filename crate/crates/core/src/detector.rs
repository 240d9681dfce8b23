//! Per-class region scoring, confidence thresholding and greedy NMS.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagdata::{BoundingBox, Dataset, FeatureBag};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::ModelSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub image_id: String,
    pub class: String,
    pub bbox: BoundingBox<T>,
    pub confidence: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Scores at or below this value are dropped before NMS.
    pub confidence_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.05,
            nms_iou: 0.3,
        }
    }
}

pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(T::zero());
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(T::zero());
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Greedy NMS: keep the most confident remaining detection, drop every
/// remaining one with IoU above the threshold, repeat. Output is sorted by
/// descending confidence; equal confidences keep input order.
pub fn nms<T: Scalar>(dets: Vec<Detection<T>>, iou_threshold: T) -> Vec<Detection<T>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    let mut slots: Vec<Option<Detection<T>>> = dets.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("kept once"))
        .collect()
}

/// Detections of every class model in one image, classes in name order.
pub fn detect_image<T: Scalar>(
    models: &ModelSet<T>,
    bag: &FeatureBag<T>,
    config: &DetectConfig,
) -> Result<Vec<Detection<T>>> {
    let threshold = T::of(config.confidence_threshold);
    let nms_iou = T::of(config.nms_iou);
    let mut out = Vec::new();
    for (class, model) in models {
        let mut candidates = Vec::new();
        for region in &bag.regions {
            let confidence = model.confidence(&region.features, region.objectness)?;
            if confidence > threshold {
                candidates.push(Detection {
                    image_id: bag.image_id.clone(),
                    class: class.clone(),
                    bbox: region.bbox,
                    confidence,
                });
            }
        }
        out.extend(nms(candidates, nms_iou));
    }
    Ok(out)
}

/// Runs [`detect_image`] over all bags; output order follows the bags.
pub fn detect_dataset<T: Scalar>(
    models: &ModelSet<T>,
    dataset: &Dataset<T>,
    config: &DetectConfig,
) -> Result<Vec<Detection<T>>> {
    if let Some(m) = models.values().find(|m| m.model.dim() != dataset.dim) {
        return Err(Error::Dimension {
            expected: m.model.dim(),
            found: dataset.dim,
        });
    }
    let per_image: Vec<Vec<Detection<T>>> = dataset
        .bags
        .par_iter()
        .map(|bag| detect_image(models, bag, config))
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    image: String,
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

/// One JSON object per line: `{"image", "class", "box": [x1, y1, x2, y2], "score"}`.
pub fn write_detections_jsonl<T: Scalar, W: Write>(mut out: W, dets: &[Detection<T>]) -> Result<()> {
    for d in dets {
        let record = DetectionRecord {
            image: d.image_id.clone(),
            class: d.class.clone(),
            bbox: d.bbox.to_array().map(Scalar::as_f64),
            score: d.confidence.as_f64(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_detections_jsonl<T: Scalar, R: BufRead>(input: R) -> Result<Vec<Detection<T>>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DetectionRecord = serde_json::from_str(&line)?;
        out.push(Detection {
            image_id: r.image,
            class: r.class,
            bbox: BoundingBox::new(T::of(r.bbox[0]), T::of(r.bbox[1]), T::of(r.bbox[2]), T::of(r.bbox[3])),
            confidence: T::of(r.score),
        });
    }
    Ok(out)
}
