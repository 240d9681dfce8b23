//! PASCAL-style detection AP, bag-level classification AP, proposal recall
//! and (cross-dataset) evaluation reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bagdata::{Dataset, GroundTruthBox};
use crate::detector::{detect_dataset, iou, DetectConfig, Detection};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::ModelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMethod {
    /// Area under the precision envelope at every recall step.
    AllPoint,
    /// VOC2007: mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            ap_method: ApMethod::AllPoint,
        }
    }
}

/// AP of a ranked list of hit/miss flags with `num_positives` relevant items.
/// `None` when there is nothing to retrieve.
pub fn average_precision(hits: &[bool], num_positives: usize, method: ApMethod) -> Option<f64> {
    if num_positives == 0 {
        return None;
    }
    let g = num_positives as f64;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / g);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = match method {
        // recall steps by exactly 1/g at each hit
        ApMethod::AllPoint => hits
            .iter()
            .zip(&precision)
            .filter(|(hit, _)| **hit)
            .map(|(_, p)| p / g)
            .fold(0.0, |a, b| a + b),
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let level = t as f64 / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= level - 1e-12)
                        .map_or(0.0, |i| precision[i])
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Some(ap)
}

/// Greedy VOC matching. Detections are visited by descending confidence
/// (ties in input order); each takes the unmatched same-image box of highest
/// IoU when that IoU reaches the threshold. Returns hit flags in rank order.
pub fn match_detections<T: Scalar>(
    dets: &[&Detection<T>],
    gt: &[&GroundTruthBox<T>],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (g, record) in gt.iter().enumerate() {
        by_image.entry(record.image_id.as_str()).or_default().push(g);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut matched = vec![false; gt.len()];
    order
        .iter()
        .map(|&d| {
            let det = dets[d];
            let mut best: Option<(usize, f64)> = None;
            for &g in by_image.get(det.image_id.as_str()).into_iter().flatten() {
                if matched[g] {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt[g].bbox).as_f64();
                if best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            match best {
                Some((g, overlap)) if overlap >= iou_threshold => {
                    matched[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

fn require_ground_truth<T>(dataset: &Dataset<T>) -> Result<()> {
    if dataset.ground_truth.is_none() {
        return Err(Error::Evaluation(format!(
            "dataset {:?} carries no ground truth",
            dataset.name
        )));
    }
    Ok(())
}

/// Detection AP of one class; `None` when the class has no ground-truth box.
pub fn detection_ap<T: Scalar>(
    dets: &[Detection<T>],
    dataset: &Dataset<T>,
    class: &str,
    config: &EvalConfig,
) -> Result<Option<f64>> {
    let class_index = dataset.class_index(class)?;
    require_ground_truth(dataset)?;
    let gt = dataset.ground_truth_for(class_index);
    let dets: Vec<&Detection<T>> = dets.iter().filter(|d| d.class == class).collect();
    let hits = match_detections(&dets, &gt, config.iou_threshold);
    Ok(average_precision(&hits, gt.len(), config.ap_method))
}

/// Ranks bags by their best region confidence against the bag labels.
/// `None` when the labels have a single sign.
pub fn classification_ap<T: Scalar>(
    models: &ModelSet<T>,
    dataset: &Dataset<T>,
    class: &str,
    config: &EvalConfig,
) -> Result<Option<f64>> {
    let class_index = dataset.class_index(class)?;
    let model = models
        .get(class)
        .ok_or_else(|| Error::UnknownClass(class.to_string()))?;
    let (positives, negatives) = dataset.label_counts(class_index);
    if positives == 0 || negatives == 0 {
        return Ok(None);
    }
    let mut scored = Vec::with_capacity(dataset.bags.len());
    for bag in &dataset.bags {
        let mut best = T::neg_infinity();
        for r in &bag.regions {
            best = best.max(model.confidence(&r.features, r.objectness)?);
        }
        scored.push((best, bag.labels[class_index].is_positive()));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let hits: Vec<bool> = scored.iter().map(|(_, positive)| *positive).collect();
    Ok(average_precision(&hits, positives, config.ap_method))
}

/// Fraction of ground-truth boxes of the class covered by some region at the IoU threshold.
pub fn proposal_recall<T: Scalar>(
    dataset: &Dataset<T>,
    class: &str,
    iou_threshold: f64,
) -> Result<Option<f64>> {
    let class_index = dataset.class_index(class)?;
    require_ground_truth(dataset)?;
    let gt = dataset.ground_truth_for(class_index);
    if gt.is_empty() {
        return Ok(None);
    }
    let bags: HashMap<&str, usize> = dataset
        .bags
        .iter()
        .enumerate()
        .map(|(i, b)| (b.image_id.as_str(), i))
        .collect();
    let covered = gt
        .iter()
        .filter(|g| {
            bags.get(g.image_id.as_str()).map_or(false, |&i| {
                dataset.bags[i]
                    .regions
                    .iter()
                    .any(|r| iou(&r.bbox, &g.bbox).as_f64() >= iou_threshold)
            })
        })
        .count();
    Ok(Some(covered as f64 / gt.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub ap: Option<f64>,
    pub classification_ap: Option<f64>,
    pub proposal_recall: Option<f64>,
    pub num_ground_truth: usize,
    pub num_detections: usize,
    /// Final training loss of the selected restart.
    pub training_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes whose AP is defined.
    pub map: Option<f64>,
    pub provenance: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Classes as columns plus a mean column; metrics in percent.
    pub fn to_text_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let mean = |f: fn(&ClassReport) -> Option<f64>| {
            let vals: Vec<f64> = self.classes.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let mut header = vec!["metric".to_string()];
        header.extend(self.classes.iter().map(|c| c.class.clone()));
        header.push("mean".into());
        let rows: Vec<Vec<String>> = [
            ("AP (%)", (|c: &ClassReport| c.ap) as fn(&ClassReport) -> Option<f64>),
            ("Classif AP (%)", |c| c.classification_ap),
            ("Recall (%)", |c| c.proposal_recall),
        ]
        .iter()
        .map(|(name, f)| {
            let mut row = vec![name.to_string()];
            row.extend(self.classes.iter().map(|c| pct(f(c))));
            row.push(pct(mean(*f)));
            row
        })
        .collect();
        render_table(&header, &rows)
    }
}

pub(crate) fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain(std::iter::once(header[i].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// In-domain evaluation: detect with every model on the dataset and score each class.
pub fn evaluate<T: Scalar>(
    models: &ModelSet<T>,
    dataset: &Dataset<T>,
    detect: &DetectConfig,
    config: &EvalConfig,
) -> Result<EvalReport> {
    transfer_evaluate(models, dataset, detect, config)
}

/// Applies source models to a target dataset, restricted to the class names
/// both share; mAP is taken over those common classes only.
pub fn transfer_evaluate<T: Scalar>(
    source_models: &ModelSet<T>,
    target: &Dataset<T>,
    detect: &DetectConfig,
    config: &EvalConfig,
) -> Result<EvalReport> {
    require_ground_truth(target)?;
    let common: Vec<&String> = target
        .class_names
        .iter()
        .filter(|c| source_models.contains_key(*c))
        .collect();
    if common.is_empty() {
        return Err(Error::Evaluation(format!(
            "no class in common between the models and dataset {:?}",
            target.name
        )));
    }
    let models: ModelSet<T> = common
        .iter()
        .map(|c| ((*c).clone(), source_models[*c].clone()))
        .collect();
    let dets = detect_dataset(&models, target, detect)?;

    let mut classes = Vec::with_capacity(common.len());
    for class in &common {
        let class_index = target.class_index(class)?;
        classes.push(ClassReport {
            class: (*class).clone(),
            ap: detection_ap(&dets, target, class, config)?,
            classification_ap: classification_ap(&models, target, class, config)?,
            proposal_recall: proposal_recall(target, class, config.iou_threshold)?,
            num_ground_truth: target.ground_truth_for(class_index).len(),
            num_detections: dets.iter().filter(|d| &d.class == *class).count(),
            training_loss: Some(models[*class].selected_loss()).filter(|l| l.is_finite()),
        });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    let provenance = json!({
        "source_classes": source_models.keys().collect::<Vec<_>>(),
        "detect": detect,
        "eval": config,
        "train": models.iter().map(|(k, m)| (k.clone(), json!(m.config))).collect::<serde_json::Map<_, _>>(),
    });
    Ok(EvalReport {
        dataset: target.name.clone(),
        classes,
        map,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagdata::{BoundingBox, FeatureBag, Label, RegionInstance};

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox<f64> {
        BoundingBox::new(x1, y1, x2, y2)
    }

    fn gt(image: &str, b: BoundingBox<f64>) -> GroundTruthBox<f64> {
        GroundTruthBox {
            image_id: image.into(),
            class_index: 0,
            bbox: b,
        }
    }

    fn det(image: &str, b: BoundingBox<f64>, confidence: f64) -> Detection<f64> {
        Detection {
            image_id: image.into(),
            class: "c".into(),
            bbox: b,
            confidence,
        }
    }

    fn dataset(gt: Vec<GroundTruthBox<f64>>, regions: Vec<BoundingBox<f64>>) -> Dataset<f64> {
        Dataset {
            name: "d".into(),
            dim: 1,
            class_names: vec!["c".into()],
            bags: vec![FeatureBag {
                image_id: "a".into(),
                regions: regions
                    .into_iter()
                    .map(|b| RegionInstance {
                        bbox: b,
                        objectness: 0.5,
                        features: vec![0.0],
                    })
                    .collect(),
                labels: vec![Label::Positive],
            }],
            ground_truth: Some(gt),
        }
    }

    #[test]
    fn exact_match_scores_one() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let d = dataset(vec![gt("a", b)], vec![b]);
        let ap = detection_ap(&[det("a", b, 0.9)], &d, "c", &EvalConfig::default()).unwrap();
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn weak_overlap_scores_zero() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let d = dataset(vec![gt("a", b)], vec![b]);
        let off = bx(0.0, 0.0, 3.0, 10.0);
        assert!((iou(&b, &off) - 0.3).abs() < 1e-15);
        let ap = detection_ap(&[det("a", off, 0.9)], &d, "c", &EvalConfig::default()).unwrap();
        assert_eq!(ap, Some(0.0));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let d = dataset(vec![gt("a", b)], vec![b]);
        let dets = [det("a", b, 0.9), det("a", b, 0.8)];
        let config = EvalConfig::default();
        assert_eq!(detection_ap(&dets, &d, "c", &config).unwrap(), Some(1.0));
        let refs: Vec<&Detection<f64>> = dets.iter().collect();
        let g = gt("a", b);
        assert_eq!(match_detections(&refs, &[&g], 0.5), vec![true, false]);
    }

    #[test]
    fn unknown_class_and_missing_gt() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let d = dataset(vec![], vec![b]);
        let config = EvalConfig::default();
        assert!(matches!(detection_ap::<f64>(&[], &d, "zebra", &config), Err(Error::UnknownClass(_))));
        assert_eq!(detection_ap::<f64>(&[], &d, "c", &config).unwrap(), None);
        let mut no_gt = d.clone();
        no_gt.ground_truth = None;
        assert!(detection_ap::<f64>(&[], &no_gt, "c", &config).is_err());
    }

    #[test]
    fn ranking_ap_known_values() {
        assert_eq!(average_precision(&[true, true, false, false], 2, ApMethod::AllPoint), Some(1.0));
        // single positive ranked last of n
        let n = 7;
        let mut hits = vec![false; n];
        hits[n - 1] = true;
        let ap = average_precision(&hits, 1, ApMethod::AllPoint).unwrap();
        assert!((ap - 1.0 / n as f64).abs() < 1e-15);
        assert_eq!(average_precision(&[], 0, ApMethod::AllPoint), None);
    }

    #[test]
    fn eleven_point_interpolation() {
        // hits at ranks 1 and 3 of 2 positives: envelope 1.0 up to r=0.5, 2/3 after
        let ap = average_precision(&[true, false, true], 2, ApMethod::ElevenPoint).unwrap();
        let expected = (6.0 * 1.0 + 5.0 * 2.0 / 3.0) / 11.0;
        assert!((ap - expected).abs() < 1e-12);
        let all = average_precision(&[true, false, true], 2, ApMethod::AllPoint).unwrap();
        assert!((all - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn proposal_recall_cases() {
        let g1 = bx(0.0, 0.0, 10.0, 10.0);
        let g2 = bx(100.0, 0.0, 110.0, 10.0);
        let far = bx(500.0, 500.0, 510.0, 510.0);
        let d = dataset(vec![gt("a", g1), gt("a", g2)], vec![g1, g2]);
        assert_eq!(proposal_recall(&d, "c", 0.5).unwrap(), Some(1.0));
        let d = dataset(vec![gt("a", g1), gt("a", g2)], vec![far]);
        assert_eq!(proposal_recall(&d, "c", 0.5).unwrap(), Some(0.0));
        let d = dataset(vec![gt("a", g1), gt("a", g2)], vec![g1, far]);
        assert_eq!(proposal_recall(&d, "c", 0.5).unwrap(), Some(0.5));
        let d = dataset(vec![], vec![g1]);
        assert_eq!(proposal_recall(&d, "c", 0.5).unwrap(), None);
    }

    #[test]
    fn table_layout() {
        let report = EvalReport {
            dataset: "d".into(),
            classes: vec![ClassReport {
                class: "dog".into(),
                ap: Some(0.5),
                classification_ap: None,
                proposal_recall: Some(1.0),
                num_ground_truth: 2,
                num_detections: 3,
                training_loss: None,
            }],
            map: Some(0.5),
            provenance: serde_json::Value::Null,
        };
        let table = report.to_text_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("metric") && lines[0].ends_with("mean"));
        assert!(lines[1].contains("50.0"));
        assert!(lines[2].ends_with('-'));
    }
}
