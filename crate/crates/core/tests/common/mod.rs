//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use mimax::bagdata::{BoundingBox, Dataset, FeatureBag, GroundTruthBox, Label, RegionInstance};
use mimax::detector::{detect_dataset, DetectConfig, Detection};
use mimax::evaluator::{detection_ap, EvalConfig};
use mimax::milmodels::{HiddenLayerModel, LinearModel, ModelVariant, PolyhedralModel, VariantSpec};
use mimax::trainer::{ModelSet, TrainConfig, TrainedClassModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, spec: VariantSpec, dim: usize, scale: f64) -> ModelVariant<f64> {
    match spec {
        VariantSpec::Linear => ModelVariant::Linear(LinearModel::new(random_vec(rng, dim, scale), rng.gen_range(-scale..scale))),
        VariantSpec::Polyhedral { hyperplanes } => ModelVariant::Polyhedral(PolyhedralModel {
            hyperplanes: (0..hyperplanes)
                .map(|_| LinearModel::new(random_vec(rng, dim, scale), rng.gen_range(-scale..scale)))
                .collect(),
        }),
        VariantSpec::Hidden { width } => ModelVariant::Hidden(HiddenLayerModel {
            dim,
            width,
            weights: random_vec(rng, width * dim, scale),
            biases: random_vec(rng, width, scale),
            output_weights: random_vec(rng, width, scale),
            output_bias: rng.gen_range(-scale..scale),
        }),
    }
}

pub fn random_box<R: Rng>(rng: &mut R, extent: f64) -> BoundingBox<f64> {
    let x1 = rng.gen_range(0.0..extent);
    let y1 = rng.gen_range(0.0..extent);
    BoundingBox::new(x1, y1, x1 + rng.gen_range(1.0..extent), y1 + rng.gen_range(1.0..extent))
}

pub fn random_bag(rng: &mut ChaCha8Rng, id: &str, dim: usize, regions: usize, labels: Vec<Label>) -> FeatureBag<f64> {
    FeatureBag {
        image_id: id.to_string(),
        regions: (0..regions)
            .map(|_| RegionInstance {
                bbox: random_box(rng, 50.0),
                objectness: rng.gen_range(0.0..1.0),
                features: random_vec(rng, dim, 2.0),
            })
            .collect(),
        labels,
    }
}

/// Single-class dataset with both label signs present.
pub fn random_dataset(rng: &mut ChaCha8Rng, dim: usize, bags: usize, max_regions: usize) -> Dataset<f64> {
    let bags = (0..bags.max(2))
        .map(|i| {
            let label = match i {
                0 => Label::Positive,
                1 => Label::Negative,
                _ => Label::from_bool(rng.gen_bool(0.5)),
            };
            let regions = rng.gen_range(1..=max_regions);
            random_bag(rng, &format!("b{i}"), dim, regions, vec![label])
        })
        .collect();
    Dataset {
        name: "random".into(),
        dim,
        class_names: vec!["c".into()],
        bags,
        ground_truth: None,
    }
}

pub fn wrap(class: &str, model: ModelVariant<f64>, config: &TrainConfig) -> ModelSet<f64> {
    let mut set = ModelSet::new();
    set.insert(
        class.to_string(),
        TrainedClassModel {
            class_name: class.to_string(),
            model,
            restart_losses: vec![Some(0.0)],
            selected_restart: 0,
            config: config.clone(),
        },
    );
    set
}

/// Detection AP of a fixed model with default detection and evaluation settings.
pub fn model_ap(models: &ModelSet<f64>, dataset: &Dataset<f64>, class: &str) -> f64 {
    let dets = detect_dataset(models, dataset, &DetectConfig::default()).unwrap();
    detection_ap(&dets, dataset, class, &EvalConfig::default()).unwrap().unwrap()
}

pub fn iou_oracle(a: &BoundingBox<f64>, b: &BoundingBox<f64>) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Quadratic NMS: a detection survives iff no higher-ranked survivor overlaps it.
pub fn nms_oracle(dets: &[Detection<f64>], threshold: f64) -> Vec<Detection<f64>> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    // insertion sort keeps equal confidences in input order
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && dets[idx[j - 1]].confidence < dets[idx[j]].confidence {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    for &i in &idx {
        if kept.iter().all(|&k| iou_oracle(&dets[k].bbox, &dets[i].bbox) <= threshold) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// All-point AP from the full precision/recall staircase: every true positive
/// adds `1/P` times the best precision at any rank reaching its recall.
pub fn ap_oracle(hits: &[bool], num_positives: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        points.push((tp, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    for level in 1..=tp {
        let best = points
            .iter()
            .filter(|(t, _)| *t >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += best / num_positives as f64;
    }
    ap
}

/// Random detections for one image and class with boxes on a coarse grid, so overlaps and ties occur.
pub fn random_detections(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection<f64>> {
    (0..n)
        .map(|_| {
            let x1 = rng.gen_range(0..8) as f64 * 5.0;
            let y1 = rng.gen_range(0..8) as f64 * 5.0;
            let w = rng.gen_range(1..6) as f64 * 5.0;
            let h = rng.gen_range(1..6) as f64 * 5.0;
            Detection {
                image_id: "img".into(),
                class: "c".into(),
                bbox: BoundingBox::new(x1, y1, x1 + w, y1 + h),
                confidence: rng.gen_range(0..10) as f64 / 10.0,
            }
        })
        .collect()
}

pub fn gt_box(image: &str, class_index: usize, bbox: BoundingBox<f64>) -> GroundTruthBox<f64> {
    GroundTruthBox {
        image_id: image.to_string(),
        class_index,
        bbox,
    }
}

use mimax::milmodels::{batch_loss, batch_loss_and_gradient, weighted_instance_score, ClassWeights, LossConfig};

/// Every candidate weighted score of a bag, over regions and hyperplanes.
pub fn candidate_scores(model: &ModelVariant<f64>, bag: &FeatureBag<f64>, config: &LossConfig<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for r in &bag.regions {
        let raws: Vec<f64> = match model {
            ModelVariant::Linear(m) => vec![m.eval(&r.features)],
            ModelVariant::Polyhedral(p) => p.hyperplanes.iter().map(|h| h.eval(&r.features)).collect(),
            ModelVariant::Hidden(h) => vec![h.eval(&r.features)],
        };
        for raw in raws {
            out.push(weighted_instance_score(raw, r.objectness, config.epsilon, config.use_score));
        }
    }
    out
}

/// Smallest gap between the two best candidates over all bags with more than one candidate.
pub fn min_argmax_gap(model: &ModelVariant<f64>, bags: &[(&FeatureBag<f64>, Label)], config: &LossConfig<f64>) -> f64 {
    bags.iter()
        .map(|(bag, _)| {
            let mut s = candidate_scores(model, bag, config);
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if s.len() > 1 {
                s[0] - s[1]
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Relative error between the analytic gradient and central differences of
/// the loss; `None` when some bag's argmax is within 1e-6 of a tie.
pub fn gradient_relative_error(
    model: &ModelVariant<f64>,
    bags: &[(&FeatureBag<f64>, Label)],
    config: &LossConfig<f64>,
    step: f64,
) -> Option<f64> {
    if min_argmax_gap(model, bags, config) < 1e-6 {
        return None;
    }
    let weights = ClassWeights::from_bags(bags).unwrap();
    let (_, grad) = batch_loss_and_gradient(model, bags, weights, config).unwrap();
    let analytic = grad.parameters();
    let params = model.parameters();
    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = model.clone();
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + step;
        probe.set_parameters(&p).unwrap();
        let up = batch_loss(&probe, bags, weights, config).unwrap();
        p[i] = params[i] - step;
        probe.set_parameters(&p).unwrap();
        let down = batch_loss(&probe, bags, weights, config).unwrap();
        numeric.push((up - down) / (2.0 * step));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    Some(if scale == 0.0 { diff } else { diff / scale })
}
