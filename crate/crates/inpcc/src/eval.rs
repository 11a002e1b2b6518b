//! Evaluation protocol: double-IoU-gated true positives, all-point
//! precision-recall AP per category, split-aggregated mAP, and the prompt
//! selection diagnostics.
//!
//! All box math here is xyxy; ground-truth cxcywh boxes are converted on
//! entry. Prediction ordering is canonicalized internally, so results do
//! not depend on input file order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::concepts::{ConceptVocabulary, Split};
use crate::error::{Error, Result};
use crate::harness::dataset::{render_tokens, ImageRecord};
use crate::net::{inference_score, Detector};
use crate::prompts::{usage_frequencies, PromptBank, PromptSelection};
use crate::train::cxcywh_to_xyxy;
use crate::{Scalar, Tensor};

/// One scored detection, boxes in xyxy.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub category_id: u32,
    pub score: Scalar,
    pub human_box: [Scalar; 4],
    pub object_box: [Scalar; 4],
}

/// Ground truth in eval coordinates (xyxy).
#[derive(Debug, Clone)]
pub struct EvalGroundTruth {
    pub image_id: String,
    pub category_id: u32,
    pub human_box: [Scalar; 4],
    pub object_box: [Scalar; 4],
}

fn check_xyxy(b: [Scalar; 4], ctx: &str) -> Result<()> {
    if !(b.iter().all(|x| x.is_finite()) && b[2] > b[0] && b[3] > b[1]) {
        return Err(Error::Parameter(format!("invalid {ctx} box {b:?}")));
    }
    Ok(())
}

/// Intersection over union of two valid xyxy boxes, in [0, 1].
pub fn iou(a: [Scalar; 4], b: [Scalar; 4]) -> Result<Scalar> {
    check_xyxy(a, "first")?;
    check_xyxy(b, "second")?;
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    Ok(inter / (area_a + area_b - inter))
}

/// Greedy TP/FP labeling for one category's predictions, already sorted by
/// final score descending. A prediction is a true positive iff both its
/// human and object IoU exceed the threshold against some unclaimed
/// same-image ground truth; among candidates the largest min(IoU_h, IoU_o)
/// wins, ties to the lowest ground-truth index.
pub fn match_true_positives(
    predictions: &[&Prediction],
    gts: &[&EvalGroundTruth],
    iou_threshold: Scalar,
) -> Result<Vec<bool>> {
    let mut claimed = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(predictions.len());
    for pred in predictions {
        let mut best: Option<(usize, Scalar)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if claimed[gi] || gt.image_id != pred.image_id {
                continue;
            }
            let iou_h = iou(pred.human_box, gt.human_box)?;
            let iou_o = iou(pred.object_box, gt.object_box)?;
            if iou_h > iou_threshold && iou_o > iou_threshold {
                let quality = iou_h.min(iou_o);
                let better = match best {
                    None => true,
                    Some((_, q)) => quality > q,
                };
                if better {
                    best = Some((gi, quality));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                claimed[gi] = true;
                labels.push(true);
            }
            None => labels.push(false),
        }
    }
    Ok(labels)
}

/// All-point interpolated AP: area under the precision envelope.
pub fn average_precision(labels: &[bool], total_gt: usize) -> Scalar {
    if total_gt == 0 {
        return 0.0;
    }
    let n = labels.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label {
            tp += 1;
        }
        recall.push(tp as Scalar / total_gt as Scalar);
        precision.push(tp as Scalar / (i + 1) as Scalar);
    }
    // Envelope: precision at recall r is the max precision at recall ≥ r.
    let mut running: Scalar = 0.0;
    for p in precision.iter_mut().rev() {
        running = running.max(*p);
        *p = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-category result inside a report.
#[derive(Debug, Clone)]
pub struct CategoryResult {
    pub ap: Scalar,
    pub gt_count: usize,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_category: BTreeMap<u32, CategoryResult>,
    /// Split name → (mean AP, member count); "full" covers every category
    /// with ground truth.
    pub split_map: BTreeMap<String, (Scalar, usize)>,
    /// Categories with zero ground truth, excluded from the means.
    pub excluded: Vec<u32>,
}

impl EvalReport {
    /// Frozen text rendering; the golden-file oracle compares bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for name in ["full", "base", "novel"] {
            if let Some((map, count)) = self.split_map.get(name) {
                writeln!(out, "split {name} map {map:.6} categories {count}")
                    .expect("string write");
            }
        }
        for (id, r) in &self.per_category {
            writeln!(
                out,
                "category {id} {} ap {:.6} gt {}",
                r.split, r.ap, r.gt_count
            )
            .expect("string write");
        }
        if !self.excluded.is_empty() {
            let ids: Vec<String> = self.excluded.iter().map(|id| id.to_string()).collect();
            writeln!(out, "excluded {}", ids.join(" ")).expect("string write");
        }
        out
    }
}

/// Total order over predictions: score descending, then image, category and
/// coordinates, so evaluation is independent of input ordering.
fn canonical_order(a: &Prediction, b: &Prediction) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .expect("finite scores")
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| a.category_id.cmp(&b.category_id))
        .then_with(|| {
            a.human_box
                .partial_cmp(&b.human_box)
                .expect("finite boxes")
        })
        .then_with(|| {
            a.object_box
                .partial_cmp(&b.object_box)
                .expect("finite boxes")
        })
}

/// Scores predictions against the ground truth of the given images.
/// Categories with zero ground truth are reported but excluded from split
/// means; split means are plain arithmetic means of member APs.
pub fn evaluate(
    predictions: &[Prediction],
    images: &[&ImageRecord],
    vocab: &ConceptVocabulary,
    iou_threshold: Scalar,
) -> Result<EvalReport> {
    for p in predictions {
        if vocab.index_of(p.category_id).is_none() {
            return Err(Error::Format(format!(
                "prediction references unknown category {}",
                p.category_id
            )));
        }
        if !p.score.is_finite() {
            return Err(Error::Format(format!(
                "prediction in image {} has non-finite score",
                p.image_id
            )));
        }
        check_xyxy(p.human_box, "predicted human")?;
        check_xyxy(p.object_box, "predicted object")?;
    }

    let mut gts: Vec<EvalGroundTruth> = Vec::new();
    for image in images {
        for gt in &image.interactions {
            if vocab.index_of(gt.category_id).is_none() {
                return Err(Error::Format(format!(
                    "dataset references unknown category {}",
                    gt.category_id
                )));
            }
            gts.push(EvalGroundTruth {
                image_id: image.image_id.clone(),
                category_id: gt.category_id,
                human_box: cxcywh_to_xyxy(gt.human_box),
                object_box: cxcywh_to_xyxy(gt.object_box),
            });
        }
    }

    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));

    let mut per_category = BTreeMap::new();
    let mut excluded = Vec::new();
    for entry in &vocab.entries {
        let id = entry.id;
        let cat_gts: Vec<&EvalGroundTruth> =
            gts.iter().filter(|g| g.category_id == id).collect();
        if cat_gts.is_empty() {
            excluded.push(id);
            continue;
        }
        let cat_preds: Vec<&Prediction> = sorted
            .iter()
            .copied()
            .filter(|p| p.category_id == id)
            .collect();
        let labels = match_true_positives(&cat_preds, &cat_gts, iou_threshold)?;
        per_category.insert(
            id,
            CategoryResult {
                ap: average_precision(&labels, cat_gts.len()),
                gt_count: cat_gts.len(),
                split: entry.split,
            },
        );
    }

    let mut split_map = BTreeMap::new();
    let mut add_mean = |name: &str, members: Vec<Scalar>| {
        if !members.is_empty() {
            let mean = members.iter().sum::<Scalar>() / members.len() as Scalar;
            split_map.insert(name.to_string(), (mean, members.len()));
        }
    };
    add_mean(
        "full",
        per_category.values().map(|r| r.ap).collect(),
    );
    add_mean(
        "base",
        per_category
            .values()
            .filter(|r| r.split == Split::Base)
            .map(|r| r.ap)
            .collect(),
    );
    add_mean(
        "novel",
        per_category
            .values()
            .filter(|r| r.split == Split::Novel)
            .map(|r| r.ap)
            .collect(),
    );

    Ok(EvalReport {
        per_category,
        split_map,
        excluded,
    })
}

/// Runs the model over images and emits every (query, category) pair as a
/// prediction scored by ŝ·ĉ^γ. Also gathers per-category prompt selection
/// histories (attributed to each image's ground-truth categories) for the
/// diagnostics.
pub fn predictions_from_model(
    detector: &Detector,
    bank: &PromptBank,
    vocab: &ConceptVocabulary,
    images: &[&ImageRecord],
    gamma: Scalar,
    use_inp: bool,
) -> Result<(Vec<Prediction>, BTreeMap<u32, Vec<PromptSelection>>)> {
    let text = vocab.classifier_matrix()?;
    let ids = vocab.ids();
    let mut predictions = Vec::new();
    let mut histories: BTreeMap<u32, Vec<PromptSelection>> = BTreeMap::new();
    for image in images {
        let tokens = render_tokens(image, vocab)?;
        let out = detector.forward(
            &tokens,
            (image.height, image.width),
            bank,
            &text,
            use_inp,
        )?;
        if let Some(sel) = &out.selection {
            for gt in &image.interactions {
                histories
                    .entry(gt.category_id)
                    .or_default()
                    .push(sel.clone());
            }
        }
        let det = &out.detections;
        let scores = det.class_scores.to_vec();
        let v = ids.len();
        for q in 0..det.n_queries() {
            let human = cxcywh_to_xyxy(det.human_box(q));
            let object = cxcywh_to_xyxy(det.object_box(q));
            let confidence = det.confidence(q);
            for (col, &id) in ids.iter().enumerate() {
                predictions.push(Prediction {
                    image_id: image.image_id.clone(),
                    category_id: id,
                    score: inference_score(scores[q * v + col], confidence, gamma),
                    human_box: human,
                    object_box: object,
                });
            }
        }
    }
    Ok((predictions, histories))
}

/// Pairwise cosine similarity of per-category prompt-usage frequencies.
/// Returns (included ids, similarity matrix over them, excluded ids with
/// empty histories).
pub fn selection_similarity_matrix(
    histories: &BTreeMap<u32, Vec<PromptSelection>>,
    m: usize,
) -> Result<(Vec<u32>, Tensor, Vec<u32>)> {
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    let mut freqs: Vec<Vec<Scalar>> = Vec::new();
    for (&id, history) in histories {
        if history.is_empty() {
            excluded.push(id);
            continue;
        }
        freqs.push(usage_frequencies(history, m)?);
        included.push(id);
    }
    if included.is_empty() {
        return Err(Error::Parameter(
            "selection similarity needs at least one non-empty history".to_string(),
        ));
    }
    let n = included.len();
    let mut sim = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let dot: Scalar = freqs[a].iter().zip(&freqs[b]).map(|(x, y)| x * y).sum();
            let na: Scalar = freqs[a].iter().map(|x| x * x).sum::<Scalar>().sqrt();
            let nb: Scalar = freqs[b].iter().map(|x| x * x).sum::<Scalar>().sqrt();
            sim[a * n + b] = dot / (na * nb);
        }
    }
    Ok((included, Tensor::new(&[n, n], sim)?, excluded))
}

/// Prediction file line: `image<TAB>category<TAB>score<TAB>h box<TAB>o box`
/// with comma-separated xyxy coordinates.
pub fn save_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = String::new();
    for p in predictions {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6},{:.6},{:.6},{:.6}\t{:.6},{:.6},{:.6},{:.6}",
            p.image_id,
            p.category_id,
            p.score,
            p.human_box[0],
            p.human_box[1],
            p.human_box[2],
            p.human_box[3],
            p.object_box[0],
            p.object_box[1],
            p.object_box[2],
            p.object_box[3]
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_box(text: &str, lineno: usize) -> Result<[Scalar; 4]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Format(format!(
            "predictions line {lineno}: box '{text}' needs 4 comma-separated values"
        )));
    }
    let mut b = [0.0; 4];
    for (slot, part) in b.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| {
            Error::Format(format!("predictions line {lineno}: bad number '{part}'"))
        })?;
    }
    Ok(b)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "predictions line {lineno}: expected 5 tab-separated fields, got {}",
                fields.len()
            )));
        }
        out.push(Prediction {
            image_id: fields[0].to_string(),
            category_id: fields[1].parse().map_err(|_| {
                Error::Format(format!(
                    "predictions line {lineno}: bad category id '{}'",
                    fields[1]
                ))
            })?,
            score: fields[2].parse().map_err(|_| {
                Error::Format(format!(
                    "predictions line {lineno}: bad score '{}'",
                    fields[2]
                ))
            })?,
            human_box: parse_box(fields[3], lineno)?,
            object_box: parse_box(fields[4], lineno)?,
        });
    }
    Ok(out)
}
