//! Set-prediction training: Hungarian matching of decoded queries to ground
//! truth, the box / GIoU / focal-classification loss terms and their
//! weighted combination, and the deterministic training loop.

pub mod giou;
pub mod hungarian;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use giou::{cxcywh_to_xyxy, giou, giou_node, iou_xyxy};
pub use hungarian::{hungarian_match, MatchResult};

use crate::concepts::{sample_negatives, ClusterModel, ConceptVocabulary, Split, Strategy};
use crate::error::{Error, Result};
use crate::harness::config::{Config, PromptMode};
use crate::harness::{stream_rng, STREAM_BATCH, STREAM_NEGATIVES};
use crate::net::{DetectionSet, Detector};
use crate::prompts::PromptBank;
use crate::{Scalar, Tensor};

/// Focal loss weighting; the focusing exponent is fixed at 2.
const FOCAL_ALPHA: Scalar = 0.25;

/// One annotated interaction: b_h, b_o in cxcywh within [0,1], plus the
/// category encoding the (action, object) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthInteraction {
    pub human_box: [Scalar; 4],
    pub object_box: [Scalar; 4],
    pub category_id: u32,
}

impl GroundTruthInteraction {
    pub fn validate(&self, vocab: &ConceptVocabulary) -> Result<()> {
        for (name, b) in [("human", self.human_box), ("object", self.object_box)] {
            if !(b.iter().all(|x| x.is_finite()) && b[2] > 0.0 && b[3] > 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} box has non-positive extent or non-finite coords: {b:?}"
                )));
            }
            let half_w = 0.5 * b[2];
            let half_h = 0.5 * b[3];
            if b[0] - half_w < -1e-9
                || b[0] + half_w > 1.0 + 1e-9
                || b[1] - half_h < -1e-9
                || b[1] + half_h > 1.0 + 1e-9
            {
                return Err(Error::Parameter(format!(
                    "{name} box {b:?} exceeds the unit square"
                )));
            }
        }
        if vocab.index_of(self.category_id).is_none() {
            return Err(Error::Parameter(format!(
                "ground truth references unknown category {}",
                self.category_id
            )));
        }
        Ok(())
    }
}

/// The three loss terms and their weighted sum, all graph scalars.
pub struct LossBreakdown {
    pub l_box: Tensor,
    pub l_iou: Tensor,
    pub l_cls: Tensor,
    pub total: Tensor,
}

impl LossBreakdown {
    pub fn values(&self) -> (Scalar, Scalar, Scalar, Scalar) {
        (
            self.l_box.value(),
            self.l_iou.value(),
            self.l_cls.value(),
            self.total.value(),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_b: Scalar,
    pub lambda_iou: Scalar,
    pub lambda_cls: Scalar,
}

impl From<&crate::harness::config::TrainConfig> for LossWeights {
    fn from(t: &crate::harness::config::TrainConfig) -> Self {
        LossWeights {
            lambda_b: t.lambda_b,
            lambda_iou: t.lambda_iou,
            lambda_cls: t.lambda_cls,
        }
    }
}

/// Matching cost, mirroring the loss terms so matching and training optimize
/// the same objective:
/// cost[i][j] = λ_b·(‖b̂_h−b_h‖₁+‖b̂_o−b_o‖₁)
///            + λ_iou·((1−GIoU_h)+(1−GIoU_o)) + λ_cls·(1−ŝ[i][cat_j]).
/// Plain values, no gradient: the assignment is a discrete decision.
pub fn match_cost(
    pred: &DetectionSet,
    gts: &[GroundTruthInteraction],
    vocab: &ConceptVocabulary,
    weights: &LossWeights,
) -> Result<Tensor> {
    if gts.is_empty() {
        return Err(Error::Parameter(
            "match_cost needs at least one ground truth".to_string(),
        ));
    }
    let n = pred.n_queries();
    let scores = pred.class_scores.data();
    let v = pred.class_scores.shape()[1];
    let mut cost = Vec::with_capacity(n * gts.len());
    for i in 0..n {
        let bh = pred.human_box(i);
        let bo = pred.object_box(i);
        for gt in gts {
            let col = vocab.index_of(gt.category_id).ok_or_else(|| {
                Error::Parameter(format!("unknown category {}", gt.category_id))
            })?;
            let l1: Scalar = bh
                .iter()
                .zip(&gt.human_box)
                .chain(bo.iter().zip(&gt.object_box))
                .map(|(a, b)| (a - b).abs())
                .sum();
            let iou_term = (1.0 - giou(bh, gt.human_box)?) + (1.0 - giou(bo, gt.object_box)?);
            let cls_term = 1.0 - scores[i * v + col];
            cost.push(
                weights.lambda_b * l1 + weights.lambda_iou * iou_term
                    + weights.lambda_cls * cls_term,
            );
        }
    }
    Tensor::new(&[n, gts.len()], cost)
}

/// Sigmoid focal loss (α = 0.25, focusing exponent 2) over only the active
/// category columns. Matched queries target 1 at their ground-truth category
/// and 0 elsewhere; unmatched queries target all zeros. Mean over every
/// (query, active category) cell.
pub fn classification_loss(
    pred: &DetectionSet,
    matches: &MatchResult,
    gts: &[GroundTruthInteraction],
    active_ids: &[u32],
    vocab: &ConceptVocabulary,
) -> Result<Tensor> {
    if active_ids.is_empty() {
        return Err(Error::Parameter(
            "classification_loss needs a non-empty active category set".to_string(),
        ));
    }
    let columns: Vec<usize> = active_ids
        .iter()
        .map(|&id| {
            vocab
                .index_of(id)
                .ok_or_else(|| Error::Parameter(format!("unknown category {id}")))
        })
        .collect::<Result<_>>()?;
    let n = pred.n_queries();
    let a = columns.len();

    let mut targets = vec![0.0; n * a];
    for &(p, g) in &matches.pairs {
        let col = vocab
            .index_of(gts[g].category_id)
            .ok_or_else(|| Error::Parameter(format!("unknown category {}", gts[g].category_id)))?;
        if let Some(pos) = columns.iter().position(|&c| c == col) {
            targets[p * a + pos] = 1.0;
        }
    }
    let t = Tensor::new(&[n, a], targets)?;

    // [N×A] view of the active columns, differentiable.
    let p = pred
        .class_scores
        .transpose()?
        .gather_rows(&columns)?
        .transpose()?;
    let one_minus_p = p.neg().add_scalar(1.0);
    let pos = t
        .hadamard(&one_minus_p.hadamard(&one_minus_p)?)?
        .hadamard(&p.log().neg())?
        .scale(FOCAL_ALPHA);
    let neg = t
        .neg()
        .add_scalar(1.0)
        .hadamard(&p.hadamard(&p)?)?
        .hadamard(&one_minus_p.log().neg())?
        .scale(1.0 - FOCAL_ALPHA);
    Ok(pos.add(&neg)?.mean())
}

/// One image's contribution to a batch loss.
pub struct BatchItem<'a> {
    pub detections: &'a DetectionSet,
    pub gts: &'a [GroundTruthInteraction],
    pub matches: &'a MatchResult,
}

/// ‖pred − gt‖₁ over one 4-coordinate box as a graph scalar.
fn l1_node(pred_row: &Tensor, gt: [Scalar; 4]) -> Result<Tensor> {
    let gt_row = Tensor::new(&[1, 4], gt.to_vec())?;
    pred_row.sub(&gt_row).map(|d| d.abs().sum())
}

/// Batch loss: box and GIoU terms averaged over all matched pairs (summed
/// over human and object within each pair), classification averaged over
/// images; total is the λ-weighted sum. With zero matched pairs the box and
/// GIoU terms are zero and only classification applies.
pub fn total_loss(
    batch: &[BatchItem],
    active_ids: &[u32],
    vocab: &ConceptVocabulary,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Parameter("total_loss over an empty batch".to_string()));
    }
    let mut box_terms: Vec<Tensor> = Vec::new();
    let mut iou_terms: Vec<Tensor> = Vec::new();
    let mut cls_terms: Vec<Tensor> = Vec::new();

    for item in batch {
        for &(p, g) in &item.matches.pairs {
            let row = item.detections.boxes.gather_rows(&[p])?;
            let human = row.slice_cols(0, 4)?;
            let object = row.slice_cols(4, 8)?;
            let gt = &item.gts[g];

            let l1 = l1_node(&human, gt.human_box)?.add(&l1_node(&object, gt.object_box)?)?;
            box_terms.push(l1);

            let gh = giou_node(&human, gt.human_box)?.reshape(&[1])?;
            let go = giou_node(&object, gt.object_box)?.reshape(&[1])?;
            // (1 − GIoU_h) + (1 − GIoU_o)
            iou_terms.push(gh.add(&go)?.neg().add_scalar(2.0));
        }
        cls_terms.push(classification_loss(
            item.detections,
            item.matches,
            item.gts,
            active_ids,
            vocab,
        )?);
    }

    let mean_of = |terms: Vec<Tensor>| -> Result<Tensor> {
        match terms.split_first() {
            None => Ok(Tensor::zeros(&[1])),
            Some((first, rest)) => {
                let mut acc = first.clone();
                for t in rest {
                    acc = acc.add(t)?;
                }
                Ok(acc.scale(1.0 / (1 + rest.len()) as Scalar))
            }
        }
    };

    let l_box = mean_of(box_terms)?;
    let l_iou = mean_of(iou_terms)?;
    let l_cls = mean_of(cls_terms)?;
    let total = l_box
        .scale(weights.lambda_b)
        .add(&l_iou.scale(weights.lambda_iou))?
        .add(&l_cls.scale(weights.lambda_cls))?;
    Ok(LossBreakdown {
        l_box,
        l_iou,
        l_cls,
        total,
    })
}

/// Adam with decoupled weight decay. Parameters update in place through the
/// tensors' interior mutability; gradients are read as left by backward().
pub struct Adam {
    pub lr: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
    pub weight_decay: Scalar,
    t: usize,
    m: Vec<Vec<Scalar>>,
    v: Vec<Vec<Scalar>>,
}

impl Adam {
    pub fn new(params: &[(String, Tensor)], lr: Scalar, weight_decay: Scalar) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update over all parameters; `lr_factor` scales the base rate
    /// (cosine schedule). Parameters without a gradient decay only.
    pub fn step(&mut self, params: &[(String, Tensor)], lr_factor: Scalar) -> Result<()> {
        self.t += 1;
        let lr = self.lr * lr_factor;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (_, p)) in params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut data = p.to_vec();
            for i in 0..data.len() {
                let g = grad[i];
                self.m[idx][i] = self.beta1 * self.m[idx][i] + (1.0 - self.beta1) * g;
                self.v[idx][i] = self.beta2 * self.v[idx][i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[idx][i] / bc1;
                let v_hat = self.v[idx][i] / bc2;
                data[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * data[i]);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }

    pub fn zero_grads(params: &[(String, Tensor)]) {
        for (_, p) in params {
            p.zero_grad();
        }
    }
}

/// Cosine learning-rate factor after `step` of `total` completed steps.
/// No warmup: on runs this short the early full-rate steps buy more final
/// box accuracy than warmup buys stability.
pub fn lr_factor(step: usize, total: usize) -> Scalar {
    if total == 0 {
        return 1.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * step as Scalar / total as Scalar).cos())
}

/// One training image: rendered tokens plus its annotations.
pub struct TrainImage {
    pub id: String,
    pub tokens: Tensor,
    pub hw: (usize, usize),
    pub gts: Vec<GroundTruthInteraction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub l_box: Scalar,
    pub l_iou: Scalar,
    pub l_cls: Scalar,
    pub total: Scalar,
}

/// The `step<TAB>l_box<TAB>l_iou<TAB>l_cls<TAB>total` trace.
pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.step, r.l_box, r.l_iou, r.l_cls, r.total
        ));
    }
    out
}

/// Cluster assignments restricted to base-split categories, so training
/// negatives never leak held-out categories.
fn base_cluster_view(clusters: &ClusterModel, vocab: &ConceptVocabulary) -> ClusterModel {
    let assignments = clusters
        .assignments
        .iter()
        .filter(|(id, _)| {
            vocab
                .entry(**id)
                .map(|e| e.split == Split::Base)
                .unwrap_or(false)
        })
        .map(|(&id, &c)| (id, c))
        .collect();
    ClusterModel {
        centroids: clusters.centroids.clone(),
        assignments,
        inertia: clusters.inertia,
        inertia_trace: clusters.inertia_trace.clone(),
        j: clusters.j,
    }
}

/// Deterministic training: shuffled epochs, per-batch negative sampling,
/// Hungarian matching, the combined loss, and Adam steps under a cosine
/// schedule. Aborts with the offending batch ids if the loss goes non-finite.
pub fn train_loop(
    config: &Config,
    images: &[TrainImage],
    vocab: &ConceptVocabulary,
    clusters: &ClusterModel,
    detector: &Detector,
    bank: &PromptBank,
    seed: u64,
) -> Result<Vec<MetricsRow>> {
    if images.is_empty() {
        return Err(Error::Parameter("training set is empty".to_string()));
    }
    for img in images {
        for gt in &img.gts {
            gt.validate(vocab)?;
            if vocab.entry(gt.category_id).map(|e| e.split) == Some(Split::Novel) {
                return Err(Error::Parameter(format!(
                    "train annotations reference novel category {} in image {}",
                    gt.category_id, img.id
                )));
            }
        }
    }

    let text = vocab.classifier_matrix()?;
    let use_inp = config.prompt.mode == PromptMode::Inp;
    let weights = LossWeights::from(&config.train);
    let base_view = base_cluster_view(clusters, vocab);

    let params = crate::harness::model_parameters(detector, bank);
    let mut optimizer = Adam::new(&params, config.train.lr, config.train.weight_decay);

    let mut batch_rng = stream_rng(seed, STREAM_BATCH);
    let mut neg_rng = stream_rng(seed, STREAM_NEGATIVES);

    let steps_per_epoch = images.len().div_ceil(config.train.batch_size);
    let total_steps = config.train.epochs * steps_per_epoch;
    let mut rows = Vec::with_capacity(total_steps);
    let mut step = 0usize;

    for _epoch in 0..config.train.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut batch_rng);
        for chunk in order.chunks(config.train.batch_size) {
            let batch: Vec<&TrainImage> = chunk.iter().map(|&i| &images[i]).collect();
            let batch_ids: Vec<String> = batch.iter().map(|im| im.id.clone()).collect();

            let mut positives: BTreeSet<u32> = BTreeSet::new();
            for im in &batch {
                positives.extend(im.gts.iter().map(|g| g.category_id));
            }
            if positives.is_empty() {
                return Err(Error::Parameter(format!(
                    "batch {batch_ids:?} has no ground-truth interactions"
                )));
            }
            let negatives = sample_negatives(
                vocab,
                &base_view,
                &positives,
                config.concepts.negatives_per_step,
                config.concepts.strategy,
                &mut neg_rng,
            )?;
            debug_assert!(match config.concepts.strategy {
                Strategy::Hard => negatives.ids.iter().all(|id| {
                    let c = base_view.assignments[id];
                    positives.iter().any(|p| base_view.assignments[p] == c)
                }),
                Strategy::Easy => negatives.ids.iter().all(|id| {
                    let c = base_view.assignments[id];
                    positives.iter().all(|p| base_view.assignments[p] != c)
                }),
                Strategy::Random => true,
            });
            let mut active: BTreeSet<u32> = positives.clone();
            active.extend(negatives.ids.iter().copied());
            let active_ids: Vec<u32> = active.into_iter().collect();

            let mut detections = Vec::with_capacity(batch.len());
            let mut matches = Vec::with_capacity(batch.len());
            for im in &batch {
                let out = detector.forward(&im.tokens, im.hw, bank, &text, use_inp)?;
                let m = if im.gts.is_empty() {
                    MatchResult {
                        pairs: Vec::new(),
                        unmatched_predictions: (0..out.detections.n_queries()).collect(),
                    }
                } else {
                    let cost = match_cost(&out.detections, &im.gts, vocab, &weights)?;
                    hungarian_match(&cost)?
                };
                detections.push(out.detections);
                matches.push(m);
            }
            let items: Vec<BatchItem> = batch
                .iter()
                .zip(&detections)
                .zip(&matches)
                .map(|((im, det), m)| BatchItem {
                    detections: det,
                    gts: &im.gts,
                    matches: m,
                })
                .collect();

            let loss = total_loss(&items, &active_ids, vocab, &weights)?;
            let (l_box, l_iou, l_cls, total) = loss.values();
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at step {}", step + 1),
                    batch_ids,
                });
            }
            loss.total.backward()?;
            optimizer.step(&params, lr_factor(step, total_steps))?;
            Adam::zero_grads(&params);

            step += 1;
            rows.push(MetricsRow {
                step,
                l_box,
                l_iou,
                l_cls,
                total,
            });
        }
    }
    Ok(rows)
}
