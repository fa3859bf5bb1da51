//! Frequency-based relation predictors and the detection-side plumbing
//! they need: per-class NMS, overlap filtering, triplet scoring, and
//! region ordering utilities.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{boxes_overlap, iou, BBox};
use crate::graph::{SceneGraph, BG_INDEX};
use crate::ingest::DetectionSet;

/// Empirical predicate distribution conditioned on ordered object-label
/// pairs. Counts are raw integers; probabilities are derived on lookup.
/// Pairs never seen co-occurring answer P(bg) = 1, i.e. no counts entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FrequencyTableRepr", into = "FrequencyTableRepr")]
pub struct FrequencyTable {
    num_predicates: usize,
    counts: BTreeMap<(usize, usize), Vec<u64>>,
}

#[derive(Serialize, Deserialize, Clone)]
struct FrequencyTableRepr {
    num_predicates: usize,
    pairs: Vec<(usize, usize, Vec<u64>)>,
}

impl From<FrequencyTableRepr> for FrequencyTable {
    fn from(r: FrequencyTableRepr) -> Self {
        FrequencyTable {
            num_predicates: r.num_predicates,
            counts: r
                .pairs
                .into_iter()
                .map(|(h, t, c)| ((h, t), c))
                .collect(),
        }
    }
}

impl From<FrequencyTable> for FrequencyTableRepr {
    fn from(t: FrequencyTable) -> Self {
        FrequencyTableRepr {
            num_predicates: t.num_predicates,
            pairs: t
                .counts
                .into_iter()
                .map(|((h, t), c)| (h, t, c))
                .collect(),
        }
    }
}

impl FrequencyTable {
    pub fn new(num_predicates: usize) -> Self {
        FrequencyTable {
            num_predicates,
            counts: BTreeMap::new(),
        }
    }

    pub fn num_predicates(&self) -> usize {
        self.num_predicates
    }

    pub fn counts(&self, head: usize, tail: usize) -> Option<&[u64]> {
        self.counts.get(&(head, tail)).map(|c| c.as_slice())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<u64>)> {
        self.counts.iter()
    }

    /// P(predicate | head, tail) over the full predicate vocabulary
    /// including background. Unseen pairs get all mass on background.
    pub fn probabilities(&self, head: usize, tail: usize) -> Vec<f64> {
        match self.counts.get(&(head, tail)) {
            Some(counts) => {
                let total: u64 = counts.iter().sum();
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
            None => {
                let mut p = vec![0.0; self.num_predicates];
                p[BG_INDEX] = 1.0;
                p
            }
        }
    }

    /// Merge another table built on a disjoint shard of the corpus.
    pub fn merge(&mut self, other: &FrequencyTable) {
        assert_eq!(self.num_predicates, other.num_predicates);
        for (pair, counts) in &other.counts {
            let entry = self
                .counts
                .entry(*pair)
                .or_insert_with(|| vec![0; self.num_predicates]);
            for (a, b) in entry.iter_mut().zip(counts) {
                *a += b;
            }
        }
    }

    fn bump(&mut self, head: usize, tail: usize, predicate: usize) {
        let entry = self
            .counts
            .entry((head, tail))
            .or_insert_with(|| vec![0; self.num_predicates]);
        entry[predicate] += 1;
    }
}

/// Build the frequency table from training graphs. For each image,
/// every ordered pair of distinct entities contributes one count per
/// annotated edge between them, or one background count if no edge
/// exists for the pair.
pub fn build_frequency_table(graphs: &[&SceneGraph], num_predicates: usize) -> FrequencyTable {
    let mut table = FrequencyTable::new(num_predicates);
    for g in graphs {
        let n = g.boxes.len();
        let mut has_edge = vec![false; n * n];
        for r in &g.relations {
            has_edge[r.head * n + r.tail] = true;
            table.bump(g.labels[r.head], g.labels[r.tail], r.predicate);
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && !has_edge[i * n + j] {
                    table.bump(g.labels[i], g.labels[j], BG_INDEX);
                }
            }
        }
    }
    table
}

/// Per-class greedy NMS survivor lists: for each object class, the
/// proposal indices kept when suppressing by that class's scores at the
/// given IoU threshold. Ties in score keep the lower original index.
pub fn nms_class_survivors(detections: &DetectionSet, iou_threshold: f64) -> Vec<Vec<usize>> {
    let num_classes = detections
        .proposals
        .first()
        .map(|p| p.scores.len())
        .unwrap_or(0);
    let mut survivors = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut order: Vec<usize> = (0..detections.proposals.len()).collect();
        order.sort_by(|&a, &b| {
            detections.proposals[b].scores[class]
                .partial_cmp(&detections.proposals[a].scores[class])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut kept: Vec<usize> = Vec::new();
        for &idx in &order {
            let candidate = &detections.proposals[idx].bbox;
            let suppressed = kept
                .iter()
                .any(|&k| iou(&detections.proposals[k].bbox, candidate) > iou_threshold);
            if !suppressed {
                kept.push(idx);
            }
        }
        kept.sort();
        survivors.push(kept);
    }
    survivors
}

/// Per-class NMS over a detection set. A proposal is retained when it
/// survives suppression for its argmax class; scores are unchanged.
pub fn nms_per_class(detections: &DetectionSet, iou_threshold: f64) -> DetectionSet {
    let survivors = nms_class_survivors(detections, iou_threshold);
    let proposals = detections
        .proposals
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            let (class, _) = p.argmax();
            survivors[class].contains(i)
        })
        .map(|(_, p)| p.clone())
        .collect();
    DetectionSet {
        image_id: detections.image_id.clone(),
        proposals,
    }
}

/// Region ordering strategies for linearizing proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiOrder {
    /// Sort left-to-right by central x-coordinate.
    LeftRight,
    /// Sort by the maximum class probability, descending.
    Confidence,
    /// Sort by box area, descending.
    Size,
    /// Deterministic shuffle under the given seed.
    Random { seed: u64 },
}

/// Deterministic permutation of proposal indices under the given
/// strategy; ties preserve the original order.
pub fn order_rois(detections: &DetectionSet, strategy: RoiOrder) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.proposals.len()).collect();
    match strategy {
        RoiOrder::LeftRight => {
            order.sort_by(|&a, &b| {
                detections.proposals[a]
                    .bbox
                    .center_x()
                    .partial_cmp(&detections.proposals[b].bbox.center_x())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
        }
        RoiOrder::Confidence => {
            order.sort_by(|&a, &b| {
                let ca = detections.proposals[a].argmax().1;
                let cb = detections.proposals[b].argmax().1;
                cb.partial_cmp(&ca)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
        }
        RoiOrder::Size => {
            order.sort_by(|&a, &b| {
                let sa = detections.proposals[a].bbox.area();
                let sb = detections.proposals[b].bbox.area();
                sb.partial_cmp(&sa)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
        }
        RoiOrder::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
    }
    order
}

/// One predicted entity: box, committed object class, and the
/// confidence of that commitment (1 for ground-truth entities).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedEntity {
    pub bbox: BBox,
    pub label: usize,
    pub score: f64,
}

/// One predicted relation, referencing entities by index.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTriplet {
    pub head: usize,
    pub tail: usize,
    pub predicate: usize,
    pub score: f64,
}

/// A predictor's output for one image: entities plus triplets ranked by
/// score descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedGraph {
    pub image_id: String,
    pub entities: Vec<PredictedEntity>,
    pub triplets: Vec<PredictedTriplet>,
}

/// The three prediction-time task modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Ground-truth boxes and labels given; predict edge labels.
    PredCls,
    /// Ground-truth boxes given; predict box labels and edge labels.
    SgCls,
    /// Nothing given but detections.
    SgDet,
}

pub enum PredictInput<'a> {
    /// Ground-truth boxes and labels (PredCls).
    GroundTruth {
        image_id: &'a str,
        boxes: &'a [BBox],
        labels: &'a [usize],
    },
    /// Detector output: ground-truth boxes with class scores for SGCls,
    /// raw proposals for SGDet.
    Detections(&'a DetectionSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    /// Drop candidate pairs whose boxes do not overlap (Freq-Overlap).
    pub use_overlap: bool,
    /// Keep only the top-scoring predicate per ordered entity pair.
    pub use_constraints: bool,
    /// Truncate the ranked triplet list to this many entries.
    pub k_max: usize,
    /// IoU threshold for per-class NMS in SGDet.
    pub nms_iou: f64,
    /// Multiply entity confidences into triplet scores. When off, the
    /// score is the predicate probability alone.
    pub use_entity_scores: bool,
    /// Rescale non-background predicate probabilities by the
    /// non-background mass, 1 / (1 - P(bg)).
    pub rescale_bg: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            use_overlap: false,
            use_constraints: true,
            k_max: 100,
            nms_iou: 0.3,
            use_entity_scores: true,
            rescale_bg: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("mode {0:?} requires ground-truth boxes and labels as input")]
    ExpectedGroundTruth(PredictMode),
    #[error("mode {0:?} requires a detection set as input")]
    ExpectedDetections(PredictMode),
}

/// Run the frequency predictor for one image. Candidate triplets for
/// every ordered entity pair are all non-background predicates scored
/// by `score(head) * score(tail) * P(predicate | labels)`.
pub fn predict(
    mode: PredictMode,
    input: PredictInput<'_>,
    table: &FrequencyTable,
    cfg: &PredictConfig,
) -> Result<PredictedGraph, PredictError> {
    let (image_id, entities) = match (mode, input) {
        (PredictMode::PredCls, PredictInput::GroundTruth { image_id, boxes, labels }) => {
            let entities = boxes
                .iter()
                .zip(labels)
                .map(|(b, &l)| PredictedEntity {
                    bbox: *b,
                    label: l,
                    score: 1.0,
                })
                .collect::<Vec<_>>();
            (image_id.to_string(), entities)
        }
        (PredictMode::PredCls, PredictInput::Detections(_)) => {
            return Err(PredictError::ExpectedGroundTruth(mode))
        }
        (PredictMode::SgCls | PredictMode::SgDet, PredictInput::GroundTruth { .. }) => {
            return Err(PredictError::ExpectedDetections(mode))
        }
        (PredictMode::SgCls, PredictInput::Detections(dets)) => {
            (dets.image_id.clone(), commit_labels(dets))
        }
        (PredictMode::SgDet, PredictInput::Detections(dets)) => {
            let kept = nms_per_class(dets, cfg.nms_iou);
            (kept.image_id.clone(), commit_labels(&kept))
        }
    };

    let mut triplets = Vec::new();
    for i in 0..entities.len() {
        for j in 0..entities.len() {
            if i == j {
                continue;
            }
            if cfg.use_overlap && !boxes_overlap(&entities[i].bbox, &entities[j].bbox) {
                continue;
            }
            let probs = table.probabilities(entities[i].label, entities[j].label);
            let non_bg_mass = 1.0 - probs[BG_INDEX];
            let entity_factor = if cfg.use_entity_scores {
                entities[i].score * entities[j].score
            } else {
                1.0
            };
            let mut pair_best: Option<PredictedTriplet> = None;
            for (predicate, &p) in probs.iter().enumerate() {
                if predicate == BG_INDEX || p <= 0.0 {
                    continue;
                }
                let p = if cfg.rescale_bg { p / non_bg_mass } else { p };
                let t = PredictedTriplet {
                    head: i,
                    tail: j,
                    predicate,
                    score: entity_factor * p,
                };
                if cfg.use_constraints {
                    // ties keep the lowest predicate index
                    if pair_best.as_ref().is_none_or(|b| t.score > b.score) {
                        pair_best = Some(t);
                    }
                } else {
                    triplets.push(t);
                }
            }
            if let Some(best) = pair_best {
                triplets.push(best);
            }
        }
    }

    triplets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.head, a.tail, a.predicate).cmp(&(b.head, b.tail, b.predicate)))
    });
    triplets.truncate(cfg.k_max);

    Ok(PredictedGraph {
        image_id,
        entities,
        triplets,
    })
}

fn commit_labels(dets: &DetectionSet) -> Vec<PredictedEntity> {
    dets.proposals
        .iter()
        .map(|p| {
            let (label, score) = p.argmax();
            PredictedEntity {
                bbox: p.bbox,
                label,
                score,
            }
        })
        .collect()
}
