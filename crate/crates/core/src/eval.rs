//! Recall@K evaluation across the five task modes, with and without
//! graph constraints.
//!
//! Matching is greedy in prediction-rank order with first-eligible
//! ground-truth consumption; each ground-truth edge is matched at most
//! once and each prediction consumes at most one edge.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::PredictedGraph;
use crate::geom::{iou, union_box};
use crate::graph::{SceneGraph, BG_INDEX};

/// Evaluation task modes. The three core modes match per-object boxes;
/// PhrDet matches on union-box IoU; PredDet ranks predicates for given
/// ground-truth pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    PredCls,
    SgCls,
    SgDet,
    PhrDet,
    PredDet,
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::PredCls => "predcls",
            EvalMode::SgCls => "sgcls",
            EvalMode::SgDet => "sgdet",
            EvalMode::PhrDet => "phrdet",
            EvalMode::PredDet => "preddet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Recall thresholds, positive and sorted ascending.
    pub ks: Vec<usize>,
    pub iou_threshold: f64,
    /// Allow at most one predicted predicate per ordered entity pair.
    pub graph_constraints: bool,
}

impl EvalConfig {
    pub fn new(mode: EvalMode) -> Self {
        EvalConfig {
            mode,
            ks: vec![20, 50, 100],
            iou_threshold: 0.5,
            graph_constraints: true,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(EvalError::Config("K values must be positive".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("K values must be strictly ascending".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::Config("IoU threshold must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("image {0}: predictions are not sorted by score descending")]
    Unsorted(String),
    #[error("unknown image_id {0} in predictions")]
    UnknownImage(String),
    #[error("image {image_id}: PredDet score supplied for pair ({head}, {tail}) with no ground-truth edge")]
    NonGtPair {
        image_id: String,
        head: usize,
        tail: usize,
    },
    #[error("image {image_id}: missing PredDet scores for ground-truth pair ({head}, {tail})")]
    MissingGtPair {
        image_id: String,
        head: usize,
        tail: usize,
    },
    #[error("image {0}: PredDet requires prediction entities identical to the ground truth")]
    EntitiesMismatch(String),
    #[error("mode {0:?} is not matched per-triplet; use evaluate_preddet")]
    UnsupportedMode(EvalMode),
}

/// Result of matching one image's ranked predictions against its
/// ground truth. `kept` are indices into the prediction's triplet list
/// (after constraint enforcement), in rank order; `matched[i]` is the
/// ground-truth edge consumed by `kept[i]`, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub kept: Vec<usize>,
    pub matched: Vec<Option<usize>>,
}

impl MatchOutcome {
    /// Distinct ground-truth edges matched by predictions ranked within
    /// the top `k` of the original list. Ranks refer to positions
    /// before constraint filtering, so a constrained run never counts
    /// more matches at a given `k` than the unconstrained superset.
    pub fn matched_within(&self, k: usize) -> usize {
        self.kept
            .iter()
            .zip(&self.matched)
            .filter(|(&rank, matched)| rank < k && matched.is_some())
            .count()
    }
}

fn check_sorted(pred: &PredictedGraph) -> Result<(), EvalError> {
    if pred
        .triplets
        .windows(2)
        .any(|w| w[0].score < w[1].score)
    {
        return Err(EvalError::Unsorted(pred.image_id.clone()));
    }
    Ok(())
}

fn triplet_eligible(
    mode: EvalMode,
    iou_threshold: f64,
    pred: &PredictedGraph,
    t: usize,
    gt: &SceneGraph,
    r: usize,
) -> bool {
    let t = &pred.triplets[t];
    let r = &gt.relations[r];
    let head = &pred.entities[t.head];
    let tail = &pred.entities[t.tail];
    if head.label != gt.labels[r.head]
        || tail.label != gt.labels[r.tail]
        || t.predicate != r.predicate
    {
        return false;
    }
    match mode {
        // boxes are the ground truth by construction; identity avoids
        // float-noise mismatches
        EvalMode::PredCls | EvalMode::SgCls => {
            head.bbox == gt.boxes[r.head] && tail.bbox == gt.boxes[r.tail]
        }
        EvalMode::SgDet => {
            iou(&head.bbox, &gt.boxes[r.head]) >= iou_threshold
                && iou(&tail.bbox, &gt.boxes[r.tail]) >= iou_threshold
        }
        EvalMode::PhrDet => {
            let pred_union = union_box(&head.bbox, &tail.bbox);
            let gt_union = union_box(&gt.boxes[r.head], &gt.boxes[r.tail]);
            iou(&pred_union, &gt_union) >= iou_threshold
        }
        EvalMode::PredDet => unreachable!("PredDet is not matched per-triplet"),
    }
}

/// Greedily match ranked predictions against ground-truth edges. When
/// graph constraints are on and the predictions carry multiple
/// predicates for an ordered entity pair, only the highest-ranked per
/// pair is kept.
pub fn match_triplets(
    pred: &PredictedGraph,
    gt: &SceneGraph,
    cfg: &EvalConfig,
) -> Result<MatchOutcome, EvalError> {
    cfg.validate()?;
    if cfg.mode == EvalMode::PredDet {
        return Err(EvalError::UnsupportedMode(cfg.mode));
    }
    check_sorted(pred)?;

    let mut kept = Vec::with_capacity(pred.triplets.len());
    if cfg.graph_constraints {
        let mut seen_pairs = std::collections::HashSet::new();
        for (i, t) in pred.triplets.iter().enumerate() {
            if seen_pairs.insert((t.head, t.tail)) {
                kept.push(i);
            }
        }
    } else {
        kept.extend(0..pred.triplets.len());
    }

    let mut gt_taken = vec![false; gt.relations.len()];
    let mut matched = Vec::with_capacity(kept.len());
    for &i in &kept {
        let hit = (0..gt.relations.len()).find(|&r| {
            !gt_taken[r] && triplet_eligible(cfg.mode, cfg.iou_threshold, pred, i, gt, r)
        });
        if let Some(r) = hit {
            gt_taken[r] = true;
        }
        matched.push(hit);
    }
    Ok(MatchOutcome { kept, matched })
}

/// Recall@K for one image: matched ground-truth edges within the top-K
/// predictions over the total edge count. Returns an empty map for
/// zero-edge images (they are excluded from corpus means).
pub fn recall_at_k(
    pred: &PredictedGraph,
    gt: &SceneGraph,
    cfg: &EvalConfig,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    if gt.relations.is_empty() {
        cfg.validate()?;
        return Ok(BTreeMap::new());
    }
    let outcome = match_triplets(pred, gt, cfg)?;
    let total = gt.relations.len() as f64;
    Ok(cfg
        .ks
        .iter()
        .map(|&k| (k, outcome.matched_within(k) as f64 / total))
        .collect())
}

/// PredDet: rank predicates per ground-truth pair. `pair_scores` maps
/// each ordered ground-truth entity pair to a score vector over the
/// full predicate vocabulary (background is excluded from the ranking).
/// Recall@K is the fraction of ground-truth edges whose predicate is in
/// the top-K ranked predicates for its pair.
pub fn evaluate_preddet(
    pair_scores: &BTreeMap<(usize, usize), Vec<f64>>,
    gt: &SceneGraph,
    image_id: &str,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, EvalError> {
    let gt_pairs: std::collections::HashSet<(usize, usize)> =
        gt.relations.iter().map(|r| (r.head, r.tail)).collect();
    for pair in pair_scores.keys() {
        if !gt_pairs.contains(pair) {
            return Err(EvalError::NonGtPair {
                image_id: image_id.to_string(),
                head: pair.0,
                tail: pair.1,
            });
        }
    }
    for pair in &gt_pairs {
        if !pair_scores.contains_key(pair) {
            return Err(EvalError::MissingGtPair {
                image_id: image_id.to_string(),
                head: pair.0,
                tail: pair.1,
            });
        }
    }

    // rank non-bg predicates per pair: score descending, ties by index
    let mut rankings: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (pair, scores) in pair_scores {
        let mut order: Vec<usize> = (0..scores.len()).filter(|&p| p != BG_INDEX).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        rankings.insert(*pair, order);
    }

    let total = gt.relations.len() as f64;
    let mut out = BTreeMap::new();
    for &k in ks {
        let hits = gt
            .relations
            .iter()
            .filter(|r| {
                rankings[&(r.head, r.tail)]
                    .iter()
                    .take(k)
                    .any(|&p| p == r.predicate)
            })
            .count();
        out.insert(k, if total == 0.0 { 0.0 } else { hits as f64 / total });
    }
    Ok(out)
}

/// Build PredDet pair scores from a prediction whose entities are the
/// ground-truth entities (boxes and labels, same order). Unscored
/// predicates rank below all scored ones.
pub fn preddet_pair_scores(
    pred: &PredictedGraph,
    gt: &SceneGraph,
    num_predicates: usize,
) -> Result<BTreeMap<(usize, usize), Vec<f64>>, EvalError> {
    let entities_match = pred.entities.len() == gt.boxes.len()
        && pred
            .entities
            .iter()
            .zip(gt.boxes.iter().zip(&gt.labels))
            .all(|(e, (b, &l))| e.bbox == *b && e.label == l);
    if !entities_match {
        return Err(EvalError::EntitiesMismatch(pred.image_id.clone()));
    }
    let mut out: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for t in &pred.triplets {
        let entry = out
            .entry((t.head, t.tail))
            .or_insert_with(|| vec![f64::NEG_INFINITY; num_predicates]);
        if t.score > entry[t.predicate] {
            entry[t.predicate] = t.score;
        }
    }
    // GT pairs with no prediction still need a (vacuous) score vector
    for r in &gt.relations {
        out.entry((r.head, r.tail))
            .or_insert_with(|| vec![f64::NEG_INFINITY; num_predicates]);
    }
    Ok(out)
}

/// Per-mode evaluation over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: EvalMode,
    pub graph_constraints: bool,
    pub ks: Vec<usize>,
    /// Per-image recall@K; zero-edge images are absent.
    pub per_image: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Mean over scored images.
    pub corpus: BTreeMap<usize, f64>,
    pub images_scored: usize,
}

/// Aggregated report across one or more evaluated modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub results: Vec<ModeResult>,
    /// Average over the three core modes at R@50 and R@100, present
    /// only when all three were evaluated at those thresholds.
    pub mean_recall: Option<f64>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub matching: String,
    pub measured_over: String,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            matching: "greedy by prediction rank, one-to-one ground-truth consumption"
                .to_string(),
            measured_over: "relation instances".to_string(),
        }
    }
}

impl EvalReport {
    pub fn from_results(results: Vec<ModeResult>) -> Self {
        let mean_recall = mean_recall(&results);
        EvalReport {
            results,
            mean_recall,
            metadata: ReportMetadata::default(),
        }
    }
}

/// Table-style mean: average over SGDet, SGCls, and PredCls at R@50 and
/// R@100. `None` unless all three modes carry both thresholds.
pub fn mean_recall(results: &[ModeResult]) -> Option<f64> {
    let core = [EvalMode::SgDet, EvalMode::SgCls, EvalMode::PredCls];
    let mut values = Vec::with_capacity(6);
    for mode in core {
        let r = results.iter().find(|r| r.mode == mode)?;
        for k in [50usize, 100] {
            values.push(*r.corpus.get(&k)?);
        }
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Evaluate a prediction set over a corpus. Images with edges but no
/// prediction score zero; zero-edge images never contribute; prediction
/// image ids must be a subset of the corpus.
pub fn evaluate_corpus(
    predictions: &BTreeMap<String, PredictedGraph>,
    graphs: &[&SceneGraph],
    cfg: &EvalConfig,
) -> Result<ModeResult, EvalError> {
    cfg.validate()?;
    let known: std::collections::HashSet<&str> =
        graphs.iter().map(|g| g.image_id.as_str()).collect();
    for id in predictions.keys() {
        if !known.contains(id.as_str()) {
            return Err(EvalError::UnknownImage(id.clone()));
        }
    }

    let mut per_image = BTreeMap::new();
    for g in graphs {
        if g.relations.is_empty() {
            continue;
        }
        let recalls = match predictions.get(&g.image_id) {
            Some(pred) => image_recall(pred, g, cfg)?,
            None => cfg.ks.iter().map(|&k| (k, 0.0)).collect(),
        };
        per_image.insert(g.image_id.clone(), recalls);
    }

    let images_scored = per_image.len();
    let mut corpus = BTreeMap::new();
    for &k in &cfg.ks {
        let sum: f64 = per_image
            .values()
            .map(|m: &BTreeMap<usize, f64>| m[&k])
            .sum();
        let mean = if images_scored == 0 {
            0.0
        } else {
            sum / images_scored as f64
        };
        corpus.insert(k, mean);
    }

    Ok(ModeResult {
        mode: cfg.mode,
        graph_constraints: cfg.graph_constraints,
        ks: cfg.ks.clone(),
        per_image,
        corpus,
        images_scored,
    })
}

fn image_recall(
    pred: &PredictedGraph,
    gt: &SceneGraph,
    cfg: &EvalConfig,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    if cfg.mode == EvalMode::PredDet {
        check_sorted(pred)?;
        let num_predicates = pred
            .triplets
            .iter()
            .map(|t| t.predicate + 1)
            .chain(gt.relations.iter().map(|r| r.predicate + 1))
            .max()
            .unwrap_or(1);
        let pair_scores = preddet_pair_scores(pred, gt, num_predicates)?;
        evaluate_preddet(&pair_scores, gt, &pred.image_id, &cfg.ks)
    } else {
        recall_at_k(pred, gt, cfg)
    }
}
