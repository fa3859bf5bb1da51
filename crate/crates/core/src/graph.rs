//! Scene-graph domain types: vocabularies, graphs, relations, and
//! scored prediction triplets.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::BBox;

/// Index of the background predicate in every vocabulary. BG means "no
/// edge between this ordered object pair"; it is a vocabulary member so
/// predicate distributions are complete, but it never appears inside a
/// stored relation.
pub const BG_INDEX: usize = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("duplicate object class name: {0}")]
    DuplicateObjectClass(String),
    #[error("duplicate predicate name: {0}")]
    DuplicatePredicate(String),
    #[error("predicate list is empty (needs at least the background entry)")]
    NoPredicates,
}

/// Label vocabulary: ordered object classes and predicates. The
/// background predicate occupies index [`BG_INDEX`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr")]
pub struct Vocab {
    object_classes: Vec<String>,
    predicates: Vec<String>,
    #[serde(skip)]
    object_index: HashMap<String, usize>,
    #[serde(skip)]
    predicate_index: HashMap<String, usize>,
}

/// Wire shape for [`Vocab`]; deserialization rebuilds the name→index
/// maps through [`Vocab::new`].
#[derive(Deserialize)]
struct VocabRepr {
    object_classes: Vec<String>,
    predicates: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = VocabError;

    fn try_from(r: VocabRepr) -> Result<Self, VocabError> {
        Vocab::new(r.object_classes, r.predicates)
    }
}

impl Vocab {
    pub fn new(object_classes: Vec<String>, predicates: Vec<String>) -> Result<Self, VocabError> {
        if predicates.is_empty() {
            return Err(VocabError::NoPredicates);
        }
        let mut object_index = HashMap::new();
        for (i, name) in object_classes.iter().enumerate() {
            if object_index.insert(name.clone(), i).is_some() {
                return Err(VocabError::DuplicateObjectClass(name.clone()));
            }
        }
        let mut predicate_index = HashMap::new();
        for (i, name) in predicates.iter().enumerate() {
            if predicate_index.insert(name.clone(), i).is_some() {
                return Err(VocabError::DuplicatePredicate(name.clone()));
            }
        }
        Ok(Vocab {
            object_classes,
            predicates,
            object_index,
            predicate_index,
        })
    }

    pub fn object_classes(&self) -> &[String] {
        &self.object_classes
    }

    pub fn predicates(&self) -> &[String] {
        &self.predicates
    }

    pub fn num_object_classes(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicate_index.get(name).copied()
    }

    pub fn object_name(&self, index: usize) -> &str {
        &self.object_classes[index]
    }

    pub fn predicate_name(&self, index: usize) -> &str {
        &self.predicates[index]
    }

    pub fn bg_name(&self) -> &str {
        &self.predicates[BG_INDEX]
    }
}

/// A directed labeled edge between two entities of a scene graph,
/// referencing them by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub head: usize,
    pub tail: usize,
    pub predicate: usize,
}

/// One image's annotated scene graph: boxed labeled entities plus
/// directed labeled relations between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BBox>,
    pub labels: Vec<usize>,
    pub relations: Vec<Relation>,
}

/// A single invariant breach found by [`validate_graph`]. Validation
/// reports all breaches instead of aborting at the first.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LabelCountMismatch {
        boxes: usize,
        labels: usize,
    },
    LabelOutOfRange {
        index: usize,
        label: usize,
    },
    RelationIndexOutOfRange {
        relation: usize,
    },
    SelfLoop {
        relation: usize,
    },
    BackgroundPredicateStored {
        relation: usize,
    },
    PredicateOutOfRange {
        relation: usize,
        predicate: usize,
    },
    DuplicateRelation {
        relation: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LabelCountMismatch { boxes, labels } => {
                write!(f, "labels: {labels} labels for {boxes} boxes")
            }
            Violation::LabelOutOfRange { index, label } => {
                write!(f, "labels[{index}]: object class {label} out of range")
            }
            Violation::RelationIndexOutOfRange { relation } => {
                write!(f, "relations[{relation}]: head/tail index out of range")
            }
            Violation::SelfLoop { relation } => {
                write!(f, "relations[{relation}]: head and tail are the same entity")
            }
            Violation::BackgroundPredicateStored { relation } => {
                write!(
                    f,
                    "relations[{relation}]: background predicate may not be stored"
                )
            }
            Violation::PredicateOutOfRange { relation, predicate } => {
                write!(f, "relations[{relation}]: predicate {predicate} out of range")
            }
            Violation::DuplicateRelation { relation } => {
                write!(f, "relations[{relation}]: duplicate (head, tail, predicate)")
            }
        }
    }
}

/// Check every SceneGraph invariant against a vocabulary, returning the
/// full list of breaches (empty when the graph is well formed).
pub fn validate_graph(g: &SceneGraph, vocab: &Vocab) -> Vec<Violation> {
    let mut out = Vec::new();
    if g.labels.len() != g.boxes.len() {
        out.push(Violation::LabelCountMismatch {
            boxes: g.boxes.len(),
            labels: g.labels.len(),
        });
    }
    for (i, &label) in g.labels.iter().enumerate() {
        if label >= vocab.num_object_classes() {
            out.push(Violation::LabelOutOfRange { index: i, label });
        }
    }
    let n = g.boxes.len();
    let mut seen = HashSet::new();
    for (k, r) in g.relations.iter().enumerate() {
        if r.head >= n || r.tail >= n {
            out.push(Violation::RelationIndexOutOfRange { relation: k });
            continue;
        }
        if r.head == r.tail {
            out.push(Violation::SelfLoop { relation: k });
        }
        if r.predicate == BG_INDEX {
            out.push(Violation::BackgroundPredicateStored { relation: k });
        } else if r.predicate >= vocab.num_predicates() {
            out.push(Violation::PredicateOutOfRange {
                relation: k,
                predicate: r.predicate,
            });
        }
        if !seen.insert((r.head, r.tail, r.predicate)) {
            out.push(Violation::DuplicateRelation { relation: k });
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TripletError {
    #[error("triplet score is not finite")]
    NonFiniteScore,
    #[error("triplet predicate may not be background")]
    BackgroundPredicate,
}

/// A fully resolved prediction: boxes, labels, a non-background
/// predicate, and a confidence score (higher is more confident).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTriplet {
    pub head_box: BBox,
    pub tail_box: BBox,
    pub head_label: usize,
    pub tail_label: usize,
    pub predicate: usize,
    pub score: f64,
}

impl ScoredTriplet {
    pub fn new(
        head_box: BBox,
        tail_box: BBox,
        head_label: usize,
        tail_label: usize,
        predicate: usize,
        score: f64,
    ) -> Result<Self, TripletError> {
        if !score.is_finite() {
            return Err(TripletError::NonFiniteScore);
        }
        if predicate == BG_INDEX {
            return Err(TripletError::BackgroundPredicate);
        }
        Ok(ScoredTriplet {
            head_box,
            tail_box,
            head_label,
            tail_label,
            predicate,
            score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn vocab() -> Vocab {
        Vocab::new(
            vec!["man".into(), "shirt".into()],
            vec!["bg".into(), "wearing".into(), "has".into()],
        )
        .unwrap()
    }

    fn graph(relations: Vec<Relation>) -> SceneGraph {
        SceneGraph {
            image_id: "img0".into(),
            width: 100,
            height: 100,
            boxes: vec![bx(0.0, 0.0, 10.0, 10.0), bx(5.0, 5.0, 15.0, 15.0)],
            labels: vec![0, 1],
            relations,
        }
    }

    #[test]
    fn well_formed_graph_has_no_violations() {
        let g = graph(vec![Relation {
            head: 0,
            tail: 1,
            predicate: 1,
        }]);
        assert!(validate_graph(&g, &vocab()).is_empty());
    }

    #[test]
    fn self_loop_reported() {
        let g = graph(vec![Relation {
            head: 0,
            tail: 0,
            predicate: 1,
        }]);
        let v = validate_graph(&g, &vocab());
        assert_eq!(v, vec![Violation::SelfLoop { relation: 0 }]);
    }

    #[test]
    fn stored_bg_reported() {
        let g = graph(vec![Relation {
            head: 0,
            tail: 1,
            predicate: BG_INDEX,
        }]);
        let v = validate_graph(&g, &vocab());
        assert_eq!(v, vec![Violation::BackgroundPredicateStored { relation: 0 }]);
    }

    #[test]
    fn duplicate_relation_reported() {
        let r = Relation {
            head: 0,
            tail: 1,
            predicate: 1,
        };
        let g = graph(vec![r, r]);
        let v = validate_graph(&g, &vocab());
        assert_eq!(v, vec![Violation::DuplicateRelation { relation: 1 }]);
    }

    #[test]
    fn multiple_violations_all_reported() {
        let g = graph(vec![
            Relation {
                head: 0,
                tail: 0,
                predicate: BG_INDEX,
            },
            Relation {
                head: 5,
                tail: 1,
                predicate: 1,
            },
        ]);
        let v = validate_graph(&g, &vocab());
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(Vocab::new(vec!["a".into(), "a".into()], vec!["bg".into()]).is_err());
        assert!(Vocab::new(vec!["a".into()], vec!["bg".into(), "bg".into()]).is_err());
        assert!(Vocab::new(vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn scored_triplet_rejects_bg_and_nan() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert!(ScoredTriplet::new(b, b, 0, 1, BG_INDEX, 0.5).is_err());
        assert!(ScoredTriplet::new(b, b, 0, 1, 1, f64::NAN).is_err());
        assert!(ScoredTriplet::new(b, b, 0, 1, 1, 0.5).is_ok());
    }
}
