//! Corpus-level structural-regularity analyses: supertype
//! distributions, conditional guess curves, and the overlap recall
//! ceiling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geom::boxes_overlap;
use crate::graph::{SceneGraph, Vocab, BG_INDEX};
use crate::ingest::{RelationSupertype, SupertypeMap};

/// Elements of a relation instance: the head label, the edge
/// (predicate) label, or the tail label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Head,
    Edge,
    Tail,
}

impl Element {
    pub fn name(&self) -> &'static str {
        match self {
            Element::Head => "head",
            Element::Edge => "edge",
            Element::Tail => "tail",
        }
    }
}

fn element_of(instance: &(usize, usize, usize), e: Element) -> usize {
    match e {
        Element::Head => instance.0,
        Element::Edge => instance.1,
        Element::Tail => instance.2,
    }
}

/// Relation instances of a graph as (head label, predicate, tail label).
fn instances(g: &SceneGraph) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    g.relations
        .iter()
        .map(|r| (g.labels[r.head], r.predicate, g.labels[r.tail]))
}

/// Counts of target labels conditioned on a tuple of other relation
/// elements. Built from training graphs, queried to rank guesses.
#[derive(Debug, Clone)]
pub struct ConditionalTable {
    pub target: Element,
    pub conditioning: Vec<Element>,
    counts: HashMap<Vec<usize>, HashMap<usize, u64>>,
    global: HashMap<usize, u64>,
    total: u64,
}

impl ConditionalTable {
    /// Tally target-label counts per conditioning tuple over all
    /// relation instances of the given graphs. Panics if the target is
    /// also listed as conditioning.
    pub fn build(graphs: &[&SceneGraph], target: Element, conditioning: &[Element]) -> Self {
        assert!(
            !conditioning.contains(&target),
            "target may not appear in the conditioning set"
        );
        let mut conditioning = conditioning.to_vec();
        conditioning.sort();
        conditioning.dedup();
        let mut counts: HashMap<Vec<usize>, HashMap<usize, u64>> = HashMap::new();
        let mut global: HashMap<usize, u64> = HashMap::new();
        let mut total = 0u64;
        for g in graphs {
            for inst in instances(g) {
                let tuple: Vec<usize> = conditioning.iter().map(|&e| element_of(&inst, e)).collect();
                let t = element_of(&inst, target);
                *counts.entry(tuple).or_default().entry(t).or_insert(0) += 1;
                *global.entry(t).or_insert(0) += 1;
                total += 1;
            }
        }
        ConditionalTable {
            target,
            conditioning,
            counts,
            global,
            total,
        }
    }

    pub fn tuple_count(&self, tuple: &[usize]) -> u64 {
        self.counts
            .get(tuple)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    pub fn total_instances(&self) -> u64 {
        self.total
    }

    /// Marginals are consistent by construction: the sum over targets
    /// for a tuple equals the tuple's occurrence count.
    pub fn global_count(&self, target_label: usize) -> u64 {
        self.global.get(&target_label).copied().unwrap_or(0)
    }

    /// Rank all candidate target labels for a conditioning tuple:
    /// conditional count descending, ties broken by global count
    /// descending, then by vocabulary index. Tuples unseen in training
    /// fall back to the unconditioned marginal ranking.
    pub fn ranking(&self, tuple: &[usize], num_candidates: usize) -> Vec<usize> {
        let empty = HashMap::new();
        let cond = self.counts.get(tuple).unwrap_or(&empty);
        let mut labels: Vec<usize> = candidate_labels(self.target, num_candidates);
        labels.sort_by(|&a, &b| {
            let ca = cond.get(&a).copied().unwrap_or(0);
            let cb = cond.get(&b).copied().unwrap_or(0);
            cb.cmp(&ca)
                .then_with(|| self.global_count(b).cmp(&self.global_count(a)))
                .then(a.cmp(&b))
        });
        labels
    }
}

/// Candidate label indices for a target element. Edges exclude the
/// background predicate (stored relations never carry it).
fn candidate_labels(target: Element, num_candidates: usize) -> Vec<usize> {
    match target {
        Element::Head | Element::Tail => (0..num_candidates).collect(),
        Element::Edge => (0..num_candidates).filter(|&i| i != BG_INDEX).collect(),
    }
}

/// Top-k guessing accuracy for one target element under one
/// conditioning set. Fractions are non-decreasing in k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuessCurve {
    pub target: Element,
    pub conditioning: Vec<Element>,
    /// accuracy_at_k[k - 1] = fraction of eval instances whose true
    /// label is within the top k guesses.
    pub accuracy_at_k: Vec<f64>,
    pub num_instances: u64,
}

impl GuessCurve {
    pub fn accuracy(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.accuracy_at_k.len());
        self.accuracy_at_k[k - 1]
    }
}

/// Measure how well the target element of each eval relation instance
/// can be guessed from train-set label statistics alone. Measured over
/// relation instances: each annotated relation counts once.
pub fn guess_curve(
    train: &[&SceneGraph],
    eval: &[&SceneGraph],
    vocab: &Vocab,
    target: Element,
    conditioning: &[Element],
    k_max: usize,
) -> GuessCurve {
    assert!(k_max >= 1, "k_max must be at least 1");
    let table = ConditionalTable::build(train, target, conditioning);
    let num_candidates = match target {
        Element::Head | Element::Tail => vocab.num_object_classes(),
        Element::Edge => vocab.num_predicates(),
    };

    let mut hits_at_rank = vec![0u64; k_max];
    let mut num_instances = 0u64;
    let mut rank_cache: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();

    for g in eval {
        for inst in instances(g) {
            let tuple: Vec<usize> = table
                .conditioning
                .iter()
                .map(|&e| element_of(&inst, e))
                .collect();
            let ranking = rank_cache
                .entry(tuple.clone())
                .or_insert_with(|| table.ranking(&tuple, num_candidates));
            let truth = element_of(&inst, target);
            if let Some(pos) = ranking.iter().position(|&l| l == truth) {
                if pos < k_max {
                    hits_at_rank[pos] += 1;
                }
            }
            num_instances += 1;
        }
    }

    let mut accuracy_at_k = Vec::with_capacity(k_max);
    let mut cum = 0u64;
    for &hits in &hits_at_rank {
        cum += hits;
        let frac = if num_instances == 0 {
            0.0
        } else {
            cum as f64 / num_instances as f64
        };
        accuracy_at_k.push(frac);
    }

    GuessCurve {
        target,
        conditioning: table.conditioning.clone(),
        accuracy_at_k,
        num_instances,
    }
}

/// One row of the supertype distribution table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub supertype: String,
    /// Number of vocabulary classes mapped to this supertype.
    pub classes: usize,
    /// Number of instances observed in the corpus.
    pub instances: u64,
    /// Fraction of the section's instances.
    pub fraction: f64,
}

/// Entity and relation instance distributions organized by supertype.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub entities: Vec<TypeRow>,
    pub relations: Vec<TypeRow>,
}

/// Tally entity and relation instances per supertype. Fractions sum to
/// one per section; an empty corpus yields empty sections.
pub fn type_distribution(
    graphs: &[&SceneGraph],
    vocab: &Vocab,
    supertypes: &SupertypeMap,
) -> Result<TypeDistribution, String> {
    supertypes.validate(vocab)?;

    let mut entity_counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut relation_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for g in graphs {
        for &label in &g.labels {
            let st = supertypes
                .object_supertypes
                .get(vocab.object_name(label))
                .expect("validated total map");
            *entity_counts.entry(st.as_str()).or_insert(0) += 1;
        }
        for r in &g.relations {
            let st = supertypes
                .predicate_supertypes
                .get(vocab.predicate_name(r.predicate))
                .expect("validated total map");
            *relation_counts.entry(supertype_str(*st)).or_insert(0) += 1;
        }
    }

    let mut entity_classes: BTreeMap<&str, usize> = BTreeMap::new();
    for name in vocab.object_classes() {
        let st = &supertypes.object_supertypes[name];
        *entity_classes.entry(st.as_str()).or_insert(0) += 1;
    }
    let mut relation_classes: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in vocab.predicates().iter().enumerate() {
        if i == BG_INDEX {
            continue;
        }
        let st = supertype_str(supertypes.predicate_supertypes[name]);
        *relation_classes.entry(st).or_insert(0) += 1;
    }

    Ok(TypeDistribution {
        entities: section_rows(&entity_counts, &entity_classes),
        relations: section_rows(&relation_counts, &relation_classes),
    })
}

fn supertype_str(st: RelationSupertype) -> &'static str {
    match st {
        RelationSupertype::Geometric => "geometric",
        RelationSupertype::Possessive => "possessive",
        RelationSupertype::Semantic => "semantic",
        RelationSupertype::Misc => "misc",
    }
}

fn section_rows(counts: &BTreeMap<&str, u64>, classes: &BTreeMap<&str, usize>) -> Vec<TypeRow> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Vec::new();
    }
    let mut rows: Vec<TypeRow> = counts
        .iter()
        .map(|(&st, &instances)| TypeRow {
            supertype: st.to_string(),
            classes: classes.get(st).copied().unwrap_or(0),
            instances,
            fraction: instances as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.instances.cmp(&a.instances).then(a.supertype.cmp(&b.supertype)));
    rows
}

/// Distribution over relation supertypes for each (head supertype,
/// tail supertype) cell. Cells with no instances are absent, never NaN.
#[derive(Debug, Clone)]
pub struct EdgeTypeMatrix {
    pub cells: BTreeMap<(String, String), BTreeMap<RelationSupertype, f64>>,
}

impl EdgeTypeMatrix {
    pub fn cell(&self, head: &str, tail: &str) -> Option<&BTreeMap<RelationSupertype, f64>> {
        self.cells.get(&(head.to_string(), tail.to_string()))
    }
}

pub fn edge_type_matrix(
    graphs: &[&SceneGraph],
    vocab: &Vocab,
    supertypes: &SupertypeMap,
) -> Result<EdgeTypeMatrix, String> {
    supertypes.validate(vocab)?;
    let mut counts: BTreeMap<(String, String), BTreeMap<RelationSupertype, u64>> = BTreeMap::new();
    for g in graphs {
        for r in &g.relations {
            let head_st = supertypes.object_supertypes[vocab.object_name(g.labels[r.head])].clone();
            let tail_st = supertypes.object_supertypes[vocab.object_name(g.labels[r.tail])].clone();
            let rel_st = supertypes.predicate_supertypes[vocab.predicate_name(r.predicate)];
            *counts
                .entry((head_st, tail_st))
                .or_default()
                .entry(rel_st)
                .or_insert(0) += 1;
        }
    }
    let cells = counts
        .into_iter()
        .map(|(key, dist)| {
            let total: u64 = dist.values().sum();
            let dist = dist
                .into_iter()
                .map(|(st, c)| (st, c as f64 / total as f64))
                .collect();
            (key, dist)
        })
        .collect();
    Ok(EdgeTypeMatrix { cells })
}

/// Fraction of ground-truth relations whose head and tail boxes have
/// strictly positive intersection. `None` when the corpus has no
/// relations.
pub fn overlap_recall_ceiling(graphs: &[&SceneGraph]) -> Option<f64> {
    let mut total = 0u64;
    let mut overlapping = 0u64;
    for g in graphs {
        for r in &g.relations {
            total += 1;
            if boxes_overlap(&g.boxes[r.head], &g.boxes[r.tail]) {
                overlapping += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(overlapping as f64 / total as f64)
    }
}
