//! Iterative PMI-based motif mining over triplet-label combinations,
//! plus motif-coverage analysis.
//!
//! Mining semantics (recorded in lexicon metadata so alternates can be
//! compared): co-occurrence is image-scoped presence (an element counts
//! once per image it appears in, entity sharing is not required);
//! P(.) is Bernoulli presence, not instance counts; within-round
//! conflicts resolve by descending lift, then descending joint count,
//! then lexical order of element names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{SceneGraph, Vocab};

/// Either an atomic (head label, predicate, tail label) triplet type or
/// a reference to a previously mined motif by lexicon index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotifElement {
    Atom {
        head: usize,
        predicate: usize,
        tail: usize,
    },
    Motif(usize),
}

/// A mined motif: the two constituents it merges, the PMI lift and
/// joint image count that admitted it, its edge length, and the mining
/// round that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub a: MotifElement,
    pub b: MotifElement,
    pub lift: f64,
    pub joint_count: u64,
    pub length: u32,
    pub round: u32,
}

/// Mining choices frozen into the persisted lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningSemantics {
    pub cooccurrence: String,
    pub probability: String,
    pub conflict_order: String,
}

impl Default for MiningSemantics {
    fn default() -> Self {
        MiningSemantics {
            cooccurrence: "image-presence".to_string(),
            probability: "presence".to_string(),
            conflict_order: "lift-desc,joint-desc,name-asc".to_string(),
        }
    }
}

/// Ordered list of mined motifs with the thresholds and semantics used
/// to mine them. Motifs only reference earlier entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifLexicon {
    pub motifs: Vec<Motif>,
    pub min_count: u64,
    pub min_lift: f64,
    pub semantics: MiningSemantics,
}

impl MotifLexicon {
    pub fn new(min_count: u64, min_lift: f64) -> Self {
        MotifLexicon {
            motifs: Vec::new(),
            min_count,
            min_lift,
            semantics: MiningSemantics::default(),
        }
    }

    /// Length in edges of an element under this lexicon.
    pub fn element_length(&self, e: &MotifElement) -> u32 {
        match e {
            MotifElement::Atom { .. } => 1,
            MotifElement::Motif(i) => self.motifs[*i].length,
        }
    }

    pub fn max_length(&self) -> u32 {
        self.motifs.iter().map(|m| m.length).max().unwrap_or(1)
    }

    /// Check internal consistency: no forward references, lengths equal
    /// the sum of constituent lengths, thresholds respected.
    pub fn validate(&self) -> Result<(), String> {
        for (i, m) in self.motifs.iter().enumerate() {
            for e in [&m.a, &m.b] {
                if let MotifElement::Motif(j) = e {
                    if *j >= i {
                        return Err(format!("motif {i} references motif {j} (forward reference)"));
                    }
                }
            }
            let expected = self.element_length(&m.a) + self.element_length(&m.b);
            if m.length != expected {
                return Err(format!(
                    "motif {i} has length {} but constituents sum to {expected}",
                    m.length
                ));
            }
            if m.lift < self.min_lift {
                return Err(format!("motif {i} lift {} below threshold", m.lift));
            }
        }
        Ok(())
    }
}

/// Canonical display name of an element, used for deterministic
/// tie-breaks and pair canonicalization.
pub fn element_name(e: &MotifElement, lexicon: &MotifLexicon, vocab: &Vocab) -> String {
    match e {
        MotifElement::Atom {
            head,
            predicate,
            tail,
        } => format!(
            "({},{},{})",
            vocab.object_name(*head),
            vocab.predicate_name(*predicate),
            vocab.object_name(*tail)
        ),
        MotifElement::Motif(i) => {
            let m = &lexicon.motifs[*i];
            format!(
                "[{}+{}]",
                element_name(&m.a, lexicon, vocab),
                element_name(&m.b, lexicon, vocab)
            )
        }
    }
}

/// Render an element in plate style, e.g. `8x[flower -in-> vase]` for a
/// motif of eight identical relationships, constituents joined by " + ".
pub fn plate_notation(e: &MotifElement, lexicon: &MotifLexicon, vocab: &Vocab) -> String {
    let mut atoms: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    flatten_atoms(e, lexicon, &mut atoms);
    let mut parts: Vec<(String, u64)> = atoms
        .into_iter()
        .map(|((h, p, t), count)| {
            let desc = format!(
                "[{} \u{2014}{}\u{2192} {}]",
                vocab.object_name(h),
                vocab.predicate_name(p),
                vocab.object_name(t)
            );
            (desc, count)
        })
        .collect();
    parts.sort();
    parts
        .into_iter()
        .map(|(desc, count)| format!("{count}\u{00d7}{desc}"))
        .collect::<Vec<_>>()
        .join(" + ")
}

fn flatten_atoms(
    e: &MotifElement,
    lexicon: &MotifLexicon,
    out: &mut BTreeMap<(usize, usize, usize), u64>,
) {
    match e {
        MotifElement::Atom {
            head,
            predicate,
            tail,
        } => *out.entry((*head, *predicate, *tail)).or_insert(0) += 1,
        MotifElement::Motif(i) => {
            let m = &lexicon.motifs[*i];
            flatten_atoms(&m.a, lexicon, out);
            flatten_atoms(&m.b, lexicon, out);
        }
    }
}

/// Multiset of elements per image after greedy rewriting by lexicon
/// order: earlier-mined motifs consume their constituent instances
/// first; leftover triplets stay atomic. Each constituent instance is
/// consumed at most once.
pub fn image_element_sets(
    graphs: &[&SceneGraph],
    lexicon: &MotifLexicon,
) -> BTreeMap<String, BTreeMap<MotifElement, u64>> {
    let mut out = BTreeMap::new();
    for g in graphs {
        let mut counts: BTreeMap<MotifElement, u64> = BTreeMap::new();
        for r in &g.relations {
            let atom = MotifElement::Atom {
                head: g.labels[r.head],
                predicate: r.predicate,
                tail: g.labels[r.tail],
            };
            *counts.entry(atom).or_insert(0) += 1;
        }
        for (idx, motif) in lexicon.motifs.iter().enumerate() {
            let pairs = if motif.a == motif.b {
                counts.get(&motif.a).copied().unwrap_or(0) / 2
            } else {
                let ca = counts.get(&motif.a).copied().unwrap_or(0);
                let cb = counts.get(&motif.b).copied().unwrap_or(0);
                ca.min(cb)
            };
            if pairs == 0 {
                continue;
            }
            consume(&mut counts, &motif.a, pairs);
            consume(&mut counts, &motif.b, pairs);
            *counts.entry(MotifElement::Motif(idx)).or_insert(0) += pairs;
        }
        out.insert(g.image_id.clone(), counts);
    }
    out
}

fn consume(counts: &mut BTreeMap<MotifElement, u64>, e: &MotifElement, n: u64) {
    let c = counts.get_mut(e).expect("consuming an element that is present");
    *c -= n;
    if *c == 0 {
        counts.remove(e);
    }
}

/// Mine motifs iteratively until a round admits nothing. In each round,
/// unordered pairs of current elements are scored by PMI lift
/// P(a,b) / (P(a) P(b)) over image presence; pairs passing both the
/// occurrence and lift thresholds are accepted greedily in descending
/// lift order, skipping pairs whose constituent was already consumed
/// into a new motif this round.
pub fn mine_motifs(
    graphs: &[&SceneGraph],
    vocab: &Vocab,
    min_count: u64,
    min_lift: f64,
) -> MotifLexicon {
    assert!(min_count > 0 && min_lift > 0.0, "thresholds must be positive");
    let mut lexicon = MotifLexicon::new(min_count, min_lift);
    let n_images = graphs.len() as u64;
    if n_images == 0 {
        return lexicon;
    }

    let mut round = 1u32;
    loop {
        let sets = image_element_sets(graphs, &lexicon);

        let mut presence: BTreeMap<MotifElement, u64> = BTreeMap::new();
        let mut joint: BTreeMap<(MotifElement, MotifElement), u64> = BTreeMap::new();
        let mut names: BTreeMap<MotifElement, String> = BTreeMap::new();
        for counts in sets.values() {
            let elems: Vec<(&MotifElement, &u64)> = counts.iter().collect();
            for (e, &c) in &elems {
                *presence.entry(**e).or_insert(0) += 1;
                if c >= 2 {
                    *joint.entry((**e, **e)).or_insert(0) += 1;
                }
                names
                    .entry(**e)
                    .or_insert_with(|| element_name(e, &lexicon, vocab));
            }
            for i in 0..elems.len() {
                for j in (i + 1)..elems.len() {
                    let (a, b) = canonical_pair(*elems[i].0, *elems[j].0, &names);
                    *joint.entry((a, b)).or_insert(0) += 1;
                }
            }
        }

        struct Candidate {
            a: MotifElement,
            b: MotifElement,
            lift: f64,
            joint: u64,
        }
        let mut candidates = Vec::new();
        for ((a, b), jc) in &joint {
            let ca = presence[a];
            let cb = presence[b];
            if ca < min_count || cb < min_count {
                continue;
            }
            let lift = (*jc as f64 * n_images as f64) / (ca as f64 * cb as f64);
            if lift < min_lift {
                continue;
            }
            candidates.push(Candidate {
                a: *a,
                b: *b,
                lift,
                joint: *jc,
            });
        }
        candidates.sort_by(|x, y| {
            y.lift
                .partial_cmp(&x.lift)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(y.joint.cmp(&x.joint))
                .then_with(|| (&names[&x.a], &names[&x.b]).cmp(&(&names[&y.a], &names[&y.b])))
        });

        let mut consumed: std::collections::BTreeSet<MotifElement> = std::collections::BTreeSet::new();
        let mut accepted = Vec::new();
        for c in candidates {
            if consumed.contains(&c.a) || consumed.contains(&c.b) {
                continue;
            }
            consumed.insert(c.a);
            consumed.insert(c.b);
            accepted.push(c);
        }
        if accepted.is_empty() {
            return lexicon;
        }
        for c in accepted {
            let length = lexicon.element_length(&c.a) + lexicon.element_length(&c.b);
            lexicon.motifs.push(Motif {
                a: c.a,
                b: c.b,
                lift: c.lift,
                joint_count: c.joint,
                length,
                round,
            });
        }
        round += 1;
    }
}

fn canonical_pair(
    a: MotifElement,
    b: MotifElement,
    names: &BTreeMap<MotifElement, String>,
) -> (MotifElement, MotifElement) {
    if names[&a] <= names[&b] {
        (a, b)
    } else {
        (b, a)
    }
}

/// For each motif length L from 2 up to the longest mined motif, the
/// fraction of images containing an element of length >= L. Empty when
/// the lexicon has no motifs.
pub fn motif_coverage(
    graphs: &[&SceneGraph],
    lexicon: &MotifLexicon,
) -> Vec<(u32, f64)> {
    let max_len = lexicon.max_length();
    if max_len < 2 || graphs.is_empty() {
        return Vec::new();
    }
    let sets = image_element_sets(graphs, lexicon);
    let n_images = graphs.len() as f64;
    let mut out = Vec::new();
    for min_len in 2..=max_len {
        let covered = sets
            .values()
            .filter(|counts| {
                counts
                    .keys()
                    .any(|e| lexicon.element_length(e) >= min_len)
            })
            .count();
        out.push((min_len, covered as f64 / n_images));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BBox;
    use crate::graph::Relation;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn vocab() -> Vocab {
        Vocab::new(
            vec![
                "elephant".into(),
                "head".into(),
                "leg".into(),
                "flower".into(),
                "vase".into(),
            ],
            vec!["bg".into(), "has".into(), "in".into(), "on".into()],
        )
        .unwrap()
    }

    /// Image whose relations are the given (head label, predicate,
    /// tail label) triplet types, one entity pair per triplet.
    fn image(id: &str, triplets: &[(usize, usize, usize)]) -> SceneGraph {
        let mut boxes = Vec::new();
        let mut labels = Vec::new();
        let mut relations = Vec::new();
        for (i, &(h, p, t)) in triplets.iter().enumerate() {
            let base = (i * 30) as f64;
            boxes.push(bx(base, 0.0, base + 10.0, 10.0));
            labels.push(h);
            boxes.push(bx(base + 12.0, 0.0, base + 22.0, 10.0));
            labels.push(t);
            relations.push(Relation {
                head: 2 * i,
                tail: 2 * i + 1,
                predicate: p,
            });
        }
        SceneGraph {
            image_id: id.into(),
            width: 1000,
            height: 100,
            boxes,
            labels,
            relations,
        }
    }

    const ELEPHANT_HEAD: (usize, usize, usize) = (0, 1, 1);
    const ELEPHANT_LEG: (usize, usize, usize) = (0, 1, 2);
    const FLOWER_VASE: (usize, usize, usize) = (3, 2, 4);

    fn atom(t: (usize, usize, usize)) -> MotifElement {
        MotifElement::Atom {
            head: t.0,
            predicate: t.1,
            tail: t.2,
        }
    }

    /// 100 images with both elephant triplets, 900 with an unrelated
    /// filler triplet.
    fn elephant_corpus() -> Vec<SceneGraph> {
        let mut graphs = Vec::new();
        for i in 0..100 {
            graphs.push(image(
                &format!("pair{i:04}"),
                &[ELEPHANT_HEAD, ELEPHANT_LEG],
            ));
        }
        for i in 0..900 {
            graphs.push(image(&format!("fill{i:04}"), &[(3, 3, 4)]));
        }
        graphs
    }

    #[test]
    fn empty_lexicon_keeps_raw_triplets() {
        let g = image("a", &[ELEPHANT_HEAD, ELEPHANT_HEAD, FLOWER_VASE]);
        let lex = MotifLexicon::new(50, 10.0);
        let sets = image_element_sets(&[&g], &lex);
        let counts = &sets["a"];
        assert_eq!(counts[&atom(ELEPHANT_HEAD)], 2);
        assert_eq!(counts[&atom(FLOWER_VASE)], 1);
    }

    #[test]
    fn rewrite_consumes_constituents() {
        let g = image("a", &[ELEPHANT_HEAD, ELEPHANT_LEG]);
        let mut lex = MotifLexicon::new(50, 10.0);
        lex.motifs.push(Motif {
            a: atom(ELEPHANT_HEAD),
            b: atom(ELEPHANT_LEG),
            lift: 10.0,
            joint_count: 100,
            length: 2,
            round: 1,
        });
        let sets = image_element_sets(&[&g], &lex);
        let counts = &sets["a"];
        assert_eq!(counts.get(&MotifElement::Motif(0)), Some(&1));
        assert!(!counts.contains_key(&atom(ELEPHANT_HEAD)));
        assert!(!counts.contains_key(&atom(ELEPHANT_LEG)));
    }

    #[test]
    fn self_pair_rewrite_greedy() {
        // 2 x (flower, in, vase) + motif pairing the atom with itself
        // -> one motif instance, zero leftovers
        let g = image("a", &[FLOWER_VASE, FLOWER_VASE]);
        let mut lex = MotifLexicon::new(50, 10.0);
        lex.motifs.push(Motif {
            a: atom(FLOWER_VASE),
            b: atom(FLOWER_VASE),
            lift: 10.0,
            joint_count: 60,
            length: 2,
            round: 1,
        });
        let sets = image_element_sets(&[&g], &lex);
        let counts = &sets["a"];
        assert_eq!(counts.get(&MotifElement::Motif(0)), Some(&1));
        assert!(!counts.contains_key(&atom(FLOWER_VASE)));
    }

    #[test]
    fn mine_elephant_fixture() {
        let graphs = elephant_corpus();
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let lex = mine_motifs(&refs, &vocab(), 50, 10.0);
        lex.validate().unwrap();
        let mined: Vec<&Motif> = lex
            .motifs
            .iter()
            .filter(|m| m.a == atom(ELEPHANT_HEAD) || m.b == atom(ELEPHANT_HEAD))
            .collect();
        assert_eq!(mined.len(), 1);
        let m = mined[0];
        // presence 100 each, joint 100, N = 1000 -> lift 10
        assert!((m.lift - 10.0).abs() < 1e-12);
        assert_eq!(m.joint_count, 100);
        assert_eq!(m.length, 2);
    }

    #[test]
    fn independence_rate_yields_no_motif() {
        // two elements each in half the images, co-occurring in a
        // quarter: lift exactly 1
        let mut graphs = Vec::new();
        for i in 0..100 {
            let mut triplets = Vec::new();
            if i % 2 == 0 {
                triplets.push(ELEPHANT_HEAD);
            }
            if (i / 2) % 2 == 0 {
                triplets.push(ELEPHANT_LEG);
            }
            if triplets.is_empty() {
                triplets.push((3, 3, 4));
            }
            graphs.push(image(&format!("img{i:03}"), &triplets));
        }
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let lex = mine_motifs(&refs, &vocab(), 10, 10.0);
        assert!(lex
            .motifs
            .iter()
            .all(|m| m.a != atom(ELEPHANT_HEAD) && m.b != atom(ELEPHANT_HEAD)));
    }

    #[test]
    fn below_min_count_excluded() {
        // 49 images with both elements: perfect lift but count 49 < 50
        let mut graphs = Vec::new();
        for i in 0..49 {
            graphs.push(image(&format!("pair{i:03}"), &[ELEPHANT_HEAD, ELEPHANT_LEG]));
        }
        for i in 0..951 {
            graphs.push(image(&format!("fill{i:03}"), &[(3, 3, 4)]));
        }
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let lex = mine_motifs(&refs, &vocab(), 50, 10.0);
        assert!(lex.motifs.is_empty() || lex.motifs.iter().all(|m| m.a != atom(ELEPHANT_HEAD)));
    }

    #[test]
    fn mining_is_deterministic() {
        let graphs = elephant_corpus();
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let a = mine_motifs(&refs, &vocab(), 50, 10.0);
        let b = mine_motifs(&refs, &vocab(), 50, 10.0);
        assert_eq!(a, b);
    }

    #[test]
    fn rewriting_conserves_edge_count() {
        let graphs = elephant_corpus();
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let lex = mine_motifs(&refs, &vocab(), 50, 10.0);
        let sets = image_element_sets(&refs, &lex);
        for g in &graphs {
            let total: u64 = sets[&g.image_id]
                .iter()
                .map(|(e, c)| lex.element_length(e) as u64 * c)
                .sum();
            assert_eq!(total, g.relations.len() as u64);
        }
    }

    #[test]
    fn coverage_half_fixture() {
        let graphs = elephant_corpus();
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let lex = mine_motifs(&refs, &vocab(), 50, 10.0);
        let coverage = motif_coverage(&refs, &lex);
        let at_2 = coverage.iter().find(|(l, _)| *l == 2).unwrap().1;
        assert!((at_2 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coverage_empty_lexicon() {
        let graphs = elephant_corpus();
        let refs: Vec<&SceneGraph> = graphs.iter().collect();
        let lex = MotifLexicon::new(50, 10.0);
        assert!(motif_coverage(&refs, &lex).is_empty());
    }

    #[test]
    fn forward_reference_rejected() {
        let mut lex = MotifLexicon::new(50, 10.0);
        lex.motifs.push(Motif {
            a: MotifElement::Motif(3),
            b: atom(ELEPHANT_HEAD),
            lift: 10.0,
            joint_count: 60,
            length: 2,
            round: 1,
        });
        assert!(lex.validate().is_err());
    }

    #[test]
    fn plate_notation_renders_multiplicity() {
        let mut lex = MotifLexicon::new(50, 10.0);
        lex.motifs.push(Motif {
            a: atom(FLOWER_VASE),
            b: atom(FLOWER_VASE),
            lift: 12.0,
            joint_count: 60,
            length: 2,
            round: 1,
        });
        let s = plate_notation(&MotifElement::Motif(0), &lex, &vocab());
        assert_eq!(s, "2\u{00d7}[flower \u{2014}in\u{2192} vase]");
    }
}
