//! Corpus, vocabulary, split, detection, and artifact persistence.
//!
//! File formats:
//! - `graphs.jsonl`: one JSON object per image with fields
//!   `{image_id, width, height, boxes, labels, relations}` where boxes
//!   are `[x1, y1, x2, y2]`, labels are object-class names, and
//!   relations are `[head, tail, predicate_name]` triples.
//! - `vocab.json`: `{object_classes: [...], predicates: [...]}` in
//!   canonical order; the background predicate is always index 0.
//! - `splits.json`: map from image id to `"train" | "dev" | "test"`.
//! - `detections.jsonl`: one JSON object per image,
//!   `{image_id, proposals: [{box, scores}]}` with a probability
//!   vector over object classes per proposal.
//! - frequency tables and motif lexicons: versioned JSON envelopes
//!   with integer counts and a payload checksum.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::{FrequencyTable, PredictedEntity, PredictedGraph, PredictedTriplet};
use crate::geom::BBox;
use crate::graph::{validate_graph, Relation, SceneGraph, Vocab, BG_INDEX};
use crate::motifs::MotifLexicon;

pub const FORMAT_VERSION: u32 = 1;

/// Tolerance inside which detection score vectors are renormalized to
/// sum to one; anything further off is rejected.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid JSON: {msg}")]
    Json {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: {msg}")]
    Schema {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: expected a {expected} artifact, found {found}")]
    Kind {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: checksum mismatch (file corrupted or truncated)")]
    Checksum { path: String },
    #[error("dev sample of {n} images exceeds train split size {train}")]
    DevSampleTooLarge { n: usize, train: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn schema_err(path: &Path, line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Schema {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// A loaded corpus: vocabulary, validated scene graphs, and a total
/// split assignment. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub graphs: Vec<SceneGraph>,
    split: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(
        vocab: Vocab,
        graphs: Vec<SceneGraph>,
        split: BTreeMap<String, Split>,
    ) -> Result<Self, String> {
        for g in &graphs {
            if !split.contains_key(&g.image_id) {
                return Err(format!("image {} has no split assignment", g.image_id));
            }
            let violations = validate_graph(g, &vocab);
            if !violations.is_empty() {
                return Err(format!("image {}: {}", g.image_id, violations[0]));
            }
        }
        Ok(Dataset {
            vocab,
            graphs,
            split,
        })
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.split.get(image_id).copied()
    }

    pub fn split_assignment(&self) -> &BTreeMap<String, Split> {
        &self.split
    }

    pub fn graphs_in(&self, split: Split) -> Vec<&SceneGraph> {
        self.graphs
            .iter()
            .filter(|g| self.split.get(&g.image_id) == Some(&split))
            .collect()
    }

    pub fn graph(&self, image_id: &str) -> Option<&SceneGraph> {
        self.graphs.iter().find(|g| g.image_id == image_id)
    }
}

#[derive(Deserialize)]
struct VocabFile {
    object_classes: Vec<String>,
    predicates: Vec<String>,
}

#[derive(Deserialize)]
struct GraphLine {
    image_id: String,
    width: u32,
    height: u32,
    boxes: Vec<[f64; 4]>,
    labels: Vec<String>,
    relations: Vec<(usize, usize, String)>,
}

pub fn load_vocab(path: &Path) -> Result<Vocab, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let raw: VocabFile = serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    Vocab::new(raw.object_classes, raw.predicates).map_err(|e| schema_err(path, 0, e.to_string()))
}

pub fn load_splits(path: &Path) -> Result<BTreeMap<String, Split>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Load a corpus from `graphs.jsonl` + `vocab.json` + `splits.json`.
/// Every graph is validated; malformed lines are rejected with their
/// file location.
pub fn load_dataset(
    corpus_path: &Path,
    vocab_path: &Path,
    split_path: &Path,
) -> Result<Dataset, IngestError> {
    let vocab = load_vocab(vocab_path)?;
    let split = load_splits(split_path)?;

    let file = File::open(corpus_path).map_err(|e| io_err(corpus_path, e))?;
    let reader = BufReader::new(file);
    let mut graphs = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(corpus_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: GraphLine = serde_json::from_str(&line).map_err(|e| IngestError::Json {
            path: corpus_path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let graph = graph_from_line(raw, &vocab, corpus_path, line_no)?;
        if !seen_ids.insert(graph.image_id.clone()) {
            return Err(schema_err(
                corpus_path,
                line_no,
                format!("duplicate image_id {}", graph.image_id),
            ));
        }
        if !split.contains_key(&graph.image_id) {
            return Err(schema_err(
                corpus_path,
                line_no,
                format!("image {} missing from split file", graph.image_id),
            ));
        }
        let violations = validate_graph(&graph, &vocab);
        if let Some(v) = violations.first() {
            return Err(schema_err(corpus_path, line_no, v.to_string()));
        }
        graphs.push(graph);
    }

    Ok(Dataset {
        vocab,
        graphs,
        split,
    })
}

fn graph_from_line(
    raw: GraphLine,
    vocab: &Vocab,
    path: &Path,
    line_no: usize,
) -> Result<SceneGraph, IngestError> {
    let mut boxes = Vec::with_capacity(raw.boxes.len());
    for (i, coords) in raw.boxes.iter().enumerate() {
        let b = BBox::try_from(*coords)
            .map_err(|e| schema_err(path, line_no, format!("boxes[{i}]: {e}")))?;
        boxes.push(b);
    }
    let mut labels = Vec::with_capacity(raw.labels.len());
    for (i, name) in raw.labels.iter().enumerate() {
        let idx = vocab.object_index(name).ok_or_else(|| {
            schema_err(path, line_no, format!("labels[{i}]: unknown object class {name:?}"))
        })?;
        labels.push(idx);
    }
    let mut relations = Vec::with_capacity(raw.relations.len());
    for (k, (head, tail, pred_name)) in raw.relations.iter().enumerate() {
        let predicate = vocab.predicate_index(pred_name).ok_or_else(|| {
            schema_err(
                path,
                line_no,
                format!("relations[{k}]: unknown predicate {pred_name:?}"),
            )
        })?;
        if predicate == BG_INDEX {
            return Err(schema_err(
                path,
                line_no,
                format!("relations[{k}]: the background predicate may not appear in a relation"),
            ));
        }
        relations.push(Relation {
            head: *head,
            tail: *tail,
            predicate,
        });
    }
    Ok(SceneGraph {
        image_id: raw.image_id,
        width: raw.width,
        height: raw.height,
        boxes,
        labels,
        relations,
    })
}

/// Write a corpus back to the `graphs.jsonl` format.
pub fn save_graphs(path: &Path, graphs: &[SceneGraph], vocab: &Vocab) -> Result<(), IngestError> {
    let mut out = File::create(path).map_err(|e| io_err(path, e))?;
    for g in graphs {
        let line = serde_json::json!({
            "image_id": g.image_id,
            "width": g.width,
            "height": g.height,
            "boxes": g.boxes.iter().map(|b| <[f64; 4]>::from(*b)).collect::<Vec<_>>(),
            "labels": g.labels.iter().map(|&l| vocab.object_name(l)).collect::<Vec<_>>(),
            "relations": g
                .relations
                .iter()
                .map(|r| serde_json::json!([r.head, r.tail, vocab.predicate_name(r.predicate)]))
                .collect::<Vec<_>>(),
        });
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Move `n` deterministically sampled images from the train split to
/// the dev split. Test images are untouched.
pub fn sample_dev_split(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset, IngestError> {
    let mut train_ids: Vec<&String> = dataset
        .split
        .iter()
        .filter(|(_, s)| **s == Split::Train)
        .map(|(id, _)| id)
        .collect();
    if n > train_ids.len() {
        return Err(IngestError::DevSampleTooLarge {
            n,
            train: train_ids.len(),
        });
    }
    train_ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<String> = train_ids
        .choose_multiple(&mut rng, n)
        .map(|s| (*s).clone())
        .collect();
    let mut split = dataset.split.clone();
    for id in chosen {
        split.insert(id, Split::Dev);
    }
    Ok(Dataset {
        vocab: dataset.vocab.clone(),
        graphs: dataset.graphs.clone(),
        split,
    })
}

/// One detector proposal: a box and a probability vector over object
/// classes (no background entry; proposals are pre-filtered upstream).
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub scores: Vec<f64>,
}

impl Proposal {
    /// Index and probability of the highest-scoring class (ties go to
    /// the lowest index).
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        (best, self.scores[best])
    }
}

/// A detector's output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub image_id: String,
    pub proposals: Vec<Proposal>,
}

#[derive(Deserialize)]
struct DetectionLine {
    image_id: String,
    proposals: Vec<ProposalLine>,
}

#[derive(Deserialize)]
struct ProposalLine {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    scores: Vec<f64>,
}

/// Load `detections.jsonl`. Score vectors within [`SCORE_SUM_TOLERANCE`]
/// of summing to one are renormalized; anything further off is an error.
pub fn load_detections(
    path: &Path,
    vocab: &Vocab,
) -> Result<BTreeMap<String, DetectionSet>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: DetectionLine = serde_json::from_str(&line).map_err(|e| IngestError::Json {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let mut proposals = Vec::with_capacity(raw.proposals.len());
        for (i, p) in raw.proposals.into_iter().enumerate() {
            let bbox = BBox::try_from(p.bbox)
                .map_err(|e| schema_err(path, line_no, format!("proposals[{i}].box: {e}")))?;
            if p.scores.len() != vocab.num_object_classes() {
                return Err(schema_err(
                    path,
                    line_no,
                    format!(
                        "proposals[{i}]: score vector has length {}, expected {}",
                        p.scores.len(),
                        vocab.num_object_classes()
                    ),
                ));
            }
            if let Some(j) = p.scores.iter().position(|s| *s < 0.0 || !s.is_finite()) {
                return Err(schema_err(
                    path,
                    line_no,
                    format!("proposals[{i}].scores[{j}]: negative or non-finite score"),
                ));
            }
            let sum: f64 = p.scores.iter().sum();
            if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
                return Err(schema_err(
                    path,
                    line_no,
                    format!("proposals[{i}]: scores sum to {sum}, outside tolerance of 1"),
                ));
            }
            let scores = p.scores.iter().map(|s| s / sum).collect();
            proposals.push(Proposal { bbox, scores });
        }
        let set = DetectionSet {
            image_id: raw.image_id.clone(),
            proposals,
        };
        if out.insert(raw.image_id.clone(), set).is_some() {
            return Err(schema_err(
                path,
                line_no,
                format!("duplicate image_id {}", raw.image_id),
            ));
        }
    }
    Ok(out)
}

/// Relation supertypes as used in the corpus-level statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationSupertype {
    Geometric,
    Possessive,
    Semantic,
    Misc,
}

impl std::fmt::Display for RelationSupertype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RelationSupertype::Geometric => "geometric",
            RelationSupertype::Possessive => "possessive",
            RelationSupertype::Semantic => "semantic",
            RelationSupertype::Misc => "misc",
        };
        f.write_str(s)
    }
}

/// User-supplied mapping from vocabulary entries to supertypes. Must be
/// total over the vocabulary (background excluded for predicates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupertypeMap {
    pub object_supertypes: BTreeMap<String, String>,
    pub predicate_supertypes: BTreeMap<String, RelationSupertype>,
}

impl SupertypeMap {
    pub fn validate(&self, vocab: &Vocab) -> Result<(), String> {
        for name in vocab.object_classes() {
            if !self.object_supertypes.contains_key(name) {
                return Err(format!("object class {name:?} has no supertype"));
            }
        }
        for (i, name) in vocab.predicates().iter().enumerate() {
            if i == BG_INDEX {
                continue;
            }
            if !self.predicate_supertypes.contains_key(name) {
                return Err(format!("predicate {name:?} has no supertype"));
            }
        }
        Ok(())
    }
}

pub fn load_supertype_map(path: &Path, vocab: &Vocab) -> Result<SupertypeMap, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let map: SupertypeMap = serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    map.validate(vocab)
        .map_err(|msg| schema_err(path, 0, msg))?;
    Ok(map)
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    kind: String,
    checksum: String,
    payload: serde_json::Value,
}

fn payload_checksum(payload: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(payload).expect("payload serialization cannot fail");
    let digest = Sha256::digest(canonical.as_bytes());
    format!("{digest:x}")
}

fn save_artifact<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<(), IngestError> {
    let payload = serde_json::to_value(value).expect("payload serialization cannot fail");
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        checksum: payload_checksum(&payload),
        payload,
    };
    let text = serde_json::to_string(&envelope).expect("envelope serialization cannot fail");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let envelope: Envelope = serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(IngestError::Version {
            path: path.display().to_string(),
            found: envelope.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if envelope.kind != kind {
        return Err(IngestError::Kind {
            path: path.display().to_string(),
            expected: kind.to_string(),
            found: envelope.kind,
        });
    }
    if payload_checksum(&envelope.payload) != envelope.checksum {
        return Err(IngestError::Checksum {
            path: path.display().to_string(),
        });
    }
    serde_json::from_value(envelope.payload).map_err(|e| IngestError::Json {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })
}

pub fn save_frequency_table(path: &Path, table: &FrequencyTable) -> Result<(), IngestError> {
    save_artifact(path, "frequency_table", table)
}

pub fn load_frequency_table(path: &Path) -> Result<FrequencyTable, IngestError> {
    load_artifact(path, "frequency_table")
}

pub fn save_motif_lexicon(path: &Path, lexicon: &MotifLexicon) -> Result<(), IngestError> {
    save_artifact(path, "motif_lexicon", lexicon)
}

pub fn load_motif_lexicon(path: &Path) -> Result<MotifLexicon, IngestError> {
    load_artifact(path, "motif_lexicon")
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    image_id: String,
    entities: Vec<PredictionEntityLine>,
    triplets: Vec<PredictionTripletLine>,
}

#[derive(Serialize, Deserialize)]
struct PredictionEntityLine {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    label: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictionTripletLine {
    head: usize,
    tail: usize,
    predicate: String,
    score: f64,
}

/// Persist predicted graphs as JSONL, one image per line, in the order
/// given. This is the input contract for evaluation, so third-party
/// predictors can be scored by writing the same format.
pub fn save_predictions(
    path: &Path,
    predictions: &[PredictedGraph],
    vocab: &Vocab,
) -> Result<(), IngestError> {
    let mut out = File::create(path).map_err(|e| io_err(path, e))?;
    for p in predictions {
        let line = PredictionLine {
            image_id: p.image_id.clone(),
            entities: p
                .entities
                .iter()
                .map(|e| PredictionEntityLine {
                    bbox: e.bbox.into(),
                    label: vocab.object_name(e.label).to_string(),
                    score: e.score,
                })
                .collect(),
            triplets: p
                .triplets
                .iter()
                .map(|t| PredictionTripletLine {
                    head: t.head,
                    tail: t.tail,
                    predicate: vocab.predicate_name(t.predicate).to_string(),
                    score: t.score,
                })
                .collect(),
        };
        let text = serde_json::to_string(&line).expect("prediction serialization cannot fail");
        writeln!(out, "{text}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn load_predictions(
    path: &Path,
    vocab: &Vocab,
) -> Result<BTreeMap<String, PredictedGraph>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PredictionLine = serde_json::from_str(&line).map_err(|e| IngestError::Json {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let mut entities = Vec::with_capacity(raw.entities.len());
        for (i, e) in raw.entities.iter().enumerate() {
            let bbox = BBox::try_from(e.bbox)
                .map_err(|err| schema_err(path, line_no, format!("entities[{i}].box: {err}")))?;
            let label = vocab.object_index(&e.label).ok_or_else(|| {
                schema_err(
                    path,
                    line_no,
                    format!("entities[{i}]: unknown object class {:?}", e.label),
                )
            })?;
            entities.push(PredictedEntity {
                bbox,
                label,
                score: e.score,
            });
        }
        let mut triplets = Vec::with_capacity(raw.triplets.len());
        for (i, t) in raw.triplets.iter().enumerate() {
            let predicate = vocab.predicate_index(&t.predicate).ok_or_else(|| {
                schema_err(
                    path,
                    line_no,
                    format!("triplets[{i}]: unknown predicate {:?}", t.predicate),
                )
            })?;
            if predicate == BG_INDEX {
                return Err(schema_err(
                    path,
                    line_no,
                    format!("triplets[{i}]: background predicate may not be predicted"),
                ));
            }
            if t.head >= entities.len() || t.tail >= entities.len() {
                return Err(schema_err(
                    path,
                    line_no,
                    format!("triplets[{i}]: entity index out of range"),
                ));
            }
            triplets.push(PredictedTriplet {
                head: t.head,
                tail: t.tail,
                predicate,
                score: t.score,
            });
        }
        let pg = PredictedGraph {
            image_id: raw.image_id.clone(),
            entities,
            triplets,
        };
        if out.insert(raw.image_id.clone(), pg).is_some() {
            return Err(schema_err(
                path,
                line_no,
                format!("duplicate image_id {}", raw.image_id),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::build_frequency_table;
    use tempfile::TempDir;

    fn vocab() -> Vocab {
        Vocab::new(
            vec!["man".into(), "shirt".into(), "dog".into()],
            vec!["bg".into(), "wearing".into(), "has".into()],
        )
        .unwrap()
    }

    fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn fixture_files(dir: &TempDir) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let graphs = write(
            dir,
            "graphs.jsonl",
            concat!(
                r#"{"image_id":"a","width":100,"height":100,"boxes":[[0,0,10,10],[5,5,15,15]],"labels":["man","shirt"],"relations":[[0,1,"wearing"]]}"#,
                "\n",
                r#"{"image_id":"b","width":50,"height":50,"boxes":[[0,0,5,5]],"labels":["dog"],"relations":[]}"#,
                "\n",
            ),
        );
        let vocab = write(
            dir,
            "vocab.json",
            r#"{"object_classes":["man","shirt","dog"],"predicates":["bg","wearing","has"]}"#,
        );
        let splits = write(dir, "splits.json", r#"{"a":"train","b":"test"}"#);
        (graphs, vocab, splits)
    }

    #[test]
    fn load_dataset_round_trip() {
        let dir = TempDir::new().unwrap();
        let (graphs, vocab_path, splits) = fixture_files(&dir);
        let ds = load_dataset(&graphs, &vocab_path, &splits).unwrap();
        assert_eq!(ds.graphs.len(), 2);
        assert_eq!(ds.split_of("a"), Some(Split::Train));
        assert_eq!(ds.split_of("b"), Some(Split::Test));
        let a = ds.graph("a").unwrap();
        assert_eq!(a.labels, vec![0, 1]);
        assert_eq!(a.relations[0].predicate, 1);
        assert_eq!(ds.graphs_in(Split::Train).len(), 1);

        // writing back and reloading reproduces the same graphs
        let out = dir.path().join("roundtrip.jsonl");
        save_graphs(&out, &ds.graphs, &ds.vocab).unwrap();
        let ds2 = load_dataset(&out, &vocab_path, &splits).unwrap();
        assert_eq!(ds2.graphs, ds.graphs);
    }

    #[test]
    fn bg_predicate_in_relation_rejected() {
        let dir = TempDir::new().unwrap();
        let (_, vocab_path, splits) = fixture_files(&dir);
        let graphs = write(
            &dir,
            "bad.jsonl",
            concat!(
                r#"{"image_id":"a","width":10,"height":10,"boxes":[[0,0,5,5],[1,1,6,6]],"labels":["man","shirt"],"relations":[[0,1,"bg"]]}"#,
                "\n"
            ),
        );
        let err = load_dataset(&graphs, &vocab_path, &splits).unwrap_err();
        assert!(err.to_string().contains("background predicate"), "{err}");
    }

    #[test]
    fn duplicate_image_id_rejected() {
        let dir = TempDir::new().unwrap();
        let (_, vocab_path, splits) = fixture_files(&dir);
        let line = r#"{"image_id":"a","width":10,"height":10,"boxes":[],"labels":[],"relations":[]}"#;
        let graphs = write(&dir, "dup.jsonl", &format!("{line}\n{line}\n"));
        let err = load_dataset(&graphs, &vocab_path, &splits).unwrap_err();
        assert!(err.to_string().contains("duplicate image_id"), "{err}");
    }

    #[test]
    fn missing_split_entry_rejected() {
        let dir = TempDir::new().unwrap();
        let (graphs, vocab_path, _) = fixture_files(&dir);
        let splits = write(&dir, "partial.json", r#"{"a":"train"}"#);
        let err = load_dataset(&graphs, &vocab_path, &splits).unwrap_err();
        assert!(err.to_string().contains("missing from split file"), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = TempDir::new().unwrap();
        let (_, vocab_path, splits) = fixture_files(&dir);
        let graphs = write(
            &dir,
            "bad.jsonl",
            concat!(
                r#"{"image_id":"a","width":10,"height":10,"boxes":[],"labels":[],"relations":[]}"#,
                "\n",
                "{not json\n"
            ),
        );
        let err = load_dataset(&graphs, &vocab_path, &splits).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    fn many_train_split(n: usize) -> Dataset {
        let vocab = vocab();
        let mut split = BTreeMap::new();
        for i in 0..n {
            split.insert(format!("img{i:03}"), Split::Train);
        }
        Dataset::new(vocab, vec![], split).unwrap()
    }

    #[test]
    fn sample_dev_is_deterministic() {
        let ds = many_train_split(20);
        let a = sample_dev_split(&ds, 5, 7).unwrap();
        let b = sample_dev_split(&ds, 5, 7).unwrap();
        assert_eq!(a.split_assignment(), b.split_assignment());
        let dev_count = a
            .split_assignment()
            .values()
            .filter(|s| **s == Split::Dev)
            .count();
        assert_eq!(dev_count, 5);

        let c = sample_dev_split(&ds, 5, 8).unwrap();
        assert_ne!(a.split_assignment(), c.split_assignment());
    }

    #[test]
    fn sample_dev_boundaries() {
        let ds = many_train_split(3);
        let zero = sample_dev_split(&ds, 0, 1).unwrap();
        assert_eq!(zero.split_assignment(), ds.split_assignment());
        let all = sample_dev_split(&ds, 3, 1).unwrap();
        assert!(all
            .split_assignment()
            .values()
            .all(|s| *s == Split::Dev));
        assert!(matches!(
            sample_dev_split(&ds, 4, 1),
            Err(IngestError::DevSampleTooLarge { .. })
        ));
    }

    #[test]
    fn detections_renormalized_within_tolerance() {
        let dir = TempDir::new().unwrap();
        let path = write(
            &dir,
            "det.jsonl",
            concat!(
                r#"{"image_id":"a","proposals":[{"box":[0,0,10,10],"scores":[0.5,0.3,0.2005]}]}"#,
                "\n"
            ),
        );
        let dets = load_detections(&path, &vocab()).unwrap();
        let scores = &dets["a"].proposals[0].scores;
        assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(dets["a"].proposals[0].argmax().0, 0);
    }

    #[test]
    fn detections_rejected_outside_tolerance() {
        let dir = TempDir::new().unwrap();
        let path = write(
            &dir,
            "det.jsonl",
            concat!(
                r#"{"image_id":"a","proposals":[{"box":[0,0,10,10],"scores":[0.5,0.3,0.3]}]}"#,
                "\n"
            ),
        );
        let err = load_detections(&path, &vocab()).unwrap_err();
        assert!(err.to_string().contains("outside tolerance"), "{err}");
    }

    #[test]
    fn detections_length_and_sign_checked() {
        let dir = TempDir::new().unwrap();
        let short = write(
            &dir,
            "short.jsonl",
            concat!(r#"{"image_id":"a","proposals":[{"box":[0,0,10,10],"scores":[1.0]}]}"#, "\n"),
        );
        assert!(load_detections(&short, &vocab())
            .unwrap_err()
            .to_string()
            .contains("length"));
        let neg = write(
            &dir,
            "neg.jsonl",
            concat!(
                r#"{"image_id":"a","proposals":[{"box":[0,0,10,10],"scores":[1.2,-0.1,-0.1]}]}"#,
                "\n"
            ),
        );
        assert!(load_detections(&neg, &vocab())
            .unwrap_err()
            .to_string()
            .contains("negative or non-finite"));
    }

    #[test]
    fn empty_detection_file_loads_empty() {
        let dir = TempDir::new().unwrap();
        let path = write(&dir, "det.jsonl", "");
        assert!(load_detections(&path, &vocab()).unwrap().is_empty());
    }

    fn sample_table() -> FrequencyTable {
        let g = SceneGraph {
            image_id: "a".into(),
            width: 10,
            height: 10,
            boxes: vec![
                BBox::new(0.0, 0.0, 5.0, 5.0).unwrap(),
                BBox::new(1.0, 1.0, 6.0, 6.0).unwrap(),
            ],
            labels: vec![0, 1],
            relations: vec![Relation {
                head: 0,
                tail: 1,
                predicate: 1,
            }],
        };
        build_frequency_table(&[&g], 3)
    }

    #[test]
    fn frequency_table_round_trip_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("freq.json");
        let table = sample_table();
        save_frequency_table(&path, &table).unwrap();
        let loaded = load_frequency_table(&path).unwrap();
        assert_eq!(loaded, table);
    }

    #[test]
    fn empty_frequency_table_round_trips() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("freq.json");
        let table = FrequencyTable::new(3);
        save_frequency_table(&path, &table).unwrap();
        assert_eq!(load_frequency_table(&path).unwrap(), table);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("freq.json");
        save_frequency_table(&path, &sample_table()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // flip a count inside the payload without touching the checksum
        let corrupted = text.replace("\"num_predicates\":3", "\"num_predicates\":4");
        assert_ne!(corrupted, text);
        std::fs::write(&path, corrupted).unwrap();
        assert!(matches!(
            load_frequency_table(&path),
            Err(IngestError::Checksum { .. })
        ));
    }

    #[test]
    fn version_and_kind_mismatch_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("freq.json");
        save_frequency_table(&path, &sample_table()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let versioned = text.replace("\"format_version\":1", "\"format_version\":2");
        let vpath = dir.path().join("v2.json");
        std::fs::write(&vpath, versioned).unwrap();
        assert!(matches!(
            load_frequency_table(&vpath),
            Err(IngestError::Version { found: 2, .. })
        ));

        assert!(matches!(
            load_motif_lexicon(&path),
            Err(IngestError::Kind { .. })
        ));
    }

    #[test]
    fn supertype_map_must_be_total() {
        let map = SupertypeMap {
            object_supertypes: [("man".to_string(), "person".to_string())]
                .into_iter()
                .collect(),
            predicate_supertypes: [
                ("wearing".to_string(), RelationSupertype::Possessive),
                ("has".to_string(), RelationSupertype::Possessive),
            ]
            .into_iter()
            .collect(),
        };
        // missing object classes "shirt" and "dog"
        assert!(map.validate(&vocab()).is_err());

        let mut full = map.clone();
        for name in ["shirt", "dog"] {
            full.object_supertypes
                .insert(name.to_string(), "clothing".to_string());
        }
        // bg predicate needs no supertype entry
        assert!(full.validate(&vocab()).is_ok());
    }

    #[test]
    fn predictions_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("pred.jsonl");
        let pg = PredictedGraph {
            image_id: "a".into(),
            entities: vec![
                PredictedEntity {
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                    label: 0,
                    score: 0.9,
                },
                PredictedEntity {
                    bbox: BBox::new(5.0, 5.0, 15.0, 15.0).unwrap(),
                    label: 1,
                    score: 0.8,
                },
            ],
            triplets: vec![PredictedTriplet {
                head: 0,
                tail: 1,
                predicate: 1,
                score: 0.72,
            }],
        };
        save_predictions(&path, std::slice::from_ref(&pg), &vocab()).unwrap();
        let loaded = load_predictions(&path, &vocab()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded["a"], pg);
    }

    #[test]
    fn predictions_reject_bg_and_bad_indices() {
        let dir = TempDir::new().unwrap();
        let voc = vocab();
        let bg = write(
            &dir,
            "bg.jsonl",
            concat!(
                r#"{"image_id":"a","entities":[{"box":[0,0,1,1],"label":"man","score":1.0},{"box":[0,0,2,2],"label":"shirt","score":1.0}],"triplets":[{"head":0,"tail":1,"predicate":"bg","score":0.5}]}"#,
                "\n"
            ),
        );
        assert!(load_predictions(&bg, &voc)
            .unwrap_err()
            .to_string()
            .contains("background predicate"));
        let oob = write(
            &dir,
            "oob.jsonl",
            concat!(
                r#"{"image_id":"a","entities":[{"box":[0,0,1,1],"label":"man","score":1.0}],"triplets":[{"head":0,"tail":5,"predicate":"wearing","score":0.5}]}"#,
                "\n"
            ),
        );
        assert!(load_predictions(&oob, &voc)
            .unwrap_err()
            .to_string()
            .contains("out of range"));
    }
}
