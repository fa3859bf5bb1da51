//! Fixture builders shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sg_core::graph::Relation;
use sg_core::ingest::save_graphs;
use sg_core::{BBox, SceneGraph, Vocab};

pub fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// Vocabulary used by most fixtures. Background is predicate 0.
pub fn fixture_vocab() -> Vocab {
    Vocab::new(
        vec![
            "man".into(),
            "shirt".into(),
            "dog".into(),
            "table".into(),
            "flower".into(),
            "vase".into(),
            "elephant".into(),
            "head".into(),
            "leg".into(),
        ],
        vec!["bg".into(), "wearing".into(), "has".into(), "on".into(), "in".into()],
    )
    .unwrap()
}

/// A graph with one box per label laid out side by side with a small
/// overlap between consecutive boxes.
pub fn graph(image_id: &str, labels: &[usize], relations: &[(usize, usize, usize)]) -> SceneGraph {
    let boxes = labels
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let x = (i * 8) as f64;
            bx(x, 0.0, x + 10.0, 10.0)
        })
        .collect();
    SceneGraph {
        image_id: image_id.to_string(),
        width: (labels.len() * 8 + 10) as u32,
        height: 10,
        boxes,
        labels: labels.to_vec(),
        relations: relations
            .iter()
            .map(|&(head, tail, predicate)| Relation {
                head,
                tail,
                predicate,
            })
            .collect(),
    }
}

/// 1000 single-edge (man, shirt) images: 700 wearing, 300 has.
pub fn seventy_thirty_corpus() -> Vec<SceneGraph> {
    (0..1000)
        .map(|i| {
            let predicate = if i < 700 { 1 } else { 2 };
            graph(&format!("img{i:04}"), &[0, 1], &[(0, 1, predicate)])
        })
        .collect()
}

/// 100 images with (elephant,has,head) and (elephant,has,leg), 900 with
/// an unrelated filler triplet.
pub fn elephant_corpus() -> Vec<SceneGraph> {
    let mut graphs = Vec::with_capacity(1000);
    for i in 0..100 {
        graphs.push(graph(
            &format!("ele{i:04}"),
            &[6, 7, 8],
            &[(0, 1, 2), (0, 2, 2)],
        ));
    }
    for i in 0..900 {
        graphs.push(graph(&format!("fil{i:04}"), &[2, 3], &[(0, 1, 3)]));
    }
    graphs
}

/// Write a corpus to `graphs.jsonl`, `vocab.json`, and `splits.json`
/// under `dir`, assigning every image to `split`.
pub fn write_corpus(
    dir: &Path,
    graphs: &[SceneGraph],
    vocab: &Vocab,
    split: &str,
) -> (PathBuf, PathBuf, PathBuf) {
    let graphs_path = dir.join("graphs.jsonl");
    save_graphs(&graphs_path, graphs, vocab).unwrap();

    let vocab_path = dir.join("vocab.json");
    std::fs::write(&vocab_path, serde_json::to_string(vocab).unwrap()).unwrap();

    let splits: BTreeMap<&str, &str> = graphs
        .iter()
        .map(|g| (g.image_id.as_str(), split))
        .collect();
    let splits_path = dir.join("splits.json");
    std::fs::write(&splits_path, serde_json::to_string(&splits).unwrap()).unwrap();

    (graphs_path, vocab_path, splits_path)
}
