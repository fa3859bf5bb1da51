//! `sg`: command-line toolkit for scene-graph corpora.
//!
//! Subcommands cover the pipeline end to end: `validate` checks a
//! corpus, `stats` emits structural-regularity tables, `mine` extracts
//! motifs, `build-freq` fits the frequency table, `predict` runs the
//! frequency predictors, and `eval` scores prediction files.
//!
//! Exit codes: 0 success, 2 bad flags (clap), 3 schema/input errors,
//! 4 internal invariant breach.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use sg_core::baseline::{
    build_frequency_table, order_rois, predict, PredictConfig, PredictInput, PredictMode,
    PredictedGraph, RoiOrder,
};
use sg_core::eval::{evaluate_corpus, mean_recall, EvalConfig, EvalMode, EvalReport, ModeResult};
use sg_core::ingest::{
    load_dataset, load_detections, load_frequency_table, load_predictions, load_supertype_map,
    save_frequency_table, save_motif_lexicon, save_predictions, Dataset, DetectionSet, Split,
};
use sg_core::motifs::{mine_motifs, motif_coverage, plate_notation, MotifElement};
use sg_core::stats::{
    edge_type_matrix, guess_curve, overlap_recall_ceiling, type_distribution, Element,
};
use sg_core::SceneGraph;

const EXIT_SCHEMA: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

/// Errors carrying their process exit code.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn schema(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_SCHEMA,
            message: message.into(),
        }
    }

    fn invariant(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVARIANT,
            message: message.into(),
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::schema(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "sg", version, about = "Scene-graph corpus toolkit")]
struct Cli {
    /// Seed for every random choice made by any subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-image parallelism (0 = all cores).
    /// Output ordering does not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// Scene-graph corpus, one JSON object per line.
    #[arg(long)]
    graphs: PathBuf,
    /// Vocabulary file with object classes and predicates.
    #[arg(long)]
    vocab: PathBuf,
    /// Split assignment file mapping image ids to train/dev/test.
    #[arg(long)]
    splits: PathBuf,
}

impl CorpusArgs {
    fn load(&self) -> CliResult<Dataset> {
        Ok(load_dataset(&self.graphs, &self.vocab, &self.splits)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

impl SplitArg {
    fn select<'a>(&self, dataset: &'a Dataset) -> Vec<&'a SceneGraph> {
        match self {
            SplitArg::Train => dataset.graphs_in(Split::Train),
            SplitArg::Dev => dataset.graphs_in(Split::Dev),
            SplitArg::Test => dataset.graphs_in(Split::Test),
            SplitArg::All => dataset.graphs.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Predcls,
    Sgcls,
    Sgdet,
    Phrdet,
    Preddet,
}

impl ModeArg {
    fn eval_mode(&self) -> EvalMode {
        match self {
            ModeArg::Predcls => EvalMode::PredCls,
            ModeArg::Sgcls => EvalMode::SgCls,
            ModeArg::Sgdet => EvalMode::SgDet,
            ModeArg::Phrdet => EvalMode::PhrDet,
            ModeArg::Preddet => EvalMode::PredDet,
        }
    }
}

fn parse_eval_mode(name: &str) -> CliResult<EvalMode> {
    match name {
        "predcls" => Ok(EvalMode::PredCls),
        "sgcls" => Ok(EvalMode::SgCls),
        "sgdet" => Ok(EvalMode::SgDet),
        "phrdet" => Ok(EvalMode::PhrDet),
        "preddet" => Ok(EvalMode::PredDet),
        other => Err(CliError::schema(format!("unknown eval mode {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoiOrderArg {
    LeftRight,
    Confidence,
    Size,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and print per-split summary counts.
    Validate {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Emit structural-regularity tables: type distributions, the edge
    /// supertype matrix, guess curves, and the overlap recall ceiling.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Supertype mapping; enables the distribution tables.
        #[arg(long)]
        supertypes: Option<PathBuf>,
        /// Split measured by the curves and tables.
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Largest k on the guess curves.
        #[arg(long, default_value_t = 100)]
        k_max: usize,
        /// Output directory for TSV/CSV files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine recurring motifs by PMI lift and write the lexicon.
    Mine {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Minimum per-element image count.
        #[arg(long, default_value_t = 50)]
        min_count: u64,
        /// Minimum PMI lift.
        #[arg(long, default_value_t = 10.0)]
        min_lift: f64,
        /// Lexicon output path.
        #[arg(long)]
        out: PathBuf,
        /// Print mined motifs in plate notation with coverage.
        #[arg(long)]
        pretty: bool,
    },
    /// Build the predicate frequency table from the train split.
    BuildFreq {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Table output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the frequency predictor and write predictions as JSONL.
    Predict {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Frequency table produced by build-freq.
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Detection file; required for sgcls and sgdet.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Drop pairs whose boxes do not overlap (Freq-Overlap).
        #[arg(long)]
        overlap: bool,
        /// Emit every predicate per pair instead of only the best.
        #[arg(long)]
        no_constraints: bool,
        #[arg(long, default_value_t = 100)]
        k_max: usize,
        /// Per-class NMS IoU threshold (sgdet only).
        #[arg(long, default_value_t = 0.3)]
        nms_iou: f64,
        /// Score triplets by predicate probability alone.
        #[arg(long)]
        no_entity_scores: bool,
        /// Rescale non-background probabilities by the non-background mass.
        #[arg(long)]
        rescale_bg: bool,
        /// Reorder detector proposals before prediction.
        #[arg(long, value_enum)]
        roi_order: Option<RoiOrderArg>,
        /// Prediction output path (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files with recall@K.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Prediction file; either `mode=path` or a bare path together
        /// with --mode. Repeat for a multi-mode report.
        #[arg(long, required = true)]
        pred: Vec<String>,
        /// Mode for bare --pred paths.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Comma-separated recall thresholds.
        #[arg(long, default_value = "20,50,100", value_delimiter = ',')]
        k: Vec<usize>,
        /// Box-match IoU threshold.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Evaluate without the one-predicate-per-pair constraint.
        #[arg(long)]
        no_constraints: bool,
        /// Report output path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also print the report as a fixed-width table.
        #[arg(long)]
        pretty: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.jobs == 0 { num_threads() } else { cli.jobs };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("sg: {e}");
        return ExitCode::from(EXIT_INVARIANT);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sg: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn num_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { corpus } => cmd_validate(&corpus),
        Command::Stats {
            corpus,
            supertypes,
            split,
            k_max,
            out,
        } => cmd_stats(&corpus, supertypes.as_deref(), split, k_max, &out),
        Command::Mine {
            corpus,
            split,
            min_count,
            min_lift,
            out,
            pretty,
        } => cmd_mine(&corpus, split, min_count, min_lift, &out, pretty),
        Command::BuildFreq { corpus, split, out } => cmd_build_freq(&corpus, split, &out),
        Command::Predict {
            corpus,
            table,
            mode,
            detections,
            split,
            overlap,
            no_constraints,
            k_max,
            nms_iou,
            no_entity_scores,
            rescale_bg,
            roi_order,
            out,
        } => {
            let cfg = PredictConfig {
                use_overlap: overlap,
                use_constraints: !no_constraints,
                k_max,
                nms_iou,
                use_entity_scores: !no_entity_scores,
                rescale_bg,
            };
            cmd_predict(
                &corpus,
                &table,
                mode,
                detections.as_deref(),
                split,
                &cfg,
                roi_order,
                cli.seed,
                &out,
            )
        }
        Command::Eval {
            corpus,
            pred,
            mode,
            split,
            k,
            iou,
            no_constraints,
            out,
            pretty,
        } => cmd_eval(
            &corpus,
            &pred,
            mode,
            split,
            &k,
            iou,
            !no_constraints,
            &out,
            pretty,
        ),
    }
}

fn cmd_validate(corpus: &CorpusArgs) -> CliResult<()> {
    let dataset = corpus.load()?;
    let mut per_split: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for g in &dataset.graphs {
        let split = match dataset.split_of(&g.image_id) {
            Some(Split::Train) => "train",
            Some(Split::Dev) => "dev",
            Some(Split::Test) => "test",
            None => unreachable!("dataset loading requires a total split"),
        };
        let entry = per_split.entry(split).or_insert((0, 0, 0));
        entry.0 += 1;
        entry.1 += g.labels.len();
        entry.2 += g.relations.len();
    }
    println!("split\timages\tentities\trelations");
    for (split, (images, entities, relations)) in per_split {
        println!("{split}\t{images}\t{entities}\t{relations}");
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::schema(format!("{}: {e}", path.display())))
}

fn fmt_fraction(v: f64) -> String {
    format!("{v:.6}")
}

fn cmd_stats(
    corpus: &CorpusArgs,
    supertypes: Option<&Path>,
    split: SplitArg,
    k_max: usize,
    out: &Path,
) -> CliResult<()> {
    if k_max == 0 {
        return Err(CliError::schema("--k-max must be at least 1"));
    }
    let dataset = corpus.load()?;
    let graphs = split.select(&dataset);
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::schema(format!("{}: {e}", out.display())))?;

    let mut summary = String::from("metric\tvalue\n");
    writeln!(summary, "images\t{}", graphs.len()).unwrap();
    let relations: usize = graphs.iter().map(|g| g.relations.len()).sum();
    writeln!(summary, "relations\t{relations}").unwrap();
    match overlap_recall_ceiling(&graphs) {
        Some(f) => writeln!(summary, "overlap_recall_ceiling\t{}", fmt_fraction(f)).unwrap(),
        None => writeln!(summary, "overlap_recall_ceiling\tna").unwrap(),
    }
    write_file(&out.join("summary.tsv"), &summary)?;

    if let Some(st_path) = supertypes {
        let map = load_supertype_map(st_path, &dataset.vocab)?;
        let dist = type_distribution(&graphs, &dataset.vocab, &map).map_err(CliError::schema)?;
        let mut text = String::from("section\tsupertype\tclasses\tinstances\tfraction\n");
        for (section, rows) in [("entities", &dist.entities), ("relations", &dist.relations)] {
            for row in rows {
                writeln!(
                    text,
                    "{section}\t{}\t{}\t{}\t{}",
                    row.supertype,
                    row.classes,
                    row.instances,
                    fmt_fraction(row.fraction)
                )
                .unwrap();
            }
        }
        write_file(&out.join("type_distribution.tsv"), &text)?;

        let matrix =
            edge_type_matrix(&graphs, &dataset.vocab, &map).map_err(CliError::schema)?;
        let mut text = String::from("head\ttail\tsupertype\tfraction\n");
        for ((head, tail), dist) in &matrix.cells {
            for (st, frac) in dist {
                writeln!(text, "{head}\t{tail}\t{st}\t{}", fmt_fraction(*frac)).unwrap();
            }
        }
        write_file(&out.join("edge_type_matrix.tsv"), &text)?;
    }

    // one curve per target: conditioned on the other two elements, and
    // the unconditioned marginal for comparison
    let combos: [(Element, &[Element]); 6] = [
        (Element::Edge, &[Element::Head, Element::Tail]),
        (Element::Edge, &[]),
        (Element::Head, &[Element::Edge, Element::Tail]),
        (Element::Head, &[]),
        (Element::Tail, &[Element::Head, Element::Edge]),
        (Element::Tail, &[]),
    ];
    for (target, conditioning) in combos {
        let curve = guess_curve(&graphs, &graphs, &dataset.vocab, target, conditioning, k_max);
        let mut text = String::from("# measured over relation instances\nk,fraction\n");
        for (i, frac) in curve.accuracy_at_k.iter().enumerate() {
            writeln!(text, "{},{}", i + 1, fmt_fraction(*frac)).unwrap();
        }
        let cond_name = if conditioning.is_empty() {
            "marginal".to_string()
        } else {
            conditioning
                .iter()
                .map(|e| e.name())
                .collect::<Vec<_>>()
                .join("_")
        };
        let name = format!("guess_{}_given_{}.csv", target.name(), cond_name);
        write_file(&out.join(name), &text)?;
    }
    Ok(())
}

fn cmd_mine(
    corpus: &CorpusArgs,
    split: SplitArg,
    min_count: u64,
    min_lift: f64,
    out: &Path,
    pretty: bool,
) -> CliResult<()> {
    if min_count == 0 || !min_lift.is_finite() || min_lift <= 0.0 {
        return Err(CliError::schema("mining thresholds must be positive"));
    }
    let dataset = corpus.load()?;
    let graphs = split.select(&dataset);
    let lexicon = mine_motifs(&graphs, &dataset.vocab, min_count, min_lift);
    lexicon.validate().map_err(CliError::invariant)?;
    save_motif_lexicon(out, &lexicon)?;

    if pretty {
        for (i, m) in lexicon.motifs.iter().enumerate() {
            let element = MotifElement::Motif(i);
            println!(
                "{}  lift={:.2} count={} round={}",
                plate_notation(&element, &lexicon, &dataset.vocab),
                m.lift,
                m.joint_count,
                m.round
            );
        }
        for (min_len, frac) in motif_coverage(&graphs, &lexicon) {
            println!("coverage L>={min_len}: {}", fmt_fraction(frac));
        }
    } else {
        println!("mined {} motifs", lexicon.motifs.len());
    }
    Ok(())
}

fn cmd_build_freq(corpus: &CorpusArgs, split: SplitArg, out: &Path) -> CliResult<()> {
    let dataset = corpus.load()?;
    let graphs = split.select(&dataset);
    let table = build_frequency_table(&graphs, dataset.vocab.num_predicates());
    for (&(head, tail), _) in table.pairs() {
        let probs = table.probabilities(head, tail);
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CliError::invariant(format!(
                "pair ({head}, {tail}) probabilities sum to {sum}"
            )));
        }
    }
    save_frequency_table(out, &table)?;
    println!("built table over {} object pairs", table.pairs().count());
    Ok(())
}

fn reorder_detections(dets: &DetectionSet, order: RoiOrderArg, seed: u64) -> DetectionSet {
    let strategy = match order {
        RoiOrderArg::LeftRight => RoiOrder::LeftRight,
        RoiOrderArg::Confidence => RoiOrder::Confidence,
        RoiOrderArg::Size => RoiOrder::Size,
        RoiOrderArg::Random => RoiOrder::Random { seed },
    };
    let perm = order_rois(dets, strategy);
    DetectionSet {
        image_id: dets.image_id.clone(),
        proposals: perm.iter().map(|&i| dets.proposals[i].clone()).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    corpus: &CorpusArgs,
    table_path: &Path,
    mode: ModeArg,
    detections: Option<&Path>,
    split: SplitArg,
    cfg: &PredictConfig,
    roi_order: Option<RoiOrderArg>,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let dataset = corpus.load()?;
    let table = load_frequency_table(table_path)?;
    if table.num_predicates() != dataset.vocab.num_predicates() {
        return Err(CliError::schema(format!(
            "frequency table covers {} predicates but the vocabulary has {}",
            table.num_predicates(),
            dataset.vocab.num_predicates()
        )));
    }
    let graphs = split.select(&dataset);

    let predict_mode = match mode {
        ModeArg::Predcls => PredictMode::PredCls,
        ModeArg::Sgcls => PredictMode::SgCls,
        ModeArg::Sgdet => PredictMode::SgDet,
        ModeArg::Phrdet | ModeArg::Preddet => {
            return Err(CliError::schema(
                "predict supports predcls, sgcls, and sgdet; phrdet and preddet are evaluation-only views",
            ))
        }
    };

    let det_map = match (predict_mode, detections) {
        (PredictMode::PredCls, _) => BTreeMap::new(),
        (_, Some(path)) => load_detections(path, &dataset.vocab)?,
        (_, None) => {
            return Err(CliError::schema(
                "--detections is required for sgcls and sgdet",
            ))
        }
    };

    let results: Vec<Result<PredictedGraph, CliError>> = graphs
        .par_iter()
        .map(|g| {
            let predicted = match predict_mode {
                PredictMode::PredCls => predict(
                    predict_mode,
                    PredictInput::GroundTruth {
                        image_id: &g.image_id,
                        boxes: &g.boxes,
                        labels: &g.labels,
                    },
                    &table,
                    cfg,
                ),
                PredictMode::SgCls | PredictMode::SgDet => {
                    let dets = det_map.get(&g.image_id).ok_or_else(|| {
                        CliError::schema(format!("no detections for image {}", g.image_id))
                    })?;
                    let reordered = roi_order.map(|o| reorder_detections(dets, o, seed));
                    predict(
                        predict_mode,
                        PredictInput::Detections(reordered.as_ref().unwrap_or(dets)),
                        &table,
                        cfg,
                    )
                }
            };
            predicted.map_err(|e| CliError::invariant(e.to_string()))
        })
        .collect();

    let mut predictions = Vec::with_capacity(results.len());
    for r in results {
        predictions.push(r?);
    }
    save_predictions(out, &predictions, &dataset.vocab)?;
    println!("wrote {} predictions", predictions.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    corpus: &CorpusArgs,
    preds: &[String],
    mode: Option<ModeArg>,
    split: SplitArg,
    ks: &[usize],
    iou: f64,
    constraints: bool,
    out: &Path,
    pretty: bool,
) -> CliResult<()> {
    let dataset = corpus.load()?;
    let graphs = split.select(&dataset);

    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut results: Vec<ModeResult> = Vec::new();
    for spec in preds {
        let (eval_mode, path) = match spec.split_once('=') {
            Some((mode_name, path)) => (parse_eval_mode(mode_name)?, PathBuf::from(path)),
            None => {
                let mode = mode.ok_or_else(|| {
                    CliError::schema("--mode is required when --pred is a bare path")
                })?;
                (mode.eval_mode(), PathBuf::from(spec))
            }
        };
        if results.iter().any(|r| r.mode == eval_mode) {
            return Err(CliError::schema(format!(
                "duplicate prediction file for mode {}",
                eval_mode.name()
            )));
        }
        let predictions = load_predictions(&path, &dataset.vocab)?;
        let cfg = EvalConfig {
            mode: eval_mode,
            ks: ks.clone(),
            iou_threshold: iou,
            graph_constraints: constraints,
        };
        let result = evaluate_corpus(&predictions, &graphs, &cfg)
            .map_err(|e| CliError::schema(e.to_string()))?;
        for recalls in result.per_image.values() {
            let values: Vec<f64> = recalls.values().copied().collect();
            if values.windows(2).any(|w| w[0] > w[1])
                || values.iter().any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(CliError::invariant(format!(
                    "recall@K not monotone in [0,1] for mode {}",
                    eval_mode.name()
                )));
            }
        }
        results.push(result);
    }
    results.sort_by_key(|r| r.mode);

    let report = EvalReport::from_results(results);
    let json = serde_json::to_string(&report)
        .map_err(|e| CliError::invariant(format!("report serialization failed: {e}")))?;
    write_file(out, &json)?;

    if pretty {
        print!("{}", render_table(&report, &ks));
    }
    Ok(())
}

fn render_table(report: &EvalReport, ks: &[usize]) -> String {
    let mut text = String::new();
    write!(text, "{:<10}", "mode").unwrap();
    for k in ks {
        write!(text, "{:>10}", format!("R@{k}")).unwrap();
    }
    text.push('\n');
    for result in &report.results {
        write!(text, "{:<10}", result.mode.name()).unwrap();
        for k in ks {
            match result.corpus.get(k) {
                Some(v) => write!(text, "{:>10.4}", v).unwrap(),
                None => write!(text, "{:>10}", "-").unwrap(),
            }
        }
        text.push('\n');
    }
    match mean_recall(&report.results) {
        Some(m) => writeln!(text, "mean (3 modes, R@50+R@100): {m:.4}").unwrap(),
        None => writeln!(text, "mean: n/a (needs sgdet, sgcls, predcls at 50 and 100)").unwrap(),
    }
    text
}
