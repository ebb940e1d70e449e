//! Experiment stages driven by an [`ExperimentConfig`]: data generation,
//! training, indexing, scoring and the three evaluation tasks.
//!
//! Every `cmd_*` function writes only below the config's output directory
//! (or explicitly given output paths), writes the resolved config next to
//! its artifacts as `config.<command>.txt`, and returns the written paths.

use std::path::{Path, PathBuf};

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    load_csv, make_novelty_pair, make_overlap_with, save_csv, CsvSchema, Dataset, NoveltyParams,
    OverlapParams, Preprocessor, Split,
};
use crate::ensemble::{CombinerSpec, EnsembleMember, MemberKind};
use crate::error::{Error, Result};
use crate::evaluation::{
    ensemble_accuracy_sweep, error_prediction_task, novelty_task, score_dataset, McDropout,
    ScoreSelection, Scorer, TaskResult,
};
use crate::exec::Execution;
use crate::index::{build_index_from_model, condense, embed_rows, EmbeddingIndex};
use crate::model::{load_checkpoint, save_checkpoint, MlpModel};
use crate::numerics::{derive_seed, seeded_rng};
use crate::training::{train, write_loss_history_csv, Regime, TrainOutcome};

const TAG_TRAIN_DATA: u64 = 0x74_7261_696e;
const TAG_TEST_DATA: u64 = 0x7465_7374;
const TAG_INIT: u64 = 0x696e_6974;
const TAG_CONDENSE: u64 = 0x636f_6e64;
const TAG_MC: u64 = 0x6d63_6470;

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const NOVEL_CSV: &str = "novel.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const INDEX_FILE: &str = "index.bin";
pub const CONDENSED_INDEX_FILE: &str = "index.condensed.bin";

/// Train, test and (for novelty experiments) novel splits.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    pub novel: Option<Dataset>,
}

/// Draw the synthetic splits described by `cfg.data`.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let d = &cfg.data;
    let train_seed = derive_seed(d.seed, TAG_TRAIN_DATA);
    let test_seed = derive_seed(d.seed, TAG_TEST_DATA);
    match d.source {
        DataSource::Overlap => {
            let p = OverlapParams {
                classes: d.classes,
                per_class: d.train_per_class,
                dim: d.dim,
                overlap: d.overlap,
                separation: d.separation,
            };
            let train = make_overlap_with(&p, train_seed)?;
            let test = make_overlap_with(
                &OverlapParams {
                    per_class: d.test_per_class,
                    ..p
                },
                test_seed,
            )?
            .with_split(Split::Test)?;
            Ok(ExperimentData {
                train,
                test,
                novel: None,
            })
        }
        DataSource::Novelty => {
            let p = NoveltyParams {
                known_classes: d.classes,
                novel_classes: d.novel_classes,
                per_class: d.train_per_class,
                dim: d.dim,
                separation: d.separation,
                novel_scale: d.novel_scale,
            };
            let (train, _) = make_novelty_pair(&p, train_seed)?;
            let (test, novel) = make_novelty_pair(
                &NoveltyParams {
                    per_class: d.test_per_class,
                    ..p
                },
                test_seed,
            )?;
            Ok(ExperimentData {
                train: train.with_split(Split::Train)?,
                test,
                novel: Some(novel),
            })
        }
        DataSource::Csv => Err(Error::config(
            "data.source",
            "csv data is loaded, not generated",
        )),
    }
}

fn data_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf) {
    let out = cfg.resolved_out_dir();
    let d = &cfg.data;
    match d.source {
        DataSource::Csv => (
            d.train_csv.clone().unwrap_or_else(|| out.join(TRAIN_CSV)),
            d.test_csv.clone().unwrap_or_else(|| out.join(TEST_CSV)),
            d.novel_csv.clone().unwrap_or_else(|| out.join(NOVEL_CSV)),
        ),
        _ => (out.join(TRAIN_CSV), out.join(TEST_CSV), out.join(NOVEL_CSV)),
    }
}

/// Load the raw splits written by [`cmd_gen_data`] or named by `data.*_csv`.
/// The novel split is loaded when its file exists.
pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let (train_p, test_p, novel_p) = data_paths(cfg);
    let train = load_csv(&train_p, &CsvSchema::new(Split::Train))?;
    let schema = CsvSchema {
        num_features: Some(train.dim()),
        num_classes: Some(train.num_classes()),
        split: Split::Test,
    };
    let test = load_csv(&test_p, &schema)?;
    let novel = if novel_p.exists() {
        let schema = CsvSchema {
            num_features: Some(train.dim()),
            num_classes: None,
            split: Split::Novel,
        };
        Some(load_csv(&novel_p, &schema)?)
    } else {
        None
    };
    Ok(ExperimentData { train, test, novel })
}

/// Fit the configured preprocessing on the train split and apply it to all splits.
pub fn preprocess(cfg: &ExperimentConfig, raw: &ExperimentData) -> Result<ExperimentData> {
    if !cfg.data.gcn && cfg.data.zca_regularizer.is_none() {
        return Ok(raw.clone());
    }
    let pre = Preprocessor::fit(&raw.train, cfg.data.gcn, cfg.data.zca_regularizer)?;
    Ok(ExperimentData {
        train: pre.apply(&raw.train)?,
        test: pre.apply(&raw.test)?,
        novel: raw.novel.as_ref().map(|n| pre.apply(n)).transpose()?,
    })
}

/// Freshly initialized model for `train`, seeded from `cfg.seed`.
pub fn init_model(cfg: &ExperimentConfig, input_dim: usize, classes: usize) -> Result<MlpModel> {
    let sizes = cfg.layer_sizes(input_dim, classes);
    MlpModel::new(
        &sizes,
        &cfg.dropout,
        &mut seeded_rng(derive_seed(cfg.seed, TAG_INIT)),
    )
}

/// Initialize and train a model on `train` under `cfg`.
pub fn train_model(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = init_model(cfg, train_set.dim(), train_set.num_classes())?;
    train(model, train_set, &cfg.train_config(), exec)
}

/// Index of `train_set` in `model`'s embedding; Hart-condensed when
/// `index.condensed` is set.
pub fn build_model_index(
    cfg: &ExperimentConfig,
    model: &MlpModel,
    train_set: &Dataset,
    exec: Execution,
) -> Result<EmbeddingIndex> {
    if cfg.index_condensed {
        let emb = embed_rows(model, train_set.features(), exec)?;
        let mut rng = seeded_rng(derive_seed(cfg.seed, TAG_CONDENSE));
        condense(
            &emb,
            train_set.labels(),
            train_set.num_classes(),
            cfg.index_k,
            &mut rng,
        )
    } else {
        build_index_from_model(
            model,
            train_set.features(),
            train_set.labels(),
            train_set.num_classes(),
            cfg.index_k,
            exec,
        )
    }
}

/// Score columns implied by the config: all three scores, plus MC-dropout
/// when `eval.mc_passes > 0`, `model` has dropout and was trained plain.
pub fn score_selection(cfg: &ExperimentConfig, model: &MlpModel) -> ScoreSelection {
    ScoreSelection {
        mc_dropout: (cfg.mc_passes > 0 && model.has_dropout() && cfg.train.regime == Regime::Plain)
            .then(|| McDropout {
                passes: cfg.mc_passes,
                seed: derive_seed(cfg.seed, TAG_MC),
            }),
        ..ScoreSelection::default()
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    write_bytes(path, &buf)
}

fn write_resolved(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let path = cfg.resolved_out_dir().join(format!("config.{command}.txt"));
    write_bytes(&path, cfg.to_config_string().as_bytes())?;
    Ok(path)
}

fn out_path(cfg: &ExperimentConfig, given: Option<&Path>, default: &str) -> PathBuf {
    given.map_or_else(|| cfg.resolved_out_dir().join(default), Path::to_path_buf)
}

fn write_task(
    result: &TaskResult,
    results: &Path,
    roc: Option<&Path>,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    write_with(results, |b| result.write_csv(b))?;
    written.push(results.to_path_buf());
    if let Some(roc) = roc {
        write_with(roc, |b| result.write_roc_csv(b))?;
        written.push(roc.to_path_buf());
    }
    Ok(())
}

/// Generate synthetic data and write `train.csv`, `test.csv` and, for
/// novelty data, `novel.csv`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = generate_data(cfg)?;
    let (train_p, test_p, novel_p) = data_paths(cfg);
    save_to(&data.train, &train_p)?;
    save_to(&data.test, &test_p)?;
    let mut written = vec![train_p, test_p];
    if let Some(novel) = &data.novel {
        save_to(novel, &novel_p)?;
        written.push(novel_p);
    }
    written.push(write_resolved(cfg, "gen-data")?);
    Ok(written)
}

fn save_to(d: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_csv(d, path)
}

/// Train on the train split; writes the checkpoint and `loss.csv`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    model_out: Option<&Path>,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = preprocess(cfg, &load_data(cfg)?)?;
    let outcome = train_model(cfg, &data.train, exec)?;
    let model_p = out_path(cfg, model_out, MODEL_FILE);
    if let Some(parent) = model_p.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_checkpoint(&outcome.model, &model_p)?;
    let loss_p = model_p.with_extension("loss.csv");
    write_with(&loss_p, |b| write_loss_history_csv(&outcome.history, b))?;
    Ok(vec![model_p, loss_p, write_resolved(cfg, "train")?])
}

fn load_model(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<MlpModel> {
    load_checkpoint(&out_path(cfg, path, MODEL_FILE))
}

/// Build the exact index of the train split (ignores `index.condensed`).
pub fn cmd_build_index(
    cfg: &ExperimentConfig,
    model: Option<&Path>,
    index_out: Option<&Path>,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = preprocess(cfg, &load_data(cfg)?)?;
    let m = load_model(cfg, model)?;
    let exact = ExperimentConfig {
        index_condensed: false,
        ..cfg.clone()
    };
    let index = build_model_index(&exact, &m, &data.train, exec)?;
    let p = out_path(cfg, index_out, INDEX_FILE);
    write_with(&p, |_| Ok(()))?;
    index.save(&p)?;
    Ok(vec![p, write_resolved(cfg, "build-index")?])
}

/// Build a Hart-condensed index of the train split.
pub fn cmd_condense(
    cfg: &ExperimentConfig,
    model: Option<&Path>,
    index_out: Option<&Path>,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = preprocess(cfg, &load_data(cfg)?)?;
    let m = load_model(cfg, model)?;
    let condensed = ExperimentConfig {
        index_condensed: true,
        ..cfg.clone()
    };
    let index = build_model_index(&condensed, &m, &data.train, exec)?;
    let p = out_path(cfg, index_out, CONDENSED_INDEX_FILE);
    write_with(&p, |_| Ok(()))?;
    index.save(&p)?;
    Ok(vec![p, write_resolved(cfg, "condense")?])
}

/// Use the index at `path` (or the default index file if it exists);
/// otherwise build one in memory from the train split.
fn index_for(
    cfg: &ExperimentConfig,
    model: &MlpModel,
    path: Option<&Path>,
    train_set: &Dataset,
    exec: Execution,
) -> Result<EmbeddingIndex> {
    let default = cfg.resolved_out_dir().join(if cfg.index_condensed {
        CONDENSED_INDEX_FILE
    } else {
        INDEX_FILE
    });
    match path {
        Some(p) => EmbeddingIndex::load(p),
        None if default.exists() => EmbeddingIndex::load(&default),
        None => build_model_index(cfg, model, train_set, exec),
    }
}

/// Per-row scores of a CSV (default: the test split) as
/// `row,label,predicted,distance,margin,entropy`.
pub fn cmd_score(
    cfg: &ExperimentConfig,
    model: Option<&Path>,
    index: Option<&Path>,
    input: Option<&Path>,
    output: Option<&Path>,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let raw = load_data(cfg)?;
    let raw = match input {
        Some(p) => {
            let schema = CsvSchema {
                num_features: Some(raw.train.dim()),
                num_classes: None,
                split: Split::Test,
            };
            ExperimentData {
                test: load_csv(p, &schema)?,
                ..raw
            }
        }
        None => raw,
    };
    let data = preprocess(cfg, &raw)?;
    let m = load_model(cfg, model)?;
    let idx = index_for(cfg, &m, index, &data.train, exec)?;
    let preds = score_dataset(
        &Scorer::Single {
            model: &m,
            index: &idx,
        },
        data.test.features(),
        exec,
    )?;
    let p = out_path(cfg, output, "scores.csv");
    write_with(&p, |b| {
        use std::io::Write;
        writeln!(b, "row,label,predicted,distance,margin,entropy")?;
        for (i, (s, y)) in preds.iter().zip(data.test.labels()).enumerate() {
            writeln!(
                b,
                "{i},{y},{},{},{},{}",
                s.predicted_label, s.distance_score, s.margin_score, s.entropy_score
            )?;
        }
        Ok(())
    })?;
    Ok(vec![p, write_resolved(cfg, "score")?])
}

/// How a second model takes part in an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartnerMode {
    /// The partner's embedding scores the main model's predictions.
    Hybrid,
    /// Softmax-averaged pair, each member scored in its own embedding.
    Pair,
    /// Softmax-averaged pair scored in the partner's embedding only.
    PairHybrid,
}

impl std::str::FromStr for PartnerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(PartnerMode::Hybrid),
            "pair" => Ok(PartnerMode::Pair),
            "pair-hybrid" => Ok(PartnerMode::PairHybrid),
            other => Err(Error::usage(format!(
                "unknown partner mode `{other}` (hybrid|pair|pair-hybrid)"
            ))),
        }
    }
}

/// Model files for an evaluation. Paths default to the output directory.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub model: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub partner: Option<Partner>,
}

#[derive(Debug, Clone)]
pub struct Partner {
    pub model: PathBuf,
    pub index: Option<PathBuf>,
    pub mode: PartnerMode,
}

fn evaluate(
    cfg: &ExperimentConfig,
    inputs: &EvalInputs,
    data: &ExperimentData,
    exec: Execution,
    run: impl Fn(&Scorer<'_>, &ScoreSelection) -> Result<TaskResult>,
) -> Result<TaskResult> {
    let m = load_model(cfg, inputs.model.as_deref())?;
    let idx = index_for(cfg, &m, inputs.index.as_deref(), &data.train, exec)?;
    let Some(partner) = &inputs.partner else {
        return run(
            &Scorer::Single {
                model: &m,
                index: &idx,
            },
            &score_selection(cfg, &m),
        );
    };
    let pm = load_checkpoint(&partner.model)?;
    let pidx = match &partner.index {
        Some(p) => EmbeddingIndex::load(p)?,
        None => build_model_index(cfg, &pm, &data.train, exec)?,
    };
    let sel = ScoreSelection::default();
    let members = [
        EnsembleMember {
            model: &m,
            index: Some(&idx),
            kind: MemberKind::Regular,
        },
        EnsembleMember {
            model: &pm,
            index: Some(&pidx),
            kind: MemberKind::Distance,
        },
    ];
    match partner.mode {
        PartnerMode::Hybrid => run(
            &Scorer::Hybrid {
                embed_model: &pm,
                index: &pidx,
                predict_model: &m,
            },
            &sel,
        ),
        PartnerMode::Pair => run(&Scorer::PairOwn { members }, &sel),
        PartnerMode::PairHybrid => run(
            &Scorer::PairHybrid {
                members,
                distance_member: 1,
            },
            &sel,
        ),
    }
}

/// Error-prediction AUCs; writes `error_results.csv` and `error_roc.csv`.
pub fn cmd_eval_error(
    cfg: &ExperimentConfig,
    inputs: &EvalInputs,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let result = eval_error(cfg, inputs, exec)?;
    let out = cfg.resolved_out_dir();
    let mut written = Vec::new();
    write_task(
        &result,
        &out.join("error_results.csv"),
        Some(&out.join("error_roc.csv")),
        &mut written,
    )?;
    written.push(write_resolved(cfg, "eval-error")?);
    Ok(written)
}

pub fn eval_error(
    cfg: &ExperimentConfig,
    inputs: &EvalInputs,
    exec: Execution,
) -> Result<TaskResult> {
    cfg.validate()?;
    let data = preprocess(cfg, &load_data(cfg)?)?;
    let r = evaluate(cfg, inputs, &data, exec, |scorer, sel| {
        error_prediction_task(scorer, &data.test, sel, exec)
    })?;
    Ok(r.with_seed(cfg.seed).with_config(cfg.to_pairs()))
}

/// Novelty AUCs (known = positive); writes `novelty_results.csv` and `novelty_roc.csv`.
pub fn cmd_eval_novelty(
    cfg: &ExperimentConfig,
    inputs: &EvalInputs,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let result = eval_novelty(cfg, inputs, exec)?;
    let out = cfg.resolved_out_dir();
    let mut written = Vec::new();
    write_task(
        &result,
        &out.join("novelty_results.csv"),
        Some(&out.join("novelty_roc.csv")),
        &mut written,
    )?;
    written.push(write_resolved(cfg, "eval-novelty")?);
    Ok(written)
}

pub fn eval_novelty(
    cfg: &ExperimentConfig,
    inputs: &EvalInputs,
    exec: Execution,
) -> Result<TaskResult> {
    cfg.validate()?;
    let data = preprocess(cfg, &load_data(cfg)?)?;
    let novel = data.novel.as_ref().ok_or_else(|| {
        Error::usage(format!("no novel split at {}", data_paths(cfg).2.display()))
    })?;
    let r = evaluate(cfg, inputs, &data, exec, |scorer, sel| {
        novelty_task(scorer, &data.test, novel, sel, exec)
    })?;
    Ok(r.with_seed(cfg.seed).with_config(cfg.to_pairs()))
}

/// Parsed ensemble manifest.
///
/// ```text
/// # one line per pool member: kind, checkpoint, optional index
/// member distance models/d0.ckpt models/d0.index
/// member regular models/r0.ckpt
/// # one line per combiner
/// combiner rule=weighted-softmax weight=distance
/// combiner rule=softmax-average
/// sizes 2,4,6
/// repetitions 5
/// ```
///
/// Relative paths are resolved against the manifest's directory. Members
/// without an index get one built from the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub members: Vec<ManifestMember>,
    pub combiners: Vec<CombinerSpec>,
    pub sizes: Vec<usize>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestMember {
    pub kind: MemberKind,
    pub model: PathBuf,
    pub index: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = Manifest {
            members: Vec::new(),
            combiners: Vec::new(),
            sizes: Vec::new(),
            repetitions: 5,
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::format(format!("manifest line {}", n + 1), msg);
            let mut words = line.split_whitespace();
            match words.next() {
                Some("member") => {
                    let kind: MemberKind = words
                        .next()
                        .ok_or_else(|| at("missing member kind".into()))?
                        .parse()
                        .map_err(|e: Error| at(e.to_string()))?;
                    let model = base.join(
                        words
                            .next()
                            .ok_or_else(|| at("missing checkpoint path".into()))?,
                    );
                    let index = words.next().map(|p| base.join(p));
                    m.members.push(ManifestMember { kind, model, index });
                }
                Some("combiner") => {
                    let mut spec = CombinerSpec::new(
                        crate::ensemble::CombineRule::SoftmaxAverage,
                        crate::ensemble::WeightScore::None,
                    );
                    for kv in words.by_ref() {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| at(format!("expected key=value, got `{kv}`")))?;
                        match k {
                            "rule" => {
                                spec.rule = v.parse().map_err(|e: Error| at(e.to_string()))?
                            }
                            "weight" => {
                                spec.weight_score =
                                    v.parse().map_err(|e: Error| at(e.to_string()))?
                            }
                            "partner" => {
                                spec.hybrid_partner =
                                    Some(v.parse().map_err(|_| {
                                        at(format!("partner `{v}` is not an integer"))
                                    })?)
                            }
                            other => return Err(at(format!("unknown combiner key `{other}`"))),
                        }
                    }
                    spec.validate().map_err(|e| at(e.to_string()))?;
                    m.combiners.push(spec);
                }
                Some("sizes") => {
                    m.sizes = words
                        .next()
                        .ok_or_else(|| at("missing sizes".into()))?
                        .split(',')
                        .map(|s| {
                            s.parse()
                                .map_err(|_| at(format!("size `{s}` is not an integer")))
                        })
                        .collect::<Result<_>>()?;
                }
                Some("repetitions") => {
                    let v = words.next().ok_or_else(|| at("missing count".into()))?;
                    m.repetitions = v
                        .parse()
                        .map_err(|_| at(format!("`{v}` is not an integer")))?;
                }
                Some(other) => return Err(at(format!("unknown directive `{other}`"))),
                None => unreachable!(),
            }
            if words.next().is_some() {
                return Err(at("trailing words".into()));
            }
        }
        if m.members.is_empty() || m.combiners.is_empty() || m.sizes.is_empty() {
            return Err(Error::format(
                "manifest",
                "needs member, combiner and sizes lines",
            ));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Ensemble accuracy sweep; writes `ensemble_results.csv`.
pub fn cmd_ensemble(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let result = ensemble(cfg, manifest, exec)?;
    let out = cfg.resolved_out_dir();
    let mut written = Vec::new();
    write_task(
        &result,
        &out.join("ensemble_results.csv"),
        None,
        &mut written,
    )?;
    written.push(write_resolved(cfg, "ensemble")?);
    Ok(written)
}

pub fn ensemble(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    exec: Execution,
) -> Result<TaskResult> {
    cfg.validate()?;
    let data = preprocess(cfg, &load_data(cfg)?)?;
    let models = manifest
        .members
        .iter()
        .map(|m| load_checkpoint(&m.model))
        .collect::<Result<Vec<_>>>()?;
    let indexes = manifest
        .members
        .iter()
        .zip(&models)
        .map(|(m, model)| match &m.index {
            Some(p) => EmbeddingIndex::load(p),
            None => build_model_index(cfg, model, &data.train, exec),
        })
        .collect::<Result<Vec<_>>>()?;
    let pool: Vec<EnsembleMember<'_>> = manifest
        .members
        .iter()
        .zip(models.iter().zip(&indexes))
        .map(|(m, (model, index))| EnsembleMember {
            model,
            index: Some(index),
            kind: m.kind,
        })
        .collect();
    let r = ensemble_accuracy_sweep(
        &pool,
        &manifest.combiners,
        &manifest.sizes,
        manifest.repetitions,
        &data.test,
        exec,
    )?;
    Ok(r.with_seed(cfg.seed).with_config(cfg.to_pairs()))
}
