//! ROC/AUC and the three experiment protocols: error prediction, novelty
//! detection and ensemble accuracy sweeps.

use std::fmt;
use std::io::Write;

use crate::data::Dataset;
use crate::ensemble::{
    combine_outputs, softmax_weight, CombineRule, CombinerSpec, EnsembleMember, WeightScore,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::index::{EmbeddingIndex, ScoredPrediction};
use crate::model::{ForwardMode, MlpModel};
use crate::numerics::{argmax, negative_entropy, Matrix};
use crate::training::mc_dropout_predict_batch;

/// Mann-Whitney AUC: `P(s+ > s-) + P(s+ = s-) / 2`, computed from midranks.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_scores(scores, positives)?;
    let n = scores.len();
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::usage(
            "AUC needs both positive and negative examples",
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks are 1-based; a tie group spanning ranks i+1..=j gets (i+1+j)/2
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| positives[k]).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn check_scores(scores: &[f64], positives: &[bool]) -> Result<()> {
    if scores.len() != positives.len() {
        return Err(Error::usage(format!(
            "{} scores for {} flags",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::usage("scores contain NaN"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Inputs scoring `>= threshold` are called positive. The first point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From `(0, 0)` to `(1, 1)`, thresholds strictly decreasing.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    let area = auc(scores, positives)?;
    let n_pos = positives.iter().filter(|&&p| p).count() as f64;
    let n_neg = positives.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
        });
    }
    Ok(RocCurve { points, auc: area })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ErrorPrediction,
    EnsembleAccuracy,
    Novelty,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ErrorPrediction => "error-prediction",
            Task::EnsembleAccuracy => "ensemble-accuracy",
            Task::Novelty => "novelty",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Auc,
    Accuracy,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Auc => "auc",
            Metric::Accuracy => "accuracy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub name: String,
    /// Ensemble size, for sweeps.
    pub n: Option<usize>,
    pub metric: Metric,
    pub value: f64,
    /// Sample standard deviation over repetitions, for sweeps.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task: Task,
    pub seed: u64,
    /// Resolved configuration as ordered key/value pairs.
    pub config: Vec<(String, String)>,
    pub rows: Vec<ResultRow>,
    pub curves: Vec<(String, RocCurve)>,
}

impl TaskResult {
    fn new(task: Task) -> Self {
        TaskResult {
            task,
            seed: 0,
            config: Vec::new(),
            rows: Vec::new(),
            curves: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_config(mut self, config: Vec<(String, String)>) -> Self {
        self.config = config;
        self
    }

    /// First row with this name and metric (and ensemble size, if given).
    pub fn value(&self, name: &str, metric: Metric, n: Option<usize>) -> Option<f64> {
        self.row(name, metric, n).map(|r| r.value)
    }

    pub fn row(&self, name: &str, metric: Metric, n: Option<usize>) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.name == name && r.metric == metric && (n.is_none() || r.n == n))
    }

    /// `task,seed,name,n,metric,value,std`; empty cells for absent values.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "task,seed,name,n,metric,value,std")?;
        for r in &self.rows {
            let n = r.n.map(|v| v.to_string()).unwrap_or_default();
            let std = r.std.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{n},{},{},{std}",
                self.task, self.seed, r.name, r.metric, r.value
            )?;
        }
        Ok(())
    }

    /// `score,threshold,fpr,tpr` for every curve.
    pub fn write_roc_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "score,threshold,fpr,tpr")?;
        for (name, c) in &self.curves {
            for p in &c.points {
                writeln!(out, "{name},{},{},{}", p.threshold, p.fpr, p.tpr)?;
            }
        }
        Ok(())
    }

    fn push_auc(&mut self, name: &str, scores: &[f64], positives: &[bool]) -> Result<()> {
        let curve =
            roc_curve(scores, positives).map_err(|e| Error::usage(format!("{name}: {e}")))?;
        self.rows.push(ResultRow {
            name: name.to_string(),
            n: None,
            metric: Metric::Auc,
            value: curve.auc,
            std: None,
        });
        self.curves.push((name.to_string(), curve));
        Ok(())
    }
}

/// How predictions and distance scores are produced for a test input.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// One model scored against its own index.
    Single {
        model: &'a MlpModel,
        index: &'a EmbeddingIndex,
    },
    /// `predict_model` classifies; the distance score uses `embed_model`'s
    /// embedding and `index`.
    Hybrid {
        embed_model: &'a MlpModel,
        index: &'a EmbeddingIndex,
        predict_model: &'a MlpModel,
    },
    /// Softmax-averaged pair; the distance score is the mean of each member's
    /// own distance score for the pair's label.
    PairOwn { members: [EnsembleMember<'a>; 2] },
    /// Softmax-averaged pair; the distance score of the pair's label is taken
    /// in `members[distance_member]`'s embedding only.
    PairHybrid {
        members: [EnsembleMember<'a>; 2],
        distance_member: usize,
    },
}

impl<'a> Scorer<'a> {
    fn input_dim(&self) -> usize {
        match self {
            Scorer::Single { model, .. } => model.input_dim(),
            Scorer::Hybrid { predict_model, .. } => predict_model.input_dim(),
            Scorer::PairOwn { members } | Scorer::PairHybrid { members, .. } => {
                members[0].model.input_dim()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |m: &MlpModel, idx: &EmbeddingIndex, what: &str| {
            if m.embedding_dim() != idx.dim() {
                return Err(Error::usage(format!(
                    "{what}: embedding has dimension {}, index has {}",
                    m.embedding_dim(),
                    idx.dim()
                )));
            }
            Ok(())
        };
        match self {
            Scorer::Single { model, index } => check(model, index, "model"),
            Scorer::Hybrid {
                embed_model,
                index,
                predict_model,
            } => {
                check(embed_model, index, "embed model")?;
                if embed_model.input_dim() != predict_model.input_dim() {
                    return Err(Error::usage(
                        "hybrid models disagree on the input dimension",
                    ));
                }
                Ok(())
            }
            Scorer::PairOwn { members } => {
                for (i, m) in members.iter().enumerate() {
                    let idx = m
                        .index
                        .ok_or_else(|| Error::usage(format!("pair member {i} has no index")))?;
                    check(m.model, idx, &format!("pair member {i}"))?;
                }
                check_pair(members)
            }
            Scorer::PairHybrid {
                members,
                distance_member,
            } => {
                let m = members
                    .get(*distance_member)
                    .ok_or_else(|| Error::usage(format!("no pair member {distance_member}")))?;
                let idx = m.index.ok_or_else(|| {
                    Error::usage(format!("pair member {distance_member} has no index"))
                })?;
                check(m.model, idx, &format!("pair member {distance_member}"))?;
                check_pair(members)
            }
        }
    }

    /// Deterministic prediction and scores for one input.
    pub fn score(&self, x: &[f64]) -> Result<ScoredPrediction> {
        match *self {
            Scorer::Single { model, index } => crate::index::score(model, index, x),
            Scorer::Hybrid {
                embed_model,
                index,
                predict_model,
            } => crate::index::hybrid_distance_score(embed_model, predict_model, index, x),
            Scorer::PairOwn { members } => {
                let (probs, embs) = pair_forward(&members, x)?;
                let label = argmax(&probs);
                let mut d = 0.0;
                for (m, e) in members.iter().zip(&embs) {
                    let idx = m
                        .index
                        .ok_or_else(|| Error::usage("pair member has no index"))?;
                    d += idx.distance_score(e, label)? / 2.0;
                }
                Ok(ScoredPrediction::from_probabilities(&probs, d))
            }
            Scorer::PairHybrid {
                members,
                distance_member,
            } => {
                let (probs, embs) = pair_forward(&members, x)?;
                let label = argmax(&probs);
                let idx = members[distance_member]
                    .index
                    .ok_or_else(|| Error::usage("pair member has no index"))?;
                let d = idx.distance_score(&embs[distance_member], label)?;
                Ok(ScoredPrediction::from_probabilities(&probs, d))
            }
        }
    }

    /// The model MC-dropout is applied to; only single regular models qualify.
    fn mc_model(&self) -> Option<&'a MlpModel> {
        match *self {
            Scorer::Single { model, .. } => Some(model),
            _ => None,
        }
    }
}

fn check_pair(members: &[EnsembleMember<'_>; 2]) -> Result<()> {
    let (a, b) = (members[0].model, members[1].model);
    if a.input_dim() != b.input_dim() || a.num_classes() != b.num_classes() {
        return Err(Error::usage(
            "pair members disagree on input dimension or class count",
        ));
    }
    Ok(())
}

fn pair_forward(members: &[EnsembleMember<'_>; 2], x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut probs = Vec::with_capacity(2);
    let mut embs = Vec::with_capacity(2);
    for m in members {
        let f = m.model.forward(x, ForwardMode::Deterministic)?;
        probs.push(f.probabilities());
        embs.push(f.embedding);
    }
    let avg = combine_outputs(&probs, None, CombineRule::SoftmaxAverage)?;
    Ok((avg.probs, embs))
}

/// Score every row of `features`.
pub fn score_dataset(
    scorer: &Scorer<'_>,
    features: &Matrix,
    exec: Execution,
) -> Result<Vec<ScoredPrediction>> {
    scorer.validate()?;
    if features.cols() != scorer.input_dim() {
        return Err(Error::usage(format!(
            "model expects {} features, data has {}",
            scorer.input_dim(),
            features.cols()
        )));
    }
    exec.try_map(features.rows(), |i| scorer.score(features.row(i)))
}

/// MC-dropout settings for the optional extra score column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McDropout {
    pub passes: usize,
    pub seed: u64,
}

/// Which score columns a task reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreSelection {
    pub distance: bool,
    pub margin: bool,
    pub entropy: bool,
    /// Negative entropy of the MC-dropout mean softmax, reported as `mc_dropout`.
    pub mc_dropout: Option<McDropout>,
}

impl Default for ScoreSelection {
    fn default() -> Self {
        ScoreSelection {
            distance: true,
            margin: true,
            entropy: true,
            mc_dropout: None,
        }
    }
}

struct ScoreColumns {
    preds: Vec<ScoredPrediction>,
    mc: Option<Vec<f64>>,
}

fn score_columns(
    scorer: &Scorer<'_>,
    features: &Matrix,
    sel: &ScoreSelection,
    exec: Execution,
) -> Result<ScoreColumns> {
    let preds = score_dataset(scorer, features, exec)?;
    let mc = match sel.mc_dropout {
        None => None,
        Some(mc) => {
            let model = scorer
                .mc_model()
                .ok_or_else(|| Error::usage("MC-dropout applies to single models only"))?;
            let probs = mc_dropout_predict_batch(model, features, mc.passes, mc.seed, exec)?;
            Some(probs.iter().map(|p| negative_entropy(p)).collect())
        }
    };
    Ok(ScoreColumns { preds, mc })
}

fn push_score_aucs(
    result: &mut TaskResult,
    cols: &ScoreColumns,
    sel: &ScoreSelection,
    positives: &[bool],
) -> Result<()> {
    let column = |f: fn(&ScoredPrediction) -> f64| cols.preds.iter().map(f).collect::<Vec<f64>>();
    if sel.distance {
        result.push_auc("distance", &column(|p| p.distance_score), positives)?;
    }
    if sel.margin {
        result.push_auc("margin", &column(|p| p.margin_score), positives)?;
    }
    if sel.entropy {
        result.push_auc("entropy", &column(|p| p.entropy_score), positives)?;
    }
    if let Some(mc) = &cols.mc {
        result.push_auc("mc_dropout", mc, positives)?;
    }
    Ok(())
}

/// AUC of each selected score against the correctness of the deterministic
/// prediction. Also reports test accuracy.
///
/// The MC-dropout column ranks by its own score but is judged against the
/// same correctness flags as every other column.
pub fn error_prediction_task(
    scorer: &Scorer<'_>,
    test: &Dataset,
    sel: &ScoreSelection,
    exec: Execution,
) -> Result<TaskResult> {
    if test.is_empty() {
        return Err(Error::usage("error prediction needs a non-empty test set"));
    }
    let cols = score_columns(scorer, test.features(), sel, exec)?;
    let correct: Vec<bool> = cols
        .preds
        .iter()
        .zip(test.labels())
        .map(|(p, &y)| p.predicted_label == y)
        .collect();
    let mut result = TaskResult::new(Task::ErrorPrediction);
    result.rows.push(ResultRow {
        name: "model".into(),
        n: None,
        metric: Metric::Accuracy,
        value: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        std: None,
    });
    push_score_aucs(&mut result, &cols, sel, &correct)?;
    Ok(result)
}

/// AUC of each selected score for telling `known` (positive) from `novel`.
pub fn novelty_task(
    scorer: &Scorer<'_>,
    known: &Dataset,
    novel: &Dataset,
    sel: &ScoreSelection,
    exec: Execution,
) -> Result<TaskResult> {
    if known.dim() != novel.dim() {
        return Err(Error::usage(format!(
            "known set has {} features, novel set has {}",
            known.dim(),
            novel.dim()
        )));
    }
    let mut data = known.features().as_slice().to_vec();
    data.extend_from_slice(novel.features().as_slice());
    let both = Matrix::new(known.len() + novel.len(), known.dim(), data)?;
    let cols = score_columns(scorer, &both, sel, exec)?;
    let positives: Vec<bool> = (0..both.rows()).map(|i| i < known.len()).collect();
    let mut result = TaskResult::new(Task::Novelty);
    push_score_aucs(&mut result, &cols, sel, &positives)?;
    Ok(result)
}

/// Per-member, per-row outputs reused across every subset in a sweep.
struct MemberCache {
    probs: Vec<Vec<f64>>,
    /// Distance score of every class in this member's embedding.
    class_scores: Option<Vec<Vec<f64>>>,
}

/// Ensemble accuracy for every `(spec, n)`.
///
/// Repetition `r` uses pool members `r*n .. r*n + n` (wrapping), so
/// repetitions are disjoint whenever `pool.len() >= repetitions * n`.
/// A spec's `hybrid_partner` is a position within each subset.
pub fn ensemble_accuracy_sweep(
    pool: &[EnsembleMember<'_>],
    specs: &[CombinerSpec],
    ns: &[usize],
    repetitions: usize,
    test: &Dataset,
    exec: Execution,
) -> Result<TaskResult> {
    let max_n = ns.iter().copied().max().unwrap_or(0);
    if ns.contains(&0) {
        return Err(Error::usage("ensemble size must be at least 1"));
    }
    if pool.len() < max_n {
        return Err(Error::usage(format!(
            "pool has {} members, ensemble size {max_n} requested",
            pool.len()
        )));
    }
    if repetitions == 0 {
        return Err(Error::usage("need at least one repetition"));
    }
    if test.is_empty() {
        return Err(Error::usage("ensemble sweep needs a non-empty test set"));
    }
    for s in specs {
        s.validate()?;
        if let Some(p) = s.hybrid_partner {
            if ns.iter().any(|&n| p >= n) {
                return Err(Error::usage(format!(
                    "hybrid partner {p} exceeds an ensemble size"
                )));
            }
        }
    }
    let needs_distance = specs
        .iter()
        .any(|s| s.weight_score == WeightScore::Distance);
    let xs = test.features();
    let mut caches = Vec::with_capacity(pool.len());
    for (i, m) in pool.iter().enumerate() {
        if m.model.input_dim() != test.dim() {
            return Err(Error::usage(format!(
                "member {i} expects {} features",
                m.model.input_dim()
            )));
        }
        let rows = exec.try_map(xs.rows(), |r| -> Result<(Vec<f64>, Option<Vec<f64>>)> {
            let f = m.model.forward(xs.row(r), ForwardMode::Deterministic)?;
            let cs = match (needs_distance, m.index) {
                (true, Some(idx)) => Some(idx.class_scores(&f.embedding)?),
                _ => None,
            };
            Ok((f.probabilities(), cs))
        })?;
        let (probs, cs): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let class_scores = cs.into_iter().collect::<Option<Vec<_>>>();
        caches.push(MemberCache {
            probs,
            class_scores,
        });
    }

    let mut result = TaskResult::new(Task::EnsembleAccuracy);
    for spec in specs {
        for &n in ns {
            let mut accs = Vec::with_capacity(repetitions);
            for r in 0..repetitions {
                let subset: Vec<usize> = (0..n).map(|j| (r * n + j) % pool.len()).collect();
                accs.push(subset_accuracy(&caches, &subset, spec, test.labels())?);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            result.rows.push(ResultRow {
                name: spec.label(),
                n: Some(n),
                metric: Metric::Accuracy,
                value: mean,
                std: Some(std),
            });
        }
    }
    Ok(result)
}

fn subset_accuracy(
    caches: &[MemberCache],
    subset: &[usize],
    spec: &CombinerSpec,
    labels: &[usize],
) -> Result<f64> {
    let mut correct = 0usize;
    for (row, &y) in labels.iter().enumerate() {
        let probs: Vec<Vec<f64>> = subset
            .iter()
            .map(|&m| caches[m].probs[row].clone())
            .collect();
        let weights: Vec<f64> = match spec.weight_score {
            WeightScore::Distance => subset
                .iter()
                .enumerate()
                .map(|(pos, &m)| {
                    let scorer = subset[spec.hybrid_partner.unwrap_or(pos)];
                    let cs = caches[scorer].class_scores.as_ref().ok_or_else(|| {
                        Error::usage(format!("pool member {scorer} has no index"))
                    })?;
                    Ok(cs[row][argmax(&caches[m].probs[row])])
                })
                .collect::<Result<_>>()?,
            s => probs.iter().map(|p| softmax_weight(p, s)).collect(),
        };
        let c = combine_outputs(&probs, Some(&weights), spec.rule)?;
        correct += (c.label == y) as usize;
    }
    Ok(correct as f64 / labels.len() as f64)
}
