//! Combining the predictions of several networks.
//!
//! Five rules: softmax average, simple vote, confidence-weighted softmax
//! average, confidence vote (the most confident member casts `ceil(n/2)`
//! votes, the rest one each) and dictator (the most confident member
//! decides). A member's weight is its confidence in its *own* argmax.
//!
//! Vote ties are broken by the summed softmax, then by the lowest class id.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::index::EmbeddingIndex;
use crate::model::{ForwardMode, MlpModel};
use crate::numerics::{argmax, negative_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemberKind {
    Regular,
    Distance,
    Adversarial,
}

impl FromStr for MemberKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" | "plain" => Ok(MemberKind::Regular),
            "distance" => Ok(MemberKind::Distance),
            "adversarial" | "at" => Ok(MemberKind::Adversarial),
            other => Err(Error::usage(format!("unknown member kind `{other}`"))),
        }
    }
}

impl fmt::Display for MemberKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemberKind::Regular => "regular",
            MemberKind::Distance => "distance",
            MemberKind::Adversarial => "adversarial",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleMember<'a> {
    pub model: &'a MlpModel,
    /// Index built from this member's own embedding.
    pub index: Option<&'a EmbeddingIndex>,
    pub kind: MemberKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CombineRule {
    SoftmaxAverage,
    SimpleVote,
    WeightedSoftmax,
    ConfidenceVote,
    Dictator,
}

impl CombineRule {
    pub const ALL: [CombineRule; 5] = [
        CombineRule::SoftmaxAverage,
        CombineRule::SimpleVote,
        CombineRule::WeightedSoftmax,
        CombineRule::ConfidenceVote,
        CombineRule::Dictator,
    ];

    pub fn needs_weights(self) -> bool {
        matches!(
            self,
            CombineRule::WeightedSoftmax | CombineRule::ConfidenceVote | CombineRule::Dictator
        )
    }
}

impl FromStr for CombineRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax-average" => Ok(CombineRule::SoftmaxAverage),
            "simple-vote" => Ok(CombineRule::SimpleVote),
            "weighted-softmax" => Ok(CombineRule::WeightedSoftmax),
            "confidence-vote" => Ok(CombineRule::ConfidenceVote),
            "dictator" => Ok(CombineRule::Dictator),
            other => Err(Error::usage(format!("unknown combine rule `{other}`"))),
        }
    }
}

impl fmt::Display for CombineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineRule::SoftmaxAverage => "softmax-average",
            CombineRule::SimpleVote => "simple-vote",
            CombineRule::WeightedSoftmax => "weighted-softmax",
            CombineRule::ConfidenceVote => "confidence-vote",
            CombineRule::Dictator => "dictator",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightScore {
    None,
    Distance,
    Entropy,
    Margin,
}

impl FromStr for WeightScore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WeightScore::None),
            "distance" => Ok(WeightScore::Distance),
            "entropy" => Ok(WeightScore::Entropy),
            "margin" => Ok(WeightScore::Margin),
            other => Err(Error::usage(format!("unknown weight score `{other}`"))),
        }
    }
}

impl fmt::Display for WeightScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScore::None => "none",
            WeightScore::Distance => "distance",
            WeightScore::Entropy => "entropy",
            WeightScore::Margin => "margin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CombinerSpec {
    pub rule: CombineRule,
    pub weight_score: WeightScore,
    /// Member whose embedding and index produce every member's distance weight.
    pub hybrid_partner: Option<usize>,
}

impl CombinerSpec {
    pub fn new(rule: CombineRule, weight_score: WeightScore) -> Self {
        CombinerSpec {
            rule,
            weight_score,
            hybrid_partner: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rule.needs_weights() && self.weight_score == WeightScore::None {
            return Err(Error::usage(format!(
                "rule {} needs a weight score",
                self.rule
            )));
        }
        if self.hybrid_partner.is_some() && self.weight_score != WeightScore::Distance {
            return Err(Error::usage(
                "a hybrid partner only applies to distance weights",
            ));
        }
        Ok(())
    }

    /// Short label such as `weighted-softmax/distance(hybrid)`.
    pub fn label(&self) -> String {
        let mut s = self.rule.to_string();
        if self.rule.needs_weights() {
            s.push('/');
            s.push_str(&self.weight_score.to_string());
            if self.hybrid_partner.is_some() {
                s.push_str("(hybrid)");
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Confidence-as-weight for the baseline scores: the max softmax entry, or
/// `ln C - H(p)` for entropy so that weights are non-negative.
pub fn softmax_weight(probs: &[f64], score: WeightScore) -> f64 {
    match score {
        WeightScore::Margin => probs.iter().copied().fold(0.0, f64::max),
        WeightScore::Entropy => (probs.len() as f64).ln() + negative_entropy(probs),
        WeightScore::None | WeightScore::Distance => 1.0,
    }
}

/// Combine member softmax vectors. `weights` is required for rules that use them.
pub fn combine_outputs(
    probs: &[Vec<f64>],
    weights: Option<&[f64]>,
    rule: CombineRule,
) -> Result<Combined> {
    let n = probs.len();
    if n == 0 {
        return Err(Error::usage("ensemble needs at least one member"));
    }
    let c = probs[0].len();
    if probs.iter().any(|p| p.len() != c) {
        return Err(Error::usage("members disagree on the number of classes"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::usage(format!("{} weights for {n} members", w.len())));
        }
    }
    let mean = weighted_mean(probs, None);
    let weights = match (rule.needs_weights(), weights) {
        (true, Some(w)) => w,
        (true, None) => return Err(Error::usage(format!("rule {rule} needs member weights"))),
        (false, _) => &[][..],
    };

    Ok(match rule {
        CombineRule::SoftmaxAverage => Combined {
            label: argmax(&mean),
            probs: mean,
        },
        CombineRule::SimpleVote => {
            let votes = tally(probs, |_| 1.0);
            Combined {
                label: vote_winner(&votes, &mean),
                probs: mean,
            }
        }
        CombineRule::WeightedSoftmax => {
            let p = weighted_mean(probs, Some(weights));
            Combined {
                label: argmax(&p),
                probs: p,
            }
        }
        CombineRule::ConfidenceVote => {
            let top = argmax(weights);
            let extra = n.div_ceil(2) as f64;
            let votes = tally(probs, |i| if i == top { extra } else { 1.0 });
            Combined {
                label: vote_winner(&votes, &mean),
                probs: mean,
            }
        }
        CombineRule::Dictator => {
            let top = argmax(weights);
            Combined {
                label: argmax(&probs[top]),
                probs: probs[top].clone(),
            }
        }
    })
}

/// `sum w_i p_i / sum w_i`; equal weights when `weights` is `None` or sums to 0.
fn weighted_mean(probs: &[Vec<f64>], weights: Option<&[f64]>) -> Vec<f64> {
    let total: f64 = weights.map_or(0.0, |w| w.iter().sum());
    let uniform = weights.is_none() || total <= 0.0;
    let mut out = vec![0.0; probs[0].len()];
    for (i, p) in probs.iter().enumerate() {
        let w = if uniform {
            1.0 / probs.len() as f64
        } else {
            weights.unwrap()[i] / total
        };
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    out
}

fn tally(probs: &[Vec<f64>], votes_of: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut votes = vec![0.0; probs[0].len()];
    for (i, p) in probs.iter().enumerate() {
        votes[argmax(p)] += votes_of(i);
    }
    votes
}

fn vote_winner(votes: &[f64], summed: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..votes.len() {
        if votes[c] > votes[best] || (votes[c] == votes[best] && summed[c] > summed[best]) {
            best = c;
        }
    }
    best
}

/// Distance weights computed in one designated member's embedding.
#[derive(Debug, Clone, Copy)]
pub struct HybridWeighting<'a> {
    model: &'a MlpModel,
    index: &'a EmbeddingIndex,
}

impl<'a> HybridWeighting<'a> {
    /// Distance score of each predicted label in the designated embedding.
    pub fn weights(&self, x: &[f64], predicted: &[usize]) -> Result<Vec<f64>> {
        let emb = self.model.embed(x)?;
        let scores = self.index.class_scores(&emb)?;
        predicted
            .iter()
            .map(|&y| {
                scores
                    .get(y)
                    .copied()
                    .ok_or_else(|| Error::usage(format!("label {y} outside the index classes")))
            })
            .collect()
    }
}

/// Weighting functor that scores every member against `members[designated]`.
pub fn hybrid_weighting<'a>(
    members: &[EnsembleMember<'a>],
    designated: usize,
) -> Result<HybridWeighting<'a>> {
    let m = members
        .get(designated)
        .ok_or_else(|| Error::usage(format!("no member {designated}")))?;
    let index = m.index.ok_or_else(|| {
        Error::usage(format!(
            "member {designated} has no index for hybrid weighting"
        ))
    })?;
    if index.dim() != m.model.embedding_dim() {
        return Err(Error::usage(format!(
            "member {designated}: index/embedding dimension mismatch"
        )));
    }
    Ok(HybridWeighting {
        model: m.model,
        index,
    })
}

/// Each member's softmax output and its weight under `spec`.
pub fn member_outputs(
    members: &[EnsembleMember<'_>],
    x: &[f64],
    spec: &CombinerSpec,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    spec.validate()?;
    let mut probs = Vec::with_capacity(members.len());
    let mut embeddings = Vec::with_capacity(members.len());
    for m in members {
        let f = m.model.forward(x, ForwardMode::Deterministic)?;
        probs.push(f.probabilities());
        embeddings.push(f.embedding);
    }
    let weights = match (spec.weight_score, spec.hybrid_partner) {
        (WeightScore::Distance, Some(p)) => {
            let hw = hybrid_weighting(members, p)?;
            let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            hw.weights(x, &preds)?
        }
        (WeightScore::Distance, None) => members
            .iter()
            .zip(&probs)
            .zip(&embeddings)
            .enumerate()
            .map(|(i, ((m, p), e))| {
                let index = m.index.ok_or_else(|| {
                    Error::usage(format!("member {i} has no index for distance weighting"))
                })?;
                index.distance_score(e, argmax(p))
            })
            .collect::<Result<Vec<f64>>>()?,
        (s, _) => probs.iter().map(|p| softmax_weight(p, s)).collect(),
    };
    Ok((probs, weights))
}

/// Ensemble prediction for one input.
pub fn combine(members: &[EnsembleMember<'_>], x: &[f64], spec: &CombinerSpec) -> Result<Combined> {
    let (probs, weights) = member_outputs(members, x, spec)?;
    combine_outputs(&probs, Some(&weights), spec.rule)
}
