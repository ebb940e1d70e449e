//! Exact k-NN over training embeddings and the confidence scores built on it.
//!
//! The distance score of a query `x` for a predicted class `c` is
//!
//! ```text
//! D(x) = sum_{j in kNN(x), y_j = c} exp(-d_j) / sum_{j in kNN(x)} exp(-d_j)
//! ```
//!
//! with `d_j` the Euclidean distance in embedding space. No distance scaling
//! is applied; the exponentials are shifted by the nearest distance so the
//! ratio stays finite when every `d_j` is large.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ForwardMode, MlpModel};
use crate::numerics::{
    argmax, negative_entropy, squared_distance, stable_softmax, Matrix, SeededRng,
};

pub const INDEX_MAGIC: &[u8; 8] = b"DCINDEX\0";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row of the stored point.
    pub index: usize,
    pub distance: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    points: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    k: usize,
    condensed: bool,
}

/// Default neighborhood size: the smallest nonzero class count.
pub fn default_k(labels: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    labels.iter().for_each(|&y| counts[y] += 1);
    counts.into_iter().filter(|&c| c > 0).min().unwrap_or(0)
}

/// Build an exact index. `k = None` selects [`default_k`].
pub fn build_index(
    embeddings: &Matrix,
    labels: &[usize],
    num_classes: usize,
    k: Option<usize>,
) -> Result<EmbeddingIndex> {
    EmbeddingIndex::new(embeddings.clone(), labels.to_vec(), num_classes, k, false)
}

/// Embed every row of `features` with `model` and index the result.
pub fn build_index_from_model(
    model: &MlpModel,
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    k: Option<usize>,
    exec: Execution,
) -> Result<EmbeddingIndex> {
    let emb = embed_rows(model, features, exec)?;
    build_index(&emb, labels, num_classes, k)
}

/// Deterministic embeddings of every row.
pub fn embed_rows(model: &MlpModel, features: &Matrix, exec: Execution) -> Result<Matrix> {
    if features.cols() != model.input_dim() {
        return Err(Error::usage(format!(
            "features have dimension {}, model expects {}",
            features.cols(),
            model.input_dim()
        )));
    }
    let rows = exec.map(features.rows(), |i| {
        model
            .forward_unchecked(features.row(i), ForwardMode::Deterministic)
            .embedding
    });
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, model.embedding_dim()));
    }
    Matrix::from_rows(&rows)
}

impl EmbeddingIndex {
    fn new(
        points: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        k: Option<usize>,
        condensed: bool,
    ) -> Result<Self> {
        let n = points.rows();
        if labels.len() != n {
            return Err(Error::usage(format!(
                "{n} points for {} labels",
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::usage(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        let k = k.unwrap_or_else(|| default_k(&labels, num_classes));
        if k == 0 || k > n {
            return Err(Error::usage(format!("k = {k} must be in [1, N = {n}]")));
        }
        Ok(EmbeddingIndex {
            points,
            labels,
            num_classes,
            k,
            condensed,
        })
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn is_condensed(&self) -> bool {
        self.condensed
    }

    /// Same points with a different neighborhood size.
    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::usage(format!(
                "k = {k} must be in [1, N = {}]",
                self.len()
            )));
        }
        self.k = k;
        Ok(self)
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::usage(format!(
                "query has dimension {}, index has {}",
                q.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// The `k` nearest stored points, ascending by distance, ties by row.
    pub fn knn_query(&self, q: &[f64]) -> Result<Vec<Neighbor>> {
        self.check_query(q)?;
        Ok(self.nearest(q, self.k))
    }

    fn nearest(&self, q: &[f64], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<(f64, usize)> = self
            .points
            .row_iter()
            .enumerate()
            .map(|(i, p)| (squared_distance(q, p).sqrt(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_unstable_by(cmp);
        all.into_iter()
            .map(|(distance, index)| Neighbor {
                index,
                distance,
                label: self.labels[index],
            })
            .collect()
    }

    /// Distance score of `q` for class `predicted`.
    pub fn distance_score(&self, q: &[f64], predicted: usize) -> Result<f64> {
        if predicted >= self.num_classes {
            return Err(Error::usage(format!(
                "predicted label {predicted} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(self.class_scores(q)?[predicted])
    }

    /// Distance score of `q` for every class; entries sum to 1.
    pub fn class_scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        let nn = self.knn_query(q)?;
        Ok(class_scores_from_neighbors(&nn, self.num_classes))
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(INDEX_MAGIC, INDEX_VERSION);
        w.u64(self.len() as u64);
        w.u64(self.dim() as u64);
        w.u64(self.k as u64);
        w.u64(self.num_classes as u64);
        w.u8(self.condensed as u8);
        w.f64s(self.points.as_slice());
        for &y in &self.labels {
            w.u64(y as u64);
        }
        w.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, INDEX_MAGIC, INDEX_VERSION)?;
        let n = r.count("N")?;
        let d = r.count("d")?;
        let k = r.count("k")?;
        let c = r.count("C")?;
        let condensed = match r.u8("condensed")? {
            0 => false,
            1 => true,
            v => {
                return Err(Error::format(
                    "condensed",
                    format!("flag must be 0 or 1, got {v}"),
                ))
            }
        };
        let n_values = n
            .checked_mul(d)
            .ok_or_else(|| Error::format("points", "N x d overflows"))?;
        let points = r.f64s(n_values, "points")?;
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = r.count(&format!("labels[{i}]"))?;
            if y >= c {
                return Err(Error::format(
                    format!("labels[{i}]"),
                    format!("{y} >= C = {c}"),
                ));
            }
            labels.push(y);
        }
        r.expect_end()?;
        if k == 0 || k > n {
            return Err(Error::format("k", format!("{k} not in [1, {n}]")));
        }
        let points =
            Matrix::new(n, d, points).map_err(|e| Error::format("points", e.to_string()))?;
        Ok(EmbeddingIndex {
            points,
            labels,
            num_classes: c,
            k,
            condensed,
        })
    }

    /// Binary layout: magic `DCINDEX\0`, `u32` version, `u64` N, d, k, C,
    /// `u8` condensed flag, N*d `f64` points (row-major), N `u64` labels.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

/// Eq. of the distance score evaluated for all classes at once.
fn class_scores_from_neighbors(nn: &[Neighbor], num_classes: usize) -> Vec<f64> {
    let d_min = nn[0].distance;
    let mut num = vec![0.0; num_classes];
    let mut den = 0.0;
    for n in nn {
        let w = (d_min - n.distance).exp();
        num[n.label] += w;
        den += w;
    }
    num.iter_mut().for_each(|v| *v /= den);
    num
}

/// Largest softmax probability.
pub fn margin_score(logits: &[f64]) -> f64 {
    stable_softmax(logits).into_iter().fold(0.0, f64::max)
}

/// Negative entropy of the softmax output (higher = more confident).
pub fn entropy_score(logits: &[f64]) -> f64 {
    negative_entropy(&stable_softmax(logits))
}

/// A prediction with all three confidence scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPrediction {
    pub predicted_label: usize,
    pub distance_score: f64,
    pub margin_score: f64,
    pub entropy_score: f64,
    pub correct: Option<bool>,
}

impl ScoredPrediction {
    /// Scores from a probability vector and a distance score.
    pub fn from_probabilities(probs: &[f64], distance_score: f64) -> Self {
        ScoredPrediction {
            predicted_label: argmax(probs),
            distance_score,
            margin_score: probs.iter().copied().fold(0.0, f64::max),
            entropy_score: negative_entropy(probs),
            correct: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.correct = Some(self.predicted_label == label);
        self
    }
}

/// Score one input with a single model and its own index.
pub fn score(model: &MlpModel, index: &EmbeddingIndex, x: &[f64]) -> Result<ScoredPrediction> {
    hybrid_distance_score(model, model, index, x)
}

/// Predict with `predict_model`, compute the distance score in
/// `embed_model`'s embedding against `index` (built from `embed_model`).
/// Margin and entropy come from `predict_model`.
pub fn hybrid_distance_score(
    embed_model: &MlpModel,
    predict_model: &MlpModel,
    index: &EmbeddingIndex,
    x: &[f64],
) -> Result<ScoredPrediction> {
    if embed_model.embedding_dim() != index.dim() {
        return Err(Error::usage(format!(
            "embedding model has dimension {}, index has {}",
            embed_model.embedding_dim(),
            index.dim()
        )));
    }
    let pred = predict_model.forward(x, ForwardMode::Deterministic)?;
    let probs = pred.probabilities();
    let label = argmax(&probs);
    let emb = if std::ptr::eq(embed_model, predict_model) {
        pred.embedding
    } else {
        embed_model.embed(x)?
    };
    let d = index.distance_score(&emb, label)?;
    Ok(ScoredPrediction::from_probabilities(&probs, d))
}

/// Original row indices kept by Hart's condensed nearest neighbour rule.
///
/// The scan order is one seed-derived shuffle reused on every pass. The store
/// starts with the first point of each class in that order; each pass adds
/// every point misclassified by 1-NN over the current store, until a pass
/// adds nothing. Returned in insertion order.
pub fn condense_indices(
    embeddings: &Matrix,
    labels: &[usize],
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::usage(format!(
            "{n} points for {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::usage("cannot condense an empty set"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let num_classes = labels.iter().max().unwrap() + 1;
    let mut seeded = vec![false; num_classes];
    let mut in_store = vec![false; n];
    let mut store = Vec::new();
    for &i in &order {
        if !seeded[labels[i]] {
            seeded[labels[i]] = true;
            in_store[i] = true;
            store.push(i);
        }
    }

    loop {
        let mut added = false;
        for &i in &order {
            if in_store[i] {
                continue;
            }
            let q = embeddings.row(i);
            let mut best = (f64::INFINITY, usize::MAX);
            for (pos, &s) in store.iter().enumerate() {
                let d = squared_distance(q, embeddings.row(s));
                if d < best.0 {
                    best = (d, pos);
                }
            }
            if labels[store[best.1]] != labels[i] {
                in_store[i] = true;
                store.push(i);
                added = true;
            }
        }
        if !added {
            break;
        }
    }
    Ok(store)
}

/// Hart-condensed index. `k = None` uses every stored prototype.
pub fn condense(
    embeddings: &Matrix,
    labels: &[usize],
    num_classes: usize,
    k: Option<usize>,
    rng: &mut SeededRng,
) -> Result<EmbeddingIndex> {
    let kept = condense_indices(embeddings, labels, rng)?;
    let points = embeddings.select_rows(&kept);
    let kept_labels: Vec<usize> = kept.iter().map(|&i| labels[i]).collect();
    let k = k.map(|k| k.min(kept.len())).unwrap_or(kept.len());
    EmbeddingIndex::new(points, kept_labels, num_classes, Some(k), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::Layer;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn line_index(k: usize) -> EmbeddingIndex {
        let pts = Matrix::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        build_index(&pts, &[0, 0, 1, 1], 2, Some(k)).unwrap()
    }

    #[test]
    fn knn_hand_examples() {
        let idx = line_index(2);
        let nn = idx.knn_query(&[1.4]).unwrap();
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2]);
        let nn = idx.knn_query(&[2.0]).unwrap();
        assert_eq!((nn[0].index, nn[0].distance), (2, 0.0));
        // 1.5 is equidistant from rows 1 and 2
        let nn = idx.knn_query(&[1.5]).unwrap();
        assert_eq!(nn[0].index, 1);
        assert_eq!(nn[1].index, 2);
        assert!(idx.knn_query(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn k_equal_n_returns_everything() {
        let idx = line_index(4);
        let mut got: Vec<usize> = idx
            .knn_query(&[10.0])
            .unwrap()
            .iter()
            .map(|n| n.index)
            .collect();
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3]);
        assert!(build_index(idx.points(), idx.labels(), 2, Some(5)).is_err());
    }

    #[test]
    fn duplicates_come_before_farther_points() {
        let pts = Matrix::new(5, 1, vec![5.0, 1.0, 1.0, 0.5, 1.0]).unwrap();
        let idx = build_index(&pts, &[0, 1, 0, 1, 0], 2, Some(4)).unwrap();
        let nn = idx.knn_query(&[1.0]).unwrap();
        assert_eq!(
            nn.iter().map(|n| n.index).collect::<Vec<_>>(),
            vec![1, 2, 4, 3]
        );
    }

    #[test]
    fn default_k_is_smallest_class() {
        let pts = Matrix::zeros(6, 2);
        let idx = build_index(&pts, &[0, 0, 0, 1, 1, 2], 4, None).unwrap();
        assert_eq!(idx.k(), 1);
        assert_eq!(default_k(&[0, 0, 1, 1, 1], 2), 2);
    }

    #[test]
    fn distance_score_examples() {
        // all neighbors share the label
        let pts = Matrix::new(3, 1, vec![0.0, 0.1, 0.2]).unwrap();
        let idx = build_index(&pts, &[1, 1, 1], 2, Some(3)).unwrap();
        assert_eq!(idx.distance_score(&[0.05], 1).unwrap(), 1.0);
        assert_eq!(idx.distance_score(&[0.05], 0).unwrap(), 0.0);
        assert!(idx.distance_score(&[0.05], 2).is_err());

        // k=2, distances (1, 2), labels (yhat, other)
        let pts = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let idx = build_index(&pts, &[0, 1], 2, Some(2)).unwrap();
        let s = idx.distance_score(&[0.0], 0).unwrap();
        let e1 = (-1f64).exp();
        let e2 = (-2f64).exp();
        assert!((s - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((s - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn distance_score_stays_finite_far_away() {
        let pts = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let idx = build_index(&pts, &[0, 1], 2, Some(2)).unwrap();
        let s = idx.distance_score(&[1e6], 1).unwrap();
        assert!(s.is_finite());
        assert!((s - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn permuted_storage_gives_same_score() {
        let mut rng = seeded_rng(5);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = build_index(&Matrix::from_rows(&rows).unwrap(), &labels, 3, Some(7)).unwrap();
        let perm: Vec<usize> = (0..30).rev().collect();
        let rows2: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let labels2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = build_index(&Matrix::from_rows(&rows2).unwrap(), &labels2, 3, Some(7)).unwrap();
        for _ in 0..50 {
            let q = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            for c in 0..3 {
                let (sa, sb) = (
                    a.distance_score(&q, c).unwrap(),
                    b.distance_score(&q, c).unwrap(),
                );
                assert!((sa - sb).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn baseline_scores() {
        let z = [0.0; 4];
        assert!((margin_score(&z) - 0.25).abs() < 1e-15);
        assert!((entropy_score(&z) + 4f64.ln()).abs() < 1e-15);
        let z = [0.0, 60.0, 0.0];
        assert!(1.0 - margin_score(&z) < 1e-20);
        assert!(entropy_score(&z).abs() < 1e-20);
        assert!((entropy_score(&[3.0, 3.0]) + 2f64.ln()).abs() < 1e-15);
    }

    fn linear_model(w: Vec<Vec<f64>>) -> MlpModel {
        // 2-d identity-ish hidden layer (positive inputs pass unchanged)
        let l0 = Layer {
            weights: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        let rows = w.len();
        let l1 = Layer {
            weights: Matrix::from_rows(&w).unwrap(),
            bias: vec![0.0; rows],
        };
        MlpModel::from_layers(vec![l0, l1], vec![0.0]).unwrap()
    }

    #[test]
    fn hybrid_examples() {
        let a = linear_model(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = linear_model(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let pts = Matrix::new(4, 2, vec![1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 2.0]).unwrap();
        let idx = build_index(&pts, &[0, 0, 1, 1], 2, Some(3)).unwrap();
        let x = [1.5, 0.5];

        // self-hybrid = ordinary scoring
        assert_eq!(
            hybrid_distance_score(&a, &a, &idx, &x).unwrap(),
            score(&a, &idx, &x).unwrap()
        );

        // cross-assigned prediction: b predicts class 1 at x, a's embedding = x
        let s = hybrid_distance_score(&a, &b, &idx, &x).unwrap();
        assert_eq!(s.predicted_label, 1);
        let nn = idx.knn_query(&x).unwrap();
        let w: Vec<f64> = nn.iter().map(|n| (-n.distance).exp()).collect();
        let num: f64 = nn
            .iter()
            .zip(&w)
            .filter(|(n, _)| n.label == 1)
            .map(|(_, w)| w)
            .sum();
        let manual = num / w.iter().sum::<f64>();
        assert!((s.distance_score - manual).abs() < 1e-12);

        // predicted class absent among neighbors
        let idx1 = build_index(&pts, &[0, 0, 0, 0], 2, Some(2)).unwrap();
        assert_eq!(
            hybrid_distance_score(&a, &b, &idx1, &x)
                .unwrap()
                .distance_score,
            0.0
        );

        // dimension mismatch
        let wide = build_index(&Matrix::zeros(2, 3), &[0, 1], 2, Some(1)).unwrap();
        assert!(hybrid_distance_score(&a, &b, &wide, &x).is_err());
    }

    #[test]
    fn hart_condensation() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0], vec![20.0, 0.0]]).unwrap();
        let d = make_blobs(2, 200, 2, Some(&centers), 1.0, 4).unwrap();
        let idx = condense(d.features(), d.labels(), 2, None, &mut seeded_rng(1)).unwrap();
        assert!(idx.is_condensed());
        assert!(idx.len() <= 40, "kept {}", idx.len());
        let one = idx.clone().with_k(1).unwrap();
        for (x, &y) in d.features().row_iter().zip(d.labels()) {
            assert_eq!(one.knn_query(x).unwrap()[0].label, y);
        }

        let single = Matrix::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let idx = condense(&single, &[0; 5], 1, None, &mut seeded_rng(0)).unwrap();
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn index_file_round_trip_and_errors() {
        let mut rng = seeded_rng(2);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random_range(-1.0..1.0); 3])
            .collect();
        let idx = build_index(
            &Matrix::from_rows(&rows).unwrap(),
            &[0, 1, 2, 0, 1, 2, 0, 1, 2, 0],
            3,
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.bin");
        idx.save(&p).unwrap();
        assert_eq!(EmbeddingIndex::load(&p).unwrap(), idx);
        let bytes = idx.encode();
        assert!(matches!(
            EmbeddingIndex::decode(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
    }
}
