//! Pair sampling for the pairwise embedding loss.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::numerics::SeededRng;

/// Index pairs into one minibatch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub same_class: Vec<bool>,
}

impl PairBatch {
    /// Build from explicit pairs; `same_class` is derived from `labels`.
    pub fn from_pairs(pairs: Vec<(usize, usize)>, labels: &[usize]) -> Self {
        let same_class = pairs.iter().map(|&(a, b)| labels[a] == labels[b]).collect();
        PairBatch { pairs, same_class }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn same_class_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.same_class.iter().filter(|&&s| s).count() as f64 / self.pairs.len() as f64
    }
}

/// Sample `floor(n/2)` disjoint pairs from a minibatch with the given labels.
///
/// At least `ceil(same_class_fraction * P)` pairs are same-class whenever the
/// batch has enough classes with two or more members left. Same-class pairs
/// are drawn first: pick a class with probability proportional to its
/// remaining count, then two distinct members. The rest are paired uniformly.
pub fn sample_pairs(labels: &[usize], same_class_fraction: f64, rng: &mut SeededRng) -> PairBatch {
    let n_pairs = labels.len() / 2;
    let target_same = ((same_class_fraction * n_pairs as f64).ceil() as usize).min(n_pairs);
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..target_same {
        let eligible: usize = by_class.iter().filter(|c| c.len() >= 2).map(Vec::len).sum();
        if eligible == 0 {
            break;
        }
        let mut pick = rng.random_range(0..eligible);
        let class = by_class
            .iter()
            .position(|c| {
                if c.len() < 2 {
                    return false;
                }
                if pick < c.len() {
                    true
                } else {
                    pick -= c.len();
                    false
                }
            })
            .expect("pick < eligible");
        let members = &mut by_class[class];
        let a = members.swap_remove(rng.random_range(0..members.len()));
        let b = members.swap_remove(rng.random_range(0..members.len()));
        pairs.push((a, b));
    }

    let mut rest: Vec<usize> = by_class.into_iter().flatten().collect();
    rest.sort_unstable();
    rest.shuffle(rng);
    for chunk in rest.chunks_exact(2) {
        if pairs.len() == n_pairs {
            break;
        }
        pairs.push((chunk[0], chunk[1]));
    }
    PairBatch::from_pairs(pairs, labels)
}
