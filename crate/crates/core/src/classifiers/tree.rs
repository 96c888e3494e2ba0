//! CART decision tree with Gini impurity on binary presence features.
//!
//! A split sends samples containing the word to one child and the rest to
//! the other. Split quality is compared with exact integer arithmetic, so
//! equal-impurity candidates always tie and fall back to the lowest feature
//! index regardless of floating-point rounding.

use std::cmp::Ordering;

use rand::Rng;

use crate::elf::ElfCode;
use crate::features::BowVector;

use super::{encode_labels, ClassifierError, FittedClassifier, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Split { feature: u32, present: u32, absent: u32 },
    /// Sparse `(class, weight)` pairs; weights are bootstrap multiplicities.
    Leaf { dist: Vec<(u32, u32)> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub(crate) n_classes: usize,
    pub(crate) nodes: Vec<Node>,
}

pub fn fit_tree<R: Rng + ?Sized>(
    x: &[BowVector],
    y: &[ElfCode],
    rng: &mut R,
    feature_subsample: Option<usize>,
) -> Result<FittedClassifier, ClassifierError> {
    let enc = encode_labels(x, y)?;
    let samples: Vec<u32> = (0..x.len() as u32).collect();
    let tree = build_tree(x, &enc.y, enc.labels.len(), samples, rng, feature_subsample);
    Ok(FittedClassifier { class_labels: enc.labels, model: Model::DecisionTree(tree) })
}

/// Weighted child score `sum l^2 / n_l + sum r^2 / n_r` held as a fraction.
/// Larger means lower weighted Gini impurity.
#[derive(Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(sq_left: u64, n_left: u64, sq_right: u64, n_right: u64) -> Self {
        let num = sq_left as u128 * n_right as u128 + sq_right as u128 * n_left as u128;
        SplitScore { num, den: n_left as u128 * n_right as u128 }
    }

    fn cmp(&self, other: &SplitScore) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Scratch {
    slot_of: Vec<u32>,
    touched: Vec<u32>,
    counts: Vec<u32>,
}

const NO_SLOT: u32 = u32::MAX;

pub(crate) fn build_tree<R: Rng + ?Sized>(
    x: &[BowVector],
    y: &[u32],
    n_classes: usize,
    samples: Vec<u32>,
    rng: &mut R,
    max_features: Option<usize>,
) -> Tree {
    let d = x.first().map_or(0, BowVector::dimension);
    let k = n_classes;
    let mut scratch = Scratch { slot_of: vec![NO_SLOT; d], touched: Vec::new(), counts: Vec::new() };
    let mut nodes: Vec<Node> = vec![Node::Leaf { dist: Vec::new() }];
    let mut stack: Vec<(usize, Vec<u32>)> = vec![(0, samples)];

    while let Some((node_id, node_samples)) = stack.pop() {
        let mut parent = vec![0u64; k];
        for &s in &node_samples {
            parent[y[s as usize] as usize] += 1;
        }
        let leaf = |parent: &[u64]| Node::Leaf {
            dist: parent
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(c, &n)| (c as u32, n as u32))
                .collect(),
        };
        let n = node_samples.len() as u64;
        if parent.iter().filter(|&&c| c > 0).count() <= 1 {
            nodes[node_id] = leaf(&parent);
            continue;
        }

        match best_split(x, y, k, &node_samples, &parent, &mut scratch, rng, max_features) {
            None => nodes[node_id] = leaf(&parent),
            Some(feature) => {
                let (with, without): (Vec<u32>, Vec<u32>) =
                    node_samples.iter().partition(|&&s| x[s as usize].contains(feature));
                debug_assert!(!with.is_empty() && (without.len() as u64) < n);
                let present = nodes.len();
                nodes.push(Node::Leaf { dist: Vec::new() });
                let absent = nodes.len();
                nodes.push(Node::Leaf { dist: Vec::new() });
                nodes[node_id] = Node::Split { feature, present: present as u32, absent: absent as u32 };
                stack.push((absent, without));
                stack.push((present, with));
            }
        }
    }
    Tree { n_classes, nodes }
}

#[allow(clippy::too_many_arguments)]
fn best_split<R: Rng + ?Sized>(
    x: &[BowVector],
    y: &[u32],
    k: usize,
    samples: &[u32],
    parent: &[u64],
    scratch: &mut Scratch,
    rng: &mut R,
    max_features: Option<usize>,
) -> Option<u32> {
    let n = samples.len() as u64;
    for &s in samples {
        let c = y[s as usize] as usize;
        for &j in x[s as usize].present() {
            let mut slot = scratch.slot_of[j as usize];
            if slot == NO_SLOT {
                slot = scratch.touched.len() as u32;
                scratch.slot_of[j as usize] = slot;
                scratch.touched.push(j);
                scratch.counts.resize(scratch.counts.len() + k, 0);
            }
            scratch.counts[slot as usize * k + c] += 1;
        }
    }

    let slot_counts = |slot: u32| &scratch.counts[slot as usize * k..(slot as usize + 1) * k];
    // features that are present in some but not all node samples
    let mut candidates: Vec<u32> = scratch
        .touched
        .iter()
        .copied()
        .filter(|&j| {
            let np: u64 = slot_counts(scratch.slot_of[j as usize]).iter().map(|&c| c as u64).sum();
            np < n
        })
        .collect();
    candidates.sort_unstable();
    if let Some(m) = max_features {
        if m < candidates.len() {
            for i in 0..m {
                let pick = rng.gen_range(i..candidates.len());
                candidates.swap(i, pick);
            }
            candidates.truncate(m);
            candidates.sort_unstable();
        }
    }

    let parent_sq: u64 = parent.iter().map(|c| c * c).sum();
    // parent score is sum p^2 / n; express as a fraction comparable to splits
    let parent_score = SplitScore { num: parent_sq as u128, den: n as u128 };
    let mut best: Option<(u32, SplitScore)> = None;
    for &j in &candidates {
        let left = slot_counts(scratch.slot_of[j as usize]);
        let (mut sq_l, mut sq_r, mut n_l) = (0u64, 0u64, 0u64);
        for c in 0..k {
            let l = left[c] as u64;
            let r = parent[c] - l;
            sq_l += l * l;
            sq_r += r * r;
            n_l += l;
        }
        let score = SplitScore::new(sq_l, n_l, sq_r, n - n_l);
        if best.as_ref().is_none_or(|(_, b)| score.cmp(b) == Ordering::Greater) {
            best = Some((j, score));
        }
    }

    for &j in &scratch.touched {
        scratch.slot_of[j as usize] = NO_SLOT;
    }
    scratch.touched.clear();
    scratch.counts.clear();

    best.filter(|(_, s)| s.cmp(&parent_score) == Ordering::Greater).map(|(j, _)| j)
}

impl Tree {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root_split(&self) -> Option<u32> {
        match self.nodes.first() {
            Some(Node::Split { feature, .. }) => Some(*feature),
            _ => None,
        }
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((id, d)) = stack.pop() {
            max = max.max(d);
            if let Node::Split { present, absent, .. } = &self.nodes[id] {
                stack.push((*present as usize, d + 1));
                stack.push((*absent as usize, d + 1));
            }
        }
        max
    }

    fn leaf_for(&self, x: &BowVector) -> &[(u32, u32)] {
        let mut id = 0usize;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, present, absent } => {
                    id = if x.contains(*feature) { *present } else { *absent } as usize;
                }
                Node::Leaf { dist } => return dist,
            }
        }
    }

    /// Features tested along the decision path of `x`, root first.
    pub fn path_features(&self, x: &BowVector) -> Vec<u32> {
        let mut out = Vec::new();
        let mut id = 0usize;
        while let Node::Split { feature, present, absent } = &self.nodes[id] {
            out.push(*feature);
            id = if x.contains(*feature) { *present } else { *absent } as usize;
        }
        out
    }

    pub fn predict_proba(&self, x: &BowVector) -> Vec<f64> {
        let dist = self.leaf_for(x);
        let total: u64 = dist.iter().map(|&(_, w)| w as u64).sum();
        let mut p = vec![0.0; self.n_classes];
        for &(c, w) in dist {
            p[c as usize] = w as f64 / total as f64;
        }
        p
    }
}
