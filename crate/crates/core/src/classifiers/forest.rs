//! Random forest: bootstrap-sampled CART trees with `sqrt(d)` candidate
//! features per split, averaged leaf distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::elf::ElfCode;
use crate::features::BowVector;

use super::tree::{build_tree, Tree};
use super::{encode_labels, ClassifierError, FittedClassifier, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Forest {
    pub(crate) n_classes: usize,
    pub(crate) max_features: usize,
    pub(crate) trees: Vec<Tree>,
}

/// Random stream for tree `index` of a forest seeded with `seed`. A single
/// decision tree uses stream 0.
pub fn tree_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn max_features_for(n_features: usize) -> usize {
    ((n_features as f64).sqrt() as usize).max(1)
}

pub fn fit_forest(
    x: &[BowVector],
    y: &[ElfCode],
    n_trees: usize,
    bootstrap: bool,
    seed: u64,
) -> Result<FittedClassifier, ClassifierError> {
    if n_trees == 0 {
        return Err(ClassifierError::InvalidHyperparameter("n_trees must be positive".into()));
    }
    let enc = encode_labels(x, y)?;
    let k = enc.labels.len();
    let n = x.len();
    let max_features = max_features_for(x[0].dimension());

    let trees: Vec<Tree> = (0..n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let samples: Vec<u32> = if bootstrap {
                (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            build_tree(x, &enc.y, k, samples, &mut rng, Some(max_features))
        })
        .collect();

    Ok(FittedClassifier {
        class_labels: enc.labels,
        model: Model::RandomForest(Forest { n_classes: k, max_features, trees }),
    })
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }

    pub fn predict_proba(&self, x: &BowVector) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict_proba(x)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}
