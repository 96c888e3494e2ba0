//! Linear one-vs-rest SVM trained with Pegasos-style stochastic subgradient
//! descent on the L2-regularized hinge loss.
//!
//! This is a linear stand-in for a kernel SVC and is reported under its own
//! model id (`linear-svm`).

use rand::seq::SliceRandom;

use crate::elf::ElfCode;
use crate::features::BowVector;

use super::{encode_labels, tree_rng, ClassifierError, FittedClassifier, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub(crate) n_features: usize,
    /// Row-major `n_classes x n_features`.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) lambda: f64,
    pub(crate) epochs: usize,
}

pub fn fit_linear_svm(
    x: &[BowVector],
    y: &[ElfCode],
    epochs: usize,
    lambda: f64,
    seed: u64,
) -> Result<FittedClassifier, ClassifierError> {
    let enc = encode_labels(x, y)?;
    let k = enc.labels.len();
    let d = x[0].dimension();
    if k == 1 {
        // nothing to separate; the lone class always wins
        return Ok(FittedClassifier {
            class_labels: enc.labels,
            model: Model::LinearSvm(SvmModel { n_features: d, weights: vec![0.0; d], bias: vec![0.0], lambda, epochs }),
        });
    }
    let mut rng = tree_rng(seed, 0);

    // w_c = scale_c * v_c keeps the regularization shrink O(1) per step
    let mut v = vec![0.0f64; k * d];
    let mut scale = vec![1.0f64; k];
    let mut bias = vec![0.0f64; k];
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0u64;

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64 + 1.0);
            let xi = x[i].present();
            for c in 0..k {
                let target = if enc.y[i] as usize == c { 1.0 } else { -1.0 };
                let row = &mut v[c * d..(c + 1) * d];
                let dot: f64 = xi.iter().map(|&j| row[j as usize]).sum();
                let margin = target * (scale[c] * dot + bias[c]);
                scale[c] *= 1.0 - eta * lambda;
                if margin < 1.0 {
                    let step = eta * target / scale[c];
                    for &j in xi {
                        row[j as usize] += step;
                    }
                    bias[c] += eta * target;
                }
                if scale[c] < 1e-9 {
                    row.iter_mut().for_each(|w| *w *= scale[c]);
                    scale[c] = 1.0;
                }
            }
        }
    }

    for c in 0..k {
        v[c * d..(c + 1) * d].iter_mut().for_each(|w| *w *= scale[c]);
    }
    Ok(FittedClassifier {
        class_labels: enc.labels,
        model: Model::LinearSvm(SvmModel { n_features: d, weights: v, bias, lambda, epochs }),
    })
}

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.n_features + feature]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn margins(&self, x: &BowVector) -> Vec<f64> {
        (0..self.n_classes())
            .map(|c| self.bias[c] + x.present().iter().map(|&j| self.weight(c, j as usize)).sum::<f64>())
            .collect()
    }
}
