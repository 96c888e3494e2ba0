//! Complement Naive Bayes.
//!
//! For class `c` and feature `j`, the complement count `N(~c, j)` sums the
//! feature over all samples *not* in `c`. Then
//!
//! ```text
//! theta(c, j) = (alpha + N(~c, j)) / (alpha * d + sum_j N(~c, j))
//! w(c, j)     = log theta(c, j)            (optionally / sum_j |log theta(c, j)|)
//! predict(x)  = argmin_c sum_{j in x} w(c, j)
//! ```

use crate::elf::ElfCode;
use crate::features::BowVector;

use super::{encode_labels, softmax, ClassifierError, FittedClassifier, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct CnbModel {
    pub(crate) n_classes: usize,
    pub(crate) n_features: usize,
    pub(crate) alpha: f64,
    /// Row-major `n_classes x n_features` of `log theta`.
    pub(crate) log_theta: Vec<f64>,
    /// Per-class `sum_j |log theta|` when weight normalization is on.
    pub(crate) norms: Option<Vec<f64>>,
}

pub fn fit_cnb(x: &[BowVector], y: &[ElfCode], alpha: f64, normalize: bool) -> Result<FittedClassifier, ClassifierError> {
    let enc = encode_labels(x, y)?;
    let k = enc.labels.len();
    let d = x[0].dimension();

    let mut feature_count = vec![0.0f64; k * d];
    let mut feature_all = vec![0.0f64; d];
    for (xi, &yi) in x.iter().zip(&enc.y) {
        for &j in xi.present() {
            feature_count[yi as usize * d + j as usize] += 1.0;
            feature_all[j as usize] += 1.0;
        }
    }

    let mut log_theta = vec![0.0f64; k * d];
    for c in 0..k {
        let row = &mut log_theta[c * d..(c + 1) * d];
        let mut total = 0.0;
        for j in 0..d {
            row[j] = alpha + feature_all[j] - feature_count[c * d + j];
            total += row[j];
        }
        for v in row.iter_mut() {
            *v = (*v / total).ln();
        }
    }
    let norms = normalize.then(|| {
        (0..k)
            .map(|c| log_theta[c * d..(c + 1) * d].iter().map(|w| w.abs()).sum())
            .collect()
    });

    Ok(FittedClassifier {
        class_labels: enc.labels,
        model: Model::Cnb(CnbModel { n_classes: k, n_features: d, alpha, log_theta, norms }),
    })
}

impl CnbModel {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn normalized(&self) -> bool {
        self.norms.is_some()
    }

    pub fn log_theta(&self, class: usize, feature: usize) -> f64 {
        self.log_theta[class * self.n_features + feature]
    }

    /// The weight used for scoring (normalized if enabled).
    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        let w = self.log_theta(class, feature);
        match &self.norms {
            // all-zero rows (single class, one feature) stay zero
            Some(n) if n[class] > 0.0 => w / n[class],
            _ => w,
        }
    }

    /// Per-class sums of weights over the present features; lower wins.
    pub fn scores(&self, x: &BowVector) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| x.present().iter().map(|&j| self.weight(c, j as usize)).sum())
            .collect()
    }

    pub(crate) fn predict_index(&self, x: &BowVector) -> usize {
        let scores = self.scores(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s < scores[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn predict_proba(&self, x: &BowVector) -> Vec<f64> {
        let neg: Vec<f64> = self.scores(x).into_iter().map(|s| -s).collect();
        softmax(&neg)
    }
}
