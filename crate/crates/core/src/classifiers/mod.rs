//! Classifiers over binary bag-of-words vectors.
//!
//! Every model keeps its class labels in ascending code order, and every
//! argmax/argmin tie resolves to the lowest index, i.e. the lexicographically
//! smallest ELF code.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::elf::ElfCode;
use crate::features::BowVector;

pub mod cnb;
pub mod forest;
pub mod svm;
pub mod tree;

pub use cnb::CnbModel;
pub use forest::{tree_rng, Forest};
pub use svm::SvmModel;
pub use tree::Tree;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "cnb")]
    Cnb,
    #[serde(rename = "dt")]
    DecisionTree,
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "linear-svm")]
    LinearSvm,
}

impl ClassifierKind {
    pub fn id(self) -> &'static str {
        match self {
            ClassifierKind::Cnb => "cnb",
            ClassifierKind::DecisionTree => "dt",
            ClassifierKind::RandomForest => "rf",
            ClassifierKind::LinearSvm => "linear-svm",
        }
    }

    pub fn all() -> [ClassifierKind; 4] {
        [
            ClassifierKind::Cnb,
            ClassifierKind::DecisionTree,
            ClassifierKind::RandomForest,
            ClassifierKind::LinearSvm,
        ]
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassifierKind::all()
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| format!("unknown model {s:?} (expected cnb|dt|rf|linear-svm)"))
    }
}

/// Hyperparameters for all kinds; each kind reads only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Additive smoothing for CNB.
    pub cnb_alpha: f64,
    /// L1-normalize CNB log-weights per class.
    pub cnb_norm: bool,
    pub n_trees: usize,
    /// Disable only for testing; forests always bootstrap in practice.
    pub bootstrap: bool,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            cnb_alpha: 1.0,
            cnb_norm: false,
            n_trees: 100,
            bootstrap: true,
            svm_lambda: 1e-4,
            svm_epochs: 10,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidHyperparameter(m.to_owned()));
        if !(self.cnb_alpha > 0.0 && self.cnb_alpha.is_finite()) {
            return bad("cnb_alpha must be positive");
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if !(self.svm_lambda > 0.0 && self.svm_lambda.is_finite()) {
            return bad("svm_lambda must be positive");
        }
        if self.svm_epochs == 0 {
            return bad("svm_epochs must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        ClassifierSpec { kind, hyperparams: Hyperparams::default(), seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cnb(CnbModel),
    DecisionTree(Tree),
    RandomForest(Forest),
    LinearSvm(SvmModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedClassifier {
    pub(crate) class_labels: Vec<ElfCode>,
    pub(crate) model: Model,
}

/// Training labels mapped to dense class indices over sorted unique codes.
pub(crate) struct EncodedLabels {
    pub labels: Vec<ElfCode>,
    pub y: Vec<u32>,
}

pub(crate) fn encode_labels(x: &[BowVector], y: &[ElfCode]) -> Result<EncodedLabels, ClassifierError> {
    if x.len() != y.len() {
        return Err(ClassifierError::LengthMismatch { samples: x.len(), labels: y.len() });
    }
    if x.is_empty() {
        return Err(ClassifierError::EmptyTraining);
    }
    let mut labels: Vec<ElfCode> = y.to_vec();
    labels.sort();
    labels.dedup();
    let idx: BTreeMap<&ElfCode, u32> = labels.iter().enumerate().map(|(i, l)| (l, i as u32)).collect();
    let y = y.iter().map(|l| idx[l]).collect();
    Ok(EncodedLabels { labels, y })
}

pub fn fit(spec: &ClassifierSpec, x: &[BowVector], y: &[ElfCode]) -> Result<FittedClassifier, ClassifierError> {
    spec.hyperparams.validate()?;
    let h = &spec.hyperparams;
    match spec.kind {
        ClassifierKind::Cnb => cnb::fit_cnb(x, y, h.cnb_alpha, h.cnb_norm),
        ClassifierKind::DecisionTree => {
            let mut rng = tree_rng(spec.seed, 0);
            tree::fit_tree(x, y, &mut rng, None)
        }
        ClassifierKind::RandomForest => forest::fit_forest(x, y, h.n_trees, h.bootstrap, spec.seed),
        ClassifierKind::LinearSvm => svm::fit_linear_svm(x, y, h.svm_epochs, h.svm_lambda, spec.seed),
    }
}

impl FittedClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match &self.model {
            Model::Cnb(_) => ClassifierKind::Cnb,
            Model::DecisionTree(_) => ClassifierKind::DecisionTree,
            Model::RandomForest(_) => ClassifierKind::RandomForest,
            Model::LinearSvm(_) => ClassifierKind::LinearSvm,
        }
    }

    pub fn class_labels(&self) -> &[ElfCode] {
        &self.class_labels
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn predict_index(&self, x: &BowVector) -> usize {
        match &self.model {
            Model::Cnb(m) => m.predict_index(x),
            Model::DecisionTree(t) => argmax(&t.predict_proba(x)),
            Model::RandomForest(f) => argmax(&f.predict_proba(x)),
            Model::LinearSvm(m) => argmax(&m.margins(x)),
        }
    }

    pub fn predict(&self, x: &BowVector) -> &ElfCode {
        &self.class_labels[self.predict_index(x)]
    }

    /// Probabilities aligned with [`class_labels`](Self::class_labels).
    /// Linear-SVM values are a softmax over margins and are not calibrated.
    pub fn predict_proba(&self, x: &BowVector) -> Vec<f64> {
        match &self.model {
            Model::Cnb(m) => m.predict_proba(x),
            Model::DecisionTree(t) => t.predict_proba(x),
            Model::RandomForest(f) => f.predict_proba(x),
            Model::LinearSvm(m) => softmax(&m.margins(x)),
        }
    }

    pub fn predict_proba_map(&self, x: &BowVector) -> BTreeMap<ElfCode, f64> {
        self.class_labels.iter().cloned().zip(self.predict_proba(x)).collect()
    }
}

/// First maximal index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn code(s: &str) -> ElfCode {
        ElfCode::new(s).unwrap()
    }

    #[test]
    fn argmax_ties_to_first() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn kind_round_trip() {
        for k in ClassifierKind::all() {
            assert_eq!(k.id().parse::<ClassifierKind>().unwrap(), k);
        }
        assert!("svc".parse::<ClassifierKind>().is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        let mut spec = ClassifierSpec::new(ClassifierKind::Cnb, 1);
        spec.hyperparams.cnb_alpha = 0.0;
        let x = vec![BowVector::new(vec![], 0)];
        assert!(matches!(fit(&spec, &x, &[code("AAAA")]), Err(ClassifierError::InvalidHyperparameter(_))));
    }

    #[test]
    fn empty_training_for_all_kinds() {
        for k in ClassifierKind::all() {
            assert_eq!(fit(&ClassifierSpec::new(k, 0), &[], &[]).unwrap_err(), ClassifierError::EmptyTraining);
        }
    }

    fn dataset() -> impl Strategy<Value = (Vec<BowVector>, Vec<ElfCode>, Vec<BowVector>)> {
        let labels = prop::sample::select(vec!["AAAA", "BBBB", "CCCC"]);
        let sample = (prop::collection::vec(0u32..6, 0..4), labels);
        (
            prop::collection::vec(sample, 2..14),
            prop::collection::vec(prop::collection::vec(0u32..6, 0..4), 1..5),
        )
            .prop_map(|(train, probes)| {
                let x = train.iter().map(|(f, _)| BowVector::new(f.clone(), 6)).collect();
                let y = train.iter().map(|(_, l)| code(l)).collect();
                let p = probes.into_iter().map(|f| BowVector::new(f, 6)).collect();
                (x, y, p)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn label_closure_and_normalization((x, y, probes) in dataset(), seed in 0u64..1000) {
            for kind in ClassifierKind::all() {
                let mut spec = ClassifierSpec::new(kind, seed);
                spec.hyperparams.n_trees = 7;
                let model = fit(&spec, &x, &y).unwrap();
                for p in probes.iter().chain(x.iter()) {
                    let pred = model.predict(p);
                    prop_assert!(y.contains(pred));
                    let proba = model.predict_proba(p);
                    let total: f64 = proba.iter().sum();
                    prop_assert!((total - 1.0).abs() <= 1e-9, "{kind}: sum {total}");
                    prop_assert!(proba.iter().all(|v| (0.0..=1.0).contains(v)));
                    let best = proba.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(proba[model.predict_index(p)], best, "{}", kind);
                }
            }
        }

        #[test]
        fn deterministic_given_seed((x, y, probes) in dataset(), seed in 0u64..1000) {
            for kind in ClassifierKind::all() {
                let mut spec = ClassifierSpec::new(kind, seed);
                spec.hyperparams.n_trees = 5;
                let (a, b) = (fit(&spec, &x, &y), fit(&spec, &x, &y));
                prop_assert_eq!(&a, &b);
                if let Ok(a) = a {
                    for p in &probes {
                        prop_assert_eq!(a.predict_proba(p), b.as_ref().unwrap().predict_proba(p));
                    }
                }
            }
        }
    }
}
