//! A trained end-to-end pipeline: preprocessing mode, vocabulary and fitted
//! classifier, plus the metadata needed to reproduce it.

use serde::{Deserialize, Serialize};

use crate::classifiers::{fit, ClassifierError, ClassifierKind, ClassifierSpec, FittedClassifier, Hyperparams, Model};
use crate::elf::{ElfCode, JurisdictionCode};
use crate::features::{BowVector, Vocabulary};
use crate::ingest::JurisdictionDataset;
use crate::preprocess::{normalize, tokenize, PreprocessMode};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub format_version: u32,
    pub jurisdiction: JurisdictionCode,
    pub preprocess_mode: PreprocessMode,
    pub vocabulary: Vocabulary,
    pub classifier: FittedClassifier,
    pub hyperparams: Hyperparams,
    pub training_snapshot_id: String,
    pub n_training_samples: usize,
    pub seed: u64,
    /// Free-form stamp; kept out of the clock so files are reproducible.
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub predicted: ElfCode,
    pub probability: f64,
    /// Highest-probability classes first (ties by code), including the
    /// prediction itself.
    pub top: Vec<(ElfCode, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenContribution {
    pub token: String,
    pub in_vocabulary: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub normalized: String,
    pub predicted: ElfCode,
    pub runner_up: Option<ElfCode>,
    /// One entry per distinct token, in order of first appearance.
    pub tokens: Vec<TokenContribution>,
}

impl TrainedPipeline {
    /// Fits vocabulary and classifier on the whole dataset.
    pub fn train(
        dataset: &JurisdictionDataset,
        spec: &ClassifierSpec,
        mode: PreprocessMode,
        created_at: &str,
    ) -> Result<Self, ClassifierError> {
        let tokens: Vec<Vec<String>> = dataset.samples.iter().map(|s| tokenize(&normalize(&s.name, mode))).collect();
        let vocabulary = Vocabulary::fit(&tokens);
        let x: Vec<BowVector> = tokens.iter().map(|t| vocabulary.vectorize(t)).collect();
        let classifier = fit(spec, &x, &dataset.labels())?;
        Ok(TrainedPipeline {
            format_version: FORMAT_VERSION,
            jurisdiction: dataset.jurisdiction.clone(),
            preprocess_mode: mode,
            vocabulary,
            classifier,
            hyperparams: spec.hyperparams.clone(),
            training_snapshot_id: dataset.snapshot_id.clone(),
            n_training_samples: dataset.len(),
            seed: spec.seed,
            created_at: created_at.to_owned(),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        self.classifier.kind()
    }

    pub fn model_id(&self) -> String {
        format!("{}{}", self.kind().id(), self.preprocess_mode.model_suffix())
    }

    pub fn class_labels(&self) -> &[ElfCode] {
        self.classifier.class_labels()
    }

    pub fn vectorize(&self, name: &str) -> (String, Vec<String>, BowVector) {
        let normalized = normalize(name, self.preprocess_mode);
        let tokens = tokenize(&normalized);
        let v = self.vocabulary.vectorize(&tokens);
        (normalized, tokens, v)
    }

    pub fn classify(&self, name: &str, top_k: usize) -> Classification {
        let (_, _, v) = self.vectorize(name);
        let proba = self.classifier.predict_proba(&v);
        let k = self.classifier.predict_index(&v);
        let labels = self.class_labels();
        let mut order: Vec<usize> = (0..labels.len()).collect();
        // stable sort keeps code order among equal probabilities
        order.sort_by(|&a, &b| proba[b].total_cmp(&proba[a]));
        if let Some(pos) = order.iter().position(|&i| i == k) {
            // ties at the top must still list the prediction first
            let i = order.remove(pos);
            order.insert(0, i);
        }
        Classification {
            predicted: labels[k].clone(),
            probability: proba[k],
            top: order.into_iter().take(top_k.max(1)).map(|i| (labels[i].clone(), proba[i])).collect(),
        }
    }

    /// Per-token attribution of the prediction.
    ///
    /// * CNB: the share of the score gap to the runner-up class carried by
    ///   each token's weight difference.
    /// * Linear SVM: the share of the margin gap (bias excluded) to the
    ///   runner-up carried by each token.
    /// * Trees and forests: the fraction of trees whose decision path for
    ///   this name tests the token.
    ///
    /// Out-of-vocabulary tokens score 0, as do all tokens when the gap is 0.
    pub fn explain(&self, name: &str) -> Explanation {
        let (normalized, tokens, v) = self.vectorize(name);
        let pred = self.classifier.predict_index(&v);
        let labels = self.class_labels();
        let mut runner_up = None;

        let mut unique: Vec<&str> = Vec::new();
        for t in &tokens {
            if !unique.contains(&t.as_str()) {
                unique.push(t);
            }
        }
        let feature_of = |t: &str| self.vocabulary.get(t);

        let scores: Vec<f64> = match self.classifier.model() {
            Model::Cnb(m) => {
                let s = m.scores(&v);
                runner_up = best_other(&s, pred, |a, b| a < b);
                gap_shares(&unique, feature_of, runner_up, |j, r| m.weight(r, j) - m.weight(pred, j))
            }
            Model::LinearSvm(m) => {
                let s = m.margins(&v);
                runner_up = best_other(&s, pred, |a, b| a > b);
                gap_shares(&unique, feature_of, runner_up, |j, r| m.weight(pred, j) - m.weight(r, j))
            }
            Model::DecisionTree(t) => {
                let path = t.path_features(&v);
                unique.iter().map(|tok| feature_of(tok).map_or(0.0, |j| f64::from(u8::from(path.contains(&j))))).collect()
            }
            Model::RandomForest(f) => {
                let paths: Vec<Vec<u32>> = f.trees().iter().map(|t| t.path_features(&v)).collect();
                let n = paths.len() as f64;
                unique
                    .iter()
                    .map(|tok| match feature_of(tok) {
                        Some(j) => paths.iter().filter(|p| p.contains(&j)).count() as f64 / n,
                        None => 0.0,
                    })
                    .collect()
            }
        };

        Explanation {
            normalized,
            predicted: labels[pred].clone(),
            runner_up: runner_up.map(|r| labels[r].clone()),
            tokens: unique
                .iter()
                .zip(scores)
                .map(|(t, score)| TokenContribution {
                    token: (*t).to_owned(),
                    in_vocabulary: feature_of(t).is_some(),
                    score,
                })
                .collect(),
        }
    }
}

/// Index of the best class other than `pred` under `better` (first wins).
fn best_other(scores: &[f64], pred: usize, better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if i != pred && best.is_none_or(|b| better(s, scores[b])) {
            best = Some(i);
        }
    }
    best
}

fn gap_shares(
    tokens: &[&str],
    feature_of: impl Fn(&str) -> Option<u32>,
    runner_up: Option<usize>,
    gap: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let Some(r) = runner_up else {
        return vec![0.0; tokens.len()];
    };
    let parts: Vec<f64> = tokens.iter().map(|t| feature_of(t).map_or(0.0, |j| gap(j as usize, r))).collect();
    let total: f64 = parts.iter().sum();
    if total == 0.0 {
        return vec![0.0; tokens.len()];
    }
    parts.into_iter().map(|p| p / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Sample;

    fn dataset(rows: &[(&str, &str)]) -> JurisdictionDataset {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, (n, c))| Sample { lei: format!("{i:0>20}"), name: (*n).into(), elf_code: ElfCode::new(c).unwrap() })
            .collect();
        JurisdictionDataset::new(JurisdictionCode::new("DE").unwrap(), samples, "snap".into())
    }

    fn toy() -> JurisdictionDataset {
        dataset(&[
            ("Alpha GmbH", "2HBR"),
            ("Beta GmbH", "2HBR"),
            ("Gamma G.m.b.H.", "2HBR"),
            ("Volksbank Nord eG", "AZFE"),
            ("Raiffeisen eG", "AZFE"),
            ("Stiftung Kunst", "V2YH"),
            ("Kinder Stiftung", "V2YH"),
        ])
    }

    #[test]
    fn classify_top_k() {
        for kind in ClassifierKind::all() {
            let p = TrainedPipeline::train(&toy(), &ClassifierSpec::new(kind, 3), PreprocessMode::Extended, "t").unwrap();
            let c = p.classify("Delta GmbH", 3);
            assert_eq!(c.predicted.as_str(), "2HBR", "{kind}");
            assert_eq!(c.top.len(), 3);
            assert_eq!(c.top[0].0, c.predicted);
            assert!(c.top.windows(2).all(|w| w[0].1 >= w[1].1));
            assert_eq!(p.model_id(), format!("{}+prep", kind.id()));
        }
    }

    #[test]
    fn one_class_model() {
        let ds = dataset(&[("a gmbh", "2HBR"), ("b gmbh", "2HBR")]);
        for kind in ClassifierKind::all() {
            let p = TrainedPipeline::train(&ds, &ClassifierSpec::new(kind, 0), PreprocessMode::LowerOnly, "t").unwrap();
            let c = p.classify("anything", 5);
            assert_eq!(c.predicted.as_str(), "2HBR");
            assert_eq!(c.probability, 1.0);
            assert_eq!(c.top.len(), 1);
        }
    }

    #[test]
    fn explain_cnb_single_feature_carries_everything() {
        let ds = dataset(&[("gmbh", "2HBR"), ("eg", "AZFE")]);
        let p = TrainedPipeline::train(&ds, &ClassifierSpec::new(ClassifierKind::Cnb, 0), PreprocessMode::LowerOnly, "t").unwrap();
        let e = p.explain("zzz gmbh");
        assert_eq!(e.predicted.as_str(), "2HBR");
        assert_eq!(e.runner_up.as_ref().unwrap().as_str(), "AZFE");
        assert_eq!(e.tokens.len(), 2);
        assert!(!e.tokens[0].in_vocabulary);
        assert_eq!(e.tokens[0].score, 0.0);
        assert_eq!(e.tokens[1].score, 1.0);
    }

    #[test]
    fn explain_oov_only_is_zero() {
        for kind in ClassifierKind::all() {
            let p = TrainedPipeline::train(&toy(), &ClassifierSpec::new(kind, 1), PreprocessMode::Extended, "t").unwrap();
            let e = p.explain("Unbekannt Xyz Xyz");
            assert_eq!(e.tokens.len(), 2, "duplicates collapse");
            assert!(e.tokens.iter().all(|t| t.score == 0.0 && !t.in_vocabulary), "{kind}");
        }
    }

    #[test]
    fn explain_tree_marks_path_tokens() {
        let p = TrainedPipeline::train(
            &toy(),
            &ClassifierSpec::new(ClassifierKind::DecisionTree, 0),
            PreprocessMode::Extended,
            "t",
        )
        .unwrap();
        let e = p.explain("Volksbank Odenwald eG");
        assert_eq!(e.predicted.as_str(), "AZFE");
        let eg = e.tokens.iter().find(|t| t.token == "eg").unwrap();
        let odenwald = e.tokens.iter().find(|t| t.token == "odenwald").unwrap();
        assert_eq!(odenwald.score, 0.0);
        assert!(eg.score == 1.0 || e.tokens.iter().any(|t| t.score == 1.0));
    }
}
