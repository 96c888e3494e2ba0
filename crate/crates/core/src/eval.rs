//! Stratified k-fold cross-validation, F1 metrics over concatenated fold
//! predictions, model comparison, and scoring of externally produced
//! prediction files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit, ClassifierError, ClassifierSpec, Hyperparams};
use crate::elf::{ElfCode, JurisdictionCode};
use crate::features::Vocabulary;
use crate::ingest::JurisdictionDataset;
use crate::preprocess::{normalize, tokenize, PreprocessMode};

pub const DEFAULT_FOLDS: usize = 5;

/// Header of the prediction-exchange CSV.
pub const EXCHANGE_HEADER: [&str; 6] = ["lei", "fold", "gold_elf", "predicted_elf", "probability", "model_id"];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{samples} samples cannot be split into {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("number of folds must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("no prediction rows")]
    EmptyRows,
    #[error("reports span several jurisdictions: {0:?}")]
    MixedJurisdictions(Vec<String>),
    #[error("nothing to compare")]
    EmptyComparison,
    #[error("{} dataset samples have no prediction: {}", .0.len(), preview(.0))]
    MissingSamples(Vec<String>),
    #[error("samples predicted more than once: {}", preview(.0))]
    DuplicateSamples(Vec<String>),
    #[error("predictions for LEIs not in the dataset: {}", preview(.0))]
    UnknownSamples(Vec<String>),
    #[error("{lei}: gold label {file} in predictions but {dataset} in dataset")]
    GoldMismatch { lei: String, file: String, dataset: String },
    #[error("prediction file mixes model ids: {0:?}")]
    MixedModels(Vec<String>),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn preview(items: &[String]) -> String {
    const SHOW: usize = 10;
    let mut s = items.iter().take(SHOW).cloned().collect::<Vec<_>>().join(", ");
    if items.len() > SHOW {
        let _ = write!(s, ", ... ({} more)", items.len() - SHOW);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    /// `lei,fold` CSV in dataset order.
    pub fn write_csv<W: Write>(&self, leis: &[String], writer: W) -> Result<(), EvalError> {
        assert_eq!(leis.len(), self.fold_of.len(), "one LEI per sample");
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lei", "fold"])?;
        for (lei, fold) in leis.iter().zip(&self.fold_of) {
            w.write_record([lei.as_str(), &fold.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `lei,fold` CSV and aligns it with `leis`.
    pub fn read_csv<R: Read>(leis: &[String], n_folds: usize, reader: R) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut by_lei: HashMap<String, usize> = HashMap::new();
        let mut dup = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let fold: usize = rec
                .get(1)
                .and_then(|f| f.trim().parse().ok())
                .filter(|&f| f < n_folds)
                .ok_or_else(|| EvalError::Malformed { line, reason: format!("bad fold in {rec:?}") })?;
            if by_lei.insert(rec[0].to_owned(), fold).is_some() {
                dup.push(rec[0].to_owned());
            }
        }
        if !dup.is_empty() {
            return Err(EvalError::DuplicateSamples(dup));
        }
        let missing: Vec<String> = leis.iter().filter(|l| !by_lei.contains_key(*l)).cloned().collect();
        if !missing.is_empty() {
            return Err(EvalError::MissingSamples(missing));
        }
        let fold_of = leis.iter().map(|l| by_lei[l]).collect();
        Ok(FoldAssignment { fold_of, n_folds })
    }
}

/// Shuffles each class with a seeded generator and deals its members
/// round-robin over the folds. The deal for each class continues where the
/// previous class stopped, starting from a seeded offset, so rare classes
/// spread over different folds and fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[ElfCode], n_folds: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if n_folds < 2 {
        return Err(EvalError::InvalidFolds(n_folds));
    }
    if labels.len() < n_folds {
        return Err(EvalError::TooFewSamples { samples: labels.len(), folds: n_folds });
    }
    let mut by_class: BTreeMap<&ElfCode, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = rng.gen_range(0..n_folds);
    let mut fold_of = vec![0; labels.len()];
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + j) % n_folds;
        }
        offset = (offset + members.len()) % n_folds;
    }
    Ok(FoldAssignment { fold_of, n_folds })
}

/// Classifier seed for one fold, derived from the experiment seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_index: usize,
    pub lei: String,
    pub gold: ElfCode,
    pub predicted: ElfCode,
    pub probability: f64,
    pub fold: usize,
    pub model_id: String,
}

pub fn model_id(spec: &ClassifierSpec, mode: PreprocessMode) -> String {
    format!("{}{}", spec.kind.id(), mode.model_suffix())
}

pub fn tokenize_dataset(dataset: &JurisdictionDataset, mode: PreprocessMode) -> Vec<Vec<String>> {
    dataset.samples.par_iter().map(|s| tokenize(&normalize(&s.name, mode))).collect()
}

/// Vocabulary fitted on the training part of `fold` only.
pub fn train_vocabulary(tokens: &[Vec<String>], folds: &FoldAssignment, fold: usize) -> Vocabulary {
    Vocabulary::fit(folds.train_indices(fold).into_iter().map(|i| &tokens[i]))
}

/// Runs the full protocol and returns one prediction per sample, ordered by
/// sample index. Folds are trained concurrently.
pub fn cross_validate(
    dataset: &JurisdictionDataset,
    spec: &ClassifierSpec,
    mode: PreprocessMode,
    seed: u64,
    n_folds: usize,
) -> Result<Vec<PredictionRow>, EvalError> {
    spec.hyperparams.validate()?;
    let labels = dataset.labels();
    let folds = stratified_folds(&labels, n_folds, seed)?;
    let tokens = tokenize_dataset(dataset, mode);
    let id = model_id(spec, mode);

    let per_fold: Vec<Vec<PredictionRow>> = (0..n_folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<PredictionRow>, EvalError> {
            let vocab = train_vocabulary(&tokens, &folds, f);
            let train = folds.train_indices(f);
            let x: Vec<_> = train.iter().map(|&i| vocab.vectorize(&tokens[i])).collect();
            let y: Vec<_> = train.iter().map(|&i| labels[i].clone()).collect();
            let fold_spec = ClassifierSpec { seed: fold_seed(seed, f), ..spec.clone() };
            let model = fit(&fold_spec, &x, &y)?;
            Ok(folds
                .test_indices(f)
                .into_iter()
                .map(|i| {
                    let v = vocab.vectorize(&tokens[i]);
                    let proba = model.predict_proba(&v);
                    let k = model.predict_index(&v);
                    PredictionRow {
                        sample_index: i,
                        lei: dataset.samples[i].lei.clone(),
                        gold: labels[i].clone(),
                        predicted: model.class_labels()[k].clone(),
                        probability: proba[k],
                        fold: f,
                        model_id: id.clone(),
                    }
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<PredictionRow> = per_fold.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.sample_index);
    Ok(rows)
}

pub fn accuracy(rows: &[PredictionRow]) -> f64 {
    let correct = rows.iter().filter(|r| r.gold == r.predicted).count();
    correct as f64 / rows.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

fn confusion(rows: &[PredictionRow]) -> BTreeMap<&ElfCode, Counts> {
    let mut counts: BTreeMap<&ElfCode, Counts> = BTreeMap::new();
    for r in rows {
        if r.gold == r.predicted {
            counts.entry(&r.gold).or_default().tp += 1;
        } else {
            counts.entry(&r.gold).or_default().fn_ += 1;
            counts.entry(&r.predicted).or_default().fp += 1;
        }
    }
    counts
}

/// F1 from pooled counts: `2TP / (2TP + FP + FN)`.
pub fn micro_f1(rows: &[PredictionRow]) -> f64 {
    let total = confusion(rows).values().fold(Counts::default(), |a, c| Counts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    total.f1()
}

/// Unweighted mean of per-class F1 over gold and predicted labels.
pub fn macro_f1(rows: &[PredictionRow]) -> f64 {
    let c = confusion(rows);
    if c.is_empty() {
        return 0.0;
    }
    c.values().map(|c| c.f1()).sum::<f64>() / c.len() as f64
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(rows: &[PredictionRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let c = confusion(rows);
    c.values().map(|c| c.f1() * (c.tp + c.fn_) as f64).sum::<f64>() / rows.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn per_class(rows: &[PredictionRow]) -> BTreeMap<ElfCode, ClassMetrics> {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    confusion(rows)
        .into_iter()
        .map(|(code, c)| {
            let m = ClassMetrics {
                precision: ratio(c.tp, c.tp + c.fp),
                recall: ratio(c.tp, c.tp + c.fn_),
                f1: c.f1(),
                support: c.tp + c.fn_,
            };
            (code.clone(), m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    /// Trained and cross-validated by this toolkit.
    Traditional,
    /// Scored from an exchange-format prediction file.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub source: ReportSource,
    pub jurisdiction: JurisdictionCode,
    pub snapshot_id: String,
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_folds: usize,
    pub seed: Option<u64>,
    pub preprocess: Option<PreprocessMode>,
    pub hyperparams: Option<Hyperparams>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub per_class: BTreeMap<ElfCode, ClassMetrics>,
    pub notes: Vec<String>,
}

/// Provenance for a report beyond what the rows carry.
#[derive(Debug, Clone)]
pub struct ReportContext {
    pub model_id: String,
    pub source: ReportSource,
    pub jurisdiction: JurisdictionCode,
    pub snapshot_id: String,
    pub n_folds: usize,
    pub seed: Option<u64>,
    pub preprocess: Option<PreprocessMode>,
    pub hyperparams: Option<Hyperparams>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn from_rows(ctx: ReportContext, rows: &[PredictionRow]) -> Result<Self, EvalError> {
        if rows.is_empty() {
            return Err(EvalError::EmptyRows);
        }
        let n_classes = rows.iter().map(|r| &r.gold).collect::<BTreeSet<_>>().len();
        Ok(EvalReport {
            model_id: ctx.model_id,
            source: ctx.source,
            jurisdiction: ctx.jurisdiction,
            snapshot_id: ctx.snapshot_id,
            n_samples: rows.len(),
            n_classes,
            n_folds: ctx.n_folds,
            seed: ctx.seed,
            preprocess: ctx.preprocess,
            hyperparams: ctx.hyperparams,
            micro_f1: micro_f1(rows),
            macro_f1: macro_f1(rows),
            weighted_f1: weighted_f1(rows),
            accuracy: accuracy(rows),
            per_class: per_class(rows),
            notes: ctx.notes,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model        {} ({:?})", self.model_id, self.source);
        let _ = writeln!(s, "jurisdiction {}  snapshot {}", self.jurisdiction, self.snapshot_id);
        let _ = writeln!(s, "samples      {}  classes {}  folds {}", self.n_samples, self.n_classes, self.n_folds);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed         {seed}");
        }
        let _ = writeln!(
            s,
            "F1 {:.4}  F1-M {:.4}  F1-W {:.4}  acc {:.4}",
            self.micro_f1, self.macro_f1, self.weighted_f1, self.accuracy
        );
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = writeln!(s, "\n{:<6} {:>9} {:>9} {:>9} {:>8}", "elf", "precision", "recall", "f1", "support");
        for (code, m) in &self.per_class {
            let _ = writeln!(
                s,
                "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                code.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        s
    }
}

/// Note attached to reports of models whose probabilities are softmaxed
/// margins.
pub const UNCALIBRATED_NOTE: &str = "linear-svm probabilities are a softmax over margins and are not calibrated";

/// Cross-validates and packages the result as a report.
pub fn evaluate(
    dataset: &JurisdictionDataset,
    spec: &ClassifierSpec,
    mode: PreprocessMode,
    seed: u64,
    n_folds: usize,
) -> Result<(EvalReport, Vec<PredictionRow>), EvalError> {
    let rows = cross_validate(dataset, spec, mode, seed, n_folds)?;
    let mut notes = Vec::new();
    if spec.kind == crate::classifiers::ClassifierKind::LinearSvm {
        notes.push(UNCALIBRATED_NOTE.to_owned());
    }
    let ctx = ReportContext {
        model_id: model_id(spec, mode),
        source: ReportSource::Traditional,
        jurisdiction: dataset.jurisdiction.clone(),
        snapshot_id: dataset.snapshot_id.clone(),
        n_folds,
        seed: Some(seed),
        preprocess: Some(mode),
        hyperparams: Some(spec.hyperparams.clone()),
        notes,
    };
    Ok((EvalReport::from_rows(ctx, &rows)?, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub model_id: String,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub jurisdiction: JurisdictionCode,
    pub n_samples: usize,
    pub n_classes: usize,
    pub best_traditional_f1: Option<BestEntry>,
    pub best_traditional_macro: Option<BestEntry>,
    pub best_external_f1: Option<BestEntry>,
}

fn best_by<F: Fn(&EvalReport) -> f64>(reports: &[&EvalReport], key: F) -> Option<BestEntry> {
    let best = reports.iter().copied().reduce(|a, b| {
        let (ka, kb) = (key(a), key(b));
        if kb > ka || (kb == ka && b.model_id < a.model_id) {
            b
        } else {
            a
        }
    })?;
    Some(BestEntry { model_id: best.model_id.clone(), micro_f1: best.micro_f1, macro_f1: best.macro_f1 })
}

/// Picks the best traditional model by F1 and by macro F1, and the best
/// external model by F1. Ties go to the lexicographically smallest id.
pub fn compare_models(reports: &[EvalReport]) -> Result<ComparisonRow, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyComparison)?;
    let jurs: BTreeSet<&str> = reports.iter().map(|r| r.jurisdiction.as_str()).collect();
    if jurs.len() > 1 {
        return Err(EvalError::MixedJurisdictions(jurs.into_iter().map(str::to_owned).collect()));
    }
    let traditional: Vec<&EvalReport> = reports.iter().filter(|r| r.source == ReportSource::Traditional).collect();
    let external: Vec<&EvalReport> = reports.iter().filter(|r| r.source == ReportSource::External).collect();
    Ok(ComparisonRow {
        jurisdiction: first.jurisdiction.clone(),
        n_samples: first.n_samples,
        n_classes: first.n_classes,
        best_traditional_f1: best_by(&traditional, |r| r.micro_f1),
        best_traditional_macro: best_by(&traditional, |r| r.macro_f1),
        best_external_f1: best_by(&external, |r| r.micro_f1),
    })
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let cell = |e: &Option<BestEntry>| match e {
        Some(e) => format!("{:<16} {:.4} {:.4}", e.model_id, e.micro_f1, e.macro_f1),
        None => format!("{:<16} {:>6} {:>6}", "-", "-", "-"),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>8} {:>4} | {:<30} | {:<30} | {:<30}",
        "jur", "samples", "cls", "best by F1 (F1, F1-M)", "best by F1-M (F1, F1-M)", "best external (F1, F1-M)"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>4} | {:<30} | {:<30} | {:<30}",
            r.jurisdiction.as_str(),
            r.n_samples,
            r.n_classes,
            cell(&r.best_traditional_f1),
            cell(&r.best_traditional_macro),
            cell(&r.best_external_f1)
        );
    }
    s
}

/// Writes rows in the exchange format.
pub fn write_predictions<W: Write>(rows: &[PredictionRow], writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EXCHANGE_HEADER)?;
    for r in rows {
        w.write_record([
            r.lei.as_str(),
            &r.fold.to_string(),
            r.gold.as_str(),
            r.predicted.as_str(),
            &format!("{:.9}", r.probability),
            r.model_id.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreWarning {
    /// Predicted label never occurs as a gold label in the dataset.
    UnknownLabel { lei: String, label: ElfCode },
}

/// Validates an exchange-format file against `dataset` and scores it with
/// the same metric code as internal models. Lines starting with `#` are
/// comments.
pub fn score_external<R: Read>(
    reader: R,
    dataset: &JurisdictionDataset,
) -> Result<(EvalReport, Vec<ScoreWarning>), EvalError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != EXCHANGE_HEADER {
        return Err(EvalError::Malformed { line: 1, reason: format!("expected header {EXCHANGE_HEADER:?}, got {header:?}") });
    }

    let index: HashMap<&str, usize> = dataset.samples.iter().enumerate().map(|(i, s)| (s.lei.as_str(), i)).collect();
    let gold_labels: BTreeSet<&ElfCode> = dataset.class_histogram.keys().collect();
    let mut seen = vec![false; dataset.len()];
    let mut rows = Vec::with_capacity(dataset.len());
    let (mut unknown, mut dup) = (Vec::new(), Vec::new());
    let mut model_ids = BTreeSet::new();
    let mut warnings = Vec::new();
    let mut max_fold = 0;

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| EvalError::Malformed { line, reason };
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let lei = field(0);
        let fold: usize = field(1).parse().map_err(|_| bad(format!("fold {:?}", field(1))))?;
        let gold = ElfCode::new(field(2)).map_err(|e| bad(e.to_string()))?;
        let predicted = ElfCode::new(field(3)).map_err(|e| bad(e.to_string()))?;
        let probability: f64 = field(4)
            .parse()
            .ok()
            .filter(|p: &f64| (0.0..=1.0).contains(p))
            .ok_or_else(|| bad(format!("probability {:?}", field(4))))?;
        let Some(&i) = index.get(lei) else {
            unknown.push(lei.to_owned());
            continue;
        };
        if seen[i] {
            dup.push(lei.to_owned());
            continue;
        }
        seen[i] = true;
        let expected = &dataset.samples[i].elf_code;
        if &gold != expected {
            return Err(EvalError::GoldMismatch { lei: lei.to_owned(), file: gold.to_string(), dataset: expected.to_string() });
        }
        if !gold_labels.contains(&predicted) {
            warnings.push(ScoreWarning::UnknownLabel { lei: lei.to_owned(), label: predicted.clone() });
        }
        model_ids.insert(field(5).to_owned());
        max_fold = max_fold.max(fold);
        rows.push(PredictionRow {
            sample_index: i,
            lei: lei.to_owned(),
            gold,
            predicted,
            probability,
            fold,
            model_id: field(5).to_owned(),
        });
    }
    if !unknown.is_empty() {
        return Err(EvalError::UnknownSamples(unknown));
    }
    if !dup.is_empty() {
        return Err(EvalError::DuplicateSamples(dup));
    }
    let missing: Vec<String> =
        dataset.samples.iter().zip(&seen).filter(|(_, &s)| !s).map(|(s, _)| s.lei.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingSamples(missing));
    }
    if model_ids.len() > 1 {
        return Err(EvalError::MixedModels(model_ids.into_iter().collect()));
    }
    rows.sort_by_key(|r| r.sample_index);
    let ctx = ReportContext {
        model_id: model_ids.into_iter().next().unwrap_or_default(),
        source: ReportSource::External,
        jurisdiction: dataset.jurisdiction.clone(),
        snapshot_id: dataset.snapshot_id.clone(),
        n_folds: max_fold + 1,
        seed: None,
        preprocess: None,
        hyperparams: None,
        notes: Vec::new(),
    };
    Ok((EvalReport::from_rows(ctx, &rows)?, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ClassifierKind;
    use crate::ingest::Sample;
    use proptest::prelude::*;

    fn code(s: &str) -> ElfCode {
        ElfCode::new(s).unwrap()
    }

    fn row(gold: &str, pred: &str) -> PredictionRow {
        PredictionRow {
            sample_index: 0,
            lei: String::new(),
            gold: code(gold),
            predicted: code(pred),
            probability: 1.0,
            fold: 0,
            model_id: "m".into(),
        }
    }

    fn dataset(samples: &[(&str, &str)]) -> JurisdictionDataset {
        let samples = samples
            .iter()
            .enumerate()
            .map(|(i, (name, elf))| Sample { lei: format!("{i:0>20}"), name: (*name).into(), elf_code: code(elf) })
            .collect();
        JurisdictionDataset::new(JurisdictionCode::new("DE").unwrap(), samples, "test".into())
    }

    fn per_fold_counts<'a>(labels: &'a [ElfCode], f: &FoldAssignment) -> BTreeMap<&'a ElfCode, Vec<usize>> {
        let mut m: BTreeMap<&ElfCode, Vec<usize>> = BTreeMap::new();
        for (l, &fold) in labels.iter().zip(&f.fold_of) {
            m.entry(l).or_insert_with(|| vec![0; f.n_folds])[fold] += 1;
        }
        m
    }

    #[test]
    fn exact_divisibility() {
        let labels: Vec<_> = std::iter::repeat_n(code("AAAA"), 10).chain(std::iter::repeat_n(code("BBBB"), 5)).collect();
        let f = stratified_folds(&labels, 5, 1).unwrap();
        for counts in per_fold_counts(&labels, &f).values() {
            let n = counts[0];
            assert!(counts.iter().all(|&c| c == n));
        }
        assert_eq!(f.fold_of.len(), 15);
    }

    #[test]
    fn rare_class_in_exactly_one_fold() {
        let mut labels = vec![code("AAAA"); 9];
        labels.push(code("CCCC"));
        let f = stratified_folds(&labels, 5, 3).unwrap();
        let c = per_fold_counts(&labels, &f)[&code("CCCC")].clone();
        assert_eq!(c.iter().filter(|&&n| n == 1).count(), 1);
        assert_eq!(c.iter().sum::<usize>(), 1);
    }

    #[test]
    fn folds_deterministic_and_too_few() {
        let labels = vec![code("AAAA"), code("BBBB"), code("AAAA"), code("BBBB"), code("CCCC"), code("AAAA")];
        assert_eq!(stratified_folds(&labels, 5, 9).unwrap(), stratified_folds(&labels, 5, 9).unwrap());
        assert!(matches!(stratified_folds(&labels[..4], 5, 9), Err(EvalError::TooFewSamples { samples: 4, folds: 5 })));
        assert!(matches!(stratified_folds(&labels, 1, 9), Err(EvalError::InvalidFolds(1))));
    }

    #[test]
    fn micro_examples() {
        assert_eq!(micro_f1(&[row("AAAA", "AAAA"), row("BBBB", "BBBB")]), 1.0);
        assert_eq!(micro_f1(&[row("AAAA", "BBBB"), row("BBBB", "AAAA")]), 0.0);
        let three_of_four = [row("AAAA", "AAAA"), row("AAAA", "AAAA"), row("BBBB", "BBBB"), row("BBBB", "AAAA")];
        // TP = 3, FP = FN = 1 -> 6/8
        assert_eq!(micro_f1(&three_of_four), 0.75);
    }

    #[test]
    fn macro_examples() {
        assert_eq!(macro_f1(&[row("AAAA", "AAAA"), row("BBBB", "BBBB")]), 1.0);
        assert_eq!(macro_f1(&[row("AAAA", "AAAA")]), 1.0);
        let mut rows = vec![row("AAAA", "AAAA"); 99];
        rows.push(row("BBBB", "AAAA"));
        // F1_A = 2*99 / (2*99 + 1 + 0) = 198/199, F1_B = 0
        let expect = (198.0 / 199.0 + 0.0) / 2.0;
        assert!((macro_f1(&rows) - expect).abs() < 1e-15);
        let pc = per_class(&rows);
        assert_eq!(pc[&code("BBBB")].support, 1);
        assert_eq!(pc[&code("BBBB")].precision, 0.0);
    }

    #[test]
    fn macro_includes_predicted_only_labels() {
        // CCCC is never gold but predicted once
        let rows = [row("AAAA", "AAAA"), row("AAAA", "CCCC")];
        let pc = per_class(&rows);
        assert_eq!(pc.len(), 2);
        assert_eq!(pc[&code("CCCC")].support, 0);
        assert!((macro_f1(&rows) - (2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn macro_equals_micro_for_symmetric_confusion() {
        // two classes, 10 each, 2 errors in each direction
        let mut rows = Vec::new();
        rows.extend(std::iter::repeat_n(row("AAAA", "AAAA"), 8));
        rows.extend(std::iter::repeat_n(row("AAAA", "BBBB"), 2));
        rows.extend(std::iter::repeat_n(row("BBBB", "BBBB"), 8));
        rows.extend(std::iter::repeat_n(row("BBBB", "AAAA"), 2));
        assert!((macro_f1(&rows) - micro_f1(&rows)).abs() < 1e-15);
        assert_eq!(micro_f1(&rows), 0.8);
    }

    #[test]
    fn one_class_dataset_is_perfect() {
        let ds = dataset(&[("a gmbh", "2HBR"), ("b gmbh", "2HBR"), ("c gmbh", "2HBR"), ("d", "2HBR"), ("e", "2HBR")]);
        for kind in ClassifierKind::all() {
            let rows = cross_validate(&ds, &ClassifierSpec::new(kind, 1), PreprocessMode::Extended, 1, 5).unwrap();
            assert_eq!(micro_f1(&rows), 1.0, "{kind}");
        }
    }

    #[test]
    fn separable_word_gives_perfect_tree() {
        let mut samples = Vec::new();
        for i in 0..20 {
            samples.push((format!("alpha{i} gmbh"), "2HBR"));
            samples.push((format!("beta{i} ag"), "8888"));
        }
        let refs: Vec<(&str, &str)> = samples.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        let ds = dataset(&refs);
        let spec = ClassifierSpec::new(ClassifierKind::DecisionTree, 4);
        let rows = cross_validate(&ds, &spec, PreprocessMode::LowerOnly, 4, 5).unwrap();
        assert_eq!(micro_f1(&rows), 1.0);
        let again = cross_validate(&ds, &spec, PreprocessMode::LowerOnly, 4, 5).unwrap();
        assert_eq!(rows, again);
        assert!(rows.iter().enumerate().all(|(i, r)| r.sample_index == i));
    }

    #[test]
    fn compare_picks_best_with_ties() {
        let ds = dataset(&[("a", "2HBR"), ("b", "2HBR")]);
        let mk = |id: &str, micro: f64, macro_: f64, source: ReportSource| {
            let rows = [row("2HBR", "2HBR")];
            let mut r = EvalReport::from_rows(
                ReportContext {
                    model_id: id.into(),
                    source,
                    jurisdiction: ds.jurisdiction.clone(),
                    snapshot_id: "s".into(),
                    n_folds: 5,
                    seed: None,
                    preprocess: None,
                    hyperparams: None,
                    notes: vec![],
                },
                &rows,
            )
            .unwrap();
            r.micro_f1 = micro;
            r.macro_f1 = macro_;
            r
        };
        let t = ReportSource::Traditional;
        let cmp = compare_models(&[mk("rf", 0.95, 0.5, t), mk("dt", 0.90, 0.7, t)]).unwrap();
        assert_eq!(cmp.best_traditional_f1.unwrap().model_id, "rf");
        assert_eq!(cmp.best_traditional_macro.unwrap().model_id, "dt");
        assert!(cmp.best_external_f1.is_none());

        let single = compare_models(&[mk("cnb", 0.9, 0.8, t)]).unwrap();
        assert_eq!(single.best_traditional_f1, single.best_traditional_macro);

        let tie = compare_models(&[mk("rf", 0.9, 0.8, t), mk("cnb", 0.9, 0.8, t)]).unwrap();
        assert_eq!(tie.best_traditional_f1.unwrap().model_id, "cnb");

        let mut other = mk("x", 0.9, 0.9, t);
        other.jurisdiction = JurisdictionCode::new("SE").unwrap();
        assert!(matches!(compare_models(&[mk("rf", 0.9, 0.9, t), other]), Err(EvalError::MixedJurisdictions(_))));
        assert!(matches!(compare_models(&[]), Err(EvalError::EmptyComparison)));
    }

    fn exchange(ds: &JurisdictionDataset, skip: Option<usize>, pred: &str) -> String {
        let mut s = String::from("# produced by test\nlei,fold,gold_elf,predicted_elf,probability,model_id\n");
        for (i, smp) in ds.samples.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let p = if pred.is_empty() { smp.elf_code.as_str() } else { pred };
            s.push_str(&format!("{},{},{},{},0.987654,bert-base-uncased\n", smp.lei, i % 5, smp.elf_code, p));
        }
        s
    }

    #[test]
    fn external_echo_is_perfect() {
        let ds = dataset(&[("a", "2HBR"), ("b", "8888"), ("c", "2HBR")]);
        let (r, warnings) = score_external(exchange(&ds, None, "").as_bytes(), &ds).unwrap();
        assert_eq!(r.micro_f1, 1.0);
        assert_eq!(r.model_id, "bert-base-uncased");
        assert_eq!(r.source, ReportSource::External);
        assert!(warnings.is_empty());
    }

    #[test]
    fn external_errors() {
        let ds = dataset(&[("a", "2HBR"), ("b", "8888"), ("c", "2HBR")]);
        match score_external(exchange(&ds, Some(1), "").as_bytes(), &ds) {
            Err(EvalError::MissingSamples(l)) => assert_eq!(l, vec![ds.samples[1].lei.clone()]),
            other => panic!("{other:?}"),
        }
        let mut dup = exchange(&ds, None, "");
        dup.push_str(&format!("{},0,2HBR,2HBR,0.5,bert-base-uncased\n", ds.samples[0].lei));
        assert!(matches!(score_external(dup.as_bytes(), &ds), Err(EvalError::DuplicateSamples(_))));
        let (_, warnings) = score_external(exchange(&ds, None, "ZZZZ").as_bytes(), &ds).unwrap();
        assert_eq!(warnings.len(), 3);
        assert!(matches!(score_external("a,b\n".as_bytes(), &ds), Err(EvalError::Malformed { .. })));
    }

    #[test]
    fn predictions_round_trip_through_exchange_format() {
        let mut samples = Vec::new();
        for i in 0..10 {
            samples.push((format!("n{i} gmbh"), "2HBR"));
            samples.push((format!("n{i} eg"), "AZFE"));
        }
        let refs: Vec<(&str, &str)> = samples.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        let ds = dataset(&refs);
        let (report, rows) = evaluate(&ds, &ClassifierSpec::new(ClassifierKind::Cnb, 2), PreprocessMode::Extended, 2, 5).unwrap();
        let mut buf = Vec::new();
        write_predictions(&rows, &mut buf).unwrap();
        let (ext, _) = score_external(&buf[..], &ds).unwrap();
        assert_eq!(ext.micro_f1, report.micro_f1);
        assert_eq!(ext.macro_f1, report.macro_f1);
        assert_eq!(ext.per_class, report.per_class);
        assert_eq!(ext.model_id, "cnb+prep");
    }

    #[test]
    fn folds_csv_round_trip() {
        let labels = vec![code("AAAA"); 7];
        let leis: Vec<String> = (0..7).map(|i| format!("L{i}")).collect();
        let f = stratified_folds(&labels, 5, 0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&leis, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("lei,fold\n"));
        assert_eq!(FoldAssignment::read_csv(&leis, 5, &buf[..]).unwrap(), f);
    }

    #[test]
    fn report_json_round_trip() {
        let ds = dataset(&[("a gmbh", "2HBR"), ("b eg", "AZFE"), ("c gmbh", "2HBR"), ("d eg", "AZFE"), ("e gmbh", "2HBR")]);
        let (r, _) = evaluate(&ds, &ClassifierSpec::new(ClassifierKind::LinearSvm, 0), PreprocessMode::LowerOnly, 0, 5).unwrap();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(r.notes, vec![UNCALIBRATED_NOTE.to_owned()]);
        assert_eq!(r.per_class.values().map(|m| m.support).sum::<u64>(), r.n_samples as u64);
        assert!(r.render_text().contains("F1-M"));
    }

    proptest! {
        #[test]
        fn micro_equals_accuracy(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let codes = ["AAAA", "BBBB", "CCCC", "DDDD"];
            let rows: Vec<_> = pairs.iter().map(|&(g, p)| row(codes[g], codes[p])).collect();
            prop_assert_eq!(micro_f1(&rows), accuracy(&rows));
            let m = macro_f1(&rows);
            prop_assert!((0.0..=1.0).contains(&m));
        }

        #[test]
        fn fold_balance(counts in prop::collection::vec(1usize..40, 1..6), n_folds in 2usize..7, seed in any::<u64>()) {
            let labels: Vec<ElfCode> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(code(&format!("C{c:03}")), n))
                .collect();
            prop_assume!(labels.len() >= n_folds);
            let f = stratified_folds(&labels, n_folds, seed).unwrap();
            prop_assert!(f.fold_of.iter().all(|&x| x < n_folds));
            for c in per_fold_counts(&labels, &f).values() {
                let (lo, hi) = (c.iter().min().unwrap(), c.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
            let mut sizes = vec![0usize; n_folds];
            f.fold_of.iter().for_each(|&x| sizes[x] += 1);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
