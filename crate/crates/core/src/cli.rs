//! Command-line front end. Each subcommand is also callable as a function
//! taking its parsed arguments and an output sink.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::classifiers::{ClassifierError, ClassifierKind, ClassifierSpec, Hyperparams};
use crate::elf::{ElfColumnMap, ElfError, ElfRegistry, JurisdictionCode};
use crate::eval::{self, EvalError, EvalReport, FoldAssignment, DEFAULT_FOLDS};
use crate::fixtures;
use crate::ingest::{self, FormCount, GoldenCopyColumns, IngestError, IngestStats, JurisdictionDataset};
use crate::model_store::{self, ModelStoreError};
use crate::pipeline::TrainedPipeline;
use crate::preprocess::PreprocessMode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Elf(#[from] ElfError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Store(#[from] ModelStoreError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn out_err(source: std::io::Error) -> CliError {
    CliError::Io { path: "<output>".into(), source }
}

fn require_file(path: &Path, flag: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: no such file {}", path.display())))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Debug, Parser)]
#[command(name = "legalform", version, about = "Classify ISO 20275 entity legal forms from legal names")]
pub struct Cli {
    /// TOML file of `flag = value` defaults; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build per-jurisdiction datasets from a golden copy.
    Ingest(IngestArgs),
    /// Train a pipeline on a dataset and save it.
    Train(TrainArgs),
    /// Cross-validate a model configuration on a dataset.
    Evaluate(EvaluateArgs),
    /// Classify names with a saved model.
    Predict(PredictArgs),
    /// List records whose recorded form the model confidently disputes.
    Challenge(ChallengeArgs),
    /// Table of best models from reports and external predictions.
    Compare(CompareArgs),
    /// Per-token contributions to a prediction.
    Explain(ExplainArgs),
    /// Score an external prediction file against a dataset.
    Score(ScoreArgs),
    /// Export the stratified fold assignment as `lei,fold` CSV.
    Folds(FoldsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long, value_name = "CSV")]
    pub golden_copy: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub elf_list: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = ingest::DEFAULT_TOP_N)]
    pub top: usize,
    /// Jurisdictions to leave out (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "CN,CA")]
    pub exclude: Vec<String>,
    /// Snapshot id; defaults to the date prefix of the golden-copy file name.
    #[arg(long)]
    pub snapshot: Option<String>,
    /// TOML column map for the golden copy.
    #[arg(long, value_name = "TOML")]
    pub golden_columns: Option<PathBuf>,
    /// TOML column map for the ELF code list.
    #[arg(long, value_name = "TOML")]
    pub elf_columns: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ClassifierKind,
    #[arg(long, value_parser = parse_mode, default_value = "extended")]
    pub prep: PreprocessMode,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub cnb_alpha: f64,
    /// Normalize CNB log-weights per class.
    #[arg(long)]
    pub cnb_norm: bool,
    #[arg(long, default_value_t = 100)]
    pub n_trees: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub svm_lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub svm_epochs: usize,
}

impl ModelArgs {
    pub fn new(model: ClassifierKind, prep: PreprocessMode, seed: u64) -> Self {
        let h = Hyperparams::default();
        ModelArgs {
            model,
            prep,
            seed,
            cnb_alpha: h.cnb_alpha,
            cnb_norm: h.cnb_norm,
            n_trees: h.n_trees,
            svm_lambda: h.svm_lambda,
            svm_epochs: h.svm_epochs,
        }
    }

    pub fn spec(&self) -> Result<ClassifierSpec, CliError> {
        let hyperparams = Hyperparams {
            cnb_alpha: self.cnb_alpha,
            cnb_norm: self.cnb_norm,
            n_trees: self.n_trees,
            bootstrap: true,
            svm_lambda: self.svm_lambda,
            svm_epochs: self.svm_epochs,
        };
        hyperparams.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(ClassifierSpec { kind: self.model, hyperparams, seed: self.seed })
    }
}

fn parse_kind(s: &str) -> Result<ClassifierKind, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<PreprocessMode, String> {
    s.parse()
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "TSV")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Stamp stored in the model file (default: $SOURCE_DATE_EPOCH or
    /// "unspecified").
    #[arg(long)]
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "TSV")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Write the JSON report here.
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
    /// Write fold predictions in the exchange format.
    #[arg(long, value_name = "CSV")]
    pub predictions: Option<PathBuf>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model_file: PathBuf,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub name: Option<String>,
    /// One legal name per line.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// ELF code list used to resolve form names (default: bundled sample).
    #[arg(long, value_name = "CSV")]
    pub elf_list: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ChallengeArgs {
    #[arg(long, value_name = "FILE")]
    pub model_file: PathBuf,
    #[arg(long, value_name = "TSV")]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub min_prob: f64,
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long = "report", value_name = "JSON")]
    pub reports: Vec<PathBuf>,
    /// External prediction files; scored against --dataset.
    #[arg(long = "predictions", value_name = "CSV", requires = "dataset")]
    pub predictions: Vec<PathBuf>,
    #[arg(long, value_name = "TSV")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[arg(long, value_name = "FILE")]
    pub model_file: PathBuf,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "CSV")]
    pub predictions: PathBuf,
    #[arg(long, value_name = "TSV")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FoldsArgs {
    #[arg(long, value_name = "TSV")]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

fn load_registry(path: &Path, columns: Option<&Path>) -> Result<ElfRegistry, CliError> {
    let map = match columns {
        Some(p) => {
            require_file(p, "--elf-columns")?;
            ElfColumnMap::from_file(p)?
        }
        None => ElfColumnMap::default(),
    };
    Ok(ElfRegistry::load(path, &map)?)
}

fn load_dataset(path: &Path) -> Result<JurisdictionDataset, CliError> {
    require_file(path, "--dataset")?;
    Ok(JurisdictionDataset::load(path)?)
}

fn load_model(path: &Path) -> Result<TrainedPipeline, CliError> {
    require_file(path, "--model-file")?;
    Ok(model_store::load(path)?)
}

#[derive(Debug, Serialize)]
pub struct JurisdictionSummary {
    pub jurisdiction: JurisdictionCode,
    pub file: String,
    pub n_samples: usize,
    pub n_classes: usize,
    pub forms: Vec<FormCount>,
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub snapshot_id: String,
    pub golden_copy: String,
    pub stats: IngestStats,
    pub in_scope: u64,
    pub top_n: usize,
    pub excluded: Vec<JurisdictionCode>,
    pub jurisdictions: Vec<JurisdictionSummary>,
}

pub fn cmd_ingest(args: &IngestArgs, out: &mut dyn Write) -> Result<IngestSummary, CliError> {
    require_file(&args.golden_copy, "--golden-copy")?;
    require_file(&args.elf_list, "--elf-list")?;
    let registry = load_registry(&args.elf_list, args.elf_columns.as_deref())?;
    let columns = match &args.golden_columns {
        Some(p) => {
            require_file(p, "--golden-columns")?;
            GoldenCopyColumns::from_file(p)?
        }
        None => GoldenCopyColumns::default(),
    };
    let excluded = args
        .exclude
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| JurisdictionCode::new(s).map_err(|e| CliError::Usage(format!("--exclude: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let snapshot_id = args.snapshot.clone().unwrap_or_else(|| ingest::snapshot_id_from_path(&args.golden_copy));

    let mut stream = ingest::ingest_file(&args.golden_copy, &registry, &columns)?;
    let mut in_scope = 0u64;
    let datasets = ingest::build_datasets(
        ingest::filter_in_scope(stream.by_ref()).inspect(|_| in_scope += 1),
        args.top,
        &excluded,
        &snapshot_id,
    );
    let stats = stream.into_stats();
    if stats.unknown_elf_codes > 0 {
        log::warn!("{} records carry ELF codes missing from the code list; kept", stats.unknown_elf_codes);
    }
    for (reason, n) in &stats.skipped {
        log::warn!("skipped {n} rows: {reason}");
    }

    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let mut jurisdictions = Vec::new();
    for (jur, ds) in &datasets {
        let file = format!("{jur}.tsv");
        let path = args.out.join(&file);
        let mut buf = Vec::new();
        ds.write_tsv(&mut buf)?;
        write_file(&path, &buf)?;
        jurisdictions.push(JurisdictionSummary {
            jurisdiction: jur.clone(),
            file,
            n_samples: ds.len(),
            n_classes: ds.n_classes(),
            forms: ingest::dataset_stats(ds, &registry),
        });
    }
    jurisdictions.sort_by(|a, b| b.n_samples.cmp(&a.n_samples).then_with(|| a.jurisdiction.cmp(&b.jurisdiction)));
    let summary = IngestSummary {
        snapshot_id,
        golden_copy: args.golden_copy.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        stats,
        in_scope,
        top_n: args.top,
        excluded,
        jurisdictions,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_file(&args.out.join("stats.json"), &json)?;

    writeln!(
        out,
        "rows {}  emitted {}  skipped {}  in scope {}  snapshot {}",
        summary.stats.total_rows,
        summary.stats.emitted,
        summary.stats.skipped_total(),
        summary.in_scope,
        summary.snapshot_id
    )
    .map_err(out_err)?;
    for j in &summary.jurisdictions {
        writeln!(out, "{:<6} {:>8} samples {:>4} classes", j.jurisdiction.as_str(), j.n_samples, j.n_classes)
            .map_err(out_err)?;
    }
    Ok(summary)
}

fn created_at(flag: &Option<String>) -> String {
    flag.clone()
        .or_else(|| std::env::var("SOURCE_DATE_EPOCH").ok())
        .unwrap_or_else(|| "unspecified".to_owned())
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainedPipeline, CliError> {
    let spec = args.model.spec()?;
    let ds = load_dataset(&args.dataset)?;
    let pipeline = TrainedPipeline::train(&ds, &spec, args.model.prep, &created_at(&args.created_at))?;
    write_file(&args.out, &model_store::to_bytes(&pipeline))?;
    writeln!(
        out,
        "{} on {} ({} samples, {} classes, {} features) -> {}",
        pipeline.model_id(),
        ds.jurisdiction,
        ds.len(),
        pipeline.class_labels().len(),
        pipeline.vocabulary.len(),
        args.out.display()
    )
    .map_err(out_err)?;
    Ok(pipeline)
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    let spec = args.model.spec()?;
    let ds = load_dataset(&args.dataset)?;
    let (report, rows) = eval::evaluate(&ds, &spec, args.model.prep, args.model.seed, args.folds)?;
    if let Some(path) = &args.out {
        write_file(path, report.to_json().as_bytes())?;
    }
    if let Some(path) = &args.predictions {
        let mut buf = Vec::new();
        eval::write_predictions(&rows, &mut buf)?;
        write_file(path, &buf)?;
    }
    let text = if args.json { report.to_json() } else { report.render_text() };
    out.write_all(text.as_bytes()).map_err(out_err)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct PredictedForm {
    pub elf_code: String,
    pub probability: f64,
    pub legal_form: String,
}

#[derive(Debug, Serialize)]
pub struct PredictionOutput {
    pub name: String,
    pub predicted: PredictedForm,
    pub top: Vec<PredictedForm>,
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<Vec<PredictionOutput>, CliError> {
    let names: Vec<String> = match (&args.name, &args.input) {
        (Some(n), _) if n.trim().is_empty() => return Err(CliError::Usage("--name must not be empty".into())),
        (Some(n), _) => vec![n.clone()],
        (None, Some(p)) => {
            require_file(p, "--input")?;
            let f = std::fs::File::open(p).map_err(io_err(p))?;
            std::io::BufReader::new(f)
                .lines()
                .collect::<Result<Vec<_>, _>>()
                .map_err(io_err(p))?
                .into_iter()
                .filter(|l| !l.trim().is_empty())
                .collect()
        }
        (None, None) => return Err(CliError::Usage("one of --name or --input is required".into())),
    };
    let pipeline = load_model(&args.model_file)?;
    let registry = match &args.elf_list {
        Some(p) => {
            require_file(p, "--elf-list")?;
            load_registry(p, None)?
        }
        None => fixtures::sample_registry(),
    };
    let form = |code: &crate::elf::ElfCode, p: f64| PredictedForm {
        elf_code: code.to_string(),
        probability: p,
        legal_form: registry.resolve(code).map(|e| e.local_name).unwrap_or_default(),
    };
    let mut results = Vec::with_capacity(names.len());
    for name in names {
        let c = pipeline.classify(&name, args.top_k);
        let r = PredictionOutput {
            predicted: form(&c.predicted, c.probability),
            top: c.top.iter().map(|(code, p)| form(code, *p)).collect(),
            name,
        };
        if args.json {
            serde_json::to_writer(&mut *out, &r)?;
            writeln!(out).map_err(out_err)?;
        } else {
            let alts: Vec<String> = r.top.iter().map(|t| format!("{}:{:.4}", t.elf_code, t.probability)).collect();
            writeln!(
                out,
                "{}\t{}\t{:.4}\t{}\t{}",
                r.name,
                r.predicted.elf_code,
                r.predicted.probability,
                r.predicted.legal_form,
                alts.join(",")
            )
            .map_err(out_err)?;
        }
        results.push(r);
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChallengeRow {
    pub lei: String,
    pub legal_name: String,
    pub jurisdiction: String,
    pub recorded_elf: String,
    pub suggested_elf: String,
    pub probability: f64,
    pub model_id: String,
}

pub fn cmd_challenge(args: &ChallengeArgs, out: &mut dyn Write) -> Result<Vec<ChallengeRow>, CliError> {
    if !(0.0..=f64::MAX).contains(&args.min_prob) {
        return Err(CliError::Usage("--min-prob must be non-negative".into()));
    }
    let pipeline = load_model(&args.model_file)?;
    let ds = load_dataset(&args.dataset)?;
    if ds.jurisdiction != pipeline.jurisdiction {
        log::warn!("model trained on {} applied to {} dataset", pipeline.jurisdiction, ds.jurisdiction);
    }
    let model_id = pipeline.model_id();
    let rows: Vec<ChallengeRow> = ds
        .samples
        .iter()
        .filter_map(|s| {
            let c = pipeline.classify(&s.name, 1);
            (c.predicted != s.elf_code && c.probability >= args.min_prob).then(|| ChallengeRow {
                lei: s.lei.clone(),
                legal_name: s.name.clone(),
                jurisdiction: ds.jurisdiction.to_string(),
                recorded_elf: s.elf_code.to_string(),
                suggested_elf: c.predicted.to_string(),
                probability: c.probability,
                model_id: model_id.clone(),
            })
        })
        .collect();

    let mut buf = format!("# min_prob={}\n# model_id={model_id}\n", args.min_prob).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["lei", "legal_name", "jurisdiction", "recorded_elf", "suggested_elf", "probability", "model_id"])?;
        for r in &rows {
            w.write_record([
                r.lei.as_str(),
                &r.legal_name,
                &r.jurisdiction,
                &r.recorded_elf,
                &r.suggested_elf,
                &format!("{:.6}", r.probability),
                &r.model_id,
            ])?;
        }
        w.flush().map_err(out_err)?;
    }
    match &args.out {
        Some(p) => {
            write_file(p, &buf)?;
            writeln!(out, "{} challenges -> {}", rows.len(), p.display()).map_err(out_err)?;
        }
        None => out.write_all(&buf).map_err(out_err)?,
    }
    Ok(rows)
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<eval::ComparisonRow, CliError> {
    if args.reports.is_empty() && args.predictions.is_empty() {
        return Err(CliError::Usage("give at least one --report or --predictions".into()));
    }
    let mut reports = Vec::new();
    for p in &args.reports {
        require_file(p, "--report")?;
        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
        reports.push(EvalReport::from_json(&text)?);
    }
    if !args.predictions.is_empty() {
        let ds = load_dataset(args.dataset.as_deref().expect("clap enforces --dataset"))?;
        for p in &args.predictions {
            require_file(p, "--predictions")?;
            let f = std::fs::File::open(p).map_err(io_err(p))?;
            let (report, warnings) = eval::score_external(std::io::BufReader::new(f), &ds)?;
            if !warnings.is_empty() {
                log::warn!("{}: {} predictions use labels absent from the dataset", p.display(), warnings.len());
            }
            reports.push(report);
        }
    }
    let row = eval::compare_models(&reports)?;
    if let Some(p) = &args.out {
        let mut json = serde_json::to_vec_pretty(&row)?;
        json.push(b'\n');
        write_file(p, &json)?;
    }
    out.write_all(eval::render_comparison(std::slice::from_ref(&row)).as_bytes()).map_err(out_err)?;
    Ok(row)
}

pub fn cmd_explain(args: &ExplainArgs, out: &mut dyn Write) -> Result<crate::pipeline::Explanation, CliError> {
    if args.name.trim().is_empty() {
        return Err(CliError::Usage("--name must not be empty".into()));
    }
    let pipeline = load_model(&args.model_file)?;
    let e = pipeline.explain(&args.name);
    if args.json {
        serde_json::to_writer_pretty(&mut *out, &e)?;
        writeln!(out).map_err(out_err)?;
    } else {
        writeln!(out, "{}  ->  {}  ({})", e.normalized, e.predicted, pipeline.model_id()).map_err(out_err)?;
        if let Some(r) = &e.runner_up {
            writeln!(out, "runner-up {r}").map_err(out_err)?;
        }
        let mut ranked: Vec<_> = e.tokens.iter().collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        for t in ranked {
            let oov = if t.in_vocabulary { "" } else { "  (not in vocabulary)" };
            writeln!(out, "{:>8.4}  {}{}", t.score, t.token, oov).map_err(out_err)?;
        }
    }
    Ok(e)
}

pub fn cmd_score(args: &ScoreArgs, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    require_file(&args.predictions, "--predictions")?;
    let ds = load_dataset(&args.dataset)?;
    let f = std::fs::File::open(&args.predictions).map_err(io_err(&args.predictions))?;
    let (report, warnings) = eval::score_external(std::io::BufReader::new(f), &ds)?;
    for w in warnings.iter().take(10) {
        let eval::ScoreWarning::UnknownLabel { lei, label } = w;
        log::warn!("{lei}: predicted label {label} does not occur in the dataset");
    }
    if warnings.len() > 10 {
        log::warn!("... {} more label warnings", warnings.len() - 10);
    }
    if let Some(p) = &args.out {
        write_file(p, report.to_json().as_bytes())?;
    }
    out.write_all(report.render_text().as_bytes()).map_err(out_err)?;
    Ok(report)
}

pub fn cmd_folds(args: &FoldsArgs, out: &mut dyn Write) -> Result<FoldAssignment, CliError> {
    let ds = load_dataset(&args.dataset)?;
    let folds = eval::stratified_folds(&ds.labels(), args.folds, args.seed)?;
    let leis: Vec<String> = ds.samples.iter().map(|s| s.lei.clone()).collect();
    let mut buf = Vec::new();
    folds.write_csv(&leis, &mut buf)?;
    write_file(&args.out, &buf)?;
    writeln!(out, "{} samples in {} folds -> {}", leis.len(), args.folds, args.out.display()).map_err(out_err)?;
    Ok(folds)
}

/// Flags for `key = value` pairs from a config file. Top-level keys apply
/// when the subcommand has such a flag; keys in a `[subcommand]` table
/// always apply. Flags already given on the command line are skipped.
fn config_flags(path: &Path, subcommand: &str, given: &[String]) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    let cmd = Cli::command();
    let known: Vec<String> = cmd
        .find_subcommand(subcommand)
        .map(|c| c.get_arguments().filter_map(|a| a.get_long().map(str::to_owned)).collect())
        .unwrap_or_default();

    let mut pairs: BTreeMap<String, (toml::Value, bool)> = BTreeMap::new();
    for (k, v) in &table {
        match v {
            toml::Value::Table(section) if k == subcommand => {
                for (sk, sv) in section {
                    pairs.insert(sk.replace('_', "-"), (sv.clone(), true));
                }
            }
            toml::Value::Table(_) => {}
            v => {
                pairs.entry(k.replace('_', "-")).or_insert((v.clone(), false));
            }
        }
    }

    let mut flags = Vec::new();
    for (key, (value, strict)) in pairs {
        if !strict && !known.contains(&key) {
            continue;
        }
        if ["config", "jobs", "verbose"].contains(&key.as_str()) {
            continue;
        }
        let flag = format!("--{key}");
        if given.iter().any(|g| g == &flag || g.starts_with(&format!("{flag}="))) {
            continue;
        }
        let scalar = |v: &toml::Value| -> Result<String, CliError> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                other => Err(CliError::Usage(format!("--config: unsupported value for {key}: {other}"))),
            }
        };
        match &value {
            toml::Value::Boolean(true) => flags.push(OsString::from(&flag)),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                for item in items {
                    flags.push(OsString::from(&flag));
                    flags.push(OsString::from(scalar(item)?));
                }
            }
            v => {
                flags.push(OsString::from(&flag));
                flags.push(OsString::from(scalar(v)?));
            }
        }
    }
    Ok(flags)
}

/// Splices config-file flags in right after the subcommand name.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            config = strs.get(i + 1).cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_owned());
        }
    }
    let Some(config) = config else { return Ok(args) };
    let subcommands: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_owned()).collect();
    let Some(pos) = strs.iter().skip(1).position(|a| subcommands.contains(a)).map(|p| p + 1) else {
        return Ok(args);
    };
    let extra = config_flags(Path::new(&config), &strs[pos], &strs)?;
    let mut out = args[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, out).map(drop),
        Command::Train(a) => cmd_train(a, out).map(drop),
        Command::Evaluate(a) => cmd_evaluate(a, out).map(drop),
        Command::Predict(a) => cmd_predict(a, out).map(drop),
        Command::Challenge(a) => cmd_challenge(a, out).map(drop),
        Command::Compare(a) => cmd_compare(a, out).map(drop),
        Command::Explain(a) => cmd_explain(a, out).map(drop),
        Command::Score(a) => cmd_score(a, out).map(drop),
        Command::Folds(a) => cmd_folds(a, out).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run(args: Vec<OsString>, out: &mut dyn Write) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return 2;
        }
        // fails only if a pool already exists, e.g. on a second call in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_expansion_respects_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        std::fs::write(&cfg, "seed = 7\nmodel = \"rf\"\ntop = 3\n[evaluate]\nfolds = 4\ncnb_norm = true\n").unwrap();
        let args: Vec<OsString> = ["legalform", "--config", cfg.to_str().unwrap(), "evaluate", "--dataset", "x.tsv", "--seed", "9"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(args).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        let Command::Evaluate(e) = cli.command else { panic!() };
        assert_eq!(e.model.seed, 9);
        assert_eq!(e.model.model, ClassifierKind::RandomForest);
        assert_eq!(e.folds, 4);
        assert!(e.model.cnb_norm);
    }

    #[test]
    fn unknown_model_is_usage_error() {
        let mut sink = Vec::new();
        let code = run(
            ["legalform", "train", "--dataset", "x.tsv", "--model", "svc", "--out", "m"].iter().map(OsString::from).collect(),
            &mut sink,
        );
        assert_eq!(code, 2);
    }
}
