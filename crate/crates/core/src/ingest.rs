//! Streaming ingestion of the LEI golden copy into per-jurisdiction
//! labeled datasets.
//!
//! Rows are classified exactly once as emitted or skipped; skips never abort
//! the stream. Only a missing required column is fatal.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elf::{ElfCode, ElfRegistry, JurisdictionCode};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing column {0:?} in golden copy header")]
    MissingColumn(String),
    #[error("column map: {0}")]
    ColumnMap(String),
    #[error("dataset {path}: line {line}: {reason}")]
    BadDataset { path: String, line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Golden-copy header names for the fields we read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoldenCopyColumns {
    pub lei: String,
    pub legal_name: String,
    pub jurisdiction: String,
    pub elf_code: String,
    pub entity_status: String,
    pub registration_status: String,
}

impl Default for GoldenCopyColumns {
    fn default() -> Self {
        GoldenCopyColumns {
            lei: "LEI".into(),
            legal_name: "Entity.LegalName".into(),
            jurisdiction: "Entity.LegalJurisdiction".into(),
            elf_code: "Entity.LegalForm.EntityLegalFormCode".into(),
            entity_status: "Entity.EntityStatus".into(),
            registration_status: "Registration.RegistrationStatus".into(),
        }
    }
}

impl GoldenCopyColumns {
    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| IngestError::ColumnMap(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityStatus {
    Active,
    Inactive,
    Null,
    Other(String),
}

impl EntityStatus {
    fn parse(s: &str) -> Self {
        match s {
            "ACTIVE" => EntityStatus::Active,
            "INACTIVE" => EntityStatus::Inactive,
            "NULL" | "" => EntityStatus::Null,
            other => EntityStatus::Other(other.to_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegistrationStatus {
    Issued,
    Lapsed,
    Other(String),
}

impl RegistrationStatus {
    fn parse(s: &str) -> Self {
        match s {
            "ISSUED" => RegistrationStatus::Issued,
            "LAPSED" => RegistrationStatus::Lapsed,
            other => RegistrationStatus::Other(other.to_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegalEntityRecord {
    pub lei: String,
    pub legal_name: String,
    pub jurisdiction: JurisdictionCode,
    pub elf_code: ElfCode,
    pub entity_status: EntityStatus,
    pub registration_status: RegistrationStatus,
}

impl LegalEntityRecord {
    pub fn in_scope(&self) -> bool {
        self.entity_status == EntityStatus::Active && self.registration_status == RegistrationStatus::Issued
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    EmptyName,
    MalformedElfCode,
    MalformedLei,
    MalformedJurisdiction,
    UnreadableRow,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SkipReason::EmptyName => "EmptyName",
            SkipReason::MalformedElfCode => "MalformedElfCode",
            SkipReason::MalformedLei => "MalformedLei",
            SkipReason::MalformedJurisdiction => "MalformedJurisdiction",
            SkipReason::UnreadableRow => "UnreadableRow",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipDiagnostic {
    /// 1-based line of the data row (header is row 1).
    pub row: u64,
    pub reason: SkipReason,
    pub detail: String,
}

/// Diagnostics kept verbatim; beyond this only counts are tracked.
pub const MAX_DIAGNOSTICS: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub total_rows: u64,
    pub emitted: u64,
    pub skipped: BTreeMap<SkipReason, u64>,
    /// Emitted records whose ELF code is not in the registry.
    pub unknown_elf_codes: u64,
    pub diagnostics: Vec<SkipDiagnostic>,
}

impl IngestStats {
    pub fn skipped_total(&self) -> u64 {
        self.skipped.values().sum()
    }
}

struct ColumnIndex {
    lei: usize,
    name: usize,
    jurisdiction: usize,
    elf: usize,
    entity_status: usize,
    registration_status: usize,
}

/// Single-pass iterator over golden-copy rows.
pub struct RecordStream<'r, R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    cols: ColumnIndex,
    registry: &'r ElfRegistry,
    stats: IngestStats,
}

pub fn ingest<'r, R: Read>(
    reader: R,
    registry: &'r ElfRegistry,
    columns: &GoldenCopyColumns,
) -> Result<RecordStream<'r, R>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_owned()))
    };
    let cols = ColumnIndex {
        lei: find(&columns.lei)?,
        name: find(&columns.legal_name)?,
        jurisdiction: find(&columns.jurisdiction)?,
        elf: find(&columns.elf_code)?,
        entity_status: find(&columns.entity_status)?,
        registration_status: find(&columns.registration_status)?,
    };
    Ok(RecordStream { rows: rdr.into_records(), cols, registry, stats: IngestStats::default() })
}

pub fn ingest_file<'r>(
    path: &Path,
    registry: &'r ElfRegistry,
    columns: &GoldenCopyColumns,
) -> Result<RecordStream<'r, std::io::BufReader<std::fs::File>>, IngestError> {
    let file = std::fs::File::open(path)?;
    ingest(std::io::BufReader::with_capacity(1 << 20, file), registry, columns)
}

impl<R: Read> RecordStream<'_, R> {
    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }

    fn skip(&mut self, row: u64, reason: SkipReason, detail: String) {
        *self.stats.skipped.entry(reason).or_default() += 1;
        if self.stats.diagnostics.len() < MAX_DIAGNOSTICS {
            self.stats.diagnostics.push(SkipDiagnostic { row, reason, detail });
        }
    }

    fn parse(&self, rec: &csv::StringRecord) -> Result<LegalEntityRecord, (SkipReason, String)> {
        let get = |i: usize| rec.get(i).unwrap_or("");
        let lei = get(self.cols.lei).trim();
        if lei.len() != 20 || !lei.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err((SkipReason::MalformedLei, lei.to_owned()));
        }
        let name = get(self.cols.name).trim();
        if name.is_empty() {
            return Err((SkipReason::EmptyName, lei.to_owned()));
        }
        let elf_raw = get(self.cols.elf).trim();
        let elf_code =
            ElfCode::new(elf_raw).map_err(|_| (SkipReason::MalformedElfCode, format!("{lei}: {elf_raw:?}")))?;
        let jur_raw = get(self.cols.jurisdiction);
        let jurisdiction = JurisdictionCode::new(jur_raw)
            .map_err(|_| (SkipReason::MalformedJurisdiction, format!("{lei}: {jur_raw:?}")))?;
        Ok(LegalEntityRecord {
            lei: lei.to_owned(),
            legal_name: name.to_owned(),
            jurisdiction,
            elf_code,
            entity_status: EntityStatus::parse(get(self.cols.entity_status).trim()),
            registration_status: RegistrationStatus::parse(get(self.cols.registration_status).trim()),
        })
    }
}

impl<R: Read> Iterator for RecordStream<'_, R> {
    type Item = LegalEntityRecord;

    fn next(&mut self) -> Option<LegalEntityRecord> {
        loop {
            let rec = self.rows.next()?;
            self.stats.total_rows += 1;
            let row = self.stats.total_rows + 1;
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    self.skip(row, SkipReason::UnreadableRow, e.to_string());
                    continue;
                }
            };
            match self.parse(&rec) {
                Ok(record) => {
                    if !self.registry.contains(&record.elf_code) {
                        self.stats.unknown_elf_codes += 1;
                        log::debug!("{}: ELF code {} not in registry", record.lei, record.elf_code);
                    }
                    self.stats.emitted += 1;
                    return Some(record);
                }
                Err((reason, detail)) => self.skip(row, reason, detail),
            }
        }
    }
}

/// Keeps active entities with an issued registration.
pub fn filter_in_scope<I>(records: I) -> impl Iterator<Item = LegalEntityRecord>
where
    I: IntoIterator<Item = LegalEntityRecord>,
{
    records.into_iter().filter(LegalEntityRecord::in_scope)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub lei: String,
    pub name: String,
    pub elf_code: ElfCode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JurisdictionDataset {
    pub jurisdiction: JurisdictionCode,
    pub samples: Vec<Sample>,
    pub class_histogram: BTreeMap<ElfCode, usize>,
    pub snapshot_id: String,
}

/// Excluded unless the caller says otherwise: CN (one dominant class) and CA
/// (forms resolved at sub-division level).
pub fn default_exclusions() -> Vec<JurisdictionCode> {
    ["CN", "CA"].iter().map(|c| JurisdictionCode::new(c).unwrap()).collect()
}

pub const DEFAULT_TOP_N: usize = 30;

impl JurisdictionDataset {
    /// Sorts samples by LEI and computes the histogram.
    pub fn new(jurisdiction: JurisdictionCode, mut samples: Vec<Sample>, snapshot_id: String) -> Self {
        samples.sort_by(|a, b| a.lei.cmp(&b.lei));
        let mut class_histogram = BTreeMap::new();
        for s in &samples {
            *class_histogram.entry(s.elf_code.clone()).or_default() += 1;
        }
        JurisdictionDataset { jurisdiction, samples, class_histogram, snapshot_id }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<ElfCode> {
        self.samples.iter().map(|s| s.elf_code.clone()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.class_histogram.len()
    }

    /// Canonical TSV: header `lei\tname\telf_code`, one sample per line.
    pub fn write_tsv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
        w.write_record(["lei", "name", "elf_code"])?;
        for s in &self.samples {
            w.write_record([s.lei.as_str(), s.name.as_str(), s.elf_code.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: Read>(
        reader: R,
        jurisdiction: JurisdictionCode,
        snapshot_id: String,
        origin: &str,
    ) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["lei", "name", "elf_code"] {
            return Err(IngestError::BadDataset {
                path: origin.to_owned(),
                line: 1,
                reason: format!("expected header lei, name, elf_code; got {headers:?}"),
            });
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |reason: String| IngestError::BadDataset { path: origin.to_owned(), line, reason };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            let elf_code = ElfCode::new(&rec[2]).map_err(|e| bad(e.to_string()))?;
            samples.push(Sample { lei: rec[0].to_owned(), name: rec[1].to_owned(), elf_code });
        }
        Ok(JurisdictionDataset::new(jurisdiction, samples, snapshot_id))
    }

    /// Loads `<dir>/<JURISDICTION>.tsv`; the snapshot id comes from a
    /// sibling `stats.json` when present.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let origin = path.display().to_string();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let jurisdiction = JurisdictionCode::new(stem).map_err(|e| IngestError::BadDataset {
            path: origin.clone(),
            line: 0,
            reason: format!("file name must be the jurisdiction code: {e}"),
        })?;
        let snapshot_id = path
            .parent()
            .map(|d| d.join("stats.json"))
            .filter(|p| p.is_file())
            .and_then(|p| std::fs::read(p).ok())
            .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
            .and_then(|v| v.get("snapshot_id").and_then(|s| s.as_str()).map(str::to_owned))
            .unwrap_or_else(|| "unknown".to_owned());
        let file = std::fs::File::open(path)?;
        Self::read_tsv(std::io::BufReader::new(file), jurisdiction, snapshot_id, &origin)
    }
}

/// Groups in-scope records by jurisdiction, drops `exclusions`, keeps the
/// `top_n` largest (ties by jurisdiction code). Output does not depend on
/// input order.
pub fn build_datasets<I>(
    records: I,
    top_n: usize,
    exclusions: &[JurisdictionCode],
    snapshot_id: &str,
) -> BTreeMap<JurisdictionCode, JurisdictionDataset>
where
    I: IntoIterator<Item = LegalEntityRecord>,
{
    let mut groups: HashMap<JurisdictionCode, Vec<Sample>> = HashMap::new();
    for r in records {
        if exclusions.contains(&r.jurisdiction) {
            continue;
        }
        groups.entry(r.jurisdiction).or_default().push(Sample {
            lei: r.lei,
            name: r.legal_name,
            elf_code: r.elf_code,
        });
    }
    let mut ranked: Vec<(JurisdictionCode, Vec<Sample>)> = groups.into_iter().collect();
    ranked.sort_by(|(ja, a), (jb, b)| b.len().cmp(&a.len()).then_with(|| ja.cmp(jb)));
    ranked.truncate(top_n);
    ranked
        .into_iter()
        .map(|(j, samples)| (j.clone(), JurisdictionDataset::new(j, samples, snapshot_id.to_owned())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormCount {
    pub elf_code: ElfCode,
    pub local_name: String,
    pub count: usize,
}

/// Per-form counts, sorted by local legal-form name.
pub fn dataset_stats(dataset: &JurisdictionDataset, registry: &ElfRegistry) -> Vec<FormCount> {
    let mut rows: Vec<FormCount> = dataset
        .class_histogram
        .iter()
        .map(|(code, &count)| FormCount {
            elf_code: code.clone(),
            local_name: registry.resolve(code).map(|e| e.local_name).unwrap_or_default(),
            count,
        })
        .collect();
    rows.sort_by(|a, b| a.local_name.cmp(&b.local_name).then_with(|| a.elf_code.cmp(&b.elf_code)));
    rows
}

/// Date prefix of a golden-copy file name (`20220914-0800-gleif-...`), else
/// the file stem.
pub fn snapshot_id_from_path(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let digits: String = name.chars().take_while(char::is_ascii_digit).collect();
    if digits.len() >= 8 {
        digits[..8].to_owned()
    } else {
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown").to_owned()
    }
}
