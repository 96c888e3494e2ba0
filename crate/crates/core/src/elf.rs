//! ISO 20275 Entity Legal Form (ELF) code list.
//!
//! The registry is loaded once from the GLEIF-published CSV and is immutable
//! afterwards. Column names are looked up through an [`ElfColumnMap`] so a
//! revised code-list layout only needs a new mapping file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Reserved code used when no specific legal form can be assigned.
pub const RESERVED_NOT_IN_LIST: &str = "8888";
/// Second reserved code of the LEI data format.
pub const RESERVED_OTHER: &str = "9999";

#[derive(Debug, thiserror::Error)]
pub enum ElfError {
    #[error("invalid ELF code {0:?}: expected 4 characters in [A-Z0-9]")]
    InvalidCode(String),
    #[error("invalid jurisdiction {0:?}: expected CC or CC-XX")]
    InvalidJurisdiction(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate ELF code {code} (row {row})")]
    DuplicateCode { code: String, row: usize },
    #[error("missing column {0:?} in code list header")]
    MissingColumn(String),
    #[error("unknown ELF code {0}")]
    UnknownCode(String),
    #[error("column map: {0}")]
    ColumnMap(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 4-character alphanumeric ELF code such as `HZEH` or `8888`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ElfCode(String);

impl ElfCode {
    pub fn new(value: &str) -> Result<Self, ElfError> {
        let valid = value.len() == 4
            && value
                .bytes()
                .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit());
        if valid {
            Ok(ElfCode(value.to_owned()))
        } else {
            Err(ElfError::InvalidCode(value.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_reserved(&self) -> bool {
        self.0 == RESERVED_NOT_IN_LIST || self.0 == RESERVED_OTHER
    }
}

impl fmt::Display for ElfCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ElfCode {
    type Err = ElfError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElfCode::new(s)
    }
}

impl TryFrom<String> for ElfCode {
    type Error = ElfError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ElfCode::new(&s)
    }
}

impl From<ElfCode> for String {
    fn from(c: ElfCode) -> String {
        c.0
    }
}

/// Country code, optionally with a sub-division: `DE`, `US-DE`, `US-NY`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct JurisdictionCode(String);

impl JurisdictionCode {
    /// Parses after uppercasing and trimming.
    pub fn new(value: &str) -> Result<Self, ElfError> {
        let v = value.trim().to_ascii_uppercase();
        let b = v.as_bytes();
        let country_ok = |s: &[u8]| s.len() == 2 && s.iter().all(u8::is_ascii_uppercase);
        let ok = match b.len() {
            2 => country_ok(b),
            5 => {
                country_ok(&b[..2])
                    && b[2] == b'-'
                    && b[3..]
                        .iter()
                        .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
            }
            _ => false,
        };
        if ok {
            Ok(JurisdictionCode(v))
        } else {
            Err(ElfError::InvalidJurisdiction(value.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JurisdictionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for JurisdictionCode {
    type Err = ElfError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JurisdictionCode::new(s)
    }
}

impl TryFrom<String> for JurisdictionCode {
    type Error = ElfError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        JurisdictionCode::new(&s)
    }
}

impl From<JurisdictionCode> for String {
    fn from(c: JurisdictionCode) -> String {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElfStatus {
    #[serde(rename = "ACTV")]
    Active,
    #[serde(rename = "INAC")]
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElfRegistryEntry {
    pub elf_code: ElfCode,
    /// `None` only for the reserved codes.
    pub jurisdiction: Option<JurisdictionCode>,
    pub local_name: String,
    pub language: String,
    pub abbreviations: Vec<String>,
    pub status: ElfStatus,
    pub is_reserved: bool,
    /// Same legal form listed again in another official language.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub translations: Vec<(String, String)>,
}

impl ElfRegistryEntry {
    fn reserved(code: &str, name: &str) -> Self {
        ElfRegistryEntry {
            elf_code: ElfCode(code.to_owned()),
            jurisdiction: None,
            local_name: name.to_owned(),
            language: String::new(),
            abbreviations: Vec::new(),
            status: ElfStatus::Active,
            is_reserved: true,
            translations: Vec::new(),
        }
    }
}

/// Header names of the code-list CSV. Defaults follow the GLEIF 1.4.x layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElfColumnMap {
    pub elf_code: String,
    pub country_code: String,
    pub subdivision_code: String,
    pub local_name: String,
    pub language: String,
    pub abbreviations: String,
    pub status: String,
}

impl Default for ElfColumnMap {
    fn default() -> Self {
        ElfColumnMap {
            elf_code: "ELF Code".into(),
            country_code: "Country Code (ISO 3166-1)".into(),
            subdivision_code: "Country sub-division code (ISO 3166-2)".into(),
            local_name: "Entity Legal Form name Local name".into(),
            language: "Language Code (ISO 639-1)".into(),
            abbreviations: "Abbreviations Local language".into(),
            status: "ELF Status ACTV/INAC".into(),
        }
    }
}

impl ElfColumnMap {
    /// Reads a TOML mapping file; keys not present keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self, ElfError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ElfError::ColumnMap(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElfRegistry {
    entries: Vec<ElfRegistryEntry>,
    by_code: BTreeMap<ElfCode, usize>,
}

fn builtin_reserved() -> [ElfRegistryEntry; 2] {
    [
        ElfRegistryEntry::reserved(RESERVED_NOT_IN_LIST, "Legal form not yet in code list"),
        ElfRegistryEntry::reserved(RESERVED_OTHER, "Reserved code"),
    ]
}

impl ElfRegistry {
    pub fn load(path: &Path, columns: &ElfColumnMap) -> Result<Self, ElfError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, columns)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, columns: &ElfColumnMap) -> Result<Self, ElfError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize, ElfError> {
            headers
                .iter()
                .position(|h| h.trim_start_matches('\u{feff}').trim() == name)
                .ok_or_else(|| ElfError::MissingColumn(name.to_owned()))
        };
        let i_code = col(&columns.elf_code)?;
        let i_country = col(&columns.country_code)?;
        let i_sub = col(&columns.subdivision_code)?;
        let i_name = col(&columns.local_name)?;
        let i_lang = col(&columns.language)?;
        let i_abbr = col(&columns.abbreviations)?;
        let i_status = col(&columns.status)?;

        let mut registry = ElfRegistry::default();
        for (n, record) in rdr.records().enumerate() {
            // header is row 1
            let row = n + 2;
            let record = record.map_err(|e| ElfError::MalformedRow { row, reason: e.to_string() })?;
            let field = |i: usize| record.get(i).unwrap_or("").trim();
            let malformed = |reason: String| ElfError::MalformedRow { row, reason };

            let elf_code = ElfCode::new(field(i_code)).map_err(|e| malformed(e.to_string()))?;
            let is_reserved = elf_code.is_reserved();
            let jurisdiction = if is_reserved {
                None
            } else {
                let raw = if field(i_sub).is_empty() { field(i_country) } else { field(i_sub) };
                Some(JurisdictionCode::new(raw).map_err(|e| malformed(e.to_string()))?)
            };
            let status = match field(i_status) {
                "ACTV" | "" => ElfStatus::Active,
                "INAC" => ElfStatus::Inactive,
                other => return Err(malformed(format!("unknown status {other:?}"))),
            };
            let local_name = field(i_name).to_owned();
            if local_name.is_empty() && !is_reserved {
                return Err(malformed("empty local name".into()));
            }
            let entry = ElfRegistryEntry {
                elf_code,
                jurisdiction,
                local_name,
                language: field(i_lang).to_owned(),
                abbreviations: split_abbreviations(field(i_abbr)),
                status,
                is_reserved,
                translations: Vec::new(),
            };
            registry.insert(entry, row)?;
        }
        log::info!("loaded {} ELF code list entries", registry.len());
        Ok(registry)
    }

    /// Multilingual jurisdictions list one row per official language under
    /// the same code; those rows fold into the first as translations.
    fn insert(&mut self, entry: ElfRegistryEntry, row: usize) -> Result<(), ElfError> {
        match self.by_code.get(&entry.elf_code) {
            None => {
                self.by_code.insert(entry.elf_code.clone(), self.entries.len());
                self.entries.push(entry);
                Ok(())
            }
            Some(&idx) => {
                let existing = &mut self.entries[idx];
                let same_language = existing.language == entry.language
                    || existing.translations.iter().any(|(l, _)| *l == entry.language);
                if existing.jurisdiction != entry.jurisdiction || same_language || entry.is_reserved {
                    return Err(ElfError::DuplicateCode { code: entry.elf_code.to_string(), row });
                }
                for a in entry.abbreviations {
                    if !existing.abbreviations.contains(&a) {
                        existing.abbreviations.push(a);
                    }
                }
                existing.translations.push((entry.language, entry.local_name));
                Ok(())
            }
        }
    }

    /// Number of entries loaded from the file (built-in reserved codes excluded).
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in file order.
    pub fn entries(&self) -> &[ElfRegistryEntry] {
        &self.entries
    }

    pub fn contains(&self, code: &ElfCode) -> bool {
        code.is_reserved() || self.by_code.contains_key(code)
    }

    pub fn resolve(&self, code: &ElfCode) -> Result<ElfRegistryEntry, ElfError> {
        if let Some(&i) = self.by_code.get(code) {
            return Ok(self.entries[i].clone());
        }
        builtin_reserved()
            .into_iter()
            .find(|e| e.elf_code == *code)
            .ok_or_else(|| ElfError::UnknownCode(code.to_string()))
    }

    /// Non-reserved forms of `jurisdiction` plus the reserved codes, ordered by code.
    pub fn codes_for_jurisdiction(&self, jurisdiction: &JurisdictionCode) -> Vec<ElfRegistryEntry> {
        let mut out: BTreeMap<ElfCode, ElfRegistryEntry> = self
            .entries
            .iter()
            .filter(|e| e.is_reserved || e.jurisdiction.as_ref() == Some(jurisdiction))
            .map(|e| (e.elf_code.clone(), e.clone()))
            .collect();
        for r in builtin_reserved() {
            out.entry(r.elf_code.clone()).or_insert(r);
        }
        out.into_values().collect()
    }
}

fn split_abbreviations(raw: &str) -> Vec<String> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}
