//! Bundled reference data: fourteen real-world entities illustrating
//! inconsistent legal-form spellings and token-order effects, their pinned
//! normalizations, and a small ELF code list sample.

use sha2::{Digest, Sha256};

use crate::elf::{ElfCode, ElfColumnMap, ElfRegistry, JurisdictionCode};

pub const ENTITIES_TSV: &str = include_str!("../fixtures/entities.tsv");
pub const ENTITIES_SHA256: &str = "bac55cbe6beddf220c7e2bf7632ff25d881a8c0a8bb3774f87ddfea14ce7eab7";

/// `legal_name \t lower \t extended` for every fixture entity.
pub const NORMALIZED_TSV: &str = include_str!("../fixtures/entities.normalized.tsv");

pub const ELF_SAMPLE_CSV: &str = include_str!("../fixtures/elf-code-list-sample.csv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureEntity {
    pub legal_name: String,
    pub jurisdiction: JurisdictionCode,
    pub elf_code: ElfCode,
    pub note: String,
}

fn data_lines(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().skip(1).filter(|l| !l.is_empty()).map(|l| l.split('\t').collect())
}

pub fn load_fixtures() -> Vec<FixtureEntity> {
    data_lines(ENTITIES_TSV)
        .map(|f| FixtureEntity {
            legal_name: f[0].to_owned(),
            jurisdiction: JurisdictionCode::new(f[1]).expect("fixture jurisdiction"),
            elf_code: ElfCode::new(f[2]).expect("fixture ELF code"),
            note: f[3].to_owned(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenNormalization {
    pub legal_name: String,
    pub lower: String,
    pub extended: String,
}

pub fn golden_normalizations() -> Vec<GoldenNormalization> {
    data_lines(NORMALIZED_TSV)
        .map(|f| GoldenNormalization { legal_name: f[0].to_owned(), lower: f[1].to_owned(), extended: f[2].to_owned() })
        .collect()
}

pub fn sample_registry() -> ElfRegistry {
    ElfRegistry::from_reader(ELF_SAMPLE_CSV.as_bytes(), &ElfColumnMap::default()).expect("bundled ELF sample parses")
}

pub fn entities_checksum() -> String {
    Sha256::digest(ENTITIES_TSV.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
