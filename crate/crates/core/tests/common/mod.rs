//! Synthetic golden-copy and dataset generation for integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use legalform::elf::{ElfCode, JurisdictionCode};
use legalform::ingest::{JurisdictionDataset, Sample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GOLDEN_HEADER: &str = "LEI,Entity.LegalName,Entity.LegalJurisdiction,Entity.LegalForm.EntityLegalFormCode,\
Entity.EntityStatus,Registration.RegistrationStatus,Entity.LegalAddress.City\n";

const STEMS: &[&str] = &[
    "alpha", "nord", "sued", "berg", "tal", "hansa", "rhein", "main", "elbe", "oder", "kraft", "bau", "handel",
    "invest", "capital", "holding", "immobilien", "service", "logistik", "energie", "solar", "wind", "agrar",
    "technik", "media", "consult", "partner", "verwaltung", "beteiligung", "projekt", "union", "trading",
];

/// A legal form with its name suffix variants.
pub struct Form {
    pub code: &'static str,
    pub suffixes: &'static [&'static str],
    pub weight: u32,
}

pub fn german_forms() -> Vec<Form> {
    vec![
        Form { code: "2HBR", suffixes: &["GmbH", "G.m.b.H.", "mbH", "Gesellschaft mit beschränkter Haftung"], weight: 60 },
        Form { code: "6QQB", suffixes: &["KG", "GmbH & Co. KG", "Kommanditgesellschaft"], weight: 20 },
        Form { code: "AZFE", suffixes: &["eG", "e.G."], weight: 10 },
        Form { code: "V2YH", suffixes: &["Stiftung", "Stiftung des privaten Rechts"], weight: 6 },
        Form { code: "8888", suffixes: &["Gesellschaft bürgerlichen Rechts", "GbR"], weight: 4 },
    ]
}

pub fn generic_forms() -> Vec<Form> {
    vec![
        Form { code: "AAA1", suffixes: &["Ltd", "Limited"], weight: 70 },
        Form { code: "BBB2", suffixes: &["PLC", "P.L.C."], weight: 20 },
        Form { code: "CCC3", suffixes: &["LLP"], weight: 10 },
    ]
}

pub fn synthetic_name(rng: &mut ChaCha8Rng, form: &Form) -> String {
    let n = rng.gen_range(1..=3);
    let mut words: Vec<String> = (0..n)
        .map(|_| {
            let w = STEMS.choose(rng).unwrap();
            let mut c = w.chars();
            let first = c.next().unwrap().to_uppercase().collect::<String>();
            format!("{first}{}", c.as_str())
        })
        .collect();
    if rng.gen_bool(0.2) {
        words.push(format!("{}", rng.gen_range(1..99)));
    }
    let suffix = form.suffixes.choose(rng).unwrap();
    let name = format!("{} {}", words.join(" "), suffix);
    if rng.gen_bool(0.1) { name.to_uppercase() } else { name }
}

fn pick_form<'a>(rng: &mut ChaCha8Rng, forms: &'a [Form]) -> &'a Form {
    let total: u32 = forms.iter().map(|f| f.weight).sum();
    let mut r = rng.gen_range(0..total);
    for f in forms {
        if r < f.weight {
            return f;
        }
        r -= f.weight;
    }
    unreachable!()
}

pub fn dataset(jurisdiction: &str, n: usize, forms: &[Form], seed: u64) -> JurisdictionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let form = pick_form(&mut rng, forms);
            Sample {
                lei: format!("SYN{seed:05}{i:012}"),
                name: synthetic_name(&mut rng, form),
                elf_code: ElfCode::new(form.code).unwrap(),
            }
        })
        .collect();
    JurisdictionDataset::new(JurisdictionCode::new(jurisdiction).unwrap(), samples, "synthetic".into())
}

pub fn write_dataset(dir: &Path, ds: &JurisdictionDataset) -> PathBuf {
    let path = dir.join(format!("{}.tsv", ds.jurisdiction));
    let mut buf = Vec::new();
    ds.write_tsv(&mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Golden-copy CSV with `sizes[i]` in-scope entities for jurisdiction
/// `sizes[i].0`, plus out-of-scope and malformed rows that must be dropped.
pub struct GoldenCopy {
    pub text: String,
    pub in_scope: Vec<(String, usize)>,
    pub total_rows: usize,
    pub malformed_rows: usize,
}

pub fn golden_copy(sizes: &[(&str, usize)], seed: u64) -> GoldenCopy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forms = generic_forms();
    let mut rows: Vec<String> = Vec::new();
    let mut counter = 0u64;
    let mut lei = || {
        counter += 1;
        format!("5493{counter:016}")
    };
    for &(jur, n) in sizes {
        for _ in 0..n {
            let form = pick_form(&mut rng, &forms);
            let name = synthetic_name(&mut rng, form);
            rows.push(format!("{},{},{jur},{},ACTIVE,ISSUED,Town", lei(), csv_field(&name), form.code));
        }
        // out of scope, never counted
        let form = pick_form(&mut rng, &forms);
        rows.push(format!("{},{},{jur},{},INACTIVE,ISSUED,Town", lei(), synthetic_name(&mut rng, form), form.code));
        rows.push(format!("{},{},{jur},{},ACTIVE,LAPSED,Town", lei(), synthetic_name(&mut rng, form), form.code));
    }
    let malformed = vec![
        format!("{},,DE,AAA1,ACTIVE,ISSUED,Town", lei()),
        format!("{},Broken Elf Ltd,DE,AA,ACTIVE,ISSUED,Town", lei()),
        "TOOSHORT,Short Lei Ltd,DE,AAA1,ACTIVE,ISSUED,Town".to_owned(),
        format!("{},Bad Jurisdiction Ltd,Deutschland,AAA1,ACTIVE,ISSUED,Town", lei()),
    ];
    let malformed_rows = malformed.len();
    rows.extend(malformed);
    rows.shuffle(&mut rng);
    let mut text = String::from(GOLDEN_HEADER);
    for r in &rows {
        let _ = writeln!(text, "{r}");
    }
    GoldenCopy {
        text,
        in_scope: sizes.iter().map(|&(j, n)| (j.to_owned(), n)).collect(),
        total_rows: rows.len(),
        malformed_rows,
    }
}

pub fn sample_elf_list() -> &'static str {
    legalform::fixtures::ELF_SAMPLE_CSV
}
