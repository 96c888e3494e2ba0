//! Legal-name harmonization and whitespace tokenization.
//!
//! Two regimes are supported: plain lowercasing, and an extended eight-step
//! rule chain (lowercase, diacritics, whitespace, quotes, trailing junk,
//! comma/period correction, purge, whitespace). The extended chain is
//! idempotent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    LowerOnly,
    Extended,
}

impl PreprocessMode {
    /// Suffix appended to model ids.
    pub fn model_suffix(self) -> &'static str {
        match self {
            PreprocessMode::LowerOnly => "",
            PreprocessMode::Extended => "+prep",
        }
    }

    pub fn as_flag(self) -> &'static str {
        match self {
            PreprocessMode::LowerOnly => "lower",
            PreprocessMode::Extended => "extended",
        }
    }
}

impl fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_flag())
    }
}

impl FromStr for PreprocessMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lower" | "lower_only" => Ok(PreprocessMode::LowerOnly),
            "extended" | "prep" => Ok(PreprocessMode::Extended),
            other => Err(format!("unknown preprocessing mode {other:?} (expected lower|extended)")),
        }
    }
}

const DOUBLE_QUOTES: [char; 6] = ['"', '\u{201C}', '\u{201D}', '\u{00AB}', '\u{00BB}', '\u{201E}'];
const PURGE: [char; 6] = ['-', '(', ')', ';', '/', ','];

pub fn normalize(name: &str, mode: PreprocessMode) -> String {
    match mode {
        PreprocessMode::LowerOnly => name.to_lowercase(),
        PreprocessMode::Extended => normalize_extended(name),
    }
}

fn normalize_extended(name: &str) -> String {
    let s = name.to_lowercase();
    let s = fold_latin_diacritics(&s);
    let s = collapse_whitespace(&s);
    let s: String = s.chars().filter(|c| !DOUBLE_QUOTES.contains(c)).collect();
    let s = s.trim_end_matches(|c: char| !c.is_alphanumeric()).to_owned();
    let s = correct_commas_and_periods(&s);
    let s = purge(&s);
    collapse_whitespace(&s).trim().to_owned()
}

/// Canonical decomposition with combining marks dropped, for Latin letters
/// only. Marks attached to non-Latin bases (e.g. kana voicing marks) survive.
fn fold_latin_diacritics(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut after_latin = false;
    for c in s.chars() {
        if is_latin_letter(c) {
            out.extend(c.nfd().filter(|d| !is_combining_mark(*d)));
            after_latin = true;
        } else if is_combining_mark(c) {
            if !after_latin {
                out.push(c);
            }
        } else {
            out.push(c);
            after_latin = false;
        }
    }
    out
}

fn is_latin_letter(c: char) -> bool {
    if c.is_ascii_alphabetic() {
        return true;
    }
    let cp = c as u32;
    matches!(cp,
        0x00C0..=0x024F | 0x0250..=0x02AF | 0x1E00..=0x1EFF
        | 0x2C60..=0x2C7F | 0xA720..=0xA7FF | 0xAB30..=0xAB6F
        | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A)
        && c.is_alphabetic()
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
            }
            in_ws = true;
        } else {
            out.push(c);
            in_ws = false;
        }
    }
    out
}

/// Comma/period correction. Applied in two passes:
///
/// 1. Every maximal run of `.`/`,` that contains a comma or touches
///    whitespace, a purge character or either end of the string becomes a
///    single space
///    (`"hotel, llc"` → `"hotel  llc"`, `"co. kg"` → `"co  kg"`).
/// 2. Periods joining single-letter abbreviations are deleted, including a
///    closing period: `"l.l.c"` → `"llc"`, `"g.m.b.h."` → `"gmbh"`. The run
///    must start and end at a boundary and hold at least two letters, so
///    `"co.kg"` and `"3.5"` are left alone.
pub fn correct_commas_and_periods(s: &str) -> String {
    join_letter_abbreviations(&detach_punctuation(s))
}

fn is_boundary_char(c: char) -> bool {
    c.is_whitespace() || PURGE.contains(&c)
}

fn detach_punctuation(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == ',' {
            let start = i;
            while i < chars.len() && (chars[i] == '.' || chars[i] == ',') {
                i += 1;
            }
            let left = start == 0 || is_boundary_char(chars[start - 1]);
            let right = i == chars.len() || is_boundary_char(chars[i]);
            // a comma is purged later anyway, so the whole run goes now
            let has_comma = chars[start..i].contains(&',');
            if left || right || has_comma {
                out.push(' ');
            } else {
                out.extend(&chars[start..i]);
            }
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

fn join_letter_abbreviations(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let n = chars.len();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < n {
        let starts_run = chars[i].is_alphabetic()
            && (i == 0 || (!chars[i - 1].is_alphanumeric() && chars[i - 1] != '.'));
        if starts_run {
            // letter ( '.' letter )+ '.'?
            let mut letters = vec![chars[i]];
            let mut j = i + 1;
            while j + 1 < n && chars[j] == '.' && chars[j + 1].is_alphabetic() {
                letters.push(chars[j + 1]);
                j += 2;
            }
            let mut end = j;
            if end < n && chars[end] == '.' {
                end += 1;
            }
            let at_boundary = end == n || !chars[end].is_alphanumeric();
            if letters.len() >= 2 && at_boundary {
                out.extend(letters);
                i = end;
                continue;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}

/// Purge characters become spaces; stand-alone `&` and `+` between two words
/// become `and`.
fn purge(s: &str) -> String {
    let spaced: String = s
        .chars()
        .map(|c| if PURGE.contains(&c) { ' ' } else { c })
        .collect();
    let tokens: Vec<&str> = spaced.split_whitespace().collect();
    let last = tokens.len().saturating_sub(1);
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| match *t {
            "&" | "+" if i > 0 && i < last => "and",
            other => other,
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(normalized_name: &str) -> Vec<String> {
    normalized_name.split_whitespace().map(str::to_owned).collect()
}
