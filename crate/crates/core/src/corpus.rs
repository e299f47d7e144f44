//! GAP-format corpus handling.
//!
//! The corpus is a tab-separated file with a header row and eleven columns:
//! `ID, Text, Pronoun, Pronoun-offset, A, A-offset, A-coref, B, B-offset,
//! B-coref, URL`. Offsets count Unicode scalar values, not bytes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GAP_COLUMNS: [&str; 11] = [
    "ID",
    "Text",
    "Pronoun",
    "Pronoun-offset",
    "A",
    "A-offset",
    "A-coref",
    "B",
    "B-offset",
    "B-coref",
    "URL",
];

/// Which candidate the pronoun refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    Neither,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::A, Label::B, Label::Neither];

    /// Column index in a prediction triple.
    pub fn index(self) -> usize {
        match self {
            Label::A => 0,
            Label::B => 1,
            Label::Neither => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn from_flags(a_coref: bool, b_coref: bool) -> Option<Label> {
        match (a_coref, b_coref) {
            (true, false) => Some(Label::A),
            (false, true) => Some(Label::B),
            (false, false) => Some(Label::Neither),
            (true, true) => None,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Label::A => (true, false),
            Label::B => (false, true),
            Label::Neither => (false, false),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::A => "A",
            Label::B => "B",
            Label::Neither => "NEITHER",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Label::A),
            "B" => Ok(Label::B),
            "NEITHER" => Ok(Label::Neither),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// One corpus row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapExample {
    pub id: String,
    pub text: String,
    pub pronoun: String,
    pub pronoun_offset: usize,
    pub name_a: String,
    pub a_offset: usize,
    pub a_coref: bool,
    pub name_b: String,
    pub b_offset: usize,
    pub b_coref: bool,
    pub url: String,
}

impl GapExample {
    pub fn label(&self) -> Label {
        // validate() rules out (true, true)
        Label::from_flags(self.a_coref, self.b_coref).unwrap_or(Label::Neither)
    }

    /// Text length in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Checks every row invariant: coreference flags are exclusive and each
    /// mention string sits at its character offset.
    pub fn validate(&self) -> Result<()> {
        if self.a_coref && self.b_coref {
            return Err(Error::Validation {
                id: self.id.clone(),
                field: "A-coref",
                message: "and B-coref are both true".into(),
            });
        }
        let chars: Vec<char> = self.text.chars().collect();
        for (field, name, offset) in [
            ("Pronoun", &self.pronoun, self.pronoun_offset),
            ("A", &self.name_a, self.a_offset),
            ("B", &self.name_b, self.b_offset),
        ] {
            if name.is_empty() {
                return Err(Error::Validation {
                    id: self.id.clone(),
                    field,
                    message: "is empty".into(),
                });
            }
            if !chars_match_at(&chars, offset, name) {
                let found: String = chars
                    .iter()
                    .skip(offset)
                    .take(name.chars().count())
                    .collect();
                return Err(Error::Validation {
                    id: self.id.clone(),
                    field,
                    message: format!("`{name}` not found at offset {offset} (text has `{found}`)"),
                });
            }
        }
        Ok(())
    }
}

/// True when `needle` occurs in `chars` starting at character `offset`.
pub(crate) fn chars_match_at(chars: &[char], offset: usize, needle: &str) -> bool {
    let mut i = offset;
    for c in needle.chars() {
        if chars.get(i) != Some(&c) {
            return false;
        }
        i += 1;
    }
    true
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Parses a GAP TSV stream. Every row is validated before it is returned.
pub fn parse_gap_tsv<R: Read>(reader: R) -> Result<Vec<GapExample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.len() != GAP_COLUMNS.len() {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected {} header columns, found {}", GAP_COLUMNS.len(), header.len()),
        });
    }

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != GAP_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", GAP_COLUMNS.len(), record.len()),
            });
        }
        let offset = |col: usize| -> Result<usize> {
            record[col].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {} is not an offset: `{}`", GAP_COLUMNS[col], &record[col]),
            })
        };
        let flag = |col: usize| -> Result<bool> {
            parse_bool(&record[col]).ok_or_else(|| Error::Parse {
                line,
                message: format!("column {} is not a boolean: `{}`", GAP_COLUMNS[col], &record[col]),
            })
        };
        let ex = GapExample {
            id: record[0].to_string(),
            text: record[1].to_string(),
            pronoun: record[2].to_string(),
            pronoun_offset: offset(3)?,
            name_a: record[4].to_string(),
            a_offset: offset(5)?,
            a_coref: flag(6)?,
            name_b: record[7].to_string(),
            b_offset: offset(8)?,
            b_coref: flag(9)?,
            url: record[10].to_string(),
        };
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

/// Writes examples back out in GAP TSV layout.
pub fn write_gap_tsv<W: std::io::Write>(examples: &[GapExample], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(writer);
    w.write_record(GAP_COLUMNS)?;
    for ex in examples {
        let bool_str = |b: bool| if b { "TRUE" } else { "FALSE" };
        w.write_record([
            ex.id.as_str(),
            &ex.text,
            &ex.pronoun,
            &ex.pronoun_offset.to_string(),
            &ex.name_a,
            &ex.a_offset.to_string(),
            bool_str(ex.a_coref),
            &ex.name_b,
            &ex.b_offset.to_string(),
            bool_str(ex.b_coref),
            &ex.url,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCorrection {
    pub id: String,
    pub corrected_label: Label,
}

/// Reads a two-column `id<TAB>label` file. A leading `id` header row is allowed.
pub fn parse_corrections<R: Read>(reader: R) -> Result<Vec<LabelCorrection>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let is_header = first && record.get(0).is_some_and(|f| f.trim().eq_ignore_ascii_case("id"));
        first = false;
        if is_header || (record.len() == 1 && record[0].trim().is_empty()) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let corrected_label = record[1].parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(LabelCorrection {
            id: record[0].trim().to_string(),
            corrected_label,
        });
    }
    Ok(out)
}

/// Rewrites the coreference flags of every corrected example.
pub fn apply_corrections(
    examples: &[GapExample],
    corrections: &[LabelCorrection],
) -> Result<Vec<GapExample>> {
    let known: HashSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let unknown: Vec<String> = corrections
        .iter()
        .filter(|c| !known.contains(c.id.as_str()))
        .map(|c| c.id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    // later corrections for the same id win
    let by_id: HashMap<&str, Label> = corrections
        .iter()
        .map(|c| (c.id.as_str(), c.corrected_label))
        .collect();
    Ok(examples
        .iter()
        .map(|ex| {
            let mut ex = ex.clone();
            if let Some(label) = by_id.get(ex.id.as_str()) {
                (ex.a_coref, ex.b_coref) = label.flags();
            }
            ex
        })
        .collect())
}

/// Deterministic k-fold partition of `0..n`: seeded shuffle, then round-robin deal.
/// Each fold is returned sorted.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!(
            "fold count {k} out of range for {n} examples (need 2 <= k <= n)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Fold membership keyed by fold number, listing example ids.
pub fn folds_to_json(examples: &[GapExample], folds: &[Vec<usize>]) -> serde_json::Value {
    let map: BTreeMap<String, Vec<&str>> = folds
        .iter()
        .enumerate()
        .map(|(i, f)| (i.to_string(), f.iter().map(|&j| examples[j].id.as_str()).collect()))
        .collect();
    serde_json::to_value(map).expect("string map serializes")
}
