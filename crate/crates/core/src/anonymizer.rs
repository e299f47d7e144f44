//! Name anonymization.
//!
//! Every occurrence of the two candidate names is replaced by a placeholder
//! first name from one of four fixed sets, choosing the feminine or masculine
//! pair by the pronoun. Offsets of the pronoun and both names are remapped so
//! the transformed document still lines up with its mention spans. An example
//! expands into the original plus up to four anonymized variants; a set is
//! skipped when any of the four skip conditions holds.
//!
//! All positions are character (Unicode scalar) indices.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{chars_match_at, GapExample};
use crate::error::{Error, Result};

/// Number of placeholder sets, and therefore of augmented variants per example.
pub const SET_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PronounGender {
    Masculine,
    Feminine,
}

/// Masculine for he/him/his in any casing, feminine for everything else.
pub fn pronoun_gender(pronoun: &str) -> PronounGender {
    match pronoun.trim().to_lowercase().as_str() {
        "he" | "him" | "his" => PronounGender::Masculine,
        _ => PronounGender::Feminine,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderSet {
    pub set_id: usize,
    /// Placeholders for (A, B) when the pronoun is feminine.
    pub feminine: (String, String),
    /// Placeholders for (A, B) when the pronoun is masculine.
    pub masculine: (String, String),
}

impl PlaceholderSet {
    pub fn new(set_id: usize, feminine: (&str, &str), masculine: (&str, &str)) -> Result<Self> {
        for name in [feminine.0, feminine.1, masculine.0, masculine.1] {
            let single = !name.is_empty() && name.chars().all(char::is_alphabetic);
            if !single {
                return Err(Error::invalid(format!("placeholder `{name}` is not a single word")));
            }
        }
        if feminine.0 == feminine.1 || masculine.0 == masculine.1 {
            return Err(Error::invalid(format!("placeholder set {set_id} repeats a name")));
        }
        Ok(PlaceholderSet {
            set_id,
            feminine: (feminine.0.into(), feminine.1.into()),
            masculine: (masculine.0.into(), masculine.1.into()),
        })
    }

    /// The four standard sets.
    pub fn standard() -> Vec<PlaceholderSet> {
        [
            (("Alice", "Kate"), ("John", "Michael")),
            (("Elizabeth", "Mary"), ("James", "Henry")),
            (("Kate", "Elizabeth"), ("Michael", "James")),
            (("Mary", "Alice"), ("Henry", "John")),
        ]
        .into_iter()
        .enumerate()
        .map(|(i, (f, m))| PlaceholderSet::new(i, f, m).expect("standard sets are valid"))
        .collect()
    }

    pub fn pair(&self, gender: PronounGender) -> (&str, &str) {
        let (a, b) = match gender {
            PronounGender::Feminine => &self.feminine,
            PronounGender::Masculine => &self.masculine,
        };
        (a, b)
    }

    fn all_names(&self) -> [&str; 4] {
        [&self.feminine.0, &self.feminine.1, &self.masculine.0, &self.masculine.1]
    }
}

/// Reasons a placeholder set is not applied to an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkipCondition {
    /// A placeholder of the selected pair already occurs in the document.
    Cond1,
    /// A two-word candidate has its first or last word standing alone elsewhere.
    Cond2,
    /// A candidate has more than two words.
    Cond3,
    /// One candidate is a substring of the other, or their mentions collide.
    Cond4,
}

impl SkipCondition {
    pub const ALL: [SkipCondition; 4] = [
        SkipCondition::Cond1,
        SkipCondition::Cond2,
        SkipCondition::Cond3,
        SkipCondition::Cond4,
    ];

    /// Whether the condition depends on the placeholder set.
    pub fn set_dependent(self) -> bool {
        self == SkipCondition::Cond1
    }
}

impl fmt::Display for SkipCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

// ---------------------------------------------------------------------------
// Word scanning
// ---------------------------------------------------------------------------

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-' | '\u{2010}' | '\u{2011}')
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Does the word containing `chars[i - 1]` continue into position `i`?
/// Words are letters joined by internal apostrophes or hyphens; a trailing
/// possessive (`'s` or a bare `'`) is not part of the word.
fn continues_right(chars: &[char], j: usize) -> bool {
    match chars.get(j) {
        None => false,
        Some(c) if c.is_alphabetic() => true,
        Some(&c) if is_joiner(c) => {
            let next_alpha = chars.get(j + 1).is_some_and(|n| n.is_alphabetic());
            if !next_alpha {
                return false;
            }
            if is_apostrophe(c) && chars.get(j + 1) == Some(&'s') {
                // possessive `'s` ends the word unless more letters follow
                return chars.get(j + 2).is_some_and(|n| n.is_alphabetic() || is_joiner(*n));
            }
            true
        }
        Some(_) => false,
    }
}

fn continues_left(chars: &[char], i: usize) -> bool {
    if i == 0 {
        return false;
    }
    let c = chars[i - 1];
    if c.is_alphabetic() {
        return true;
    }
    is_joiner(c) && i >= 2 && chars[i - 2].is_alphabetic()
}

/// Character spans of every whole-word, case-sensitive occurrence of `needle`.
pub fn whole_word_spans(chars: &[char], needle: &str) -> Vec<(usize, usize)> {
    let needle: Vec<char> = needle.chars().collect();
    let n = needle.len();
    let mut out = Vec::new();
    if n == 0 || n > chars.len() {
        return out;
    }
    let mut i = 0;
    while i + n <= chars.len() {
        if chars[i..i + n] == needle[..] && !continues_left(chars, i) && !continues_right(chars, i + n) {
            out.push((i, i + n));
            i += n;
        } else {
            i += 1;
        }
    }
    out
}

pub fn contains_word(text: &str, word: &str) -> bool {
    let chars: Vec<char> = text.chars().collect();
    !whole_word_spans(&chars, word).is_empty()
}

fn name_words(name: &str) -> Vec<&str> {
    name.split_whitespace().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OccurrenceKind {
    /// The complete candidate name.
    Full,
    /// The first or last word of a two-word name standing alone.
    LoneWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub start: usize,
    pub end: usize,
    pub kind: OccurrenceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NameOccurrences {
    pub a: Vec<Occurrence>,
    pub b: Vec<Occurrence>,
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Every whole-word occurrence of each candidate name in `text`. For a
/// two-word name, lone occurrences of its first or last word are included too
/// (as long as they are not inside a full occurrence of either candidate).
/// Spans within one name are sorted and non-overlapping.
pub fn find_name_occurrences(text: &str, name_a: &str, name_b: &str) -> NameOccurrences {
    let chars: Vec<char> = text.chars().collect();
    find_occurrences_in(&chars, name_a, name_b)
}

fn find_occurrences_in(chars: &[char], name_a: &str, name_b: &str) -> NameOccurrences {
    let full_a = whole_word_spans(chars, name_a.trim());
    let full_b = whole_word_spans(chars, name_b.trim());
    let all_full: Vec<(usize, usize)> = full_a.iter().chain(&full_b).copied().collect();

    let collect = |name: &str, full: &[(usize, usize)]| -> Vec<Occurrence> {
        let mut occ: Vec<Occurrence> = full
            .iter()
            .map(|&(start, end)| Occurrence { start, end, kind: OccurrenceKind::Full })
            .collect();
        let words = name_words(name);
        if words.len() == 2 {
            let mut seen = BTreeSet::new();
            for w in words {
                if !seen.insert(w) {
                    continue;
                }
                for span in whole_word_spans(chars, w) {
                    if all_full.iter().any(|&f| overlaps(f, span)) {
                        continue;
                    }
                    occ.push(Occurrence { start: span.0, end: span.1, kind: OccurrenceKind::LoneWord });
                }
            }
        }
        occ.sort_by_key(|o| (o.start, o.end));
        let mut out: Vec<Occurrence> = Vec::with_capacity(occ.len());
        for o in occ {
            if out.last().is_none_or(|p| p.end <= o.start) {
                out.push(o);
            }
        }
        out
    };

    NameOccurrences {
        a: collect(name_a, &full_a),
        b: collect(name_b, &full_b),
    }
}

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

/// One version of an example's document: the original (variant 0) or its
/// anonymization under placeholder set `variant_id - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedVariant {
    pub id: String,
    #[serde(rename = "variant")]
    pub variant_id: usize,
    pub applied: bool,
    pub skip_reasons: BTreeSet<SkipCondition>,
    pub text: String,
    pub pronoun_offset: usize,
    pub a_offset: usize,
    pub b_offset: usize,
    pub pronoun: String,
    pub name_a: String,
    pub name_b: String,
}

impl AugmentedVariant {
    pub fn original(ex: &GapExample) -> Self {
        AugmentedVariant {
            id: ex.id.clone(),
            variant_id: 0,
            applied: false,
            skip_reasons: BTreeSet::new(),
            text: ex.text.clone(),
            pronoun_offset: ex.pronoun_offset,
            a_offset: ex.a_offset,
            b_offset: ex.b_offset,
            pronoun: ex.pronoun.clone(),
            name_a: ex.name_a.clone(),
            name_b: ex.name_b.clone(),
        }
    }

    /// Whether this variant is meant to be embedded and scored.
    pub fn usable(&self) -> bool {
        self.variant_id == 0 || self.applied
    }

    /// Character spans (start, end) for A, B and the pronoun.
    pub fn spans(&self) -> [(usize, usize); 3] {
        let span = |o: usize, s: &str| (o, o + s.chars().count());
        [
            span(self.a_offset, &self.name_a),
            span(self.b_offset, &self.name_b),
            span(self.pronoun_offset, &self.pronoun),
        ]
    }

    /// Substring checks for all three mentions.
    pub fn check_offsets(&self) -> Result<()> {
        let chars: Vec<char> = self.text.chars().collect();
        for (field, s, o) in [
            ("Pronoun", &self.pronoun, self.pronoun_offset),
            ("A", &self.name_a, self.a_offset),
            ("B", &self.name_b, self.b_offset),
        ] {
            if !chars_match_at(&chars, o, s) {
                return Err(Error::Validation {
                    id: format!("{}#{}", self.id, self.variant_id),
                    field,
                    message: format!("`{s}` not at remapped offset {o}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSet {
    pub set_id: usize,
    pub reasons: BTreeSet<SkipCondition>,
}

/// Result of expanding one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    /// Original first, then one variant per applied set (1 to 5 entries).
    pub variants: Vec<AugmentedVariant>,
    pub skipped: Vec<SkippedSet>,
}

impl Expansion {
    /// One record per variant slot (always `1 + SET_COUNT`), skipped sets
    /// carrying the original text with `applied = false`.
    pub fn records(&self) -> Vec<AugmentedVariant> {
        let mut out = self.variants.clone();
        let original = &self.variants[0];
        for s in &self.skipped {
            out.push(AugmentedVariant {
                variant_id: s.set_id + 1,
                skip_reasons: s.reasons.clone(),
                ..original.clone()
            });
        }
        out.sort_by_key(|v| v.variant_id);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizerOptions {
    /// Check all four names of a set for the placeholder-presence condition
    /// instead of only the gender-selected pair.
    pub widen_cond1: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anonymizer {
    sets: Vec<PlaceholderSet>,
    options: AnonymizerOptions,
}

impl Default for Anonymizer {
    fn default() -> Self {
        Anonymizer::new(PlaceholderSet::standard(), AnonymizerOptions::default())
    }
}

/// Planned replacements for one (example, set) pair.
struct Plan {
    chars: Vec<char>,
    occurrences: NameOccurrences,
}

impl Anonymizer {
    pub fn new(sets: Vec<PlaceholderSet>, options: AnonymizerOptions) -> Self {
        Anonymizer { sets, options }
    }

    pub fn sets(&self) -> &[PlaceholderSet] {
        &self.sets
    }

    pub fn options(&self) -> &AnonymizerOptions {
        &self.options
    }

    fn plan(ex: &GapExample) -> Plan {
        let chars: Vec<char> = ex.text.chars().collect();
        let occurrences = find_occurrences_in(&chars, &ex.name_a, &ex.name_b);
        Plan { chars, occurrences }
    }

    /// Conditions that do not depend on the placeholder set (2 to 4).
    fn example_conditions(ex: &GapExample, plan: &Plan) -> BTreeSet<SkipCondition> {
        let mut out = BTreeSet::new();
        let words_a = name_words(&ex.name_a);
        let words_b = name_words(&ex.name_b);

        if words_a.len() > 2 || words_b.len() > 2 {
            out.insert(SkipCondition::Cond3);
        }

        let has_lone = |occ: &[Occurrence], words: &[&str]| {
            words.len() == 2 && occ.iter().any(|o| o.kind == OccurrenceKind::LoneWord)
        };
        if has_lone(&plan.occurrences.a, &words_a) || has_lone(&plan.occurrences.b, &words_b) {
            out.insert(SkipCondition::Cond2);
        }

        let (a, b) = (ex.name_a.trim(), ex.name_b.trim());
        if a.contains(b) || b.contains(a) || mentions_collide(ex, plan) {
            out.insert(SkipCondition::Cond4);
        }
        out
    }

    fn placeholder_present(&self, ex: &GapExample, chars: &[char], set: &PlaceholderSet) -> bool {
        let gender = pronoun_gender(&ex.pronoun);
        let (pa, pb) = set.pair(gender);
        let names: Vec<&str> = if self.options.widen_cond1 {
            set.all_names().to_vec()
        } else {
            vec![pa, pb]
        };
        names.iter().any(|n| !whole_word_spans(chars, n).is_empty())
    }

    pub fn check_skip_conditions(&self, ex: &GapExample, set: &PlaceholderSet) -> BTreeSet<SkipCondition> {
        let plan = Self::plan(ex);
        let mut out = Self::example_conditions(ex, &plan);
        if self.placeholder_present(ex, &plan.chars, set) {
            out.insert(SkipCondition::Cond1);
        }
        out
    }

    /// Replaces every occurrence of A and B under `set`. Fails if the
    /// replacement spans collide; callers should check skip conditions first.
    pub fn apply_placeholders(&self, ex: &GapExample, set: &PlaceholderSet) -> Result<AugmentedVariant> {
        let plan = Self::plan(ex);
        apply_plan(ex, &plan, set, self.variant_for(set))
    }

    fn variant_for(&self, set: &PlaceholderSet) -> usize {
        self.sets
            .iter()
            .position(|s| s == set)
            .unwrap_or(set.set_id)
            + 1
    }

    pub fn expand(&self, ex: &GapExample) -> Expansion {
        let plan = Self::plan(ex);
        let shared = Self::example_conditions(ex, &plan);
        let mut variants = vec![AugmentedVariant::original(ex)];
        let mut skipped = Vec::new();
        for (i, set) in self.sets.iter().enumerate() {
            let mut reasons = shared.clone();
            if self.placeholder_present(ex, &plan.chars, set) {
                reasons.insert(SkipCondition::Cond1);
            }
            if reasons.is_empty() {
                match apply_plan(ex, &plan, set, i + 1) {
                    Ok(v) => {
                        variants.push(v);
                        continue;
                    }
                    Err(_) => {
                        reasons.insert(SkipCondition::Cond4);
                    }
                }
            }
            skipped.push(SkippedSet { set_id: i, reasons });
        }
        Expansion { variants, skipped }
    }

    /// The original plus every applied variant.
    pub fn expand_with_tta(&self, ex: &GapExample) -> Vec<AugmentedVariant> {
        self.expand(ex).variants
    }
}

/// The labeled mentions must be whole-word full occurrences, A and B must not
/// overlap one another, and the pronoun must not sit inside a name.
fn mentions_collide(ex: &GapExample, plan: &Plan) -> bool {
    let occ = &plan.occurrences;
    let a_len = ex.name_a.chars().count();
    let b_len = ex.name_b.chars().count();
    let labeled = |list: &[Occurrence], off: usize, len: usize| {
        list.iter()
            .any(|o| o.kind == OccurrenceKind::Full && o.start == off && o.end == off + len)
    };
    if !labeled(&occ.a, ex.a_offset, a_len) || !labeled(&occ.b, ex.b_offset, b_len) {
        return true;
    }
    let p = (ex.pronoun_offset, ex.pronoun_offset + ex.pronoun.chars().count());
    for x in &occ.a {
        if occ.b.iter().any(|y| overlaps((x.start, x.end), (y.start, y.end))) {
            return true;
        }
    }
    occ.a.iter().chain(&occ.b).any(|o| overlaps((o.start, o.end), p))
}

fn apply_plan(ex: &GapExample, plan: &Plan, set: &PlaceholderSet, variant_id: usize) -> Result<AugmentedVariant> {
    let gender = pronoun_gender(&ex.pronoun);
    let (pa, pb) = set.pair(gender);

    let mut edits: Vec<(usize, usize, &str)> = plan
        .occurrences
        .a
        .iter()
        .map(|o| (o.start, o.end, pa))
        .chain(plan.occurrences.b.iter().map(|o| (o.start, o.end, pb)))
        .collect();
    edits.sort_by_key(|e| (e.0, e.1));
    for w in edits.windows(2) {
        if w[0].1 > w[1].0 {
            return Err(Error::OverlappingSpans(format!(
                "{}: [{}, {}) and [{}, {})",
                ex.id, w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    let p_end = ex.pronoun_offset + ex.pronoun.chars().count();
    if edits.iter().any(|e| overlaps((e.0, e.1), (ex.pronoun_offset, p_end))) {
        return Err(Error::OverlappingSpans(format!("{}: pronoun inside a name", ex.id)));
    }

    let mut text = String::with_capacity(ex.text.len());
    let mut cursor = 0;
    for &(start, end, rep) in &edits {
        text.extend(&plan.chars[cursor..start]);
        text.push_str(rep);
        cursor = end;
    }
    text.extend(&plan.chars[cursor..]);

    // shift = summed length change of edits starting strictly before `pos`
    let remap = |pos: usize| -> usize {
        let shift: isize = edits
            .iter()
            .filter(|e| e.0 < pos)
            .map(|e| rep_len(e.2) as isize - (e.1 - e.0) as isize)
            .sum();
        (pos as isize + shift) as usize
    };

    let v = AugmentedVariant {
        id: ex.id.clone(),
        variant_id,
        applied: true,
        skip_reasons: BTreeSet::new(),
        text,
        pronoun_offset: remap(ex.pronoun_offset),
        a_offset: remap(ex.a_offset),
        b_offset: remap(ex.b_offset),
        pronoun: ex.pronoun.clone(),
        name_a: pa.to_string(),
        name_b: pb.to_string(),
    };
    v.check_offsets()?;
    Ok(v)
}

fn rep_len(s: &str) -> usize {
    s.chars().count()
}

// ---------------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------------

/// How often each skip condition fires over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub examples: usize,
    /// Fraction of examples augmented by each set.
    pub augmented_per_set: Vec<f64>,
    /// Mean of `augmented_per_set`.
    pub augmented_fraction: f64,
    /// Fraction augmented by every set.
    pub all_sets_fraction: f64,
    /// Fraction not augmented by any set.
    pub none_fraction: f64,
    /// Per set, fraction of examples where the placeholder-presence condition holds.
    pub cond1_per_set: Vec<f64>,
    pub cond2: f64,
    pub cond3: f64,
    pub cond4: f64,
}

pub fn coverage(expansions: &[Expansion], set_count: usize) -> CoverageReport {
    let n = expansions.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mut applied = vec![0usize; set_count];
    let mut cond1 = vec![0usize; set_count];
    let (mut c2, mut c3, mut c4, mut all, mut none) = (0, 0, 0, 0, 0);
    for e in expansions {
        for v in e.variants.iter().filter(|v| v.applied) {
            applied[v.variant_id - 1] += 1;
        }
        let applied_here = e.variants.len() - 1;
        if applied_here == set_count {
            all += 1;
        }
        if applied_here == 0 {
            none += 1;
        }
        for s in &e.skipped {
            if s.reasons.contains(&SkipCondition::Cond1) {
                cond1[s.set_id] += 1;
            }
        }
        // set-independent conditions are identical across skipped sets
        if let Some(s) = e.skipped.first() {
            c2 += s.reasons.contains(&SkipCondition::Cond2) as usize;
            c3 += s.reasons.contains(&SkipCondition::Cond3) as usize;
            c4 += s.reasons.contains(&SkipCondition::Cond4) as usize;
        }
    }
    let augmented_per_set: Vec<f64> = applied.into_iter().map(frac).collect();
    let augmented_fraction = if set_count == 0 {
        0.0
    } else {
        augmented_per_set.iter().sum::<f64>() / set_count as f64
    };
    CoverageReport {
        examples: n,
        augmented_per_set,
        augmented_fraction,
        all_sets_fraction: frac(all),
        none_fraction: frac(none),
        cond1_per_set: cond1.into_iter().map(frac).collect(),
        cond2: frac(c2),
        cond3: frac(c3),
        cond4: frac(c4),
    }
}

/// Writes one JSON object per line.
pub fn write_variants_jsonl<W: std::io::Write>(variants: &[AugmentedVariant], mut w: W) -> Result<()> {
    for v in variants {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_variants_jsonl<R: std::io::BufRead>(r: R) -> Result<Vec<AugmentedVariant>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: AugmentedVariant = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}
