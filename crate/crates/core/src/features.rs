//! Hand-built pair features for the pair scorer: token distance to the
//! pronoun, its bucket, and whether the candidate appears in the page URL.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::anonymizer::AugmentedVariant;
use crate::corpus::GapExample;
use crate::error::Result;

/// Number of distance buckets.
pub const BUCKETS: usize = 10;

/// Whitespace tokens as character spans.
fn whitespace_tokens(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in chars.iter().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, chars.len()));
    }
    out
}

/// Number of whitespace tokens lying entirely between the two spans,
/// negative when `first` comes after `second`. Overlapping spans give 0.
pub fn token_distance(text: &str, first: (usize, usize), second: (usize, usize)) -> i64 {
    if first.0 < second.1 && second.0 < first.1 || first == second {
        return 0;
    }
    let (lo, hi, sign) = if first.0 < second.0 { (first, second, 1) } else { (second, first, -1) };
    let chars: Vec<char> = text.chars().collect();
    let between = whitespace_tokens(&chars)
        .into_iter()
        .filter(|&(s, e)| s >= lo.1 && e <= hi.0)
        .count() as i64;
    sign * between
}

fn url_words(url: &str) -> Vec<String> {
    let decoded = percent_encoding::percent_decode_str(url).decode_utf8_lossy();
    decoded
        .replace('_', " ")
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True when every word of `name` is a whole word of the URL (underscores read
/// as spaces, percent-escapes decoded, case ignored).
pub fn name_in_url(name: &str, url: &str) -> bool {
    if url.trim().is_empty() {
        return false;
    }
    let words = url_words(url);
    let mut any = false;
    for w in name.split_whitespace() {
        let w = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if w.is_empty() {
            continue;
        }
        any = true;
        if !words.contains(&w) {
            return false;
        }
    }
    any
}

/// Buckets `|dist|` into {0, 1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+}.
pub fn bucket_distance(dist: i64) -> usize {
    match dist.unsigned_abs() {
        d @ 0..=4 => d as usize,
        5..=7 => 5,
        8..=15 => 6,
        16..=31 => 7,
        32..=63 => 8,
        _ => 9,
    }
}

/// Source of extra per-candidate features. The default supplies none.
pub trait LinguisticProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, variant: &AugmentedVariant, candidate_is_a: bool) -> Vec<f64>;
}

/// Zero vector of a fixed width.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroLinguistic(pub usize);

impl LinguisticProvider for ZeroLinguistic {
    fn dim(&self) -> usize {
        self.0
    }

    fn features(&self, _: &AugmentedVariant, _: bool) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandFeatures {
    pub dist_a: i64,
    pub dist_b: i64,
    pub a_in_url: bool,
    pub b_in_url: bool,
    pub bucketed_dist_a: usize,
    pub bucketed_dist_b: usize,
    pub linguistic_a: Vec<f64>,
    pub linguistic_b: Vec<f64>,
}

impl HandFeatures {
    /// Distances come from the variant text; URL membership uses the
    /// example's original names, so it survives anonymization.
    pub fn compute(ex: &GapExample, variant: &AugmentedVariant, ling: &dyn LinguisticProvider) -> Self {
        let [a, b, p] = variant.spans();
        let dist_a = token_distance(&variant.text, a, p);
        let dist_b = token_distance(&variant.text, b, p);
        HandFeatures {
            dist_a,
            dist_b,
            a_in_url: name_in_url(&ex.name_a, &ex.url),
            b_in_url: name_in_url(&ex.name_b, &ex.url),
            bucketed_dist_a: bucket_distance(dist_a),
            bucketed_dist_b: bucket_distance(dist_b),
            linguistic_a: ling.features(variant, true),
            linguistic_b: ling.features(variant, false),
        }
    }

    /// Width of `candidate_vector`.
    pub fn width(linguistic_dim: usize) -> usize {
        BUCKETS + 2 + linguistic_dim
    }

    /// One-hot distance bucket, a sign bit (name after pronoun), the URL bit,
    /// then any linguistic features.
    pub fn candidate_vector(&self, candidate_is_a: bool) -> Vec<f64> {
        let (dist, bucket, in_url, ling) = if candidate_is_a {
            (self.dist_a, self.bucketed_dist_a, self.a_in_url, &self.linguistic_a)
        } else {
            (self.dist_b, self.bucketed_dist_b, self.b_in_url, &self.linguistic_b)
        };
        let mut v = vec![0.0; BUCKETS + 2];
        v[bucket] = 1.0;
        v[BUCKETS] = if dist < 0 { 1.0 } else { 0.0 };
        v[BUCKETS + 1] = if in_url { 1.0 } else { 0.0 };
        v.extend_from_slice(ling);
        v
    }
}

pub fn write_features_csv<W: Write>(rows: &[(String, usize, HandFeatures)], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["id", "variant", "dist_a", "dist_b", "bucket_a", "bucket_b", "a_in_url", "b_in_url"])?;
    for (id, variant, f) in rows {
        w.write_record([
            id.clone(),
            variant.to_string(),
            f.dist_a.to_string(),
            f.dist_b.to_string(),
            f.bucketed_dist_a.to_string(),
            f.bucketed_dist_b.to_string(),
            f.a_in_url.to_string(),
            f.b_in_url.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
