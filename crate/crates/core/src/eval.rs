//! Post-processing and scoring: TTA averaging, weighted ensembling, clipping,
//! log loss with a per-gender breakdown, bootstrap resampling and document
//! length histograms.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anonymizer::{pronoun_gender, PronounGender};
use crate::corpus::{GapExample, Label};
use crate::error::{Error, Result};

/// Default clipping floor.
pub const DEFAULT_CLIP: f64 = 0.005;

/// Probabilities for (A, B, Neither).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    pub a: f64,
    pub b: f64,
    pub neither: f64,
}

impl PredictionTriple {
    pub const UNIFORM: PredictionTriple = PredictionTriple { a: 1.0 / 3.0, b: 1.0 / 3.0, neither: 1.0 / 3.0 };

    pub fn new(a: f64, b: f64, neither: f64) -> Self {
        PredictionTriple { a, b, neither }
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        PredictionTriple::new(p[0], p[1], p[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.neither]
    }

    pub fn get(self, label: Label) -> f64 {
        self.to_array()[label.index()]
    }

    pub fn sum(self) -> f64 {
        self.a + self.b + self.neither
    }

    pub fn normalized(self) -> Self {
        let s = self.sum();
        PredictionTriple::new(self.a / s, self.b / s, self.neither / s)
    }

    /// Softmax over three logits.
    pub fn softmax(logits: [f64; 3]) -> Self {
        let m = logits[0].max(logits[1]).max(logits[2]);
        let e = logits.map(|x| (x - m).exp());
        let s = e[0] + e[1] + e[2];
        PredictionTriple::new(e[0] / s, e[1] / s, e[2] / s)
    }
}

fn mean_of(triples: &[PredictionTriple]) -> PredictionTriple {
    let n = triples.len() as f64;
    let mut acc = [0.0; 3];
    for t in triples {
        for (a, x) in acc.iter_mut().zip(t.to_array()) {
            *a += x;
        }
    }
    PredictionTriple::from_array(acc.map(|a| a / n))
}

/// Mean over the predictions for an example's variants, renormalized.
pub fn tta_aggregate(variants: &[PredictionTriple]) -> Result<PredictionTriple> {
    if variants.is_empty() {
        return Err(Error::invalid("no variant predictions to aggregate"));
    }
    Ok(mean_of(variants).normalized())
}

/// Plain mean of per-model probabilities (seed or fold averaging).
pub fn average(triples: &[PredictionTriple]) -> Result<PredictionTriple> {
    if triples.is_empty() {
        return Err(Error::invalid("nothing to average"));
    }
    Ok(mean_of(triples))
}

/// Convex combination of per-model predictions.
pub fn weighted_ensemble(per_model: &[PredictionTriple], weights: &[f64]) -> Result<PredictionTriple> {
    validate_weights(weights)?;
    if per_model.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} weights",
            per_model.len(),
            weights.len()
        )));
    }
    let mut acc = [0.0; 3];
    for (t, w) in per_model.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(t.to_array()) {
            *a += w * x;
        }
    }
    Ok(PredictionTriple::from_array(acc))
}

pub fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("empty weight list"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("negative or non-finite weight {w}")));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// Raises every component to at least `threshold`. No renormalization here;
/// scoring renormalizes rows.
pub fn clip_probs(t: PredictionTriple, threshold: f64) -> PredictionTriple {
    PredictionTriple::from_array(t.to_array().map(|x| x.max(threshold)))
}

pub fn validate_clip(threshold: f64) -> Result<()> {
    if !(0.0..1.0 / 3.0).contains(&threshold) {
        return Err(Error::invalid(format!("clip threshold {threshold} outside [0, 1/3)")));
    }
    Ok(())
}

fn row_loss(p: PredictionTriple, label: Label, row: usize) -> Result<f64> {
    let s = p.sum();
    let q = p.get(label) / s;
    if !(q > 0.0) {
        return Err(Error::ZeroProbability { row });
    }
    Ok(-q.ln())
}

/// Mean negative log probability of the true class, each row renormalized first.
pub fn log_loss(preds: &[PredictionTriple], labels: &[Label]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let mut total = 0.0;
    for (i, (p, l)) in preds.iter().zip(labels).enumerate() {
        total += row_loss(*p, *l, i)?;
    }
    Ok(total / preds.len() as f64)
}

/// Overall, feminine and masculine log loss with the M/F bias ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: f64,
    pub feminine: Option<f64>,
    pub masculine: Option<f64>,
    /// masculine / feminine
    pub bias: Option<f64>,
    pub count: usize,
    pub feminine_count: usize,
    pub masculine_count: usize,
    /// Mean predicted (A, B, Neither) probabilities after row renormalization.
    pub mean_probs: [f64; 3],
}

impl EvalReport {
    /// Bias rounded to two decimals, as reported in tables.
    pub fn bias_2dp(&self) -> Option<f64> {
        self.bias.map(round2)
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn bias_ratio(feminine: f64, masculine: f64) -> f64 {
    masculine / feminine
}

pub fn gender_report(preds: &[PredictionTriple], labels: &[Label], pronouns: &[impl AsRef<str>]) -> Result<EvalReport> {
    if pronouns.len() != preds.len() {
        return Err(Error::invalid(format!("{} pronouns for {} predictions", pronouns.len(), preds.len())));
    }
    let overall = log_loss(preds, labels)?;
    let subset = |g: PronounGender| -> Result<(Option<f64>, usize)> {
        let (p, l): (Vec<PredictionTriple>, Vec<Label>) = preds
            .iter()
            .zip(labels)
            .zip(pronouns)
            .filter(|(_, pr)| pronoun_gender(pr.as_ref()) == g)
            .map(|((p, l), _)| (*p, *l))
            .unzip();
        if p.is_empty() {
            Ok((None, 0))
        } else {
            Ok((Some(log_loss(&p, &l)?), p.len()))
        }
    };
    let (feminine, feminine_count) = subset(PronounGender::Feminine)?;
    let (masculine, masculine_count) = subset(PronounGender::Masculine)?;
    let bias = match (feminine, masculine) {
        (Some(f), Some(m)) if f > 0.0 => Some(bias_ratio(f, m)),
        _ => None,
    };
    Ok(EvalReport {
        overall,
        feminine,
        masculine,
        bias,
        count: preds.len(),
        feminine_count,
        masculine_count,
        mean_probs: mean_class_probs(preds),
    })
}

pub fn mean_class_probs(preds: &[PredictionTriple]) -> [f64; 3] {
    if preds.is_empty() {
        return [0.0; 3];
    }
    let normalized: Vec<PredictionTriple> = preds.iter().map(|p| p.normalized()).collect();
    mean_of(&normalized).to_array()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub point: f64,
    pub iterations: usize,
    pub sample_size: usize,
    pub mean: f64,
    pub std: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of resampled scores strictly below `reference`, when given.
    pub fraction_below_reference: Option<f64>,
    pub reference: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between order statistics
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Log loss over `iterations` resamples (with replacement) of `sample_size`
/// rows. Iteration `i` draws from a generator seeded with `seed + i`, so the
/// result does not depend on thread scheduling.
pub fn bootstrap_score(
    preds: &[PredictionTriple],
    labels: &[Label],
    sample_size: usize,
    iterations: usize,
    seed: u64,
    reference: Option<f64>,
) -> Result<BootstrapSummary> {
    let point = log_loss(preds, labels)?;
    if sample_size == 0 || iterations == 0 {
        return Err(Error::invalid("bootstrap needs a positive sample size and iteration count"));
    }
    let losses: Vec<f64> = preds
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, l))| row_loss(*p, *l, i))
        .collect::<Result<_>>()?;
    let n = losses.len();
    let mut scores: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(it as u64));
            let s: f64 = (0..sample_size).map(|_| losses[rng.gen_range(0..n)]).sum();
            s / sample_size as f64
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / iterations as f64;
    let var = if iterations > 1 {
        scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (iterations - 1) as f64
    } else {
        0.0
    };
    let fraction_below_reference =
        reference.map(|r| scores.iter().filter(|&&s| s < r).count() as f64 / iterations as f64);
    scores.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        point,
        iterations,
        sample_size,
        mean,
        std: var.sqrt(),
        q025: quantile(&scores, 0.025),
        q50: quantile(&scores, 0.5),
        q975: quantile(&scores, 0.975),
        min: scores[0],
        max: scores[iterations - 1],
        fraction_below_reference,
        reference,
    })
}

/// Document counts per character-length bin `[start, start + bin_width)`.
pub fn length_histogram(examples: &[GapExample], bin_width: usize) -> Result<BTreeMap<usize, usize>> {
    if bin_width == 0 {
        return Err(Error::invalid("bin width must be positive"));
    }
    let mut bins = BTreeMap::new();
    for ex in examples {
        *bins.entry(ex.char_len() / bin_width * bin_width).or_insert(0) += 1;
    }
    Ok(bins)
}

pub fn write_histogram_csv<W: Write>(bins: &BTreeMap<usize, usize>, bin_width: usize, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["bin_start", "bin_end", "count"])?;
    for (start, count) in bins {
        w.write_record([start.to_string(), (start + bin_width).to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Submission file: header `ID,A,B,NEITHER`, one row per example.
pub fn write_submission<W: Write>(rows: &[(String, PredictionTriple)], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["ID", "A", "B", "NEITHER"])?;
    for (id, p) in rows {
        w.write_record([id.clone(), fmt_prob(p.a), fmt_prob(p.b), fmt_prob(p.neither)])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_prob(x: f64) -> String {
    // shortest round-trip form keeps re-runs byte-identical
    format!("{x}")
}

pub fn read_submission<R: Read>(r: R) -> Result<Vec<(String, PredictionTriple)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let cols: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_uppercase()).collect();
    if cols != ["ID", "A", "B", "NEITHER"] {
        return Err(Error::Parse { line: 1, message: format!("unexpected submission header {cols:?}") });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| Error::Parse { line, message: format!("bad probability `{}`", &rec[i]) })
        };
        out.push((rec[0].to_string(), PredictionTriple::new(num(1)?, num(2)?, num(3)?)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(a: f64, b: f64, n: f64) -> PredictionTriple {
        PredictionTriple::new(a, b, n)
    }

    #[test]
    fn tta_cases() {
        let x = t(0.2, 0.7, 0.1);
        let same = tta_aggregate(&[x, x, x]).unwrap();
        for (g, w) in same.to_array().iter().zip(x.to_array()) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-15);
        }
        assert_eq!(tta_aggregate(&[t(1., 0., 0.), t(0., 1., 0.)]).unwrap(), t(0.5, 0.5, 0.0));
        assert!(tta_aggregate(&[]).is_err());
        let five = [
            t(0.6, 0.3, 0.1),
            t(0.5, 0.4, 0.1),
            t(0.7, 0.2, 0.1),
            t(0.4, 0.4, 0.2),
            t(0.8, 0.1, 0.1),
        ];
        let got = tta_aggregate(&five).unwrap();
        // (3.0, 1.4, 0.6) / 5
        assert_abs_diff_eq!(got.a, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(got.b, 0.28, epsilon = 1e-15);
        assert_abs_diff_eq!(got.neither, 0.12, epsilon = 1e-15);
    }

    #[test]
    fn ensemble_cases() {
        let m = [t(0.7, 0.2, 0.1), t(0.1, 0.6, 0.3)];
        assert_eq!(weighted_ensemble(&m, &[1.0, 0.0]).unwrap(), m[0]);
        let got = weighted_ensemble(&m, &[0.25, 0.75]).unwrap();
        assert_abs_diff_eq!(got.a, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(got.b, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(got.neither, 0.25, epsilon = 1e-15);
        assert!(validate_weights(&[0.36, 0.54, 0.04, 0.06]).is_ok());
        assert!(validate_weights(&[0.36, 0.44, 0.08, 0.12]).is_ok());
        assert!(validate_weights(&[0.18, 0.42, 0.12, 0.28]).is_ok());
        assert!(weighted_ensemble(&m, &[0.5, 0.6]).is_err());
        assert!(weighted_ensemble(&m, &[1.0]).is_err());
        assert!(validate_weights(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip_probs(t(0.999, 0.0005, 0.0005), DEFAULT_CLIP), t(0.999, 0.005, 0.005));
        let x = t(0.5, 0.3, 0.2);
        assert_eq!(clip_probs(x, DEFAULT_CLIP), x);
        let c = clip_probs(t(0.0, 1.0, 0.001), 0.01);
        assert_eq!(clip_probs(c, 0.01), c);
        assert!(validate_clip(0.4).is_err());
        assert!(validate_clip(0.005).is_ok());
    }

    #[test]
    fn log_loss_cases() {
        let labels = [Label::A, Label::B, Label::Neither, Label::A];
        let uniform = [PredictionTriple::UNIFORM; 4];
        assert_abs_diff_eq!(log_loss(&uniform, &labels).unwrap(), 3f64.ln(), epsilon = 1e-12);
        let perfect: Vec<_> = labels.iter().map(|l| {
            let mut p = [0.0; 3];
            p[l.index()] = 1.0;
            PredictionTriple::from_array(p)
        }).collect();
        assert_eq!(log_loss(&perfect, &labels).unwrap(), 0.0);
        assert!(matches!(
            log_loss(&[t(0.0, 1.0, 0.0)], &[Label::A]),
            Err(Error::ZeroProbability { row: 0 })
        ));
        // unnormalized rows are renormalized before scoring
        assert_abs_diff_eq!(log_loss(&[t(2.0, 1.0, 1.0)], &[Label::A]).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn log_loss_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20 {
            let raw: [f64; 3] = [rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)];
            preds.push(PredictionTriple::from_array(raw));
            labels.push(Label::from_index(rng.gen_range(0..3)).unwrap());
        }
        // oracle: log of the sum minus log of the true component
        let oracle: f64 = preds
            .iter()
            .zip(&labels)
            .map(|(p, l)| p.sum().ln() - p.get(*l).ln())
            .sum::<f64>()
            / 20.0;
        assert_abs_diff_eq!(log_loss(&preds, &labels).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn bias_rounding_from_table() {
        assert_eq!(round2(bias_ratio(0.3021, 0.2823)), 0.93);
        assert_eq!(round2(bias_ratio(0.1983, 0.1911)), 0.96);
        assert_eq!(round2(bias_ratio(0.2947, 0.2744)), 0.93);
    }

    #[test]
    fn gender_report_cases() {
        let preds = [t(0.7, 0.2, 0.1), t(0.7, 0.2, 0.1)];
        let labels = [Label::A, Label::A];
        let r = gender_report(&preds, &labels, &["she", "he"]).unwrap();
        assert_eq!(r.bias, Some(1.0));
        assert_eq!(r.feminine_count, 1);
        let r = gender_report(&preds, &labels, &["his", "He"]).unwrap();
        assert!(r.feminine.is_none() && r.bias.is_none());
        assert_eq!(r.masculine_count, 2);
    }

    #[test]
    fn overall_is_count_weighted_mean() {
        let preds = [t(0.7, 0.2, 0.1), t(0.3, 0.3, 0.4), t(0.1, 0.8, 0.1)];
        let labels = [Label::A, Label::Neither, Label::A];
        let r = gender_report(&preds, &labels, &["her", "him", "she"]).unwrap();
        let combined = (r.feminine.unwrap() * 2.0 + r.masculine.unwrap()) / 3.0;
        assert_abs_diff_eq!(r.overall, combined, epsilon = 1e-12);
    }

    #[test]
    fn clipping_helps_confident_mistakes() {
        let preds = [t(0.999, 0.0009, 0.0001), t(0.6, 0.3, 0.1)];
        let labels = [Label::B, Label::A];
        let clipped: Vec<_> = preds.iter().map(|p| clip_probs(*p, DEFAULT_CLIP)).collect();
        assert!(log_loss(&clipped, &labels).unwrap() < log_loss(&preds, &labels).unwrap());
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let preds = vec![t(0.6, 0.3, 0.1); 10];
        let labels = vec![Label::A; 10];
        let s = bootstrap_score(&preds, &labels, 10, 1, 3, None).unwrap();
        assert_abs_diff_eq!(s.mean, s.point, epsilon = 1e-15);
        assert_eq!(s.std, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let preds: Vec<_> = (0..500)
            .map(|_| PredictionTriple::from_array([rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)]))
            .collect();
        let labels: Vec<_> = (0..500).map(|_| Label::from_index(rng.gen_range(0..3)).unwrap()).collect();
        let a = bootstrap_score(&preds, &labels, 100, 2000, 42, Some(1.0)).unwrap();
        assert_eq!(a, bootstrap_score(&preds, &labels, 100, 2000, 42, Some(1.0)).unwrap());
        let se = a.std / (a.iterations as f64).sqrt();
        assert!((a.mean - a.point).abs() < 3.0 * se, "{} vs {} (se {se})", a.mean, a.point);
        assert!(a.q025 <= a.q50 && a.q50 <= a.q975);
    }

    fn doc(len: usize) -> GapExample {
        GapExample {
            id: len.to_string(),
            text: "x".repeat(len),
            pronoun: "x".into(),
            pronoun_offset: 0,
            name_a: "x".into(),
            a_offset: 0,
            a_coref: false,
            name_b: "x".into(),
            b_offset: 0,
            b_coref: false,
            url: String::new(),
        }
    }

    #[test]
    fn histogram_cases() {
        assert!(length_histogram(&[], 100).unwrap().is_empty());
        assert_eq!(length_histogram(&[doc(100)], 50).unwrap(), BTreeMap::from([(100, 1)]));
        let docs: Vec<_> = [5, 99, 100, 150, 250, 299, 300].into_iter().map(doc).collect();
        assert_eq!(
            length_histogram(&docs, 100).unwrap(),
            BTreeMap::from([(0, 2), (100, 2), (200, 2), (300, 1)])
        );
        assert!(length_histogram(&docs, 0).is_err());
        let mut buf = Vec::new();
        write_histogram_csv(&length_histogram(&docs, 100).unwrap(), 100, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("bin_start,bin_end,count\n0,100,2\n"));
    }

    #[test]
    fn submission_roundtrip() {
        let rows = vec![("development-1".to_string(), t(0.1, 0.2, 0.7)), ("x".into(), t(1.0 / 3.0, 0.005, 0.6))];
        let mut buf = Vec::new();
        write_submission(&rows, &mut buf).unwrap();
        assert!(buf.starts_with(b"ID,A,B,NEITHER\n"));
        assert_eq!(read_submission(buf.as_slice()).unwrap(), rows);
    }

    proptest::proptest! {
        #[test]
        fn clip_is_monotone_and_idempotent(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, th in 0.0f64..0.3) {
            let x = t(a, b, c);
            let y = clip_probs(x, th);
            proptest::prop_assert_eq!(clip_probs(y, th), y);
            for (u, v) in x.to_array().iter().zip(y.to_array()) {
                proptest::prop_assert!(v >= *u && v >= th);
            }
        }

        #[test]
        fn ensemble_permutation_invariant(ps in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 4), ws in proptest::collection::vec(0.01f64..1.0, 4)) {
            let s: f64 = ws.iter().sum();
            let ws: Vec<f64> = ws.iter().map(|w| w / s).collect();
            let preds: Vec<_> = ps.iter().map(|&(a, b, c)| t(a, b, c)).collect();
            let base = weighted_ensemble(&preds, &ws).unwrap();
            let perm = [2usize, 0, 3, 1];
            let pp: Vec<_> = perm.iter().map(|&i| preds[i]).collect();
            let pw: Vec<_> = perm.iter().map(|&i| ws[i]).collect();
            if let Ok(got) = weighted_ensemble(&pp, &pw) {
                for (x, y) in got.to_array().iter().zip(base.to_array()) {
                    proptest::prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn log_loss_row_permutation_invariant(rows in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0, 0usize..3), 1..30), rot in 0usize..30) {
            let preds: Vec<_> = rows.iter().map(|&(a, b, c, _)| t(a, b, c)).collect();
            let labels: Vec<_> = rows.iter().map(|r| Label::from_index(r.3).unwrap()).collect();
            let base = log_loss(&preds, &labels).unwrap();
            let k = rot % preds.len();
            let mut p2 = preds.clone();
            let mut l2 = labels.clone();
            p2.rotate_left(k);
            l2.rotate_left(k);
            proptest::prop_assert!((log_loss(&p2, &l2).unwrap() - base).abs() < 1e-12);
        }
    }
}
