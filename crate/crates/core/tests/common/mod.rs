//! Synthetic GAP-format corpora for integration tests.

#![allow(dead_code)]

use std::path::Path;

use gap_core::corpus::{write_gap_tsv, GapExample, Label};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIRST: &[&str] = &[
    "Zelda", "Rhea", "Orla", "Petra", "Ines", "Noor", "Yara", "Wren", "Lena", "Tova", "Ilse", "Maeve", "Odile",
    "Saskia", "Brigid", "Fenna", "Greta", "Hedda", "Ottilie", "Ruth", "Bram", "Caspar", "Dirk", "Emil", "Floris",
    "Gideon", "Hugo", "Ivo", "Jasper", "Kees", "Lars", "Milo", "Nils", "Otto", "Pim", "Quinn", "Rutger", "Sem",
    "Teun", "Ulrich",
];

const LAST: &[&str] = &[
    "Vos", "Brandt", "Okafor", "Lindqvist", "Moreau", "Haas", "Ferreira", "Novak", "Quist", "Rask", "Sauer",
    "Tamm", "Ueda", "Varga", "Wolff", "Yilmaz", "Zeller", "Abbas", "Borg", "Cruz",
];

const FILLER: &[&str] = &[
    "the", "a", "river", "town", "season", "album", "later", "early", "record", "team", "after", "before", "with",
    "during", "film", "school", "house", "north", "won", "lost", "played", "wrote", "moved", "and", "of", "in",
];

pub struct Spec {
    pub n: usize,
    pub seed: u64,
    /// Fraction of labels replaced by a random class.
    pub label_noise: f64,
    /// Fraction of two-word names.
    pub two_word: f64,
}

fn name(rng: &mut ChaCha8Rng, two_word: f64) -> String {
    let first = *FIRST.choose(rng).unwrap();
    if rng.gen_bool(two_word) {
        format!("{first} {}", LAST.choose(rng).unwrap())
    } else {
        first.to_string()
    }
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| FILLER.choose(rng).unwrap().to_string()).collect()
}

/// Documents of the shape `... A ... B ... pronoun ...` (A and B in either
/// order). Subject pronouns refer to whichever candidate is closer to the
/// pronoun; object pronouns refer to neither. Names carry no information
/// about the label.
pub fn corpus(spec: &Spec) -> Vec<GapExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n);
    while out.len() < spec.n {
        let a = name(&mut rng, spec.two_word);
        let b = name(&mut rng, spec.two_word);
        if a.split(' ').next() == b.split(' ').next() {
            continue;
        }
        let masculine = rng.gen_bool(0.5);
        let subject = rng.gen_bool(0.75);
        let pronoun = match (masculine, subject) {
            (true, true) => "he",
            (true, false) => "him",
            (false, true) => "she",
            (false, false) => "her",
        };
        // gaps between the mentions; keep the two candidates at different distances
        let (near, far) = loop {
            let x = rng.gen_range(0..6);
            let y = rng.gen_range(0..14);
            if x != y {
                break (x.min(y), x.max(y) + 4);
            }
        };
        let a_first = rng.gen_bool(0.5);
        let (first, second) = if a_first { (&a, &b) } else { (&b, &a) };
        let lead = rng.gen_range(1..4);
        let mut words = filler(&mut rng, lead);
        let push = |words: &mut Vec<String>, w: &str| -> usize {
            let offset: usize = words.iter().map(|w| w.chars().count() + 1).sum();
            words.push(w.to_string());
            offset
        };
        let o_first = push(&mut words, first);
        words.extend(filler(&mut rng, far - near));
        let o_second = push(&mut words, second);
        words.extend(filler(&mut rng, near));
        let o_pron = push(&mut words, pronoun);
        let tail = rng.gen_range(1..4);
        words.extend(filler(&mut rng, tail));
        let text = words.join(" ") + ".";
        let (a_offset, b_offset) = if a_first { (o_first, o_second) } else { (o_second, o_first) };
        // the candidate closer to the pronoun is the second one
        let mut label = match (subject, a_first) {
            (false, _) => Label::Neither,
            (true, true) => Label::B,
            (true, false) => Label::A,
        };
        if rng.gen_bool(spec.label_noise) {
            label = *Label::ALL.choose(&mut rng).unwrap();
        }
        let (a_coref, b_coref) = label.flags();
        let ex = GapExample {
            id: format!("syn-{}", out.len() + 1),
            text,
            pronoun: pronoun.into(),
            pronoun_offset: o_pron,
            name_a: a,
            a_offset,
            a_coref,
            name_b: b,
            b_offset,
            b_coref,
            url: "http://en.wikipedia.org/wiki/Synthetic".into(),
        };
        ex.validate().expect("generator builds valid rows");
        out.push(ex);
    }
    out
}

pub fn write(path: &Path, examples: &[GapExample]) {
    write_gap_tsv(examples, std::fs::File::create(path).unwrap()).unwrap();
}

/// A config for a small stub-embedding run over `train.tsv` and `test.tsv`
/// next to it; `extra` is appended verbatim.
pub fn config(extra: &str) -> String {
    format!(
        r#"
seed = 7
folds = 3

[corpus]
train = ["train.tsv"]
test = "test.tsv"

[embeddings.stub]
kind = "stub"
dim = 6
seed = 3

[[models]]
name = "e2e"
kind = "end2end"
embeddings = "stub"
layers = [-5]
seeds = [0, 1]
hidden = [12]
train = {{ learning_rate = 0.05, epochs = 4, batch_size = 16 }}

[[models]]
name = "pure"
kind = "pure_bert"
embeddings = "stub"
layers = [-5, -6]
hidden = [16, 8]
train = {{ learning_rate = 0.05, epochs = 4, batch_size = 16 }}
{extra}
"#
    )
}
