//! Subcommand implementations over files.
//!
//! A run is described by one TOML file, parsed into [`PipelineConfig`]; a few
//! keys can be overridden from the command line. Every output lands under
//! `out_dir`. Given the same inputs and configuration, every file written is
//! byte-identical across runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anonymizer::{
    coverage, write_variants_jsonl, Anonymizer, AnonymizerOptions, AugmentedVariant, CoverageReport, PlaceholderSet,
};
use crate::corpus::{apply_corrections, folds_to_json, parse_corrections, parse_gap_tsv, split_folds, GapExample, Label};
use crate::embedding::{concat_layers, stub_embed_all, EmbeddingRequest, EmbeddingStore, Role};
use crate::error::{Error, Result};
use crate::eval::{
    average, bootstrap_score, clip_probs, gender_report, length_histogram, read_submission, tta_aggregate, validate_clip,
    validate_weights, weighted_ensemble, write_histogram_csv, write_submission, BootstrapSummary, EvalReport,
    PredictionTriple, DEFAULT_CLIP,
};
use crate::features::{HandFeatures, ZeroLinguistic};
use crate::models::{
    pure_bert_input, train, write_loss_trace, Activation, Checkpoint, Classifier, End2endInput, End2endNet,
    PureBertNet, TrainConfig, CHECKPOINT_VERSION, END2END_HIDDEN, PURE_BERT_HIDDEN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub embeddings: BTreeMap<String, EmbeddingSource>,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub lengths: LengthsConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Labeled files used in full for training and cross-validation.
    #[serde(default)]
    pub train: Vec<PathBuf>,
    /// A file of which only `rows` randomly chosen examples join the training set.
    pub sample: Option<SampleConfig>,
    /// Labeled or unlabeled file to predict on.
    pub test: Option<PathBuf>,
    /// `id<TAB>label` corrections applied to training labels only.
    pub corrections: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub path: PathBuf,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Train on every applied variant, not just the originals.
    pub train: bool,
    /// Average predictions over every applied variant.
    pub inference: bool,
    pub widen_cond1: bool,
    /// Replaces the standard placeholder sets.
    pub sets: Option<Vec<SetConfig>>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { train: true, inference: true, widen_cond1: false, sets: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetConfig {
    pub feminine: [String; 2],
    pub masculine: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSource {
    /// Hash-seeded vectors computed on the fly.
    Stub {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A JSONL (or `.bin`) embedding file.
    Store { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    End2end,
    PureBert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub kind: ModelKind,
    /// Key into `embeddings`.
    pub embeddings: String,
    pub layers: Vec<i32>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ModelConfig {
    fn hidden(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match self.kind {
            ModelKind::End2end => vec![END2END_HIDDEN],
            ModelKind::PureBert => PURE_BERT_HIDDEN.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// One weight per model, in model order. Equal weights when absent.
    pub weights: Option<Vec<f64>>,
    pub clip: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { weights: None, clip: DEFAULT_CLIP }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Submission to score; `out_dir/submission.csv` when absent.
    pub submission: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub sample_size: usize,
    pub iterations: usize,
    pub reference: Option<f64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { sample_size: 760, iterations: 10_000, reference: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LengthsConfig {
    pub bin_width: usize,
}

impl Default for LengthsConfig {
    fn default() -> Self {
        LengthsConfig { bin_width: 100 }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Replaces the layer list of every model.
    pub layers: Option<Vec<i32>>,
    pub weights: Option<Vec<f64>>,
    pub clip: Option<f64>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        self.corpus.train.iter_mut().for_each(fix);
        if let Some(s) = &mut self.corpus.sample {
            fix(&mut s.path);
        }
        self.corpus.test.as_mut().map(fix);
        self.corpus.corrections.as_mut().map(fix);
        self.evaluate.submission.as_mut().map(fix);
        for src in self.embeddings.values_mut() {
            if let EmbeddingSource::Store { path } = src {
                fix(path);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(layers) = &o.layers {
            for m in &mut self.models {
                m.layers = layers.clone();
            }
        }
        if let Some(w) = &o.weights {
            self.ensemble.weights = Some(w.clone());
        }
        if let Some(c) = o.clip {
            self.ensemble.clip = c;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {} (need at least 2)", self.folds)));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.name)));
            }
            if m.layers.is_empty() {
                return Err(Error::Config(format!("model `{}` selects no layers", m.name)));
            }
            if m.seeds.is_empty() {
                return Err(Error::Config(format!("model `{}` has no seeds", m.name)));
            }
            if !self.embeddings.contains_key(&m.embeddings) {
                return Err(Error::Config(format!("model `{}` uses unknown embeddings `{}`", m.name, m.embeddings)));
            }
            if m.hidden().contains(&0) {
                return Err(Error::Config(format!("model `{}` has a zero-width hidden layer", m.name)));
            }
            m.train.validate().map_err(|e| Error::Config(format!("model `{}`: {e}", m.name)))?;
        }
        for (name, src) in &self.embeddings {
            if let EmbeddingSource::Stub { dim: 0, .. } = src {
                return Err(Error::Config(format!("stub embeddings `{name}` have dim 0")));
            }
        }
        if let Some(w) = &self.ensemble.weights {
            if w.len() != self.models.len() {
                return Err(Error::Config(format!("{} ensemble weights for {} models", w.len(), self.models.len())));
            }
            validate_weights(w).map_err(|e| Error::Config(e.to_string()))?;
        }
        validate_clip(self.ensemble.clip).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(sets) = &self.augment.sets {
            self.placeholder_sets(sets)?;
        }
        Ok(())
    }

    fn placeholder_sets(&self, sets: &[SetConfig]) -> Result<Vec<PlaceholderSet>> {
        sets.iter()
            .enumerate()
            .map(|(i, s)| {
                PlaceholderSet::new(
                    i,
                    (&s.feminine[0], &s.feminine[1]),
                    (&s.masculine[0], &s.masculine[1]),
                )
                .map_err(|e| Error::Config(e.to_string()))
            })
            .collect()
    }

    pub fn anonymizer(&self) -> Result<Anonymizer> {
        let sets = match &self.augment.sets {
            Some(s) => self.placeholder_sets(s)?,
            None => PlaceholderSet::standard(),
        };
        Ok(Anonymizer::new(sets, AnonymizerOptions { widen_cond1: self.augment.widen_cond1 }))
    }

    /// Ensemble weights, equal when not configured.
    pub fn weights(&self) -> Vec<f64> {
        self.ensemble
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.models.len() as f64; self.models.len()])
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

pub fn load_corpus(path: &Path) -> Result<Vec<GapExample>> {
    parse_gap_tsv(open(path)?)
}

fn check_unique(examples: &[GapExample]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::Duplicate(ex.id.clone()));
        }
    }
    Ok(())
}

/// Training examples in file order, before label corrections.
pub fn training_corpus(cfg: &PipelineConfig) -> Result<Vec<GapExample>> {
    let mut out = Vec::new();
    for p in &cfg.corpus.train {
        out.extend(load_corpus(p)?);
    }
    if let Some(s) = &cfg.corpus.sample {
        let pool = load_corpus(&s.path)?;
        if s.rows > pool.len() {
            return Err(Error::Config(format!(
                "sample of {} rows from {} examples in {}",
                s.rows,
                pool.len(),
                s.path.display()
            )));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let mut chosen = idx[..s.rows].to_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| pool[i].clone()));
    }
    if out.is_empty() {
        return Err(Error::Config("no training corpus configured".into()));
    }
    check_unique(&out)?;
    Ok(out)
}

fn corrected(cfg: &PipelineConfig, examples: &[GapExample]) -> Result<Vec<GapExample>> {
    match &cfg.corpus.corrections {
        Some(p) => apply_corrections(examples, &parse_corrections(open(p)?)?),
        None => Ok(examples.to_vec()),
    }
}

fn test_corpus(cfg: &PipelineConfig) -> Result<Vec<GapExample>> {
    let p = cfg.corpus.test.as_ref().ok_or_else(|| Error::Config("no test corpus configured".into()))?;
    let out = load_corpus(p)?;
    check_unique(&out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

/// Expands the training corpus into `variants.jsonl` (five records per
/// example) and writes `coverage.json`.
pub fn cmd_augment(cfg: &PipelineConfig) -> Result<CoverageReport> {
    let examples = training_corpus(cfg)?;
    let anon = cfg.anonymizer()?;
    let expansions: Vec<_> = examples.par_iter().map(|ex| anon.expand(ex)).collect();
    let mut w = create(&cfg.path("variants.jsonl"))?;
    for e in &expansions {
        write_variants_jsonl(&e.records(), &mut w)?;
    }
    w.flush()?;
    let report = coverage(&expansions, anon.sets().len());
    write_json(&cfg.path("coverage.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

fn request(v: &AugmentedVariant, layers: &[i32]) -> EmbeddingRequest {
    EmbeddingRequest {
        example_id: v.id.clone(),
        variant_id: v.variant_id,
        text: v.text.clone(),
        spans: v.spans(),
        layers: layers.to_vec(),
    }
}

fn stub_store(variants: &[&AugmentedVariant], layers: &[i32], dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let records: Vec<_> = variants
        .par_iter()
        .map(|v| stub_embed_all(&request(v, layers), dim, seed))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingStore::from_records(records.into_iter().flatten())
}

/// Embeddings for every given variant, from a stub or a file. A file must
/// hold all three roles of every variant.
fn resolve_store(src: &EmbeddingSource, variants: &[&AugmentedVariant], layers: &[i32]) -> Result<EmbeddingStore> {
    match src {
        EmbeddingSource::Stub { dim, seed } => stub_store(variants, layers, *dim, *seed),
        EmbeddingSource::Store { path } => {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.clone()));
            }
            let store = EmbeddingStore::load(path)?;
            let missing: Vec<String> = variants
                .iter()
                .flat_map(|v| Role::ALL.iter().map(move |&r| (v, r)))
                .filter(|(v, r)| store.get(&v.id, v.variant_id, *r).is_none())
                .map(|(v, r)| format!("{}#{}/{}", v.id, v.variant_id, r))
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingEmbeddings(missing));
            }
            Ok(store)
        }
    }
}

fn layer_union<'a>(models: impl IntoIterator<Item = &'a ModelConfig>) -> Vec<i32> {
    let set: BTreeSet<i32> = models.into_iter().flat_map(|m| m.layers.iter().copied()).collect();
    set.into_iter().rev().collect()
}

/// Writes stub embeddings for every usable variant of the training and test
/// corpora to `embeddings.jsonl`, using the first stub source in the config.
pub fn cmd_extract_stub(cfg: &PipelineConfig) -> Result<PathBuf> {
    let (dim, seed) = cfg
        .embeddings
        .values()
        .find_map(|s| match s {
            EmbeddingSource::Stub { dim, seed } => Some((*dim, *seed)),
            EmbeddingSource::Store { .. } => None,
        })
        .ok_or_else(|| Error::Config("no stub embedding source configured".into()))?;
    let layers = layer_union(&cfg.models);
    if layers.is_empty() {
        return Err(Error::Config("no layers selected (configure a model or pass --layers)".into()));
    }
    let mut examples = training_corpus(cfg)?;
    if cfg.corpus.test.is_some() {
        examples.extend(test_corpus(cfg)?);
    }
    let anon = cfg.anonymizer()?;
    let variants: Vec<AugmentedVariant> = examples.iter().flat_map(|ex| anon.expand_with_tta(ex)).collect();
    let refs: Vec<&AugmentedVariant> = variants.iter().collect();
    let store = stub_store(&refs, &layers, dim, seed)?;
    let path = cfg.path("embeddings.jsonl");
    let mut w = create(&path)?;
    store.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

struct Ctx<'a> {
    store: &'a EmbeddingStore,
    layers: &'a [i32],
}

impl Ctx<'_> {
    fn mention(&self, v: &AugmentedVariant, role: Role) -> Result<Vec<f64>> {
        concat_layers(self.store.require(&v.id, v.variant_id, role)?, self.layers)
    }
}

/// What the pipeline needs from a classifier head beyond training.
trait Head: Classifier {
    fn create(model: &ModelConfig, emb_dim: usize, seed: u64) -> Self;
    fn input(ctx: &Ctx, ex: &GapExample, v: &AugmentedVariant) -> Result<Self::Input>;
    fn checkpoint(self, layers: Vec<i32>) -> Checkpoint;
    fn from_checkpoint(c: Checkpoint) -> Option<Self>;
}

impl Head for PureBertNet {
    fn create(model: &ModelConfig, emb_dim: usize, seed: u64) -> Self {
        PureBertNet::new(3 * emb_dim, &model.hidden(), model.activation, seed)
    }

    fn input(ctx: &Ctx, _: &GapExample, v: &AugmentedVariant) -> Result<Vec<f64>> {
        Ok(pure_bert_input(
            &ctx.mention(v, Role::A)?,
            &ctx.mention(v, Role::B)?,
            &ctx.mention(v, Role::Pronoun)?,
        ))
    }

    fn checkpoint(self, layers: Vec<i32>) -> Checkpoint {
        Checkpoint::PureBert { version: CHECKPOINT_VERSION, layers, net: self }
    }

    fn from_checkpoint(c: Checkpoint) -> Option<Self> {
        match c {
            Checkpoint::PureBert { net, .. } => Some(net),
            Checkpoint::End2end { .. } => None,
        }
    }
}

impl Head for End2endNet {
    fn create(model: &ModelConfig, emb_dim: usize, seed: u64) -> Self {
        End2endNet::new(emb_dim, HandFeatures::width(0), &model.hidden(), model.activation, seed)
    }

    fn input(ctx: &Ctx, ex: &GapExample, v: &AugmentedVariant) -> Result<End2endInput> {
        let f = HandFeatures::compute(ex, v, &ZeroLinguistic(0));
        Ok(End2endInput {
            a: ctx.mention(v, Role::A)?,
            b: ctx.mention(v, Role::B)?,
            p: ctx.mention(v, Role::Pronoun)?,
            feats_a: f.candidate_vector(true),
            feats_b: f.candidate_vector(false),
        })
    }

    fn checkpoint(self, layers: Vec<i32>) -> Checkpoint {
        Checkpoint::End2end { version: CHECKPOINT_VERSION, layers, net: self }
    }

    fn from_checkpoint(c: Checkpoint) -> Option<Self> {
        match c {
            Checkpoint::End2end { net, .. } => Some(net),
            Checkpoint::PureBert { .. } => None,
        }
    }
}

/// An example with its usable variants, original first.
struct Prepared {
    ex: GapExample,
    variants: Vec<AugmentedVariant>,
}

fn prepare(cfg: &PipelineConfig, examples: &[GapExample]) -> Result<Vec<Prepared>> {
    let anon = cfg.anonymizer()?;
    Ok(examples
        .par_iter()
        .map(|ex| Prepared { ex: ex.clone(), variants: anon.expand_with_tta(ex) })
        .collect())
}

fn train_variants<'a>(cfg: &PipelineConfig, p: &'a Prepared) -> &'a [AugmentedVariant] {
    if cfg.augment.train { &p.variants } else { &p.variants[..1] }
}

fn infer_variants<'a>(cfg: &PipelineConfig, p: &'a Prepared) -> &'a [AugmentedVariant] {
    if cfg.augment.inference { &p.variants } else { &p.variants[..1] }
}

fn store_for(cfg: &PipelineConfig, model: &ModelConfig, data: &[Prepared]) -> Result<EmbeddingStore> {
    let refs: Vec<&AugmentedVariant> = data.iter().flat_map(|p| p.variants.iter()).collect();
    resolve_store(&cfg.embeddings[&model.embeddings], &refs, &model.layers)
}

fn emb_dim(store: &EmbeddingStore, layers: &[i32]) -> usize {
    store.dim().unwrap_or(0) * layers.len()
}

/// Inputs for every usable variant of every example.
fn inputs<N: Head>(ctx: &Ctx, data: &[Prepared]) -> Result<Vec<Vec<N::Input>>>
where
    N::Input: Send,
{
    data.par_iter()
        .map(|p| p.variants.iter().map(|v| N::input(ctx, &p.ex, v)).collect())
        .collect()
}

/// TTA-aggregated prediction of one net on the first `n` variants.
fn predict_tta<N: Head>(net: &N, variants: &[N::Input], n: usize) -> Result<PredictionTriple> {
    let preds = variants[..n].iter().map(|x| net.predict(x)).collect::<Result<Vec<_>>>()?;
    tta_aggregate(&preds)
}

fn checkpoint_path(cfg: &PipelineConfig, model: &str, fold: usize, seed: u64) -> PathBuf {
    cfg.path(&format!("checkpoints/{model}/fold{fold}_seed{seed}.json"))
}

/// Trains one model on every (fold, seed) pair and returns its out-of-fold
/// predictions in corpus order.
fn cross_validate<N: Head>(
    cfg: &PipelineConfig,
    model: &ModelConfig,
    data: &[Prepared],
    labels: &[Label],
    folds: &[Vec<usize>],
) -> Result<Vec<PredictionTriple>>
where
    N::Input: Send + Clone,
{
    let store = store_for(cfg, model, data)?;
    let ctx = Ctx { store: &store, layers: &model.layers };
    let dim = emb_dim(&store, &model.layers);
    let xs = inputs::<N>(&ctx, data)?;

    let mut fold_of = vec![0; data.len()];
    for (f, idx) in folds.iter().enumerate() {
        for &i in idx {
            fold_of[i] = f;
        }
    }
    let jobs: Vec<(usize, u64)> = (0..folds.len())
        .flat_map(|f| model.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let nets: Vec<N> = jobs
        .par_iter()
        .map(|&(fold, seed)| {
            let mut set = Vec::new();
            for (i, p) in data.iter().enumerate().filter(|(i, _)| fold_of[*i] != fold) {
                let n = train_variants(cfg, p).len();
                set.extend(xs[i][..n].iter().map(|x| (x.clone(), labels[i])));
            }
            let job_seed = cfg.seed.wrapping_add(seed);
            let tc = TrainConfig { seed: job_seed, ..model.train.clone() };
            let outcome = train(N::create(model, dim, job_seed), &set, &tc)?;
            let trace = cfg.path(&format!("traces/{}/fold{fold}_seed{seed}.csv", model.name));
            let mut w = create(&trace)?;
            write_loss_trace(&outcome.loss_trace, &mut w)?;
            w.flush()?;
            let ckpt = outcome.net.clone().checkpoint(model.layers.clone());
            save_checkpoint(&ckpt, &checkpoint_path(cfg, &model.name, fold, seed))?;
            Ok(outcome.net)
        })
        .collect::<Result<_>>()?;

    let per_seed = model.seeds.len();
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let f = fold_of[i];
            let n = infer_variants(cfg, &data[i]).len();
            let preds = nets[f * per_seed..(f + 1) * per_seed]
                .iter()
                .map(|net| predict_tta(net, &xs[i], n))
                .collect::<Result<Vec<_>>>()?;
            average(&preds)
        })
        .collect()
}

fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    c.save(path)
}

fn ensemble_rows(cfg: &PipelineConfig, per_model: &[Vec<PredictionTriple>], n: usize) -> Result<Vec<PredictionTriple>> {
    let weights = cfg.weights();
    (0..n)
        .map(|i| {
            let row: Vec<PredictionTriple> = per_model.iter().map(|m| m[i]).collect();
            Ok(clip_probs(weighted_ensemble(&row, &weights)?, cfg.ensemble.clip))
        })
        .collect()
}

fn submission_rows(examples: &[GapExample], preds: &[PredictionTriple]) -> Vec<(String, PredictionTriple)> {
    examples.iter().map(|e| e.id.clone()).zip(preds.iter().copied()).collect()
}

fn write_rows(path: &Path, examples: &[GapExample], preds: &[PredictionTriple]) -> Result<()> {
    let mut w = create(path)?;
    write_submission(&submission_rows(examples, preds), &mut w)?;
    w.flush()?;
    Ok(())
}

fn report_for(examples: &[GapExample], preds: &[PredictionTriple]) -> Result<EvalReport> {
    let labels: Vec<Label> = examples.iter().map(GapExample::label).collect();
    let pronouns: Vec<&str> = examples.iter().map(|e| e.pronoun.as_str()).collect();
    gender_report(preds, &labels, &pronouns)
}

/// Cross-validation scores. Models are trained on corrected labels and
/// scored against the original ones; `corrected` repeats the scoring against
/// corrected labels when a corrections file is configured. Per-model reports
/// use the same clipping as the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub examples: usize,
    pub models: BTreeMap<String, EvalReport>,
    pub ensemble: EvalReport,
    pub corrected: Option<EvalReport>,
}

/// k-fold training of every configured model. Writes `folds.json`,
/// per-(fold, seed) checkpoints and loss traces, out-of-fold predictions under
/// `oof/` and `cv_report.json`.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<CvReport> {
    if cfg.models.is_empty() {
        return Err(Error::Config("no models configured".into()));
    }
    let original = training_corpus(cfg)?;
    let fixed = corrected(cfg, &original)?;
    let labels: Vec<Label> = fixed.iter().map(GapExample::label).collect();
    let folds = split_folds(original.len(), cfg.folds, cfg.seed)?;
    write_json(&cfg.path("folds.json"), &folds_to_json(&original, &folds))?;

    let data = prepare(cfg, &original)?;
    let mut per_model = Vec::with_capacity(cfg.models.len());
    let mut models = BTreeMap::new();
    for m in &cfg.models {
        let oof = match m.kind {
            ModelKind::End2end => cross_validate::<End2endNet>(cfg, m, &data, &labels, &folds)?,
            ModelKind::PureBert => cross_validate::<PureBertNet>(cfg, m, &data, &labels, &folds)?,
        };
        write_rows(&cfg.path(&format!("oof/{}.csv", m.name)), &original, &oof)?;
        let clipped: Vec<_> = oof.iter().map(|p| clip_probs(*p, cfg.ensemble.clip)).collect();
        models.insert(m.name.clone(), report_for(&original, &clipped)?);
        per_model.push(oof);
    }
    let ens = ensemble_rows(cfg, &per_model, original.len())?;
    write_rows(&cfg.path("oof/ensemble.csv"), &original, &ens)?;
    let report = CvReport {
        folds: cfg.folds,
        examples: original.len(),
        models,
        ensemble: report_for(&original, &ens)?,
        corrected: match cfg.corpus.corrections {
            Some(_) => Some(report_for(&fixed, &ens)?),
            None => None,
        },
    };
    write_json(&cfg.path("cv_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// predict / evaluate
// ---------------------------------------------------------------------------

fn predict_model<N: Head>(cfg: &PipelineConfig, model: &ModelConfig, data: &[Prepared]) -> Result<Vec<PredictionTriple>>
where
    N::Input: Send,
{
    let mut nets = Vec::new();
    for fold in 0..cfg.folds {
        for &seed in &model.seeds {
            let path = checkpoint_path(cfg, &model.name, fold, seed);
            let net = N::from_checkpoint(Checkpoint::load(&path)?).ok_or_else(|| {
                Error::Config(format!("{} does not hold a {:?} model", path.display(), model.kind))
            })?;
            nets.push(net);
        }
    }
    let store = store_for(cfg, model, data)?;
    let ctx = Ctx { store: &store, layers: &model.layers };
    let xs = inputs::<N>(&ctx, data)?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let n = infer_variants(cfg, &data[i]).len();
            let preds = nets.iter().map(|net| predict_tta(net, &xs[i], n)).collect::<Result<Vec<_>>>()?;
            average(&preds)
        })
        .collect()
}

/// Scores the test corpus with every fold and seed checkpoint, then writes
/// `submission.csv` (ensembled and clipped) and raw per-model files under
/// `predictions/`.
pub fn cmd_predict(cfg: &PipelineConfig) -> Result<Vec<(String, PredictionTriple)>> {
    if cfg.models.is_empty() {
        return Err(Error::Config("no models configured".into()));
    }
    let examples = test_corpus(cfg)?;
    let data = prepare(cfg, &examples)?;
    let mut per_model = Vec::with_capacity(cfg.models.len());
    for m in &cfg.models {
        let preds = match m.kind {
            ModelKind::End2end => predict_model::<End2endNet>(cfg, m, &data)?,
            ModelKind::PureBert => predict_model::<PureBertNet>(cfg, m, &data)?,
        };
        write_rows(&cfg.path(&format!("predictions/{}.csv", m.name)), &examples, &preds)?;
        per_model.push(preds);
    }
    let ens = ensemble_rows(cfg, &per_model, examples.len())?;
    write_rows(&cfg.path("submission.csv"), &examples, &ens)?;
    Ok(submission_rows(&examples, &ens))
}

/// Submission rows matched to the labeled test corpus. Rows for ids outside
/// the corpus are ignored; a corpus id without a row is an error.
fn scored_submission(cfg: &PipelineConfig) -> Result<(Vec<GapExample>, Vec<PredictionTriple>)> {
    let examples = test_corpus(cfg)?;
    let path = cfg.evaluate.submission.clone().unwrap_or_else(|| cfg.path("submission.csv"));
    let rows: HashMap<String, PredictionTriple> = read_submission(open(&path)?)?.into_iter().collect();
    let preds = examples
        .iter()
        .map(|e| {
            rows.get(&e.id).copied().ok_or_else(|| Error::Validation {
                id: e.id.clone(),
                field: "ID",
                message: format!("has no row in {}", path.display()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((examples, preds))
}

/// Overall, feminine and masculine log loss of a submission; writes `report.json`.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvalReport> {
    let (examples, preds) = scored_submission(cfg)?;
    let report = report_for(&examples, &preds)?;
    write_json(&cfg.path("report.json"), &report)?;
    Ok(report)
}

/// Resampled log loss of a submission; writes `bootstrap.json`.
pub fn cmd_bootstrap(cfg: &PipelineConfig) -> Result<BootstrapSummary> {
    let (examples, preds) = scored_submission(cfg)?;
    let labels: Vec<Label> = examples.iter().map(GapExample::label).collect();
    let b = &cfg.bootstrap;
    let summary = bootstrap_score(&preds, &labels, b.sample_size, b.iterations, cfg.seed, b.reference)?;
    write_json(&cfg.path("bootstrap.json"), &summary)?;
    Ok(summary)
}

/// Document-length histogram of each configured corpus file, written to
/// `lengths/<file stem>.csv`.
pub fn cmd_report_lengths(cfg: &PipelineConfig) -> Result<BTreeMap<String, BTreeMap<usize, usize>>> {
    let mut files: Vec<&PathBuf> = cfg.corpus.train.iter().collect();
    files.extend(cfg.corpus.sample.as_ref().map(|s| &s.path));
    files.extend(cfg.corpus.test.as_ref());
    if files.is_empty() {
        return Err(Error::Config("no corpus configured".into()));
    }
    let width = cfg.lengths.bin_width;
    let mut out = BTreeMap::new();
    for f in files {
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let bins = length_histogram(&load_corpus(f)?, width)?;
        let mut w = create(&cfg.path(&format!("lengths/{stem}.csv")))?;
        write_histogram_csv(&bins, width, &mut w)?;
        w.flush()?;
        out.insert(stem, bins);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [corpus]
        train = ["train.tsv"]

        [embeddings.stub]
        kind = "stub"
        dim = 8

        [[models]]
        name = "e2e"
        kind = "end2end"
        embeddings = "stub"
        layers = [-5]

        [[models]]
        name = "pure"
        kind = "pure_bert"
        embeddings = "stub"
        layers = [-5, -6]
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.folds, 5);
        assert!(cfg.augment.train && cfg.augment.inference);
        assert_eq!(cfg.ensemble.clip, DEFAULT_CLIP);
        assert_eq!(cfg.weights(), vec![0.5, 0.5]);
        assert_eq!(cfg.models[0].hidden(), vec![150]);
        assert_eq!(cfg.models[1].hidden(), vec![512, 32]);
        assert_eq!(cfg.models[0].train, TrainConfig::default());
        assert_eq!(layer_union(&cfg.models), vec![-5, -6]);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            layers: Some(vec![-4]),
            weights: Some(vec![0.9, 0.1]),
            clip: Some(0.006),
            out: Some("elsewhere".into()),
        });
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.models.iter().all(|m| m.layers == [-4]));
        assert_eq!(cfg.weights(), vec![0.9, 0.1]);
        assert_eq!(cfg.ensemble.clip, 0.006);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cases = [
            (Overrides { weights: Some(vec![0.5, 0.6]), ..Default::default() }, "sum"),
            (Overrides { weights: Some(vec![1.0]), ..Default::default() }, "1 ensemble weights"),
            (Overrides { clip: Some(0.5), ..Default::default() }, "clip"),
        ];
        for (o, needle) in cases {
            let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
            cfg.apply(&o);
            let err = cfg.validate().unwrap_err();
            assert!(err.to_string().contains(needle), "{err}");
            assert_eq!(err.exit_code(), 2);
        }
        let unknown = MINIMAL.replace("embeddings = \"stub\"\n        layers = [-5]\n", "embeddings = \"bert\"\n        layers = [-5]\n");
        assert!(PipelineConfig::from_toml(&unknown).unwrap().validate().is_err());
        assert!(matches!(PipelineConfig::from_toml("[corpus]\ntrian = []"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_config_is_exit_3() {
        let err = PipelineConfig::load(Path::new("/nonexistent/gap.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, MINIMAL).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.train[0], dir.path().join("train.tsv"));
        assert_eq!(cfg.out_dir, dir.path().join("out"));
    }

    #[test]
    fn custom_sets_must_be_single_words() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        cfg.augment.sets = Some(vec![SetConfig {
            feminine: ["Ann Lee".into(), "Kate".into()],
            masculine: ["John".into(), "Mike".into()],
        }]);
        assert!(cfg.validate().is_err());
    }
}
