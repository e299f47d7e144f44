//! The two classifier heads and their training loop.
//!
//! `PureBertNet` is an MLP over the concatenated A, B and pronoun vectors.
//! `End2endNet` scores each candidate with a shared pair scorer over
//! `[name; pronoun; name * pronoun; hand features]` and puts a fixed zero
//! logit on Neither. Both train with plain mini-batch gradient descent on
//! mean cross-entropy, gradients computed by hand.

use std::io::Write;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval::PredictionTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; the network is affine in its input.
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|x| x.max(0.0));
        }
    }
}

/// Affine layer `y = W x + b` with `W` shaped (outputs, inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Uniform in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let r = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.gen_range(-r..=r));
        Dense { weight, bias: Array1::zeros(outputs) }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn param(&self, i: usize) -> f64 {
        let nw = self.weight.len();
        if i < nw {
            self.weight.as_slice().expect("standard layout")[i]
        } else {
            self.bias[i - nw]
        }
    }

    fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weight.len();
        if i < nw {
            &mut self.weight.as_slice_mut().expect("standard layout")[i]
        } else {
            &mut self.bias[i - nw]
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

/// Gradient of the loss with respect to one `Dense` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrad {
    fn get(&self, i: usize) -> f64 {
        let nw = self.weight.len();
        if i < nw {
            self.weight.as_slice().expect("standard layout")[i]
        } else {
            self.bias[i - nw]
        }
    }
}

/// Stack of dense layers, nonlinearity between them, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

struct MlpCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Mlp {
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Mlp { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn forward_cached(&self, x: Array2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h);
            if i < last {
                self.activation.apply(&mut z);
            }
            inputs.push(h);
            h = z;
        }
        MlpCache { inputs, output: h }
    }

    pub fn forward(&self, x: Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).output
    }

    fn backward(&self, cache: &MlpCache, d_out: Array2<f64>) -> Vec<DenseGrad> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            grads.push(DenseGrad { weight: delta.t().dot(input), bias: delta.sum_axis(Axis(0)) });
            if i > 0 {
                let mut d_in = delta.dot(&layer.weight);
                if self.activation == Activation::Relu {
                    // the layer input is the post-activation of the layer below
                    d_in.zip_mut_with(input, |d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                delta = d_in;
            }
        }
        grads.reverse();
        grads
    }

    /// Signs of every hidden pre-activation, used to detect kinks.
    fn pattern(&self, x: Array2<f64>) -> Vec<bool> {
        let cache = self.forward_cached(x);
        cache.inputs[1..].iter().flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect()
    }
}

/// Cross-entropy and its gradient with respect to logits, averaged over rows.
fn softmax_xent(logits: &Array2<f64>, labels: &[Label]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, (row, label)) in logits.outer_iter().zip(labels).enumerate() {
        let p = PredictionTriple::softmax([row[0], row[1], row[2]]).to_array();
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        loss += lse - row[label.index()];
        for k in 0..3 {
            grad[[i, k]] = (p[k] - if k == label.index() { 1.0 } else { 0.0 }) / n;
        }
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("cross-entropy {loss}")));
    }
    Ok((loss, grad))
}

/// A classifier head trainable by [`train`].
pub trait Classifier: Clone + Send + Sync {
    type Input: Sync;

    fn predict(&self, input: &Self::Input) -> Result<PredictionTriple>;

    /// Mean cross-entropy over the batch and its gradient per layer.
    fn loss_and_gradients(&self, batch: &[(&Self::Input, Label)]) -> Result<(f64, Vec<DenseGrad>)>;

    fn layers(&self) -> Vec<&Dense>;

    fn layers_mut(&mut self) -> Vec<&mut Dense>;

    /// Hidden-unit activity for one input; changes signal a ReLU kink.
    fn activation_pattern(&self, input: &Self::Input) -> Vec<bool>;

    fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Pure BERT head
// ---------------------------------------------------------------------------

/// MLP over `[A; B; pronoun]`: `3 d -> 512 -> 32 -> 3` by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureBertNet {
    pub mlp: Mlp,
}

pub const PURE_BERT_HIDDEN: [usize; 2] = [512, 32];

impl PureBertNet {
    pub fn new(input_dim: usize, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(3);
        PureBertNet { mlp: Mlp::new(&sizes, activation, &mut rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn matrix(&self, batch: &[&Vec<f64>]) -> Result<Array2<f64>> {
        let d = self.input_dim();
        let mut x = Array2::zeros((batch.len(), d));
        for (i, v) in batch.iter().enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
            }
            x.row_mut(i).assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
        Ok(x)
    }
}

/// Concatenates the three mention vectors.
pub fn pure_bert_input(a: &[f64], b: &[f64], p: &[f64]) -> Vec<f64> {
    [a, b, p].concat()
}

impl Classifier for PureBertNet {
    type Input = Vec<f64>;

    fn predict(&self, input: &Vec<f64>) -> Result<PredictionTriple> {
        let out = self.mlp.forward(self.matrix(&[input])?);
        Ok(PredictionTriple::softmax([out[[0, 0]], out[[0, 1]], out[[0, 2]]]))
    }

    fn loss_and_gradients(&self, batch: &[(&Vec<f64>, Label)]) -> Result<(f64, Vec<DenseGrad>)> {
        let inputs: Vec<&Vec<f64>> = batch.iter().map(|b| b.0).collect();
        let labels: Vec<Label> = batch.iter().map(|b| b.1).collect();
        let cache = self.mlp.forward_cached(self.matrix(&inputs)?);
        let (loss, d_logits) = softmax_xent(&cache.output, &labels)?;
        Ok((loss, self.mlp.backward(&cache, d_logits)))
    }

    fn layers(&self) -> Vec<&Dense> {
        self.mlp.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.mlp.layers.iter_mut().collect()
    }

    fn activation_pattern(&self, input: &Vec<f64>) -> Vec<bool> {
        self.matrix(&[input]).map(|x| self.mlp.pattern(x)).unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// End2end head
// ---------------------------------------------------------------------------

/// Embeddings and hand features for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct End2endInput {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p: Vec<f64>,
    pub feats_a: Vec<f64>,
    pub feats_b: Vec<f64>,
}

impl End2endInput {
    /// The same example with the candidates exchanged.
    pub fn swapped(&self) -> Self {
        End2endInput {
            a: self.b.clone(),
            b: self.a.clone(),
            p: self.p.clone(),
            feats_a: self.feats_b.clone(),
            feats_b: self.feats_a.clone(),
        }
    }
}

/// `[name; pronoun; name * pronoun; features]`.
pub fn pair_features(name: &[f64], pronoun: &[f64], feats: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * name.len() + feats.len());
    v.extend_from_slice(name);
    v.extend_from_slice(pronoun);
    v.extend(name.iter().zip(pronoun).map(|(x, y)| x * y));
    v.extend_from_slice(feats);
    v
}

/// Shared pair scorer with a constant zero logit for Neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct End2endNet {
    pub scorer: Mlp,
    pub emb_dim: usize,
    pub feat_dim: usize,
}

pub const END2END_HIDDEN: usize = 150;

impl End2endNet {
    pub fn new(emb_dim: usize, feat_dim: usize, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![3 * emb_dim + feat_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        End2endNet { scorer: Mlp::new(&sizes, activation, &mut rng), emb_dim, feat_dim }
    }

    fn check(&self, x: &End2endInput) -> Result<()> {
        for (v, d) in [
            (&x.a, self.emb_dim),
            (&x.b, self.emb_dim),
            (&x.p, self.emb_dim),
            (&x.feats_a, self.feat_dim),
            (&x.feats_b, self.feat_dim),
        ] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
            }
        }
        Ok(())
    }

    /// Rows `0..n` hold the A pairs, rows `n..2n` the B pairs.
    fn pair_matrix(&self, batch: &[&End2endInput]) -> Result<Array2<f64>> {
        let n = batch.len();
        let width = 3 * self.emb_dim + self.feat_dim;
        let mut x = Array2::zeros((2 * n, width));
        for (i, inp) in batch.iter().enumerate() {
            self.check(inp)?;
            let pa = pair_features(&inp.a, &inp.p, &inp.feats_a);
            let pb = pair_features(&inp.b, &inp.p, &inp.feats_b);
            x.row_mut(i).assign(&ndarray::ArrayView1::from(pa.as_slice()));
            x.row_mut(n + i).assign(&ndarray::ArrayView1::from(pb.as_slice()));
        }
        Ok(x)
    }

    /// Score for one candidate pair, evaluated row by row so A and B go
    /// through identical arithmetic.
    pub fn score_pair(&self, pair: &[f64]) -> f64 {
        let mut h = Array1::from(pair.to_vec());
        let last = self.scorer.layers.len() - 1;
        for (i, layer) in self.scorer.layers.iter().enumerate() {
            let mut z = layer.weight.dot(&h) + &layer.bias;
            if i < last && self.scorer.activation == Activation::Relu {
                z.mapv_inplace(|x| x.max(0.0));
            }
            h = z;
        }
        h[0]
    }
}

impl Classifier for End2endNet {
    type Input = End2endInput;

    fn predict(&self, x: &End2endInput) -> Result<PredictionTriple> {
        self.check(x)?;
        let sa = self.score_pair(&pair_features(&x.a, &x.p, &x.feats_a));
        let sb = self.score_pair(&pair_features(&x.b, &x.p, &x.feats_b));
        Ok(PredictionTriple::softmax([sa, sb, 0.0]))
    }

    fn loss_and_gradients(&self, batch: &[(&End2endInput, Label)]) -> Result<(f64, Vec<DenseGrad>)> {
        let n = batch.len();
        let inputs: Vec<&End2endInput> = batch.iter().map(|b| b.0).collect();
        let labels: Vec<Label> = batch.iter().map(|b| b.1).collect();
        let cache = self.scorer.forward_cached(self.pair_matrix(&inputs)?);
        let scores = cache.output.column(0);
        let mut logits = Array2::zeros((n, 3));
        logits.column_mut(0).assign(&scores.slice(s![..n]));
        logits.column_mut(1).assign(&scores.slice(s![n..]));
        let (loss, d_logits) = softmax_xent(&logits, &labels)?;
        let mut d_scores = Array2::zeros((2 * n, 1));
        d_scores.slice_mut(s![..n, 0]).assign(&d_logits.column(0));
        d_scores.slice_mut(s![n.., 0]).assign(&d_logits.column(1));
        Ok((loss, self.scorer.backward(&cache, d_scores)))
    }

    fn layers(&self) -> Vec<&Dense> {
        self.scorer.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.scorer.layers.iter_mut().collect()
    }

    fn activation_pattern(&self, input: &End2endInput) -> Vec<bool> {
        self.pair_matrix(&[input]).map(|x| self.scorer.pattern(x)).unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the shuffling order; network initialization takes its own seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-3, epochs: 50, batch_size: 32, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    pub net: N,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch gradient descent on mean cross-entropy. Deterministic for a
/// given initial net, dataset order and `config.seed`.
pub fn train<N: Classifier>(mut net: N, data: &[(N::Input, Label)], config: &TrainConfig) -> Result<TrainOutcome<N>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&N::Input, Label)> = chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
            let (loss, grads) = net.loss_and_gradients(&batch).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            total += loss * chunk.len() as f64;
            for (layer, g) in net.layers_mut().into_iter().zip(&grads) {
                layer.weight.scaled_add(-config.learning_rate, &g.weight);
                layer.bias.scaled_add(-config.learning_rate, &g.bias);
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !net.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: training loss {mean}")));
        }
        loss_trace.push(mean);
    }
    Ok(TrainOutcome { net, loss_trace })
}

pub fn write_loss_trace<W: Write>(trace: &[f64], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["epoch", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of the probability outputs of several nets.
pub fn seed_average<N: Classifier>(nets: &[N], input: &N::Input) -> Result<PredictionTriple> {
    let preds = nets.iter().map(|n| n.predict(input)).collect::<Result<Vec<_>>>()?;
    crate::eval::average(&preds)
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation crossed a ReLU kink.
    pub skipped: usize,
}

pub const FD_STEP: f64 = 1e-4;

/// Compares analytic gradients against central differences with step
/// [`FD_STEP`]. Relative error is `|a - n| / max(|a|, |n|, 1e-7)`.
/// Coordinates whose ±step evaluations see different ReLU patterns are
/// skipped and counted.
pub fn gradient_check<N: Classifier>(net: &N, input: &N::Input, label: Label) -> Result<GradientCheck> {
    let (_, grads) = net.loss_and_gradients(&[(input, label)])?;
    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let n_layers = grads.len();
    for li in 0..n_layers {
        let count = net.layers()[li].param_count();
        for pi in 0..count {
            let orig = net.layers()[li].param(pi);
            *probe.layers_mut()[li].param_mut(pi) = orig + FD_STEP;
            let (plus, _) = probe.loss_and_gradients(&[(input, label)])?;
            let pat_plus = probe.activation_pattern(input);
            *probe.layers_mut()[li].param_mut(pi) = orig - FD_STEP;
            let (minus, _) = probe.loss_and_gradients(&[(input, label)])?;
            let pat_minus = probe.activation_pattern(input);
            *probe.layers_mut()[li].param_mut(pi) = orig;
            if pat_plus != pat_minus {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[li].get(pi);
            let denom = analytic.abs().max(numeric.abs()).max(1e-7);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradientCheck { max_relative_error: max_rel, checked, skipped })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    PureBert { version: u32, layers: Vec<i32>, net: PureBertNet },
    End2end { version: u32, layers: Vec<i32>, net: End2endNet },
}

impl Checkpoint {
    pub fn version(&self) -> u32 {
        match self {
            Checkpoint::PureBert { version, .. } | Checkpoint::End2end { version, .. } => *version,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let c: Checkpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if c.version() != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", c.version())));
        }
        Ok(c)
    }
}
