//! Toy trainable captioner and its consistency-oriented objective.
//!
//! The model is a linear view-feature encoder followed by per-position
//! softmax decoders over a small vocabulary. It is deliberately tiny: every
//! loss term (token cross-entropy, feature-space triplet hinge, their
//! weighted combination) has a hand-derived analytic gradient that a
//! finite-difference check verifies end to end. "Visual features" for the
//! triplet term are the encoder outputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consensus::PseudoCaption;
use crate::embedding::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::num::{euclidean, quartiles, Quartiles, Real};
use crate::rng::{fnv1a64, stream, Rng, Stream};
use crate::scene::NUM_CLASSES;
use crate::textproc::tokenize;
use crate::Scalar;

pub const MODEL_VERSION: &str = "toycap/1";

const PROB_FLOOR: f64 = 1e-12;

/// Fixed token vocabulary. Index 0 is padding, index 1 the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: Vec<String>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    /// Sorted unique tokens of the given texts, after the two specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut words: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        words.sort_unstable();
        words.dedup();
        let mut all = vec!["<pad>".to_string(), "<unk>".to_string()];
        all.extend(words);
        Vocab { words: all }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn id_of(&self, word: &str) -> usize {
        self.words.iter().position(|w| w == word).unwrap_or(Self::UNK)
    }

    /// Token ids padded or truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenTarget {
        let mut ids: Vec<usize> =
            tokenize(text).iter().take(max_len).map(|w| self.id_of(w)).collect();
        ids.resize(max_len, Self::PAD);
        TokenTarget { ids }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != Self::PAD)
            .map(|&id| self.words[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Target token sequence; padding positions are masked out of the loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTarget {
    pub ids: Vec<usize>,
}

/// Encode a view descriptor: class one-hot, hashed attribute bag, and the
/// visible fraction.
pub fn encode_view<R: Real>(
    class_index: usize,
    attribute_tokens: &[String],
    visible_fraction: f64,
    attr_dim: usize,
) -> Vec<R> {
    let mut v = vec![R::zero(); NUM_CLASSES + attr_dim + 1];
    if class_index < NUM_CLASSES {
        v[class_index] = R::one();
    }
    for token in attribute_tokens {
        let bucket = (fnv1a64(token.as_bytes()) % attr_dim as u64) as usize;
        v[NUM_CLASSES + bucket] += R::one();
    }
    v[NUM_CLASSES + attr_dim] = R::from_f64_c(visible_fraction);
    v
}

/// One training sample: an encoded view and its pseudo-caption tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<R> {
    pub instance_id: u32,
    pub input: Vec<R>,
    pub target: TokenTarget,
}

/// Linear encoder + per-position softmax decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCaptioner<R> {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// feature_dim x input_dim, row-major.
    pub encoder: Vec<R>,
    /// max_len x vocab_size x feature_dim.
    pub decoder: Vec<R>,
    pub vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    input_dim: usize,
    feature_dim: usize,
    vocab_size: usize,
    max_len: usize,
    encoder: Vec<f64>,
    decoder: Vec<f64>,
    vocab: Vocab,
}

impl<R: Real> ToyCaptioner<R> {
    pub fn init(vocab: Vocab, input_dim: usize, feature_dim: usize, max_len: usize, rng: &mut Stream) -> Self {
        let vocab_size = vocab.len();
        let scale = 0.5;
        let encoder = (0..feature_dim * input_dim)
            .map(|_| R::from_f64_c(rng.gen_range(-scale..scale)))
            .collect();
        let decoder = (0..max_len * vocab_size * feature_dim)
            .map(|_| R::from_f64_c(rng.gen_range(-scale..scale)))
            .collect();
        Self { input_dim, feature_dim, vocab_size, max_len, encoder, decoder, vocab }
    }

    pub fn param_len(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }

    pub fn param(&self, i: usize) -> R {
        if i < self.encoder.len() {
            self.encoder[i]
        } else {
            self.decoder[i - self.encoder.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut R {
        let n = self.encoder.len();
        if i < n {
            &mut self.encoder[i]
        } else {
            &mut self.decoder[i - n]
        }
    }

    /// Visual feature of a view: x = W_enc v.
    pub fn encode(&self, input: &[R]) -> Vec<R> {
        debug_assert_eq!(input.len(), self.input_dim);
        (0..self.feature_dim)
            .map(|f| {
                let row = &self.encoder[f * self.input_dim..(f + 1) * self.input_dim];
                crate::num::dot(row, input)
            })
            .collect()
    }

    fn logits_at(&self, t: usize, x: &[R]) -> Vec<R> {
        let base = t * self.vocab_size * self.feature_dim;
        (0..self.vocab_size)
            .map(|c| {
                let row = &self.decoder
                    [base + c * self.feature_dim..base + (c + 1) * self.feature_dim];
                crate::num::dot(row, x)
            })
            .collect()
    }

    /// Per-position token distributions; each row sums to 1.
    pub fn decode_probs(&self, x: &[R]) -> Vec<Vec<R>> {
        (0..self.max_len).map(|t| softmax(&self.logits_at(t, x))).collect()
    }

    /// Greedy decode: argmax token per position, stopping at padding.
    pub fn decode_caption(&self, input: &[R]) -> String {
        let x = self.encode(input);
        let ids: Vec<usize> =
            (0..self.max_len).map(|t| crate::num::argmax(&self.logits_at(t, &x))).collect();
        self.vocab.decode(&ids)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ModelFile {
            version: MODEL_VERSION.into(),
            input_dim: self.input_dim,
            feature_dim: self.feature_dim,
            vocab_size: self.vocab_size,
            max_len: self.max_len,
            encoder: self.encoder.iter().map(|v| v.to_f64().unwrap()).collect(),
            decoder: self.decoder.iter().map(|v| v.to_f64().unwrap()).collect(),
            vocab: self.vocab.clone(),
        })
        .expect("model serializable")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: ModelFile = serde_json::from_value(value)?;
        if file.version != MODEL_VERSION {
            return Err(Error::Version { expected: MODEL_VERSION.into(), found: file.version });
        }
        Ok(Self {
            input_dim: file.input_dim,
            feature_dim: file.feature_dim,
            vocab_size: file.vocab_size,
            max_len: file.max_len,
            encoder: file.encoder.into_iter().map(R::from_f64_c).collect(),
            decoder: file.decoder.into_iter().map(R::from_f64_c).collect(),
            vocab: file.vocab,
        })
    }
}

fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let max = logits.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<R> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: R = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Token cross-entropy over unmasked positions, probabilities clamped below
/// before the log.
pub fn caption_loss<R: Real>(probs: &[Vec<R>], target: &TokenTarget) -> Result<R> {
    if probs.len() != target.ids.len() {
        return Err(Error::Contract(format!(
            "probs rows {} vs target length {}",
            probs.len(),
            target.ids.len()
        )));
    }
    let floor = R::from_f64_c(PROB_FLOOR);
    let mut loss = R::zero();
    for (row, &id) in probs.iter().zip(&target.ids) {
        if id == Vocab::PAD {
            continue;
        }
        if id >= row.len() {
            return Err(Error::Contract(format!("target id {id} outside vocab {}", row.len())));
        }
        loss -= row[id].max(floor).ln();
    }
    Ok(loss)
}

/// Hinge on feature distances: max(d(a,p) - d(a,n) + margin, 0).
pub fn triplet_loss<R: Real>(xa: &[R], xp: &[R], xn: &[R], margin: R) -> Result<R> {
    if xa.len() != xp.len() || xa.len() != xn.len() {
        return Err(Error::Contract(format!(
            "feature dims differ: {} / {} / {}",
            xa.len(),
            xp.len(),
            xn.len()
        )));
    }
    Ok((euclidean(xa, xp) - euclidean(xa, xn) + margin).max(R::zero()))
}

/// L = caption + lambda * triplet.
pub fn combined_loss<R: Real>(cap: R, tr: R, lambda_tr: R) -> R {
    cap + lambda_tr * tr
}

/// Aligned anchor/positive/negative view inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripletBatch<R> {
    pub anchors: Vec<Vec<R>>,
    pub positives: Vec<Vec<R>>,
    pub negatives: Vec<Vec<R>>,
    /// Anchors without a valid positive or negative.
    pub skipped: usize,
}

impl<R> TripletBatch<R> {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// One triplet per anchor whose instance has another view and where at
/// least one other instance exists; failing anchors are counted, not
/// sampled. Positives and negatives are drawn uniformly.
pub fn sample_triplets<R: Real>(examples: &[TrainExample<R>], rng: &mut Stream) -> TripletBatch<R> {
    let mut by_instance: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_instance.entry(ex.instance_id).or_default().push(i);
    }
    let mut batch = TripletBatch::default();
    if by_instance.len() < 2 {
        batch.skipped = examples.len();
        return batch;
    }
    for (i, anchor) in examples.iter().enumerate() {
        let same = &by_instance[&anchor.instance_id];
        let positives: Vec<usize> = same.iter().copied().filter(|&j| j != i).collect();
        if positives.is_empty() {
            batch.skipped += 1;
            continue;
        }
        let negatives: Vec<usize> = examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.instance_id != anchor.instance_id)
            .map(|(j, _)| j)
            .collect();
        let p = positives[rng.gen_range(0..positives.len())];
        let n = negatives[rng.gen_range(0..negatives.len())];
        batch.anchors.push(anchor.input.clone());
        batch.positives.push(examples[p].input.clone());
        batch.negatives.push(examples[n].input.clone());
    }
    batch
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_tr: f64,
    pub margin: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Fraction of instances held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_tr: 0.1,
            margin: 2.0,
            learning_rate: 5e-4,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 10,
            patience: 3,
            val_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Mean combined objective over a batch plus L2 weight decay, with its
/// analytic gradient in flat parameter order (encoder then decoder).
pub fn batch_objective_with_grad<R: Real>(
    model: &ToyCaptioner<R>,
    examples: &[TrainExample<R>],
    triplets: &TripletBatch<R>,
    cfg: &LossConfig,
) -> Result<(R, Vec<R>)> {
    if examples.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let n = R::from_count(examples.len());
    let lambda = R::from_f64_c(cfg.lambda_tr);
    let margin = R::from_f64_c(cfg.margin);
    let wd = R::from_f64_c(cfg.weight_decay);

    let enc_len = model.encoder.len();
    let mut grad = vec![R::zero(); model.param_len()];
    let mut total = R::zero();

    // captioning term
    for ex in examples {
        let x = model.encode(&ex.input);
        let mut dx = vec![R::zero(); model.feature_dim];
        for (t, &target_id) in ex.target.ids.iter().enumerate() {
            let probs = softmax(&model.logits_at(t, &x));
            if target_id == Vocab::PAD {
                continue;
            }
            total -= probs[target_id].max(R::from_f64_c(PROB_FLOOR)).ln() / n;
            let base = t * model.vocab_size * model.feature_dim;
            for c in 0..model.vocab_size {
                let delta =
                    if c == target_id { probs[c] - R::one() } else { probs[c] } / n;
                if delta == R::zero() {
                    continue;
                }
                for f in 0..model.feature_dim {
                    grad[enc_len + base + c * model.feature_dim + f] += delta * x[f];
                    dx[f] += delta * model.decoder[base + c * model.feature_dim + f];
                }
            }
        }
        for f in 0..model.feature_dim {
            for d in 0..model.input_dim {
                grad[f * model.input_dim + d] += dx[f] * ex.input[d];
            }
        }
    }

    // triplet term, averaged over the same batch size
    for k in 0..triplets.len() {
        let (va, vp, vn) = (&triplets.anchors[k], &triplets.positives[k], &triplets.negatives[k]);
        let a = model.encode(va);
        let p = model.encode(vp);
        let nf = model.encode(vn);
        let d_ap = euclidean(&a, &p);
        let d_an = euclidean(&a, &nf);
        let hinge = d_ap - d_an + margin;
        if hinge <= R::zero() {
            continue;
        }
        total += lambda * hinge / n;
        if d_ap == R::zero() || d_an == R::zero() {
            // gradient of the distance is undefined at zero; treat as flat
            continue;
        }
        let scale = lambda / n;
        for f in 0..model.feature_dim {
            let u_ap = (a[f] - p[f]) / d_ap;
            let u_an = (a[f] - nf[f]) / d_an;
            let da = scale * (u_ap - u_an);
            let dp = -scale * u_ap;
            let dn = scale * u_an;
            for d in 0..model.input_dim {
                grad[f * model.input_dim + d] += da * va[d] + dp * vp[d] + dn * vn[d];
            }
        }
    }

    // L2 weight decay
    let half = R::from_f64_c(0.5);
    for i in 0..model.param_len() {
        let w = model.param(i);
        total += half * wd * w * w;
        grad[i] += wd * w;
    }

    Ok((total, grad))
}

/// The same objective without gradients (used by the finite-difference
/// probe and for validation-style evaluation).
pub fn batch_objective<R: Real>(
    model: &ToyCaptioner<R>,
    examples: &[TrainExample<R>],
    triplets: &TripletBatch<R>,
    cfg: &LossConfig,
) -> Result<R> {
    if examples.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let n = R::from_count(examples.len());
    let lambda = R::from_f64_c(cfg.lambda_tr);
    let margin = R::from_f64_c(cfg.margin);
    let mut total = R::zero();
    for ex in examples {
        let x = model.encode(&ex.input);
        let probs = model.decode_probs(&x);
        total += caption_loss(&probs, &ex.target)? / n;
    }
    for k in 0..triplets.len() {
        let a = model.encode(&triplets.anchors[k]);
        let p = model.encode(&triplets.positives[k]);
        let nf = model.encode(&triplets.negatives[k]);
        total += lambda * triplet_loss(&a, &p, &nf, margin)? / n;
    }
    let half = R::from_f64_c(0.5);
    let wd = R::from_f64_c(cfg.weight_decay);
    for i in 0..model.param_len() {
        let w = model.param(i);
        total += half * wd * w * w;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckOutcome<R> {
    Checked { max_rel_error: R, params_probed: usize },
    Skipped { reason: String },
}

/// Central finite differences (h = 1e-5) against the analytic gradient on a
/// random parameter subset. Batches at the hinge kink or with zero-distance
/// pairs are skipped: the objective is not differentiable there.
pub fn grad_check<R: Real>(
    model: &ToyCaptioner<R>,
    examples: &[TrainExample<R>],
    triplets: &TripletBatch<R>,
    cfg: &LossConfig,
    rng: &mut Stream,
) -> Result<GradCheckOutcome<R>> {
    let margin = R::from_f64_c(cfg.margin);
    let kink_tol = R::from_f64_c(1e-4);
    for k in 0..triplets.len() {
        let a = model.encode(&triplets.anchors[k]);
        let p = model.encode(&triplets.positives[k]);
        let nf = model.encode(&triplets.negatives[k]);
        let d_ap = euclidean(&a, &p);
        let d_an = euclidean(&a, &nf);
        if d_ap == R::zero() || d_an == R::zero() {
            return Ok(GradCheckOutcome::Skipped { reason: format!("triplet {k}: zero distance") });
        }
        if (d_ap - d_an + margin).abs() <= kink_tol {
            return Ok(GradCheckOutcome::Skipped {
                reason: format!("triplet {k}: at the hinge kink"),
            });
        }
    }

    let (_, analytic) = batch_objective_with_grad(model, examples, triplets, cfg)?;
    let h = R::from_f64_c(1e-5);
    let floor = R::from_f64_c(1e-3);
    let n_probe = 40.min(model.param_len());
    let mut max_rel = R::zero();
    let mut probe = model.clone();
    for _ in 0..n_probe {
        let i = rng.gen_range(0..model.param_len());
        let orig = probe.param(i);
        *probe.param_mut(i) = orig + h;
        let plus = batch_objective(&probe, examples, triplets, cfg)?;
        *probe.param_mut(i) = orig - h;
        let minus = batch_objective(&probe, examples, triplets, cfg)?;
        *probe.param_mut(i) = orig;
        let numeric = (plus - minus) / (h + h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        let rel = (analytic[i] - numeric).abs() / denom;
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckOutcome::Checked { max_rel_error: max_rel, params_probed: n_probe })
}

/// Stop when the watched loss has not improved for `patience` consecutive
/// observations.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    best: f64,
    bad: usize,
    patience: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self { best: f64::INFINITY, bad: 0, patience }
    }

    /// Returns true when training should stop after this observation.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - 1e-12 {
            self.best = loss;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        self.patience > 0 && self.bad >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl History {
    pub fn initial_train(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_loss)
    }

    pub fn final_train(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Split by instance: every `1/val_fraction`-th instance (after a seeded
/// shuffle) goes to validation.
fn split_by_instance<R: Real>(
    dataset: &[TrainExample<R>],
    val_fraction: f64,
    rng: &mut Stream,
) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<u32> = dataset.iter().map(|e| e.instance_id).collect();
    ids.sort_unstable();
    ids.dedup();
    // Fisher-Yates
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let n_val = ((ids.len() as f64 * val_fraction).floor() as usize).min(ids.len().saturating_sub(1));
    let val_ids: std::collections::BTreeSet<u32> = ids.iter().take(n_val).copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, ex) in dataset.iter().enumerate() {
        if val_ids.contains(&ex.instance_id) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Plain gradient descent on the combined objective with early stopping on
/// the validation captioning loss. Deterministic under a fixed seed.
pub fn finetune<R: Real>(
    mut model: ToyCaptioner<R>,
    dataset: &[TrainExample<R>],
    cfg: &LossConfig,
) -> Result<(ToyCaptioner<R>, History)> {
    if dataset.is_empty() {
        return Err(Error::Contract("empty training dataset".into()));
    }
    let mut rng = stream(cfg.seed, "finetune");
    let (train_idx, val_idx) = split_by_instance(dataset, cfg.val_fraction, &mut rng);
    let train: Vec<TrainExample<R>> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let val: Vec<TrainExample<R>> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    if train.is_empty() {
        return Err(Error::Contract("no training instances after the split".into()));
    }

    let val_cfg = LossConfig { lambda_tr: 0.0, weight_decay: 0.0, ..cfg.clone() };
    let empty = TripletBatch::default();
    let mut history = History::default();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let lr = R::from_f64_c(cfg.learning_rate);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<TrainExample<R>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let triplets = if cfg.lambda_tr > 0.0 {
                sample_triplets(&batch, &mut rng)
            } else {
                TripletBatch::default()
            };
            let (_, grad) = batch_objective_with_grad(&model, &batch, &triplets, cfg)?;
            for (i, g) in grad.iter().enumerate() {
                *model.param_mut(i) -= lr * *g;
            }
        }

        let train_triplets = if cfg.lambda_tr > 0.0 {
            sample_triplets(&train, &mut rng)
        } else {
            TripletBatch::default()
        };
        let train_loss =
            batch_objective(&model, &train, &train_triplets, cfg)?.to_f64().unwrap();
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            batch_objective(&model, &val, &empty, &val_cfg)?.to_f64().unwrap()
        };
        history.epochs.push(EpochStats { epoch, train_loss, val_loss });
        if stopper.observe(val_loss) {
            history.stopped_early = true;
            break;
        }
    }
    Ok((model, history))
}

/// Per-instance consistency: mean pairwise cosine between the embeddings of
/// the captions the model decodes for each view. Instances with fewer than
/// two views are skipped.
pub fn consistency_scores(
    model: &ToyCaptioner<Scalar>,
    dataset: &[TrainExample<Scalar>],
    embedder: &dyn Embedder,
) -> Vec<(u32, f64)> {
    let mut by_instance: BTreeMap<u32, Vec<&TrainExample<Scalar>>> = BTreeMap::new();
    for ex in dataset {
        by_instance.entry(ex.instance_id).or_default().push(ex);
    }
    let mut out = Vec::new();
    for (id, views) in by_instance {
        if views.len() < 2 {
            continue;
        }
        let embeddings: Vec<_> =
            views.iter().map(|v| embedder.embed(&model.decode_caption(&v.input))).collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..embeddings.len() {
            for j in i + 1..embeddings.len() {
                total += cosine(&embeddings[i], &embeddings[j]);
                pairs += 1;
            }
        }
        out.push((id, total / pairs as f64));
    }
    out
}

/// Quartile summary of a consistency distribution.
pub fn consistency_summary(scores: &[(u32, f64)]) -> Option<Quartiles> {
    quartiles(&scores.iter().map(|(_, s)| *s).collect::<Vec<_>>())
}

/// Build the training dataset from distilled captions: one example per
/// recorded view, all views of an instance sharing its pseudo-caption as
/// the target.
pub fn dataset_from_pseudo(
    pseudo: &BTreeMap<u32, PseudoCaption>,
    vocab: &Vocab,
    attr_dim: usize,
    max_len: usize,
) -> Vec<TrainExample<Scalar>> {
    let mut out = Vec::new();
    for (id, p) in pseudo {
        let target = vocab.encode(&p.text, max_len);
        for view in &p.views {
            out.push(TrainExample {
                instance_id: *id,
                input: encode_view(
                    view.class_index,
                    &view.attribute_tokens,
                    view.visible_fraction,
                    attr_dim,
                ),
                target: target.clone(),
            });
        }
    }
    out
}

/// Vocabulary over the pseudo-caption texts.
pub fn vocab_from_pseudo(pseudo: &BTreeMap<u32, PseudoCaption>) -> Vocab {
    Vocab::build(pseudo.values().map(|p| p.text.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda_tr: f64,
    pub initial_train: f64,
    pub final_train: f64,
    pub final_val: f64,
    pub median_consistency: f64,
    pub converged: bool,
}

/// Train once per triplet weight and tabulate convergence plus post-training
/// consistency.
pub fn lambda_ablation(
    model: &ToyCaptioner<Scalar>,
    dataset: &[TrainExample<Scalar>],
    base_cfg: &LossConfig,
    lambdas: &[f64],
    embedder: &dyn Embedder,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &lambda_tr in lambdas {
        let cfg = LossConfig { lambda_tr, ..base_cfg.clone() };
        let (trained, history) = finetune(model.clone(), dataset, &cfg)?;
        let scores = consistency_scores(&trained, dataset, embedder);
        let median = consistency_summary(&scores).map(|q| q.median).unwrap_or(f64::NAN);
        let initial = history.initial_train().unwrap_or(f64::NAN);
        let fin = history.final_train().unwrap_or(f64::NAN);
        rows.push(AblationRow {
            lambda_tr,
            initial_train: initial,
            final_train: fin,
            final_val: history.epochs.last().map(|e| e.val_loss).unwrap_or(f64::NAN),
            median_consistency: median,
            converged: fin < initial,
        });
    }
    Ok(rows)
}

pub fn ablation_table_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "| lambda_tr | initial train | final train | final val | median consistency | converged |\n|---|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
            r.lambda_tr, r.initial_train, r.final_train, r.final_val, r.median_consistency, r.converged
        ));
    }
    out
}

pub fn ablation_table_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("lambda_tr,initial_train,final_train,final_val,median_consistency,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.lambda_tr, r.initial_train, r.final_train, r.final_val, r.median_consistency, r.converged
        ));
    }
    out
}
