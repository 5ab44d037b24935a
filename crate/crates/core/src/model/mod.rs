//! The bidirectional LSTM tagger and its label-noise transformation.
//!
//! For a sentence `x_1..x_T` the model embeds each token, runs one LSTM over
//! the sentence left-to-right and another right-to-left, and combines the two
//! hidden states at each position into a distribution over tags:
//!
//! ```text
//! o_t = softmax(V_f h_fwd_t + V_b h_bwd_t + b)
//! ```
//!
//! `o_t` is what the tagger predicts with. Projected supervision is noisy, so
//! during training it is matched not against `o_t` but against a transformed
//! distribution that models how true tags get corrupted into projected ones:
//!
//! ```text
//! õ_t[j] = softmax_j( Σ_i  A[i][j] · o_t[i] )
//! ```
//!
//! The transformation `A` starts at the identity and is learned jointly with
//! the rest; whatever systematic noise the projected labels carry ends up in
//! `A` instead of in the tagger.

mod cell;
mod gradcheck;
mod io;
mod net;

pub use cell::{lstm_step, GateParams, LstmDirectionParams};
pub use gradcheck::{
    check_gradients, finite_difference_gradient, GradCheckConfig, GradCheckReport, GradCheckRun,
};
pub use net::{
    direct_nll, gold_nll, gradients, gradients_direct, joint_loss, projected_nll, GoldExample,
    ProjectedExample,
};
pub(crate) use net::{gradient_pass, sentence_accuracy_counts};

use ndarray::{Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tagset::TagSet;

/// Initial scale of the label-noise transformation: the identity times this.
pub const BIAS_TRANSFORM_INIT_GAIN: f64 = 1.0;

/// Parameters are drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`.
pub const INIT_RANGE: f64 = 0.08;

/// Probabilities are clamped to this floor before taking logs.
pub(crate) const LOG_FLOOR: f64 = 1e-12;

/// All size information needed to allocate a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Tagset size the tagger predicts over.
    pub gold_tags: usize,
    /// Tagset size of the projected supervision (columns of `A`).
    pub proj_tags: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("gold_tags", self.gold_tags),
            ("proj_tags", self.proj_tags),
        ];
        for (name, v) in all {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Every trainable array of the model.
///
/// The order of fields (and of [`slices`](Self::slices)) is the canonical
/// flat layout used by initialization, serialization and the gradient
/// checker: embedding, forward LSTM gates (input, forget, output, candidate;
/// `w`, `u`, `b` each), backward LSTM gates likewise, output weights for both
/// directions, output bias, label-noise transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// One `embed_dim` row per vocabulary entry.
    pub embedding: Array2<f64>,
    pub fwd: LstmDirectionParams,
    pub bwd: LstmDirectionParams,
    /// Output weights on the forward hidden state, `gold_tags × hidden_dim`.
    pub out_fwd: Array2<f64>,
    /// Output weights on the backward hidden state.
    pub out_bwd: Array2<f64>,
    pub out_bias: Array1<f64>,
    /// The label-noise transformation `A`, `gold_tags × proj_tags`; row `i`
    /// says how true tag `i` spreads over projected tags.
    pub bias_transform: Array2<f64>,
}

/// Gradients share the exact layout of the parameters they belong to, so the
/// same container serves both roles.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(dims: &ModelDims) -> ModelParams {
        ModelParams {
            embedding: Array2::zeros((dims.vocab_size, dims.embed_dim)),
            fwd: LstmDirectionParams::zeros(dims.hidden_dim, dims.embed_dim),
            bwd: LstmDirectionParams::zeros(dims.hidden_dim, dims.embed_dim),
            out_fwd: Array2::zeros((dims.gold_tags, dims.hidden_dim)),
            out_bwd: Array2::zeros((dims.gold_tags, dims.hidden_dim)),
            out_bias: Array1::zeros(dims.gold_tags),
            bias_transform: Array2::zeros((dims.gold_tags, dims.proj_tags)),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.embedding.nrows(),
            embed_dim: self.embedding.ncols(),
            hidden_dim: self.fwd.hidden_dim(),
            gold_tags: self.out_fwd.nrows(),
            proj_tags: self.bias_transform.ncols(),
        }
    }

    /// All arrays in canonical order, flattened to slices.
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 + 24 + 3);
        out.push(as_slice(&self.embedding));
        for dir in [&self.fwd, &self.bwd] {
            for gate in dir.gates() {
                out.push(as_slice(&gate.w));
                out.push(as_slice(&gate.u));
                out.push(gate.b.as_slice().expect("contiguous"));
            }
        }
        out.push(as_slice(&self.out_fwd));
        out.push(as_slice(&self.out_bwd));
        out.push(self.out_bias.as_slice().expect("contiguous"));
        out.push(as_slice(&self.bias_transform));
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let ModelParams {
            embedding,
            fwd,
            bwd,
            out_fwd,
            out_bwd,
            out_bias,
            bias_transform,
        } = self;
        let mut out = Vec::with_capacity(2 + 24 + 3);
        out.push(as_slice_mut(embedding));
        for dir in [fwd, bwd] {
            for gate in dir.gates_mut() {
                out.push(as_slice_mut(&mut gate.w));
                out.push(as_slice_mut(&mut gate.u));
                out.push(gate.b.as_slice_mut().expect("contiguous"));
            }
        }
        out.push(as_slice_mut(out_fwd));
        out.push(as_slice_mut(out_bwd));
        out.push(out_bias.as_slice_mut().expect("contiguous"));
        out.push(as_slice_mut(bias_transform));
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Copies every parameter into one vector, canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }

    /// Overwrites every parameter from a flat vector in canonical order.
    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, model has {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Euclidean norm over all entries (used for gradient clipping).
    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn as_slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("owned arrays are contiguous")
}

fn as_slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("owned arrays are contiguous")
}

/// Fresh parameters: everything uniform in `±`[`INIT_RANGE`], except the
/// label-noise transformation which starts as the identity (times
/// [`BIAS_TRANSFORM_INIT_GAIN`]) so that training begins from "the projected
/// labels are trusted as-is".
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(dims);
    {
        let mut slices = params.slices_mut();
        slices.pop(); // the bias transform is not random; set below
        for s in slices {
            for v in s {
                *v = rng.random_range(-INIT_RANGE..INIT_RANGE);
            }
        }
    }
    for i in 0..dims.gold_tags.min(dims.proj_tags) {
        params.bias_transform[[i, i]] = BIAS_TRANSFORM_INIT_GAIN;
    }
    Ok(params)
}

/// Numerically stable softmax: shifts by the maximum before exponentiating.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

pub(crate) fn log_clamped(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// The tag distribution at one position from its two hidden states.
pub fn output_dist(params: &ModelParams, h_fwd: &Array1<f64>, h_bwd: &Array1<f64>) -> Array1<f64> {
    softmax(&(params.out_fwd.dot(h_fwd) + params.out_bwd.dot(h_bwd) + &params.out_bias))
}

/// Pushes a tag distribution through the label-noise transformation:
/// `softmax_j(Σ_i A[i][j]·o[i])`, the model's guess at the *projected* label.
pub fn bias_dist(params: &ModelParams, output: &Array1<f64>) -> Result<Array1<f64>> {
    if output.len() != params.bias_transform.nrows() {
        return Err(Error::Shape(format!(
            "distribution has {} entries, transformation expects {}",
            output.len(),
            params.bias_transform.nrows()
        )));
    }
    Ok(softmax(&params.bias_transform.t().dot(output)))
}

/// Runs both LSTM directions over a sentence of token ids and returns the
/// `(forward, backward)` hidden states per position.
pub fn encode(params: &ModelParams, token_ids: &[usize]) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
    let f = net::forward_sentence(params, token_ids)?;
    Ok(f.hidden_pairs())
}

/// Most likely tag index per position (first index wins ties).
pub fn predict(params: &ModelParams, token_ids: &[usize]) -> Result<Vec<usize>> {
    let f = net::forward_sentence(params, token_ids)?;
    Ok(f.outputs.iter().map(argmax).collect())
}

pub(crate) fn argmax(dist: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in dist.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// A trained tagger bundled with everything needed to apply it to raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    /// Tags the model predicts.
    pub gold_tagset: TagSet,
    /// Tags of the projected supervision it was trained against.
    pub proj_tagset: TagSet,
}

impl TaggerModel {
    pub fn new(
        params: ModelParams,
        vocab: Vocabulary,
        gold_tagset: TagSet,
        proj_tagset: TagSet,
    ) -> Result<TaggerModel> {
        let dims = params.dims();
        if vocab.size() != dims.vocab_size {
            return Err(Error::Shape(format!(
                "vocabulary has {} entries, embedding has {} rows",
                vocab.size(),
                dims.vocab_size
            )));
        }
        if gold_tagset.size() != dims.gold_tags || proj_tagset.size() != dims.proj_tags {
            return Err(Error::Shape(format!(
                "tagsets are {}/{} tags, model expects {}/{}",
                gold_tagset.size(),
                proj_tagset.size(),
                dims.gold_tags,
                dims.proj_tags
            )));
        }
        Ok(TaggerModel {
            params,
            vocab,
            gold_tagset,
            proj_tagset,
        })
    }

    /// Tag indices for a tokenized sentence (unknown tokens fall back to
    /// `<unk>`).
    pub fn tag_indices(&self, tokens: &[String]) -> Result<Vec<usize>> {
        predict(&self.params, &self.vocab.ids(tokens))
    }

    /// Tag labels for a tokenized sentence.
    pub fn tag(&self, tokens: &[String]) -> Result<Vec<String>> {
        Ok(self
            .tag_indices(tokens)?
            .into_iter()
            .map(|t| self.gold_tagset.label(t).to_string())
            .collect())
    }
}
