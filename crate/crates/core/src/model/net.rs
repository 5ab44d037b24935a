//! Sentence-level forward pass, the three training losses, and their exact
//! gradients by backpropagation.
//!
//! Gradient bookkeeping is hand-written and kept verifiable: the output-layer
//! deltas below are the textbook cross-entropy-through-softmax forms, the
//! LSTM step deltas live in [`cell`](super::cell), and the whole chain is
//! checked against central finite differences in
//! [`gradcheck`](super::gradcheck).

use ndarray::Array1;

use super::cell::{add_outer, step_backward, step_forward, StepCache};
use super::{
    argmax, bias_dist, log_clamped, softmax, Gradients, ModelParams,
};
use crate::corpus::{GoldSentence, Vocabulary};
use crate::error::{Error, Result};
use crate::projection::{ProjectedLabel, ProjectedSentence};

/// A gold-tagged sentence, resolved to vocabulary and tag indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldExample {
    pub tokens: Vec<usize>,
    pub tags: Vec<usize>,
}

impl GoldExample {
    pub fn from_sentence(s: &GoldSentence, vocab: &Vocabulary) -> GoldExample {
        GoldExample {
            tokens: vocab.ids(&s.tokens),
            tags: s.tags.clone(),
        }
    }
}

/// A projected sentence, resolved to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedExample {
    pub tokens: Vec<usize>,
    pub labels: Vec<ProjectedLabel>,
}

impl ProjectedExample {
    pub fn from_sentence(s: &ProjectedSentence, vocab: &Vocabulary) -> ProjectedExample {
        ProjectedExample {
            tokens: vocab.ids(&s.tokens),
            labels: s.labels.clone(),
        }
    }
}

/// The complete forward state of one sentence, enough to run backprop.
pub(crate) struct SentenceForward {
    pub ids: Vec<usize>,
    /// Embedding of each token.
    pub xs: Vec<Array1<f64>>,
    /// Forward-direction steps, in sentence order.
    pub fwd_steps: Vec<StepCache>,
    /// Backward-direction steps, in processing order (reversed sentence);
    /// `bwd_steps[k].x_index == T-1-k`.
    pub bwd_steps: Vec<StepCache>,
    /// `o_t` per position.
    pub outputs: Vec<Array1<f64>>,
}

impl SentenceForward {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// `(forward, backward)` hidden state per sentence position.
    pub fn hidden_pairs(&self) -> Vec<(Array1<f64>, Array1<f64>)> {
        let n = self.len();
        (0..n)
            .map(|t| {
                (
                    self.fwd_steps[t].h.clone(),
                    self.bwd_steps[n - 1 - t].h.clone(),
                )
            })
            .collect()
    }
}

pub(crate) fn forward_sentence(params: &ModelParams, token_ids: &[usize]) -> Result<SentenceForward> {
    if token_ids.is_empty() {
        return Err(Error::Data("cannot run the model on an empty sentence".into()));
    }
    let dims = params.dims();
    for &id in token_ids {
        if id >= dims.vocab_size {
            return Err(Error::Data(format!(
                "token id {id} out of range for a vocabulary of {}",
                dims.vocab_size
            )));
        }
    }
    let n = token_ids.len();
    let xs: Vec<Array1<f64>> = token_ids
        .iter()
        .map(|&id| params.embedding.row(id).to_owned())
        .collect();

    let mut fwd_steps = Vec::with_capacity(n);
    let mut h = Array1::zeros(dims.hidden_dim);
    let mut c = Array1::zeros(dims.hidden_dim);
    for t in 0..n {
        let step = step_forward(&params.fwd, &xs[t], h, c, t);
        h = step.h.clone();
        c = step.c.clone();
        fwd_steps.push(step);
    }

    let mut bwd_steps = Vec::with_capacity(n);
    let mut h = Array1::zeros(dims.hidden_dim);
    let mut c = Array1::zeros(dims.hidden_dim);
    for t in (0..n).rev() {
        let step = step_forward(&params.bwd, &xs[t], h, c, t);
        h = step.h.clone();
        c = step.c.clone();
        bwd_steps.push(step);
    }

    let outputs = (0..n)
        .map(|t| {
            let logits = params.out_fwd.dot(&fwd_steps[t].h)
                + params.out_bwd.dot(&bwd_steps[n - 1 - t].h)
                + &params.out_bias;
            softmax(&logits)
        })
        .collect();

    Ok(SentenceForward {
        ids: token_ids.to_vec(),
        xs,
        fwd_steps,
        bwd_steps,
        outputs,
    })
}

/// Target distribution of one projected label over `k` tags.
fn target_dist(label: &ProjectedLabel, k: usize) -> Result<Array1<f64>> {
    label.validate(k)?;
    Ok(match label {
        ProjectedLabel::Hard(t) => {
            let mut d = Array1::zeros(k);
            d[*t] = 1.0;
            d
        }
        ProjectedLabel::Soft(dist) => Array1::from_vec(dist.clone()),
    })
}

fn check_lengths(tokens: usize, labels: usize) -> Result<()> {
    if tokens != labels {
        return Err(Error::Shape(format!(
            "{tokens} tokens but {labels} labels"
        )));
    }
    Ok(())
}

/// Mean negative log likelihood of the gold tags under `o_t`.
pub fn gold_nll(params: &ModelParams, ex: &GoldExample) -> Result<f64> {
    check_lengths(ex.tokens.len(), ex.tags.len())?;
    let f = forward_sentence(params, &ex.tokens)?;
    let mut sum = 0.0;
    for (o, &tag) in f.outputs.iter().zip(&ex.tags) {
        if tag >= o.len() {
            return Err(Error::Shape(format!(
                "tag index {tag} out of range for {} tags",
                o.len()
            )));
        }
        sum -= log_clamped(o[tag]);
    }
    Ok(sum / ex.tags.len() as f64)
}

/// Mean cross-entropy of the projected labels against the *transformed*
/// distribution `õ_t` — the loss that lets `A` absorb label noise.
pub fn projected_nll(params: &ModelParams, ex: &ProjectedExample) -> Result<f64> {
    check_lengths(ex.tokens.len(), ex.labels.len())?;
    let k = params.dims().proj_tags;
    let f = forward_sentence(params, &ex.tokens)?;
    let mut sum = 0.0;
    for (o, label) in f.outputs.iter().zip(&ex.labels) {
        let target = target_dist(label, k)?;
        let biased = bias_dist(params, o)?;
        for (&y, &p) in target.iter().zip(biased.iter()) {
            if y > 0.0 {
                sum -= y * log_clamped(p);
            }
        }
    }
    Ok(sum / ex.labels.len() as f64)
}

/// Mean cross-entropy of the projected labels directly against `o_t`,
/// skipping the noise transformation. This is the "trust the projections"
/// baseline; it needs both tagsets to coincide.
pub fn direct_nll(params: &ModelParams, ex: &ProjectedExample) -> Result<f64> {
    let dims = params.dims();
    if dims.gold_tags != dims.proj_tags {
        return Err(Error::Shape(format!(
            "direct loss needs matching tagsets, model has {} and {}",
            dims.gold_tags, dims.proj_tags
        )));
    }
    check_lengths(ex.tokens.len(), ex.labels.len())?;
    let f = forward_sentence(params, &ex.tokens)?;
    let mut sum = 0.0;
    for (o, label) in f.outputs.iter().zip(&ex.labels) {
        let target = target_dist(label, dims.proj_tags)?;
        for (&y, &p) in target.iter().zip(o.iter()) {
            if y > 0.0 {
                sum -= y * log_clamped(p);
            }
        }
    }
    Ok(sum / ex.labels.len() as f64)
}

/// The joint objective over one batch of each supervision source:
///
/// ```text
/// L = (1/|T_p|) Σ_proj ⟨ỹ_t, -log õ_t⟩  +  (1/|T_t|) Σ_gold -log o_t[y_t]
/// ```
///
/// normalized by each side's token count. An empty side contributes zero;
/// both sides empty is an error.
pub fn joint_loss(
    params: &ModelParams,
    gold: &[GoldExample],
    proj: &[ProjectedExample],
) -> Result<f64> {
    let (_, loss) = gradient_pass(params, gold, proj, false)?;
    Ok(loss)
}

/// Exact gradients of [`joint_loss`] at `params`.
pub fn gradients(
    params: &ModelParams,
    gold: &[GoldExample],
    proj: &[ProjectedExample],
) -> Result<Gradients> {
    let (grads, _) = gradient_pass(params, gold, proj, true)?;
    Ok(grads.expect("gradients requested"))
}

/// One pass over both batches computing the joint loss and, if asked, its
/// gradients. Sharing the pass keeps loss and gradient definitions locked
/// together.
pub(crate) fn gradient_pass(
    params: &ModelParams,
    gold: &[GoldExample],
    proj: &[ProjectedExample],
    with_grads: bool,
) -> Result<(Option<Gradients>, f64)> {
    let gold_tokens: usize = gold.iter().map(|ex| ex.tokens.len()).sum();
    let proj_tokens: usize = proj.iter().map(|ex| ex.tokens.len()).sum();
    if gold_tokens == 0 && proj_tokens == 0 {
        return Err(Error::Data("both batches are empty".into()));
    }
    let dims = params.dims();
    let mut grads = with_grads.then(|| Gradients::zeros(&dims));
    let mut loss = 0.0;

    let gold_w = if gold_tokens > 0 {
        1.0 / gold_tokens as f64
    } else {
        0.0
    };
    for ex in gold {
        check_lengths(ex.tokens.len(), ex.tags.len())?;
        let f = forward_sentence(params, &ex.tokens)?;
        let mut dlogits = Vec::with_capacity(f.len());
        for (o, &tag) in f.outputs.iter().zip(&ex.tags) {
            if tag >= dims.gold_tags {
                return Err(Error::Shape(format!(
                    "tag index {tag} out of range for {} tags",
                    dims.gold_tags
                )));
            }
            loss -= gold_w * log_clamped(o[tag]);
            if grads.is_some() {
                // d loss / d logits for -log o[y]: o - onehot(y), times the
                // batch weight.
                let mut d = o * gold_w;
                d[tag] -= gold_w;
                dlogits.push(d);
            }
        }
        if let Some(g) = grads.as_mut() {
            backprop_sentence(params, &f, &dlogits, g);
        }
    }

    let proj_w = if proj_tokens > 0 {
        1.0 / proj_tokens as f64
    } else {
        0.0
    };
    for ex in proj {
        check_lengths(ex.tokens.len(), ex.labels.len())?;
        let f = forward_sentence(params, &ex.tokens)?;
        let mut dlogits = Vec::with_capacity(f.len());
        for (o, label) in f.outputs.iter().zip(&ex.labels) {
            let target = target_dist(label, dims.proj_tags)?;
            let biased = bias_dist(params, o)?;
            for (&y, &p) in target.iter().zip(biased.iter()) {
                if y > 0.0 {
                    loss -= proj_w * y * log_clamped(p);
                }
            }
            if let Some(g) = grads.as_mut() {
                // Transformed logits z_j = Σ_i A[i][j] o_i, õ = softmax(z):
                // dz = õ - ỹ, dA = o ⊗ dz, do = A·dz, and through the first
                // softmax dlogits = o ⊙ (do - ⟨o, do⟩).
                let dz = (&biased - &target) * proj_w;
                add_outer(&mut g.bias_transform, o, &dz);
                let d_o = params.bias_transform.dot(&dz);
                let inner = o.dot(&d_o);
                dlogits.push(o * &(d_o - inner));
            }
        }
        if let Some(g) = grads.as_mut() {
            backprop_sentence(params, &f, &dlogits, g);
        }
    }

    Ok((grads, loss))
}

/// Gradients of the direct (no transformation) projected loss, normalized by
/// the batch's token count. Used by the baseline that trusts projections.
pub fn gradients_direct(params: &ModelParams, proj: &[ProjectedExample]) -> Result<Gradients> {
    let dims = params.dims();
    if dims.gold_tags != dims.proj_tags {
        return Err(Error::Shape(format!(
            "direct loss needs matching tagsets, model has {} and {}",
            dims.gold_tags, dims.proj_tags
        )));
    }
    let tokens: usize = proj.iter().map(|ex| ex.tokens.len()).sum();
    if tokens == 0 {
        return Err(Error::Data("batch is empty".into()));
    }
    let w = 1.0 / tokens as f64;
    let mut grads = Gradients::zeros(&dims);
    for ex in proj {
        check_lengths(ex.tokens.len(), ex.labels.len())?;
        let f = forward_sentence(params, &ex.tokens)?;
        let mut dlogits = Vec::with_capacity(f.len());
        for (o, label) in f.outputs.iter().zip(&ex.labels) {
            let target = target_dist(label, dims.proj_tags)?;
            // Cross-entropy against a distribution through softmax: o - ỹ.
            dlogits.push((o - &target) * w);
        }
        backprop_sentence(params, &f, &dlogits, &mut grads);
    }
    Ok(grads)
}

/// Backpropagates per-position logit gradients through the output layer,
/// both LSTM directions and the embeddings, accumulating into `grads`.
fn backprop_sentence(
    params: &ModelParams,
    f: &SentenceForward,
    dlogits: &[Array1<f64>],
    grads: &mut Gradients,
) {
    let n = f.len();
    let dims = params.dims();

    // Output layer: logits_t = out_fwd·h_fwd_t + out_bwd·h_bwd_t + bias.
    let mut dh_fwd: Vec<Array1<f64>> = Vec::with_capacity(n);
    let mut dh_bwd: Vec<Array1<f64>> = Vec::with_capacity(n);
    for t in 0..n {
        let dl = &dlogits[t];
        add_outer(&mut grads.out_fwd, dl, &f.fwd_steps[t].h);
        add_outer(&mut grads.out_bwd, dl, &f.bwd_steps[n - 1 - t].h);
        grads.out_bias += dl;
        dh_fwd.push(params.out_fwd.t().dot(dl));
        dh_bwd.push(params.out_bwd.t().dot(dl));
    }

    let mut dxs: Vec<Array1<f64>> = vec![Array1::zeros(dims.embed_dim); n];

    // Forward direction: unroll its processing order (sentence order) from
    // the last step back, threading the state carries.
    let mut dh_carry = Array1::zeros(dims.hidden_dim);
    let mut dc_carry = Array1::zeros(dims.hidden_dim);
    for t in (0..n).rev() {
        let dh = &dh_fwd[t] + &dh_carry;
        let (dhp, dcp) = step_backward(
            &params.fwd,
            &f.fwd_steps[t],
            &f.xs[t],
            &dh,
            &dc_carry,
            &mut grads.fwd,
            &mut dxs[t],
        );
        dh_carry = dhp;
        dc_carry = dcp;
    }

    // Backward direction: same recipe over *its* processing order.
    let mut dh_carry = Array1::zeros(dims.hidden_dim);
    let mut dc_carry = Array1::zeros(dims.hidden_dim);
    for k in (0..n).rev() {
        let pos = f.bwd_steps[k].x_index;
        let dh = &dh_bwd[pos] + &dh_carry;
        let (dhp, dcp) = step_backward(
            &params.bwd,
            &f.bwd_steps[k],
            &f.xs[pos],
            &dh,
            &dc_carry,
            &mut grads.bwd,
            &mut dxs[pos],
        );
        dh_carry = dhp;
        dc_carry = dcp;
    }

    // Embeddings: repeated tokens accumulate naturally.
    for (t, dx) in dxs.into_iter().enumerate() {
        let mut row = grads.embedding.row_mut(f.ids[t]);
        row += &dx;
    }
}

/// Fraction of positions where the model's top tag equals the gold tag.
pub(crate) fn sentence_accuracy_counts(
    params: &ModelParams,
    ex: &GoldExample,
) -> Result<(usize, usize)> {
    let f = forward_sentence(params, &ex.tokens)?;
    let correct = f
        .outputs
        .iter()
        .zip(&ex.tags)
        .filter(|(o, &tag)| argmax(o) == tag)
        .count();
    Ok((correct, ex.tags.len()))
}
