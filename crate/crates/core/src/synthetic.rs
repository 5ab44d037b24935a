//! Synthetic corpora with known ground truth, for end-to-end verification.
//!
//! Real projected corpora give no way to check whether the learned bias
//! transformation actually models the labeling noise — the noise process is
//! unobserved. This module makes it observable: sample tagged sentences from
//! a known generator, push the tags through a known confusion channel, and
//! train on the result. Because the channel is known, we can measure both
//! tagging accuracy against the true tags and how well the learned bias
//! matrix agrees with the channel that produced the noise.
//!
//! The centerpiece is [`run_recovery_experiment`], which compares three
//! regimes on the same data — training on the small clean corpus alone,
//! training on the large noisy corpus alone, and the two-stage recipe with
//! the bias layer — and reports test accuracies plus the channel agreement
//! of the learned bias matrix.

use std::io::{self, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_value, read_kv_file, ConfigEntry};
use crate::corpus::{token_sequences, GoldCorpus, GoldSentence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{init_params, predict, ModelDims, ModelParams};
use crate::projection::{ProjectedCorpus, ProjectedLabel, ProjectedSentence};
use crate::tagset::TagSet;
use crate::training::{pretrain, train_pipeline, train_projected_direct, TrainConfig};

/// Tolerance for checking that probability rows sum to one.
const ROW_SUM_TOL: f64 = 1e-9;

/// A tag must occur this often in the projected training data before its
/// bias row is compared against the channel; rarer tags get too little
/// gradient signal for their row to mean anything.
pub const ELIGIBLE_MIN_COUNT: u64 = 50;

/// A sentence generator: hidden tag chain plus per-tag word emissions.
#[derive(Debug, Clone)]
pub struct HmmSpec {
    /// Distribution of the first tag in a sentence, length K.
    pub start: Array1<f64>,
    /// Row-stochastic K×K matrix; row i is the distribution of the tag
    /// following tag i.
    pub trans: Array2<f64>,
    /// Row-stochastic K×V matrix; row i is the word distribution of tag i.
    pub emit: Array2<f64>,
    /// Sentence lengths are drawn uniformly from `min_len..=max_len`.
    pub min_len: usize,
    pub max_len: usize,
}

impl HmmSpec {
    /// Number of tags.
    pub fn k(&self) -> usize {
        self.trans.nrows()
    }

    /// Vocabulary size.
    pub fn v(&self) -> usize {
        self.emit.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let v = self.v();
        if k == 0 || v == 0 {
            return Err(Error::Shape("generator needs at least one tag and one word".into()));
        }
        if self.trans.ncols() != k || self.emit.nrows() != k || self.start.len() != k {
            return Err(Error::Shape(format!(
                "generator shapes disagree: start {}, trans {}x{}, emit {}x{}",
                self.start.len(),
                self.trans.nrows(),
                self.trans.ncols(),
                self.emit.nrows(),
                self.emit.ncols()
            )));
        }
        check_simplex(&self.start.view(), "start")?;
        for (i, row) in self.trans.rows().into_iter().enumerate() {
            check_simplex(&row, &format!("trans row {i}"))?;
        }
        for (i, row) in self.emit.rows().into_iter().enumerate() {
            check_simplex(&row, &format!("emit row {i}"))?;
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "bad sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    /// The default six-tag, 200-word generator used by the recovery
    /// experiment.
    ///
    /// Construction, chosen so that the effect of label noise can be
    /// worked out by hand:
    ///
    /// * Every transition row is the same distribution (T0 at 0.20, the
    ///   rest at 0.16), so tags are independent across positions and a
    ///   token's true-tag posterior depends on its word alone — context
    ///   carries nothing that could blur the arithmetic below.
    /// * T0 owns words w0–w34 outright. Each other tag owns a 33-word
    ///   block: 22 "clean" words only it emits, plus 11 "pool" words that
    ///   all five non-T0 tags emit — the owner 1.5 times as heavily as the
    ///   rest. Per non-T0 tag, clean words carry 0.35 of the emission mass
    ///   and pool words 0.65.
    ///
    /// A clean-word token is certain. A pool-word token has posterior
    /// 1.5/5.5 ≈ 0.27 on the block owner, ≈ 0.18 on each other non-T0
    /// tag, and exactly zero on T0; about half of all tokens are pool
    /// tokens. The best possible tagger answers the owner and gets such
    /// tokens right 27% of the time. That zero-on-T0 ambiguity is what the
    /// default noise channel exploits; see
    /// [`NoiseChannel::synthetic_default`].
    pub fn synthetic_default() -> HmmSpec {
        let k = 6;
        let v = 200;
        let freqs = [0.20, 0.16, 0.16, 0.16, 0.16, 0.16];
        let start = Array1::from_iter(freqs);
        let mut trans = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                trans[[i, j]] = freqs[j];
            }
        }
        // Per non-T0 tag: 0.35 of the mass on its 22 clean words, 0.65 on
        // the 55-word pool, tilted 1.5:1 toward its own block's slice.
        let unit = 0.65 / 60.5;
        let mut emit = Array2::zeros((k, v));
        for w in 0..35 {
            emit[[0, w]] = 1.0 / 35.0;
        }
        for t in 1..k {
            let block = 35 + 33 * (t - 1);
            for w in block..block + 22 {
                emit[[t, w]] = 0.35 / 22.0;
            }
            // The block's pool slice, emitted by every non-T0 tag.
            for s in 1..k {
                let weight = if s == t { 1.5 * unit } else { unit };
                for w in block + 22..block + 33 {
                    emit[[s, w]] = weight;
                }
            }
        }
        HmmSpec {
            start,
            trans,
            emit,
            min_len: 4,
            max_len: 12,
        }
    }
}

fn check_simplex(row: &ArrayView1<'_, f64>, what: &str) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::Data(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Data(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Tag labels `T0..T{k-1}` used by all synthetic corpora.
pub fn synthetic_tagset(k: usize) -> Result<TagSet> {
    TagSet::new((0..k).map(|i| format!("T{i}")))
}

/// Draws an index from an unnormalized-at-worst-by-rounding probability row.
fn sample_index(rng: &mut ChaCha8Rng, weights: &ArrayView1<'_, f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the total a hair under 1; the draw then lands on
    // the final index.
    weights.len() - 1
}

/// Samples `n_sentences` sentences ancestrally. Deterministic given `seed`.
pub fn sample_corpus(spec: &HmmSpec, n_sentences: usize, seed: u64) -> Result<GoldCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        sentences.push(sample_sentence(spec, &mut rng));
    }
    GoldCorpus::new(sentences, synthetic_tagset(spec.k())?)
}

/// Samples whole sentences until at least `min_tokens` tokens exist.
/// Deterministic given `seed`; the overshoot is less than one sentence.
pub fn sample_until_tokens(spec: &HmmSpec, min_tokens: usize, seed: u64) -> Result<GoldCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::new();
    let mut tokens = 0;
    while tokens < min_tokens {
        let s = sample_sentence(spec, &mut rng);
        tokens += s.tokens.len();
        sentences.push(s);
    }
    GoldCorpus::new(sentences, synthetic_tagset(spec.k())?)
}

fn sample_sentence(spec: &HmmSpec, rng: &mut ChaCha8Rng) -> GoldSentence {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut tags = Vec::with_capacity(len);
    let mut tokens = Vec::with_capacity(len);
    for t in 0..len {
        let tag = if t == 0 {
            sample_index(rng, &spec.start.view())
        } else {
            sample_index(rng, &spec.trans.row(tags[t - 1]))
        };
        let word = sample_index(rng, &spec.emit.row(tag));
        tags.push(tag);
        tokens.push(format!("w{word}"));
    }
    GoldSentence { tokens, tags }
}

/// A label-corruption process standing in for cross-lingual projection.
///
/// Each true tag i is rewritten to a hard label drawn from `matrix` row i;
/// independently, each token loses its alignment with probability
/// `p_unaligned` and falls back to a soft label instead.
#[derive(Debug, Clone)]
pub struct NoiseChannel {
    /// Row-stochastic confusion matrix: rows are true tags, columns the
    /// labels they come out as.
    pub matrix: Array2<f64>,
    /// Probability that a token's hard label is replaced by the sentence's
    /// soft fallback distribution.
    pub p_unaligned: f64,
}

impl NoiseChannel {
    pub fn validate(&self) -> Result<()> {
        if self.matrix.nrows() == 0 || self.matrix.ncols() == 0 {
            return Err(Error::Shape("channel matrix is empty".into()));
        }
        for (i, row) in self.matrix.rows().into_iter().enumerate() {
            check_simplex(&row, &format!("channel row {i}"))?;
        }
        if !(0.0..=1.0).contains(&self.p_unaligned) || !self.p_unaligned.is_finite() {
            return Err(Error::Config(format!(
                "p_unaligned must lie in [0, 1], got {}",
                self.p_unaligned
            )));
        }
        Ok(())
    }

    /// The noiseless channel: labels pass through untouched.
    pub fn identity(k: usize) -> NoiseChannel {
        NoiseChannel {
            matrix: Array2::eye(k),
            p_unaligned: 0.0,
        }
    }

    /// The default corruption paired with [`HmmSpec::synthetic_default`].
    ///
    /// Every tag keeps its identity with probability 0.7 and leaks the
    /// remaining 0.3 onto a single confusable tag: T0 for every other tag
    /// (errors pile onto one frequent catch-all label, as projection errors
    /// do), and T5 for T0 itself. 15% of tokens lose their alignment.
    ///
    /// Against the default generator this flips the label evidence on every
    /// pool token: the owner's posterior ≈ 0.27 keeps only 0.7 of itself
    /// (≈ 0.19), while T0 — never the true tag there — collects 0.3 from
    /// everyone and ends up the modal label by a wide margin (0.30, and
    /// more once soft labels are mixed in). A model that trusts the labels
    /// learns to answer T0 on pool words and gets essentially none of them
    /// right; a model that sees through the channel answers the owner and
    /// gets 27% right — a ceiling lead of roughly twelve accuracy points
    /// overall, of which a well-trained pair of models realizes about half.
    pub fn synthetic_default() -> NoiseChannel {
        let k = 6;
        let mut matrix = Array2::zeros((k, k));
        for i in 0..k {
            matrix[[i, i]] = 0.7;
        }
        for i in 1..k {
            matrix[[i, 0]] = 0.3;
        }
        matrix[[0, 5]] = 0.3;
        NoiseChannel {
            matrix,
            p_unaligned: 0.15,
        }
    }
}

/// Pushes one sentence's tags through the channel. Deterministic given
/// `seed`.
pub fn corrupt(sentence: &GoldSentence, ch: &NoiseChannel, seed: u64) -> Result<ProjectedSentence> {
    ch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with(sentence, ch, &mut rng)
}

/// Pushes every sentence of a corpus through the channel with one draw
/// stream. The channel must be square over the corpus's own tagset.
pub fn corrupt_corpus(corpus: &GoldCorpus, ch: &NoiseChannel, seed: u64) -> Result<ProjectedCorpus> {
    ch.validate()?;
    let k = corpus.tagset.size();
    if ch.matrix.nrows() != k || ch.matrix.ncols() != k {
        return Err(Error::Shape(format!(
            "channel is {}x{} but the corpus has {k} tags",
            ch.matrix.nrows(),
            ch.matrix.ncols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| corrupt_with(s, ch, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectedCorpus {
        sentences,
        tagset: corpus.tagset.clone(),
    })
}

fn corrupt_with(
    sentence: &GoldSentence,
    ch: &NoiseChannel,
    rng: &mut ChaCha8Rng,
) -> Result<ProjectedSentence> {
    if sentence.tokens.is_empty() {
        return Err(Error::Data("cannot corrupt an empty sentence".into()));
    }
    let k_out = ch.matrix.ncols();
    // First a full hard draw for the sentence: every token gets a label
    // from its tag's channel row, aligned or not. The soft fallback is the
    // relative frequency of those draws — the unaligned tokens see only the
    // sentence-level label distribution, the way unaligned target tokens
    // see only the source sentence's tags.
    let mut hard = Vec::with_capacity(sentence.tags.len());
    for &tag in &sentence.tags {
        if tag >= ch.matrix.nrows() {
            return Err(Error::Shape(format!(
                "tag index {tag} outside the channel's {} rows",
                ch.matrix.nrows()
            )));
        }
        hard.push(sample_index(rng, &ch.matrix.row(tag)));
    }
    let mut fallback = vec![0.0; k_out];
    for &h in &hard {
        fallback[h] += 1.0 / hard.len() as f64;
    }
    // Then one alignment coin per token, in token order.
    let labels = hard
        .iter()
        .map(|&h| {
            let u: f64 = rng.random();
            if u < ch.p_unaligned {
                ProjectedLabel::Soft(fallback.clone())
            } else {
                ProjectedLabel::Hard(h)
            }
        })
        .collect();
    Ok(ProjectedSentence {
        tokens: sentence.tokens.clone(),
        labels,
    })
}

/// First index of the largest value, matching the tagger's own tie rule.
fn row_argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Fraction of eligible tags whose bias row points the same way as the
/// channel row that produced the noise.
///
/// Row i of the bias matrix is compared to row i of the channel by argmax
/// only: the softmax behind the bias layer is invariant to adding a
/// constant to a row, so only the ordinal structure of a row is ever
/// identified. A tag is eligible when it occurs at least `min_count` times
/// in `tag_counts` (occurrences in the projected training data).
pub fn channel_agreement(
    bias: &ArrayView2<'_, f64>,
    channel: &ArrayView2<'_, f64>,
    tag_counts: &[u64],
    min_count: u64,
) -> Result<f64> {
    if bias.dim() != channel.dim() {
        return Err(Error::Shape(format!(
            "bias is {}x{} but channel is {}x{}",
            bias.nrows(),
            bias.ncols(),
            channel.nrows(),
            channel.ncols()
        )));
    }
    if tag_counts.len() != bias.nrows() {
        return Err(Error::Shape(format!(
            "{} tag counts for {} bias rows",
            tag_counts.len(),
            bias.nrows()
        )));
    }
    let mut eligible = 0;
    let mut hits = 0;
    for i in 0..bias.nrows() {
        if tag_counts[i] < min_count {
            continue;
        }
        eligible += 1;
        if row_argmax(bias.row(i)) == row_argmax(channel.row(i)) {
            hits += 1;
        }
    }
    if eligible == 0 {
        return Err(Error::Data(format!(
            "no tag occurs {min_count} times in the projected data"
        )));
    }
    Ok(f64::from(hits) / f64::from(eligible))
}

/// Settings for [`run_recovery_experiment`].
#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub spec: HmmSpec,
    pub channel: NoiseChannel,
    /// Clean training tokens (trimmed to whole sentences).
    pub gold_tokens: usize,
    /// Development tokens used for early stopping, sampled separately.
    pub dev_tokens: usize,
    /// Held-out test tokens.
    pub test_tokens: usize,
    /// Tokens sampled and corrupted into the projected training corpus.
    pub proj_tokens: usize,
    /// The whole experiment repeats once per master seed; summary numbers
    /// are medians across the repeats.
    pub master_seeds: Vec<u64>,
    /// Vocabulary cutoff passed to every arm.
    pub min_count: usize,
    /// Sentence updates each training stage gets to spend, in every arm.
    /// The three arms train on corpora of very different sizes, so a shared
    /// epoch count would hand them wildly different amounts of optimization;
    /// instead each arm converts this budget into its own epoch count. The
    /// parameters kept are still the ones with the best dev accuracy.
    pub stage_updates: usize,
    /// Training settings shared by all three arms. The seed is overridden
    /// with a lane derived from the master seed, and the epoch and patience
    /// counts are derived from `stage_updates`, so those fields of `train`
    /// are ignored here.
    pub train: TrainConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            spec: HmmSpec::synthetic_default(),
            channel: NoiseChannel::synthetic_default(),
            gold_tokens: 1000,
            dev_tokens: 2000,
            test_tokens: 4000,
            proj_tokens: 20000,
            master_seeds: vec![101, 202, 303],
            min_count: 1,
            stage_updates: 60_000,
            train: TrainConfig {
                embed_dim: 32,
                hidden_dim: 32,
                learning_rate: 0.1,
                stage1_epochs: 0, // derived from stage_updates per arm
                stage2_epochs: 0, // derived from stage_updates per arm
                patience: 0,      // derived: best-dev selection, no cutoff
                clip_norm: 5.0,
                proj_per_gold: 8,
                seed: 0,
            },
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.channel.validate()?;
        let k = self.spec.k();
        if self.channel.matrix.nrows() != k || self.channel.matrix.ncols() != k {
            return Err(Error::Shape(format!(
                "channel is {}x{} but the generator has {k} tags",
                self.channel.matrix.nrows(),
                self.channel.matrix.ncols()
            )));
        }
        if self.gold_tokens == 0
            || self.dev_tokens == 0
            || self.test_tokens == 0
            || self.proj_tokens == 0
        {
            return Err(Error::Config("all corpus sizes must be positive".into()));
        }
        if self.master_seeds.is_empty() {
            return Err(Error::Config("need at least one master seed".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if self.stage_updates == 0 {
            return Err(Error::Config("stage_updates must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Applies one `key = value` setting. Unrecognized keys fall through to
    /// [`TrainConfig::apply`], so one file configures the whole experiment.
    pub fn apply(&mut self, entry: &ConfigEntry) -> Result<()> {
        match entry.key.as_str() {
            "gold_tokens" => self.gold_tokens = parse_value(entry)?,
            "dev_tokens" => self.dev_tokens = parse_value(entry)?,
            "test_tokens" => self.test_tokens = parse_value(entry)?,
            "proj_tokens" => self.proj_tokens = parse_value(entry)?,
            "min_count" => self.min_count = parse_value(entry)?,
            "stage_updates" => self.stage_updates = parse_value(entry)?,
            "seeds" => {
                let mut seeds = Vec::new();
                for part in entry.value.split(',') {
                    seeds.push(part.trim().parse().map_err(|_| {
                        Error::Config(format!(
                            "line {}: bad seed list `{}`",
                            entry.line, entry.value
                        ))
                    })?);
                }
                self.master_seeds = seeds;
            }
            "channel" => match entry.value.as_str() {
                "default" => self.channel = NoiseChannel::synthetic_default(),
                "identity" => self.channel = NoiseChannel::identity(self.spec.k()),
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown channel `{other}` (expected `default` or `identity`)",
                        entry.line
                    )))
                }
            },
            "p_unaligned" => {
                self.channel.p_unaligned = parse_value(entry)?;
            }
            _ => self.train.apply(entry)?,
        }
        Ok(())
    }

    /// Reads settings from a `key = value` file on top of the defaults.
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<RecoveryConfig> {
        let mut config = RecoveryConfig::default();
        for entry in read_kv_file(path)? {
            config.apply(&entry)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// One repeat of the experiment under a single master seed.
#[derive(Debug, Clone)]
pub struct RecoveryRun {
    pub master_seed: u64,
    /// Test accuracy after training on the clean corpus alone.
    pub annotated_acc: f64,
    /// Test accuracy after training on the noisy corpus alone, labels
    /// taken at face value.
    pub projected_acc: f64,
    /// Test accuracy of the two-stage model with the bias layer.
    pub debias_acc: f64,
    /// Channel agreement of the two-stage model's learned bias matrix.
    pub agreement: f64,
    /// How many tags cleared the occurrence threshold for agreement.
    pub eligible_tags: usize,
    /// The learned bias matrix itself.
    pub bias_transform: Array2<f64>,
}

/// All repeats plus the tag labels needed to print bias matrices.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub labels: Vec<String>,
    pub runs: Vec<RecoveryRun>,
}

impl RecoveryReport {
    pub fn median_annotated(&self) -> f64 {
        median(self.runs.iter().map(|r| r.annotated_acc))
    }

    pub fn median_projected(&self) -> f64 {
        median(self.runs.iter().map(|r| r.projected_acc))
    }

    pub fn median_debias(&self) -> f64 {
        median(self.runs.iter().map(|r| r.debias_acc))
    }

    pub fn median_agreement(&self) -> f64 {
        median(self.runs.iter().map(|r| r.agreement))
    }

    /// Plain-text summary; identical output for identical runs.
    pub fn write_text(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "synthetic recovery experiment ({} tags)", self.labels.len())?;
        for r in &self.runs {
            writeln!(
                w,
                "seed {}: annotated-only {:.4}  projected-only {:.4}  debias {:.4}  agreement {:.3} ({}/{} tags)",
                r.master_seed,
                r.annotated_acc,
                r.projected_acc,
                r.debias_acc,
                r.agreement,
                r.eligible_tags,
                self.labels.len()
            )?;
        }
        writeln!(
            w,
            "median: annotated-only {:.4}  projected-only {:.4}  debias {:.4}  agreement {:.3}",
            self.median_annotated(),
            self.median_projected(),
            self.median_debias(),
            self.median_agreement()
        )?;
        Ok(())
    }
}

/// Median of a non-empty sequence; the mean of the two middle values when
/// the count is even.
fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut xs: Vec<f64> = values.collect();
    assert!(!xs.is_empty(), "median of an empty sequence");
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Epochs needed to spend `updates` sentence updates at `per_epoch`
/// sentences per epoch.
fn budget_epochs(updates: usize, per_epoch: usize) -> usize {
    updates.div_ceil(per_epoch.max(1))
}

/// Tagging accuracy of raw parameters over a gold corpus.
fn corpus_accuracy(params: &ModelParams, vocab: &Vocabulary, corpus: &GoldCorpus) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in &corpus.sentences {
        let pred = predict(params, &vocab.ids(&s.tokens))?;
        correct += pred.iter().zip(&s.tags).filter(|(p, g)| p == g).count();
        total += s.tags.len();
    }
    if total == 0 {
        return Err(Error::Data("accuracy over an empty corpus".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Runs the three-way comparison once per master seed.
///
/// Per repeat: sample a small clean training corpus, dev and test corpora,
/// and a large corpus that is corrupted through the channel; then train
/// (a) on the clean corpus alone, (b) on the corrupted corpus alone with
/// labels taken at face value, and (c) the two-stage recipe with the bias
/// layer. Every arm builds its vocabulary from its own training tokens and
/// early-stops on the same dev corpus. Deterministic given the config.
pub fn run_recovery_experiment(config: &RecoveryConfig) -> Result<RecoveryReport> {
    config.validate()?;
    let labels = synthetic_tagset(config.spec.k())?.labels().to_vec();
    let runs = config
        .master_seeds
        .iter()
        .map(|&seed| run_one(config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryReport { labels, runs })
}

fn run_one(config: &RecoveryConfig, master_seed: u64) -> Result<RecoveryRun> {
    let spec = &config.spec;
    let k = spec.k();
    // Fixed seed lanes per repeat: +1..+5 for data, and one widely spaced
    // lane per training arm (training derives its own per-stage streams
    // from nearby offsets, so arms are kept 10 apart).
    let (gold_train, _) = sample_until_tokens(spec, config.gold_tokens, master_seed.wrapping_add(1))?
        .take_first_tokens(config.gold_tokens)?;
    let dev = sample_until_tokens(spec, config.dev_tokens, master_seed.wrapping_add(2))?;
    let test = sample_until_tokens(spec, config.test_tokens, master_seed.wrapping_add(3))?;
    let (proj_src, _) = sample_until_tokens(spec, config.proj_tokens, master_seed.wrapping_add(4))?
        .take_first_tokens(config.proj_tokens)?;
    let projected = corrupt_corpus(&proj_src, &config.channel, master_seed.wrapping_add(5))?;

    // Eligibility counts for channel agreement: how often each true tag
    // occurs in the data behind the projected corpus.
    let mut tag_counts = vec![0u64; k];
    for s in &proj_src.sentences {
        for &t in &s.tags {
            tag_counts[t] += 1;
        }
    }

    // (a) Clean corpus alone.
    let mut cfg = config.train.clone();
    cfg.seed = master_seed.wrapping_add(20);
    cfg.stage1_epochs = budget_epochs(config.stage_updates, gold_train.sentences.len());
    cfg.patience = cfg.stage1_epochs;
    let vocab_a = Vocabulary::build(&token_sequences(&gold_train), config.min_count)?;
    let dims_a = ModelDims {
        vocab_size: vocab_a.size(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        gold_tags: k,
        proj_tags: k,
    };
    let (params_a, _) = pretrain(init_params(&dims_a, cfg.seed)?, &gold_train, &dev, &vocab_a, &cfg)?;
    let annotated_acc = corpus_accuracy(&params_a, &vocab_a, &test)?;

    // (b) Corrupted corpus alone, labels trusted.
    let mut cfg = config.train.clone();
    cfg.seed = master_seed.wrapping_add(30);
    cfg.stage1_epochs = budget_epochs(config.stage_updates, projected.sentences.len());
    cfg.patience = cfg.stage1_epochs;
    let seqs_b: Vec<&[String]> = projected.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    let vocab_b = Vocabulary::build(&seqs_b, config.min_count)?;
    let dims_b = ModelDims {
        vocab_size: vocab_b.size(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        gold_tags: k,
        proj_tags: k,
    };
    let (params_b, _) =
        train_projected_direct(init_params(&dims_b, cfg.seed)?, &projected, &dev, &vocab_b, &cfg)?;
    let projected_acc = corpus_accuracy(&params_b, &vocab_b, &test)?;

    // (c) Two-stage training with the bias layer. The joint stage steps
    // through `1 + proj_per_gold` sentences per clean sentence.
    let mut cfg = config.train.clone();
    cfg.seed = master_seed.wrapping_add(40);
    cfg.stage1_epochs = budget_epochs(config.stage_updates, gold_train.sentences.len());
    cfg.stage2_epochs = budget_epochs(
        config.stage_updates,
        gold_train.sentences.len() * (1 + cfg.proj_per_gold),
    );
    cfg.patience = cfg.stage1_epochs.max(cfg.stage2_epochs);
    let (model_c, _) = train_pipeline(&gold_train, &dev, Some(&projected), &cfg, config.min_count)?;
    let debias_acc = corpus_accuracy(&model_c.params, &model_c.vocab, &test)?;
    let agreement = channel_agreement(
        &model_c.params.bias_transform.view(),
        &config.channel.matrix.view(),
        &tag_counts,
        ELIGIBLE_MIN_COUNT,
    )?;
    let eligible_tags = tag_counts.iter().filter(|&&c| c >= ELIGIBLE_MIN_COUNT).count();

    Ok(RecoveryRun {
        master_seed,
        annotated_acc,
        projected_acc,
        debias_acc,
        agreement,
        eligible_tags,
        bias_transform: model_c.params.bias_transform.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gradients, joint_loss, GoldExample, ProjectedExample};
    use crate::training::sgd_update;
    use ndarray::arr2;

    #[test]
    fn default_spec_is_valid() {
        HmmSpec::synthetic_default().validate().unwrap();
    }

    #[test]
    fn default_channel_is_valid() {
        NoiseChannel::synthetic_default().validate().unwrap();
        NoiseChannel::identity(4).validate().unwrap();
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = HmmSpec::synthetic_default();
        spec.min_len = 0;
        assert!(spec.validate().is_err());

        let mut spec = HmmSpec::synthetic_default();
        spec.trans[[0, 0]] += 0.1;
        assert!(spec.validate().is_err());

        let mut spec = HmmSpec::synthetic_default();
        spec.emit[[2, 0]] = -0.5;
        spec.emit[[2, 1]] += 0.5;
        assert!(spec.validate().is_err());

        let mut ch = NoiseChannel::synthetic_default();
        ch.p_unaligned = 1.5;
        assert!(ch.validate().is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = HmmSpec::synthetic_default();
        let a = sample_corpus(&spec, 20, 9).unwrap();
        let b = sample_corpus(&spec, 20, 9).unwrap();
        assert_eq!(a.sentences, b.sentences);
        let c = sample_corpus(&spec, 20, 10).unwrap();
        assert_ne!(a.sentences, c.sentences);
    }

    #[test]
    fn absorbing_chain_emits_one_tag() {
        // Start pinned on tag 2 and an identity transition matrix: every
        // sentence must be all tag 2.
        let k = 4;
        let mut start = Array1::zeros(k);
        start[2] = 1.0;
        let spec = HmmSpec {
            start,
            trans: Array2::eye(k),
            emit: Array2::from_elem((k, 10), 0.1),
            min_len: 3,
            max_len: 8,
        };
        let corpus = sample_corpus(&spec, 30, 5).unwrap();
        for s in &corpus.sentences {
            assert!(s.tags.iter().all(|&t| t == 2));
        }
    }

    /// Stationary distribution of a row-stochastic matrix by power
    /// iteration, the long-run tag frequency the sampler should reproduce.
    fn stationary(trans: &Array2<f64>) -> Array1<f64> {
        let k = trans.nrows();
        let mut v = Array1::from_elem(k, 1.0 / k as f64);
        for _ in 0..10_000 {
            let next = v.dot(trans);
            let delta: f64 = (&next - &v).iter().map(|d| d.abs()).sum();
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        v
    }

    fn empirical_tag_freq(corpus: &GoldCorpus, k: usize) -> Array1<f64> {
        let mut counts = Array1::zeros(k);
        for s in &corpus.sentences {
            for &t in &s.tags {
                counts[t] += 1.0;
            }
        }
        let total: f64 = counts.sum();
        counts / total
    }

    #[test]
    fn unigram_matches_stationary_distribution() {
        // A chain with distinct rows; start at the stationary distribution
        // (computed independently by power iteration) so every position is
        // a draw from it.
        let trans = arr2(&[
            [0.5, 0.3, 0.1, 0.1],
            [0.2, 0.5, 0.2, 0.1],
            [0.1, 0.2, 0.5, 0.2],
            [0.3, 0.1, 0.2, 0.4],
        ]);
        let pi = stationary(&trans);
        assert!((pi.sum() - 1.0).abs() < 1e-9);
        let spec = HmmSpec {
            start: pi.clone(),
            trans,
            emit: Array2::from_elem((4, 8), 1.0 / 8.0),
            min_len: 5,
            max_len: 15,
        };
        let corpus = sample_until_tokens(&spec, 10_000, 13).unwrap();
        let freq = empirical_tag_freq(&corpus, 4);
        let tv: f64 = 0.5 * (&freq - &pi).iter().map(|d| d.abs()).sum::<f64>();
        assert!(tv <= 0.03, "total variation {tv}");

        // Same check for the default generator, whose stationary
        // distribution is its (identical) transition rows.
        let spec = HmmSpec::synthetic_default();
        let pi = stationary(&spec.trans);
        let corpus = sample_until_tokens(&spec, 10_000, 14).unwrap();
        let freq = empirical_tag_freq(&corpus, spec.k());
        let tv: f64 = 0.5 * (&freq - &pi).iter().map(|d| d.abs()).sum::<f64>();
        assert!(tv <= 0.03, "total variation {tv} on the default generator");
    }

    #[test]
    fn identity_channel_preserves_labels() {
        let spec = HmmSpec::synthetic_default();
        let corpus = sample_corpus(&spec, 25, 3).unwrap();
        let projected = corrupt_corpus(&corpus, &NoiseChannel::identity(spec.k()), 7).unwrap();
        for (gold, proj) in corpus.sentences.iter().zip(&projected.sentences) {
            assert_eq!(gold.tokens, proj.tokens);
            for (tag, label) in gold.tags.iter().zip(&proj.labels) {
                assert_eq!(label, &ProjectedLabel::Hard(*tag));
            }
        }
    }

    #[test]
    fn fully_unaligned_channel_yields_soft_labels() {
        let spec = HmmSpec::synthetic_default();
        let corpus = sample_corpus(&spec, 10, 4).unwrap();
        let ch = NoiseChannel {
            matrix: NoiseChannel::synthetic_default().matrix,
            p_unaligned: 1.0,
        };
        let projected = corrupt_corpus(&corpus, &ch, 8).unwrap();
        for s in &projected.sentences {
            for label in &s.labels {
                match label {
                    ProjectedLabel::Soft(dist) => {
                        let sum: f64 = dist.iter().sum();
                        assert!((sum - 1.0).abs() < 1e-9);
                    }
                    ProjectedLabel::Hard(_) => panic!("expected only soft labels"),
                }
            }
        }
    }

    #[test]
    fn corrupt_is_deterministic_per_seed() {
        let spec = HmmSpec::synthetic_default();
        let corpus = sample_corpus(&spec, 5, 2).unwrap();
        let ch = NoiseChannel::synthetic_default();
        let a = corrupt(&corpus.sentences[0], &ch, 11).unwrap();
        let b = corrupt(&corpus.sentences[0], &ch, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_confusion_approaches_the_channel() {
        // Law of large numbers: over 50k tokens the per-cell hard-label
        // frequencies stay within 0.02 of the channel matrix.
        let spec = HmmSpec::synthetic_default();
        let corpus = sample_until_tokens(&spec, 50_000, 21).unwrap();
        let mut ch = NoiseChannel::synthetic_default();
        ch.p_unaligned = 0.0; // keep every draw observable
        let projected = corrupt_corpus(&corpus, &ch, 22).unwrap();
        let k = spec.k();
        let mut counts = Array2::<f64>::zeros((k, k));
        for (gold, proj) in corpus.sentences.iter().zip(&projected.sentences) {
            for (&tag, label) in gold.tags.iter().zip(&proj.labels) {
                match label {
                    ProjectedLabel::Hard(j) => counts[[tag, *j]] += 1.0,
                    ProjectedLabel::Soft(_) => panic!("p_unaligned is 0"),
                }
            }
        }
        for i in 0..k {
            let row_total: f64 = counts.row(i).sum();
            assert!(row_total > 0.0);
            for j in 0..k {
                let freq = counts[[i, j]] / row_total;
                let diff = (freq - ch.matrix[[i, j]]).abs();
                assert!(diff <= 0.02, "cell ({i},{j}) off by {diff}");
            }
        }
    }

    #[test]
    fn agreement_is_one_for_the_channel_itself() {
        let ch = NoiseChannel::synthetic_default();
        let counts = vec![100; 6];
        let a = channel_agreement(&ch.matrix.view(), &ch.matrix.view(), &counts, 50).unwrap();
        assert_eq!(a, 1.0);

        // Adding a per-row constant does not change any argmax.
        let shifted = &ch.matrix + 3.25;
        let a = channel_agreement(&shifted.view(), &ch.matrix.view(), &counts, 50).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn agreement_respects_the_occurrence_threshold() {
        let c = arr2(&[[0.9, 0.1], [0.2, 0.8]]);
        // Disagreeing first row, but only the second row is eligible.
        let a = arr2(&[[0.1, 0.9], [0.3, 0.7]]);
        let counts = vec![10, 500];
        let agreement = channel_agreement(&a.view(), &c.view(), &counts, 50).unwrap();
        assert_eq!(agreement, 1.0);
        let counts = vec![500, 500];
        let agreement = channel_agreement(&a.view(), &c.view(), &counts, 50).unwrap();
        assert_eq!(agreement, 0.5);
        // Nothing eligible at all is an error, as is a shape mismatch.
        assert!(channel_agreement(&a.view(), &c.view(), &[0, 0], 50).is_err());
        let wide = Array2::zeros((2, 3));
        assert!(channel_agreement(&wide.view(), &c.view(), &[9, 9], 1).is_err());
        assert!(channel_agreement(&a.view(), &c.view(), &[9], 1).is_err());
    }

    #[test]
    fn agreement_of_random_bias_is_near_chance() {
        // Monte Carlo baseline: a random bias matrix agrees with a
        // diagonal-dominant channel on about 1/K of rows.
        let c = NoiseChannel::synthetic_default().matrix;
        let counts = vec![1000; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut total = 0.0;
        let runs = 400;
        for _ in 0..runs {
            let a = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
            total += channel_agreement(&a.view(), &c.view(), &counts, 50).unwrap();
        }
        let mean = total / f64::from(runs);
        assert!((mean - 1.0 / 6.0).abs() < 0.04, "mean agreement {mean}");
    }

    #[test]
    fn joint_loss_descends_on_a_fixed_batch() {
        // Sanity descent: 50 plain gradient steps on one fixed tiny batch
        // must reduce the joint loss.
        let spec = HmmSpec::synthetic_default();
        let gold = sample_corpus(&spec, 3, 31).unwrap();
        let extra = sample_corpus(&spec, 3, 32).unwrap();
        let projected = corrupt_corpus(&extra, &NoiseChannel::synthetic_default(), 33).unwrap();

        let vocab = Vocabulary::build(&token_sequences(&gold), 1).unwrap();
        let dims = ModelDims {
            vocab_size: vocab.size(),
            embed_dim: 8,
            hidden_dim: 8,
            gold_tags: spec.k(),
            proj_tags: spec.k(),
        };
        let mut params = init_params(&dims, 34).unwrap();
        let gold_batch: Vec<GoldExample> = gold
            .sentences
            .iter()
            .map(|s| GoldExample::from_sentence(s, &vocab))
            .collect();
        let proj_batch: Vec<ProjectedExample> = projected
            .sentences
            .iter()
            .map(|s| ProjectedExample::from_sentence(s, &vocab))
            .collect();

        let first = joint_loss(&params, &gold_batch, &proj_batch).unwrap();
        for _ in 0..50 {
            let grads = gradients(&params, &gold_batch, &proj_batch).unwrap();
            sgd_update(&mut params, &grads, 0.2, f64::INFINITY).unwrap();
        }
        let last = joint_loss(&params, &gold_batch, &proj_batch).unwrap();
        assert!(
            last < first,
            "joint loss went from {first} to {last} after 50 steps"
        );
    }

    fn mini_config() -> RecoveryConfig {
        let defaults = RecoveryConfig::default();
        RecoveryConfig {
            gold_tokens: 120,
            dev_tokens: 120,
            test_tokens: 200,
            proj_tokens: 600,
            master_seeds: vec![7],
            stage_updates: 300,
            train: TrainConfig {
                embed_dim: 10,
                hidden_dim: 10,
                ..defaults.train
            },
            ..defaults
        }
    }

    #[test]
    fn recovery_smoke_run_is_deterministic() {
        let config = mini_config();
        let report_a = run_recovery_experiment(&config).unwrap();
        let report_b = run_recovery_experiment(&config).unwrap();
        assert_eq!(report_a.runs.len(), 1);
        let run = &report_a.runs[0];
        assert!(run.annotated_acc > 0.0 && run.annotated_acc <= 1.0);
        assert!(run.projected_acc > 0.0 && run.projected_acc <= 1.0);
        assert!(run.debias_acc > 0.0 && run.debias_acc <= 1.0);
        assert_eq!(run.bias_transform.dim(), (6, 6));
        assert_eq!(run.eligible_tags, 6);

        let mut text_a = Vec::new();
        report_a.write_text(&mut text_a).unwrap();
        let mut text_b = Vec::new();
        report_b.write_text(&mut text_b).unwrap();
        assert_eq!(text_a, text_b);
        let text = String::from_utf8(text_a).unwrap();
        assert!(text.contains("median:"));
        assert!(text.contains("seed 7:"));
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recovery.conf");
        std::fs::write(
            &path,
            "gold_tokens = 500\nproj_tokens = 2500   # big side\nseeds = 5, 6, 7\nchannel = identity\nd_h = 24\n",
        )
        .unwrap();
        let config = RecoveryConfig::from_file(&path).unwrap();
        assert_eq!(config.gold_tokens, 500);
        assert_eq!(config.proj_tokens, 2500);
        assert_eq!(config.master_seeds, vec![5, 6, 7]);
        assert_eq!(config.channel.matrix, Array2::eye(6));
        assert_eq!(config.channel.p_unaligned, 0.0);
        assert_eq!(config.train.hidden_dim, 24);

        std::fs::write(&path, "seeds = 5;6\n").unwrap();
        assert!(RecoveryConfig::from_file(&path).is_err());
        std::fs::write(&path, "channel = diagonal\n").unwrap();
        assert!(RecoveryConfig::from_file(&path).is_err());
        std::fs::write(&path, "gold_tokens = 0\n").unwrap();
        assert!(RecoveryConfig::from_file(&path).is_err());
        std::fs::write(&path, "mystery = 1\n").unwrap();
        assert!(RecoveryConfig::from_file(&path).is_err());
    }

    #[test]
    fn corrupt_rejects_mismatched_shapes() {
        let spec = HmmSpec::synthetic_default();
        let corpus = sample_corpus(&spec, 2, 1).unwrap();
        let ch = NoiseChannel::identity(4);
        assert!(corrupt_corpus(&corpus, &ch, 1).is_err());
    }
}
