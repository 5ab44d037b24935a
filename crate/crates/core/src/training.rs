//! Two-stage training: warm up on annotated data alone, then continue
//! jointly on annotated and projected data, with early stopping against a
//! held-out development set.

use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_value, read_kv_file, ConfigEntry};
use crate::corpus::{token_sequences, GoldCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    gradient_pass, gradients_direct, init_params, sentence_accuracy_counts, GoldExample, Gradients,
    ModelDims, ModelParams, ProjectedExample, TaggerModel,
};
use crate::projection::ProjectedCorpus;

/// Everything that controls a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    /// Epoch budget of the annotated-only warmup stage.
    pub stage1_epochs: usize,
    /// Epoch budget of the joint stage.
    pub stage2_epochs: usize,
    /// Epochs without a dev improvement before a stage stops early.
    pub patience: usize,
    /// Gradient updates are rescaled when their norm exceeds this;
    /// `INFINITY` disables clipping.
    pub clip_norm: f64,
    /// Projected sentences consumed per annotated sentence in the joint
    /// stage.
    pub proj_per_gold: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            embed_dim: 128,
            hidden_dim: 128,
            learning_rate: 1.0,
            stage1_epochs: 20,
            stage2_epochs: 20,
            patience: 5,
            clip_norm: 5.0,
            proj_per_gold: 1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        if !lr_ok {
            return Err(Error::Config("lr must be a positive number".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(
                "clip_norm must be positive (inf disables clipping)".into(),
            ));
        }
        if self.proj_per_gold == 0 {
            return Err(Error::Config("proj_per_gold must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting; unknown keys are errors.
    pub fn apply(&mut self, entry: &ConfigEntry) -> Result<()> {
        match entry.key.as_str() {
            "d_e" => self.embed_dim = parse_value(entry)?,
            "d_h" => self.hidden_dim = parse_value(entry)?,
            "lr" => self.learning_rate = parse_value(entry)?,
            "stage1_epochs" => self.stage1_epochs = parse_value(entry)?,
            "stage2_epochs" => self.stage2_epochs = parse_value(entry)?,
            "patience" => self.patience = parse_value(entry)?,
            "clip_norm" => self.clip_norm = parse_value(entry)?,
            "proj_per_gold" => self.proj_per_gold = parse_value(entry)?,
            "seed" => self.seed = parse_value(entry)?,
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{other}`",
                    entry.line
                )))
            }
        }
        Ok(())
    }

    /// Reads settings from a `key = value` file on top of the defaults.
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        for entry in read_kv_file(path)? {
            config.apply(&entry)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// The settings echoed back in `key = value` form, same keys as
    /// [`apply`](Self::apply) accepts.
    pub fn echo(&self) -> String {
        format!(
            "d_e = {}\nd_h = {}\nlr = {}\nstage1_epochs = {}\nstage2_epochs = {}\npatience = {}\nclip_norm = {}\nproj_per_gold = {}\nseed = {}\n",
            self.embed_dim,
            self.hidden_dim,
            self.learning_rate,
            self.stage1_epochs,
            self.stage2_epochs,
            self.patience,
            self.clip_norm,
            self.proj_per_gold,
            self.seed
        )
    }
}

/// Which stage an epoch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Annotated-only warmup.
    Pretrain,
    /// Joint annotated + projected training.
    Joint,
    /// Projected-only training without the noise transformation (baseline).
    Direct,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Joint => "joint",
            Stage::Direct => "direct",
        })
    }
}

/// One epoch's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based epoch number within its stage.
    pub epoch: usize,
    /// Mean per-token training loss over the epoch's updates.
    pub train_loss: f64,
    /// Token accuracy on dev after the epoch; `None` when dev is empty.
    pub dev_accuracy: Option<f64>,
}

/// The full trace of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the epoch whose parameters were kept.
    pub chosen: Option<usize>,
    pub wall_secs: f64,
}

impl TrainReport {
    pub fn chosen_record(&self) -> Option<&EpochRecord> {
        self.chosen.map(|i| &self.records[i])
    }

    /// Human-readable trace: the config echo, one line per epoch, and which
    /// epoch was kept.
    pub fn write_text(&self, w: &mut dyn Write) -> io::Result<()> {
        write!(w, "{}", self.config.echo())?;
        writeln!(w)?;
        for (i, r) in self.records.iter().enumerate() {
            let marker = if self.chosen == Some(i) { "  <- kept" } else { "" };
            match r.dev_accuracy {
                Some(acc) => writeln!(
                    w,
                    "{} epoch {:>3}  loss {:.6}  dev acc {:.4}{marker}",
                    r.stage, r.epoch, r.train_loss, acc
                )?,
                None => writeln!(
                    w,
                    "{} epoch {:>3}  loss {:.6}  dev acc n/a{marker}",
                    r.stage, r.epoch, r.train_loss
                )?,
            }
        }
        writeln!(w, "wall clock: {:.1}s", self.wall_secs)
    }
}

/// One SGD update: clips the gradient's global norm to `clip_norm`, then
/// steps `params -= lr * grads`. Non-finite gradient norms are an error.
pub fn sgd_update(
    params: &mut ModelParams,
    grads: &Gradients,
    lr: f64,
    clip_norm: f64,
) -> Result<()> {
    let norm = grads.l2_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let step = lr * scale;
    for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= step * gv;
        }
    }
    Ok(())
}

/// Dev set resolved to ids once, so per-epoch evaluation is cheap.
struct DevSet {
    examples: Vec<GoldExample>,
    tokens: usize,
}

impl DevSet {
    fn build(dev: &GoldCorpus, vocab: &Vocabulary) -> DevSet {
        let examples: Vec<GoldExample> = dev
            .sentences
            .iter()
            .map(|s| GoldExample::from_sentence(s, vocab))
            .collect();
        let tokens = examples.iter().map(|e| e.tokens.len()).sum();
        DevSet { examples, tokens }
    }

    fn accuracy(&self, params: &ModelParams) -> Result<Option<f64>> {
        if self.tokens == 0 {
            return Ok(None);
        }
        let mut correct = 0;
        for ex in &self.examples {
            let (c, _) = sentence_accuracy_counts(params, ex)?;
            correct += c;
        }
        Ok(Some(correct as f64 / self.tokens as f64))
    }
}

/// What one epoch iterates over.
enum EpochPlan<'a> {
    /// Annotated sentences only.
    Gold(&'a [GoldExample]),
    /// Annotated and projected sentences interleaved, `proj_per_gold`
    /// projected updates after each annotated one (projected order reshuffled
    /// per epoch and cycled if exhausted).
    Interleaved {
        gold: &'a [GoldExample],
        proj: &'a [ProjectedExample],
        proj_per_gold: usize,
    },
    /// Projected sentences only, trained through the direct loss.
    Direct(&'a [ProjectedExample]),
}

/// Runs one stage: epochs of shuffled single-sentence SGD updates with
/// early stopping on dev accuracy. Returns the best parameters seen (by dev;
/// the final ones when dev is empty) and their accuracy.
fn run_stage(
    mut params: ModelParams,
    plan: &EpochPlan<'_>,
    dev: &DevSet,
    config: &TrainConfig,
    stage: Stage,
    max_epochs: usize,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<EpochRecord>,
) -> Result<(ModelParams, Option<f64>)> {
    let mut best_params = params.clone();
    let mut best_acc: Option<f64> = None;
    let mut since_best = 0usize;

    for epoch in 1..=max_epochs {
        let (loss_sum, token_sum) = match plan {
            EpochPlan::Gold(gold) => {
                let mut order: Vec<usize> = (0..gold.len()).collect();
                order.shuffle(rng);
                let mut loss_sum = 0.0;
                let mut token_sum = 0usize;
                for &i in &order {
                    let ex = &gold[i];
                    let (grads, loss) =
                        gradient_pass(&params, std::slice::from_ref(ex), &[], true)?;
                    sgd_update(&mut params, &grads.expect("requested"), config.learning_rate, config.clip_norm)?;
                    loss_sum += loss * ex.tokens.len() as f64;
                    token_sum += ex.tokens.len();
                }
                (loss_sum, token_sum)
            }
            EpochPlan::Interleaved {
                gold,
                proj,
                proj_per_gold,
            } => {
                let mut gold_order: Vec<usize> = (0..gold.len()).collect();
                gold_order.shuffle(rng);
                let mut proj_order: Vec<usize> = (0..proj.len()).collect();
                proj_order.shuffle(rng);
                let mut next_proj = 0usize;
                let mut loss_sum = 0.0;
                let mut token_sum = 0usize;
                for &i in &gold_order {
                    let ex = &gold[i];
                    let (grads, loss) =
                        gradient_pass(&params, std::slice::from_ref(ex), &[], true)?;
                    sgd_update(&mut params, &grads.expect("requested"), config.learning_rate, config.clip_norm)?;
                    loss_sum += loss * ex.tokens.len() as f64;
                    token_sum += ex.tokens.len();
                    for _ in 0..*proj_per_gold {
                        if proj.is_empty() {
                            break;
                        }
                        let ex = &proj[proj_order[next_proj]];
                        next_proj += 1;
                        if next_proj == proj_order.len() {
                            next_proj = 0;
                            proj_order.shuffle(rng);
                        }
                        let (grads, loss) =
                            gradient_pass(&params, &[], std::slice::from_ref(ex), true)?;
                        sgd_update(&mut params, &grads.expect("requested"), config.learning_rate, config.clip_norm)?;
                        loss_sum += loss * ex.tokens.len() as f64;
                        token_sum += ex.tokens.len();
                    }
                }
                (loss_sum, token_sum)
            }
            EpochPlan::Direct(proj) => {
                let mut order: Vec<usize> = (0..proj.len()).collect();
                order.shuffle(rng);
                let mut loss_sum = 0.0;
                let mut token_sum = 0usize;
                for &i in &order {
                    let ex = &proj[i];
                    let loss = crate::model::direct_nll(&params, ex)?;
                    let grads = gradients_direct(&params, std::slice::from_ref(ex))?;
                    sgd_update(&mut params, &grads, config.learning_rate, config.clip_norm)?;
                    loss_sum += loss * ex.tokens.len() as f64;
                    token_sum += ex.tokens.len();
                }
                (loss_sum, token_sum)
            }
        };

        if !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss became {loss_sum} in {stage} epoch {epoch}"
            )));
        }
        let train_loss = loss_sum / token_sum.max(1) as f64;
        let dev_accuracy = dev.accuracy(&params)?;
        records.push(EpochRecord {
            stage,
            epoch,
            train_loss,
            dev_accuracy,
        });

        match dev_accuracy {
            Some(acc) => {
                if best_acc.is_none_or(|b| acc > b) {
                    best_acc = Some(acc);
                    best_params = params.clone();
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best > config.patience {
                        break;
                    }
                }
            }
            None => {
                // No dev signal: keep the latest parameters, never stop early.
                best_params = params.clone();
            }
        }
    }
    Ok((best_params, best_acc))
}

fn indexed_gold(corpus: &GoldCorpus, vocab: &Vocabulary) -> Vec<GoldExample> {
    corpus
        .sentences
        .iter()
        .map(|s| GoldExample::from_sentence(s, vocab))
        .collect()
}

fn indexed_proj(corpus: &ProjectedCorpus, vocab: &Vocabulary) -> Vec<ProjectedExample> {
    corpus
        .sentences
        .iter()
        .map(|s| ProjectedExample::from_sentence(s, vocab))
        .collect()
}

fn check_same_tagset(a: &GoldCorpus, b: &GoldCorpus) -> Result<()> {
    if a.tagset != b.tagset {
        return Err(Error::Data(
            "training and dev corpora use different tagsets".into(),
        ));
    }
    Ok(())
}

/// Annotated-only training (the warmup stage, also the annotated baseline).
/// Deterministic for a fixed config and data.
pub fn pretrain(
    params: ModelParams,
    train: &GoldCorpus,
    dev: &GoldCorpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    check_same_tagset(train, dev)?;
    let started = Instant::now();
    let gold = indexed_gold(train, vocab);
    let dev_set = DevSet::build(dev, vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut records = Vec::new();
    let (best, _) = run_stage(
        params,
        &EpochPlan::Gold(&gold),
        &dev_set,
        config,
        Stage::Pretrain,
        config.stage1_epochs,
        &mut rng,
        &mut records,
    )?;
    let chosen = chosen_index(&records);
    Ok((
        best,
        TrainReport {
            config: config.clone(),
            records,
            chosen,
            wall_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Joint training on annotated plus projected data (the second stage).
pub fn joint_train(
    params: ModelParams,
    train: &GoldCorpus,
    projected: &ProjectedCorpus,
    dev: &GoldCorpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    check_same_tagset(train, dev)?;
    let started = Instant::now();
    let gold = indexed_gold(train, vocab);
    let proj = indexed_proj(projected, vocab);
    let dev_set = DevSet::build(dev, vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut records = Vec::new();
    let (best, _) = run_stage(
        params,
        &EpochPlan::Interleaved {
            gold: &gold,
            proj: &proj,
            proj_per_gold: config.proj_per_gold,
        },
        &dev_set,
        config,
        Stage::Joint,
        config.stage2_epochs,
        &mut rng,
        &mut records,
    )?;
    let chosen = chosen_index(&records);
    Ok((
        best,
        TrainReport {
            config: config.clone(),
            records,
            chosen,
            wall_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Projected-only training through the direct loss — the baseline that
/// trusts projected labels at face value. Requires the projected tagset to
/// have the same size as the prediction tagset.
pub fn train_projected_direct(
    params: ModelParams,
    projected: &ProjectedCorpus,
    dev: &GoldCorpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let proj = indexed_proj(projected, vocab);
    let dev_set = DevSet::build(dev, vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let mut records = Vec::new();
    let (best, _) = run_stage(
        params,
        &EpochPlan::Direct(&proj),
        &dev_set,
        config,
        Stage::Direct,
        config.stage1_epochs,
        &mut rng,
        &mut records,
    )?;
    let chosen = chosen_index(&records);
    Ok((
        best,
        TrainReport {
            config: config.clone(),
            records,
            chosen,
            wall_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Earliest record with the highest dev accuracy, if any has one.
fn chosen_index(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(acc) = r.dev_accuracy {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((i, acc));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// The full recipe: build the vocabulary over annotated training data plus
/// whatever projected data is present, initialize, warm up on annotated
/// data, then (if projected data is present) train jointly. The parameters
/// kept are the ones with the best dev accuracy seen anywhere; without a dev
/// signal, the final ones.
pub fn train_pipeline(
    train: &GoldCorpus,
    dev: &GoldCorpus,
    projected: Option<&ProjectedCorpus>,
    config: &TrainConfig,
    min_count: usize,
) -> Result<(TaggerModel, TrainReport)> {
    config.validate()?;
    check_same_tagset(train, dev)?;
    if train.sentences.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let started = Instant::now();

    let mut seqs = token_sequences(train);
    if let Some(p) = projected {
        seqs.extend(p.sentences.iter().map(|s| s.tokens.as_slice()));
    }
    let vocab = Vocabulary::build(&seqs, min_count)?;

    let proj_tagset = projected.map(|p| p.tagset.clone()).unwrap_or_else(|| train.tagset.clone());
    let dims = ModelDims {
        vocab_size: vocab.size(),
        embed_dim: config.embed_dim,
        hidden_dim: config.hidden_dim,
        gold_tags: train.tagset.size(),
        proj_tags: proj_tagset.size(),
    };
    let params = init_params(&dims, config.seed)?;

    let (stage1_params, stage1_report) = pretrain(params, train, dev, &vocab, config)?;
    let mut records = stage1_report.records;
    let stage1_chosen = chosen_index(&records);

    let (final_params, chosen) = match projected {
        Some(p) if config.stage2_epochs > 0 => {
            let (stage2_params, stage2_report) =
                joint_train(stage1_params.clone(), train, p, dev, &vocab, config)?;
            let offset = records.len();
            records.extend(stage2_report.records);
            // Keep whichever stage's best epoch scored higher on dev
            // (earlier stage wins ties). Without dev, stage 2's output
            // stands.
            let overall = chosen_index(&records);
            match overall {
                None => (stage2_params, None),
                Some(i) if i < offset => (stage1_params, Some(i)),
                Some(i) => (stage2_params, Some(i)),
            }
        }
        _ => (stage1_params, stage1_chosen),
    };

    let model = TaggerModel::new(final_params, vocab, train.tagset.clone(), proj_tagset)?;
    Ok((
        model,
        TrainReport {
            config: config.clone(),
            records,
            chosen,
            wall_secs: started.elapsed().as_secs_f64(),
        },
    ))
}
