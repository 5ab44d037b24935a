//! Command-line front end for the debias tagger.
//!
//! One subcommand per batch job: project labels across a word-aligned
//! bitext, train a tagger, tag raw text, score predictions, export the
//! learned label-noise transformation, coarsen a fine-grained corpus, run
//! the synthetic recovery experiment, and verify the analytic gradients.
//!
//! Conventions shared by every subcommand:
//! * progress and statistics go to standard error; machine-readable output
//!   goes to files or standard output only;
//! * all randomness flows from explicit seeds, so identical invocations
//!   produce identical outputs;
//! * exit codes: 0 success, 2 bad flags or configuration, 3 unreadable or
//!   malformed data, 4 numeric failure.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use debias_tagger::corpus::GoldCorpus;
use debias_tagger::eval::{evaluate, export_bias, write_bias_csv};
use debias_tagger::model::{check_gradients, GradCheckConfig, TaggerModel};
use debias_tagger::projection::{project, read_parallel_bundle, select_sentences, ProjectedCorpus};
use debias_tagger::synthetic::{run_recovery_experiment, RecoveryConfig};
use debias_tagger::tagset::{TagMapping, TagSet};
use debias_tagger::training::{train_pipeline, TrainConfig};
use debias_tagger::{Error, Result};

#[derive(Parser)]
#[command(
    name = "debias-tagger",
    version,
    about = "Sequence labeling with a learned label-noise transformation",
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project tags from a tagged source text to its aligned translation
    Project(ProjectArgs),
    /// Train a tagger on gold data, optionally plus projected data
    Train(TrainArgs),
    /// Tag whitespace-tokenized text with a trained model
    Tag(TagArgs),
    /// Score a tagged file against a gold reference
    Eval(EvalArgs),
    /// Write a trained model's label-noise transformation as CSV
    ExportBias(ExportBiasArgs),
    /// Rewrite a corpus from fine-grained tags to coarse ones
    Map(MapArgs),
    /// Run the synthetic noisy-label recovery experiment
    Synth(SynthArgs),
    /// Check the analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ProjectArgs {
    /// Tagged source text, two-column `token<TAB>tag`
    #[arg(long)]
    src: PathBuf,
    /// Target text, one sentence of whitespace-separated tokens per line
    #[arg(long)]
    tgt: PathBuf,
    /// Word alignments, one `src-tgt` pair list per line
    #[arg(long)]
    align: PathBuf,
    /// Per-sentence alignment scores, one number per line
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Keep only the n best-scoring sentence pairs (requires --scores)
    #[arg(long)]
    top_n: Option<usize>,
    /// Source tagset: a label file, or the literal `universal`
    #[arg(long)]
    tagset_src: String,
    /// Projected corpus output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Gold training corpus, two-column `token<TAB>tag`
    #[arg(long)]
    gold_train: PathBuf,
    /// Development corpus for model selection, same format
    #[arg(long)]
    dev: PathBuf,
    /// Projected corpus for the joint stage; omit to train on gold alone
    #[arg(long)]
    projected: Option<PathBuf>,
    /// Gold tagset: a label file, or the literal `universal`
    #[arg(long)]
    tagset_gold: String,
    /// Projected-side tagset; defaults to the gold tagset
    #[arg(long)]
    tagset_proj: Option<String>,
    /// `key = value` settings file; individual flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedding dimension
    #[arg(long)]
    d_e: Option<usize>,
    /// Hidden dimension per direction
    #[arg(long)]
    d_h: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Pretraining epoch limit
    #[arg(long)]
    stage1_epochs: Option<usize>,
    /// Joint-stage epoch limit
    #[arg(long)]
    stage2_epochs: Option<usize>,
    /// Epochs without a dev improvement before a stage stops
    #[arg(long)]
    patience: Option<usize>,
    /// Gradient clipping threshold (global L2 norm)
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Projected sentences interleaved per gold sentence
    #[arg(long)]
    proj_per_gold: Option<usize>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Vocabulary frequency cutoff
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Model output path
    #[arg(long)]
    model_out: PathBuf,
    /// Training report output path
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Input text, one sentence of whitespace-separated tokens per line
    #[arg(long)]
    input: PathBuf,
    /// Output path for two-column `token<TAB>tag`; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted tags, two-column `token<TAB>tag`
    #[arg(long)]
    pred: PathBuf,
    /// Gold reference, same format
    #[arg(long)]
    gold: PathBuf,
    /// Tagset: a label file, or the literal `universal`
    #[arg(long)]
    tagset: String,
    /// Confusion matrix CSV output path
    #[arg(long)]
    confusion_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportBiasArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// CSV output path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    /// Corpus with fine-grained tags, two-column `token<TAB>tag`
    #[arg(long)]
    input: PathBuf,
    /// Mapping file, `fine<TAB>coarse` per line
    #[arg(long)]
    mapping: PathBuf,
    /// Coarse tagset: a label file, or the literal `universal`
    #[arg(long, default_value = "universal")]
    tagset_out: String,
    /// Rewritten corpus output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// `key = value` settings file; defaults used when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the report and per-seed transformation CSVs
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of independently seeded draws
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Seed of the first draw
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step size
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Maximum relative error per parameter
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Exit code for a failed run: 2 for configuration problems, 4 for numeric
/// ones, 3 for everything wrong with the data itself.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Project(args) => cmd_project(args),
        Command::Train(args) => cmd_train(args),
        Command::Tag(args) => cmd_tag(args),
        Command::Eval(args) => cmd_eval(args),
        Command::ExportBias(args) => cmd_export_bias(args),
        Command::Map(args) => cmd_map(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

/// Resolves a tagset argument: the literal `universal` or a label file.
fn load_tagset(arg: &str) -> Result<TagSet> {
    if arg == "universal" {
        Ok(TagSet::universal())
    } else {
        TagSet::read(arg)
    }
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::io(path, e)
}

fn stdout_err(e: io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

fn cmd_project(args: ProjectArgs) -> Result<u8> {
    if args.top_n.is_some() && args.scores.is_none() {
        return Err(Error::Config("--top-n requires --scores".into()));
    }
    let tagset = load_tagset(&args.tagset_src)?;
    let pairs = read_parallel_bundle(
        &args.src,
        &args.tgt,
        &args.align,
        args.scores.as_deref(),
        &tagset,
    )?;
    let pairs = match args.top_n {
        Some(n) => select_sentences(&pairs, n)?,
        None => pairs,
    };
    let k = tagset.size();
    let sentences = pairs
        .iter()
        .map(|pair| project(pair, k))
        .collect::<Result<Vec<_>>>()?;
    let corpus = ProjectedCorpus { sentences, tagset };
    corpus.write(&args.out)?;
    let (hard, soft) = corpus.label_counts();
    eprintln!(
        "projected {} sentences, {} tokens ({} aligned, {} unaligned)",
        corpus.sentences.len(),
        corpus.token_count(),
        hard,
        soft
    );
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.d_e {
        config.embed_dim = v;
    }
    if let Some(v) = args.d_h {
        config.hidden_dim = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.stage1_epochs {
        config.stage1_epochs = v;
    }
    if let Some(v) = args.stage2_epochs {
        config.stage2_epochs = v;
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    if let Some(v) = args.clip_norm {
        config.clip_norm = v;
    }
    if let Some(v) = args.proj_per_gold {
        config.proj_per_gold = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate()?;

    let gold_tagset = load_tagset(&args.tagset_gold)?;
    let train = GoldCorpus::read_two_column(&args.gold_train, &gold_tagset)?;
    let dev = GoldCorpus::read_two_column(&args.dev, &gold_tagset)?;
    let projected = match &args.projected {
        Some(path) => {
            let proj_tagset = match &args.tagset_proj {
                Some(arg) => load_tagset(arg)?,
                None => gold_tagset.clone(),
            };
            Some(ProjectedCorpus::read(path, &proj_tagset)?)
        }
        None => None,
    };

    let (model, report) = train_pipeline(&train, &dev, projected.as_ref(), &config, args.min_count)?;
    model.save(&args.model_out)?;
    if let Some(path) = &args.report_out {
        let mut w = create_out(path)?;
        report.write_text(&mut w).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    match report.chosen_record() {
        Some(r) => eprintln!(
            "kept {} epoch {} (dev accuracy {}); {} epochs in {:.1}s",
            r.stage,
            r.epoch,
            r.dev_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "-".into()),
            report.records.len(),
            report.wall_secs
        ),
        None => eprintln!(
            "kept initial parameters; {} epochs in {:.1}s",
            report.records.len(),
            report.wall_secs
        ),
    }
    Ok(0)
}

fn cmd_tag(args: TagArgs) -> Result<u8> {
    let model = TaggerModel::load(&args.model)?;
    let mut text = String::new();
    File::open(&args.input)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| io_err(&args.input, e))?;
    let sentences: Vec<Vec<String>> = text
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| line.split_whitespace().map(str::to_string).collect())
        .collect();
    if sentences.is_empty() {
        return Err(Error::Data(format!(
            "{}: no sentences to tag",
            args.input.display()
        )));
    }

    let mut tagged = Vec::with_capacity(sentences.len());
    for tokens in &sentences {
        let labels = model.tag(tokens)?;
        tagged.push((tokens, labels));
    }

    let write_all = |w: &mut dyn Write| -> io::Result<()> {
        for (tokens, labels) in &tagged {
            for (token, label) in tokens.iter().zip(labels) {
                writeln!(w, "{token}\t{label}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    };
    match &args.out {
        Some(path) => {
            let mut w = create_out(path)?;
            write_all(&mut w).map_err(|e| io_err(path, e))?;
            w.flush().map_err(|e| io_err(path, e))?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write_all(&mut w).map_err(stdout_err)?;
        }
    }
    eprintln!("tagged {} sentences", tagged.len());
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    let tagset = load_tagset(&args.tagset)?;
    let pred = GoldCorpus::read_two_column(&args.pred, &tagset)?;
    let gold = GoldCorpus::read_two_column(&args.gold, &tagset)?;
    let report = evaluate(&pred, &gold)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    report.write_text(&mut w).map_err(stdout_err)?;
    if let Some(path) = &args.confusion_out {
        let mut w = create_out(path)?;
        report
            .write_confusion_csv(&mut w)
            .map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(0)
}

fn cmd_export_bias(args: ExportBiasArgs) -> Result<u8> {
    let model = TaggerModel::load(&args.model)?;
    match &args.out {
        Some(path) => export_bias(&model, path)?,
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write_bias_csv(
                &model.params.bias_transform.view(),
                model.gold_tagset.labels(),
                model.proj_tagset.labels(),
                &mut w,
            )
            .map_err(stdout_err)?;
        }
    }
    Ok(0)
}

fn cmd_map(args: MapArgs) -> Result<u8> {
    let mapping = TagMapping::read(&args.mapping)?;
    if mapping.is_empty() {
        return Err(Error::Data(format!(
            "{}: empty mapping",
            args.mapping.display()
        )));
    }
    let fine_tagset = TagSet::new(mapping.fine_labels())?;
    let coarse_tagset = load_tagset(&args.tagset_out)?;
    let corpus = GoldCorpus::read_two_column(&args.input, &fine_tagset)?;
    let mapped = corpus.map_to_universal(&mapping, &coarse_tagset)?;
    mapped.write_two_column(&args.out)?;
    eprintln!(
        "mapped {} sentences, {} tokens onto {} tags",
        mapped.sentences.len(),
        mapped.token_count(),
        coarse_tagset.size()
    );
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> Result<u8> {
    let config = match &args.config {
        Some(path) => RecoveryConfig::from_file(path)?,
        None => RecoveryConfig::default(),
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    eprintln!(
        "running {} seeds at {} gold / {} projected tokens",
        config.master_seeds.len(),
        config.gold_tokens,
        config.proj_tokens
    );
    let report = run_recovery_experiment(&config)?;

    let report_path = args.out_dir.join("report.txt");
    let mut w = create_out(&report_path)?;
    report.write_text(&mut w).map_err(|e| io_err(&report_path, e))?;
    w.flush().map_err(|e| io_err(&report_path, e))?;
    for run in &report.runs {
        let path = args.out_dir.join(format!("bias-seed{}.csv", run.master_seed));
        let mut w = create_out(&path)?;
        write_bias_csv(
            &run.bias_transform.view(),
            &report.labels,
            &report.labels,
            &mut w,
        )
        .map_err(|e| io_err(&path, e))?;
        w.flush().map_err(|e| io_err(&path, e))?;
    }

    let stdout = io::stdout();
    let mut w = stdout.lock();
    report.write_text(&mut w).map_err(stdout_err)?;
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8> {
    let config = GradCheckConfig {
        runs: args.runs,
        step: args.step,
        rel_tol: args.rel_tol,
        base_seed: args.seed,
        ..GradCheckConfig::default()
    };
    let report = check_gradients(&config)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for run in &report.runs {
        writeln!(
            w,
            "seed {}: {} parameters, max abs diff {:.3e}, max rel err {:.3e} ... {}",
            run.seed,
            run.params_checked,
            run.max_abs_diff,
            run.max_rel_err,
            if run.passed { "ok" } else { "FAILED" }
        )
        .map_err(stdout_err)?;
    }
    if report.passed {
        writeln!(w, "gradient check passed ({} runs)", report.runs.len()).map_err(stdout_err)?;
        Ok(0)
    } else {
        writeln!(
            w,
            "gradient check FAILED (worst relative error {:.3e})",
            report.worst_rel_err()
        )
        .map_err(stdout_err)?;
        Ok(4)
    }
}
