//! End-to-end checks of the command-line binary: flag validation, exit
//! codes, output formats, and cross-command workflows over real files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_debias-tagger"))
}

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

/// Trains a small model on the toy corpus; returns its path.
fn train_toy_model(dir: &Path, extra: &[&str]) -> PathBuf {
    let model = dir.join("toy.model");
    let mut args = vec![
        "train".to_string(),
        "--gold-train".into(),
        data_path("toy.src").display().to_string(),
        "--dev".into(),
        data_path("toy.src").display().to_string(),
        "--tagset-gold".into(),
        "universal".into(),
        "--d-e".into(),
        "8".into(),
        "--d-h".into(),
        "8".into(),
        "--stage1-epochs".into(),
        "5".into(),
        "--patience".into(),
        "5".into(),
        "--seed".into(),
        "11".into(),
        "--model-out".into(),
        model.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = bin().args(&args).output().expect("binary runs");
    assert_eq!(code(&out), 0, "training failed: {}", stderr(&out));
    model
}

#[test]
fn project_reproduces_the_toy_bundle_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("toy.proj");
    let out = run(&[
        "project",
        "--src",
        data_path("toy.src").to_str().unwrap(),
        "--tgt",
        data_path("toy.tgt").to_str().unwrap(),
        "--align",
        data_path("toy.align").to_str().unwrap(),
        "--tagset-src",
        "universal",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // Statistics go to stderr; the data file matches the frozen bytes.
    assert!(stderr(&out).contains("5 tokens"));
    assert_eq!(
        std::fs::read(&out_path).unwrap(),
        std::fs::read(data_path("toy.expected")).unwrap()
    );
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = run(&[
        "project",
        "--src",
        data_path("toy.src").to_str().unwrap(),
        "--tagset-src",
        "universal",
        "--out",
        "/tmp/never-written.proj",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn top_n_without_scores_is_a_usage_error() {
    let out = run(&[
        "project",
        "--src",
        data_path("toy.src").to_str().unwrap(),
        "--tgt",
        data_path("toy.tgt").to_str().unwrap(),
        "--align",
        data_path("toy.align").to_str().unwrap(),
        "--tagset-src",
        "universal",
        "--top-n",
        "1",
        "--out",
        "/tmp/never-written.proj",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--top-n requires --scores"));
}

#[test]
fn unreadable_input_is_a_data_error() {
    let out = run(&[
        "project",
        "--src",
        "/no/such/file.src",
        "--tgt",
        data_path("toy.tgt").to_str().unwrap(),
        "--align",
        data_path("toy.align").to_str().unwrap(),
        "--tagset-src",
        "universal",
        "--out",
        "/tmp/never-written.proj",
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("/no/such/file.src"));
}

#[test]
fn training_twice_with_one_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = train_toy_model(dir.path(), &[]);
    let first_bytes = std::fs::read(&first).unwrap();
    let second = train_toy_model(dir.path(), &[]);
    assert_eq!(first_bytes, std::fs::read(&second).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.conf");
    std::fs::write(&config, "d_e = 8\nd_h = 8\nstage1_epochs = 5\npatience = 5\nseed = 3\n")
        .unwrap();
    let report = dir.path().join("train.report");
    let model = dir.path().join("m.bin");
    let out = run(&[
        "train",
        "--gold-train",
        data_path("toy.src").to_str().unwrap(),
        "--dev",
        data_path("toy.src").to_str().unwrap(),
        "--tagset-gold",
        "universal",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "99",
        "--model-out",
        model.to_str().unwrap(),
        "--report-out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // The echoed configuration reflects the flag, not the file.
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("seed = 99"));
    assert!(report_text.contains("d_e = 8"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "mystery = 1\n").unwrap();
    let out = run(&[
        "train",
        "--gold-train",
        data_path("toy.src").to_str().unwrap(),
        "--dev",
        data_path("toy.src").to_str().unwrap(),
        "--tagset-gold",
        "universal",
        "--config",
        config.to_str().unwrap(),
        "--model-out",
        dir.path().join("m.bin").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown key `mystery`"));
}

#[test]
fn tag_round_trips_into_eval_with_perfect_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy_model(dir.path(), &[]);

    let raw = dir.path().join("raw.txt");
    std::fs::write(&raw, "gave the good advice .\n").unwrap();
    let tagged = dir.path().join("tagged.txt");
    let out = run(&[
        "tag",
        "--model",
        model.to_str().unwrap(),
        "--input",
        raw.to_str().unwrap(),
        "--out",
        tagged.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // The tagger's own output scored against itself is exact, and the
    // first line of the score report is the accuracy.
    let out = run(&[
        "eval",
        "--pred",
        tagged.to_str().unwrap(),
        "--gold",
        tagged.to_str().unwrap(),
        "--tagset",
        "universal",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("accuracy 1.0000\n"));
}

#[test]
fn tag_writes_the_same_bytes_to_stdout_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy_model(dir.path(), &[]);
    let raw = dir.path().join("raw.txt");
    std::fs::write(&raw, "the cat .\nunseen words here\n").unwrap();

    let to_stdout = run(&["tag", "--model", model.to_str().unwrap(), "--input", raw.to_str().unwrap()]);
    assert_eq!(code(&to_stdout), 0);

    let tagged = dir.path().join("tagged.txt");
    let to_file = run(&[
        "tag",
        "--model",
        model.to_str().unwrap(),
        "--input",
        raw.to_str().unwrap(),
        "--out",
        tagged.to_str().unwrap(),
    ]);
    assert_eq!(code(&to_file), 0);
    assert_eq!(stdout(&to_stdout), std::fs::read_to_string(&tagged).unwrap());
}

#[test]
fn tagging_an_empty_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy_model(dir.path(), &[]);
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = run(&[
        "tag",
        "--model",
        model.to_str().unwrap(),
        "--input",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no sentences"));
}

#[test]
fn export_bias_writes_a_square_identity_for_a_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy_model(dir.path(), &[]);
    let out = run(&["export-bias", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    // Gold-only training never touches the transformation, so it is still
    // the identity: header plus twelve rows, ones on the diagonal.
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with(",NOUN,VERB"));
    assert!(lines[1].starts_with("NOUN,1.000000,0.000000"));
}

#[test]
fn map_rewrites_fine_tags_through_the_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let fine = dir.path().join("fine.txt");
    std::fs::write(&fine, "dog\tNN\nbarks\tVBZ\n").unwrap();
    let mapping = dir.path().join("map.tsv");
    std::fs::write(&mapping, "NN\tNOUN\nVBZ\tVERB\n").unwrap();
    let mapped = dir.path().join("coarse.txt");
    let out = run(&[
        "map",
        "--input",
        fine.to_str().unwrap(),
        "--mapping",
        mapping.to_str().unwrap(),
        "--out",
        mapped.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read_to_string(&mapped).unwrap(),
        "dog\tNOUN\nbarks\tVERB\n\n"
    );
}

#[test]
fn gradcheck_passes_on_the_default_sweep() {
    let out = run(&["gradcheck", "--runs", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("gradient check passed"));
}

#[test]
fn synth_writes_report_and_transformation_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.conf");
    // A miniature run: enough to exercise the file layout, not the science.
    std::fs::write(
        &config,
        "gold_tokens = 120\ndev_tokens = 120\ntest_tokens = 200\nproj_tokens = 600\n\
         seeds = 5\nstage_updates = 200\nd_e = 10\nd_h = 10\n",
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.starts_with("synthetic recovery experiment (6 tags)"));
    assert!(report.contains("median:"));
    assert_eq!(stdout(&out), report);
    let bias = std::fs::read_to_string(out_dir.join("bias-seed5.csv")).unwrap();
    assert!(bias.starts_with(",T0,T1,T2,T3,T4,T5"));
}

#[test]
fn bad_synth_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.conf");
    std::fs::write(&config, "channel = diagonal\n").unwrap();
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().join("results").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}
