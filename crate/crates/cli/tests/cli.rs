use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use am3::checkpoint;
use am3::report::Table;
use am3::{Am3Model, ModelConfig, PrototypeRule};

fn am3(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_am3"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run am3")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = am3(dir, args);
    assert!(
        out.status.success(),
        "am3 {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_of(dir: &Path, args: &[&str]) -> String {
    let out = am3(dir, args);
    assert!(!out.status.success(), "am3 {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn table(path: &Path) -> Table {
    Table::read(fs::File::open(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    table(path).numeric_column(name).unwrap()
}

#[test]
fn synth_gen_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth-gen", "--seed", "7", "--dataset", "a", "--categories", "6", "--samples", "8"]);
    ok(p, &["synth-gen", "--seed", "7", "--dataset", "b", "--categories", "6", "--samples", "8"]);
    let mut names: Vec<_> = fs::read_dir(p.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in names {
        assert_eq!(fs::read(p.join("a").join(&name)).unwrap(), fs::read(p.join("b").join(&name)).unwrap());
    }
    let d = am3::dataset::load_dataset(&p.join("a")).unwrap();
    assert_eq!((d.len(), d.feature_dimension()), (6, 32));
}

#[test]
fn too_few_categories_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-gen", "--categories", "3"]);
    let err = stderr_of(dir.path(), &["train", "--n-way", "5"]);
    assert!(err.contains("configuration error"), "{err}");
}

#[test]
fn zero_iterations_write_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-gen", "--categories", "10", "--samples", "8"]);
    ok(dir.path(), &["train", "--seed", "3", "--iterations", "0"]);
    let saved = checkpoint::load(&dir.path().join("out/model.json")).unwrap();
    let init = Am3Model::new(
        ModelConfig {
            visual_dim: 32,
            semantic_dim: 32,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    assert_eq!(checkpoint::to_bytes(&saved).unwrap(), checkpoint::to_bytes(&init).unwrap());
    assert_eq!(fs::read_to_string(dir.path().join("out/loss_trace.csv")).unwrap(), "iteration,learning_rate,batch_loss\n");
}

#[test]
fn fixed_unit_lambda_trains_only_the_encoder() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-gen", "--categories", "10", "--samples", "8"]);
    ok(dir.path(), &["train", "--lambda-fixed", "1.0", "--iterations", "20"]);
    let trained = checkpoint::load(&dir.path().join("out/model.json")).unwrap();
    assert_eq!(trained.config().rule, PrototypeRule::Fixed(1.0));
    let init = Am3Model::new(trained.config().clone(), 0).unwrap();
    assert_ne!(trained.encoder(), init.encoder());
    assert_eq!(trained.transform(), init.transform());
    assert_eq!(trained.mixer(), init.mixer());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth-gen", "--categories", "20", "--samples", "10"]);
    for out in ["r1", "r2"] {
        let args = ["--seed", "5", "--out-dir", out, "--iterations", "30"];
        ok(p, &[&["train"], &args[..]].concat());
        ok(p, &["eval", "--seed", "5", "--out-dir", out, "--episodes", "50"]);
    }
    for file in ["model.json", "loss_trace.csv", "eval.csv", "eval_episodes.csv"] {
        assert_eq!(fs::read(p.join("r1").join(file)).unwrap(), fs::read(p.join("r2").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn one_way_evaluation_is_always_right() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-gen", "--categories", "6", "--samples", "25"]);
    ok(dir.path(), &["train", "--n-way", "1", "--iterations", "5"]);
    let out = ok(dir.path(), &["eval", "--n-way", "1", "--episodes", "20"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("n_episodes,"));
    assert_eq!(column(&dir.path().join("out/eval.csv"), "mean_accuracy"), vec![1.0]);
}

#[test]
fn untrained_five_way_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth-gen", "--visual-separation", "0", "--semantic-separation", "0", "--samples", "25"]);
    ok(p, &["train", "--iterations", "0"]);
    ok(p, &["eval", "--episodes", "500"]);
    let acc = column(&p.join("out/eval.csv"), "mean_accuracy")[0];
    assert!((0.15..=0.25).contains(&acc), "{acc}");
}

#[test]
fn unknown_mode_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let err = stderr_of(dir.path(), &["train", "--mode", "x"]);
    for mode in ["w", "e", "p", "wq"] {
        assert!(err.contains(mode), "{err}");
    }
    assert!(err.contains("w, e, p, wq"), "{err}");
}

#[test]
fn lambda_stats_rows_and_frozen_mixer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth-gen", "--categories", "20", "--samples", "15"]);
    ok(p, &["train", "--iterations", "10"]);
    ok(p, &["lambda-stats", "--shots", "3", "--episodes", "20"]);
    let rows = table(&p.join("out/lambda_stats.csv"));
    assert_eq!(rows.rows.len(), 1);
    assert_eq!(rows.numeric_column("k_shot").unwrap(), vec![3.0]);

    let mut frozen = checkpoint::load(&p.join("out/model.json")).unwrap();
    frozen.set_mixer_output(0.0);
    checkpoint::save(&frozen, &p.join("frozen.json")).unwrap();
    ok(p, &["lambda-stats", "--checkpoint", "frozen.json", "--shots", "1,5,10", "--episodes", "20"]);
    let csv = p.join("out/lambda_stats.csv");
    assert_eq!(column(&csv, "lambda_mean"), vec![0.5; 3]);
    assert_eq!(column(&csv, "lambda_std"), vec![0.0; 3]);
}

#[test]
fn ablation_rows_match_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth-gen", "--categories", "20", "--samples", "15"]);
    ok(p, &["ablate", "--modes", "w,w", "--iterations", "40", "--episodes", "60", "--with-control"]);
    let rows = table(&p.join("out/ablation.csv"));
    assert_eq!(rows.text_column("mode").unwrap(), vec!["w", "w", "control"]);
    assert_eq!(rows.rows[0], rows.rows[1]);

    ok(p, &["train", "--iterations", "40"]);
    ok(p, &["eval", "--episodes", "60"]);
    let eval = table(&p.join("out/eval.csv"));
    for name in ["mean_accuracy", "ci95"] {
        assert_eq!(rows.text_column(name).unwrap()[0], eval.text_column(name).unwrap()[0], "{name}");
    }
}

#[test]
fn plots_are_well_formed_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("lambda.csv"), "k_shot,lambda_mean,lambda_std\n1,0.2,0.05\n5,0.4,0.1\n10,0.55,0.08\n").unwrap();
    for out in ["one.svg", "two.svg"] {
        ok(p, &["plot", "--csv", "lambda.csv", "--kind", "lambda-vs-shots", "--output", out]);
    }
    let svg = fs::read_to_string(p.join("one.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(p.join("two.svg")).unwrap());
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(doc.descendants().any(|n| n.has_tag_name("polyline")));

    fs::write(p.join("empty.csv"), "").unwrap();
    stderr_of(p, &["plot", "--csv", "empty.csv", "--kind", "lambda-vs-shots"]);
    fs::write(p.join("header.csv"), "k_shot,lambda_mean,lambda_std\n").unwrap();
    stderr_of(p, &["plot", "--csv", "header.csv", "--kind", "lambda-vs-shots"]);
    fs::write(p.join("partial.csv"), "k_shot,lambda_mean\n1,0.2\n").unwrap();
    let err = stderr_of(p, &["plot", "--csv", "partial.csv", "--kind", "lambda-vs-shots"]);
    assert!(err.contains("lambda_std"), "{err}");
}

#[test]
fn printed_configuration_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let first = ok(p, &["--print-config", "train", "--seed", "9", "--iterations", "50", "--mode", "wq", "--k-shot", "3"]).stdout;
    fs::write(p.join("run.toml"), &first).unwrap();
    let again = ok(p, &["--print-config", "--config", "run.toml", "train"]).stdout;
    assert_eq!(String::from_utf8(first).unwrap(), String::from_utf8(again).unwrap());
    fs::write(p.join("bad.toml"), "sede = 1\n").unwrap();
    let err = stderr_of(p, &["--config", "bad.toml", "train"]);
    assert!(err.contains("sede"), "{err}");
}

#[test]
fn dimension_mismatch_names_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth-gen", "--categories", "8", "--samples", "8"]);
    ok(p, &["train", "--iterations", "0"]);
    ok(p, &["synth-gen", "--dataset", "narrow", "--categories", "8", "--samples", "8", "--visual-dim", "16"]);
    let err = stderr_of(p, &["eval", "--dataset", "narrow", "--embeddings", "data/embeddings.txt"]);
    assert!(err.contains("32") && err.contains("16"), "{err}");
}
