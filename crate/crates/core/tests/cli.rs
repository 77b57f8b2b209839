use std::path::Path;
use std::process::Command;

use heatmark::cli::{known_keys, run, CHECKPOINT_DIR, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, METRICS_FILE, RESOLVED_FILE, RUNLOG_FILE};
use heatmark::data::{synth_generate, write_dataset};
use heatmark::hpo::{STUDY_FILE, TRIALS_FILE};
use heatmark::interpret::{IMAGE_FILE, TRACE_FILE};
use heatmark::model::{build_model, catalog, BuiltModel};
use heatmark::rng::RngStream;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatmark"))
}

fn heatmark(args: &[&str]) -> i32 {
    run(std::iter::once("heatmark").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn synth(dir: &Path, count: &str) {
    assert_eq!(heatmark(&["synth", "--count", count, "--dims", "24x32", "--seed", "3", "--out", p(dir)]), EXIT_OK);
}

const DESK: [&str; 10] = [
    "--set", "model.id=A-3", "--set", "model.scale=desk", "--set", "train.epochs=2", "--set", "train.batch_size=8",
    "--seed", "5",
];

#[test]
fn end_to_end_synth_train_eval_dream() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, aug, run_dir, dream) =
        (tmp.path().join("data"), tmp.path().join("aug"), tmp.path().join("run"), tmp.path().join("dream"));
    synth(&data, "10");
    assert_eq!(heatmark(&["augment", "--data", p(&data), "--seed", "1", "--out", p(&aug)]), EXIT_OK);
    let lines = std::fs::read_to_string(aug.join("annotations.csv")).unwrap().lines().count();
    assert_eq!(lines, 31);

    let mut args = vec!["train", "--data", p(&aug), "--out", p(&run_dir)];
    args.extend(DESK);
    assert_eq!(heatmark(&args), EXIT_OK);
    for f in [RESOLVED_FILE, RUNLOG_FILE, METRICS_FILE] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(run_dir.join(RUNLOG_FILE)).unwrap().lines().count(), 3);
    let resolved = std::fs::read_to_string(run_dir.join(RESOLVED_FILE)).unwrap();
    assert!(resolved.contains("model.stem=alt_conv_resnext") && resolved.contains("model.branch=bahdanau"));

    let ckpt = run_dir.join(CHECKPOINT_DIR);
    let out = bin().args(["eval", "--checkpoint", p(&ckpt), "--data", p(&data)]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("accuracy\twing_loss\tmae\tmse\tn_samples\n"));
    assert!(stdout.trim_end().ends_with("\t10"));

    let code = heatmark(&["dream", "--checkpoint", p(&ckpt), "--layer", "stem.1", "--steps", "5", "--out", p(&dream)]);
    assert_eq!(code, EXIT_OK);
    assert!(dream.join(IMAGE_FILE).is_file() && dream.join(TRACE_FILE).is_file());
    assert_eq!(std::fs::read_to_string(dream.join(TRACE_FILE)).unwrap().lines().count(), 7);

    // The resolved config reproduces the run.
    let again = tmp.path().join("again");
    let code = heatmark(&["train", "--config", p(&run_dir.join(RESOLVED_FILE)), "--data", p(&aug), "--out", p(&again)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(read(&again.join(RUNLOG_FILE)), read(&run_dir.join(RUNLOG_FILE)));
}

#[test]
fn identical_flags_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "6");
    synth(&b, "6");
    for e in std::fs::read_dir(&a).unwrap() {
        let e = e.unwrap();
        assert_eq!(read(&e.path()), read(&b.join(e.file_name())));
    }
    let (ra, rb) = (tmp.path().join("ra"), tmp.path().join("rb"));
    for r in [&ra, &rb] {
        let mut args = vec!["train", "--data", p(&a), "--out", p(r)];
        args.extend(DESK);
        assert_eq!(heatmark(&args), EXIT_OK);
    }
    for f in [RUNLOG_FILE, METRICS_FILE, RESOLVED_FILE] {
        assert_eq!(read(&ra.join(f)), read(&rb.join(f)), "{f}");
    }
    for e in std::fs::read_dir(ra.join(CHECKPOINT_DIR)).unwrap() {
        let e = e.unwrap();
        assert_eq!(read(&e.path()), read(&rb.join(CHECKPOINT_DIR).join(e.file_name())));
    }
    let (da, db) = (tmp.path().join("da"), tmp.path().join("db"));
    for d in [&da, &db] {
        let ck = ra.join(CHECKPOINT_DIR);
        assert_eq!(heatmark(&["dream", "--checkpoint", p(&ck), "--steps", "3", "--seed", "2", "--out", p(d)]), EXIT_OK);
    }
    assert_eq!(read(&da.join(IMAGE_FILE)), read(&db.join(IMAGE_FILE)));
    assert_eq!(read(&da.join(TRACE_FILE)), read(&db.join(TRACE_FILE)));
}

#[test]
fn eval_of_exact_model_prints_accuracy_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = synth_generate(4, (24, 32), &mut RngStream::new(1, 0)).unwrap();
    let pts: Vec<(f64, f64)> = d.samples[0].points.iter().map(|&(x, y)| (x.round(), y.round())).collect();
    d.samples.iter_mut().for_each(|s| s.points = pts.clone());
    let data = tmp.path().join("data");
    write_dataset(&d, &data).unwrap();
    let mut m: BuiltModel = build_model(&catalog("C-1").unwrap().scaled(), &[24, 32, 3], &mut RngStream::new(1, 1)).unwrap();
    let bias = heatmark::data::normalized_points(&pts, (24, 32)).into_data();
    for l in m.layers_mut().filter(|l| l.name == "head.dense") {
        for prm in &mut l.params {
            if prm.name == "bias" {
                prm.value.data_mut().copy_from_slice(&bias);
            } else {
                prm.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let ckpt = tmp.path().join("ck");
    m.save(&ckpt).unwrap();
    let out = bin().args(["eval", "--checkpoint", p(&ckpt), "--data", p(&data)]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = stdout.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0].parse::<f64>().unwrap(), 1.0);
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
    assert!(tmp.path().join(METRICS_FILE).is_file());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "6");
    let out = p(tmp.path()).to_string();
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--data", p(&data), "--out", &out];
        args.extend(extra);
        bin().args(&args).output().unwrap()
    };
    let o = train(&["--set", "train.epochs=0"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));
    let o = train(&["--set", "model.wings=3"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.wings"));
    let o = train(&["--set", "train.batch_size=many"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.batch_size"));
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert_eq!(train(&["--config", "/nonexistent/run.cfg"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(train(&["--bogus"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(heatmark(&["train", "--data", "/nonexistent", "--out", &out]), EXIT_USAGE);
    assert_eq!(heatmark(&["synth", "--dims", "big", "--out", &out]), EXIT_USAGE);
    assert_eq!(heatmark(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(heatmark(&["--help"]), EXIT_OK);
    assert!(known_keys().iter().any(|k| k == "search.train.learning_rate"));
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("ck");
    std::fs::create_dir_all(&ck).unwrap();
    std::fs::write(ck.join("model.cfg"), "garbage").unwrap();
    let data = tmp.path().join("data");
    synth(&data, "4");
    assert_eq!(heatmark(&["eval", "--checkpoint", p(&ck), "--data", p(&data)]), EXIT_RUNTIME);
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let out = bin().args(["search", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--set", "--data", "--trials", "--epochs", "--jobs", "--seed", "--out"] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: 40]") && text.contains("[default: 20]") && text.contains("[default: 1]"));
    for cmd in ["synth", "augment", "train", "eval", "dream"] {
        assert_eq!(bin().args([cmd, "--help"]).output().unwrap().status.code(), Some(EXIT_OK));
    }
}

#[test]
fn search_writes_study_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "12");
    let out = tmp.path().join("study");
    let code = heatmark(&[
        "search", "--data", p(&data), "--trials", "3", "--epochs", "2", "--jobs", "2", "--seed", "4", "--out", p(&out),
        "--set", "model.id=C-1", "--set", "model.scale=desk",
        "--set", "search.model.dropout=uniform:0:0.3",
    ]);
    assert_eq!(code, EXIT_OK);
    for f in [STUDY_FILE, TRIALS_FILE, RESOLVED_FILE] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let trials = std::fs::read_to_string(out.join(TRIALS_FILE)).unwrap();
    assert_eq!(trials.lines().next().unwrap(), "trial\tstatus\tobjective\tmodel.dropout");
    assert_eq!(trials.lines().count(), 4);
    let bad = heatmark(&["search", "--data", p(&data), "--out", p(&out), "--set", "search.model.kernel=choice"]);
    assert_eq!(bad, EXIT_USAGE);
}
