use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "hyperparams.d=8",
    "--set",
    "model.heads=2",
    "--set",
    "model.encoder_blocks=1",
    "--set",
    "hyperparams.B=1",
    "--set",
    "hyperparams.N_F=8",
    "--set",
    "hyperparams.N_S=16",
    "--set",
    "hyperparams.N_C=4",
    "--set",
    "synth.d_in=6",
    "--set",
    "split.train=4",
    "--set",
    "split.val=2",
    "--set",
    "split.test=2",
    "--set",
    "epochs=1",
    "--set",
    "batch_size=2",
];

fn skimfocus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skimfocus"))
        .args(args)
        .env_remove("SKIMFOCUS_OUT")
        .output()
        .expect("binary runs")
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut all = args.to_vec();
    all.extend_from_slice(TINY);
    all
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let o = skimfocus(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in [
        "synth",
        "compose-multirep",
        "train",
        "eval",
        "predict",
        "gradcheck",
        "ablate",
        "plot",
    ] {
        assert!(text.contains(cmd), "missing {cmd} in\n{text}");
    }
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(skimfocus(&["--frobnicate", "synth"]).status.code(), Some(1));
}

#[test]
fn bad_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = skimfocus(&["synth", "--out", path(&out), "--set", "hyperparams.R=zero"]);
    assert_eq!(o.status.code(), Some(1));
    let o = skimfocus(&["synth", "--out", path(&out), "--set", "no.such.key=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = skimfocus(&["synth", "--out", path(&out), "--set", "epochs=0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = skimfocus(&[
        "eval",
        "--checkpoint",
        path(&dir.path().join("nope.sfnc")),
        "--manifest",
        path(&dir.path().join("nope.jsonl")),
        "--out",
        path(dir.path()),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn synth_train_eval_predict_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");

    let o = skimfocus(&with_tiny(&["synth", "--out", path(&data)]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "resolved_config.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let o = skimfocus(&with_tiny(&["train", "--data", path(&data), "--out", path(&run)]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(run.join("trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,L,L_S,L_F,val_MAE,val_OBO\n"));
    assert_eq!(trace.lines().count(), 2);
    let ckpt = run.join("model.sfnc");
    assert!(ckpt.exists());

    let eval_dir = dir.path().join("eval");
    let o = skimfocus(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--manifest",
        path(&data.join("test.jsonl")),
        "--out",
        path(&eval_dir),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("id,class,gt,pred,abs_err,rel_err,obo_hit\n"));
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(json["mae"].is_number() && json["obo"].is_number());

    // Changing N_C at inference is allowed, the architecture is not.
    let o = skimfocus(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--manifest",
        path(&data.join("test.jsonl")),
        "--out",
        path(&eval_dir),
        "--n-instructive",
        "2",
        "--sampling",
        "uniform",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = skimfocus(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--manifest",
        path(&data.join("test.jsonl")),
        "--out",
        path(&eval_dir),
        "--set",
        "hyperparams.d=16",
    ]);
    assert_ne!(o.status.code(), Some(0));

    let pred_dir = dir.path().join("pred");
    let o = skimfocus(&[
        "predict",
        "--checkpoint",
        path(&ckpt),
        "--manifest",
        path(&data.join("test.jsonl")),
        "--out",
        path(&pred_dir),
        "--plot",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(pred_dir.join("predictions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let sums: f64 = v["per_view_sums"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!((sums.max(0.0) - v["count"].as_f64().unwrap()).abs() < 1e-9);
    }
    let svgs = fs::read_dir(pred_dir.join("plots"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert!(svgs >= 2, "found {svgs} plots");
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = skimfocus(&["gradcheck", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    assert!(report.lines().count() >= 15);
    assert!(!report.contains("FAIL"));
}

#[test]
fn two_cell_ablation_emits_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("abl");
    let o = skimfocus(&with_tiny(&["synth", "--out", path(&data)]));
    assert_eq!(o.status.code(), Some(0));
    let o = skimfocus(&with_tiny(&[
        "ablate",
        "--data",
        path(&data),
        "--out",
        path(&out),
        "--grid",
        "ablations.skim_enabled=true,false",
    ]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "cell,ablations.skim_enabled,test_MAE,test_OBO");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,true,") && lines[2].starts_with("1,false,"));
}

#[test]
fn compose_multirep_writes_units() {
    let dir = tempfile::tempdir().unwrap();
    let o = skimfocus(&["compose-multirep", "--units", "6", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["multirep.jsonl", "exemplars.jsonl", "layouts.jsonl"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(!text.is_empty(), "{f}");
    }
    let units = fs::read_to_string(dir.path().join("multirep.jsonl")).unwrap();
    assert_eq!(units.lines().count(), 6);
}

#[test]
fn config_file_is_overridden_by_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# desk run\nsplit.train = 3\nsplit.val = 1\nsplit.test = 1\nsynth.d_in = 4\n",
    )
    .unwrap();
    let out = dir.path().join("data");
    let o = skimfocus(&[
        "synth",
        "--config",
        path(&cfg),
        "--set",
        "split.train=5",
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(out.join("train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    assert_eq!(
        fs::read_to_string(out.join("val.jsonl")).unwrap().lines().count(),
        1
    );
    let snap = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(snap.contains("split.train = 5"), "{snap}");
}
