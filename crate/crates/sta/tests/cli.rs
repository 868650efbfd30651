use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sta::checkpoint;
use sta::commands::eval_checkpoint;
use sta_core::data::SkeletonSequence;
use sta_core::model::{ModelShape, StaModel};

fn sta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sta")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sta(args);
    assert!(
        out.status.success(),
        "sta {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("synth.txt");
    ok(&["gen-synth", "--n", "12", "--classes", "2", "--joints", "4", "--seed", "3", "--out", s(&data)]);
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "format = \"generic\"\nhidden = 4\nn1 = 4\nn2 = 2\nbatch_size = 4\ndropout = 0.0\nsmooth_window = 1\nfolds = 3\n",
    )
    .unwrap();
    Setup {
        _dir: dir,
        root,
        data,
        config,
    }
}

#[test]
fn plain_variant_writes_one_final_checkpoint() {
    let t = setup();
    let out = t.root.join("lstm");
    ok(&["train", "--config", s(&t.config), "--data", s(&t.data), "--variant", "lstm", "--out", s(&out)]);
    assert!(out.join("final/manifest.json").is_file());
    let dirs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    assert_eq!(dirs.len(), 1);
    let model = checkpoint::load(&out.join("final")).unwrap().model;
    assert!(model.spatial_bypass && model.temporal_bypass);
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,stage,loss,ce,reg1,reg2,reg3"));
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn joint_run_is_reproducible_and_exportable() {
    let t = setup();
    let (a, b) = (t.root.join("a"), t.root.join("b"));
    for out in [&a, &b] {
        ok(&["train", "--config", s(&t.config), "--data", s(&t.data), "--seed", "9", "--out", s(out)]);
    }
    for f in ["loss.csv", "final/tensors.bin", "final/manifest.json", "stage-05-spatial-pretrain/tensors.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let stages = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("stage-"))
        .count();
    assert_eq!(stages, 8);

    let report = ok(&["eval", "--checkpoint", s(&a.join("final")), "--config", s(&t.config), "--data", s(&t.data)]);
    assert!(report.contains("accuracy"), "{report}");
    assert!(report.contains("class  1"), "{report}");

    let exp = t.root.join("attn");
    ok(&["export-attention", "--checkpoint", s(&a.join("final")), "--data", s(&t.data), "--index", "2", "--out", s(&exp)]);
    let alpha = std::fs::read_to_string(exp.join("alpha.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<usize, f64>::new();
    for line in alpha.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *sums.entry(f[0].parse().unwrap()).or_default() += f[2].parse::<f64>().unwrap();
    }
    assert!(!sums.is_empty());
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-9));
    let beta = std::fs::read_to_string(exp.join("beta.csv")).unwrap();
    let rows: Vec<Vec<f64>> = beta
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), sums.len());
    assert!(rows.iter().all(|r| r[1] >= 0.0));
    assert_eq!(rows[0][2], rows[0][1]);
    for w in rows.windows(2) {
        assert_eq!(w[1][2], w[1][1] - w[0][1]);
    }
}

#[test]
fn cross_validation_folds() {
    let t = setup();
    let out = t.root.join("cv");
    let text = ok(&["train", "--config", s(&t.config), "--data", s(&t.data), "--variant", "ta", "--fold", "all", "--out", s(&out)]);
    assert!(text.contains("mean accuracy"), "{text}");
    for i in 0..3 {
        assert!(out.join(format!("fold-{i}/final/manifest.json")).is_file());
    }
    let report = ok(&["eval", "--checkpoint", s(&out), "--config", s(&t.config), "--data", s(&t.data), "--variant", "ta", "--fold", "all"]);
    assert_eq!(report.matches("fold ").count(), 3);
    assert!(report.contains("mean accuracy"));
}

#[test]
fn constant_classifier_scores_half_on_balanced_data() {
    let t = setup();
    let ckpt = t.root.join("const");
    let mut m = StaModel::zeros(ModelShape::uniform(4, 1, 2, 3)).unwrap();
    m.proj_b.data_mut()[0] = 1.0;
    checkpoint::save(&ckpt, &m, None).unwrap();
    let data = sta::formats::load_generic(&t.data).unwrap();
    let c = eval_checkpoint(&ckpt, &data).unwrap();
    assert_eq!(c.accuracy(), 0.5);
    assert!(eval_checkpoint(&ckpt, &[]).is_err());
    let wide = vec![SkeletonSequence::new(5, 1, 0, vec![0.0; 15]).unwrap()];
    assert!(matches!(eval_checkpoint(&ckpt, &wide), Err(sta::Error::Layout(_))));
}

#[test]
fn bad_inputs_fail_with_messages() {
    let t = setup();
    let typo = t.root.join("typo.toml");
    std::fs::write(&typo, "hiden = 3\n").unwrap();
    let out = sta(&["train", "--config", s(&typo), "--data", s(&t.data)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden"));
    let out = sta(&["train", "--config", s(&t.config), "--data", s(&t.root.join("nope.txt"))]);
    assert!(!out.status.success());
    let out = sta(&["eval", "--checkpoint", s(&t.root.join("missing")), "--config", s(&t.config), "--data", s(&t.data)]);
    assert!(!out.status.success());
}

#[test]
fn grad_check_command() {
    let text = ok(&["grad-check", "--seed", "4"]);
    assert!(text.starts_with("max relative error"), "{text}");
}
