use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use facedit_core::mesh::{load_obj, MorphableModel, Region};
use facedit_core::pipeline::{parse_history_csv, Checkpoint, OptimConfig};

fn facedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facedit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = facedit(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fails(args: &[&str], code: i32) -> String {
    let out = facedit(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A scene plus trained checkpoints shared by the tests.
struct Shared {
    _dir: tempfile::TempDir,
    scene: PathBuf,
    runs: PathBuf,
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("scene");
        let runs = dir.path().join("runs");
        ok(&["init", "--out", s(&scene)]);
        for e in ["smile", "close_eyes", "raise_brow"] {
            ok(&["fit", "--scene", s(&scene), "--expression", e, "--out", s(&runs)]);
        }
        Shared { _dir: dir, scene, runs }
    })
}

fn checkpoint(name: &str) -> PathBuf {
    shared().runs.join(format!("{name}.checkpoint.json"))
}

/// Copy of a trained checkpoint with its final layers zeroed.
fn identity_checkpoint(dir: &Path) -> PathBuf {
    let mut ck = Checkpoint::load(&checkpoint("smile")).unwrap();
    let mut m = ck.mapper().unwrap();
    m.zero_final_layers();
    ck.tensors = m.params().to_named();
    let path = dir.join("identity.json");
    ck.save(&path).unwrap();
    path
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn init_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("nested/b"));
    ok(&["init", "--out", s(&a)]);
    ok(&["init", "--out", s(&b)]);
    for f in ["model.json", "fixture.json", "au_rules.json", "surrogates.json", "desk.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        manifest(&a.join("init.manifest.json"))["artifacts"],
        manifest(&b.join("init.manifest.json"))["artifacts"]
    );
}

#[test]
fn init_refuses_then_force_overwrites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    ok(&["init", "--out", s(&out)]);
    let err = fails(&["init", "--out", s(&out), "--seed", "2"], 2);
    assert!(err.contains("--force"), "{err}");
    let before = manifest(&out.join("init.manifest.json"));
    ok(&["init", "--out", s(&out), "--seed", "2", "--force"]);
    let after = manifest(&out.join("init.manifest.json"));
    assert_eq!(after["seed"], 2);
    assert_ne!(before["artifacts"], after["artifacts"]);
    ok(&["verify", s(&out.join("init.manifest.json"))]);
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    ok(&["init", "--out", s(&out)]);
    std::fs::write(out.join("desk.json"), "{}").unwrap();
    let err = fails(&["verify", s(&out.join("init.manifest.json"))], 4);
    assert!(err.contains("desk.json"), "{err}");
}

#[test]
fn fit_writes_checkpoint_history_and_manifest() {
    let sh = shared();
    let ck = Checkpoint::load(&checkpoint("smile")).unwrap();
    assert_eq!((ck.expression.as_str(), ck.steps, ck.seed), ("smile", 300, 1));
    let hist = std::fs::read_to_string(sh.runs.join("smile.history.csv")).unwrap();
    assert_eq!(parse_history_csv(&hist, "smile").unwrap().len(), 300);
    ok(&["verify", s(&sh.runs.join("fit-smile.manifest.json"))]);
}

#[test]
fn fit_is_reproducible() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    ok(&["fit", "--scene", s(&sh.scene), "--expression", "smile", "--out", s(dir.path())]);
    for f in ["smile.checkpoint.json", "smile.history.csv"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(sh.runs.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_config_file() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"expression_name": "close_eyes", "steps": 5, "seed": 3, "gamma": 0.5}"#).unwrap();
    ok(&["fit", "--scene", s(&sh.scene), "--config", s(&cfg), "--steps", "7", "--out", s(dir.path())]);
    let used = OptimConfig::load(&dir.path().join("close_eyes.config.json")).unwrap();
    assert_eq!((used.steps, used.seed, used.gamma), (7, 3, 0.5));
    assert_eq!(used.lambda_id, 0.2);
    let hist = std::fs::read_to_string(dir.path().join("close_eyes.history.csv")).unwrap();
    assert_eq!(parse_history_csv(&hist, "h").unwrap().len(), 7);
    assert_eq!(manifest(&dir.path().join("fit-close_eyes.manifest.json"))["seed"], 3);
}

#[test]
fn unknown_expression_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["fit", "--scene", s(&shared().scene), "--expression", "wink", "--out", s(dir.path())], 2);
    assert!(err.contains("text:wink"), "{err}");
}

#[test]
fn numeric_abort_names_the_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"learning_rate": 1e300, "steps": 5}"#).unwrap();
    let err = fails(&["fit", "--scene", s(&shared().scene), "--config", s(&cfg), "--out", s(dir.path())], 3);
    assert!(err.contains("L_M"), "{err}");
}

#[test]
fn missing_scene_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fails(&["fit", "--scene", s(&dir.path().join("nowhere")), "--out", s(dir.path())], 4);
}

#[test]
fn reference_start_beats_neutral_start() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    for e in ["smile", "close_eyes"] {
        ok(&["fit", "--scene", s(&sh.scene), "--expression", e, "--no-ref", "--out", s(dir.path())]);
        let with = Checkpoint::load(&checkpoint(e)).unwrap();
        let without = Checkpoint::load(&dir.path().join(format!("{e}.checkpoint.json"))).unwrap();
        assert!(!without.config.use_reference);
        assert!(with.final_cosine >= without.final_cosine, "{e}");
    }
}

#[test]
fn render_identity_checkpoint_changes_nothing() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    let ck = identity_checkpoint(dir.path());
    let out = dir.path().join("render");
    ok(&["render", "--scene", s(&sh.scene), "--checkpoint", s(&ck), "--out", s(&out)]);
    for (a, b) in [("before.obj", "after.obj"), ("before.pgm", "after.pgm")] {
        assert_eq!(std::fs::read(out.join(a)).unwrap(), std::fs::read(out.join(b)).unwrap());
    }
}

#[test]
fn render_trained_smile_moves_the_mouth() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    ok(&["render", "--scene", s(&sh.scene), "--checkpoint", s(&checkpoint("smile")), "--out", s(dir.path())]);
    let before = load_obj(&dir.path().join("before.obj")).unwrap();
    let after = load_obj(&dir.path().join("after.obj")).unwrap();
    let model = MorphableModel::load(&sh.scene.join("model.json")).unwrap();
    let moved: f64 = model
        .region_vertices(Region::Mouth)
        .iter()
        .map(|&i| (0..3).map(|k| (after.vertex(i)[k] - before.vertex(i)[k]).powi(2)).sum::<f64>().sqrt())
        .sum();
    assert!(moved > 0.0);
    let pgm = std::fs::read(dir.path().join("after.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n128 128\n255\n"));
}

#[test]
fn invalid_checkpoint_reports_field_path() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(checkpoint("smile")).unwrap()).unwrap();
    v["dims"]["d_att"] = serde_json::json!(-1);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let err = fails(&["render", "--scene", s(&sh.scene), "--checkpoint", s(&bad), "--out", s(dir.path())], 2);
    assert!(err.contains("dims.d_att"), "{err}");
}

#[test]
fn eval_identity_checkpoint_scores_zero_everywhere() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    let ck = identity_checkpoint(dir.path());
    let mut args = vec!["eval", "--scene", s(&sh.scene), "--checkpoint", s(&ck), "--out", s(dir.path())];
    for e in facedit_core::scene::EXPRESSIONS {
        args.extend(["--expression", e]);
    }
    ok(&args);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert_eq!(r[2], "0.0", "{}", r[0]);
        assert_eq!(r[1], "32");
    }
}

#[test]
fn sweep_with_one_lambda_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sweep", "--scene", s(&shared().scene), "--steps", "20", "--lambda", "0.1", "--out", s(dir.path())]);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(!dir.path().join("sweep_stats.json").exists());
}

#[test]
fn sweep_grid_reports_rank_statistics() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sweep", "--scene", s(&shared().scene), "--steps", "20", "--lambda", "0.05,0.2,0.2", "--out", s(dir.path())]);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[2], lines[3]);
    let stats = manifest(&dir.path().join("sweep_stats.json"));
    assert!(stats["spearman_l_id"].is_f64());
}

#[test]
fn compose_without_checkpoints_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["compose", "--scene", s(&shared().scene), "--out", s(dir.path())], 2);
    assert!(err.contains("empty composition"), "{err}");
}

#[test]
fn compose_fires_both_rules() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "compose",
        "--scene",
        s(&sh.scene),
        "--checkpoint",
        s(&checkpoint("close_eyes")),
        "--checkpoint",
        s(&checkpoint("raise_brow")),
        "--out",
        s(dir.path()),
    ]);
    let summary = manifest(&dir.path().join("compose.json"));
    assert_eq!(summary["au_fired"]["AU_43"], true);
    assert_eq!(summary["au_fired"]["AU_02"], true);
    assert_eq!(summary["order"], serde_json::json!(["close_eyes", "raise_brow"]));
}

#[test]
fn commands_leave_inputs_untouched() {
    let sh = shared();
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint("smile");
    let before = std::fs::read(&ck).unwrap();
    ok(&["eval", "--scene", s(&sh.scene), "--checkpoint", s(&ck), "--batch", "4", "--out", s(dir.path())]);
    assert_eq!(std::fs::read(&ck).unwrap(), before);
    ok(&["verify", s(&sh.scene.join("init.manifest.json"))]);
}
