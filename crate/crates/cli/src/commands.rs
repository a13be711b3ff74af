use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use facedit_core::mapper::{compose_edits, DualMapper, LatentState};
use facedit_core::mesh::{export_obj, Mesh};
use facedit_core::pipeline::{
    default_lambda_grid, eval_states, evaluate, history_csv, mesh_for, metrics_csv, sweep_csv, sweep_rows,
    sweep_statistics, train_expression, Checkpoint, OptimConfig,
};
use facedit_core::scene::{self, build_desk, DeskConfig, Scene};
use facedit_core::surrogate::{rasterize_view, Viewport};

use crate::manifest::RunManifest;
use crate::{CliError, ComposeArgs, EvalArgs, FitArgs, InitArgs, OutArgs, RenderArgs, SweepArgs, TrainArgs, VerifyArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Creates the output directory and refuses to clobber any of `names`
/// unless `--force` was given. Returns the full paths.
fn prepare_out(out: &OutArgs, names: &[String]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&out.out).map_err(|e| CliError::io(&out.out, e))?;
    let paths: Vec<PathBuf> = names.iter().map(|n| out.out.join(n)).collect();
    let existing: Vec<PathBuf> = paths.iter().filter(|p| p.exists()).cloned().collect();
    if !existing.is_empty() && !out.force {
        return Err(CliError::Refused(existing));
    }
    Ok(paths)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn finish(
    command: &str,
    config: Option<&Path>,
    seed: u64,
    out: &OutArgs,
    artifacts: &[PathBuf],
    manifest_path: &Path,
    start: Instant,
) -> Result<()> {
    let m = RunManifest::new(command, config, seed, &out.out, artifacts, start.elapsed())?;
    m.save(manifest_path)?;
    println!("wrote {} artifacts and {}", artifacts.len(), manifest_path.display());
    Ok(())
}

fn resolve_config(t: &TrainArgs) -> Result<OptimConfig> {
    let mut cfg = match &t.config {
        Some(p) => OptimConfig::load(p)?,
        None => OptimConfig::default(),
    };
    if let Some(e) = &t.expression {
        cfg.expression_name = e.clone();
    }
    if let Some(s) = t.seed {
        cfg.seed = s;
    }
    if t.no_ref {
        cfg.use_reference = false;
    }
    if let Some(g) = t.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = t.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(scene: &Scene, path: &Path) -> Result<(Checkpoint, DualMapper)> {
    let ck = Checkpoint::load(path)?;
    if ck.dims != scene.dims() {
        return Err(facedit_core::Error::Dimension {
            what: format!("checkpoint {}", path.display()),
            expected: format!("{:?}", scene.dims()),
            actual: format!("{:?}", ck.dims),
        }
        .into());
    }
    ck.check_scene(scene)?;
    let mapper = ck.mapper()?;
    Ok((ck, mapper))
}

fn latent_draw(scene: &Scene, seed: u64) -> LatentState {
    eval_states(scene, &OptimConfig::default(), 1, seed).remove(0)
}

/// Writes `{stem}.obj` and `{stem}.pgm` for each mesh, all under one viewport.
fn write_views(meshes: &[(&Mesh, &PathBuf, &PathBuf)], size: usize) -> Result<()> {
    let view = Viewport::fit(meshes[0].0, 0.05);
    for (mesh, obj, pgm) in meshes {
        export_obj(mesh, obj)?;
        write(pgm, rasterize_view(mesh, size, size, view).to_pnm_bytes())?;
    }
    Ok(())
}

pub fn init(a: &InitArgs) -> Result<()> {
    let start = Instant::now();
    let mut desk = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            facedit_core::error::parse_json::<DeskConfig>(&text, &p.display().to_string())?
        }
        None => DeskConfig::default(),
    };
    if let Some(s) = a.seed {
        desk.seed = s;
    }
    let names: Vec<String> = [scene::MODEL_FILE, scene::FIXTURE_FILE, scene::RULES_FILE, scene::SURROGATES_FILE, "desk.json", "init.manifest.json"]
        .map(String::from)
        .to_vec();
    let paths = prepare_out(&a.out, &names)?;
    let sc = build_desk(&desk)?;
    let mut artifacts = sc.save_dir(&a.out.out)?;
    write(&paths[4], serde_json::to_string_pretty(&desk).expect("desk config serializes"))?;
    artifacts.push(paths[4].clone());
    println!("scene: {} vertices, {} expression codes, d_e = {}", sc.model.n_vertices(), sc.model.n_expression(), sc.subspace.dim());
    finish("init", a.config.as_deref(), desk.seed, &a.out, &artifacts, &paths[5], start)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_config(&a.train)?;
    let name = &cfg.expression_name;
    let names = vec![
        format!("{name}.checkpoint.json"),
        format!("{name}.history.csv"),
        format!("{name}.config.json"),
        format!("fit-{name}.manifest.json"),
    ];
    let paths = prepare_out(&a.out, &names)?;
    let sc = Scene::load_dir(&a.train.scene)?;
    let mapper = DualMapper::new(sc.dims(), cfg.seed)?;
    let outcome = train_expression(&sc, &cfg, mapper)?;
    for r in outcome.history.iter().filter(|r| r.step % 50 == 0 || r.step + 1 == cfg.steps) {
        println!(
            "step {:>4}  L_total {:+.6}  L_clip {:+.6}  L_m {:.6}  L_id {:.6}",
            r.step, r.l_total, r.l_clip, r.l_m, r.l_id
        );
    }
    println!("cosine {:.4} -> {:.4}", outcome.initial_cosine, outcome.final_cosine);
    Checkpoint::from_outcome(&sc, &cfg, &outcome).save(&paths[0])?;
    write(&paths[1], history_csv(&outcome.history))?;
    write(&paths[2], cfg.to_json())?;
    finish("fit", a.train.config.as_deref(), cfg.seed, &a.out, &paths[..3], &paths[3], start)
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let start = Instant::now();
    let names: Vec<String> =
        ["before.obj", "after.obj", "before.pgm", "after.pgm", "render.manifest.json"].map(String::from).to_vec();
    let paths = prepare_out(&a.out, &names)?;
    let sc = Scene::load_dir(&a.scene)?;
    let (_, mapper) = load_checkpoint(&sc, &a.checkpoint)?;
    let state = latent_draw(&sc, a.seed);
    let before = mesh_for(&sc, &state)?;
    let after = mesh_for(&sc, &mapper.apply_edit(&state)?)?;
    write_views(&[(&before, &paths[0], &paths[2]), (&after, &paths[1], &paths[3])], a.size)?;
    finish("render", None, a.seed, &a.out, &paths[..4], &paths[4], start)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let paths = prepare_out(&a.out, &["metrics.csv".into(), "eval.manifest.json".into()])?;
    let sc = Scene::load_dir(&a.scene)?;
    let mut mappers = Vec::new();
    let mut expressions = a.expression.clone();
    for p in &a.checkpoint {
        let (ck, m) = load_checkpoint(&sc, p)?;
        if a.expression.is_empty() && !expressions.contains(&ck.expression) {
            expressions.push(ck.expression.clone());
        }
        mappers.push(m);
    }
    let refs: Vec<&DualMapper> = mappers.iter().collect();
    let mut reports = Vec::new();
    for e in &expressions {
        let r = evaluate(&sc, &refs, e, a.batch, a.seed)?;
        println!(
            "{e:<12} AU accuracy {:.3}  margin {:.3}  ID loss {:.5}  CLIP score {:.2}",
            r.au_accuracy, r.au_margin, r.id_loss, r.clip_score
        );
        reports.push(r);
    }
    write(&paths[0], metrics_csv(&reports))?;
    finish("eval", None, a.seed, &a.out, &paths[..1], &paths[1], start)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_config(&a.train)?;
    let lambdas = if a.lambda.is_empty() { default_lambda_grid() } else { a.lambda.clone() };
    let mut names = vec!["sweep.csv".to_string(), "sweep.manifest.json".to_string()];
    if lambdas.len() >= 2 {
        names.insert(1, "sweep_stats.json".into());
    }
    let paths = prepare_out(&a.out, &names)?;
    let sc = Scene::load_dir(&a.train.scene)?;
    let rows = sweep_rows(&sc, &cfg, &lambdas, a.batch, a.eval_seed)?;
    write(&paths[0], sweep_csv(&rows))?;
    for r in &rows {
        println!("lambda_id {:.3}  L_ID {:.6}  AU accuracy {:.3}  margin {:.3}", r.lambda_id, r.final_l_id, r.au_accuracy, r.au_margin);
    }
    let n = paths.len() - 1;
    if n == 2 {
        let report = sweep_statistics(&cfg.expression_name, rows)?;
        println!(
            "spearman: L_ID {:.3}  AU accuracy {:.3}  AU margin {:.3}",
            report.spearman_l_id, report.spearman_au, report.spearman_au_margin
        );
        write(&paths[1], serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    finish("sweep", a.train.config.as_deref(), cfg.seed, &a.out, &paths[..n], &paths[n], start)
}

pub fn compose(a: &ComposeArgs) -> Result<()> {
    let start = Instant::now();
    if a.checkpoint.is_empty() {
        return Err(CliError::EmptyComposition);
    }
    let names: Vec<String> = ["before.obj", "composed.obj", "before.pgm", "composed.pgm", "compose.json", "compose.manifest.json"]
        .map(String::from)
        .to_vec();
    let paths = prepare_out(&a.out, &names)?;
    let sc = Scene::load_dir(&a.scene)?;
    let mut mappers = Vec::new();
    let mut order = Vec::new();
    for p in &a.checkpoint {
        let (ck, m) = load_checkpoint(&sc, p)?;
        order.push(ck.expression);
        mappers.push(m);
    }
    let refs: Vec<&DualMapper> = mappers.iter().collect();
    let state = latent_draw(&sc, a.seed);
    let before = mesh_for(&sc, &state)?;
    let composed = mesh_for(&sc, &compose_edits(&refs, &state)?)?;
    write_views(&[(&before, &paths[0], &paths[2]), (&composed, &paths[1], &paths[3])], a.size)?;

    let template = sc.model.template_mesh();
    let labels = sc.model.region_labels();
    let mut fired = BTreeMap::new();
    for rule in &sc.rules.rules {
        fired.insert(rule.au_id.clone(), facedit_core::eval::au_fire(rule, &composed, &template, labels)?);
    }
    let mut present = BTreeMap::new();
    for spec in &sc.specs {
        present.insert(spec.name.clone(), spec.present(&sc.rules, &composed, &template, labels)?);
    }
    let on: Vec<&str> = fired.iter().filter(|(_, &v)| v).map(|(k, _)| k.as_str()).collect();
    println!("applied {} -> AUs firing: {}", order.join(" then "), if on.is_empty() { "none".into() } else { on.join(" ") });
    let summary = serde_json::json!({ "order": order, "seed": a.seed, "au_fired": fired, "expressions_present": present });
    write(&paths[4], serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    finish("compose", None, a.seed, &a.out, &paths[..5], &paths[5], start)
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let bad = m.mismatches(base)?;
    if !bad.is_empty() {
        return Err(CliError::Checksum(bad));
    }
    println!("{} artifacts verified", m.artifacts.len());
    Ok(())
}
