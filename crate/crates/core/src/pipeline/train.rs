use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Gradients, Tape, Var};
use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::mapper::{DualMapper, LatentState};
use crate::mesh::{FlameParams, Mesh};
use crate::pipeline::OptimConfig;
use crate::rng::{self, gaussian, gaussian_tensor, streams};
use crate::scene::Scene;
use crate::tensor::Tensor;

/// Per-step loss terms, averaged over the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub l_clip: f64,
    pub l_m: f64,
    pub l_id: f64,
    pub l_total: f64,
    pub cosine: f64,
    pub id_cosine: f64,
}

impl LossReport {
    /// Weighted sum of the three terms under `cfg`.
    pub fn weighted_total(&self, cfg: &OptimConfig) -> f64 {
        cfg.lambda_clip * self.l_clip + cfg.lambda_m * self.l_m + cfg.lambda_id * self.l_id
    }
}

/// Losses for one edit, without a tape.
pub fn compute_losses(
    state: &LatentState,
    edited: &LatentState,
    e_edited: &Embedding,
    e_target: &Embedding,
    id_before: &Embedding,
    id_after: &Embedding,
    cfg: &OptimConfig,
) -> Result<LossReport> {
    if state.w.shape() != edited.w.shape() || state.alpha.len() != edited.alpha.len() {
        return Err(Error::invalid("edited state", "shape differs from the original"));
    }
    let dw = edited.w.sub(&state.w)?.norm();
    let da: f64 = state
        .alpha
        .iter()
        .zip(&edited.alpha)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let cos = cosine(e_edited, e_target)?;
    let id_cos = cosine(id_before, id_after)?;
    let mut r = LossReport {
        step: 0,
        l_clip: -cos,
        l_m: dw + da,
        l_id: 1.0 - id_cos,
        l_total: 0.0,
        cosine: cos,
        id_cosine: id_cos,
    };
    r.l_total = r.weighted_total(cfg);
    Ok(r)
}

/// One latent draw with its fixed optimization target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: LatentState,
    /// Embedding of the unedited render.
    pub e_initial: Embedding,
    /// Augmented target built from `e_initial` and the text embedding.
    pub e_target: Embedding,
    pub id_before: Embedding,
}

pub fn render_embedding(scene: &Scene, state: &LatentState) -> Result<Embedding> {
    let mesh = mesh_for(scene, state)?;
    scene
        .generator()
        .synth_embedding(&state.w, &mesh, &scene.model.template_mesh())
}

pub fn mesh_for(scene: &Scene, state: &LatentState) -> Result<Mesh> {
    scene
        .model
        .generate_mesh(&FlameParams::with_alpha(&scene.model, state.alpha.clone()))
}

/// Draws `count` latent states: `w ~ N(0, latent_scale²)` and
/// `α = base + N(0, alpha_jitter²)`.
pub fn draw_states(scene: &Scene, cfg: &OptimConfig, base: &[f64], seed: u64, stream: u64, count: usize) -> Vec<LatentState> {
    let d = scene.dims();
    let mut r = rng::stream(seed, stream);
    (0..count)
        .map(|_| {
            let w = gaussian_tensor(&mut r, d.n_w, d.d_w, cfg.latent_scale);
            let alpha = base.iter().map(|b| b + cfg.alpha_jitter * gaussian(&mut r)).collect();
            LatentState { w, alpha }
        })
        .collect()
}

/// The α that training draws are centred on.
pub fn start_alpha(scene: &Scene, cfg: &OptimConfig) -> Result<Vec<f64>> {
    let n = scene.model.n_expression();
    if !cfg.use_reference {
        return Ok(vec![0.0; n]);
    }
    let code = scene.fixture.expression_code(&cfg.reference_key())?;
    if code.len() != n {
        return Err(Error::dim(format!("expression code `{}`", cfg.reference_key()), n, code.len()));
    }
    Ok(code.to_vec())
}

pub fn prepare_sample(scene: &Scene, cfg: &OptimConfig, text: &Embedding, state: LatentState) -> Result<Sample> {
    let e_initial = render_embedding(scene, &state)?;
    let e_target = scene
        .subspace
        .target_embedding(&e_initial, text, cfg.gamma, cfg.basis_mode)?;
    let id_before = scene.identity().identity_embedding(&state.w)?;
    Ok(Sample {
        state,
        e_initial,
        e_target,
        id_before,
    })
}

/// The training pool for `cfg`.
pub fn training_pool(scene: &Scene, cfg: &OptimConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let text = scene.fixture.embedding(&cfg.target_key())?;
    let base = start_alpha(scene, cfg)?;
    draw_states(scene, cfg, &base, cfg.seed, streams::TRAIN_POOL, cfg.pool_size)
        .into_iter()
        .map(|s| prepare_sample(scene, cfg, &text, s))
        .collect()
}

/// Loss nodes of one recorded sample.
struct SampleTerms {
    clip: Var,
    m: Var,
    id: Var,
}

fn record_sample(tape: &mut Tape, scene: &Scene, mapper: &DualMapper, bound: &crate::mapper::BoundMapper, sample: &Sample) -> Result<SampleTerms> {
    let model = &scene.model;
    let w = tape.constant(sample.state.w.clone());
    let alpha = tape.constant(Tensor::row_vector(sample.state.alpha.clone()));
    let out = mapper.record(tape, bound, w, alpha)?;
    let w_edit = tape.add(w, out.delta_w)?;
    let alpha_edit = tape.add(alpha, out.delta_alpha)?;
    let theta = vec![0.0; model.n_shape()];
    let beta = vec![0.0; model.n_pose()];
    let verts = model.generate_mesh_on_tape(tape, &theta, &beta, alpha_edit)?;
    let e = scene.generator().record(tape, w_edit, verts, model.template())?;
    let target = tape.constant(Tensor::row_vector(sample.e_target.as_slice().to_vec()));
    let cos = tape.cosine(e, target)?;
    let clip = tape.neg(cos);
    let nw = tape.l2norm(out.delta_w);
    let na = tape.l2norm(out.delta_alpha);
    let m = tape.add(nw, na)?;
    let id_after = scene.identity().record(tape, w_edit)?;
    let id_before = tape.constant(Tensor::row_vector(sample.id_before.as_slice().to_vec()));
    let id_cos = tape.cosine(id_after, id_before)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let id = tape.sub(one, id_cos)?;
    Ok(SampleTerms { clip, m, id })
}

fn record_batch(scene: &Scene, cfg: &OptimConfig, mapper: &DualMapper, batch: &[&Sample]) -> Result<(Tape, Var, LossReport)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    let mut tape = Tape::new();
    let bound = mapper.bind(&mut tape);
    let mut clips = Vec::with_capacity(batch.len());
    let mut ms = Vec::with_capacity(batch.len());
    let mut ids = Vec::with_capacity(batch.len());
    for s in batch {
        let t = record_sample(&mut tape, scene, mapper, &bound, s)?;
        clips.push(t.clip);
        ms.push(t.m);
        ids.push(t.id);
    }
    let inv = 1.0 / batch.len() as f64;
    let mean = |tape: &mut Tape, parts: &[Var]| -> Result<Var> {
        let stacked = tape.concat_rows(parts)?;
        let s = tape.sum(stacked);
        Ok(tape.scale(s, inv))
    };
    let l_clip = mean(&mut tape, &clips)?;
    let l_m = mean(&mut tape, &ms)?;
    let l_id = mean(&mut tape, &ids)?;
    let a = tape.scale(l_clip, cfg.lambda_clip);
    let b = tape.scale(l_m, cfg.lambda_m);
    let c = tape.scale(l_id, cfg.lambda_id);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    let report = LossReport {
        step: 0,
        l_clip: tape.scalar(l_clip),
        l_m: tape.scalar(l_m),
        l_id: tape.scalar(l_id),
        l_total: tape.scalar(total),
        cosine: -tape.scalar(l_clip),
        id_cosine: 1.0 - tape.scalar(l_id),
    };
    Ok((tape, total, report))
}

/// Batch-mean loss terms without a backward pass.
pub fn batch_objective(scene: &Scene, cfg: &OptimConfig, mapper: &DualMapper, batch: &[&Sample]) -> Result<LossReport> {
    Ok(record_batch(scene, cfg, mapper, batch)?.2)
}

/// Batch-mean loss and its gradient with respect to every mapper parameter.
pub fn batch_loss(scene: &Scene, cfg: &OptimConfig, mapper: &DualMapper, batch: &[&Sample]) -> Result<(LossReport, Gradients)> {
    let (tape, total, report) = record_batch(scene, cfg, mapper, batch)?;
    let grads = tape.backward(total)?;
    Ok((report, grads))
}

/// Mean cosine between edited renders and their targets over `samples`.
pub fn mean_cosine(scene: &Scene, mapper: &DualMapper, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let edited = mapper.apply_edit(&s.state)?;
        total += cosine(&render_embedding(scene, &edited)?, &s.e_target)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mapper: DualMapper,
    pub history: Vec<LossReport>,
    /// Pool-mean cosine to the targets before the first update.
    pub initial_cosine: f64,
    /// Pool-mean cosine to the targets after the last update.
    pub final_cosine: f64,
}

impl TrainOutcome {
    pub fn final_losses(&self) -> &LossReport {
        self.history.last().expect("at least one step")
    }

    /// Exponential moving average of `L_Total` made non-increasing by a
    /// running minimum.
    pub fn smoothed_trend(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.history.len());
        let mut ema = None;
        let mut best = f64::INFINITY;
        for r in &self.history {
            let e = match ema {
                None => r.l_total,
                Some(prev) => 0.9 * prev + 0.1 * r.l_total,
            };
            ema = Some(e);
            best = f64::min(best, e);
            out.push(best);
        }
        out
    }
}

pub fn has_zero_final_layers(mapper: &DualMapper) -> bool {
    ["texture.mlp.w2", "texture.mlp.b2", "emotion.mlp.w2", "emotion.mlp.b2"]
        .iter()
        .all(|n| {
            let id = mapper.param_id(n).expect("final layer present");
            mapper.params().get(id).data.iter().all(|&v| v == 0.0)
        })
}

/// Trains one mapper for one expression with Adam over a cycled pool.
pub fn train_expression(scene: &Scene, cfg: &OptimConfig, mapper: DualMapper) -> Result<TrainOutcome> {
    cfg.validate()?;
    if mapper.dims() != scene.dims() {
        return Err(Error::invalid("mapper", "dimensions differ from the scene"));
    }
    if !has_zero_final_layers(&mapper) {
        return Err(Error::invalid("mapper", "training must start from zero final layers"));
    }
    let pool = training_pool(scene, cfg)?;
    let initial_cosine = mean_cosine(scene, &mapper, &pool)?;
    let mut mapper = mapper;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        mapper.params(),
    );
    let mut history = Vec::with_capacity(cfg.steps);
    let b = cfg.samples_per_step;
    for step in 0..cfg.steps {
        let batch: Vec<&Sample> = (0..b).map(|i| &pool[(step * b + i) % pool.len()]).collect();
        let (mut report, grads) = batch_loss(scene, cfg, &mapper, &batch)?;
        report.step = step;
        for (term, v) in [
            ("L_CLIP", report.l_clip),
            ("L_M", report.l_m),
            ("L_ID", report.l_id),
            ("L_Total", report.l_total),
        ] {
            if !v.is_finite() {
                return Err(Error::NumericAbort {
                    step,
                    term: term.to_string(),
                });
            }
        }
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NumericAbort {
                step,
                term: format!("gradient of {}", mapper.params().name(id)),
            });
        }
        history.push(report);
        opt.step(mapper.params_mut(), &grads)?;
    }
    let final_cosine = mean_cosine(scene, &mapper, &pool)?;
    Ok(TrainOutcome {
        mapper,
        history,
        initial_cosine,
        final_cosine,
    })
}

/// Metrics of a mapper on a batch of neutral faces (α jitter around zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub expression: String,
    pub batch: usize,
    pub au_accuracy: f64,
    /// Mean over the batch of the smallest displacement-to-threshold ratio.
    pub au_margin: f64,
    pub id_loss: f64,
    pub clip_score: f64,
}

pub fn eval_states(scene: &Scene, cfg: &OptimConfig, batch: usize, seed: u64) -> Vec<LatentState> {
    let base = vec![0.0; scene.model.n_expression()];
    draw_states(scene, cfg, &base, seed, streams::EVAL_BATCH, batch)
}

pub fn evaluate(scene: &Scene, mappers: &[&DualMapper], expression: &str, batch: usize, seed: u64) -> Result<EvalReport> {
    if batch == 0 {
        return Err(Error::invalid("eval batch", "empty"));
    }
    let spec = crate::eval::find_spec(&scene.specs, expression)?;
    let text = scene.fixture.embedding(&crate::scene::text_key(expression))?;
    let template = scene.model.template_mesh();
    let labels = scene.model.region_labels();
    let states = eval_states(scene, &OptimConfig::default(), batch, seed);
    let mut meshes = Vec::with_capacity(batch);
    let mut margin = 0.0;
    let mut id_loss = 0.0;
    let mut clip = 0.0;
    for s in &states {
        let edited = crate::mapper::compose_edits(mappers, s)?;
        let mesh = mesh_for(scene, &edited)?;
        margin += spec.margin(&scene.rules, &mesh, &template, labels)?;
        let before = scene.identity().identity_embedding(&s.w)?;
        let after = scene.identity().identity_embedding(&edited.w)?;
        id_loss += 1.0 - cosine(&before, &after)?;
        let e = scene.generator().synth_embedding(&edited.w, &mesh, &template)?;
        clip += crate::eval::clip_score(&e, &text)?;
        meshes.push(mesh);
    }
    let n = batch as f64;
    Ok(EvalReport {
        expression: expression.to_string(),
        batch,
        au_accuracy: crate::eval::au_accuracy(spec, &scene.rules, &meshes, &template, labels)?,
        au_margin: margin / n,
        id_loss: id_loss / n,
        clip_score: clip / n,
    })
}
