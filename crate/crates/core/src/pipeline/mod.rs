//! Training, evaluation, checkpoints and the loss-weight sweep.

mod config;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::OptimConfig;
pub use train::{
    batch_loss, batch_objective, compute_losses, draw_states, eval_states, evaluate, has_zero_final_layers, mean_cosine, mesh_for,
    prepare_sample, render_embedding, start_alpha, train_expression, training_pool, EvalReport, LossReport, Sample,
    TrainOutcome,
};

use crate::autodiff::{NamedTensor, ParamSet};
use crate::error::{Error, Result};
use crate::mapper::{DualMapper, MapperDims};
use crate::scene::{Scene, SurrogateBundle};

pub const CHECKPOINT_FORMAT: &str = "facedit-mapper/1";

/// A trained mapper together with everything needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub expression: String,
    pub seed: u64,
    pub steps: usize,
    pub config: OptimConfig,
    pub dims: MapperDims,
    pub tensors: Vec<NamedTensor>,
    pub final_losses: LossReport,
    pub initial_cosine: f64,
    pub final_cosine: f64,
    pub surrogates: SurrogateBundle,
}

impl Checkpoint {
    pub fn from_outcome(scene: &Scene, cfg: &OptimConfig, outcome: &TrainOutcome) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            expression: cfg.expression_name.clone(),
            seed: cfg.seed,
            steps: cfg.steps,
            config: cfg.clone(),
            dims: outcome.mapper.dims(),
            tensors: outcome.mapper.params().to_named(),
            final_losses: outcome.final_losses().clone(),
            initial_cosine: outcome.initial_cosine,
            final_cosine: outcome.final_cosine,
            surrogates: scene.surrogates.clone(),
        }
    }

    pub fn mapper(&self) -> Result<DualMapper> {
        DualMapper::from_params(self.dims, ParamSet::from_named(&self.tensors)?)
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let c: Checkpoint = crate::error::parse_json(text, source_name)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(
                "checkpoint",
                format!("format `{}`, expected `{CHECKPOINT_FORMAT}`", c.format),
            ));
        }
        c.mapper()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Rejects a checkpoint trained against different frozen networks.
    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        if self.surrogates != scene.surrogates {
            return Err(Error::invalid(
                format!("checkpoint for `{}`", self.expression),
                "frozen surrogate networks differ from the scene",
            ));
        }
        Ok(())
    }
}

pub const HISTORY_HEADER: [&str; 7] = ["step", "L_CLIP", "L_M", "L_ID", "L_Total", "cosine", "id_cosine"];

pub fn history_csv(history: &[LossReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    for r in history {
        w.write_record([
            r.step.to_string(),
            format!("{:?}", r.l_clip),
            format!("{:?}", r.l_m),
            format!("{:?}", r.l_id),
            format!("{:?}", r.l_total),
            format!("{:?}", r.cosine),
            format!("{:?}", r.id_cosine),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn parse_history_csv(text: &str, source_name: &str) -> Result<Vec<LossReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let parse_err = |line: u64, message: String| Error::Parse {
        source_name: source_name.to_string(),
        location: format!("line {line}"),
        message,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(HISTORY_HEADER) {
        return Err(parse_err(1, format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| parse_err(line, format!("bad number `{}` in {}", &rec[i], HISTORY_HEADER[i])))
        };
        out.push(LossReport {
            step: rec[0].parse().map_err(|_| parse_err(line, format!("bad step `{}`", &rec[0])))?,
            l_clip: f(1)?,
            l_m: f(2)?,
            l_id: f(3)?,
            l_total: f(4)?,
            cosine: f(5)?,
            id_cosine: f(6)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_id: f64,
    pub final_l_id: f64,
    pub au_accuracy: f64,
    pub au_margin: f64,
    pub id_loss: f64,
    pub final_cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub expression: String,
    pub rows: Vec<SweepRow>,
    /// Rank correlation of λ_ID with the final training `L_ID`.
    pub spearman_l_id: f64,
    /// Rank correlation of λ_ID with AU accuracy. 0 when accuracy is constant.
    pub spearman_au: f64,
    /// Rank correlation of λ_ID with the mean AU margin.
    pub spearman_au_margin: f64,
}

/// Trains one mapper per `λ_ID` value in parallel and evaluates each.
/// Rows come back in the order of `lambda_ids`.
pub fn sweep_rows(
    scene: &Scene,
    base: &OptimConfig,
    lambda_ids: &[f64],
    eval_batch: usize,
    eval_seed: u64,
) -> Result<Vec<SweepRow>> {
    if lambda_ids.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda_id value".into()));
    }
    let results: Vec<Result<SweepRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = lambda_ids
            .iter()
            .map(|&l| {
                s.spawn(move || -> Result<SweepRow> {
                    let cfg = OptimConfig {
                        lambda_id: l,
                        ..base.clone()
                    };
                    let mapper = DualMapper::new(scene.dims(), cfg.seed)?;
                    let out = train_expression(scene, &cfg, mapper)?;
                    let ev = evaluate(scene, &[&out.mapper], &cfg.expression_name, eval_batch, eval_seed)?;
                    Ok(SweepRow {
                        lambda_id: l,
                        final_l_id: out.final_losses().l_id,
                        au_accuracy: ev.au_accuracy,
                        au_margin: ev.au_margin,
                        id_loss: ev.id_loss,
                        final_cosine: out.final_cosine,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// Rank statistics over sweep rows; needs at least two rows.
pub fn sweep_statistics(expression: &str, rows: Vec<SweepRow>) -> Result<SweepReport> {
    if rows.len() < 2 {
        return Err(Error::Config("rank statistics need at least two lambda_id values".into()));
    }
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let lambdas = col(|r| r.lambda_id);
    Ok(SweepReport {
        expression: expression.to_string(),
        spearman_l_id: crate::eval::spearman(&lambdas, &col(|r| r.final_l_id))?,
        spearman_au: crate::eval::spearman(&lambdas, &col(|r| r.au_accuracy))?,
        spearman_au_margin: crate::eval::spearman(&lambdas, &col(|r| r.au_margin))?,
        rows,
    })
}

pub fn sensitivity_sweep(
    scene: &Scene,
    base: &OptimConfig,
    lambda_ids: &[f64],
    eval_batch: usize,
    eval_seed: u64,
) -> Result<SweepReport> {
    if lambda_ids.len() < 2 {
        return Err(Error::Config("rank statistics need at least two lambda_id values".into()));
    }
    let rows = sweep_rows(scene, base, lambda_ids, eval_batch, eval_seed)?;
    sweep_statistics(&base.expression_name, rows)
}

pub const SWEEP_HEADER: [&str; 6] = ["lambda_id", "final_L_ID", "au_accuracy", "au_margin", "id_loss", "final_cosine"];

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(
            [r.lambda_id, r.final_l_id, r.au_accuracy, r.au_margin, r.id_loss, r.final_cosine].map(|v| format!("{v:?}")),
        )
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub const METRICS_HEADER: [&str; 6] = ["expression", "batch", "au_accuracy", "au_margin", "id_loss", "clip_score"];

pub fn metrics_csv(reports: &[EvalReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("in-memory write");
    for r in reports {
        w.write_record([
            r.expression.clone(),
            r.batch.to_string(),
            format!("{:?}", r.au_accuracy),
            format!("{:?}", r.au_margin),
            format!("{:?}", r.id_loss),
            format!("{:?}", r.clip_score),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// The λ_ID grid 0.05, 0.10, …, 0.30.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30]
}
