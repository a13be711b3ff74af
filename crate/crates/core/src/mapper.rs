//! Cross-attention mappers that predict residual edits of the latent state.
//!
//! The texture branch lifts each expression coefficient into a query token
//! and attends over the latent tokens. The emotion branch does the reverse:
//! latent tokens query the lifted coefficient tokens. Both branches mean-pool
//! the attended values over queries and pass them through a tanh MLP.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, streams, uniform_tensor};
use crate::tensor::Tensor;

/// Texture latent tokens plus expression coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// `n_w × d_w`
    pub w: Tensor,
    pub alpha: Vec<f64>,
}

impl LatentState {
    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.alpha.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapperDims {
    pub n_w: usize,
    pub d_w: usize,
    pub n_alpha: usize,
    pub d_att: usize,
    pub hidden: usize,
}

impl Default for MapperDims {
    fn default() -> Self {
        MapperDims {
            n_w: 6,
            d_w: 32,
            n_alpha: 8,
            d_att: 16,
            hidden: 32,
        }
    }
}

pub const INIT_BOUND: f64 = 0.05;

/// Names and shapes of every trainable tensor, in storage order.
fn layout(d: &MapperDims) -> [(&'static str, usize, usize); 19] {
    [
        ("texture.lift", d.n_alpha, d.d_att),
        ("texture.pos", d.n_alpha, d.d_att),
        ("texture.w_q", d.d_att, d.d_att),
        ("texture.w_k", d.d_w, d.d_att),
        ("texture.w_v", d.d_w, d.d_att),
        ("texture.mlp.w1", d.d_att, d.hidden),
        ("texture.mlp.b1", 1, d.hidden),
        ("texture.mlp.w2", d.hidden, d.d_w),
        ("texture.mlp.b2", 1, d.d_w),
        ("texture.gain", d.n_w, 1),
        ("emotion.lift", d.n_alpha, d.d_att),
        ("emotion.pos", d.n_alpha, d.d_att),
        ("emotion.w_q", d.d_w, d.d_att),
        ("emotion.w_k", d.d_att, d.d_att),
        ("emotion.w_v", d.d_att, d.d_att),
        ("emotion.mlp.w1", d.d_att, d.hidden),
        ("emotion.mlp.b1", 1, d.hidden),
        ("emotion.mlp.w2", d.hidden, d.n_alpha),
        ("emotion.mlp.b2", 1, d.n_alpha),
    ]
}

const FINAL_LAYERS: [&str; 4] = [
    "texture.mlp.w2",
    "texture.mlp.b2",
    "emotion.mlp.w2",
    "emotion.mlp.b2",
];

mod slot {
    pub const T_LIFT: usize = 0;
    pub const T_POS: usize = 1;
    pub const T_Q: usize = 2;
    pub const T_K: usize = 3;
    pub const T_V: usize = 4;
    pub const T_W1: usize = 5;
    pub const T_B1: usize = 6;
    pub const T_W2: usize = 7;
    pub const T_B2: usize = 8;
    pub const T_GAIN: usize = 9;
    pub const E_LIFT: usize = 10;
    pub const E_POS: usize = 11;
    pub const E_Q: usize = 12;
    pub const E_K: usize = 13;
    pub const E_V: usize = 14;
    pub const E_W1: usize = 15;
    pub const E_B1: usize = 16;
    pub const E_W2: usize = 17;
    pub const E_B2: usize = 18;
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualMapper {
    dims: MapperDims,
    params: ParamSet,
}

/// Parameter nodes of one mapper recorded on a tape.
pub struct BoundMapper {
    vars: Vec<Var>,
}

impl BoundMapper {
    fn get(&self, slot: usize) -> Var {
        self.vars[slot]
    }
}

/// Intermediate results of one forward pass.
pub struct MapperOutput {
    pub delta_w: Var,
    pub delta_alpha: Var,
    pub texture_attention: Var,
    pub emotion_attention: Var,
}

impl DualMapper {
    /// Seeded initialization: uniform weights, zero final layers, unit gain.
    pub fn new(dims: MapperDims, seed: u64) -> Result<Self> {
        for (what, v) in [
            ("n_w", dims.n_w),
            ("d_w", dims.d_w),
            ("n_alpha", dims.n_alpha),
            ("d_att", dims.d_att),
            ("hidden", dims.hidden),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("mapper dimension {what}"), "must be positive"));
            }
        }
        let mut rng = rng::stream(seed, streams::MAPPER_INIT);
        let mut params = ParamSet::new();
        for (name, r, c) in layout(&dims) {
            let t = if FINAL_LAYERS.contains(&name) {
                Tensor::zeros(r, c)
            } else if name == "texture.gain" {
                Tensor::filled(r, c, 1.0)
            } else {
                uniform_tensor(&mut rng, r, c, INIT_BOUND)
            };
            params.push(name, t);
        }
        Ok(DualMapper { dims, params })
    }

    /// Rebuilds a mapper from stored tensors, checking names and shapes.
    pub fn from_params(dims: MapperDims, params: ParamSet) -> Result<Self> {
        let expected = layout(&dims);
        if params.len() != expected.len() {
            return Err(Error::dim("mapper tensor count", expected.len(), params.len()));
        }
        for ((id, name, t), (ename, r, c)) in params.iter().zip(expected) {
            if name != ename {
                return Err(Error::invalid(
                    format!("tensors[{}]", id.0),
                    format!("expected `{ename}`, found `{name}`"),
                ));
            }
            if t.shape() != (r, c) {
                return Err(Error::dim(name, format!("{r}x{c}"), format!("{}x{}", t.rows, t.cols)));
            }
            if !t.is_finite() {
                return Err(Error::invalid(name, "non-finite value"));
            }
        }
        Ok(DualMapper { dims, params })
    }

    pub fn dims(&self) -> MapperDims {
        self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id_of(name)
    }

    /// Zeroes the final layers, making the mapper an exact identity edit.
    pub fn zero_final_layers(&mut self) {
        for name in FINAL_LAYERS {
            let id = self.params.id_of(name).expect("final layer present");
            let t = self.params.get_mut(id);
            *t = Tensor::zeros(t.rows, t.cols);
        }
    }

    pub fn check_state(&self, state: &LatentState) -> Result<()> {
        let d = &self.dims;
        state.w.expect_shape((d.n_w, d.d_w), "latent w")?;
        if state.alpha.len() != d.n_alpha {
            return Err(Error::dim("alpha", d.n_alpha, state.alpha.len()));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMapper {
        BoundMapper {
            vars: self
                .params
                .iter()
                .map(|(id, _, t)| tape.param(id, t))
                .collect(),
        }
    }

    /// Records both branches. `w` is `n_w × d_w`, `alpha` is `1 × n_α`.
    pub fn record(&self, tape: &mut Tape, bound: &BoundMapper, w: Var, alpha: Var) -> Result<MapperOutput> {
        let d = self.dims;
        let scale = 1.0 / (d.d_att as f64).sqrt();

        // α as a column, spread across d_att columns
        let alpha_col = tape.reshape(alpha, d.n_alpha, 1)?;
        let ones_att = tape.constant(Tensor::filled(1, d.d_att, 1.0));
        let alpha_wide = tape.matmul(alpha_col, ones_att)?;

        // texture branch: α tokens query w tokens
        let lifted = tape.mul(alpha_wide, bound.get(slot::T_LIFT))?;
        let t_tokens = tape.add(lifted, bound.get(slot::T_POS))?;
        let q = tape.matmul(t_tokens, bound.get(slot::T_Q))?;
        let k = tape.matmul(w, bound.get(slot::T_K))?;
        let v = tape.matmul(w, bound.get(slot::T_V))?;
        let (t_att, t_pooled) = attend(tape, q, k, v, scale, d.n_alpha)?;
        let m = mlp(
            tape,
            t_pooled,
            bound.get(slot::T_W1),
            bound.get(slot::T_B1),
            bound.get(slot::T_W2),
            bound.get(slot::T_B2),
        )?;
        let delta_w = tape.matmul(bound.get(slot::T_GAIN), m)?;

        // emotion branch: w tokens query α tokens
        let lifted = tape.mul(alpha_wide, bound.get(slot::E_LIFT))?;
        let e_tokens = tape.add(lifted, bound.get(slot::E_POS))?;
        let q = tape.matmul(w, bound.get(slot::E_Q))?;
        let k = tape.matmul(e_tokens, bound.get(slot::E_K))?;
        let v = tape.matmul(e_tokens, bound.get(slot::E_V))?;
        let (e_att, e_pooled) = attend(tape, q, k, v, scale, d.n_w)?;
        let delta_alpha = mlp(
            tape,
            e_pooled,
            bound.get(slot::E_W1),
            bound.get(slot::E_B1),
            bound.get(slot::E_W2),
            bound.get(slot::E_B2),
        )?;

        Ok(MapperOutput {
            delta_w,
            delta_alpha,
            texture_attention: t_att,
            emotion_attention: e_att,
        })
    }

    fn run(&self, state: &LatentState) -> Result<(Tape, MapperOutput)> {
        self.check_state(state)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let w = tape.constant(state.w.clone());
        let a = tape.constant(Tensor::row_vector(state.alpha.clone()));
        let out = self.record(&mut tape, &bound, w, a)?;
        Ok((tape, out))
    }

    /// `Δw`, one row per latent token.
    pub fn forward_texture(&self, state: &LatentState) -> Result<Tensor> {
        let (tape, out) = self.run(state)?;
        Ok(tape.value(out.delta_w).clone())
    }

    /// `Δα`.
    pub fn forward_emotion(&self, state: &LatentState) -> Result<Vec<f64>> {
        let (tape, out) = self.run(state)?;
        Ok(tape.value(out.delta_alpha).data.clone())
    }

    /// Texture-branch attention, `n_α × n_w`.
    pub fn texture_attention(&self, state: &LatentState) -> Result<Tensor> {
        let (tape, out) = self.run(state)?;
        Ok(tape.value(out.texture_attention).clone())
    }

    /// Emotion-branch attention, `n_w × n_α`.
    pub fn emotion_attention(&self, state: &LatentState) -> Result<Tensor> {
        let (tape, out) = self.run(state)?;
        Ok(tape.value(out.emotion_attention).clone())
    }

    /// `(w + Δw, α + Δα)`.
    pub fn apply_edit(&self, state: &LatentState) -> Result<LatentState> {
        let (tape, out) = self.run(state)?;
        let w = state.w.add(tape.value(out.delta_w))?;
        let alpha = state
            .alpha
            .iter()
            .zip(&tape.value(out.delta_alpha).data)
            .map(|(a, d)| a + d)
            .collect();
        Ok(LatentState { w, alpha })
    }
}

/// Applies mappers in order, each to the output of the previous one.
pub fn compose_edits(mappers: &[&DualMapper], state: &LatentState) -> Result<LatentState> {
    let mut s = state.clone();
    for m in mappers {
        s = m.apply_edit(&s)?;
    }
    Ok(s)
}

/// Scaled dot-product attention followed by a mean over query rows.
fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, scale: f64, n_queries: usize) -> Result<(Var, Var)> {
    let logits = tape.matmul_nt(q, k)?;
    let logits = tape.scale(logits, scale);
    let att = tape.softmax_rows(logits);
    let attended = tape.matmul(att, v)?;
    let mean = tape.constant(Tensor::filled(1, n_queries, 1.0 / n_queries as f64));
    let pooled = tape.matmul(mean, attended)?;
    Ok((att, pooled))
}

fn mlp(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.tanh(h);
    let o = tape.matmul(h, w2)?;
    tape.add(o, b2)
}
