#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use facedit_core::autodiff::{ParamSet, Tape};
use facedit_core::mapper::{compose_edits, DualMapper, LatentState, MapperDims};
use facedit_core::tensor::Tensor;
use proptest::prelude::*;

fn small_dims() -> MapperDims {
    MapperDims { n_w: 2, d_w: 3, n_alpha: 3, d_att: 2, hidden: 4 }
}

/// A mapper with every tensor, final layers included, drawn at random.
fn randomized(dims: MapperDims, seed: u64) -> DualMapper {
    let base = DualMapper::new(dims, seed).unwrap();
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    for (_, name, t) in base.params().iter() {
        ps.push(name, random_tensor(&mut r, t.rows, t.cols));
    }
    DualMapper::from_params(dims, ps).unwrap()
}

fn random_state(dims: MapperDims, seed: u64) -> LatentState {
    let mut r = rng(seed);
    LatentState { w: random_tensor(&mut r, dims.n_w, dims.d_w), alpha: random_vec(&mut r, dims.n_alpha) }
}

type Mat = Vec<Vec<f64>>;

fn mat(m: &DualMapper, name: &str) -> Mat {
    let t = m.params().get(m.param_id(name).unwrap());
    (0..t.rows).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

fn softmax_rows(x: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Attention map and mean-pooled attended values, written with loops.
fn attend(q: &Mat, k: &Mat, v: &Mat, d_att: usize) -> (Mat, Vec<f64>) {
    let scale = 1.0 / (d_att as f64).sqrt();
    let mut logits = vec![vec![0.0; k.len()]; q.len()];
    for i in 0..q.len() {
        for j in 0..k.len() {
            logits[i][j] = scale * (0..d_att).map(|c| q[i][c] * k[j][c]).sum::<f64>();
        }
    }
    let att = softmax_rows(&logits);
    let mut pooled = vec![0.0; v[0].len()];
    for i in 0..q.len() {
        for j in 0..k.len() {
            for c in 0..v[0].len() {
                pooled[c] += att[i][j] * v[j][c] / q.len() as f64;
            }
        }
    }
    (att, pooled)
}

fn mlp(m: &DualMapper, prefix: &str, x: &[f64]) -> Vec<f64> {
    let (w1, b1, w2, b2) = (
        mat(m, &format!("{prefix}.mlp.w1")),
        mat(m, &format!("{prefix}.mlp.b1")),
        mat(m, &format!("{prefix}.mlp.w2")),
        mat(m, &format!("{prefix}.mlp.b2")),
    );
    let h: Vec<f64> = (0..w1[0].len())
        .map(|j| (b1[0][j] + (0..x.len()).map(|i| x[i] * w1[i][j]).sum::<f64>()).tanh())
        .collect();
    (0..w2[0].len()).map(|j| b2[0][j] + (0..h.len()).map(|i| h[i] * w2[i][j]).sum::<f64>()).collect()
}

/// Independent forward pass: (Δw, Δα, texture attention, emotion attention).
fn oracle(m: &DualMapper, s: &LatentState) -> (Mat, Vec<f64>, Mat, Mat) {
    let d = m.dims();
    let w: Mat = (0..d.n_w).map(|i| s.w.row(i).to_vec()).collect();
    let tokens = |prefix: &str| -> Mat {
        let lift = mat(m, &format!("{prefix}.lift"));
        let pos = mat(m, &format!("{prefix}.pos"));
        (0..d.n_alpha)
            .map(|i| (0..d.d_att).map(|c| s.alpha[i] * lift[i][c] + pos[i][c]).collect())
            .collect()
    };
    let t_tok = tokens("texture");
    let (t_att, t_pool) = attend(
        &mm(&t_tok, &mat(m, "texture.w_q")),
        &mm(&w, &mat(m, "texture.w_k")),
        &mm(&w, &mat(m, "texture.w_v")),
        d.d_att,
    );
    let edit = mlp(m, "texture", &t_pool);
    let gain = mat(m, "texture.gain");
    let dw: Mat = (0..d.n_w).map(|i| edit.iter().map(|e| gain[i][0] * e).collect()).collect();

    let e_tok = tokens("emotion");
    let (e_att, e_pool) = attend(
        &mm(&w, &mat(m, "emotion.w_q")),
        &mm(&e_tok, &mat(m, "emotion.w_k")),
        &mm(&e_tok, &mat(m, "emotion.w_v")),
        d.d_att,
    );
    (dw, mlp(m, "emotion", &e_pool), t_att, e_att)
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn small_mapper_matches_loop_oracle() {
    let dims = small_dims();
    for seed in 0..5 {
        let m = randomized(dims, seed);
        let s = random_state(dims, seed + 100);
        let (dw, da, ta, ea) = oracle(&m, &s);
        assert!(max_abs(&m.forward_texture(&s).unwrap().data, &flat(&dw)) < 1e-12);
        assert!(max_abs(&m.forward_emotion(&s).unwrap(), &da) < 1e-12);
        assert!(max_abs(&m.texture_attention(&s).unwrap().data, &flat(&ta)) < 1e-12);
        assert!(max_abs(&m.emotion_attention(&s).unwrap().data, &flat(&ea)) < 1e-12);
    }
}

#[test]
fn default_mapper_matches_loop_oracle() {
    let dims = MapperDims::default();
    let m = randomized(dims, 8);
    let s = random_state(dims, 9);
    let (dw, da, _, _) = oracle(&m, &s);
    assert!(max_abs(&m.forward_texture(&s).unwrap().data, &flat(&dw)) < 1e-12);
    assert!(max_abs(&m.forward_emotion(&s).unwrap(), &da) < 1e-12);
}

#[test]
fn zero_final_layers_give_zero_edits() {
    let dims = MapperDims::default();
    let mut m = randomized(dims, 3);
    m.zero_final_layers();
    let s = random_state(dims, 4);
    assert!(m.forward_texture(&s).unwrap().data.iter().all(|&x| x == 0.0));
    assert!(m.forward_emotion(&s).unwrap().iter().all(|&x| x == 0.0));
    assert_eq!(m.apply_edit(&s).unwrap(), s);
}

#[test]
fn one_token_attention_is_trivial() {
    let m = randomized(MapperDims { n_w: 1, ..small_dims() }, 5);
    let s = random_state(m.dims(), 6);
    assert_eq!(m.texture_attention(&s).unwrap().data, vec![1.0; 3]);

    let m = randomized(MapperDims { n_alpha: 1, ..small_dims() }, 5);
    let s = random_state(m.dims(), 6);
    assert_eq!(m.emotion_attention(&s).unwrap().data, vec![1.0; 2]);
}

#[test]
fn edit_is_state_plus_forward_outputs() {
    let dims = MapperDims::default();
    let m = randomized(dims, 10);
    let s = random_state(dims, 11);
    let e = m.apply_edit(&s).unwrap();
    let dw = m.forward_texture(&s).unwrap();
    for (k, v) in e.w.data.iter().enumerate() {
        assert_eq!(*v, s.w.data[k] + dw.data[k]);
    }
    let da = m.forward_emotion(&s).unwrap();
    for (k, v) in e.alpha.iter().enumerate() {
        assert_eq!(*v, s.alpha[k] + da[k]);
    }
}

#[test]
fn composition_is_sequential() {
    let dims = MapperDims::default();
    let (m1, m2) = (randomized(dims, 20), randomized(dims, 21));
    let s = random_state(dims, 22);
    assert_eq!(compose_edits(&[], &s).unwrap(), s);
    assert_eq!(compose_edits(&[&m1], &s).unwrap(), m1.apply_edit(&s).unwrap());

    let (dw1, da1, _, _) = oracle(&m1, &s);
    let mid = LatentState {
        w: s.w.add(&Tensor::from_vec(6, 32, flat(&dw1)).unwrap()).unwrap(),
        alpha: s.alpha.iter().zip(&da1).map(|(a, d)| a + d).collect(),
    };
    let (dw2, da2, _, _) = oracle(&m2, &mid);
    let both = compose_edits(&[&m1, &m2], &s).unwrap();
    let want_w: Vec<f64> = (0..s.w.len()).map(|k| s.w.data[k] + flat(&dw1)[k] + flat(&dw2)[k]).collect();
    let want_a: Vec<f64> = (0..8).map(|k| s.alpha[k] + da1[k] + da2[k]).collect();
    assert!(max_abs(&both.w.data, &want_w) < 1e-12);
    assert!(max_abs(&both.alpha, &want_a) < 1e-12);
}

#[test]
fn init_is_seeded_uniform_within_bound() {
    let dims = MapperDims::default();
    let a = DualMapper::new(dims, 1).unwrap();
    assert_eq!(a, DualMapper::new(dims, 1).unwrap());
    assert_ne!(a, DualMapper::new(dims, 2).unwrap());
    for (_, name, t) in a.params().iter() {
        if name == "texture.gain" {
            assert!(t.data.iter().all(|&x| x == 1.0));
        } else {
            assert!(t.data.iter().all(|x| x.abs() <= 0.05), "{name}");
        }
    }
}

#[test]
fn mapper_gradients_match_differences() {
    let dims = small_dims();
    let m = randomized(dims, 30);
    let s = random_state(dims, 31);
    let weights_w = random_tensor(&mut rng(32), dims.n_w, dims.d_w);
    let weights_a = random_tensor(&mut rng(33), 1, dims.n_alpha);
    let objective = |mapper: &DualMapper| -> f64 {
        let dw = mapper.forward_texture(&s).unwrap();
        let da = mapper.forward_emotion(&s).unwrap();
        dw.data.iter().zip(&weights_w.data).map(|(a, b)| a * b).sum::<f64>()
            + da.iter().zip(&weights_a.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape);
    let w = tape.constant(s.w.clone());
    let a = tape.constant(Tensor::row_vector(s.alpha.clone()));
    let out = m.record(&mut tape, &bound, w, a).unwrap();
    let x = weighted_sum(&mut tape, out.delta_w, &weights_w);
    let y = weighted_sum(&mut tape, out.delta_alpha, &weights_a);
    let loss = tape.add(x, y).unwrap();
    assert!((tape.scalar(loss) - objective(&m)).abs() < 1e-12);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-5;
    let mut work = m.clone();
    for id in m.params().ids() {
        for k in 0..m.params().get(id).len() {
            let x0 = m.params().get(id).data[k];
            work.params_mut().get_mut(id).data[k] = x0 + h;
            let up = objective(&work);
            work.params_mut().get_mut(id).data[k] = x0 - h;
            let down = objective(&work);
            work.params_mut().get_mut(id).data[k] = x0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data[k]);
            let e = rel_err(analytic, numeric);
            assert!(e < 1e-6, "{}[{k}]: {analytic:e} vs {numeric:e}", m.params().name(id));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let dims = MapperDims::default();
        let m = randomized(dims, seed);
        let mut s = random_state(dims, seed.wrapping_add(1));
        s.w = s.w.scale(scale);
        s.alpha.iter_mut().for_each(|a| *a *= scale);
        for att in [m.texture_attention(&s).unwrap(), m.emotion_attention(&s).unwrap()] {
            for r in 0..att.rows {
                prop_assert!((att.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let dims = small_dims();
        let m = randomized(dims, seed);
        let s = random_state(dims, seed ^ 1);
        prop_assert_eq!(m.apply_edit(&s).unwrap(), m.apply_edit(&s).unwrap());
    }
}
