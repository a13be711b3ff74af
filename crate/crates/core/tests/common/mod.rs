//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use facedit_core::embedding::{Embedding, ExpressionSubspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn emb(v: Vec<f64>) -> Embedding {
    Embedding::new(v).unwrap()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Projection of `x` onto the column span of `basis` by solving the normal
/// equations `(BᵀB) c = Bᵀx` with Cholesky, independent of any
/// orthonormalization.
pub fn normal_equations_projection(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = basis.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mut g = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = dot(&basis[i], &basis[j]);
        }
        rhs[i] = dot(&basis[i], x);
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (g[i][i] - s).sqrt();
            } else {
                l[i][j] = (g[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (rhs[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut c = vec![0.0; n];
    for i in (0..n).rev() {
        c[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * c[k]).sum::<f64>()) / l[i][i];
    }
    let mut p = vec![0.0; x.len()];
    for (ck, b) in c.iter().zip(basis) {
        for (pi, bi) in p.iter_mut().zip(b) {
            *pi += ck * bi;
        }
    }
    p
}

/// Term-by-term evaluation of the augmentation operator over `basis`.
pub fn scalar_augment(basis: &[Vec<f64>], e_p: &[f64], e_t: &[f64], gamma: f64) -> Vec<f64> {
    let d = e_p.len();
    let mut c = vec![0.0; basis.len()];
    let mut dk = vec![0.0; basis.len()];
    for k in 0..basis.len() {
        for i in 0..d {
            c[k] += e_p[i] * basis[k][i];
            dk[k] += e_t[i] * basis[k][i];
        }
    }
    let mut sum_abs_c = 0.0;
    let mut sum_d = 0.0;
    for k in 0..basis.len() {
        sum_abs_c += c[k].abs();
        sum_d += dk[k];
    }
    let mut out = vec![0.0; d];
    for i in 0..d {
        for k in 0..basis.len() {
            out[i] += (c[k] - gamma * c[k].abs()) * basis[k][i];
        }
        out[i] += gamma * sum_abs_c / sum_d * e_t[i];
    }
    out
}

pub fn ortho_rows(s: &ExpressionSubspace) -> Vec<Vec<f64>> {
    s.ortho_basis().iter().map(|b| b.as_slice().to_vec()).collect()
}

/// A random subspace of rank `n` in dimension `d` together with its raw rows.
pub fn random_subspace(r: &mut impl Rng, d: usize, n: usize) -> (Vec<Vec<f64>>, ExpressionSubspace) {
    let raw: Vec<Vec<f64>> = (0..n).map(|_| random_vec(r, d)).collect();
    let s = ExpressionSubspace::new(raw.iter().cloned().map(emb).collect()).unwrap();
    (raw, s)
}

/// A text embedding whose aggregate coordinate over `s` is far from zero.
pub fn text_for(r: &mut impl Rng, s: &ExpressionSubspace) -> Vec<f64> {
    loop {
        let t = random_vec(r, s.dim());
        let sum: f64 = s
            .ortho_basis()
            .iter()
            .map(|b| b.as_slice().iter().zip(&t).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        if sum.abs() > 0.1 {
            return t;
        }
    }
}

use facedit_core::autodiff::{Gradients, ParamSet, Tape, Var};
use facedit_core::tensor::Tensor;

/// Denominator floor for relative gradient errors, so that entries whose
/// true derivative is near zero are judged on absolute error.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Worst relative error between reverse-mode gradients of `f` and central
/// differences with step `h`, over every scalar of every parameter.
pub fn gradient_check(
    params: &ParamSet,
    h: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Var,
) -> (f64, String) {
    let eval = |ps: &ParamSet| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|(id, _, t)| tape.param(id, t)).collect();
        let out = f(&mut tape, &vars);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(id, _, t)| tape.param(id, t)).collect();
    let out = f(&mut tape, &vars);
    let grads: Gradients = tape.backward(out).unwrap();
    let mut worst = (0.0, String::new());
    let mut work = params.clone();
    for id in params.ids() {
        let n = params.get(id).len();
        for k in 0..n {
            let x = params.get(id).data[k];
            work.get_mut(id).data[k] = x + h;
            let up = eval(&work);
            work.get_mut(id).data[k] = x - h;
            let down = eval(&work);
            work.get_mut(id).data[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data[k]);
            let e = rel_err(analytic, numeric);
            if e > worst.0 {
                worst = (e, format!("{}[{k}]: analytic {analytic:e}, numeric {numeric:e}", params.name(id)));
            }
        }
    }
    worst
}

pub fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, random_vec(r, rows * cols)).unwrap()
}

/// Reduces a node to a scalar with fixed weights so every entry matters.
pub fn weighted_sum(tape: &mut Tape, x: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}
