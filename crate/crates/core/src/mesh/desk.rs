//! Seeded synthetic face-like model for tests and experiments.
//!
//! The template is a gently domed grid. Vertices are tagged by position into
//! brow, eyelid, mouth and jaw bands, and the first eight expression basis
//! vectors are localized displacement fields over those bands:
//!
//! | index | region        | motion                          |
//! |-------|---------------|---------------------------------|
//! | 0     | brow          | up                              |
//! | 1     | eyelid        | down and back (closing)         |
//! | 2     | mouth         | up, forward, corners outward    |
//! | 3     | brow          | down, forward, inward           |
//! | 4     | eyelid        | up (widening)                   |
//! | 5     | mouth         | down                            |
//! | 6     | jaw and mouth | down                            |
//! | 7     | mouth         | back (lip press)                |
//!
//! Any further basis vectors are low-amplitude affine fields.

use crate::error::{Error, Result};
use crate::mesh::{MorphableModel, PoseJoint, Region};
use crate::rng::{self, gaussian, gaussian_tensor, streams};
use crate::tensor::Tensor;

pub const BROW_UP: usize = 0;
pub const EYELID_CLOSE: usize = 1;
pub const MOUTH_CORNER_UP: usize = 2;
pub const BROW_DOWN: usize = 3;
pub const EYELID_WIDEN: usize = 4;
pub const MOUTH_DOWN: usize = 5;
pub const JAW_DROP: usize = 6;
pub const LIP_PRESS: usize = 7;

/// Number of structured expression fields.
pub const STRUCTURED_FIELDS: usize = 8;

const FIELD_AMPLITUDE: f64 = 0.1;
const BASIS_NOISE: f64 = 0.005;
const SHAPE_AMPLITUDE: f64 = 0.03;

struct Part {
    region: Region,
    motion: [f64; 3],
    /// Extra x motion, signed by the vertex's side of the face.
    lateral: f64,
}

const fn part(region: Region, motion: [f64; 3], lateral: f64) -> Part {
    Part {
        region,
        motion,
        lateral,
    }
}

const FIELDS: [&[Part]; STRUCTURED_FIELDS] = [
    &[part(Region::Brow, [0.0, 1.0, 0.0], 0.0)],
    &[part(Region::Eyelid, [0.0, -1.0, -0.5], 0.0)],
    &[part(Region::Mouth, [0.0, 1.0, 0.6], 0.5)],
    &[part(Region::Brow, [0.0, -0.6, 0.8], -0.5)],
    &[part(Region::Eyelid, [0.0, 1.0, 0.0], 0.0)],
    &[part(Region::Mouth, [0.0, -1.0, 0.0], 0.0)],
    &[
        part(Region::Jaw, [0.0, -1.0, 0.0], 0.0),
        part(Region::Mouth, [0.0, -0.5, 0.0], 0.0),
    ],
    &[part(Region::Mouth, [0.0, 0.0, -1.0], 0.0)],
];

fn grid_shape(n_v: usize) -> Result<(usize, usize)> {
    let rows = (2..=n_v)
        .take_while(|r| r * r <= n_v)
        .filter(|r| n_v.is_multiple_of(*r))
        .last()
        .ok_or_else(|| {
            Error::invalid("n_v", format!("{n_v} does not factor into a grid of at least 2x2"))
        })?;
    Ok((rows, n_v / rows))
}

fn label(u: f64, v: f64) -> Region {
    let du = (u - 0.5).abs();
    if (0.72..=0.9).contains(&v) && (0.08..=0.42).contains(&du) {
        Region::Brow
    } else if (0.55..0.72).contains(&v) && (0.12..=0.4).contains(&du) {
        Region::Eyelid
    } else if (0.15..=0.35).contains(&v) && du < 0.3 {
        Region::Mouth
    } else if v < 0.15 {
        Region::Jaw
    } else {
        Region::Other
    }
}

/// Builds the seeded desk model on the most square grid with `n_v` vertices.
pub fn synthesize_desk_model(
    seed: u64,
    n_v: usize,
    n_shape: usize,
    n_expression: usize,
) -> Result<MorphableModel> {
    if n_expression < 3 {
        return Err(Error::invalid(
            "expression dimension",
            "at least 3 basis vectors are needed for brow, eyelid and mouth motion",
        ));
    }
    let (rows, cols) = grid_shape(n_v)?;

    let mut template = Tensor::zeros(n_v, 3);
    let mut labels = Vec::with_capacity(n_v);
    for i in 0..rows {
        for j in 0..cols {
            let u = j as f64 / (cols - 1) as f64;
            let v = i as f64 / (rows - 1) as f64;
            let x = (u - 0.5) * 1.6;
            let y = (v - 0.5) * 2.0;
            let z = 0.3 * (1.0 - 0.5 * (x / 0.8).powi(2) - 0.5 * y * y);
            template.row_mut(i * cols + j).copy_from_slice(&[x, y, z]);
            labels.push(label(u, v));
        }
    }
    for region in [Region::Brow, Region::Eyelid, Region::Mouth] {
        if !labels.contains(&region) {
            return Err(Error::invalid(
                "n_v",
                format!("a {rows}x{cols} grid has no {region} vertices"),
            ));
        }
    }

    let mut faces = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let a = i * cols + j;
            let b = a + 1;
            let c = a + cols + 1;
            let d = a + cols;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }

    let mut noise = rng::stream(seed, streams::MODEL_NOISE);
    let mut expression = Tensor::zeros(n_expression, 3 * n_v);
    for k in 0..n_expression {
        let row = expression.row_mut(k);
        if let Some(parts) = FIELDS.get(k) {
            for (vi, region) in labels.iter().enumerate() {
                let side = template.get(vi, 0).signum();
                let side = if side == 0.0 { 1.0 } else { side };
                for p in parts.iter().filter(|p| p.region == *region) {
                    row[3 * vi] += FIELD_AMPLITUDE * (p.motion[0] + p.lateral * side);
                    row[3 * vi + 1] += FIELD_AMPLITUDE * p.motion[1];
                    row[3 * vi + 2] += FIELD_AMPLITUDE * p.motion[2];
                }
            }
        } else {
            affine_field(&mut noise, &template, row, 0.3 * FIELD_AMPLITUDE);
        }
        for v in row.iter_mut() {
            *v += BASIS_NOISE * gaussian(&mut noise);
        }
    }

    let mut shape_rng = rng::stream(seed, streams::MODEL_SHAPE);
    let mut shape = Tensor::zeros(n_shape, 3 * n_v);
    for k in 0..n_shape {
        affine_field(&mut shape_rng, &template, shape.row_mut(k), SHAPE_AMPLITUDE);
    }

    let pivot = [0.0, -1.2, -0.2];
    let joints = vec![
        PoseJoint {
            pivot,
            axis: [1.0, 0.0, 0.0],
        },
        PoseJoint {
            pivot,
            axis: [0.0, 1.0, 0.0],
        },
    ];

    MorphableModel::new(template, faces, shape, expression, joints, labels)
}

/// Writes `amplitude · M · (1, x, y)` per vertex for a random 3×3 `M`.
fn affine_field(rng: &mut impl rand::Rng, template: &Tensor, out: &mut [f64], amplitude: f64) {
    let m = gaussian_tensor(rng, 3, 3, amplitude);
    for vi in 0..template.rows {
        let basis = [1.0, template.get(vi, 0), template.get(vi, 1)];
        for axis in 0..3 {
            out[3 * vi + axis] = (0..3).map(|c| m.get(axis, c) * basis[c]).sum();
        }
    }
}
