//! Frozen stand-ins for the image synthesis network, the image/text encoder
//! and the face-recognition encoder, plus a flat-shaded rasterizer for
//! visual inspection.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::rng::{self, gaussian_tensor, streams};
use crate::tensor::Tensor;

/// `e = tanh(W_g·vec(w) + V_g·vec(V − V_template) + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateGenerator {
    /// `d_e × (n_w·d_w)`
    pub w_g: Tensor,
    /// `d_e × 3n_v`
    pub v_g: Tensor,
    /// `1 × d_e`
    pub bias: Tensor,
    pub seed: u64,
}

impl SurrogateGenerator {
    pub fn new(w_g: Tensor, v_g: Tensor, bias: Tensor, seed: u64) -> Result<Self> {
        let d_e = w_g.rows;
        if v_g.rows != d_e {
            return Err(Error::dim("geometry path rows", d_e, v_g.rows));
        }
        bias.expect_shape((1, d_e), "generator bias")?;
        for (what, t) in [("w_g", &w_g), ("v_g", &v_g), ("bias", &bias)] {
            if !t.is_finite() {
                return Err(Error::invalid(what, "non-finite value"));
            }
        }
        Ok(SurrogateGenerator { w_g, v_g, bias, seed })
    }

    /// Unstructured Gaussian weights, for tests that need any valid generator.
    pub fn random(seed: u64, d_e: usize, latent_len: usize, n_v: usize) -> Self {
        let mut r = rng::stream(seed, streams::SURROGATE);
        SurrogateGenerator {
            w_g: gaussian_tensor(&mut r, d_e, latent_len, 1.0 / (latent_len as f64).sqrt()),
            v_g: gaussian_tensor(&mut r, d_e, 3 * n_v, 1.0),
            bias: gaussian_tensor(&mut r, 1, d_e, 0.1),
            seed,
        }
    }

    pub fn d_e(&self) -> usize {
        self.w_g.rows
    }

    pub fn synth_embedding(&self, w: &Tensor, mesh: &Mesh, template: &Mesh) -> Result<Embedding> {
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let verts = tape.constant(mesh.vertices.clone());
        let e = self.record(&mut tape, wv, verts, &template.vertices)?;
        Embedding::new(tape.value(e).data.clone())
    }

    /// Records the generator; returns a `1 × d_e` node.
    pub fn record(&self, tape: &mut Tape, w: Var, vertices: Var, template: &Tensor) -> Result<Var> {
        let wt = tape.value(w);
        if wt.len() != self.w_g.cols {
            return Err(Error::dim("latent w", format!("{} values", self.w_g.cols), wt.len()));
        }
        let vt = tape.value(vertices);
        vt.expect_shape(template.shape(), "mesh vertices vs template")?;
        if vt.len() != self.v_g.cols {
            return Err(Error::dim("mesh vertices", format!("{} values", self.v_g.cols), vt.len()));
        }
        let w_flat = tape.reshape(w, 1, self.w_g.cols)?;
        let w_g = tape.constant(self.w_g.clone());
        let tex = tape.matmul_nt(w_flat, w_g)?;
        let tmpl = tape.constant(template.clone());
        let offsets = tape.sub(vertices, tmpl)?;
        let off_flat = tape.reshape(offsets, 1, self.v_g.cols)?;
        let v_g = tape.constant(self.v_g.clone());
        let geo = tape.matmul_nt(off_flat, v_g)?;
        let bias = tape.constant(self.bias.clone());
        let pre = tape.add(tex, geo)?;
        let pre = tape.add(pre, bias)?;
        Ok(tape.tanh(pre))
    }

    /// Upper bound on the Lipschitz constant of the map from vertex offsets
    /// to embeddings (`|tanh'| ≤ 1` times the Frobenius norm of `V_g`).
    pub fn geometry_lipschitz_bound(&self) -> f64 {
        self.v_g.norm()
    }
}

/// Linear projection of the texture latent, normalized. Ignores geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateIdentityEncoder {
    /// `d_id × (n_w·d_w)`
    pub projection: Tensor,
    pub seed: u64,
}

impl SurrogateIdentityEncoder {
    pub fn new(projection: Tensor, seed: u64) -> Result<Self> {
        if !projection.is_finite() {
            return Err(Error::invalid("identity projection", "non-finite value"));
        }
        Ok(SurrogateIdentityEncoder { projection, seed })
    }

    pub fn d_id(&self) -> usize {
        self.projection.rows
    }

    fn raw(&self, w: &Tensor) -> Result<Tensor> {
        if w.len() != self.projection.cols {
            return Err(Error::dim("latent w", format!("{} values", self.projection.cols), w.len()));
        }
        Tensor::row_vector(w.data.clone()).matmul(&self.projection, true)
    }

    pub fn identity_embedding(&self, w: &Tensor) -> Result<Embedding> {
        let v = self.raw(w)?;
        Embedding::new(v.data)?.normalized()
    }

    /// Records the unnormalized projection, a `1 × d_id` node. Its cosine
    /// with another identity embedding equals the normalized inner product.
    pub fn record(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        let n = self.projection.cols;
        if tape.value(w).len() != n {
            return Err(Error::dim("latent w", format!("{n} values"), tape.value(w).len()));
        }
        let flat = tape.reshape(w, 1, n)?;
        let p = tape.constant(self.projection.clone());
        tape.matmul_nt(flat, p)
    }
}

/// 8-bit grayscale image, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary `P5` encoding.
    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pnm_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// World-space rectangle mapped onto the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewport {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Viewport {
    /// Bounding box of the mesh grown by `margin` (a fraction of its extent).
    pub fn fit(mesh: &Mesh, margin: f64) -> Self {
        if mesh.n_vertices() == 0 {
            return Viewport {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            };
        }
        let mut vp = Viewport {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for i in 0..mesh.n_vertices() {
            let [x, y, _] = mesh.vertex(i);
            vp.x_min = vp.x_min.min(x);
            vp.x_max = vp.x_max.max(x);
            vp.y_min = vp.y_min.min(y);
            vp.y_max = vp.y_max.max(y);
        }
        let pad = margin * (vp.x_max - vp.x_min).max(vp.y_max - vp.y_min).max(1e-9);
        vp.x_min -= pad;
        vp.x_max += pad;
        vp.y_min -= pad;
        vp.y_max += pad;
        vp
    }
}

const LIGHT: [f64; 3] = [0.3, 0.4, 1.0];
const AMBIENT: f64 = 0.1;

pub fn rasterize(mesh: &Mesh, width: usize, height: usize) -> GrayImage {
    rasterize_view(mesh, width, height, Viewport::fit(mesh, 0.05))
}

/// Orthographic view along −z. Faces are painted far to near (mean `z`),
/// shaded by `|n·l|`; background pixels are 0, covered pixels are ≥ 1.
pub fn rasterize_view(mesh: &Mesh, width: usize, height: usize, view: Viewport) -> GrayImage {
    let mut img = GrayImage {
        width,
        height,
        pixels: vec![0; width * height],
    };
    let light_norm = crate::tensor::norm(&LIGHT);
    let light = LIGHT.map(|v| v / light_norm);

    struct Tri {
        depth: f64,
        key: [[f64; 3]; 3],
        p: [[f64; 3]; 3],
        shade: u8,
    }
    let mut tris: Vec<Tri> = Vec::with_capacity(mesh.faces.len());
    for f in &mesh.faces {
        let p = f.map(|i| mesh.vertex(i));
        let e1 = sub(p[1], p[0]);
        let e2 = sub(p[2], p[0]);
        let n = cross(e1, e2);
        let area2d = e1[0] * e2[1] - e1[1] * e2[0];
        if area2d.abs() < 1e-15 {
            continue;
        }
        let nn = crate::tensor::norm(&n);
        let lambert = (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).abs() / nn;
        let intensity = AMBIENT + (1.0 - AMBIENT) * lambert;
        let shade = (255.0 * intensity).round().clamp(1.0, 255.0) as u8;
        let mut key = p;
        key.sort_by(cmp_point);
        tris.push(Tri {
            depth: (p[0][2] + p[1][2] + p[2][2]) / 3.0,
            key,
            p,
            shade,
        });
    }
    tris.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then_with(|| cmp_key(&a.key, &b.key))
            .then_with(|| a.shade.cmp(&b.shade))
    });

    let sx = (view.x_max - view.x_min) / width as f64;
    let sy = (view.y_max - view.y_min) / height as f64;
    for t in &tris {
        let xs = t.p.map(|v| (v[0] - view.x_min) / sx);
        let ys = t.p.map(|v| (view.y_max - v[1]) / sy);
        let min_x = xs.iter().copied().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().min(width as f64) as usize;
        let min_y = ys.iter().copied().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_y = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().min(height as f64) as usize;
        let area = edge(xs[0], ys[0], xs[1], ys[1], xs[2], ys[2]);
        for py in min_y..max_y {
            for px in min_x..max_x {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = edge(xs[1], ys[1], xs[2], ys[2], cx, cy) * area.signum();
                let w1 = edge(xs[2], ys[2], xs[0], ys[0], cx, cy) * area.signum();
                let w2 = edge(xs[0], ys[0], xs[1], ys[1], cx, cy) * area.signum();
                if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                    img.pixels[py * width + px] = t.shade;
                }
            }
        }
    }
    img
}

fn edge(ax: f64, ay: f64, bx: f64, by: f64, cx: f64, cy: f64) -> f64 {
    (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn cmp_point(a: &[f64; 3], b: &[f64; 3]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn cmp_key(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| cmp_point(x, y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(z: f64, offset: f64) -> (Vec<Vec<f64>>, [usize; 3]) {
        (
            vec![
                vec![-1.0 + offset, -1.0, z],
                vec![1.0 + offset, -1.0, z],
                vec![offset, 1.0, z],
            ],
            [0, 1, 2],
        )
    }

    fn full_view() -> Viewport {
        Viewport {
            x_min: -2.0,
            x_max: 2.0,
            y_min: -2.0,
            y_max: 2.0,
        }
    }

    #[test]
    fn empty_mesh_is_background() {
        let mesh = Mesh::new(Tensor::zeros(0, 3), vec![]).unwrap();
        let img = rasterize(&mesh, 8, 6);
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn triangle_covers_only_its_projection() {
        let (v, f) = tri(0.0, 0.0);
        let mesh = Mesh::new(Tensor::from_rows(&v).unwrap(), vec![f]).unwrap();
        let img = rasterize_view(&mesh, 40, 40, full_view());
        let mut lit = 0;
        for y in 0..40 {
            for x in 0..40 {
                let wx = -2.0 + (x as f64 + 0.5) * 0.1;
                let wy = 2.0 - (y as f64 + 0.5) * 0.1;
                let inside = (-1.0..=1.0).contains(&wy) && (wx.abs() <= (1.0 - wy) / 2.0);
                if img.get(x, y) > 0 {
                    lit += 1;
                    assert!(inside, "pixel {x},{y} lit outside");
                }
            }
        }
        assert!(lit > 100);
    }

    #[test]
    fn zero_area_face_is_skipped() {
        let v = Tensor::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
        ])
        .unwrap();
        let mesh = Mesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!(rasterize(&mesh, 10, 10).pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn pnm_header() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 3, 4, 5],
        };
        let b = img.to_pnm_bytes();
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&b[b.len() - 6..], &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn identity_embedding_is_unit() {
        let mut r = rng::stream(5, 0);
        let enc = SurrogateIdentityEncoder::new(gaussian_tensor(&mut r, 4, 6, 1.0), 5).unwrap();
        let w = gaussian_tensor(&mut r, 2, 3, 1.0);
        assert!((enc.identity_embedding(&w).unwrap().norm() - 1.0).abs() < 1e-12);
        assert!(enc.identity_embedding(&Tensor::zeros(2, 3)).is_err());
    }
}
