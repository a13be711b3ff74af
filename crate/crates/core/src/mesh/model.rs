use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Brow,
    Eyelid,
    Mouth,
    Jaw,
    Other,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Brow,
        Region::Eyelid,
        Region::Mouth,
        Region::Jaw,
        Region::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Brow => "brow",
            Region::Eyelid => "eyelid",
            Region::Mouth => "mouth",
            Region::Jaw => "jaw",
            Region::Other => "other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rotation joint: every vertex turns by the pose angle about `axis`
/// through `pivot`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseJoint {
    pub pivot: [f64; 3],
    pub axis: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    /// `n_v × 3`
    pub vertices: Tensor,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Tensor, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.cols != 3 {
            return Err(Error::dim("mesh vertex columns", 3, vertices.cols));
        }
        check_faces(&faces, vertices.rows)?;
        if !vertices.is_finite() {
            return Err(Error::invalid("mesh vertices", "non-finite coordinate"));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.rows
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        let r = self.vertices.row(i);
        [r[0], r[1], r[2]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlameParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl FlameParams {
    pub fn zeros(model: &MorphableModel) -> Self {
        FlameParams {
            theta: vec![0.0; model.n_shape()],
            beta: vec![0.0; model.n_pose()],
            alpha: vec![0.0; model.n_expression()],
        }
    }

    pub fn with_alpha(model: &MorphableModel, alpha: Vec<f64>) -> Self {
        FlameParams {
            alpha,
            ..FlameParams::zeros(model)
        }
    }
}

/// Linear face model: template plus identity and expression blendshapes,
/// followed by rigid joint rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphableModel {
    template: Tensor,
    faces: Vec<[usize; 3]>,
    /// `|θ| × 3n_v`, each row a flattened `n_v × 3` displacement field.
    shape_basis: Tensor,
    /// `|α| × 3n_v`
    expression_basis: Tensor,
    pose_joints: Vec<PoseJoint>,
    region_labels: Vec<Region>,
}

impl MorphableModel {
    pub fn new(
        template: Tensor,
        faces: Vec<[usize; 3]>,
        shape_basis: Tensor,
        expression_basis: Tensor,
        pose_joints: Vec<PoseJoint>,
        region_labels: Vec<Region>,
    ) -> Result<Self> {
        if template.cols != 3 {
            return Err(Error::dim("template columns", 3, template.cols));
        }
        let n_v = template.rows;
        if n_v == 0 {
            return Err(Error::invalid("template", "no vertices"));
        }
        check_faces(&faces, n_v)?;
        if shape_basis.cols != 3 * n_v {
            return Err(Error::dim(
                "shape_basis trailing shape",
                format!("{n_v}x3"),
                format!("{} values", shape_basis.cols),
            ));
        }
        if expression_basis.cols != 3 * n_v {
            return Err(Error::dim(
                "expression_basis trailing shape",
                format!("{n_v}x3"),
                format!("{} values", expression_basis.cols),
            ));
        }
        for (i, j) in pose_joints.iter().enumerate() {
            let n = crate::tensor::norm(&j.axis);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    format!("pose_joints[{i}].axis"),
                    format!("norm {n} is not 1"),
                ));
            }
        }
        if region_labels.len() != n_v {
            return Err(Error::dim("region_labels", n_v, region_labels.len()));
        }
        for (what, t) in [
            ("template", &template),
            ("shape_basis", &shape_basis),
            ("expression_basis", &expression_basis),
        ] {
            if !t.is_finite() {
                return Err(Error::invalid(what, "non-finite value"));
            }
        }
        Ok(MorphableModel {
            template,
            faces,
            shape_basis,
            expression_basis,
            pose_joints,
            region_labels,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.template.rows
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_shape(&self) -> usize {
        self.shape_basis.rows
    }

    pub fn n_pose(&self) -> usize {
        self.pose_joints.len()
    }

    pub fn n_expression(&self) -> usize {
        self.expression_basis.rows
    }

    pub fn template(&self) -> &Tensor {
        &self.template
    }

    pub fn template_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.template.clone(),
            faces: self.faces.clone(),
        }
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn shape_basis(&self) -> &Tensor {
        &self.shape_basis
    }

    pub fn expression_basis(&self) -> &Tensor {
        &self.expression_basis
    }

    pub fn pose_joints(&self) -> &[PoseJoint] {
        &self.pose_joints
    }

    pub fn region_labels(&self) -> &[Region] {
        &self.region_labels
    }

    pub fn region_vertices(&self, region: Region) -> Vec<usize> {
        self.region_labels
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == region)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn check_params(&self, params: &FlameParams) -> Result<()> {
        if params.theta.len() != self.n_shape() {
            return Err(Error::dim("theta", self.n_shape(), params.theta.len()));
        }
        if params.beta.len() != self.n_pose() {
            return Err(Error::dim("beta", self.n_pose(), params.beta.len()));
        }
        if params.alpha.len() != self.n_expression() {
            return Err(Error::dim("alpha", self.n_expression(), params.alpha.len()));
        }
        Ok(())
    }

    /// Evaluates the mesh function for the given coefficients.
    pub fn generate_mesh(&self, params: &FlameParams) -> Result<Mesh> {
        self.check_params(params)?;
        let mut flat = self.template.data.clone();
        blend(&mut flat, &params.theta, &self.shape_basis);
        blend(&mut flat, &params.alpha, &self.expression_basis);
        let mut vertices = Tensor::from_vec(self.n_vertices(), 3, flat)?;
        for (joint, &angle) in self.pose_joints.iter().zip(&params.beta) {
            if angle != 0.0 {
                let r = rotation_matrix(joint.axis, angle);
                for i in 0..vertices.rows {
                    let p = vertices.row_mut(i);
                    let q = rotate_about(&r, joint.pivot, [p[0], p[1], p[2]]);
                    p.copy_from_slice(&q);
                }
            }
        }
        Ok(Mesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Records the mesh function on a tape with `alpha` (a `1 × |α|` node)
    /// as the differentiable input. Returns the `n_v × 3` vertex node.
    pub fn generate_mesh_on_tape(
        &self,
        tape: &mut Tape,
        theta: &[f64],
        beta: &[f64],
        alpha: Var,
    ) -> Result<Var> {
        if theta.len() != self.n_shape() {
            return Err(Error::dim("theta", self.n_shape(), theta.len()));
        }
        if beta.len() != self.n_pose() {
            return Err(Error::dim("beta", self.n_pose(), beta.len()));
        }
        let a = tape.value(alpha);
        if a.shape() != (1, self.n_expression()) {
            return Err(Error::dim(
                "alpha",
                format!("1x{}", self.n_expression()),
                format!("{}x{}", a.rows, a.cols),
            ));
        }
        let mut base = self.template.data.clone();
        blend(&mut base, theta, &self.shape_basis);
        let base = tape.constant(Tensor::row_vector(base));
        let basis = tape.constant(self.expression_basis.clone());
        let offsets = tape.matmul(alpha, basis)?;
        let flat = tape.add(base, offsets)?;
        let mut verts = tape.reshape(flat, self.n_vertices(), 3)?;
        for (joint, &angle) in self.pose_joints.iter().zip(beta) {
            if angle == 0.0 {
                continue;
            }
            let r = rotation_matrix(joint.axis, angle);
            let pivot_rows = Tensor::from_vec(
                self.n_vertices(),
                3,
                (0..self.n_vertices()).flat_map(|_| joint.pivot).collect(),
            )?;
            let pivots = tape.constant(pivot_rows);
            let rot = tape.constant(Tensor::from_rows(&r.map(|row| row.to_vec()))?);
            let centered = tape.sub(verts, pivots)?;
            let turned = tape.matmul_nt(centered, rot)?;
            verts = tape.add(turned, pivots)?;
        }
        Ok(verts)
    }

    pub fn to_file(&self) -> ModelFile {
        let n_v = self.n_vertices();
        let unflatten = |t: &Tensor| -> Vec<Vec<[f64; 3]>> {
            (0..t.rows)
                .map(|k| {
                    let row = t.row(k);
                    (0..n_v)
                        .map(|i| [row[3 * i], row[3 * i + 1], row[3 * i + 2]])
                        .collect()
                })
                .collect()
        };
        ModelFile {
            template: (0..n_v)
                .map(|i| {
                    let r = self.template.row(i);
                    [r[0], r[1], r[2]]
                })
                .collect(),
            faces: self.faces.clone(),
            shape_basis: unflatten(&self.shape_basis),
            expression_basis: unflatten(&self.expression_basis),
            pose_joints: self.pose_joints.clone(),
            region_labels: self.region_labels.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let n_v = file.template.len();
        let template = Tensor::from_vec(n_v, 3, file.template.into_iter().flatten().collect())?;
        let flatten = |what: &str, fields: Vec<Vec<[f64; 3]>>| -> Result<Tensor> {
            let k = fields.len();
            let mut data = Vec::with_capacity(k * 3 * n_v);
            for (i, f) in fields.into_iter().enumerate() {
                if f.len() != n_v {
                    return Err(Error::dim(format!("{what}[{i}]"), format!("{n_v}x3"), format!("{}x3", f.len())));
                }
                data.extend(f.into_iter().flatten());
            }
            Tensor::from_vec(k, 3 * n_v, data)
        };
        let shape_basis = flatten("shape_basis", file.shape_basis)?;
        let expression_basis = flatten("expression_basis", file.expression_basis)?;
        MorphableModel::new(
            template,
            file.faces,
            shape_basis,
            expression_basis,
            file.pose_joints,
            file.region_labels,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let file: ModelFile = crate::error::parse_json(text, source_name)?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// On-disk model layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub template: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    pub expression_basis: Vec<Vec<[f64; 3]>>,
    pub pose_joints: Vec<PoseJoint>,
    pub region_labels: Vec<Region>,
}

fn check_faces(faces: &[[usize; 3]], n_v: usize) -> Result<()> {
    for (i, f) in faces.iter().enumerate() {
        for (j, &idx) in f.iter().enumerate() {
            if idx >= n_v {
                return Err(Error::invalid(
                    format!("faces[{i}][{j}]"),
                    format!("vertex index {idx} out of range for {n_v} vertices"),
                ));
            }
        }
    }
    Ok(())
}

fn blend(flat: &mut [f64], coeffs: &[f64], basis: &Tensor) {
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (v, b) in flat.iter_mut().zip(basis.row(k)) {
            *v += c * b;
        }
    }
}

/// Rodrigues rotation matrix for a unit axis.
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn rotate_about(r: &[[f64; 3]; 3], pivot: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let d = [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
    let mut out = pivot;
    for i in 0..3 {
        out[i] += r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2];
    }
    out
}
