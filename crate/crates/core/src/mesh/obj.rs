//! Minimal Wavefront OBJ reading and writing (positions and triangles only).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::tensor::Tensor;

/// Renders `v` lines followed by 1-based `f` lines. Coordinates use the
/// shortest representation that parses back to the same `f64`.
pub fn obj_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    for i in 0..mesh.n_vertices() {
        let [x, y, z] = mesh.vertex(i);
        writeln!(out, "v {x:?} {y:?} {z:?}").unwrap();
    }
    for [a, b, c] in &mesh.faces {
        writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1).unwrap();
    }
    out
}

pub fn export_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

pub fn parse_obj(text: &str, source_name: &str) -> Result<Mesh> {
    let perr = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        location: format!("line {line}"),
        message,
    };
    let mut coords = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let vals: Vec<&str> = parts.collect();
                if vals.len() < 3 {
                    return Err(perr(line_no, format!("vertex needs 3 coordinates, found {}", vals.len())));
                }
                for s in &vals[..3] {
                    let v: f64 = s
                        .parse()
                        .map_err(|_| perr(line_no, format!("bad coordinate `{s}`")))?;
                    coords.push(v);
                }
            }
            Some("f") => {
                let idx: Vec<&str> = parts.collect();
                if idx.len() != 3 {
                    return Err(perr(line_no, format!("only triangles are supported, found {} indices", idx.len())));
                }
                let mut face = [0usize; 3];
                for (slot, s) in face.iter_mut().zip(&idx) {
                    let head = s.split('/').next().unwrap_or("");
                    let i: usize = head
                        .parse()
                        .map_err(|_| perr(line_no, format!("bad face index `{s}`")))?;
                    if i == 0 {
                        return Err(perr(line_no, "face indices are 1-based".to_string()));
                    }
                    *slot = i - 1;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    let n_v = coords.len() / 3;
    Mesh::new(Tensor::from_vec(n_v, 3, coords)?, faces)
}
