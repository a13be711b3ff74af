use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

/// A feature vector in the joint text/image space. Stored unnormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", format!("non-finite value at index {i}")));
        }
        Ok(Embedding { values })
    }

    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Degenerate("cannot normalize a zero embedding".into()));
        }
        Ok(Embedding::from_trusted(self.values.iter().map(|v| v / n).collect()))
    }

    pub fn add(&self, other: &Embedding) -> Result<Embedding> {
        check_dim(self.dim(), other, "embedding sum")?;
        Ok(Embedding::from_trusted(
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Embedding) -> Result<Embedding> {
        check_dim(self.dim(), other, "embedding difference")?;
        Ok(Embedding::from_trusted(
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn max_abs_diff(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_dim(expected: usize, e: &Embedding, what: &str) -> Result<()> {
    if e.dim() != expected {
        return Err(Error::dim(what, expected, e.dim()));
    }
    Ok(())
}

/// Cosine similarity; zero-norm inputs are rejected.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dim(a.dim(), b, "cosine operand")?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm embedding".into()));
    }
    Ok(dot(&a.values, &b.values) / (na * nb))
}

/// Which basis the augmentation coefficients are measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    #[default]
    Orthonormal,
    Raw,
}

/// Span of the prompt embeddings, kept both as given and orthonormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionSubspace {
    raw: Vec<Embedding>,
    ortho: Vec<Embedding>,
    dim: usize,
}

/// Columns whose Gram-Schmidt residual falls below this are dropped as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

const SPAN_TOLERANCE: f64 = 1e-6;
const SINGULAR_TOLERANCE: f64 = 1e-12;

impl ExpressionSubspace {
    /// Orthonormalizes `raw` by modified Gram-Schmidt in the given order.
    pub fn new(raw: Vec<Embedding>) -> Result<Self> {
        let Some(first) = raw.first() else {
            return Err(Error::invalid("expression subspace", "no basis vectors"));
        };
        let dim = first.dim();
        for (i, b) in raw.iter().enumerate() {
            if b.dim() != dim {
                return Err(Error::dim(format!("basis vector {i}"), dim, b.dim()));
            }
        }
        let mut ortho: Vec<Embedding> = Vec::with_capacity(raw.len());
        for b in &raw {
            let mut v = b.values.clone();
            for q in &ortho {
                let c = dot(&v, &q.values);
                for (x, qv) in v.iter_mut().zip(&q.values) {
                    *x -= c * qv;
                }
            }
            let n = norm(&v);
            if n < RANK_TOLERANCE {
                continue;
            }
            ortho.push(Embedding::from_trusted(v.into_iter().map(|x| x / n).collect()));
        }
        if ortho.is_empty() {
            return Err(Error::Degenerate("basis spans only the zero vector".into()));
        }
        Ok(ExpressionSubspace { raw, ortho, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.ortho.len()
    }

    pub fn raw_basis(&self) -> &[Embedding] {
        &self.raw
    }

    pub fn ortho_basis(&self) -> &[Embedding] {
        &self.ortho
    }

    fn basis(&self, mode: BasisMode) -> &[Embedding] {
        match mode {
            BasisMode::Orthonormal => &self.ortho,
            BasisMode::Raw => &self.raw,
        }
    }

    /// Splits `e_i` into its orthogonal projection onto the span and the residual.
    pub fn project(&self, e_i: &Embedding) -> Result<(Embedding, Embedding)> {
        check_dim(self.dim, e_i, "projected embedding")?;
        let mut p = vec![0.0; self.dim];
        for q in &self.ortho {
            let c = dot(&e_i.values, &q.values);
            for (x, qv) in p.iter_mut().zip(&q.values) {
                *x += c * qv;
            }
        }
        let r = e_i.values.iter().zip(&p).map(|(a, b)| a - b).collect();
        Ok((Embedding::from_trusted(p), Embedding::from_trusted(r)))
    }

    /// `Σ (c_k − γ|c_k|) b_k + (γ Σ|c_k| / Σ d_k) e_T` with `c_k = e_Pᵀb_k`,
    /// `d_k = e_Tᵀb_k`.
    pub fn augment(
        &self,
        e_p: &Embedding,
        e_t: &Embedding,
        gamma: f64,
        mode: BasisMode,
    ) -> Result<Embedding> {
        check_dim(self.dim, e_p, "projected embedding")?;
        check_dim(self.dim, e_t, "text embedding")?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("{gamma} is not a finite non-negative number")));
        }
        let (_, off_span) = self.project(e_p)?;
        let off = off_span.norm();
        if off > SPAN_TOLERANCE * e_p.norm().max(1.0) {
            return Err(Error::invalid(
                "projected embedding",
                format!("lies {off:e} outside the subspace"),
            ));
        }
        let basis = self.basis(mode);
        let mut out = vec![0.0; self.dim];
        let mut abs_c = 0.0;
        let mut sum_d = 0.0;
        for b in basis {
            let c = dot(&e_p.values, &b.values);
            let d = dot(&e_t.values, &b.values);
            abs_c += c.abs();
            sum_d += d;
            let w = c - gamma * c.abs();
            for (x, bv) in out.iter_mut().zip(&b.values) {
                *x += w * bv;
            }
        }
        if sum_d.abs() < SINGULAR_TOLERANCE {
            return Err(Error::SingularAugmentation(sum_d));
        }
        let s = gamma * abs_c / sum_d;
        for (x, t) in out.iter_mut().zip(&e_t.values) {
            *x += s * t;
        }
        Ok(Embedding::from_trusted(out))
    }

    /// Augmented projection with the residual added back.
    pub fn target_embedding(
        &self,
        e_i: &Embedding,
        e_t: &Embedding,
        gamma: f64,
        mode: BasisMode,
    ) -> Result<Embedding> {
        let (e_p, r) = self.project(e_i)?;
        self.augment(&e_p, e_t, gamma, mode)?.add(&r)
    }
}
