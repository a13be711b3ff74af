use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, ExpressionSubspace};
use crate::error::{Error, Result};

/// Norm tolerance for embeddings flagged as normalized. Loose enough for
/// vectors that were normalized in single precision before export.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureHeader {
    pub d_e: usize,
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    /// Keys of the prompts spanning the expression subspace, in
    /// orthonormalization order. Empty means every `basis:` key, sorted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub basis: Vec<String>,
}

/// Named embeddings plus optional reference expression codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFixture {
    pub header: FixtureHeader,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub expression_codes: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingFixture {
    pub fn validate(&self) -> Result<()> {
        let d_e = self.header.d_e;
        if d_e == 0 {
            return Err(Error::invalid("header.d_e", "must be positive"));
        }
        for (key, v) in &self.embeddings {
            let what = format!("embeddings.{key}");
            if v.len() != d_e {
                return Err(Error::dim(what, d_e, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(what, "non-finite value"));
            }
            if self.header.normalized {
                let n = crate::tensor::norm(v);
                if (n - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::invalid(what, format!("norm {n} but header says normalized")));
                }
            }
        }
        for (key, v) in &self.expression_codes {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("expression_codes.{key}"), "non-finite value"));
            }
        }
        for key in &self.header.basis {
            if !self.embeddings.contains_key(key) {
                return Err(Error::MissingKey(key.clone()));
            }
        }
        if self.basis_keys().is_empty() {
            return Err(Error::invalid("fixture", "no basis prompts"));
        }
        Ok(())
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let f: EmbeddingFixture =
            crate::error::parse_json(text, source_name)?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn embedding(&self, key: &str) -> Result<Embedding> {
        let v = self
            .embeddings
            .get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        Embedding::new(v.clone())
    }

    pub fn expression_code(&self, key: &str) -> Result<&[f64]> {
        self.expression_codes
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn basis_keys(&self) -> Vec<String> {
        if self.header.basis.is_empty() {
            self.embeddings
                .keys()
                .filter(|k| k.starts_with("basis:"))
                .cloned()
                .collect()
        } else {
            self.header.basis.clone()
        }
    }

    pub fn subspace(&self) -> Result<ExpressionSubspace> {
        let basis = self
            .basis_keys()
            .iter()
            .map(|k| self.embedding(k))
            .collect::<Result<Vec<_>>>()?;
        ExpressionSubspace::new(basis)
    }
}
