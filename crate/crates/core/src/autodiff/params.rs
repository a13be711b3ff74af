use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// An ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                rows: t.rows,
                cols: t.cols,
                data: t.data.clone(),
            })
            .collect()
    }

    pub fn from_named(named: &[NamedTensor]) -> Result<Self> {
        let mut set = ParamSet::new();
        for (i, nt) in named.iter().enumerate() {
            let t = Tensor::from_vec(nt.rows, nt.cols, nt.data.clone()).map_err(|_| {
                Error::invalid(
                    format!("tensors[{i}] ({})", nt.name),
                    format!(
                        "{} values do not fill a {}x{} tensor",
                        nt.data.len(),
                        nt.rows,
                        nt.cols
                    ),
                )
            })?;
            if set.id_of(&nt.name).is_some() {
                return Err(Error::invalid(
                    format!("tensors[{i}]"),
                    format!("duplicate tensor name `{}`", nt.name),
                ));
            }
            set.push(nt.name.clone(), t);
        }
        Ok(set)
    }
}
