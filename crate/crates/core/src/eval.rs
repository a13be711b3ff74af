//! Geometric action-unit proxy, CLIP-style score and rank statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Region};

/// Fires when the mean displacement of a region, projected on
/// `sign · axis`, strictly exceeds `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuProxyRule {
    pub au_id: String,
    pub region: Region,
    pub axis: [f64; 3],
    pub threshold: f64,
    pub sign: f64,
}

impl AuProxyRule {
    pub fn validate(&self) -> Result<()> {
        let what = format!("rule {}", self.au_id);
        let n = crate::tensor::norm(&self.axis);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(what, format!("axis norm {n} is not 1")));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(what, format!("threshold {} must be positive", self.threshold)));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::invalid(what, format!("sign {} must be +1 or -1", self.sign)));
        }
        Ok(())
    }

    /// Mean region displacement along `sign · axis`.
    pub fn displacement(&self, mesh: &Mesh, template: &Mesh, labels: &[Region]) -> Result<f64> {
        if mesh.vertices.shape() != template.vertices.shape() {
            return Err(Error::dim(
                "mesh vs template",
                format!("{}x3", template.n_vertices()),
                format!("{}x3", mesh.n_vertices()),
            ));
        }
        if labels.len() != mesh.n_vertices() {
            return Err(Error::dim("region labels", mesh.n_vertices(), labels.len()));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, _) in labels.iter().enumerate().filter(|(_, r)| **r == self.region) {
            let (a, b) = (mesh.vertex(i), template.vertex(i));
            sum += (0..3).map(|k| (a[k] - b[k]) * self.axis[k]).sum::<f64>();
            count += 1;
        }
        if count == 0 {
            return Err(Error::Config(format!(
                "rule {} targets region `{}` which has no vertices",
                self.au_id, self.region
            )));
        }
        Ok(self.sign * sum / count as f64)
    }
}

pub fn au_fire(rule: &AuProxyRule, mesh: &Mesh, template: &Mesh, labels: &[Region]) -> Result<bool> {
    Ok(rule.displacement(mesh, template, labels)? > rule.threshold)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuRuleSet {
    pub rules: Vec<AuProxyRule>,
}

impl AuRuleSet {
    pub fn new(rules: Vec<AuProxyRule>) -> Result<Self> {
        let set = AuRuleSet { rules };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rules.iter().enumerate() {
            r.validate()?;
            if self.rules[..i].iter().any(|o| o.au_id == r.au_id) {
                return Err(Error::invalid("AU rules", format!("duplicate id {}", r.au_id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, au_id: &str) -> Result<&AuProxyRule> {
        self.rules
            .iter()
            .find(|r| r.au_id == au_id)
            .ok_or_else(|| Error::Config(format!("no AU rule for {au_id}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: AuRuleSet =
            crate::error::parse_json(&text, &path.display().to_string())?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("rules serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// An expression counts as present when all of its AUs fire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSpec {
    pub name: String,
    pub required: Vec<String>,
}

impl ExpressionSpec {
    pub fn new(name: &str, required: &[&str]) -> Self {
        ExpressionSpec {
            name: name.to_string(),
            required: required.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Smallest ratio of displacement to threshold over the required AUs.
    /// Above 1 means every AU fires.
    pub fn margin(&self, rules: &AuRuleSet, mesh: &Mesh, template: &Mesh, labels: &[Region]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for id in &self.required {
            let rule = rules.get(id)?;
            worst = worst.min(rule.displacement(mesh, template, labels)? / rule.threshold);
        }
        Ok(worst)
    }

    pub fn present(&self, rules: &AuRuleSet, mesh: &Mesh, template: &Mesh, labels: &[Region]) -> Result<bool> {
        for id in &self.required {
            if !au_fire(rules.get(id)?, mesh, template, labels)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// The AU sets per expression. Eye closure (AU 43) has no detector in the
/// usual facial-behaviour toolkits; here it gets a dedicated eyelid rule.
pub fn expression_table() -> Vec<ExpressionSpec> {
    vec![
        ExpressionSpec::new("smile", &["AU_06", "AU_12"]),
        ExpressionSpec::new("angry", &["AU_04", "AU_05", "AU_07", "AU_23"]),
        ExpressionSpec::new("sad", &["AU_01", "AU_04", "AU_15"]),
        ExpressionSpec::new("raise_brow", &["AU_02"]),
        ExpressionSpec::new("frown_brow", &["AU_04"]),
        ExpressionSpec::new("close_eyes", &["AU_43"]),
    ]
}

pub fn find_spec<'a>(specs: &'a [ExpressionSpec], name: &str) -> Result<&'a ExpressionSpec> {
    specs
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown expression `{name}`")))
}

/// Fraction of meshes showing the expression.
pub fn au_accuracy(
    spec: &ExpressionSpec,
    rules: &AuRuleSet,
    meshes: &[Mesh],
    template: &Mesh,
    labels: &[Region],
) -> Result<f64> {
    if meshes.is_empty() {
        return Err(Error::invalid("AU batch", "empty"));
    }
    let mut hits = 0usize;
    for m in meshes {
        if spec.present(rules, m, template, labels)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / meshes.len() as f64)
}

/// `100 · max(0, cos)`.
pub fn clip_score(image: &Embedding, text: &Embedding) -> Result<f64> {
    Ok(100.0 * cosine(image, text)?.max(0.0))
}

/// Spearman rank correlation with average ranks for ties. When either
/// sequence is constant the correlation is undefined and 0 is returned.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("spearman sequences", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::invalid("spearman sequences", "need at least 2 points"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn ties_get_average_rank() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn clip_score_scaling() {
        let a = Embedding::new(vec![1.0, 0.0]).unwrap();
        let b = Embedding::new(vec![0.0, 2.0]).unwrap();
        let c = Embedding::new(vec![0.25, 0.25f64.mul_add(-0.25, 1.0).sqrt()]).unwrap();
        assert_eq!(clip_score(&a, &a).unwrap(), 100.0);
        assert_eq!(clip_score(&a, &b).unwrap(), 0.0);
        assert!((clip_score(&a, &c).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn rule_validation() {
        let mut r = AuProxyRule {
            au_id: "AU_02".into(),
            region: Region::Brow,
            axis: [0.0, 1.0, 0.0],
            threshold: 0.01,
            sign: 1.0,
        };
        assert!(r.validate().is_ok());
        r.threshold = 0.0;
        assert!(r.validate().is_err());
        r.threshold = 0.01;
        r.axis = [0.0, 2.0, 0.0];
        assert!(r.validate().is_err());
    }

    #[test]
    fn table_has_six_expressions() {
        let t = expression_table();
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|s| !s.required.is_empty()));
    }
}
