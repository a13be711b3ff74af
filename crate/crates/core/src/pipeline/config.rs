use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::BasisMode;
use crate::error::{Error, Result};
use crate::scene;

/// Loss weights, augmentation power and training schedule for one expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lambda_clip: f64,
    pub lambda_m: f64,
    pub lambda_id: f64,
    pub gamma: f64,
    pub steps: usize,
    pub samples_per_step: usize,
    pub seed: u64,
    pub expression_name: String,
    /// Fixture key of the target text embedding; `text:<expression>` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_text_key: Option<String>,
    /// Fixture key of the reference expression code; `ref:<expression>` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_alpha_key: Option<String>,
    /// Start latent draws from the reference code. Off reproduces the
    /// no-reference ablation (α starts from jitter around zero).
    pub use_reference: bool,
    pub learning_rate: f64,
    /// Number of distinct latent draws cycled through during training.
    pub pool_size: usize,
    /// Standard deviation of the texture latent draws.
    pub latent_scale: f64,
    /// Standard deviation of the Gaussian jitter added to α.
    pub alpha_jitter: f64,
    pub basis_mode: BasisMode,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lambda_clip: 1.0,
            lambda_m: 0.05,
            lambda_id: 0.2,
            gamma: 1.0,
            steps: 300,
            samples_per_step: 8,
            seed: 1,
            expression_name: "smile".into(),
            target_text_key: None,
            reference_alpha_key: None,
            use_reference: true,
            learning_rate: 1e-3,
            pool_size: 64,
            latent_scale: 0.3,
            alpha_jitter: 0.05,
            basis_mode: BasisMode::Orthonormal,
        }
    }
}

impl OptimConfig {
    pub fn for_expression(expression: &str) -> Self {
        OptimConfig {
            expression_name: expression.to_string(),
            ..OptimConfig::default()
        }
    }

    pub fn target_key(&self) -> String {
        self.target_text_key
            .clone()
            .unwrap_or_else(|| scene::text_key(&self.expression_name))
    }

    pub fn reference_key(&self) -> String {
        self.reference_alpha_key
            .clone()
            .unwrap_or_else(|| scene::reference_key(&self.expression_name))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_clip", self.lambda_clip),
            ("lambda_m", self.lambda_m),
            ("lambda_id", self.lambda_id),
            ("gamma", self.gamma),
            ("latent_scale", self.latent_scale),
            ("alpha_jitter", self.alpha_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.samples_per_step < 1 {
            return Err(Error::Config("samples_per_step must be at least 1".into()));
        }
        if self.pool_size < 1 {
            return Err(Error::Config("pool_size must be at least 1".into()));
        }
        if self.expression_name.is_empty() {
            return Err(Error::Config("expression_name is empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let cfg: OptimConfig = crate::error::parse_json(text, source_name).map_err(|e| match e {
            Error::Parse {
                source_name,
                location,
                message,
            } => Error::Config(format!("{source_name} at {location}: {message}")),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
