//! Everything a training run needs, and the seeded desk-scale construction
//! of it.
//!
//! The desk surrogate is built so that the task is reachable: embedding space
//! has a shared "face" direction `f0`, one direction per expression and a
//! block of appearance directions. Prompt embeddings mix `f0` with their
//! expression direction; text embeddings add an appearance component. The
//! geometry path maps each expression basis vector onto the mix of expression
//! directions whose recipe uses it, so moving `α` along a recipe rotates the
//! image embedding toward that expression's prompt.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingFixture, ExpressionSubspace, FixtureHeader};
use crate::error::{Error, Result};
use crate::eval::{expression_table, AuProxyRule, AuRuleSet, ExpressionSpec};
use crate::mapper::MapperDims;
use crate::mesh::{self, synthesize_desk_model, MorphableModel, Region};
use crate::rng::{self, gaussian_tensor, gaussian_vec, streams};
use crate::surrogate::{SurrogateGenerator, SurrogateIdentityEncoder};
use crate::tensor::{self, Tensor};

/// Expressions in fixture basis order.
pub const EXPRESSIONS: [&str; 6] = [
    "smile",
    "close_eyes",
    "raise_brow",
    "frown_brow",
    "sad",
    "angry",
];

pub fn basis_key(expression: &str) -> String {
    format!("basis:{expression}")
}

pub fn text_key(expression: &str) -> String {
    format!("text:{expression}")
}

pub fn reference_key(expression: &str) -> String {
    format!("ref:{expression}")
}

/// Expression-basis weights that produce each expression on the desk model.
pub fn recipe(expression: &str, n_alpha: usize) -> Result<Vec<f64>> {
    let terms: &[(usize, f64)] = match expression {
        "smile" => &[(mesh::MOUTH_CORNER_UP, 1.0)],
        "close_eyes" => &[(mesh::EYELID_CLOSE, 1.0)],
        "raise_brow" => &[(mesh::BROW_UP, 1.0)],
        "frown_brow" => &[(mesh::BROW_DOWN, 1.0)],
        "sad" => &[(mesh::BROW_UP, 0.5), (mesh::BROW_DOWN, 1.0), (mesh::MOUTH_DOWN, 1.0)],
        "angry" => &[
            (mesh::EYELID_CLOSE, 0.6),
            (mesh::BROW_DOWN, 1.0),
            (mesh::EYELID_WIDEN, 1.5),
            (mesh::LIP_PRESS, 1.0),
        ],
        other => return Err(Error::Config(format!("unknown expression `{other}`"))),
    };
    let mut v = vec![0.0; n_alpha];
    for &(k, w) in terms {
        if k >= n_alpha {
            return Err(Error::invalid(
                "expression dimension",
                format!("{expression} needs basis vector {k} but only {n_alpha} exist"),
            ));
        }
        v[k] = w;
    }
    Ok(v)
}

/// Frozen surrogate networks and mapper shape, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateBundle {
    pub generator: SurrogateGenerator,
    pub identity: SurrogateIdentityEncoder,
    pub mapper_dims: MapperDims,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub model: MorphableModel,
    pub surrogates: SurrogateBundle,
    pub fixture: EmbeddingFixture,
    pub subspace: ExpressionSubspace,
    pub rules: AuRuleSet,
    pub specs: Vec<ExpressionSpec>,
}

impl Scene {
    pub fn new(
        model: MorphableModel,
        surrogates: SurrogateBundle,
        fixture: EmbeddingFixture,
        rules: AuRuleSet,
    ) -> Result<Self> {
        let d = surrogates.mapper_dims;
        let g = &surrogates.generator;
        let latent = d.n_w * d.d_w;
        if d.n_alpha != model.n_expression() {
            return Err(Error::dim("mapper n_alpha vs model expression basis", model.n_expression(), d.n_alpha));
        }
        if g.w_g.cols != latent {
            return Err(Error::dim("generator texture path columns", latent, g.w_g.cols));
        }
        if g.v_g.cols != 3 * model.n_vertices() {
            return Err(Error::dim("generator geometry path columns", 3 * model.n_vertices(), g.v_g.cols));
        }
        if surrogates.identity.projection.cols != latent {
            return Err(Error::dim("identity projection columns", latent, surrogates.identity.projection.cols));
        }
        if fixture.header.d_e != g.d_e() {
            return Err(Error::dim("fixture d_e vs generator", g.d_e(), fixture.header.d_e));
        }
        fixture.validate()?;
        rules.validate()?;
        for r in &rules.rules {
            if model.region_vertices(r.region).is_empty() {
                return Err(Error::Config(format!(
                    "rule {} targets region `{}` which has no vertices",
                    r.au_id, r.region
                )));
            }
        }
        let subspace = fixture.subspace()?;
        Ok(Scene {
            model,
            surrogates,
            fixture,
            subspace,
            rules,
            specs: expression_table(),
        })
    }

    pub fn dims(&self) -> MapperDims {
        self.surrogates.mapper_dims
    }

    pub fn generator(&self) -> &SurrogateGenerator {
        &self.surrogates.generator
    }

    pub fn identity(&self) -> &SurrogateIdentityEncoder {
        &self.surrogates.identity
    }
}

/// File names of a scene stored in a directory.
pub const MODEL_FILE: &str = "model.json";
pub const FIXTURE_FILE: &str = "fixture.json";
pub const RULES_FILE: &str = "au_rules.json";
pub const SURROGATES_FILE: &str = "surrogates.json";

impl SurrogateBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surrogates serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        crate::error::parse_json(&text, &path.display().to_string())
    }
}

impl Scene {
    /// Writes the four scene files into `dir` and returns their paths.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            (MODEL_FILE, self.model.to_json()),
            (FIXTURE_FILE, self.fixture.to_json()),
            (RULES_FILE, serde_json::to_string_pretty(&self.rules).expect("rules serialize")),
            (SURROGATES_FILE, self.surrogates.to_json()),
        ];
        let mut out = Vec::with_capacity(files.len());
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Scene::new(
            MorphableModel::load(&dir.join(MODEL_FILE))?,
            SurrogateBundle::load(&dir.join(SURROGATES_FILE))?,
            EmbeddingFixture::load(&dir.join(FIXTURE_FILE))?,
            AuRuleSet::load(&dir.join(RULES_FILE))?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskConfig {
    pub seed: u64,
    pub n_v: usize,
    pub n_shape: usize,
    pub n_expression: usize,
    pub d_e: usize,
    pub n_w: usize,
    pub d_w: usize,
    pub d_id: usize,
    pub d_att: usize,
    pub hidden: usize,
    /// Scale of the stored reference expression codes (`ref:*`).
    pub reference_strength: f64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            seed: 1,
            n_v: 64,
            n_shape: 4,
            n_expression: 8,
            d_e: 32,
            n_w: 6,
            d_w: 32,
            d_id: 16,
            d_att: 16,
            hidden: 32,
            reference_strength: 0.15,
        }
    }
}

const PROMPT_FACE: f64 = 0.6;
const PROMPT_EXPRESSION: f64 = 0.8;
const PROMPT_NOISE: f64 = 0.05;
const TEXT_APPEARANCE: f64 = 0.4;
const TEXT_NOISE: f64 = 0.03;
const GEOMETRY_GAIN: f64 = 1.5;
const GEOMETRY_NOISE: f64 = 0.002;
const TEXTURE_RANDOM: f64 = 0.33;
const TEXTURE_EXPRESSION: f64 = 0.6;
const BIAS_NOISE: f64 = 0.05;
const IDENTITY_RANDOM: f64 = 0.2;
/// AU thresholds are this fraction of the dominant basis vector's displacement.
pub const AU_THRESHOLD_FRACTION: f64 = 0.3;

pub fn build_desk(cfg: &DeskConfig) -> Result<Scene> {
    let n_x = EXPRESSIONS.len();
    if cfg.n_expression < mesh::STRUCTURED_FIELDS {
        return Err(Error::invalid(
            "n_expression",
            format!("the desk scene needs at least {} expression dims", mesh::STRUCTURED_FIELDS),
        ));
    }
    let min_d_e = 1 + 2 * n_x + cfg.n_expression;
    if cfg.d_e < min_d_e {
        return Err(Error::invalid("d_e", format!("must be at least {min_d_e}")));
    }
    if cfg.n_w == 0 || cfg.d_w == 0 || cfg.d_id == 0 {
        return Err(Error::invalid("latent dimensions", "must be positive"));
    }
    let model = synthesize_desk_model(cfg.seed, cfg.n_v, cfg.n_shape, cfg.n_expression)?;
    let n_alpha = cfg.n_expression;
    let latent = cfg.n_w * cfg.d_w;

    // orthonormal frame: f0, one direction per expression, appearance block
    let mut frame_rng = rng::stream(cfg.seed, streams::FRAME);
    let frame = orthonormal_rows(&gaussian_tensor(&mut frame_rng, cfg.d_e, cfg.d_e, 1.0))?;
    let f0 = frame.row(0).to_vec();
    let fx = |i: usize| frame.row(1 + i);
    let app = |i: usize| frame.row(1 + n_x + i);
    let n_app = cfg.d_e - 1 - n_x;

    let mut prompt_rng = rng::stream(cfg.seed, streams::PROMPTS);
    let mut embeddings = BTreeMap::new();
    let mut basis_vecs = Vec::new();
    for (i, name) in EXPRESSIONS.iter().enumerate() {
        let noise = gaussian_vec(&mut prompt_rng, cfg.d_e);
        let v: Vec<f64> = (0..cfg.d_e)
            .map(|k| PROMPT_FACE * f0[k] + PROMPT_EXPRESSION * fx(i)[k] + PROMPT_NOISE * noise[k])
            .collect();
        let v = normalize(v);
        embeddings.insert(basis_key(name), v.clone());
        basis_vecs.push(v);
    }
    for (i, name) in EXPRESSIONS.iter().enumerate() {
        let noise = gaussian_vec(&mut prompt_rng, cfg.d_e);
        let v: Vec<f64> = (0..cfg.d_e)
            .map(|k| basis_vecs[i][k] + TEXT_APPEARANCE * app(i)[k] + TEXT_NOISE * noise[k])
            .collect();
        embeddings.insert(text_key(name), normalize(v));
    }
    let mut expression_codes = BTreeMap::new();
    for name in EXPRESSIONS {
        let code = recipe(name, n_alpha)?
            .into_iter()
            .map(|c| c * cfg.reference_strength)
            .collect();
        expression_codes.insert(reference_key(name), code);
    }
    let fixture = EmbeddingFixture {
        header: FixtureHeader {
            d_e: cfg.d_e,
            normalized: true,
            encoder: Some("desk-surrogate".into()),
            basis: EXPRESSIONS.iter().map(|n| basis_key(n)).collect(),
        },
        embeddings,
        expression_codes,
    };

    // geometry path: basis vector j maps to the mix of expression
    // directions whose recipes use it; unused basis vectors map to
    // appearance directions that no prompt contains
    let mut cols = Tensor::zeros(n_alpha, cfg.d_e);
    for (i, name) in EXPRESSIONS.iter().enumerate() {
        let r = recipe(name, n_alpha)?;
        for (j, rj) in r.iter().enumerate() {
            for k in 0..cfg.d_e {
                cols.data[j * cfg.d_e + k] += rj * fx(i)[k];
            }
        }
    }
    for j in 0..n_alpha {
        let row = cols.row_mut(j);
        let n = tensor::norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        } else {
            row.copy_from_slice(app(n_x + j));
        }
    }
    let e = model.expression_basis();
    let gram = e.matmul(e, true)?;
    let dual = tensor::solve(&gram, e)?;
    let mut sur_rng = rng::stream(cfg.seed, streams::SURROGATE);
    let v_g = cols
        .transpose()
        .matmul(&dual, false)?
        .scale(GEOMETRY_GAIN)
        .add(&gaussian_tensor(&mut sur_rng, cfg.d_e, 3 * model.n_vertices(), GEOMETRY_NOISE))?;

    // texture path: a weak random map into appearance directions plus a
    // token-uniform pattern per expression's appearance direction
    let app_block = Tensor::from_vec(n_app, cfg.d_e, (0..n_app).flat_map(|i| app(i).to_vec()).collect())?;
    let g = gaussian_tensor(&mut sur_rng, n_app, latent, 1.0);
    let mut w_g = app_block
        .transpose()
        .matmul(&g, false)?
        .scale(TEXTURE_RANDOM / (latent as f64).sqrt());
    let mut patterns = Tensor::zeros(n_x, latent);
    for i in 0..n_x {
        let base = gaussian_vec(&mut sur_rng, cfg.d_w);
        let tiled: Vec<f64> = (0..cfg.n_w).flat_map(|_| base.iter().copied()).collect();
        patterns.row_mut(i).copy_from_slice(&normalize(tiled));
    }
    let first_app = Tensor::from_vec(n_x, cfg.d_e, (0..n_x).flat_map(|i| app(i).to_vec()).collect())?;
    w_g.add_assign(&first_app.transpose().matmul(&patterns, false)?.scale(TEXTURE_EXPRESSION));

    let bias_noise = gaussian_vec(&mut sur_rng, cfg.d_e);
    let bias = Tensor::row_vector((0..cfg.d_e).map(|k| f0[k] + BIAS_NOISE * bias_noise[k]).collect());
    let generator = SurrogateGenerator::new(w_g, v_g, bias, cfg.seed)?;

    // identity: dominated by the token mean of w
    let mut id_rng = rng::stream(cfg.seed, streams::IDENTITY);
    let shared = gaussian_tensor(&mut id_rng, cfg.d_id, cfg.d_w, 1.0);
    let spread = gaussian_tensor(&mut id_rng, cfg.d_id, latent, IDENTITY_RANDOM / (latent as f64).sqrt());
    let mut projection = spread;
    let s = 1.0 / (cfg.n_w as f64 * (cfg.d_w as f64).sqrt());
    for r in 0..cfg.d_id {
        for t in 0..cfg.n_w {
            for c in 0..cfg.d_w {
                projection.data[r * latent + t * cfg.d_w + c] += s * shared.get(r, c);
            }
        }
    }
    let identity = SurrogateIdentityEncoder::new(projection, cfg.seed)?;

    let rules = calibrate_rules(&model)?;
    let surrogates = SurrogateBundle {
        generator,
        identity,
        mapper_dims: MapperDims {
            n_w: cfg.n_w,
            d_w: cfg.d_w,
            n_alpha,
            d_att: cfg.d_att,
            hidden: cfg.hidden,
        },
    };
    Scene::new(model, surrogates, fixture, rules)
}

/// Desk AU rules with thresholds set from the dominant basis vectors.
pub fn calibrate_rules(model: &MorphableModel) -> Result<AuRuleSet> {
    let brow_down = {
        let n = (0.6f64 * 0.6 + 0.8 * 0.8).sqrt();
        [0.0, -0.6 / n, 0.8 / n]
    };
    let table: [(&str, Region, [f64; 3], f64, usize); 10] = [
        ("AU_01", Region::Brow, [0.0, 1.0, 0.0], 1.0, mesh::BROW_UP),
        ("AU_02", Region::Brow, [0.0, 1.0, 0.0], 1.0, mesh::BROW_UP),
        ("AU_04", Region::Brow, brow_down, 1.0, mesh::BROW_DOWN),
        ("AU_05", Region::Eyelid, [0.0, 1.0, 0.0], 1.0, mesh::EYELID_WIDEN),
        ("AU_06", Region::Mouth, [0.0, 0.0, 1.0], 1.0, mesh::MOUTH_CORNER_UP),
        ("AU_07", Region::Eyelid, [0.0, 0.0, 1.0], -1.0, mesh::EYELID_CLOSE),
        ("AU_12", Region::Mouth, [0.0, 1.0, 0.0], 1.0, mesh::MOUTH_CORNER_UP),
        ("AU_15", Region::Mouth, [0.0, 1.0, 0.0], -1.0, mesh::MOUTH_DOWN),
        ("AU_23", Region::Mouth, [0.0, 0.0, 1.0], -1.0, mesh::LIP_PRESS),
        ("AU_43", Region::Eyelid, [0.0, 1.0, 0.0], -1.0, mesh::EYELID_CLOSE),
    ];
    let template = model.template_mesh();
    let mut rules = Vec::new();
    for (id, region, axis, sign, dominant) in table {
        let mut unit = vec![0.0; model.n_expression()];
        unit[dominant] = 1.0;
        let activated = model.generate_mesh(&mesh::FlameParams::with_alpha(model, unit))?;
        let mut rule = AuProxyRule {
            au_id: id.to_string(),
            region,
            axis,
            threshold: 1.0,
            sign,
        };
        let d = rule.displacement(&activated, &template, model.region_labels())?;
        if d <= 0.0 {
            return Err(Error::invalid(
                format!("rule {id}"),
                format!("dominant basis vector {dominant} moves against the rule axis"),
            ));
        }
        rule.threshold = AU_THRESHOLD_FRACTION * d;
        rules.push(rule);
    }
    AuRuleSet::new(rules)
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = tensor::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Modified Gram-Schmidt over the rows of a full-rank square matrix.
fn orthonormal_rows(m: &Tensor) -> Result<Tensor> {
    let mut out = m.clone();
    for i in 0..out.rows {
        for j in 0..i {
            let c = tensor::dot(out.row(i), out.row(j));
            let prev = out.row(j).to_vec();
            for (x, p) in out.row_mut(i).iter_mut().zip(prev) {
                *x -= c * p;
            }
        }
        let n = tensor::norm(out.row(i));
        if n < 1e-10 {
            return Err(Error::Degenerate("random frame is rank deficient".into()));
        }
        out.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}
