use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{feature_names, schema_dim, FeatureVector, RD_SCHEMA, RI_SCHEMA};
use super::Variant;
use crate::error::{Error, Result};
use crate::expansion::GeneratorTag;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-feature affine rescaling fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]], dim: usize) -> Standardizer {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// `width` rows of input-dimension weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Linear or one-hidden-layer (tanh) scorer. Lower scores mean better expansions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub format_version: u32,
    pub variant: Variant,
    pub schema: String,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub generator_tag: Option<GeneratorTag>,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    #[serde(default)]
    pub hidden: Option<HiddenLayer>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ScorerModel {
    /// All-zero linear model for `variant`.
    pub fn zeros(variant: Variant) -> ScorerModel {
        let schema = variant.schema();
        ScorerModel {
            format_version: MODEL_FORMAT_VERSION,
            variant,
            schema: schema.to_owned(),
            feature_names: feature_names(variant).into_iter().map(str::to_owned).collect(),
            generator_tag: None,
            standardizer: None,
            hidden: None,
            weights: vec![0.0; schema_dim(schema).unwrap()],
            bias: 0.0,
        }
    }

    pub fn linear(variant: Variant, weights: Vec<f64>, bias: f64) -> Result<ScorerModel> {
        let model = ScorerModel {
            weights,
            bias,
            ..ScorerModel::zeros(variant)
        };
        model.validate()?;
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        schema_dim(&self.schema).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let expected_schema = self.variant.schema();
        if self.schema != expected_schema {
            return Err(Error::SchemaMismatch {
                expected: expected_schema.to_owned(),
                found: self.schema.clone(),
            });
        }
        let dim = self.input_dim();
        let out_dim = match &self.hidden {
            Some(h) => {
                if h.weights.is_empty() || h.weights.len() != h.bias.len() || h.weights.iter().any(|r| r.len() != dim) {
                    return Err(Error::invalid("hidden layer shape does not match the schema"));
                }
                h.weights.len()
            }
            None => dim,
        };
        if self.weights.len() != out_dim {
            return Err(Error::invalid(format!(
                "expected {out_dim} output weights, got {}",
                self.weights.len()
            )));
        }
        if let Some(s) = &self.standardizer {
            if s.mean.len() != dim || s.scale.len() != dim || s.scale.iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid("standardizer shape does not match the schema"));
            }
        }
        if !self.params().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("model weights must be finite"));
        }
        Ok(())
    }

    fn check_schema(&self, f: &FeatureVector) -> Result<()> {
        if f.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.clone(),
                found: f.schema.to_owned(),
            });
        }
        Ok(())
    }

    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        self.check_schema(f)?;
        Ok(self.score_values(&f.values))
    }

    pub(crate) fn prepare(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        }
    }

    pub(crate) fn score_values(&self, x: &[f64]) -> f64 {
        let x = self.prepare(x);
        self.forward(&x, None)
    }

    /// Forward pass on prepared input; optionally accumulates `scale * dscore/dparams`.
    pub(crate) fn forward(&self, x: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        match &self.hidden {
            None => {
                let s = dot(&self.weights, x) + self.bias;
                if let Some((g, c)) = grad {
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += c * xi;
                    }
                    g[x.len()] += c;
                }
                s
            }
            Some(h) => {
                let act: Vec<f64> = h
                    .weights
                    .iter()
                    .zip(&h.bias)
                    .map(|(w, b)| (dot(w, x) + b).tanh())
                    .collect();
                let s = dot(&self.weights, &act) + self.bias;
                if let Some((g, c)) = grad {
                    let (dim, width) = (x.len(), act.len());
                    for j in 0..width {
                        let back = c * self.weights[j] * (1.0 - act[j] * act[j]);
                        for k in 0..dim {
                            g[j * dim + k] += back * x[k];
                        }
                        g[width * dim + j] += back;
                        g[width * dim + width + j] += c * act[j];
                    }
                    g[width * dim + 2 * width] += c;
                }
                s
            }
        }
    }

    /// Trainable parameters, flattened: hidden weights (row-major), hidden
    /// bias, output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        if let Some(h) = &self.hidden {
            p.extend(h.weights.iter().flatten());
            p.extend(&h.bias);
        }
        p.extend(&self.weights);
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        if let Some(h) = &mut self.hidden {
            for row in &mut h.weights {
                for w in row.iter_mut() {
                    *w = it.next().unwrap();
                }
            }
            for b in &mut h.bias {
                *b = it.next().unwrap();
            }
        }
        for w in &mut self.weights {
            *w = it.next().unwrap();
        }
        self.bias = it.next().unwrap();
        debug_assert!(it.next().is_none());
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScorerModel> {
        let m: ScorerModel = read_json(path.as_ref())?;
        m.check_version()?;
        m.validate()?;
        Ok(m)
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {}",
                self.format_version
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Query rerankers keyed by generator tag, with an optional shared fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerSet {
    pub format_version: u32,
    #[serde(default)]
    pub shared: Option<ScorerModel>,
    #[serde(default)]
    pub per_tag: BTreeMap<GeneratorTag, ScorerModel>,
}

impl RerankerSet {
    pub fn shared(model: ScorerModel) -> Self {
        RerankerSet {
            format_version: MODEL_FORMAT_VERSION,
            shared: Some(model),
            per_tag: BTreeMap::new(),
        }
    }

    pub fn per_tag(models: BTreeMap<GeneratorTag, ScorerModel>) -> Self {
        RerankerSet {
            format_version: MODEL_FORMAT_VERSION,
            shared: None,
            per_tag: models,
        }
    }

    pub fn for_tag(&self, tag: Option<GeneratorTag>) -> Result<&ScorerModel> {
        tag.and_then(|t| self.per_tag.get(&t))
            .or(self.shared.as_ref())
            .ok_or_else(|| Error::MissingModel(tag.map_or("<shared>".into(), |t| t.to_string())))
    }

    pub fn variant(&self) -> Option<Variant> {
        self.shared
            .as_ref()
            .or_else(|| self.per_tag.values().next())
            .map(|m| m.variant)
    }

    pub fn models(&self) -> impl Iterator<Item = &ScorerModel> {
        self.shared.iter().chain(self.per_tag.values())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RerankerSet> {
        let set: RerankerSet = read_json(path.as_ref())?;
        if set.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {}",
                set.format_version
            )));
        }
        for m in set.models() {
            m.check_version()?;
            m.validate()?;
        }
        Ok(set)
    }
}

impl Variant {
    pub fn schema(self) -> &'static str {
        match self {
            Variant::Ri => RI_SCHEMA,
            Variant::Rd => RD_SCHEMA,
        }
    }
}
