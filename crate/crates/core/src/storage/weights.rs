use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HeaderCursor, FORMAT_VERSION};
use crate::error::{Error, IoContext, Result};

const WEIGHTS_MAGIC: &[u8; 4] = b"AWTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gcn,
    Sage,
    Gin,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Gcn => 0,
            ModelKind::Sage => 1,
            ModelKind::Gin => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Gcn),
            1 => Some(ModelKind::Sage),
            2 => Some(ModelKind::Gin),
            _ => None,
        }
    }

    /// Width of a hot-store slot for an embedding of width `dim`.
    pub fn agg_dim(self, dim: usize) -> usize {
        match self {
            ModelKind::Sage => 2 * dim,
            ModelKind::Gcn | ModelKind::Gin => dim,
        }
    }

    /// Whether a vertex's own row is delivered to itself as an extra
    /// pending unit.
    pub fn has_self_term(self) -> bool {
        !matches!(self, ModelKind::Gcn)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "sage" => Ok(ModelKind::Sage),
            "gin" => Ok(ModelKind::Gin),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Gin => "gin",
        })
    }
}

/// Dense layer: `out = act(x · Wᵀ + b)` with `W` stored `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerWeights {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            in_dim: dim,
            out_dim: dim,
            weight,
            bias: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub kind: ModelKind,
    pub gin_epsilon: f32,
    pub layers: Vec<LayerWeights>,
}

impl ModelWeights {
    /// Uniform `±1/sqrt(in_dim)` initialisation. `dims` lists embedding
    /// widths: input feature dim, hidden dims..., output dim.
    pub fn random(kind: ModelKind, dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let in_dim = kind.agg_dim(w[0]);
                let out_dim = w[1];
                let bound = 1.0 / (in_dim as f32).sqrt();
                LayerWeights {
                    in_dim,
                    out_dim,
                    weight: (0..in_dim * out_dim)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    bias: (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Self {
            kind,
            gin_epsilon: 0.0,
            layers,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Embedding width consumed by `layer` (before SAGE concatenation).
    pub fn input_dim(&self, layer: usize) -> usize {
        match self.kind {
            ModelKind::Sage => self.layers[layer].in_dim / 2,
            _ => self.layers[layer].in_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidWeights("no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::InvalidWeights(format!("layer {l} has a zero dimension")));
            }
            if layer.weight.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::InvalidWeights(format!("layer {l} buffer sizes")));
            }
            if self.kind == ModelKind::Sage && layer.in_dim % 2 != 0 {
                return Err(Error::InvalidWeights(format!(
                    "SAGE layer {l} input dim {} is not a concatenation",
                    layer.in_dim
                )));
            }
            if l > 0 && self.input_dim(l) != self.layers[l - 1].out_dim {
                return Err(Error::InvalidWeights(format!(
                    "layer {l} expects embedding dim {} but layer {} emits {}",
                    self.input_dim(l),
                    l - 1,
                    self.layers[l - 1].out_dim
                )));
            }
        }
        Ok(())
    }
}

pub fn write_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    weights.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(weights.kind.tag());
    buf.extend_from_slice(&(weights.layers.len() as u32).to_le_bytes());
    buf.extend_from_slice(&weights.gin_epsilon.to_le_bytes());
    for layer in &weights.layers {
        buf.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        for x in layer.weight.iter().chain(&layer.bias) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).at(path)
}

pub fn read_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path).at(path)?;
    let mut cur = HeaderCursor::new(&bytes, path);
    cur.magic(WEIGHTS_MAGIC)?;
    cur.version()?;
    let tag = cur.u8()?;
    let kind = ModelKind::from_tag(tag)
        .ok_or_else(|| Error::InvalidWeights(format!("model kind tag {tag}")))?;
    let layer_count = cur.u32()? as usize;
    let gin_epsilon = cur.f32()?;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let in_dim = cur.u32()? as usize;
        let out_dim = cur.u32()? as usize;
        let need = cur.position() + (in_dim * out_dim + out_dim) * 4;
        if need > bytes.len() {
            return Err(super::truncated(path, need as u64, bytes.len() as u64));
        }
        let weight = (0..in_dim * out_dim)
            .map(|_| cur.f32())
            .collect::<Result<_>>()?;
        let bias = (0..out_dim).map(|_| cur.f32()).collect::<Result<_>>()?;
        layers.push(LayerWeights {
            in_dim,
            out_dim,
            weight,
            bias,
        });
    }
    let weights = ModelWeights {
        kind,
        gin_epsilon,
        layers,
    };
    weights.validate()?;
    Ok(weights)
}
