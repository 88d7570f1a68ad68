//! Binary checkpoints: named tensors plus the config text they were trained
//! with.
//!
//! ```text
//! "SWVC"  u32 version  u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 rank, u32 extents[rank], f32 values
//! u32 config_len, config (UTF-8)
//! ```
//!
//! Integers and floats are little-endian.

use std::path::Path;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::generator::LatentStack;
use crate::nn::{Activation, LayerKind, LayerParams};
use crate::pipeline::{Featurizer, KMeansFeaturizer};
use crate::pnm::{read_file, write_atomic};
use crate::segmenter::{InputMode, Segmenter, SegmenterKind, SegmenterSpec};
use crate::swav::{ProjectionHead, PrototypeBank, SwavModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SWVC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub config: String,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::contract(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push((name.into(), t.clone()));
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected SWVC".into(),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported format version {version}"),
            });
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let at = r.pos;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| r.error("tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Format {
                offset: at,
                message: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        let config = r.string()?;
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after config"));
        }
        Ok(Self { tensors, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                message: format!("truncated: need {n} more bytes"),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: "string is not UTF-8".into(),
        })
    }
}

/// Stores `model` as `head.weights`, `head.bias`, `prototypes`.
pub fn push_swav(ckpt: &mut Checkpoint, model: &SwavModel) {
    ckpt.push("head.weights", &model.head.layer.weights);
    ckpt.push("head.bias", &model.head.layer.bias);
    ckpt.push("prototypes", &model.prototypes.c);
}

pub fn read_swav(ckpt: &Checkpoint, temperature: f64, leaky_slope: f64) -> Result<SwavModel> {
    let layer = LayerParams::dense(
        ckpt.get("head.weights")?.clone(),
        ckpt.get("head.bias")?.clone(),
        Activation::LeakyRelu(leaky_slope),
    )?;
    let c = ckpt.get("prototypes")?.clone();
    if c.rank() != 2 || c.dims()[0] != layer.out_width() {
        return Err(Error::contract("prototype bank does not match the head"));
    }
    Ok(SwavModel {
        head: ProjectionHead { layer },
        prototypes: PrototypeBank { c },
        temperature,
    })
}

pub fn push_segmenter(ckpt: &mut Checkpoint, seg: &Segmenter) {
    for (i, l) in seg.layers.iter().enumerate() {
        ckpt.push(format!("seg.{i}.weights"), &l.weights);
        ckpt.push(format!("seg.{i}.bias"), &l.bias);
    }
}

pub fn read_segmenter(ckpt: &Checkpoint, spec: &SegmenterSpec) -> Result<Segmenter> {
    let n = spec.layer_count;
    let layers = (0..n)
        .map(|i| {
            let act = if i + 1 == n {
                Activation::Softmax
            } else {
                Activation::LeakyRelu(spec.leaky_slope)
            };
            let w = ckpt.get(&format!("seg.{i}.weights"))?.clone();
            let b = ckpt.get(&format!("seg.{i}.bias"))?.clone();
            match spec.kind {
                SegmenterKind::Mlp => LayerParams::dense(w, b, act),
                SegmenterKind::Fcn => LayerParams::conv3x3(w, b, act),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = match spec.kind {
        SegmenterKind::Mlp => LayerKind::Dense,
        SegmenterKind::Fcn => LayerKind::Conv3x3,
    };
    debug_assert!(layers.iter().all(|l| l.kind == expected));
    if layers.last().map(LayerParams::out_width) != Some(spec.class_count) {
        return Err(Error::contract(
            "segmenter output width does not match the class count",
        ));
    }
    Ok(Segmenter {
        spec: spec.clone(),
        layers,
    })
}

/// Stores whatever tensors `f` needs; the raw featurizer has none.
pub fn push_featurizer(ckpt: &mut Checkpoint, f: &Featurizer) {
    match f {
        Featurizer::Raw => {}
        Featurizer::Projected(m) | Featurizer::Assignment(m) => push_swav(ckpt, m),
        Featurizer::KMeans(k) => ckpt.push("kmeans.centroids", &k.centroids),
    }
}

/// K-means when centroids are present, otherwise `segmenter.input` decides.
pub fn read_featurizer(ckpt: &Checkpoint, cfg: &PipelineConfig) -> Result<Featurizer> {
    if ckpt.contains("kmeans.centroids") {
        return Ok(Featurizer::KMeans(KMeansFeaturizer {
            centroids: ckpt.get("kmeans.centroids")?.clone(),
        }));
    }
    let model = || read_swav(ckpt, cfg.swav.temperature, cfg.swav.leaky_slope);
    Ok(match cfg.segmenter.input_mode {
        InputMode::Raw => Featurizer::Raw,
        InputMode::Projected => Featurizer::Projected(model()?),
        InputMode::Assignment => Featurizer::Assignment(model()?),
    })
}

/// One line per layer, components separated by spaces, printed so that they
/// parse back exactly.
pub fn write_latents(path: &Path, latents: &LatentStack) -> Result<()> {
    let text: String = latents
        .vectors()
        .iter()
        .map(|v| {
            let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            line.join(" ") + "\n"
        })
        .collect();
    write_atomic(path, text.as_bytes())
}

pub fn read_latents(path: &Path) -> Result<LatentStack> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        offset: 0,
        message: "latent file is not UTF-8".into(),
    })?;
    let mut offset = 0;
    let mut vectors = Vec::new();
    for line in text.split_inclusive('\n') {
        let v = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Format {
                    offset,
                    message: format!("bad latent component {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !v.is_empty() {
            vectors.push(v);
        }
        offset += line.len();
    }
    LatentStack::new(vectors)
}
