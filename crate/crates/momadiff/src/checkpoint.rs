//! Checkpoint container.
//!
//! Layout: magic `MOMC`, version `u32` LE, header length `u32` LE, a JSON
//! header, then every tensor's values as `f64` LE in header order. The
//! header carries the resolved run config, the data layout, normalization
//! shape, vocabulary and the step counter, so a checkpoint alone rebuilds
//! its models.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use momadiff_core::codec::MotionCodec;
use momadiff_core::model::MadModel;
use momadiff_core::motion::{LayoutDescriptor, LayoutKind, NormStats};
use momadiff_core::vae::MotionVae;
use momadiff_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MOMC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutMeta {
    pub kind: u8,
    pub d: usize,
    pub velocity_range: (usize, usize),
    pub fps: f32,
}

impl LayoutMeta {
    pub fn new(layout: &LayoutDescriptor, fps: f32) -> Self {
        Self {
            kind: layout.kind.code(),
            d: layout.d,
            velocity_range: layout.velocity_range,
            fps,
        }
    }

    pub fn layout(&self) -> Result<LayoutDescriptor> {
        Ok(LayoutDescriptor::from_parts(
            LayoutKind::from_code(self.kind)?,
            self.d,
            self.velocity_range,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    step: u64,
    config: BTreeMap<String, String>,
    layout: LayoutMeta,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub step: u64,
    pub config: BTreeMap<String, String>,
    pub layout: LayoutMeta,
    pub vocab: Vec<String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            step: self.step,
            config: self.config.clone(),
            layout: self.layout.clone(),
            vocab: self.vocab.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                path: path.into(),
                expected: VERSION,
                found: version,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let mut at = 12 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n = e.rows * e.cols;
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| Error::format(path, format!("truncated data for {}", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name.clone(), Tensor::from_vec(e.rows, e.cols, data)?));
            at += 8 * n;
        }
        if at != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - at)));
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            config: header.config,
            layout: header.layout,
            vocab: header.vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Tensors whose names start with `prefix.`, with the prefix removed.
    fn group(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    fn stats(&self, path: &Path) -> Result<NormStats> {
        let g: BTreeMap<String, Tensor> = self.group("stats").into_iter().collect();
        match (g.get("mean"), g.get("std")) {
            (Some(m), Some(s)) => Ok(NormStats {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            }),
            _ => Err(Error::format(path, "checkpoint lacks normalization stats")),
        }
    }
}

fn prefixed(prefix: &str, named: Vec<(String, Tensor)>) -> impl Iterator<Item = (String, Tensor)> + '_ {
    named.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

fn stats_tensors(stats: &NormStats) -> Vec<(String, Tensor)> {
    vec![
        ("stats.mean".into(), Tensor::row_vector(&stats.mean)),
        ("stats.std".into(), Tensor::row_vector(&stats.std)),
    ]
}

/// Trained first stage.
#[derive(Debug, Clone)]
pub struct VaeBundle {
    pub config: RunConfig,
    pub layout: LayoutDescriptor,
    pub fps: f32,
    pub stats: NormStats,
    pub vae: MotionVae,
    pub step: u64,
}

impl VaeBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = stats_tensors(&self.stats);
        tensors.extend(prefixed("vae", self.vae.params.to_named()));
        Container {
            kind: "vae".into(),
            step: self.step,
            config: self.config.as_map().clone(),
            layout: LayoutMeta::new(&self.layout, self.fps),
            vocab: Vec::new(),
            tensors,
        }
        .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        if c.kind != "vae" {
            return Err(Error::format(path, format!("expected a vae checkpoint, found {}", c.kind)));
        }
        let config = RunConfig::from_map(&c.config)?;
        let layout = c.layout.layout()?;
        let mut vae = MotionVae::new(config.vae_config(&layout), 0)?;
        vae.params.load_from(&c.group("vae"))?;
        Ok(Self {
            stats: c.stats(path)?,
            fps: c.layout.fps,
            config,
            layout,
            vae,
            step: c.step,
        })
    }
}

/// Trained second stage with the codec it was trained against.
#[derive(Debug, Clone)]
pub struct MadBundle {
    pub config: RunConfig,
    pub layout: LayoutDescriptor,
    pub fps: f32,
    pub stats: NormStats,
    pub codec: MotionCodec,
    pub model: MadModel,
    pub step: u64,
}

impl MadBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = stats_tensors(&self.stats);
        if let MotionCodec::Vae(v) = &self.codec {
            tensors.extend(prefixed("vae", v.params.to_named()));
        }
        tensors.extend(prefixed("mad", self.model.params.to_named()));
        Container {
            kind: "mad".into(),
            step: self.step,
            config: self.config.as_map().clone(),
            layout: LayoutMeta::new(&self.layout, self.fps),
            vocab: self.model.text.vocab().to_vec(),
            tensors,
        }
        .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        if c.kind != "mad" {
            return Err(Error::format(path, format!("expected a mad checkpoint, found {}", c.kind)));
        }
        let config = RunConfig::from_map(&c.config)?;
        let layout = c.layout.layout()?;
        let codec = build_codec(&config, &layout, Some(&c.group("vae")))?;
        let mc = config.mad_config(codec.latent_width(), codec.downsample_factor())?;
        let mut model = MadModel::new(mc, c.vocab.clone(), 0)?;
        model.params.load_from(&c.group("mad"))?;
        Ok(Self {
            stats: c.stats(path)?,
            fps: c.layout.fps,
            config,
            layout,
            codec,
            model,
            step: c.step,
        })
    }
}

/// The codec named by `mad.codec`; VAE weights come from `vae_params`.
pub fn build_codec(
    config: &RunConfig,
    layout: &LayoutDescriptor,
    vae_params: Option<&[(String, Tensor)]>,
) -> Result<MotionCodec> {
    if config.uses_vae() {
        let mut vae = MotionVae::new(config.vae_config(layout), 0)?;
        match vae_params {
            Some(p) => vae.params.load_from(p)?,
            None => return Err(Error::Usage("this configuration needs a trained VAE checkpoint".into())),
        }
        Ok(MotionCodec::Vae(vae))
    } else {
        Ok(MotionCodec::Windows {
            d: layout.d,
            frames_per_token: config.usize("mad.window_frames"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_is_bit_exact() {
        let c = Container {
            kind: "x".into(),
            step: 7,
            config: RunConfig::default().as_map().clone(),
            layout: LayoutMeta::new(&LayoutDescriptor::toy(2), 20.0),
            vocab: vec!["a".into(), "b".into()],
            tensors: vec![
                ("p".into(), Tensor::from_rows(&[[0.1, -1e-300], [f64::MIN_POSITIVE, 3.0]]).unwrap()),
                ("q".into(), Tensor::scalar(-0.0)),
            ],
        };
        let bytes = c.encode();
        let d = Container::decode(&bytes, Path::new("c")).unwrap();
        assert_eq!(d.encode(), bytes);
        assert_eq!(d.tensors[1].1.data()[0].to_bits(), (-0.0f64).to_bits());
        assert!(Container::decode(&bytes[..bytes.len() - 8], Path::new("c")).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Container::decode(&v2, Path::new("c")), Err(Error::Version { .. })));
    }
}
