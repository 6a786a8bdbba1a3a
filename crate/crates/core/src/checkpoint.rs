//! Checkpoint documents: structured JSON with parameter arrays encoded as
//! base64 little-endian f64 for bit-exact round trips. Composite networks
//! inline their trainable parts and reference frozen source checkpoints by
//! file path plus content hash.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LinearTransform, Mlp};
use crate::seeding::content_hash;
use crate::sut::TabularPolicy;
use crate::transfer::{A2tNetwork, Architecture, FineTuneNetwork, SourceTransforms};

pub const FORMAT: &str = "q-checkpoint/1";

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "f64 array byte length {} not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn encode_u8s(values: &[u8]) -> String {
    B64.encode(values)
}

fn decode_u8s(text: &str) -> Result<Vec<u8>> {
    B64.decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpDoc {
    pub layer_sizes: Vec<usize>,
    /// One tag per weight layer: "relu" for hidden, "identity" for output.
    pub activations: Vec<String>,
    pub weights: Vec<String>,
    pub biases: Vec<String>,
}

impl MlpDoc {
    pub fn from_net(net: &Mlp) -> Self {
        let layers = net.num_layers();
        Self {
            layer_sizes: net.layer_sizes().to_vec(),
            activations: (0..layers)
                .map(|l| {
                    if l + 1 < layers {
                        "relu".into()
                    } else {
                        "identity".into()
                    }
                })
                .collect(),
            weights: (0..layers)
                .map(|l| encode_f64s(net.layer_weights(l)))
                .collect(),
            biases: (0..layers)
                .map(|l| encode_f64s(net.layer_biases(l)))
                .collect(),
        }
    }

    pub fn to_net(&self) -> Result<Mlp> {
        let mut net = Mlp::zeros(&self.layer_sizes)?;
        if self.weights.len() != net.num_layers() || self.biases.len() != net.num_layers() {
            return Err(Error::Checkpoint("layer count mismatch".into()));
        }
        for l in 0..net.num_layers() {
            let w = decode_f64s(&self.weights[l])?;
            if w.len() != net.layer_weights(l).len() {
                return Err(Error::Checkpoint(format!(
                    "weight layer {l} length mismatch"
                )));
            }
            net.layer_weights_mut(l).copy_from_slice(&w);
            let b = decode_f64s(&self.biases[l])?;
            if b.len() != net.layer_biases(l).len() {
                return Err(Error::Checkpoint(format!("bias layer {l} length mismatch")));
            }
            net.layer_biases_mut(l).copy_from_slice(&b);
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearDoc {
    pub dim: usize,
    pub matrix: String,
}

impl LinearDoc {
    fn from_transform(t: &LinearTransform) -> Self {
        Self {
            dim: t.dim(),
            matrix: encode_f64s(t.matrix()),
        }
    }

    fn to_transform(&self) -> Result<LinearTransform> {
        LinearTransform::from_matrix(self.dim, decode_f64s(&self.matrix)?)
    }
}

/// Reference to a frozen source checkpoint stored in its own file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceRef {
    /// Path relative to the referencing checkpoint's directory.
    pub file: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformPairDoc {
    pub state: LinearDoc,
    pub value: LinearDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Mlp {
        net: MlpDoc,
    },
    FineTune {
        net: MlpDoc,
    },
    A2t {
        base: MlpDoc,
        attention: MlpDoc,
        #[serde(skip_serializing_if = "Option::is_none")]
        transforms: Option<Vec<TransformPairDoc>>,
        sources: Vec<SourceRef>,
    },
    Tabular {
        width: usize,
        height: usize,
        actions: String,
        values: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub train_step: u64,
    pub env_config_hash: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(flatten)]
    pub payload: Payload,
    pub meta: Meta,
}

impl Checkpoint {
    fn check_format(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        Ok(())
    }
}

fn write_json(path: &Path, doc: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(doc)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let doc: Checkpoint = serde_json::from_str(&text)?;
    doc.check_format()?;
    Ok(doc)
}

pub fn file_content_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}

pub fn save_mlp(path: &Path, net: &Mlp, meta: Meta) -> Result<()> {
    write_json(
        path,
        &Checkpoint {
            format: FORMAT.into(),
            payload: Payload::Mlp {
                net: MlpDoc::from_net(net),
            },
            meta,
        },
    )
}

pub fn load_mlp(path: &Path) -> Result<(Mlp, Meta)> {
    let doc = read_json(path)?;
    match doc.payload {
        Payload::Mlp { net } | Payload::FineTune { net } => Ok((net.to_net()?, doc.meta)),
        _ => Err(Error::Checkpoint(format!(
            "{} does not hold a plain network",
            path.display()
        ))),
    }
}

pub fn save_tabular(path: &Path, policy: &TabularPolicy, meta: Meta) -> Result<()> {
    let (actions, values) = policy.raw_tables();
    write_json(
        path,
        &Checkpoint {
            format: FORMAT.into(),
            payload: Payload::Tabular {
                width: policy.width(),
                height: policy.height(),
                actions: encode_u8s(actions),
                values: encode_f64s(values),
            },
            meta,
        },
    )
}

pub fn load_tabular(path: &Path) -> Result<(TabularPolicy, Meta)> {
    let doc = read_json(path)?;
    match doc.payload {
        Payload::Tabular {
            width,
            height,
            actions,
            values,
        } => Ok((
            TabularPolicy::from_raw(width, height, decode_u8s(&actions)?, decode_f64s(&values)?)?,
            doc.meta,
        )),
        _ => Err(Error::Checkpoint(format!(
            "{} does not hold a tabular policy",
            path.display()
        ))),
    }
}

/// Persist any architecture. Composite networks reference their sources by
/// relative path + content hash; `source_files` must list one existing
/// checkpoint file per source, in order.
pub fn save_architecture(
    path: &Path,
    arch: &Architecture,
    meta: Meta,
    source_files: &[PathBuf],
) -> Result<()> {
    let payload = match arch {
        Architecture::Scratch(net) => Payload::Mlp {
            net: MlpDoc::from_net(net),
        },
        Architecture::FineTune(ft) => Payload::FineTune {
            net: MlpDoc::from_net(ft.network()),
        },
        Architecture::A2t(net) => {
            if source_files.len() != net.num_sources() {
                return Err(Error::Checkpoint(format!(
                    "need {} source files, got {}",
                    net.num_sources(),
                    source_files.len()
                )));
            }
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            let mut sources = Vec::with_capacity(source_files.len());
            for f in source_files {
                let rel = pathdiff_relative(f, dir);
                sources.push(SourceRef {
                    file: rel,
                    content_hash: file_content_hash(f)?,
                });
            }
            Payload::A2t {
                base: MlpDoc::from_net(net.base()),
                attention: MlpDoc::from_net(net.attention()),
                transforms: net.transforms().map(|ts| {
                    ts.iter()
                        .map(|t| TransformPairDoc {
                            state: LinearDoc::from_transform(&t.state),
                            value: LinearDoc::from_transform(&t.value),
                        })
                        .collect()
                }),
                sources,
            }
        }
    };
    write_json(
        path,
        &Checkpoint {
            format: FORMAT.into(),
            payload,
            meta,
        },
    )
}

/// Load an architecture, resolving and hash-verifying source references
/// relative to the checkpoint's directory.
pub fn load_architecture(path: &Path) -> Result<(Architecture, Meta)> {
    let doc = read_json(path)?;
    let dir = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let arch = match doc.payload {
        Payload::Mlp { net } => Architecture::Scratch(net.to_net()?),
        Payload::FineTune { net } => Architecture::FineTune(FineTuneNetwork::new(net.to_net()?)),
        Payload::A2t {
            base,
            attention,
            transforms,
            sources,
        } => {
            let mut nets = Vec::with_capacity(sources.len());
            for s in &sources {
                let file = dir.join(&s.file);
                let actual = file_content_hash(&file)?;
                if actual != s.content_hash {
                    return Err(Error::Checkpoint(format!(
                        "source {} hash mismatch: expected {}, found {actual}",
                        file.display(),
                        s.content_hash
                    )));
                }
                let (net, _) = load_mlp(&file)?;
                nets.push(Arc::new(net));
            }
            let transforms = transforms
                .map(|ts| {
                    ts.into_iter()
                        .map(|t| {
                            Ok(SourceTransforms {
                                state: t.state.to_transform()?,
                                value: t.value.to_transform()?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            Architecture::A2t(A2tNetwork::new(
                base.to_net()?,
                attention.to_net()?,
                nets,
                transforms,
            )?)
        }
        Payload::Tabular { .. } => {
            return Err(Error::Checkpoint(format!(
                "{} holds a tabular policy, not a Q-architecture",
                path.display()
            )))
        }
    };
    Ok((arch, doc.meta))
}

/// Best-effort relative path from `dir` to `target` for sibling run
/// directories; falls back to the absolute path.
fn pathdiff_relative(target: &Path, dir: &Path) -> String {
    let target_abs = std::path::absolute(target).unwrap_or_else(|_| target.to_path_buf());
    let dir_abs = std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf());
    let t: Vec<_> = target_abs.components().collect();
    let d: Vec<_> = dir_abs.components().collect();
    let common = t.iter().zip(&d).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in common..d.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c);
    }
    rel.to_string_lossy().into_owned()
}
