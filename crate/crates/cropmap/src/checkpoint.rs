//! Model checkpoint files.
//!
//! Layout: `CROPLSTM`, u32 LE version, u64 LE header length, JSON header,
//! then one contiguous blob of little-endian `f64`s. The header's `section`
//! tag says whether the blob holds LSTM tensors or random-forest nodes.

use std::fs;
use std::path::Path;

use cropmap_core::baselines::{DecisionTree, Forest, ForestConfig, Node};
use cropmap_core::datapipe::NormalizationStats;
use cropmap_core::model::{Checkpoint, ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 8] = b"CROPLSTM";
pub const VERSION: u32 = 1;
const NODE_WIDTH: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
enum Header {
    Lstm {
        config: ModelConfig,
        normalization: NormalizationStats,
        tensors: Vec<TensorDescriptor>,
    },
    RandomForest {
        config: ForestConfig,
        n_features: usize,
        tensors: Vec<TensorDescriptor>,
    },
}

/// Any model a checkpoint file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Lstm(Checkpoint),
    Forest { config: ForestConfig, forest: Forest },
}

fn pack(tensors: Vec<(String, Vec<usize>, &[f64])>) -> (Vec<TensorDescriptor>, Vec<u8>) {
    let mut descriptors = Vec::with_capacity(tensors.len());
    let mut blob = Vec::new();
    for (name, shape, data) in tensors {
        descriptors.push(TensorDescriptor { name, shape, offset: blob.len() as u64 });
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    (descriptors, blob)
}

type NamedBlob = (String, Vec<usize>, Vec<f64>);

fn unpack(descriptors: &[TensorDescriptor], blob: &[u8], prefix: u64) -> Result<Vec<NamedBlob>, FormatError> {
    let mut expected_offset = 0u64;
    let mut out = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        if d.offset != expected_offset {
            return Err(FormatError::Header(format!(
                "tensor {} starts at byte {}, expected {expected_offset}",
                d.name, d.offset
            )));
        }
        let len = d
            .shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| FormatError::Dimension(format!("tensor {} shape {:?} overflows", d.name, d.shape)))?;
        let end = expected_offset + len as u64;
        if end > blob.len() as u64 {
            return Err(FormatError::Truncated { needed: prefix + end, available: prefix + blob.len() as u64 });
        }
        let data = blob[expected_offset as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((d.name.clone(), d.shape.clone(), data));
        expected_offset = end;
    }
    container::check_body_len(blob, expected_offset, prefix)?;
    Ok(out)
}

fn flatten_tree(tree: &DecisionTree) -> Vec<f64> {
    let mut out = Vec::with_capacity(tree.nodes.len() * NODE_WIDTH);
    for node in &tree.nodes {
        match *node {
            Node::Split { feature, threshold, left, right } => {
                out.extend_from_slice(&[1.0, feature as f64, threshold, left as f64, right as f64, 0.0, 0.0])
            }
            Node::Leaf { freq } => out.extend_from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, freq[0], freq[1]]),
        }
    }
    out
}

fn index(v: f64, what: &str) -> Result<usize, FormatError> {
    if v >= 0.0 && v.fract() == 0.0 && v < (1u64 << 52) as f64 {
        Ok(v as usize)
    } else {
        Err(FormatError::Header(format!("{what} {v} is not an index")))
    }
}

fn unflatten_tree(name: &str, shape: &[usize], data: &[f64]) -> Result<DecisionTree, FormatError> {
    if shape.len() != 2 || shape[1] != NODE_WIDTH {
        return Err(FormatError::Dimension(format!("tree {name} has shape {shape:?}, expected [n, {NODE_WIDTH}]")));
    }
    let nodes = data
        .chunks_exact(NODE_WIDTH)
        .map(|r| {
            Ok(if r[0] == 1.0 {
                Node::Split {
                    feature: index(r[1], "feature")?,
                    threshold: r[2],
                    left: index(r[3], "child")?,
                    right: index(r[4], "child")?,
                }
            } else {
                Node::Leaf { freq: [r[5], r[6]] }
            })
        })
        .collect::<Result<_, FormatError>>()?;
    Ok(DecisionTree { nodes })
}

pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Vec<u8> {
    let named = checkpoint.params.named_tensors();
    let (tensors, blob) = pack(named.into_iter().map(|t| (t.name, t.shape, t.data)).collect());
    let header = Header::Lstm {
        config: checkpoint.config.clone(),
        normalization: checkpoint.normalization.clone(),
        tensors,
    };
    container::encode(MAGIC, VERSION, &header, &blob)
}

pub fn encode_forest(config: &ForestConfig, forest: &Forest) -> Vec<u8> {
    let flat: Vec<Vec<f64>> = forest.trees.iter().map(flatten_tree).collect();
    let (tensors, blob) = pack(
        flat.iter()
            .enumerate()
            .map(|(i, f)| (format!("tree.{i}"), vec![f.len() / NODE_WIDTH, NODE_WIDTH], f.as_slice()))
            .collect(),
    );
    let header = Header::RandomForest { config: config.clone(), n_features: forest.n_features, tensors };
    container::encode(MAGIC, VERSION, &header, &blob)
}

pub fn decode_model(bytes: &[u8]) -> Result<SavedModel, FormatError> {
    let (header, blob): (Header, _) = container::decode(bytes, MAGIC, VERSION)?;
    let prefix = (bytes.len() - blob.len()) as u64;
    match header {
        Header::Lstm { config, normalization, tensors } => {
            let named = unpack(&tensors, blob, prefix)?;
            let params = ModelParams::from_named(&config, &named).map_err(|e| FormatError::Dimension(e.to_string()))?;
            if normalization.features() != config.input_features {
                return Err(FormatError::Dimension(format!(
                    "normalization covers {} features, model expects {}",
                    normalization.features(),
                    config.input_features
                )));
            }
            Ok(SavedModel::Lstm(Checkpoint { config, normalization, params }))
        }
        Header::RandomForest { config, n_features, tensors } => {
            let named = unpack(&tensors, blob, prefix)?;
            let trees = named
                .iter()
                .map(|(name, shape, data)| unflatten_tree(name, shape, data))
                .collect::<Result<Vec<_>, _>>()?;
            let forest = Forest::new(n_features, trees).map_err(|e| FormatError::Header(e.to_string()))?;
            Ok(SavedModel::Forest { config, forest })
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    match decode_model(bytes)? {
        SavedModel::Lstm(c) => Ok(c),
        SavedModel::Forest { .. } => Err(FormatError::Header("file holds a random forest, not an LSTM".into())),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write(path, &encode_checkpoint(checkpoint))
}

pub fn save_forest(path: &Path, config: &ForestConfig, forest: &Forest) -> Result<()> {
    write(path, &encode_forest(config, forest))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| Error::format(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cropmap_core::baselines::{rf_fit, rf_predict_proba};
    use cropmap_core::model::{init_model, HeadKind};
    use cropmap_core::synthgen::{generate_examples, SynthConfig};

    fn checkpoint() -> Checkpoint {
        let config = ModelConfig { hidden_size: 6, head_hidden: 3, ..ModelConfig::multi_headed().with_seed(4) };
        let mut normalization = NormalizationStats::identity(12);
        normalization.mean[3] = 0.125;
        normalization.std[5] = 0.3;
        Checkpoint { params: init_model(&config).unwrap(), config, normalization }
    }

    fn bits(p: &ModelParams) -> Vec<u64> {
        p.named_tensors().iter().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn lstm_round_trip_is_bit_exact() {
        let ck = checkpoint();
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert_eq!(bits(&ck.params), bits(&back.params));
        assert_eq!(ck, back);
        let raw: Vec<f64> = (0..144).map(|i| i as f64 / 100.0).collect();
        for head in [HeadKind::Local, HeadKind::Global] {
            assert_eq!(
                ck.predict_raw(&raw, head).unwrap().to_bits(),
                back.predict_raw(&raw, head).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&checkpoint());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(decode_checkpoint(&bad), Err(FormatError::Version { found: 2, .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(FormatError::TrailingBytes(1))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let ck = checkpoint();
        let mut named: Vec<(String, Vec<usize>, &[f64])> =
            ck.params.named_tensors().into_iter().map(|t| (t.name, t.shape, t.data)).collect();
        named[1].0 = "trunk.w_other".into();
        let (tensors, blob) = pack(named);
        let header = Header::Lstm { config: ck.config.clone(), normalization: ck.normalization.clone(), tensors };
        let bytes = container::encode(MAGIC, VERSION, &header, &blob);
        assert!(matches!(decode_checkpoint(&bytes), Err(FormatError::Dimension(_))));
    }

    #[test]
    fn forest_round_trip() {
        let ex = generate_examples(&SynthConfig::local(30, 30, 0.2, 1)).unwrap();
        let config = ForestConfig { n_trees: 5, ..ForestConfig::default() };
        let forest = rf_fit(&ex, &config).unwrap();
        let bytes = encode_forest(&config, &forest);
        let SavedModel::Forest { config: c2, forest: f2 } = decode_model(&bytes).unwrap() else {
            panic!("expected a forest");
        };
        assert_eq!(c2, config);
        assert_eq!(f2, forest);
        for e in &ex {
            assert_eq!(rf_predict_proba(&forest, e.series.flat()).unwrap(), rf_predict_proba(&f2, e.series.flat()).unwrap());
        }
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
