//! Checkpoint directory: `weights.bin`, `model_card.json`, `history.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use super::backbone::{ConvBlock, TinyConvNet};
use super::train::History;
use super::{BackboneConfig, BackboneName, Head, HeadConfig, Model, TrainConfig};
use crate::datakit::{sha256_hex, write_atomic, Provenance};
use crate::measure::MEASUREMENT_NAMES;
use crate::{Error, Result};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CARD_FILE: &str = "model_card.json";
pub const HISTORY_FILE: &str = "history.csv";

const MAGIC: &[u8; 8] = b"ANTHRW01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub format_version: u32,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub epochs_run: usize,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub head_init: String,
    pub weights_sha256: String,
}

impl ModelCard {
    pub fn new(model: &Model, train: &TrainConfig, history: &History) -> Self {
        let bias = if train.init_output_bias { "mean training target" } else { "zero" };
        Self {
            format_version: 1,
            backbone: model.backbone_config.clone(),
            head: model.head_config.clone(),
            train: train.clone(),
            best_epoch: history.best_epoch,
            best_val_mae: history.best_val_mae,
            epochs_run: history.epochs.len(),
            seed: train.seed,
            outputs: MEASUREMENT_NAMES.iter().map(|s| s.to_string()).collect(),
            head_init: format!("glorot-uniform weights, zero hidden biases, output bias = {bias}"),
            weights_sha256: String::new(),
        }
    }
}

enum Tensor {
    F32(Vec<usize>, Vec<f32>),
    F64(Vec<usize>, Vec<f64>),
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serialises every model tensor, backbone included, little-endian.
pub fn encode_weights(model: &Model) -> Vec<u8> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    if let Some(net) = tiny_blocks(model) {
        for (i, b) in net.iter().enumerate() {
            tensors.push((format!("backbone.conv{i}.weight"), Tensor::F32(b.weight.shape().to_vec(), b.weight.iter().copied().collect())));
            tensors.push((format!("backbone.conv{i}.bias"), Tensor::F32(b.bias.shape().to_vec(), b.bias.to_vec())));
        }
    }
    for (name, shape, data) in model.head.named_tensors() {
        tensors.push((name, Tensor::F64(shape, data.to_vec())));
    }

    let mut buf = MAGIC.to_vec();
    put_u32(&mut buf, tensors.len() as u32);
    for (name, t) in &tensors {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        let (kind, shape) = match t {
            Tensor::F32(s, _) => (0u8, s),
            Tensor::F64(s, _) => (1u8, s),
        };
        buf.push(kind);
        put_u32(&mut buf, shape.len() as u32);
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match t {
            Tensor::F32(_, v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Tensor::F64(_, v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
    }
    buf
}

fn tiny_blocks(model: &Model) -> Option<Vec<ConvBlock>> {
    if model.backbone_config.name != BackboneName::TinyTest {
        return None;
    }
    // Rebuild blocks from the named parameters so any extractor with the
    // tiny layout round-trips.
    let params = model.backbone_parameters();
    let fresh = TinyConvNet::new(model.backbone_config.seed);
    Some(
        fresh
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let find = |n: String| params.iter().find(|(k, _)| *k == n).map(|(_, v)| v.clone());
                let w = find(format!("backbone.conv{i}.weight")).expect("tiny weight");
                let bias = find(format!("backbone.conv{i}.bias")).expect("tiny bias");
                ConvBlock {
                    weight: Array4::from_shape_vec(b.weight.dim(), w).expect("tiny shape"),
                    bias: Array1::from(bias),
                }
            })
            .collect(),
    )
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode("truncated weights file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Decode("not a weights file".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Decode("tensor name is not utf-8".into()))?;
        let kind = r.take(1)?[0];
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let t = match kind {
            0 => Tensor::F32(shape, r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => Tensor::F64(shape, r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            k => return Err(Error::Decode(format!("unknown tensor kind {k}"))),
        };
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Decode("trailing bytes in weights file".into()));
    }
    Ok(out)
}

fn staging_dir(dir: &Path) -> PathBuf {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
    dir.with_file_name(format!(".{name}.partial"))
}

/// Writes the checkpoint into `dir`, staging it in a sibling directory first.
pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    train: &TrainConfig,
    history: &History,
    provenance: Option<&Provenance>,
) -> Result<ModelCard> {
    if dir.exists() && !dir.join(CARD_FILE).exists() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
        return Err(Error::Config(format!("{} exists and is not a checkpoint", dir.display())));
    }
    let stage = staging_dir(dir);
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    }
    fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;

    let weights = encode_weights(model);
    let mut card = ModelCard::new(model, train, history);
    card.weights_sha256 = sha256_hex(&weights);
    write_atomic(&stage.join(WEIGHTS_FILE), &weights)?;
    let card_json = serde_json::to_string_pretty(&card).expect("serialisable") + "\n";
    write_atomic(&stage.join(CARD_FILE), card_json.as_bytes())?;
    write_atomic(&stage.join(HISTORY_FILE), history.to_csv().as_bytes())?;
    if let Some(p) = provenance {
        p.write(&stage)?;
    }

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&stage, dir).map_err(|e| Error::io(dir, e))?;
    Ok(card)
}

pub fn read_card(dir: &Path) -> Result<ModelCard> {
    let path = dir.join(CARD_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

/// Restores a model saved by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(Model, ModelCard)> {
    let card = read_card(dir)?;
    let path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if !card.weights_sha256.is_empty() && sha256_hex(&bytes) != card.weights_sha256 {
        return Err(Error::Decode(format!("{} does not match the model card digest", path.display())));
    }
    let tensors = decode_weights(&bytes)?;
    card.backbone.validate()?;
    if card.backbone.name != BackboneName::TinyTest {
        return Err(Error::Config(format!("cannot restore `{}` backbone: weights not bundled", card.backbone.name)));
    }

    let mut blocks = TinyConvNet::new(card.backbone.seed).blocks;
    let mut head = Head::new(
        card.backbone.feature_dim,
        &card.head.hidden_widths,
        card.head.output_dim,
        card.head.batch_norm,
        card.head.activation,
        card.head.seed,
    );
    let expected_head = head.named_tensors().len();
    let mut seen_head = 0;
    for (name, t) in tensors {
        match t {
            Tensor::F32(shape, data) => {
                let rest = name.strip_prefix("backbone.conv").ok_or_else(|| Error::Decode(format!("unexpected tensor {name}")))?;
                let (i, field) = rest.split_once('.').ok_or_else(|| Error::Decode(format!("bad tensor name {name}")))?;
                let block = i.parse::<usize>().ok().and_then(|i| blocks.get_mut(i));
                let block = block.ok_or_else(|| Error::Decode(format!("bad tensor name {name}")))?;
                match field {
                    "weight" if shape == block.weight.shape() => {
                        block.weight = Array4::from_shape_vec(block.weight.dim(), data).expect("checked shape")
                    }
                    "bias" if shape == block.bias.shape() => block.bias = Array1::from(data),
                    _ => return Err(Error::Decode(format!("bad tensor {name} {shape:?}"))),
                }
            }
            Tensor::F64(_, data) => {
                if !head.set_tensor(&name, &data) {
                    return Err(Error::Decode(format!("bad head tensor {name}")));
                }
                seen_head += 1;
            }
        }
    }
    if seen_head != expected_head {
        return Err(Error::Decode(format!("expected {expected_head} head tensors, found {seen_head}")));
    }
    let model = Model::from_parts(card.backbone.clone(), card.head.clone(), Arc::new(TinyConvNet::from_blocks(blocks)), head)?;
    Ok((model, card))
}
