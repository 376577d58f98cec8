//! JSON checkpoint envelope.
//!
//! ```json
//! {"version":1,"kind":"text-tag","dims":[...],"labels":[...],
//!  "checksum":"sha256:…","weights":"<base64 f32 LE>"}
//! ```
//!
//! Weights are little-endian 32-bit floats, row-major, in the order
//! W1, b1, W2, b2 and, for vision models, the encoder segment (conv1 weight,
//! conv1 bias, conv2 weight, conv2 bias). For vision models W1/b1 is the
//! encoder's final linear layer and W2/b2 the classification head.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlp::{Dense, HeadKind, MlpModel};
use crate::vision::encoder::{Conv2d, EncoderConfig, PatchEncoder};
use crate::vision::mil::{Aggregation, VisionModel};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "text-category")]
    TextCategory,
    #[serde(rename = "text-tag")]
    TextTag,
    #[serde(rename = "vision-category")]
    VisionCategory,
    #[serde(rename = "vision-tag")]
    VisionTag,
}

impl ModelKind {
    pub fn text(head: HeadKind) -> Self {
        match head {
            HeadKind::Softmax => ModelKind::TextCategory,
            HeadKind::Sigmoid => ModelKind::TextTag,
        }
    }

    pub fn vision(head: HeadKind) -> Self {
        match head {
            HeadKind::Softmax => ModelKind::VisionCategory,
            HeadKind::Sigmoid => ModelKind::VisionTag,
        }
    }

    pub fn head(self) -> HeadKind {
        match self {
            ModelKind::TextCategory | ModelKind::VisionCategory => HeadKind::Softmax,
            ModelKind::TextTag | ModelKind::VisionTag => HeadKind::Sigmoid,
        }
    }

    pub fn is_vision(self) -> bool {
        matches!(self, ModelKind::VisionCategory | ModelKind::VisionTag)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TextCategory => "text-category",
            ModelKind::TextTag => "text-tag",
            ModelKind::VisionCategory => "vision-category",
            ModelKind::VisionTag => "vision-tag",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    version: u32,
    kind: ModelKind,
    dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregation: Option<Aggregation>,
    labels: Vec<String>,
    checksum: String,
    weights: String,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Checkpoint {
    Text(MlpModel),
    Vision(VisionModel),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Text(m) => ModelKind::text(m.head),
            Checkpoint::Vision(m) => ModelKind::vision(m.head_kind),
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            Checkpoint::Text(m) => &m.labels,
            Checkpoint::Vision(m) => &m.labels,
        }
    }
}

fn checksum(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

fn pack(slices: &[&[f64]]) -> Vec<u8> {
    slices
        .iter()
        .flat_map(|s| s.iter())
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

fn to_json(kind: ModelKind, dims: Vec<usize>, aggregation: Option<Aggregation>, labels: &[String], slices: &[&[f64]]) -> String {
    let bytes = pack(slices);
    let env = Envelope {
        version: VERSION,
        kind,
        dims,
        aggregation,
        labels: labels.to_vec(),
        checksum: checksum(&bytes),
        weights: BASE64.encode(&bytes),
    };
    serde_json::to_string(&env).expect("envelope serializes") + "\n"
}

pub fn encode_text(model: &MlpModel) -> String {
    to_json(
        ModelKind::text(model.head),
        vec![model.d_in(), model.d_hidden(), model.d_out()],
        None,
        &model.labels,
        &model.slices(),
    )
}

pub fn encode_vision(model: &VisionModel) -> String {
    let c = &model.encoder.config;
    let e = model.encoder.slices();
    // fc, head, then the convolutions.
    let order: [&[f64]; 8] = [e[4], e[5], &model.head.weight, &model.head.bias, e[0], e[1], e[2], e[3]];
    to_json(
        ModelKind::vision(model.head_kind),
        vec![
            c.conv2_channels,
            c.hidden,
            model.head.outputs,
            c.patch_size,
            c.conv1_channels,
            c.kernel,
            c.stride,
            c.padding,
        ],
        Some(model.aggregation),
        &model.labels,
        &order,
    )
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_text(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_text(model))
}

pub fn save_vision(model: &VisionModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_vision(model))
}

/// Splits the decoded weights into consecutive segments of the given lengths.
struct Reader {
    values: Vec<f64>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.values[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }
}

pub fn decode(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptChecksum(format!("unreadable envelope: {e}")))?;
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: v as u32,
            });
        }
    }
    let env: Envelope =
        serde_json::from_value(value).map_err(|e| Error::CorruptChecksum(format!("malformed envelope: {e}")))?;
    let bytes = BASE64
        .decode(env.weights.as_bytes())
        .map_err(|e| Error::CorruptChecksum(format!("bad base64: {e}")))?;
    if checksum(&bytes) != env.checksum {
        return Err(Error::CorruptChecksum("checksum does not match weights".into()));
    }
    if bytes.len() % 4 != 0 {
        return Err(Error::CorruptChecksum("weight bytes are not whole f32 values".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let dims = &env.dims;
    let bad_dims = || Error::CorruptChecksum(format!("dims {dims:?} inconsistent with {} weights", values.len()));

    if !env.kind.is_vision() {
        let [d_in, d_hidden, d_out] = dims[..] else {
            return Err(bad_dims());
        };
        if values.len() != d_in * d_hidden + d_hidden + d_hidden * d_out + d_out || env.labels.len() != d_out {
            return Err(bad_dims());
        }
        let mut r = Reader { values, pos: 0 };
        let hidden = Dense {
            inputs: d_in,
            outputs: d_hidden,
            weight: r.take(d_in * d_hidden),
            bias: r.take(d_hidden),
        };
        let output = Dense {
            inputs: d_hidden,
            outputs: d_out,
            weight: r.take(d_hidden * d_out),
            bias: r.take(d_out),
        };
        return Ok(Checkpoint::Text(MlpModel {
            hidden,
            output,
            head: env.kind.head(),
            labels: env.labels,
        }));
    }

    let [c2, hidden, d_out, patch_size, c1, kernel, stride, padding] = dims[..] else {
        return Err(bad_dims());
    };
    let config = EncoderConfig {
        patch_size,
        conv1_channels: c1,
        conv2_channels: c2,
        kernel,
        stride,
        padding,
        hidden,
    };
    config.validate().map_err(|_| bad_dims())?;
    let kk = kernel * kernel;
    let expected = c2 * hidden + hidden + hidden * d_out + d_out + 3 * c1 * kk + c1 + c1 * c2 * kk + c2;
    if values.len() != expected || env.labels.len() != d_out {
        return Err(bad_dims());
    }
    let mut r = Reader { values, pos: 0 };
    let fc = Dense {
        inputs: c2,
        outputs: hidden,
        weight: r.take(c2 * hidden),
        bias: r.take(hidden),
    };
    let head = Dense {
        inputs: hidden,
        outputs: d_out,
        weight: r.take(hidden * d_out),
        bias: r.take(d_out),
    };
    let conv = |r: &mut Reader, cin: usize, cout: usize| Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel,
        stride,
        padding,
        weight: r.take(cin * cout * kk),
        bias: r.take(cout),
    };
    let conv1 = conv(&mut r, 3, c1);
    let conv2 = conv(&mut r, c1, c2);
    Ok(Checkpoint::Vision(VisionModel {
        encoder: PatchEncoder {
            config,
            conv1,
            conv2,
            fc,
        },
        head,
        head_kind: env.kind.head(),
        labels: env.labels,
        aggregation: env.aggregation.unwrap_or(Aggregation::Mean),
    }))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}

fn mismatch(expected: ModelKind, found: ModelKind) -> Error {
    Error::HeadMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

pub fn load_text(path: impl AsRef<Path>, head: HeadKind) -> Result<MlpModel> {
    let expected = ModelKind::text(head);
    match load(path)? {
        Checkpoint::Text(m) if m.head == head => Ok(m),
        other => Err(mismatch(expected, other.kind())),
    }
}

pub fn load_vision(path: impl AsRef<Path>, head: HeadKind) -> Result<VisionModel> {
    let expected = ModelKind::vision(head);
    match load(path)? {
        Checkpoint::Vision(m) if m.head_kind == head => Ok(m),
        other => Err(mismatch(expected, other.kind())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    fn text_model(head: HeadKind) -> MlpModel {
        let mut m = MlpModel::init(5, 4, labels(3), head, 1);
        m.round_to_f32();
        m
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = text_model(HeadKind::Sigmoid);
        save_text(&m, &path).unwrap();
        let back = load_text(&path, HeadKind::Sigmoid).unwrap();
        assert_eq!(back, m);
        let x = [0.1, -0.2, 0.3, 0.4, -0.5];
        let a = m.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn vision_round_trip_is_bit_exact() {
        let cfg = EncoderConfig {
            patch_size: 8,
            conv1_channels: 2,
            conv2_channels: 3,
            hidden: 4,
            ..Default::default()
        };
        let mut m = VisionModel::init(cfg, labels(3), HeadKind::Softmax, Aggregation::Max, 4).unwrap();
        m.round_to_f32();
        let back = match decode(&encode_vision(&m)).unwrap() {
            Checkpoint::Vision(v) => v,
            other => panic!("wrong kind {:?}", other.kind()),
        };
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = encode_text(&text_model(HeadKind::Softmax));
        let cut = &text[..text.len() / 2];
        assert!(matches!(decode(cut), Err(Error::CorruptChecksum(_))));

        let tampered = text.replacen("\"weights\":\"", "\"weights\":\"AAAA", 1);
        assert!(matches!(decode(&tampered), Err(Error::CorruptChecksum(_))));
    }

    #[test]
    fn version_and_head_checks() {
        let text = encode_text(&text_model(HeadKind::Softmax)).replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(decode(&text), Err(Error::VersionMismatch { found: 2, .. })));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tag.json");
        save_text(&text_model(HeadKind::Sigmoid), &path).unwrap();
        assert!(matches!(load_text(&path, HeadKind::Softmax), Err(Error::HeadMismatch { .. })));
        assert!(matches!(load_vision(&path, HeadKind::Sigmoid), Err(Error::HeadMismatch { .. })));
    }

    #[test]
    fn kind_names() {
        assert_eq!("vision-tag".parse::<ModelKind>().unwrap(), ModelKind::VisionTag);
        assert_eq!(ModelKind::TextCategory.to_string(), "text-category");
        assert!("other".parse::<ModelKind>().is_err());
    }
}
