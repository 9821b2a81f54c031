//! Model checkpoints.
//!
//! Layout: UTF-8 header lines, a line reading `data`, then every parameter as
//! a little-endian IEEE-754 f64 in `ParamSet` order (backbone layers weights
//! row-major then biases, then head weights and biases; first network before
//! second). Example header of a dual model:
//!
//! ```text
//! fcmad-checkpoint 1
//! kind dual
//! variant fc-v2
//! normalize_features false
//! input_norm 8
//! backbone first 1024x256:relu 256x64:identity
//! head first 400x64
//! backbone second 1024x256:relu 256x64:identity
//! head second 400x64
//! params 575488
//! data
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::loss::VariantTag;
use crate::nn::{Activation, ClassifierHead, Dense, MlpBackbone, ParamSet, Tensor2};
use crate::trainer::{DualModel, FrModel};
use crate::{Error, Result};

const MAGIC: &str = "fcmad-checkpoint 1";

fn backbone_spec(b: &MlpBackbone) -> String {
    b.layers()
        .iter()
        .map(|l| format!("{}x{}:{}", l.input_dim(), l.output_dim(), l.activation))
        .collect::<Vec<_>>()
        .join(" ")
}

fn encode(header: &[String], params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + 8 * params.len());
    out.extend(MAGIC.bytes());
    out.push(b'\n');
    for line in header {
        out.extend(line.bytes());
        out.push(b'\n');
    }
    out.extend(format!("params {}\ndata\n", params.len()).bytes());
    for v in params {
        out.extend(v.to_le_bytes());
    }
    out
}

struct Decoded {
    fields: HashMap<String, String>,
    params: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        path: "checkpoint".into(),
        line: 0,
        msg: msg.into(),
    }
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut fields = HashMap::new();
    let mut pos = 0;
    let mut first = true;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by a `data` line"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not UTF-8"))?;
        pos += end + 1;
        if first {
            if line != MAGIC {
                return Err(bad(format!("unsupported checkpoint header `{line}`")));
            }
            first = false;
            continue;
        }
        if line == "data" {
            break;
        }
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let n: usize = fields
        .get("params")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing parameter count"))?;
    let body = &bytes[pos..];
    if body.len() != 8 * n {
        return Err(bad(format!("expected {} data bytes, found {}", 8 * n, body.len())));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Decoded { fields, params })
}

impl Decoded {
    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing header field `{key}`")))
    }

    fn backbone(&self, key: &str) -> Result<MlpBackbone> {
        let layers = self
            .get(key)?
            .split_whitespace()
            .map(|layer| {
                let (shape, act) = layer
                    .split_once(':')
                    .ok_or_else(|| bad(format!("bad layer `{layer}`")))?;
                let (i, o) = parse_shape(shape)?;
                let act: Activation = act.parse()?;
                Dense::new(Tensor2::zeros(o, i), vec![0.0; o], act)
            })
            .collect::<Result<Vec<_>>>()?;
        MlpBackbone::new(layers)
    }

    fn head(&self, key: &str) -> Result<ClassifierHead> {
        let (classes, dim) = parse_shape(self.get(key)?)?;
        ClassifierHead::new(Tensor2::zeros(classes, dim), vec![0.0; classes])
    }

    fn f64_field(&self, key: &str) -> Result<f64> {
        self.get(key)?.parse().map_err(|_| bad(format!("invalid `{key}`")))
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('x').ok_or_else(|| bad(format!("bad shape `{s}`")))?;
    Ok((
        a.parse().map_err(|_| bad(format!("bad shape `{s}`")))?,
        b.parse().map_err(|_| bad(format!("bad shape `{s}`")))?,
    ))
}

pub fn dual_to_bytes(model: &DualModel) -> Vec<u8> {
    let header = vec![
        "kind dual".to_string(),
        format!("variant {}", model.variant),
        format!("normalize_features {}", model.normalize_features),
        format!("input_norm {:?}", model.input_norm),
        format!("backbone_first {}", backbone_spec(&model.first_backbone)),
        format!(
            "head_first {}x{}",
            model.first_head.num_classes(),
            model.first_head.feature_dim()
        ),
        format!("backbone_second {}", backbone_spec(&model.second_backbone)),
        format!(
            "head_second {}x{}",
            model.second_head.num_classes(),
            model.second_head.feature_dim()
        ),
    ];
    encode(&header, &model.to_flat())
}

pub fn dual_from_bytes(bytes: &[u8]) -> Result<DualModel> {
    let d = decode(bytes)?;
    if d.get("kind")? != "dual" {
        return Err(bad(format!(
            "expected a dual model checkpoint, found `{}`",
            d.get("kind")?
        )));
    }
    let mut model = DualModel {
        first_backbone: d.backbone("backbone_first")?,
        second_backbone: d.backbone("backbone_second")?,
        first_head: d.head("head_first")?,
        second_head: d.head("head_second")?,
        variant: d.get("variant")?.parse()?,
        normalize_features: d
            .get("normalize_features")?
            .parse()
            .map_err(|_| bad("invalid `normalize_features`"))?,
        input_norm: d.f64_field("input_norm")?,
    };
    model.validate()?;
    model.load_flat(&d.params)?;
    Ok(model)
}

pub fn fr_to_bytes(model: &FrModel) -> Vec<u8> {
    let header = vec![
        "kind fr".to_string(),
        format!("input_norm {:?}", model.input_norm),
        format!("backbone_fr {}", backbone_spec(&model.backbone)),
        format!("head_fr {}x{}", model.head.num_classes(), model.head.feature_dim()),
    ];
    encode(&header, &model.to_flat())
}

pub fn fr_from_bytes(bytes: &[u8]) -> Result<FrModel> {
    let d = decode(bytes)?;
    if d.get("kind")? != "fr" {
        return Err(bad(format!(
            "expected a face recognition checkpoint, found `{}`",
            d.get("kind")?
        )));
    }
    let mut model = FrModel {
        backbone: d.backbone("backbone_fr")?,
        head: d.head("head_fr")?,
        input_norm: d.f64_field("input_norm")?,
    };
    if model.head.feature_dim() != model.backbone.feature_dim() {
        return Err(Error::Shape("head does not match backbone".into()));
    }
    model.load_flat(&d.params)?;
    Ok(model)
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        },
        other => other,
    })
}

pub fn save_dual(model: &DualModel, path: &Path) -> Result<()> {
    std::fs::write(path, dual_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_dual(path: &Path) -> Result<DualModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    with_path(path, dual_from_bytes(&bytes))
}

pub fn save_fr(model: &FrModel, path: &Path) -> Result<()> {
    std::fs::write(path, fr_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_fr(path: &Path) -> Result<FrModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    with_path(path, fr_from_bytes(&bytes))
}

/// Variant recorded in a dual checkpoint without loading the weights.
pub fn peek_variant(bytes: &[u8]) -> Result<VariantTag> {
    decode(bytes)?.get("variant")?.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ModelConfig;

    fn model(variant: VariantTag) -> DualModel {
        let cfg = ModelConfig {
            hidden_dims: vec![7, 5],
            feature_dim: 4,
            activation: Activation::Tanh,
            variant,
            normalize_features: true,
            input_norm: 3.5,
        };
        DualModel::init(9, 3, &cfg, 11).unwrap()
    }

    #[test]
    fn dual_round_trip_is_bit_exact() {
        for v in VariantTag::ALL {
            let m = model(v);
            let bytes = dual_to_bytes(&m);
            let back = dual_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            let a: Vec<u64> = m.to_flat().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.to_flat().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(peek_variant(&bytes).unwrap(), v);
        }
    }

    #[test]
    fn fr_round_trip_and_kind_check() {
        let cfg = ModelConfig {
            hidden_dims: vec![6],
            feature_dim: 3,
            ..ModelConfig::default()
        };
        let fr = FrModel::init(8, 4, &cfg, 2).unwrap();
        let bytes = fr_to_bytes(&fr);
        assert_eq!(fr_from_bytes(&bytes).unwrap(), fr);
        assert!(dual_from_bytes(&bytes).is_err());
        assert!(fr_from_bytes(&dual_to_bytes(&model(VariantTag::Bc))).is_err());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = dual_to_bytes(&model(VariantTag::FcV1));
        assert!(dual_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(dual_from_bytes(b"not a checkpoint\n").is_err());
        let text = String::from_utf8_lossy(&bytes[..60]).to_string();
        assert!(text.starts_with("fcmad-checkpoint 1\nkind dual\nvariant fc-v1\n"));
        let mut wrong = bytes.clone();
        let at = wrong.windows(6).position(|w| w == b"head_f").unwrap();
        wrong[at + 10] = b'9';
        assert!(dual_from_bytes(&wrong).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = model(VariantTag::FcV2);
        save_dual(&m, &p).unwrap();
        assert_eq!(load_dual(&p).unwrap(), m);
        assert!(matches!(load_dual(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
