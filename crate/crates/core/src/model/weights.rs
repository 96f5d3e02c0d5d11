//! Binary weight persistence: named f32 tensors with a version header and
//! a config echo, so a file can be rejected before any shapes mismatch.
//!
//! Layout (all integers little-endian u32): magic "P2DW", version, echo
//! length + UTF-8 echo, tensor count, then per tensor: name length, name,
//! rank, dims, f32 payload. Tensors are stored sorted by name, making the
//! encoding canonical.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::Tensor;
use crate::math::Scalar;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"P2DW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightError {
    BadMagic,
    VersionMismatch { expected: u32, got: u32 },
    Truncated { needed: usize, got: usize },
    BadEncoding,
    ConfigMismatch { expected: String, got: String },
    MissingTensor(String),
    UnknownTensor(String),
    ShapeMismatch { name: String },
}

impl fmt::Display for WeightError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightError::BadMagic => write!(f, "not a weight file (bad magic)"),
            WeightError::VersionMismatch { expected, got } => {
                write!(f, "weight format version {got}, expected {expected}")
            }
            WeightError::Truncated { needed, got } => {
                write!(f, "weight file truncated: needed {needed} bytes, got {got}")
            }
            WeightError::BadEncoding => write!(f, "malformed weight file"),
            WeightError::ConfigMismatch { expected, got } => {
                write!(f, "config mismatch: file built for '{got}', loading into '{expected}'")
            }
            WeightError::MissingTensor(name) => write!(f, "missing tensor '{name}'"),
            WeightError::UnknownTensor(name) => write!(f, "unexpected tensor '{name}'"),
            WeightError::ShapeMismatch { name } => {
                write!(f, "shape mismatch for tensor '{name}'")
            }
        }
    }
}

impl From<WeightError> for String {
    fn from(e: WeightError) -> String {
        alloc::format!("{e}")
    }
}

/// Named tensor payloads plus the config echo of the model that wrote them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub config_echo: String,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

pub(crate) fn store_from_params<S: Scalar>(
    config_echo: String,
    params: &[(String, Tensor<S>)],
) -> WeightStore {
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let data: Vec<f32> = t.value().iter().map(|v| v.as_f32()).collect();
            (name.clone(), (t.shape(), data))
        })
        .collect();
    WeightStore {
        config_echo,
        tensors,
    }
}

pub(crate) fn load_params<S: Scalar>(
    store: &WeightStore,
    expected_echo: &str,
    params: &[(String, Tensor<S>)],
) -> Result<(), WeightError> {
    if store.config_echo != expected_echo {
        return Err(WeightError::ConfigMismatch {
            expected: expected_echo.into(),
            got: store.config_echo.clone(),
        });
    }
    for name in store.tensors.keys() {
        if !params.iter().any(|(n, _)| n == name) {
            return Err(WeightError::UnknownTensor(name.clone()));
        }
    }
    for (name, tensor) in params {
        let (shape, data) = store
            .tensors
            .get(name)
            .ok_or_else(|| WeightError::MissingTensor(name.clone()))?;
        if *shape != tensor.shape() {
            return Err(WeightError::ShapeMismatch { name: name.clone() });
        }
        tensor.set_data(data.iter().map(|&v| S::from_f32(v)).collect());
    }
    Ok(())
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_weights(store: &WeightStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    push_u32(&mut out, WEIGHTS_VERSION);
    push_u32(&mut out, store.config_echo.len() as u32);
    out.extend_from_slice(store.config_echo.as_bytes());
    push_u32(&mut out, store.tensors.len() as u32);
    for (name, (shape, data)) in &store.tensors {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, shape.len() as u32);
        for &d in shape {
            push_u32(&mut out, d as u32);
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        if self.pos + n > self.buf.len() {
            return Err(WeightError::Truncated {
                needed: self.pos + n,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore, WeightError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(WeightError::BadMagic);
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(WeightError::VersionMismatch {
            expected: WEIGHTS_VERSION,
            got: version,
        });
    }
    let echo_len = r.u32()? as usize;
    let config_echo = core::str::from_utf8(r.take(echo_len)?)
        .map_err(|_| WeightError::BadEncoding)?
        .into();
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name: String = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| WeightError::BadEncoding)?
            .into();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(WeightError::BadEncoding);
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(4 * n)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(WeightError::BadEncoding);
        }
    }
    if r.pos != bytes.len() {
        return Err(WeightError::BadEncoding);
    }
    Ok(WeightStore {
        config_echo,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use super::*;
    use crate::model::{ModelConfig, PromptNet};
    use crate::rng;

    fn toy_net(seed: u64) -> PromptNet<f32> {
        let mut r = rng::seeded(seed, 300);
        let cfg = ModelConfig {
            input_size: 16,
            vit_patch: 4,
            embed_dim: 8,
            depth: 4,
            heads: 2,
            decoder_channels: [4, 4, 4, 4],
            ..ModelConfig::default()
        };
        PromptNet::new(&mut r, cfg).unwrap()
    }

    #[test]
    fn codec_round_trip_bit_exact() {
        let net = toy_net(1);
        let store = net.to_store();
        let decoded = decode_weights(&encode_weights(&store)).unwrap();
        assert_eq!(decoded, store);
    }

    #[test]
    fn load_reproduces_outputs_bit_exactly() {
        let a = toy_net(2);
        let b = toy_net(3);
        let img_data: Vec<f32> = (0..3 * 16 * 16).map(|i| (i as f32 * 0.013).sin()).collect();
        let img = crate::autodiff::Tensor::from_vec(&[3, 16, 16], img_data);
        let out_a = a.forward(&img, None).unwrap().value();
        assert_ne!(out_a, b.forward(&img, None).unwrap().value());
        b.load_store(&decode_weights(&encode_weights(&a.to_store())).unwrap())
            .unwrap();
        assert_eq!(out_a, b.forward(&img, None).unwrap().value());
    }

    #[test]
    fn bad_magic_rejected() {
        assert_eq!(decode_weights(b"NOPE"), Err(WeightError::BadMagic));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode_weights(&toy_net(4).to_store());
        bytes[4] = 99;
        assert!(matches!(
            decode_weights(&bytes),
            Err(WeightError::VersionMismatch { got: 99, .. })
        ));
    }

    #[test]
    fn truncation_rejected() {
        let bytes = encode_weights(&toy_net(5).to_store());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_weights(cut),
            Err(WeightError::Truncated { .. })
        ));
    }

    #[test]
    fn tampered_shape_names_the_tensor() {
        let net = toy_net(6);
        let mut store = net.to_store();
        let name = "head.conv1_w";
        let entry = store.tensors.get_mut(name).unwrap();
        entry.0[0] += 1;
        entry.1.extend(core::iter::repeat(0.0).take(entry.1.len() / entry.0[0]));
        let err = net.load_store(&store).unwrap_err();
        match err {
            WeightError::ShapeMismatch { name: n } => assert_eq!(n, name),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_and_unknown_tensors_rejected() {
        let net = toy_net(7);
        let mut store = net.to_store();
        let (shape, data) = store.tensors.remove("head.conv2_b").unwrap();
        assert!(matches!(
            net.load_store(&store),
            Err(WeightError::MissingTensor(n)) if n == "head.conv2_b"
        ));
        store.tensors.insert("head.conv2_b".into(), (shape, data));
        store.tensors.insert("bogus".into(), (vec![1], vec![0.0]));
        assert!(matches!(
            net.load_store(&store),
            Err(WeightError::UnknownTensor(n)) if n == "bogus"
        ));
    }

    #[test]
    fn config_mismatch_rejected() {
        let net = toy_net(8);
        let mut store = net.to_store();
        store.config_echo = "input_size=999".into();
        assert!(matches!(
            net.load_store(&store),
            Err(WeightError::ConfigMismatch { .. })
        ));
    }
}
