//! `DRMW` model checkpoints.
//!
//! Layout (all little-endian): magic `DRMW`, `u32` version (1), `u8` variant
//! id (0 fcrn, 1 pricnn, 2 pricnn-aux), `f32` density scale, `u32` tensor
//! count, then per tensor a `u16` name length, the UTF-8 name, a `u8` rank,
//! `u32` dims and the `f32` payload. Tensors follow the layer table order
//! with each layer's weight before its bias.

use std::path::Path;

use crate::error::{FormatError, Result};
use crate::model::{layer_specs, ModelVariant};
use crate::params::{Layer, ModelParams};
use crate::tensor::{ConvFilter, Tensor};

const KIND: &str = "DRMW";
pub const MAGIC: &[u8; 4] = b"DRMW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: ModelVariant,
    pub density_scale: f32,
    pub params: ModelParams,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ckpt.variant.id());
    out.extend_from_slice(&ckpt.density_scale.to_le_bytes());
    out.extend_from_slice(&((2 * ckpt.params.layers().len()) as u32).to_le_bytes());
    let mut put = |name: String, dims: &[usize], values: &[f32]| {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for l in ckpt.params.layers() {
        put(format!("{}.weight", l.name), &l.filter.weights.dims(), l.filter.weights.data());
        put(format!("{}.bias", l.name), &[l.filter.bias.len()], &l.filter.bias);
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

/// Reads a checkpoint. With `expected` set, the stored tensors are checked
/// against that variant's layer table instead of the stored variant's.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<ModelVariant>) -> Result<Checkpoint> {
    Ok(decode_checkpoint(&std::fs::read(path)?, expected)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::at_byte(KIND, self.bytes.len(), format!("file ends inside {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// `(name, dims)` of every tensor `variant` stores, in file order.
pub fn expected_tensors(variant: ModelVariant) -> Vec<(String, Vec<usize>)> {
    layer_specs(variant)
        .into_iter()
        .flat_map(|s| {
            [
                (format!("{}.weight", s.name), vec![s.out_channels, s.in_channels, s.kernel, s.kernel]),
                (format!("{}.bias", s.name), vec![s.out_channels]),
            ]
        })
        .collect()
}

pub fn decode_checkpoint(bytes: &[u8], expected: Option<ModelVariant>) -> Result<Checkpoint, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FormatError::at_byte(KIND, 0, "bad magic, expected `DRMW`"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::at_byte(KIND, 4, format!("unsupported version {version}")));
    }
    let id = r.u8("variant")?;
    let stored =
        ModelVariant::from_id(id).ok_or_else(|| FormatError::at_byte(KIND, 8, format!("unknown variant id {id}")))?;
    let density_scale = r.f32("density scale")?;
    if !density_scale.is_finite() || density_scale <= 0.0 {
        return Err(FormatError::at_byte(KIND, 9, format!("density scale {density_scale} is not positive")));
    }
    let count = r.u32("tensor count")? as usize;

    let layout = expected.unwrap_or(stored);
    let table = expected_tensors(layout);
    let mut tensors: Vec<(Vec<usize>, Vec<f32>)> = Vec::with_capacity(table.len());
    for i in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| FormatError::at_byte(KIND, name_at, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u8("tensor rank")? as usize;
        let dims = (0..ndim).map(|_| r.u32("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let Some((want_name, want_dims)) = table.get(i) else {
            return Err(FormatError::at_tensor(
                KIND,
                &name,
                format!("unexpected extra tensor for {layout} (expects {} tensors)", table.len()),
            ));
        };
        if &name != want_name || &dims != want_dims {
            return Err(FormatError::at_tensor(
                KIND,
                &name,
                format!("{layout} expects `{want_name}` with dims {want_dims:?}, found `{name}` with dims {dims:?}"),
            ));
        }
        let n: usize = dims.iter().product();
        let payload = r.take(4 * n, "tensor payload")?;
        let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push((dims, values));
    }
    if let Some((missing, _)) = table.get(count) {
        return Err(FormatError::at_tensor(KIND, missing, format!("{layout} checkpoint is missing this tensor")));
    }
    if r.pos != bytes.len() {
        return Err(FormatError::at_byte(KIND, r.pos, "trailing bytes after last tensor"));
    }
    if stored != layout {
        return Err(FormatError::at_byte(KIND, 8, format!("checkpoint holds {stored}, expected {layout}")));
    }

    let mut layers = Vec::with_capacity(count / 2);
    let mut it = tensors.into_iter();
    for spec in layer_specs(layout) {
        let (wdims, w) = it.next().expect("count checked");
        let (_, b) = it.next().expect("count checked");
        let weights = Tensor::from_vec(wdims.try_into().expect("rank 4"), w).expect("dims checked");
        let filter = ConvFilter::new(weights, b).expect("dims checked");
        layers.push(Layer { name: spec.name, group: spec.group, filter });
    }
    let params = ModelParams::new(layers).expect("unique names");
    Ok(Checkpoint { variant: stored, density_scale, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;
    use crate::model::build_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ckpt(v: ModelVariant) -> Checkpoint {
        Checkpoint {
            variant: v,
            density_scale: 1.0,
            params: build_model(v, &mut ChaCha8Rng::seed_from_u64(4)).unwrap(),
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        for v in ModelVariant::ALL {
            let c = ckpt(v);
            let bytes = encode_checkpoint(&c);
            let back = decode_checkpoint(&bytes, Some(v)).unwrap();
            assert_eq!(back.params.to_bits(), c.params.to_bits());
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn header_bytes() {
        let bytes = encode_checkpoint(&ckpt(ModelVariant::Fcrn));
        assert_eq!(&bytes[..4], b"DRMW");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 0);
        assert_eq!(&bytes[9..13], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[13..17], &[16, 0, 0, 0]);
        // first tensor: "block1.weight", rank 4, dims 32 1 3 3
        assert_eq!(&bytes[17..19], &[13, 0]);
        assert_eq!(&bytes[19..32], b"block1.weight");
        assert_eq!(bytes[32], 4);
        assert_eq!(&bytes[33..49], &[32, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0]);
    }

    #[test]
    fn wrong_variant_names_first_mismatched_tensor() {
        let bytes = encode_checkpoint(&ckpt(ModelVariant::PricnnAux));
        let err = decode_checkpoint(&bytes, Some(ModelVariant::Fcrn)).unwrap_err();
        assert_eq!(err.location, Location::Tensor("block5.weight".into()));

        let bytes = encode_checkpoint(&ckpt(ModelVariant::PricnnOnly));
        let err = decode_checkpoint(&bytes, Some(ModelVariant::PricnnAux)).unwrap_err();
        assert_eq!(err.location, Location::Tensor("aux1.conv1.weight".into()));

        let bytes = encode_checkpoint(&ckpt(ModelVariant::PricnnAux));
        let err = decode_checkpoint(&bytes, Some(ModelVariant::PricnnOnly)).unwrap_err();
        assert_eq!(err.location, Location::Tensor("aux1.conv1.weight".into()));
    }

    #[test]
    fn rejects_corrupt_headers() {
        let good = encode_checkpoint(&ckpt(ModelVariant::Fcrn));
        let mut bad = good.clone();
        bad[1] = b'X';
        assert_eq!(decode_checkpoint(&bad, None).unwrap_err().location, Location::Byte(0));
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode_checkpoint(&bad, None).unwrap_err().location, Location::Byte(4));
        let mut bad = good.clone();
        bad[8] = 7;
        assert_eq!(decode_checkpoint(&bad, None).unwrap_err().location, Location::Byte(8));
        assert!(decode_checkpoint(&good[..good.len() - 2], None).is_err());
    }
}
