//! `DMAP` density-map files: magic, `u32` version, `u32` rows, `u32` cols,
//! then `rows·cols` little-endian `f32` values, row-major.

use std::path::Path;

use crate::density::DensityMap;
use crate::error::{FormatError, Result};

const KIND: &str = "DMAP";
pub const MAGIC: &[u8; 4] = b"DMAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_dmap(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(map.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(map.cols() as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_dmap(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    std::fs::write(path, encode_dmap(map))?;
    Ok(())
}

pub fn read_dmap(path: impl AsRef<Path>) -> Result<DensityMap> {
    Ok(decode_dmap(&std::fs::read(path)?)?)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_dmap(bytes: &[u8]) -> Result<DensityMap, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::at_byte(KIND, bytes.len(), "file shorter than the 16-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::at_byte(KIND, 0, "bad magic, expected `DMAP`"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::at_byte(KIND, 4, format!("unsupported version {version}")));
    }
    let rows = u32_at(bytes, 8) as usize;
    let cols = u32_at(bytes, 12) as usize;
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::at_byte(KIND, 8, "dimensions overflow"))?;
    let have = bytes.len() - HEADER_LEN;
    if have != need {
        return Err(FormatError::at_byte(
            KIND,
            HEADER_LEN + have.min(need),
            format!("payload is {have} bytes, {rows}x{cols} map needs {need}"),
        ));
    }
    let values =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(DensityMap::from_vec(rows, cols, values).expect("length checked above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    #[test]
    fn golden_one_by_one() {
        let m = DensityMap::from_vec(1, 1, vec![2.0]).unwrap();
        let bytes = encode_dmap(&m);
        #[rustfmt::skip]
        let golden = [
            b'D', b'M', b'A', b'P',
            1, 0, 0, 0,
            1, 0, 0, 0,
            1, 0, 0, 0,
            0, 0, 0, 0x40,
        ];
        assert_eq!(bytes, golden);
        assert_eq!(decode_dmap(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let m = DensityMap::from_vec(2, 3, vec![0.5; 6]).unwrap();
        let good = encode_dmap(&m);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(decode_dmap(&bad).unwrap_err().location, Location::Byte(0));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode_dmap(&bad).unwrap_err().location, Location::Byte(4));

        assert!(decode_dmap(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_dmap(&long).is_err());
        assert!(decode_dmap(&good[..10]).is_err());
    }
}
