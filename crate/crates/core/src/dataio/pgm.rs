//! Binary PGM (`P5`) with `maxval` 255.

use std::path::Path;

use crate::error::{FormatError, Result};

const KIND: &str = "PGM";

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> crate::Result<Self> {
        if pixels.len() != width * height {
            return Err(crate::Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    Ok(decode_pgm(&std::fs::read(path)?)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments that run to the end of the line.
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<(usize, usize), FormatError> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(start) {
                None => FormatError::at_byte(KIND, start, format!("header ends before {what}")),
                Some(b) => FormatError::at_byte(KIND, start, format!("expected {what}, found byte 0x{b:02x}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .map(|v| (v, start))
            .ok_or_else(|| FormatError::at_byte(KIND, start, format!("{what} is out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, FormatError> {
    if !bytes.starts_with(b"P5") {
        return Err(FormatError::at_byte(KIND, 0, "missing `P5` magic"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(FormatError::at_byte(KIND, 2, "expected whitespace after magic"));
    }
    let (width, wpos) = cur.number("width")?;
    let (height, hpos) = cur.number("height")?;
    let (maxval, mpos) = cur.number("maxval")?;
    if width == 0 {
        return Err(FormatError::at_byte(KIND, wpos, "width is zero"));
    }
    if height == 0 {
        return Err(FormatError::at_byte(KIND, hpos, "height is zero"));
    }
    if maxval != 255 {
        return Err(FormatError::at_byte(KIND, mpos, format!("maxval must be 255, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(FormatError::at_byte(KIND, cur.pos, "expected one whitespace byte after maxval")),
        None => return Err(FormatError::at_byte(KIND, cur.pos, "header ends before pixel data")),
    }
    let start = cur.pos;
    let need =
        width.checked_mul(height).ok_or_else(|| FormatError::at_byte(KIND, wpos, "image dimensions overflow"))?;
    let have = bytes.len() - start;
    if have < need {
        return Err(FormatError::at_byte(
            KIND,
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(FormatError::at_byte(KIND, start + need, format!("{} trailing bytes after payload", have - need)));
    }
    Ok(GrayImage { width, height, pixels: bytes[start..].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    #[test]
    fn golden_two_by_two() {
        let img = GrayImage::new(2, 2, vec![0, 255, 128, 64]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\xff\x80\x40");
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn comments_and_extra_whitespace_are_accepted() {
        let bytes = b"P5 # made by hand\n# another\n 3\t1\n255\n\x01\x02\x03";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!((img.width, img.height), (3, 1));
        assert_eq!(img.pixels, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_other_maxval() {
        let err = decode_pgm(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert_eq!(err.location, Location::Byte(7));
    }

    #[test]
    fn rejects_truncation_with_offset() {
        let err = decode_pgm(b"P5\n2 2\n255\n\x00\xff").unwrap_err();
        assert_eq!(err.location, Location::Byte(13));
        assert!(err.message.contains("truncated"));
    }

    #[test]
    fn rejects_bad_magic_and_garbage() {
        assert_eq!(decode_pgm(b"P2\n1 1\n255\n0").unwrap_err().location, Location::Byte(0));
        assert_eq!(decode_pgm(b"P5\nx 1\n255\n\x00").unwrap_err().location, Location::Byte(3));
        assert!(decode_pgm(b"P5\n1 1\n255").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255\n\x00\x00").is_err());
    }
}
