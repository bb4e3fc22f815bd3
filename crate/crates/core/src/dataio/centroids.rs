//! Centroid annotations as `x,y` CSV (x = column, y = row, zero-based, LF).

use std::path::Path;

use crate::density::{Centroid, CentroidSet};
use crate::error::{FormatError, Result};

const KIND: &str = "centroid CSV";
pub const HEADER: &str = "x,y";

pub fn encode_centroids(set: &CentroidSet) -> String {
    let mut out = String::with_capacity(4 + set.len() * 8);
    out.push_str(HEADER);
    out.push('\n');
    for p in &set.points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    out
}

pub fn write_centroids(path: impl AsRef<Path>, set: &CentroidSet) -> Result<()> {
    std::fs::write(path, encode_centroids(set))?;
    Ok(())
}

pub fn read_centroids(path: impl AsRef<Path>) -> Result<CentroidSet> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| FormatError::at_byte(KIND, e.valid_up_to(), "file is not valid UTF-8"))?;
    Ok(decode_centroids(text)?)
}

pub fn decode_centroids(text: &str) -> Result<CentroidSet, FormatError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n');
    match lines.next() {
        Some(HEADER) => {}
        Some(other) => {
            return Err(FormatError::at_line(KIND, 1, format!("expected header `{HEADER}`, found `{other}`")))
        }
        None => return Err(FormatError::at_line(KIND, 1, "missing header")),
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let mut fields = line.split(',');
        let mut field = |name: &str| -> Result<u32, FormatError> {
            let f = fields.next().ok_or_else(|| FormatError::at_line(KIND, lineno, format!("missing {name} field")))?;
            f.parse::<u32>()
                .map_err(|_| FormatError::at_line(KIND, lineno, format!("{name} `{f}` is not a non-negative integer")))
        };
        let x = field("x")?;
        let y = field("y")?;
        if fields.next().is_some() {
            return Err(FormatError::at_line(KIND, lineno, "expected exactly two fields"));
        }
        points.push(Centroid { x, y });
    }
    Ok(CentroidSet::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    #[test]
    fn golden_files() {
        assert_eq!(encode_centroids(&CentroidSet::default()), "x,y\n");
        let one = CentroidSet::new(vec![Centroid { x: 3, y: 5 }]);
        assert_eq!(encode_centroids(&one), "x,y\n3,5\n");
        assert_eq!(decode_centroids("x,y\n3,5\n").unwrap(), one);
        assert_eq!(decode_centroids("x,y\n").unwrap(), CentroidSet::default());
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(decode_centroids("3,5\n").unwrap_err().location, Location::Line(1));
        assert_eq!(decode_centroids("").unwrap_err().location, Location::Line(1));
        assert_eq!(decode_centroids("x,y\n1,2\n1.5,2\n").unwrap_err().location, Location::Line(3));
        assert_eq!(decode_centroids("x,y\n1\n").unwrap_err().location, Location::Line(2));
        assert_eq!(decode_centroids("x,y\n1,2,3\n").unwrap_err().location, Location::Line(2));
        assert_eq!(decode_centroids("x,y\n-1,2\n").unwrap_err().location, Location::Line(2));
        // CRLF line endings are not accepted
        assert_eq!(decode_centroids("x,y\r\n1,2\r\n").unwrap_err().location, Location::Line(1));
    }
}
