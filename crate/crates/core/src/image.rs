//! 8-bit raster i/o: binary PGM (P5) in and out, binary PPM (P6) in with
//! BT.601 luminance conversion.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format {
        offset: 0,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<(&str, usize, usize, usize, usize)> {
    let magic = std::str::from_utf8(bytes.get(0..2).ok_or_else(|| fmt_err("file too short"))?)
        .map_err(|_| fmt_err("bad magic"))?;
    if magic != "P5" && magic != "P6" {
        return Err(fmt_err(format!("unsupported netpbm magic '{magic}'")));
    }
    let mut pos = 2;
    let mut fields = Vec::new();
    while fields.len() < 3 {
        // Skip whitespace and comment lines.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err("truncated netpbm header"));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fmt_err("bad header number"))?;
        fields.push(v);
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt_err("missing header terminator"));
    }
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(fmt_err(format!("only maxval 255 is supported, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(fmt_err("empty image"));
    }
    Ok((magic, w, h, maxval, pos))
}

/// Load a P5/P6 file as a luminance plane with values in `[0, 255]`.
/// Colour inputs convert with BT.601 weights.
pub fn load_luminance(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    decode_luminance(&bytes)
}

pub fn decode_luminance(bytes: &[u8]) -> Result<Tensor> {
    let (magic, w, h, _, pos) = parse_header(bytes)?;
    let data = &bytes[pos..];
    match magic {
        "P5" => {
            if data.len() < w * h {
                return Err(fmt_err("pgm payload shorter than extents"));
            }
            let vals = data[..w * h].iter().map(|&b| b as f64).collect();
            Tensor::from_vec(&[1, h, w], vals)
        }
        _ => {
            if data.len() < 3 * w * h {
                return Err(fmt_err("ppm payload shorter than extents"));
            }
            let mut vals = Vec::with_capacity(w * h);
            for px in data[..3 * w * h].chunks_exact(3) {
                let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                vals.push(y.round().clamp(0.0, 255.0));
            }
            Tensor::from_vec(&[1, h, w], vals)
        }
    }
}

/// Write a `[1, h, w]` plane as binary PGM, rounding and clamping to
/// `[0, 255]`.
pub fn save_pgm(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(image))?;
    Ok(())
}

pub fn encode_pgm(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.height(), image.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    out
}

/// Round/clamp to the 8-bit grid without serializing.
pub fn to_u8_plane(image: &Tensor) -> Tensor {
    image.map(|v| v.round().clamp(0.0, 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = Tensor::from_vec(&[1, 2, 3], vec![0.0, 10.0, 255.0, 7.0, 128.0, 64.0]).unwrap();
        let bytes = encode_pgm(&img);
        let back = decode_luminance(&bytes).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn ppm_converts_with_bt601_weights() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = decode_luminance(&bytes).unwrap();
        assert_eq!(img.data()[0], (0.299f64 * 255.0).round());
        assert_eq!(img.data()[1], (0.114f64 * 255.0).round());
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let img = decode_luminance(&bytes).unwrap();
        assert_eq!(img.shape(), &[1, 2, 2]);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(decode_luminance(b"P7\n1 1\n255\n\x00").is_err());
        assert!(decode_luminance(b"P5\n4 4\n255\n\x00\x00").is_err());
        assert!(decode_luminance(b"P5\n2 2\n65535\n").is_err());
    }
}
