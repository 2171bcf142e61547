//! Image file I/O: portable graymap (PGM) with 16-bit depth.
//!
//! Images in this crate live in `[0,1]` as `f64`; files store them as
//! 16-bit binary PGM (`P5`, maxval 65535), which keeps ~4.8 significant
//! digits — plenty for visual inspection while staying readable by any
//! netpbm-aware viewer. The reader also accepts 8-bit files and the ASCII
//! `P2` variant, normalizing by the declared maxval.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

/// Write `img` (any values; clamped to `[0,1]`) as 16-bit binary PGM.
pub fn write_pgm16(path: &Path, img: &Tensor) -> Result<()> {
    if img.shape().len() != 2 {
        return Err(Error::shape(format!("pgm output must be [h,w], got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut buf = Vec::with_capacity(32 + 2 * h * w);
    write!(buf, "P5\n{w} {h}\n65535\n")?;
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a `P2` or `P5` graymap, normalized to `[0,1]` by its maxval.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;

    // header tokens, skipping whitespace and '#' comments
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pgm: truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(&bytes)?;
    if magic != "P5" && magic != "P2" {
        return Err(Error::format(format!("pgm: unsupported magic {magic:?}")));
    }
    let parse_dim = |t: String| -> Result<usize> {
        t.parse::<usize>().map_err(|_| Error::format(format!("pgm: bad header number {t:?}")))
    };
    let w = parse_dim(token(&bytes)?)?;
    let h = parse_dim(token(&bytes)?)?;
    let maxval = parse_dim(token(&bytes)?)?;
    if w == 0 || h == 0 {
        return Err(Error::format("pgm: zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("pgm: maxval {maxval} outside 1..=65535")));
    }

    let mut data = Vec::with_capacity(h * w);
    if magic == "P2" {
        for _ in 0..h * w {
            let v = parse_dim(token(&bytes)?)?;
            data.push(v as f64 / maxval as f64);
        }
    } else {
        pos += 1; // single whitespace byte after maxval
        let wide = maxval > 255;
        let need = h * w * if wide { 2 } else { 1 };
        if bytes.len() < pos + need {
            return Err(Error::format(format!(
                "pgm: payload holds {} bytes, expected {need}",
                bytes.len().saturating_sub(pos)
            )));
        }
        for i in 0..h * w {
            let v = if wide {
                u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as f64
            } else {
                bytes[pos + i] as f64
            };
            data.push(v / maxval as f64);
        }
    }
    Tensor::from_vec(&[h, w], data)
}
