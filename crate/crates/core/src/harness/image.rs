//! 16-bit PGM and 8-bit PPM heatmap emission.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// Viridis-like anchor colours at 0, 1/4, 1/2, 3/4 and 1.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn dims(img: &RealTensor) -> Result<(usize, usize)> {
    match img.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::shape(format!("images must be [H, W], got {s:?}"))),
    }
}

fn unit(v: f64, max: f64) -> f64 {
    if max > 0.0 && v.is_finite() {
        (v / max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Binary PGM (`P5`, maxval 65535, big-endian samples) with `[0, max]`
/// mapped onto the full 16-bit range.
pub fn pgm16_bytes(img: &RealTensor, max: f64) -> Result<Vec<u8>> {
    let (h, w) = dims(img)?;
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in img.data() {
        let q = (unit(v, max) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

/// Colour of `t ∈ [0, 1]` on the fixed ramp.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        *out = (RAMP[i][c] + f * (RAMP[i + 1][c] - RAMP[i][c])).round() as u8;
    }
    rgb
}

/// Binary PPM (`P6`, maxval 255) heatmap of `[0, max]`.
pub fn ppm_heatmap_bytes(values: &RealTensor, max: f64) -> Result<Vec<u8>> {
    let (h, w) = dims(values)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &v in values.data() {
        out.extend_from_slice(&ramp_color(unit(v, max)));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm16(path: &Path, img: &RealTensor, max: f64) -> Result<()> {
    write(path, &pgm16_bytes(img, max)?)
}

pub fn write_heatmap(path: &Path, values: &RealTensor, max: f64) -> Result<()> {
    write(path, &ppm_heatmap_bytes(values, max)?)
}

/// Decoded netpbm raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Samples per pixel: 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub samples: Vec<u16>,
}

fn header_fields(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format("header", "truncated netpbm header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((fields, i + 1))
}

/// Parses binary PGM (`P5`) or PPM (`P6`) data.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Raster> {
    let (f, body) = header_fields(bytes)?;
    let channels = match f[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format("magic", format!("unsupported netpbm type {m}"))),
    };
    let num = |s: &str, field: &str| s.parse::<usize>().map_err(|_| Error::format(field, format!("bad number `{s}`")));
    let (width, height, maxval) = (num(&f[1], "width")?, num(&f[2], "height")?, num(&f[3], "maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("maxval", format!("{maxval} out of range")));
    }
    let bps = if maxval > 255 { 2 } else { 1 };
    let n = width * height * channels;
    let data = bytes.get(body..).unwrap_or(&[]);
    if data.len() != n * bps {
        return Err(Error::format("pixels", format!("{} bytes, expected {}", data.len(), n * bps)));
    }
    let samples = if bps == 2 {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data.iter().map(|&b| b as u16).collect()
    };
    Ok(Raster {
        width,
        height,
        maxval: maxval as u16,
        channels,
        samples,
    })
}

pub fn read_netpbm(path: &Path) -> Result<Raster> {
    parse_netpbm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
