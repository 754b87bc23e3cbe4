//! Sample tensor files, raw I/Q input and PPM export.

use super::{CliError, Result};
use crate::dsp::SpectrogramImage;
use num_complex::Complex64;
use std::fs;
use std::path::Path;

pub const SPT_MAGIC: &[u8; 4] = b"SPTG";
pub const SPT_VERSION: u8 = 1;
pub const SPT_DTYPE_F32: u8 = 1;
pub const SPT_LAYOUT_CHW: u8 = 1;
pub const SPT_HEADER_LEN: usize = 20;

fn format_err(what: &str, offset: usize, message: impl Into<String>) -> CliError {
    CliError::Format {
        what: what.to_string(),
        offset,
        message: message.into(),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `SPTG` header then `C·H·W` little-endian `f32` values.
pub fn encode_spt(img: &SpectrogramImage) -> Vec<u8> {
    let [c, h, w] = img.shape();
    let mut out = Vec::with_capacity(SPT_HEADER_LEN + 4 * img.pixels.len());
    out.extend_from_slice(SPT_MAGIC);
    out.extend_from_slice(&[SPT_VERSION, SPT_DTYPE_F32, SPT_LAYOUT_CHW, 0]);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &img.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_spt(bytes: &[u8]) -> Result<SpectrogramImage> {
    const WHAT: &str = "sample tensor";
    if bytes.len() < SPT_HEADER_LEN {
        return Err(format_err(WHAT, bytes.len(), "truncated header"));
    }
    if &bytes[..4] != SPT_MAGIC {
        return Err(format_err(WHAT, 0, "bad magic"));
    }
    for (off, want, name) in [(4, SPT_VERSION, "version"), (5, SPT_DTYPE_F32, "dtype"), (6, SPT_LAYOUT_CHW, "layout")] {
        if bytes[off] != want {
            return Err(format_err(WHAT, off, format!("unsupported {name} code {}", bytes[off])));
        }
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    if c != SpectrogramImage::CHANNELS {
        return Err(format_err(WHAT, 8, format!("expected 3 channels, got {c}")));
    }
    let n = c * h * w;
    let want = SPT_HEADER_LEN + 4 * n;
    if bytes.len() != want {
        return Err(format_err(
            WHAT,
            bytes.len().min(want),
            format!("payload holds {} bytes, header implies {}", bytes.len() - SPT_HEADER_LEN, 4 * n),
        ));
    }
    let mut pixels = Vec::with_capacity(n);
    for (k, chunk) in bytes[SPT_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !(0.0..=1.0).contains(&v) {
            return Err(format_err(WHAT, SPT_HEADER_LEN + 4 * k, format!("value {v} outside [0, 1]")));
        }
        pixels.push(v);
    }
    Ok(SpectrogramImage { height: h, width: w, pixels })
}

pub fn write_spt(path: &Path, img: &SpectrogramImage) -> Result<()> {
    write_file(path, &encode_spt(img))
}

pub fn read_spt(path: &Path) -> Result<SpectrogramImage> {
    decode_spt(&read_file(path)?).map_err(|e| e.with_path(path))
}

/// Interleaved little-endian `f32` I/Q pairs.
pub fn decode_iq(bytes: &[u8]) -> Result<Vec<Complex64>> {
    const WHAT: &str = "I/Q stream";
    if bytes.is_empty() {
        return Err(format_err(WHAT, 0, "empty input"));
    }
    if bytes.len() % 8 != 0 {
        return Err(format_err(WHAT, bytes.len() - bytes.len() % 8, "trailing partial I/Q pair"));
    }
    bytes
        .chunks_exact(8)
        .enumerate()
        .map(|(k, c)| {
            let re = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            if !re.is_finite() || !im.is_finite() {
                return Err(format_err(WHAT, 8 * k, "non-finite sample"));
            }
            Ok(Complex64::new(re as f64, im as f64))
        })
        .collect()
}

pub fn encode_iq(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * samples.len());
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

/// Binary P6 PPM with 8-bit channels.
pub fn encode_ppm(img: &SpectrogramImage) -> Vec<u8> {
    let plane = img.height * img.width;
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in 0..plane {
        for c in 0..3 {
            out.push((img.pixels[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> SpectrogramImage {
        SpectrogramImage {
            height: 2,
            width: 3,
            pixels: (0..18).map(|i| i as f32 / 17.0).collect(),
        }
    }

    #[test]
    fn spt_round_trip_is_bitwise() {
        let img = image();
        let bytes = encode_spt(&img);
        assert_eq!(&bytes[..8], b"SPTG\x01\x01\x01\x00");
        assert_eq!(bytes.len(), 20 + 72);
        let back = decode_spt(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_spt(&back), bytes);
    }

    #[test]
    fn spt_errors_carry_offsets() {
        let mut bytes = encode_spt(&image());
        let offset = |b: &[u8]| match decode_spt(b) {
            Err(CliError::Format { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(offset(&bytes[..30]), 30);
        bytes[5] = 2;
        assert_eq!(offset(&bytes), 5);
        bytes[5] = 1;
        bytes[20 + 4 * 3..20 + 4 * 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(offset(&bytes), 32);
        bytes[0] = b'X';
        assert_eq!(offset(&bytes), 0);
    }

    #[test]
    fn iq_round_trip_and_partial_pair() {
        let s = vec![Complex64::new(0.5, -1.25), Complex64::new(3.0, 0.0)];
        assert_eq!(decode_iq(&encode_iq(&s)).unwrap(), s);
        let mut b = encode_iq(&s);
        b.push(0);
        assert!(matches!(decode_iq(&b), Err(CliError::Format { offset: 16, .. })));
    }

    #[test]
    fn ppm_header_and_size() {
        let p = encode_ppm(&image());
        assert!(p.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(p.len(), 11 + 18);
    }
}
