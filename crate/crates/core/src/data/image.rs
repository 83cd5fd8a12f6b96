//! 8-bit image files: binary PGM (`P5`), binary PPM (`P6`) and a raw format.
//!
//! The raw format is the magic `USIM`, then width, height and channel count
//! as little-endian `u32`, then `width · height · channels` bytes, row-major
//! with interleaved channels.

use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"USIM";

/// Upper bound on decoded size, guarding against corrupt headers.
const MAX_PIXELS: u64 = 1 << 28;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::validation(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::validation(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, pixels)
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

/// Decodes PGM, PPM or raw bytes, dispatching on the magic.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<ImageRecord, String> {
    match bytes.get(..2) {
        Some(b"P5") => decode_pnm(bytes, 1),
        Some(b"P6") => decode_pnm(bytes, 3),
        _ if bytes.starts_with(RAW_MAGIC) => decode_raw(bytes),
        _ => Err("unknown magic bytes".into()),
    }
}

fn checked_size(w: u64, h: u64, c: u64) -> std::result::Result<usize, String> {
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| format!("dimension overflow: {w}x{h}x{c}"))?;
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    Ok(n as usize)
}

fn decode_raw(bytes: &[u8]) -> std::result::Result<ImageRecord, String> {
    let field = |i: usize| -> std::result::Result<u64, String> {
        let b = bytes.get(4 + 4 * i..8 + 4 * i).ok_or("truncated header")?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as u64)
    };
    let (w, h, c) = (field(0)?, field(1)?, field(2)?);
    if c != 1 && c != 3 {
        return Err(format!("unsupported channel count {c}"));
    }
    let n = checked_size(w, h, c)?;
    let payload = &bytes[16..];
    if payload.len() < n {
        return Err(format!("truncated payload: need {n} bytes, have {}", payload.len()));
    }
    if payload.len() > n {
        return Err("trailing bytes after payload".into());
    }
    ImageRecord::new(w as usize, h as usize, c as usize, payload.to_vec()).map_err(|e| e.to_string())
}

/// Netpbm header: magic, width, height, maxval separated by whitespace with
/// `#` comments, then exactly one whitespace byte before the raster.
fn decode_pnm(bytes: &[u8], channels: usize) -> std::result::Result<ImageRecord, String> {
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "dimension overflow".to_string())?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("only 8-bit images are supported (maxval {maxval})"));
    }
    let n = checked_size(w, h, channels as u64)?;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(format!("truncated payload: need {n} bytes, have {}", payload.len()));
    }
    ImageRecord::new(w as usize, h as usize, channels, payload[..n].to_vec()).map_err(|e| e.to_string())
}

pub fn load_image(path: &Path) -> Result<ImageRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|reason| Error::Ingest {
        path: path.to_path_buf(),
        reason,
    })
}

/// PGM for one channel, PPM for three.
pub fn encode_pnm(img: &ImageRecord) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_raw(img: &ImageRecord) -> Vec<u8> {
    let mut out = RAW_MAGIC.to_vec();
    for v in [img.width, img.height, img.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&img.pixels);
    out
}

/// Writes raw format for a `.usim` extension, netpbm otherwise.
pub fn save_image(path: &Path, img: &ImageRecord) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "usim") {
        encode_raw(img)
    } else {
        encode_pnm(img)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crafted_pgm_decodes() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 85, 170, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 1));
        assert_eq!(img.pixels, [0, 85, 170, 255]);
    }

    #[test]
    fn truncation_and_bad_magic_fail() {
        let img = ImageRecord::new(3, 2, 3, (0..18).collect()).unwrap();
        for enc in [encode_pnm(&img), encode_raw(&img)] {
            assert!(decode_image(&enc[..enc.len() - 1]).unwrap_err().contains("truncated"));
        }
        assert!(decode_image(b"GIF89a").unwrap_err().contains("magic"));
        let mut huge = RAW_MAGIC.to_vec();
        for v in [u32::MAX, u32::MAX, 3] {
            huge.extend_from_slice(&v.to_le_bytes());
        }
        assert!(decode_image(&huge).unwrap_err().contains("overflow"));
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\n\x01").unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("bad.pgm") && err.contains("truncated"), "{err}");
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(w in 1usize..9, h in 1usize..9, color in any::<bool>(), seed in any::<u64>()) {
            let c = if color { 3 } else { 1 };
            let pixels = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let img = ImageRecord::new(w, h, c, pixels).unwrap();
            prop_assert_eq!(&decode_image(&encode_pnm(&img)).unwrap(), &img);
            prop_assert_eq!(&decode_image(&encode_raw(&img)).unwrap(), &img);
        }
    }
}
