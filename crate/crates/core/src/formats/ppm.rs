//! Binary netpbm rasters: P5 (gray) and P6 (RGB), maxval 255 only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ImageBuffer;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws_and_comments(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(format_err(self.pos, "expected whitespace"));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, "expected decimal integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, "integer out of range"))
    }
}

pub fn parse_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(format_err(0, "bad magic, expected P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    cur.skip_ws_and_comments()?;
    let width = cur.number()?;
    cur.skip_ws_and_comments()?;
    let height = cur.number()?;
    cur.skip_ws_and_comments()?;
    let maxval_at = cur.pos;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(format_err(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(format_err(cur.pos, "expected single whitespace before raster")),
    }
    if width == 0 || height == 0 {
        return Err(format_err(2, "zero image dimension"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err(2, "image dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(format_err(bytes.len(), format!("truncated raster: {} of {need} bytes", raster.len())));
    }
    if raster.len() > need {
        return Err(format_err(cur.pos + need, "trailing bytes after raster"));
    }
    ImageBuffer::from_raw(width, height, channels, raster.to_vec())
}

/// Canonical encoding: `P6 <w> <h> 255\n` followed by the raster.
pub fn write_ppm(img: &ImageBuffer) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::invalid(format!("cannot write {c}-channel image as PPM"))),
    };
    let mut out = format!("{magic} {} {} 255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    parse_ppm(&std::fs::read(path)?)
}

pub fn write_ppm_file(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    std::fs::write(path, write_ppm(img)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_rgb() {
        let mut f = b"P6 2 1 255\n".to_vec();
        f.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = parse_ppm(&f).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 3));
        assert_eq!(img.pixel(0, 0), &[255, 0, 0]);
        assert_eq!(img.pixel(1, 0), &[0, 255, 0]);
        assert_eq!(write_ppm(&img).unwrap(), f);
    }

    #[test]
    fn minimal_gray() {
        let f = b"P5 1 1 255\n\x80".to_vec();
        let img = parse_ppm(&f).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[128]);
        assert_eq!(write_ppm(&img).unwrap(), f);
    }

    #[test]
    fn rgb_2x2_round_trip() {
        let img = ImageBuffer::from_raw(2, 2, 3, (0..12).collect()).unwrap();
        assert_eq!(parse_ppm(&write_ppm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn accepts_comments_and_newlines() {
        let mut f = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        f.extend_from_slice(&[1, 2]);
        assert_eq!(parse_ppm(&f).unwrap().data(), &[1, 2]);
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(parse_ppm(b"P3 1 1 255\n\x00"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_ppm(b"P5 1 1 65535\n\x00\x00"), Err(Error::Format { offset: 7, .. })));
        let truncated = parse_ppm(b"P6 2 1 255\n\x00\x00\x00");
        assert!(matches!(truncated, Err(Error::Format { offset: 14, .. })));
        let trailing = parse_ppm(b"P5 1 1 255\n\x00\x00");
        assert!(matches!(trailing, Err(Error::Format { offset: 12, .. })));
    }

    proptest! {
        #[test]
        fn canonical_round_trip(w in 1usize..17, h in 1usize..17, gray in any::<bool>(), seed in any::<u64>()) {
            let c = if gray { 1 } else { 3 };
            let data: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8).collect();
            let img = ImageBuffer::from_raw(w, h, c, data).unwrap();
            let bytes = write_ppm(&img).unwrap();
            let back = parse_ppm(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(write_ppm(&back).unwrap(), bytes);
        }
    }
}
