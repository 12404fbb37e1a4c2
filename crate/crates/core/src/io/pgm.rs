//! Binary (P5) greymap images.
//!
//! Images are written with maxval 255 and `pixel = round(value * 255)`.
//! Masks are written as 0/255 and read back as `pixel > maxval / 2`.

use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Image, Mask};

pub fn encode_pixels(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn image_to_pgm(image: &Image) -> Vec<u8> {
    let px: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8)
        .collect();
    encode_pixels(image.width(), image.height(), &px)
}

pub fn mask_to_pgm(mask: &Mask) -> Vec<u8> {
    let px: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    encode_pixels(mask.width(), mask.height(), &px)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &image_to_pgm(image))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_atomic(path, &mask_to_pgm(mask))
}

/// Raw greymap: width, height, maxval and one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Greymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

/// Parse a P5 file with an 8-bit maxval; `#` comments in the header are skipped.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Greymap> {
    let err = |msg: &str| Error::parse(path, 1, 1, msg);
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(err("not a binary PGM (expected magic P5)"));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(&format!("invalid {what} `{s}`")));
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM files (maxval 1..=255) are supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(err(&format!(
            "expected {n} pixels, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(Greymap {
        width,
        height,
        maxval: maxval as u16,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

pub fn read_greymap(path: &Path) -> Result<Greymap> {
    parse_pgm(&fs::read(path)?, path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let g = read_greymap(path)?;
    let scale = g.maxval as f32;
    Image::new(g.height, g.width, g.pixels.iter().map(|&p| p as f32 / scale).collect())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let g = read_greymap(path)?;
    let half = g.maxval / 2;
    Mask::new(
        g.height,
        g.width,
        g.pixels.iter().map(|&p| (p as u16 > half) as u8).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = Image::from_fn(9, 11, |x, y| (x * 9 + y) as f32 / 98.0).unwrap();
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.shape(), (9, 11));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
        // Re-writing the read image reproduces the file exactly.
        let p2 = dir.path().join("b.pgm");
        write_image(&p2, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
        assert!(fs::read(&p).unwrap().starts_with(b"P5\n11 9\n255\n"));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let m = Mask::from_fn(8, 10, |x, y| x > y);
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn header_comments_and_errors() {
        let p = Path::new("x.pgm");
        let g = parse_pgm(b"P5 # c\n2 1\n# another\n255\n\x00\xff", p).unwrap();
        assert_eq!((g.width, g.height, g.pixels.clone()), (2, 1, vec![0, 255]));
        assert!(parse_pgm(b"P2\n1 1\n255\n0", p).is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00", p).is_err());
        assert!(parse_pgm(b"P5\n2 2\n65535\n", p).is_err());
        let e = parse_pgm(b"P5\n2", p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
