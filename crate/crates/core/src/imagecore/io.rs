//! Binary portable pixmap (P6) and graymap (P5) files, maxval 255.

use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Encode as P6 (3 channels) or P5 (1 channel). Values are rounded to the
/// nearest of 256 levels.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Decode a P5/P6 byte stream. Any malformed or truncated input is an error
/// naming the byte offset where decoding stopped.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(parse_err(0, "missing P5/P6 magic"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(parse_err(1, "only binary P5 and P6 are supported")),
    };
    pos += 2;
    let mut header = [0usize; 3];
    for (k, field) in header.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(parse_err(pos, "header ended early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(pos, format!("expected header field {k}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| parse_err(start, format!("header field {k} out of range")))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(parse_err(pos, format!("maxval {maxval} unsupported, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(pos, "zero image extent"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err(pos, "expected single whitespace before raster")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| parse_err(pos, "image too large"))?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("raster truncated: {} of {need} bytes", raster.len()),
        ));
    }
    let data = raster[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, channels, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{gen_procedural_hr, ProceduralKind};
    use crate::rng::Seed;

    #[test]
    fn round_trip_within_quantization() {
        let img = gen_procedural_hr(Seed(5), 32, ProceduralKind::Mixed).unwrap();
        let back = decode_pnm(&encode_pnm(&img)).unwrap();
        assert!(img.max_abs_diff(&back).unwrap() as f64 <= 1.0 / 255.0 + 1e-9);
        let gray = Image::from_fn(16, 16, 1, |y, x, _| (y * 16 + x) as f32 / 255.0).unwrap();
        let back = decode_pnm(&encode_pnm(&gray)).unwrap();
        assert_eq!(back.channels(), 1);
        assert!(gray.max_abs_diff(&back).unwrap() as f64 <= 1.0 / 255.0 + 1e-9);
    }

    #[test]
    fn half_gray_lands_on_adjacent_levels() {
        let img = Image::filled(16, 16, 3, 0.5).unwrap();
        let back = decode_pnm(&encode_pnm(&img)).unwrap();
        for &v in back.data() {
            assert!(v == 127.0 / 255.0 || v == 128.0 / 255.0, "{v}");
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let img = Image::filled(4, 4, 3, 0.2).unwrap();
        let bytes = encode_pnm(&img);
        let cut = &bytes[..bytes.len() - 5];
        match decode_pnm(cut) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_headers() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n"), Err(Error::Parse { offset: 1, .. })));
        assert!(matches!(decode_pnm(b"P6\n1 1\n65535\n"), Err(Error::Parse { .. })));
        assert!(matches!(decode_pnm(b"P6\n1"), Err(Error::Parse { .. })));
        let ok = decode_pnm(b"P5\n# comment\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(ok.data(), &[0.0, 1.0]);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let img = gen_procedural_hr(Seed(1), 16, ProceduralKind::Checker).unwrap();
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
        assert!(matches!(read_image(dir.path().join("missing.ppm")), Err(Error::Io { .. })));
    }
}
