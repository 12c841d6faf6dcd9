//! Portable Float Map, single channel ("Pf").

use crate::error::{FormatError, Result};
use crate::volume::DisparityMap;

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> std::result::Result<&'a str, FormatError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::BadHeader("unexpected end of header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| FormatError::BadHeader("non-ASCII header".into()))
}

/// Parses a grayscale PFM. The sign of the scale line selects the byte
/// order (negative = little-endian); rows are stored bottom to top.
pub fn read_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let mut pos = 0;
    match next_token(bytes, &mut pos).map_err(|_| FormatError::BadMagic)? {
        "Pf" => {}
        "PF" => return Err(FormatError::ColorPfmUnsupported.into()),
        _ => return Err(FormatError::BadMagic.into()),
    }
    let mut number = |what: &str| -> std::result::Result<String, FormatError> {
        let t = next_token(bytes, &mut pos)?;
        if t.is_empty() {
            return Err(FormatError::BadHeader(format!("missing {what}")));
        }
        Ok(t.to_string())
    };
    let width: usize = number("width")?.parse().map_err(|_| FormatError::BadHeader("bad width".into()))?;
    let height: usize = number("height")?.parse().map_err(|_| FormatError::BadHeader("bad height".into()))?;
    let scale: f32 = number("scale")?.parse().map_err(|_| FormatError::BadHeader("bad scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::BadHeader("scale must be non-zero".into()).into());
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(FormatError::Truncated { expected: height * width * 4, found: 0 }.into());
    }
    pos += 1;
    let expected = height * width * 4;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(FormatError::Truncated { expected, found: payload.len() }.into());
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; height * width];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (i / width, i % width);
        data[(height - 1 - row) * width + x] = v;
    }
    DisparityMap::new(height, width, data)
}

/// Serializes as little-endian PFM (scale `-1`).
pub fn write_pfm(map: &DisparityMap) -> Vec<u8> {
    let (h, w) = (map.height(), map.width());
    let mut out = format!("Pf\n{w} {h}\n-1\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&map.get(y, x).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn two_by_two_round_trip() {
        let m = DisparityMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(read_pfm(&write_pfm(&m)).unwrap(), m);
    }

    #[test]
    fn color_pfm_rejected() {
        let err = read_pfm(b"PF\n1 1\n-1\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap_err();
        assert_eq!(err.to_string(), "color PFM unsupported");
        assert!(matches!(read_pfm(b"P5\n1 1\n255\n\0"), Err(Error::Format(FormatError::BadMagic))));
    }

    #[test]
    fn hand_packed_little_and_big_endian() {
        // 2 wide, 2 tall; file rows bottom-up: [3, 4] then [1, 2]
        let vals = [3.0f32, 4.0, 1.0, 2.0];
        let mut le = b"Pf\n2 2\n-1.0\n".to_vec();
        let mut be = b"Pf\n2 2\n1.0\n".to_vec();
        for v in vals {
            le.extend_from_slice(&v.to_bits().to_le_bytes());
            be.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        let want = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(read_pfm(&le).unwrap().data(), &want[..]);
        assert_eq!(read_pfm(&be).unwrap().data(), &want[..]);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = write_pfm(&DisparityMap::constant(3, 3, 1.0));
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            read_pfm(&bytes),
            Err(Error::Format(FormatError::Truncated { expected: 36, found: 35 }))
        ));
        assert!(read_pfm(b"Pf\n2").is_err());
    }
}
