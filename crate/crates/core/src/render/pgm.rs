//! 16-bit binary PGM depth images.
//!
//! Layout: `P5\n# depth_scale_mm <scale>\n<width> <height>\n65535\n` followed by
//! big-endian samples. A sample `v` encodes `v · scale / 1000` meters; 0 is invalid.

use std::fs;
use std::path::Path;

use super::DepthMap;
use crate::error::{Error, Result};

const SCALE_KEY: &str = "depth_scale_mm";

/// Quantized depth image, the lossless in-file representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage16 {
    pub width: usize,
    pub height: usize,
    /// Millimeters per count, stored as text in the header.
    pub scale_mm: String,
    pub samples: Vec<u16>,
}

impl DepthImage16 {
    pub fn from_depth(depth: &DepthMap, scale_mm: f64) -> Result<Self> {
        if !(scale_mm > 0.0 && scale_mm.is_finite()) {
            return Err(Error::InvalidConfig("depth scale must be positive".into()));
        }
        let samples = depth
            .data()
            .iter()
            .map(|&d| (d * 1000.0 / scale_mm).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        Ok(DepthImage16 {
            width: depth.width(),
            height: depth.height(),
            scale_mm: format!("{scale_mm:?}"),
            samples,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale_mm.parse().unwrap_or(1.0)
    }

    pub fn to_depth(&self) -> DepthMap {
        let scale = self.scale() / 1000.0;
        DepthMap::from_data(
            self.width,
            self.height,
            self.samples.iter().map(|&s| s as f64 * scale).collect(),
        )
        .expect("quantized depths are finite and non-negative")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!(
            "P5\n# {SCALE_KEY} {}\n{} {}\n65535\n",
            self.scale_mm, self.width, self.height
        )
        .into_bytes();
        out.reserve(self.samples.len() * 2);
        for s in &self.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut pos = 0;
        let mut scale_mm = String::from("1.0");
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            // Skip whitespace, collecting comments.
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    let end = bytes[pos..]
                        .iter()
                        .position(|&b| b == b'\n')
                        .map_or(bytes.len(), |e| pos + e);
                    let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
                    let mut parts = comment.split_whitespace();
                    if parts.next() == Some(SCALE_KEY) {
                        if let Some(value) = parts.next() {
                            scale_mm = value.to_string();
                        }
                    }
                    pos = end;
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse(origin, format!("truncated header at byte {pos}")));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(Error::parse(origin, "not a binary PGM (expected P5)"));
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(origin, format!("bad {what} in header")))
        };
        let (width, height, maxval) = (
            num(&tokens[1], "width")?,
            num(&tokens[2], "height")?,
            num(&tokens[3], "maxval")?,
        );
        if maxval != 65535 {
            return Err(Error::parse(
                origin,
                format!("expected 16-bit maxval 65535, got {maxval}"),
            ));
        }
        let parsed: f64 = scale_mm
            .parse()
            .map_err(|_| Error::parse(origin, format!("bad {SCALE_KEY} value {scale_mm}")))?;
        if !(parsed > 0.0) {
            return Err(Error::parse(origin, "depth scale must be positive"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let expected = width * height * 2;
        let body = bytes.get(pos..).unwrap_or(&[]);
        if body.len() != expected {
            return Err(Error::parse(
                origin,
                format!("raster holds {} bytes, expected {expected}", body.len()),
            ));
        }
        let samples = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        Ok(DepthImage16 {
            width,
            height,
            scale_mm,
            samples,
        })
    }
}

pub fn save_depth_pgm(depth: &DepthMap, scale_mm: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let image = DepthImage16::from_depth(depth, scale_mm)?;
    fs::write(path, image.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_depth_pgm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(DepthImage16::decode(&bytes, &path.display().to_string())?.to_depth())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_header_and_big_endian() {
        let mut d = DepthMap::zeros(2, 1);
        d.set(1, 0, 1.234);
        let img = DepthImage16::from_depth(&d, 1.0).unwrap();
        let bytes = img.encode();
        let header = b"P5\n# depth_scale_mm 1.0\n2 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 0, 0x04, 0xD2]);
        assert!((img.to_depth().get(1, 0) - 1.234).abs() < 1e-12);
    }

    #[test]
    fn truncated_raster_is_error() {
        let bytes = DepthImage16::from_depth(&DepthMap::zeros(3, 3), 1.0).unwrap().encode();
        let err = DepthImage16::decode(&bytes[..bytes.len() - 1], "mem").unwrap_err();
        assert!(err.to_string().contains("expected 18"));
        assert!(DepthImage16::decode(b"P5\n4", "mem").is_err());
        assert!(DepthImage16::decode(b"P2\n1 1\n65535\n\0\0", "mem").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let mut d = DepthMap::zeros(4, 3);
        d.set(2, 1, 2.5);
        save_depth_pgm(&d, 0.5, &path).unwrap();
        let back = load_depth_pgm(&path).unwrap();
        assert_eq!(back.get(2, 1), 2.5);
        assert_eq!(back.valid_count(), 1);
    }

    proptest! {
        #[test]
        fn byte_exact_round_trip(
            w in 1usize..12, h in 1usize..12, seed in any::<u64>(),
            scale in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0]),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..w * h).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.1..8.0) }).collect();
            let depth = DepthMap::from_data(w, h, data).unwrap();
            let bytes = DepthImage16::from_depth(&depth, scale).unwrap().encode();
            let decoded = DepthImage16::decode(&bytes, "mem").unwrap();
            prop_assert_eq!(decoded.encode(), bytes.clone());
            // Quantized meters survive re-encoding unchanged.
            let again = DepthImage16::from_depth(&decoded.to_depth(), decoded.scale()).unwrap().encode();
            prop_assert_eq!(again, bytes);
        }
    }
}
