//! Netpbm graymap I/O: reads P5 (binary) and P2 (ASCII), writes P5 at maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgproc::{GrayImage, Raster};

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Skips whitespace and `#` comments that run to end of line.
    fn skip_ws(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Decodes an in-memory P5 or P2 graymap; intensities are divided by maxval.
pub fn decode_pgm(buf: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor { buf, pos: 0 };
    if buf.len() < 2 || buf[0] != b'P' || !(buf[1] == b'5' || buf[1] == b'2') {
        return Err(cur.err("missing P5/P2 magic number"));
    }
    let binary = buf[1] == b'5';
    cur.pos = 2;
    let width = cur.uint("width")? as usize;
    let height = cur.uint("height")? as usize;
    let maxval = cur.uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("zero image dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n);

    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
            return Err(cur.err("expected whitespace after maxval"));
        }
        cur.pos += 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let need = n * bytes_per;
        let avail = buf.len() - cur.pos;
        if avail < need {
            return Err(Error::Parse {
                offset: buf.len(),
                message: format!("truncated payload: need {need} bytes, have {avail}"),
            });
        }
        let payload = &buf[cur.pos..cur.pos + need];
        for (i, chunk) in payload.chunks_exact(bytes_per).enumerate() {
            let v = if bytes_per == 1 {
                chunk[0] as u32
            } else {
                u16::from_be_bytes([chunk[0], chunk[1]]) as u32
            };
            if v > maxval {
                return Err(Error::Parse {
                    offset: cur.pos + i * bytes_per,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as f64 * scale);
        }
    } else {
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.uint("sample").map_err(|e| match e {
                Error::Parse { offset, .. } if offset >= buf.len() => Error::Parse {
                    offset,
                    message: "truncated payload".into(),
                },
                other => other,
            })?;
            if v > maxval {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("sample {v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as f64 * scale);
        }
    }
    GrayImage::try_from(Raster::new(width, height, data)?)
}

/// Encodes as binary P5 with maxval 255, rounding to the nearest level.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&buf)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_binary_payload() {
        let mut buf = b"P5\n2 2\n255\n".to_vec();
        buf.extend([0u8, 255, 128, 64]);
        let img = decode_pgm(&buf).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn header_dimensions() {
        let mut buf = b"P5 3 2 255\n".to_vec();
        buf.extend([1u8; 6]);
        let img = decode_pgm(&buf).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
    }

    #[test]
    fn ascii_with_comments_and_16_bit_binary() {
        let img = decode_pgm(b"P2\n# comment\n2 1\n# another\n1000\n0 1000\n").unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);

        let mut buf = b"P5\n1 1\n65535\n".to_vec();
        buf.extend(32768u16.to_be_bytes());
        let img = decode_pgm(&buf).unwrap();
        assert!((img.get(0, 0) - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        match decode_pgm(b"P6\n1 1\n255\n\0") {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match decode_pgm(b"P5\n2 x\n255\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        match decode_pgm(b"P5\n2 2\n255\n\x01\x02") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("truncated")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode_pgm(b"P2\n2 1\n255\n3").is_err());
        assert!(decode_pgm(b"P2\n1 1\n10\n11\n").is_err());
        assert!(decode_pgm(b"P5\n1 1\n70000\n\0").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 4 + y) as f64 / 19.0);
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
        assert!(matches!(
            read_pgm(dir.path().join("missing.pgm")),
            Err(Error::Io { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn round_trip_quantization_bound(
            w in 1usize..12,
            h in 1usize..12,
            seed in proptest::collection::vec(0.0f64..=1.0, 144),
        ) {
            let img = GrayImage::from_fn(w, h, |x, y| seed[y * 12 + x]);
            let back = decode_pgm(&encode_pgm(&img)).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }
}
