//! Binary netpbm I/O: P5 (grayscale, 8 or 16 bit) and P6 (RGB, 8 bit).
//!
//! Samples wider than one byte are big-endian, as the format requires.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub samples: Vec<u16>,
}

impl Pnm {
    pub fn gray(width: usize, height: usize, maxval: u16, samples: Vec<u16>) -> Self {
        Pnm {
            width,
            height,
            maxval,
            channels: 1,
            samples,
        }
    }

    pub fn rgb(width: usize, height: usize, samples: Vec<u16>) -> Self {
        Pnm {
            width,
            height,
            maxval: 255,
            channels: 3,
            samples,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        assert_eq!(self.samples.len(), self.width * self.height * self.channels);
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.samples.iter().map(|&s| s as u8));
        } else {
            for &s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(path, why.to_string());
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
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
                return Err(bad("truncated header"));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let channels = match tokens[0] {
            "P5" => 1,
            "P6" => 3,
            other => return Err(bad(&format!("unsupported magic {other}"))),
        };
        let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
        if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
            return Err(bad("invalid dimensions or maxval"));
        }
        let n = width * height * channels;
        let raster = bytes.get(pos..).unwrap_or_default();
        let samples: Vec<u16> = if maxval < 256 {
            if raster.len() < n {
                return Err(bad("truncated raster"));
            }
            raster[..n].iter().map(|&b| b as u16).collect()
        } else {
            if raster.len() < 2 * n {
                return Err(bad("truncated raster"));
            }
            raster[..2 * n].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        if samples.iter().any(|&s| s as usize > maxval) {
            return Err(bad("sample exceeds maxval"));
        }
        Ok(Pnm {
            width,
            height,
            maxval: maxval as u16,
            channels,
            samples,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}
