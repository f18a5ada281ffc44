//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dim("raster", "bytes", width * height * channels, data.len()));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// `H×W×3` values in `[0, 1]`; gray rasters are replicated across channels.
    pub fn to_image(&self) -> Tensor<f32> {
        let c = self.channels;
        Tensor::from_fn(vec![self.height, self.width, 3], |i| {
            let (px, ch) = (i / 3, i % 3);
            let v = if c == 1 { self.data[px] } else { self.data[px * 3 + ch] };
            v as f32 / 255.0
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Quantizes an `H×W×3` image in `[0, 1]` to an RGB raster.
pub fn image_to_raster(image: &Tensor<f32>) -> Result<Raster> {
    let (h, w, c) = image.dims3("image_to_raster")?;
    if c != 3 {
        return Err(Error::dim("image_to_raster", "channels", 3, c));
    }
    let data = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Raster::rgb(w, h, data)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Header<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_string(),
            reason: reason.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos == self.bytes.len() {
                Error::Truncated {
                    path: self.path.to_string(),
                    reason: format!("header ends before {what}"),
                }
            } else {
                self.err(format!("expected {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are ASCII")
            .parse()
            .map_err(|_| self.err(format!("{what} out of range")))
    }
}

/// Parses P5/P6 bytes; `path` is only used in error messages.
pub fn decode_netpbm(bytes: &[u8], path: &str) -> Result<Raster> {
    let mut h = Header { bytes, pos: 0, path };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(h.err("not a binary PGM (P5) or PPM (P6) file")),
    };
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(h.err(format!("maxval {maxval} unsupported; only 255 is accepted")));
    }
    if width == 0 || height == 0 {
        return Err(h.err(format!("empty image {width}×{height}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        Some(_) => return Err(h.err("missing whitespace after maxval")),
        None => {
            return Err(Error::Truncated {
                path: path.to_string(),
                reason: "no pixel data".into(),
            })
        }
    }
    let need = width * height * channels;
    let have = bytes.len() - h.pos;
    if have < need {
        return Err(Error::Truncated {
            path: path.to_string(),
            reason: format!("{width}×{height} image needs {need} bytes of pixel data, found {have}"),
        });
    }
    if have > need {
        return Err(h.err(format!("{} trailing bytes after pixel data", have - need)));
    }
    Raster::new(width, height, channels, bytes[h.pos..].to_vec())
}

pub fn read_netpbm(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes, &path.display().to_string())
}

pub fn write_netpbm(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster.encode()).map_err(|e| Error::io(path, e))
}

/// Reads an image as `H×W×3` values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(read_netpbm(path)?.to_image())
}

/// Reads a label map stored as a PGM whose gray levels are the labels.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u32>)> {
    let path = path.as_ref();
    let r = read_netpbm(path)?;
    if r.channels != 1 {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "label maps must be single-channel PGM".into(),
        });
    }
    Ok((r.height, r.width, r.data.into_iter().map(u32::from).collect()))
}
