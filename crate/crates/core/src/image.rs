//! RGB images in `[0, 1]`, the affine decoder from feature canvases, and binary
//! PPM (P6, maxval 255) I/O.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;

/// An `H x W x 3` grid with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(FeatureGrid);

impl Image {
    pub fn new(grid: FeatureGrid) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(Error::Shape(format!(
                "image needs 3 channels, got {}",
                grid.channels()
            )));
        }
        if grid.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("image values must lie in [0, 1]".into()));
        }
        Ok(Self(grid))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self(FeatureGrid::constant(height, width, 3, value.clamp(0.0, 1.0)))
    }

    pub fn grid(&self) -> &FeatureGrid {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn pixels(&self) -> &[f64] {
        self.0.values()
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels()
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let (h, w) = self.dims();
        let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
        buf.extend(self.to_bytes());
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_ppm(&bytes).map_err(|reason| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1; // single whitespace before the raster
        if fields[0] != "P6" {
            return Err(format!("expected P6 magic, got {}", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field {s}: {e}"));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(format!("only maxval 255 is supported, got {maxval}"));
        }
        let raster = bytes.get(pos..).ok_or("missing raster")?;
        if raster.len() != w * h * 3 {
            return Err(format!("raster has {} bytes, expected {}", raster.len(), w * h * 3));
        }
        let values = raster.iter().map(|&b| b as f64 / 255.0).collect();
        FeatureGrid::new(h, w, 3, values)
            .map(Self)
            .map_err(|e| e.to_string())
    }
}

/// Per-pixel affine map from `D` feature channels to RGB, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    /// Row-major `3 x D`.
    pub weights: Vec<f64>,
    pub bias: [f64; 3],
    pub channels: usize,
}

impl Decoder {
    pub fn new(weights: Vec<f64>, bias: [f64; 3], channels: usize) -> Result<Self> {
        if channels == 0 || weights.len() != 3 * channels {
            return Err(Error::Shape(format!(
                "decoder weights must be 3x{channels}, got {} values",
                weights.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            channels,
        })
    }

    /// Identity on the first three channels.
    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; 3 * channels];
        for c in 0..3.min(channels) {
            weights[c * channels + c] = 1.0;
        }
        Self {
            weights,
            bias: [0.0; 3],
            channels,
        }
    }

    pub fn decode(&self, canvas: &FeatureGrid) -> Result<Image> {
        if canvas.channels() != self.channels {
            return Err(Error::Shape(format!(
                "decoder expects {} channels, canvas has {}",
                self.channels,
                canvas.channels()
            )));
        }
        let (h, w) = canvas.dims();
        let d = self.channels;
        let mut values = Vec::with_capacity(h * w * 3);
        for px in canvas.positions() {
            for o in 0..3 {
                let row = &self.weights[o * d..(o + 1) * d];
                let v: f64 = self.bias[o] + row.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                values.push(v.clamp(0.0, 1.0));
            }
        }
        Image::new(FeatureGrid::new(h, w, 3, values)?)
    }
}
