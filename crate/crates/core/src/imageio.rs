//! Grayscale image input/output: binary PGM (P5, 8-bit) and plain text matrices.

use std::path::Path;

use crate::error::{Error, Result};
use crate::measures::{pixel_center, MeasureOracle, SupportGrid};

/// Row-major grayscale image with nonnegative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::Parse(format!(
                "image of {rows}x{cols} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Measure("pixel values must be finite and nonnegative".into()));
        }
        Ok(GrayImage { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn support(&self) -> Result<SupportGrid> {
        SupportGrid::grid2d(self.rows, self.cols)
    }
}

/// Reads a P5 PGM if the file starts with the `P5` magic, a text matrix otherwise.
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse("image is neither P5 PGM nor text".into()))?;
        parse_text_matrix(&text)
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        // skip whitespace and comments
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
            return Err(Error::Parse("truncated PGM header".into()));
        }
        header.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if header[0] != "P5" {
        return Err(Error::Parse(format!("unsupported PGM magic {}", header[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse(format!("bad PGM {what}: {s}")))
    };
    let cols = parse(&header[1], "width")?;
    let rows = parse(&header[2], "height")?;
    let maxval = parse(&header[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("only 8-bit PGM is supported, maxval = {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + rows * cols)
        .ok_or_else(|| Error::Parse("truncated PGM raster".into()))?;
    GrayImage::new(rows, cols, raster.iter().map(|&b| b as f64).collect())
}

pub fn parse_text_matrix(text: &str) -> Result<GrayImage> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("matrix row {}: {e}", rows + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse(format!("ragged matrix: row {} has {} values, expected {c}", rows + 1, row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    GrayImage::new(rows, cols.unwrap_or(0), data)
}

/// Writes a P5 PGM with intensities linearly scaled so the maximum maps to 255.
pub fn write_pgm(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::Dimension {
            expected: rows * cols,
            actual: values.len(),
        });
    }
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if max > 0.0 {
            (v.max(0.0) / max * 255.0).round() as u8
        } else {
            0
        }
    }));
    std::fs::write(path, out)?;
    Ok(())
}

/// Discrete measure with atoms at pixel centers and weights proportional to intensity.
pub fn image_to_measure(image: &GrayImage) -> Result<MeasureOracle> {
    if image.data.iter().all(|&v| v == 0.0) {
        return Err(Error::Measure("image has no positive pixel".into()));
    }
    let atoms = (0..image.rows)
        .flat_map(|r| (0..image.cols).map(move |c| pixel_center(r, c)))
        .collect();
    MeasureOracle::discrete(atoms, image.data.clone())
}
