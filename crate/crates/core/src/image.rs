//! Grayscale image grids and the binary PGM writer.

use std::path::Path;
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::Layout;

/// Grid shape `rows × cols`, written as `4x4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    /// Smallest near-square grid holding `n` cells.
    pub fn fit(n: usize) -> Self {
        let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
        Self {
            rows: n.div_ceil(cols).max(1),
            cols,
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

impl FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("grid `{s}` is not of the form RxC"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(Self { rows, cols })
    }
}

/// 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        self.to_pgm_with_comment("")
    }

    /// Binary PGM with `comment` as `#` lines after the magic number.
    pub fn to_pgm_with_comment(&self, comment: &str) -> Vec<u8> {
        let mut out = b"P5\n".to_vec();
        for line in comment.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse {
                    offset: pos,
                    message: "truncated PGM header".into(),
                });
            }
            fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
        }
        if fields[0].1 != "P5" {
            return Err(Error::Parse {
                offset: 0,
                message: "not a binary PGM".into(),
            });
        }
        let num = |i: usize| -> Result<usize> {
            fields[i].1.parse().map_err(|_| Error::Parse {
                offset: fields[i].0,
                message: format!("bad header field `{}`", fields[i].1),
            })
        };
        let (width, height) = (num(1)?, num(2)?);
        if num(3)? != 255 {
            return Err(Error::Parse {
                offset: fields[3].0,
                message: "only maxval 255 is supported".into(),
            });
        }
        let data = &bytes[(pos + 1).min(bytes.len())..];
        if data.len() < width * height {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: "truncated PGM raster".into(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels: data[..width * height].to_vec(),
        })
    }
}

/// Pixel value `round(255·clamp(v, 0, 1))`.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tiles rows of `images` (single-channel, `layout`) row-major into a grid
/// with `pad` pixels of black between cells. Missing cells stay black.
pub fn tile(images: &Tensor, layout: Layout, grid: GridShape, pad: usize) -> Result<GrayImage> {
    if layout.channels != 1 || layout.height == 0 {
        return Err(Error::InvalidArgument(format!(
            "only single-channel images can be tiled, got {}x{}x{}",
            layout.height, layout.width, layout.channels
        )));
    }
    let (h, w) = (layout.height, layout.width);
    if images.rank() != 2 || images.row_len() != h * w {
        return Err(Error::ShapeMismatch {
            op: "tile",
            lhs: images.shape().to_vec(),
            rhs: vec![h * w],
        });
    }
    if images.rows() > grid.cells() {
        return Err(Error::InvalidArgument(format!(
            "{} images do not fit a {}x{} grid",
            images.rows(),
            grid.rows,
            grid.cols
        )));
    }
    let width = grid.cols * w + (grid.cols - 1) * pad;
    let height = grid.rows * h + (grid.rows - 1) * pad;
    let mut pixels = vec![0u8; width * height];
    for n in 0..images.rows() {
        let (gr, gc) = (n / grid.cols, n % grid.cols);
        let (oy, ox) = (gr * (h + pad), gc * (w + pad));
        let img = images.row(n);
        for y in 0..h {
            for x in 0..w {
                pixels[(oy + y) * width + ox + x] = to_byte(img[y * w + x] as f64);
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}
