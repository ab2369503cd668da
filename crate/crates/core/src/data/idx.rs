use std::path::Path;

use super::Dataset;
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::flow::Layout;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                message: format!("truncated: need {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32()?;
        if got != expected {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad magic {got:#010x}, expected {expected:#010x}"),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(count * rows * cols)?.to_vec();
    r.finish()?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32()? as usize;
    let labels = r.take(count)?.to_vec();
    r.finish()?;
    Ok(labels)
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Bilinear resampling (pixel-center aligned) of one row-major image.
pub fn downsample_bilinear(img: &[Real], h: usize, w: usize, oh: usize, ow: usize) -> Vec<Real> {
    let mut out = Vec::with_capacity(oh * ow);
    let coord = |o: usize, scale: Real, n: usize| {
        let c = ((o as Real + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as Real);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(n - 1), c - i0 as Real)
    };
    let (sy, sx) = (h as Real / oh as Real, w as Real / ow as Real);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, sx, w);
            let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
            let bot = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Loads an image/label IDX pair as an identity-only dataset with pixels in
/// `[0, 1]`, optionally resized to `resize × resize`.
pub fn load_idx(images: &Path, labels: &Path, resize: Option<usize>) -> Result<Dataset> {
    let img = read_idx_images(&std::fs::read(images)?)?;
    let lab = read_idx_labels(&std::fs::read(labels)?)?;
    if lab.len() != img.count {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{} labels for {} images", lab.len(), img.count),
        });
    }
    let (oh, ow) = resize.map_or((img.rows, img.cols), |s| (s, s));
    let resized = (oh, ow) != (img.rows, img.cols);
    let per = img.rows * img.cols;
    let mut x = Vec::with_capacity(img.count * oh * ow);
    for i in 0..img.count {
        let px: Vec<Real> = img.pixels[i * per..(i + 1) * per]
            .iter()
            .map(|&p| p as Real / 255.0)
            .collect();
        if resized {
            x.extend(downsample_bilinear(&px, img.rows, img.cols, oh, ow).into_iter().map(super::quantize));
        } else {
            x.extend(px);
        }
    }
    let ids: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let classes = ids.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(
        Tensor::new(vec![img.count, oh * ow], x)?,
        Layout::image(oh, ow, 1),
        ids,
        classes,
        Vec::new(),
        Vec::new(),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_is_empty() {
        let img = read_idx_images(&write_idx_images(&IdxImages {
            count: 0,
            rows: 28,
            cols: 28,
            pixels: vec![],
        }))
        .unwrap();
        assert_eq!(img.count, 0);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = write_idx_labels(&[1, 2]);
        b[3] = 0x03;
        assert!(matches!(read_idx_labels(&b), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_file_length() {
        let b = write_idx_images(&IdxImages {
            count: 2,
            rows: 2,
            cols: 2,
            pixels: vec![0; 8],
        });
        let err = read_idx_images(&b[..20]).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 20, .. }), "{err}");
    }

    #[test]
    fn halving_averages_blocks() {
        let img = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let d = downsample_bilinear(&img, 4, 4, 2, 2);
        assert_eq!(d, vec![2.5, 4.5, 10.5, 12.5]);
    }
}
