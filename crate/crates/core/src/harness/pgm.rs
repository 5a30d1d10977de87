//! 8-bit greyscale PGM images (binary `P5` and ASCII `P2`) and filter grids.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Separator pixels between grid tiles.
pub const SEPARATOR: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self { width, height, pixels: vec![fill; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Binary `P5` encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }

    /// Parses `P5` or `P2` with maxval ≤ 255 (`P2` values above that are rejected).
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        let binary = match magic.as_str() {
            "P5" => true,
            "P2" => false,
            other => return Err(Error::BadFormat(format!("not a greyscale PGM (magic {other:?})"))),
        };
        let width = parse_num(&next_token(bytes, &mut pos)?)?;
        let height = parse_num(&next_token(bytes, &mut pos)?)?;
        let maxval = parse_num(&next_token(bytes, &mut pos)?)?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::BadFormat(format!("unsupported PGM maxval {maxval}")));
        }
        let n = width * height;
        let pixels = if binary {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            let raster =
                bytes.get(start..start + n).ok_or_else(|| Error::BadFormat("PGM raster is truncated".into()))?;
            raster.to_vec()
        } else {
            (0..n)
                .map(|_| {
                    let v = parse_num(&next_token(bytes, &mut pos)?)?;
                    if v > maxval {
                        return Err(Error::BadFormat(format!("pixel {v} exceeds maxval {maxval}")));
                    }
                    Ok(v as u8)
                })
                .collect::<Result<_>>()?
        };
        let pixels = if maxval == 255 {
            pixels
        } else {
            pixels.into_iter().map(|p| ((p as usize * 255 + maxval / 2) / maxval).min(255) as u8).collect()
        };
        Ok(Self { width, height, pixels })
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::BadFormat("PGM header is truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::BadFormat(format!("bad PGM number {tok:?}")))
}

/// Grid shape used by [`render_filter_grid`] for `n` tiles: `(rows, cols)`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (n.div_ceil(cols).max(1), cols)
}

/// Each matrix row reshaped to a `tile = (height, width)` tile, min-max
/// scaled to 0..=255, and laid out on a near-square grid with 1-pixel
/// separators between tiles. Constant rows render black.
pub fn render_filter_grid(matrix: &Tensor, tile: (usize, usize)) -> Result<GrayImage> {
    matrix.require_matrix("filter matrix")?;
    let (th, tw) = tile;
    if th * tw != matrix.cols() || th == 0 {
        return Err(Error::DimensionMismatch(format!(
            "rows of length {} do not reshape to {th}x{tw} tiles",
            matrix.cols()
        )));
    }
    let n = matrix.rows();
    let (gr, gc) = grid_shape(n);
    let width = gc * tw + gc.saturating_sub(1);
    let height = gr * th + gr.saturating_sub(1);
    let mut img = GrayImage::new(width, height, SEPARATOR);
    for r in 0..n {
        let row = matrix.row(r);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (ox, oy) = ((r % gc) * (tw + 1), (r / gc) * (th + 1));
        for i in 0..th {
            for j in 0..tw {
                let v = if hi > lo { ((row[i * tw + j] - lo) / (hi - lo) * 255.0).round() as u8 } else { 0 };
                img.set(ox + j, oy + i, v);
            }
        }
    }
    // unused grid cells stay separator-grey
    Ok(img)
}

/// Fraction of interior filters whose center weight has the opposite sign
/// to the mean of its 8 neighbours. Row `r` of `matrix` is the filter
/// centred on pixel `r` of an `h × w` patch, as for ZCA whitening rows.
pub fn center_surround_fraction(matrix: &Tensor, tile: (usize, usize)) -> Result<f64> {
    let (h, w) = tile;
    if matrix.rows() != h * w || matrix.cols() != h * w {
        return Err(Error::DimensionMismatch(format!("expected a {0}x{0} filter matrix", h * w)));
    }
    if h < 3 || w < 3 {
        return Err(Error::InvalidArgument("tiles need an interior".into()));
    }
    let mut hits = 0;
    let mut total = 0;
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let row = matrix.row(i * w + j);
            let center = row[i * w + j];
            let mut ring = 0.0;
            for di in [-1i64, 0, 1] {
                for dj in [-1i64, 0, 1] {
                    if di != 0 || dj != 0 {
                        ring += row[(i as i64 + di) as usize * w + (j as i64 + dj) as usize];
                    }
                }
            }
            total += 1;
            if center * ring < 0.0 {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grid_has_one_white_pixel_per_tile() {
        let img = render_filter_grid(&Tensor::identity(4), (1, 4)).unwrap();
        assert_eq!((img.width, img.height), (2 * 4 + 1, 2 + 1));
        for r in 0..4 {
            let (ox, oy) = ((r % 2) * 5, (r / 2) * 2);
            let tile: Vec<u8> = (0..4).map(|j| img.get(ox + j, oy)).collect();
            assert_eq!(tile.iter().filter(|v| **v == 255).count(), 1);
            assert_eq!(tile[r], 255);
            assert_eq!(tile.iter().filter(|v| **v == 0).count(), 3);
        }
    }

    #[test]
    fn grid_dimensions() {
        let m = Tensor::zeros(&[10, 6]);
        let img = render_filter_grid(&m, (2, 3)).unwrap();
        let (gr, gc) = grid_shape(10);
        assert_eq!((gr, gc), (3, 4));
        assert_eq!(img.width, 4 * 3 + 3);
        assert_eq!(img.height, 3 * 2 + 2);
        assert!(render_filter_grid(&m, (4, 2)).is_err());
    }

    #[test]
    fn pgm_roundtrip_and_ascii() {
        let mut img = GrayImage::new(3, 2, 7);
        img.set(2, 1, 200);
        assert_eq!(GrayImage::parse(&img.to_pgm()).unwrap(), img);
        let ascii = b"P2\n# comment\n2 2\n15\n0 15\n5 10\n";
        let parsed = GrayImage::parse(ascii).unwrap();
        assert_eq!(parsed.pixels, vec![0, 255, 85, 170]);
        assert!(GrayImage::parse(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(GrayImage::parse(b"P5\n4 4\n255\n\0").is_err());
    }

    #[test]
    fn center_surround_on_laplacian_filters() {
        let (h, w) = (4, 4);
        let mut m = Tensor::zeros(&[16, 16]);
        for i in 0..h {
            for j in 0..w {
                let r = i * w + j;
                m.set(r, r, 1.0);
                for (a, b) in [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)] {
                    if a < h && b < w {
                        m.set(r, a * w + b, -0.25);
                    }
                }
            }
        }
        assert_eq!(center_surround_fraction(&m, (h, w)).unwrap(), 1.0);
        assert_eq!(center_surround_fraction(&Tensor::identity(16), (h, w)).unwrap(), 0.0);
    }
}
