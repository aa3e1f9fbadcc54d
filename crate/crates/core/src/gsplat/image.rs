use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major `H×W×3` RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn constant(height: usize, width: usize, color: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend(color.map(|c| c.clamp(0.0, 1.0)));
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    /// Clamps into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::Shape(format!("image tensor must be H×W×3, got {s:?}")));
        }
        Ok(Self {
            height: s[0],
            width: s[1],
            pixels: t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width, 3], self.pixels.clone())
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "image shapes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// 8-bit RGB PNG.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)?.to_rgb8();
        Ok(Self {
            height: img.height() as usize,
            width: img.width() as usize,
            pixels: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::constant(9, 10, [0.2, 0.5, 1.0]);
        img.pixels[4] = 0.0;
        let path = dir.path().join("a/b.png");
        img.write_png(&path).unwrap();
        let back = Image::read_png(&path).unwrap();
        assert_eq!((back.height, back.width), (9, 10));
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert!(matches!(
            Image::read_png(&dir.path().join("none.png")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn tensor_values_are_clamped() {
        let img = Image::from_tensor(&Tensor::new(&[1, 1, 3], vec![-0.5, 0.5, 1.5])).unwrap();
        assert_eq!(img.pixels, vec![0.0, 0.5, 1.0]);
    }
}
