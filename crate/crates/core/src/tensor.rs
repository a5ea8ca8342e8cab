//! Square 8-bit RGB images, row-major, channel-interleaved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const DEFAULT_RESOLUTION: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub item_id: String,
    pub label_id: u32,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        item_id: impl Into<String>,
        label_id: u32,
    ) -> Result<Self> {
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Image(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                height,
                width,
                CHANNELS,
                height * width * CHANNELS,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            item_id: item_id.into(),
            label_id,
        })
    }

    pub fn filled(size: usize, rgb: [u8; 3], item_id: impl Into<String>, label_id: u32) -> Self {
        let pixels = rgb.iter().copied().cycle().take(size * size * CHANNELS).collect();
        Self {
            height: size,
            width: size,
            pixels,
            item_id: item_id.into(),
            label_id,
        }
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * CHANNELS
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let o = self.offset(row, col);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Decode an image file and resize it to `size`×`size`.
    pub fn load(path: &Path, size: usize, item_id: &str, label_id: u32) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = image::imageops::resize(
            &img.to_rgb8(),
            size as u32,
            size as u32,
            image::imageops::FilterType::Triangle,
        );
        Self::new(size, size, rgb.into_raw(), item_id, label_id)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Image("pixel buffer does not match dimensions".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("validated dimensions")
    }

    pub fn from_rgb_image(img: image::RgbImage, item_id: impl Into<String>, label_id: u32) -> Self {
        let (w, h) = img.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            pixels: img.into_raw(),
            item_id: item_id.into(),
            label_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(ImageTensor::new(2, 2, vec![0; 11], "x", 0).is_err());
        assert!(ImageTensor::new(2, 2, vec![0; 12], "x", 0).is_ok());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let pixels: Vec<u8> = (0..8 * 8 * 3).map(|i| (i * 7 % 251) as u8).collect();
        let img = ImageTensor::new(8, 8, pixels, "a", 1).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageTensor::load(&path, 8, "a", 1).unwrap();
        assert_eq!(back, img);
    }
}
