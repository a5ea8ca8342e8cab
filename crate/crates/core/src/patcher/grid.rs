use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, CHANNELS};

/// `side`×`side` grid of square patches over a square image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub side: usize,
    pub resolution: usize,
}

impl PatchGrid {
    pub fn new(resolution: usize, side: usize) -> Result<Self> {
        if side == 0 || resolution == 0 || !resolution.is_multiple_of(side) {
            return Err(Error::IndivisibleGrid {
                size: resolution,
                grid: side,
            });
        }
        Ok(Self { side, resolution })
    }

    /// Total patch count N = side².
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn patch_px(&self) -> usize {
        self.resolution / self.side
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.side + col
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.side, index % self.side)
    }

    /// Patch index of the same patch after a horizontal flip.
    pub fn mirrored(&self, index: usize) -> usize {
        let (r, c) = self.position(index);
        self.index(r, self.side - 1 - c)
    }

    fn check(&self, image: &ImageTensor) -> Result<()> {
        if image.height != self.resolution || image.width != self.resolution {
            return Err(Error::IndivisibleGrid {
                size: image.height.max(image.width),
                grid: self.side,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub index: usize,
    pub size: usize,
    pub pixels: Vec<u8>,
}

pub fn partition_patches(image: &ImageTensor, grid: &PatchGrid) -> Result<Vec<Patch>> {
    grid.check(image)?;
    let px = grid.patch_px();
    Ok((0..grid.len())
        .map(|index| {
            let (r, c) = grid.position(index);
            let mut pixels = Vec::with_capacity(px * px * CHANNELS);
            for y in r * px..(r + 1) * px {
                let start = image.offset(y, c * px);
                pixels.extend_from_slice(&image.pixels[start..start + px * CHANNELS]);
            }
            Patch {
                index,
                size: px,
                pixels,
            }
        })
        .collect())
}

pub fn reassemble(
    patches: &[Patch],
    grid: &PatchGrid,
    item_id: &str,
    label_id: u32,
) -> Result<ImageTensor> {
    if patches.len() != grid.len() {
        return Err(Error::Image(format!(
            "{} patches for a grid of {}",
            patches.len(),
            grid.len()
        )));
    }
    let px = grid.patch_px();
    let mut image = ImageTensor::filled(grid.resolution, [0, 0, 0], item_id, label_id);
    for patch in patches {
        let (r, c) = grid.position(patch.index);
        for (dy, row) in patch.pixels.chunks_exact(px * CHANNELS).enumerate() {
            let start = image.offset(r * px + dy, c * px);
            image.pixels[start..start + px * CHANNELS].copy_from_slice(row);
        }
    }
    Ok(image)
}

/// H×W plane of 0/1 values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// `M ⊙ x`.
    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        if image.height != self.height || image.width != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.height * self.width,
                actual: image.height * image.width,
            });
        }
        let mut out = image.clone();
        for (px, &bit) in out.pixels.chunks_exact_mut(CHANNELS).zip(&self.bits) {
            if bit == 0 {
                px.fill(0);
            }
        }
        Ok(out)
    }
}

/// Mask that is 1 exactly on the union of the selected patch rectangles.
pub fn build_mask(indices: &[usize], grid: &PatchGrid) -> Result<BinaryMask> {
    let mut mask = BinaryMask::zeros(grid.resolution, grid.resolution);
    let px = grid.patch_px();
    for &index in indices {
        if index >= grid.len() {
            return Err(Error::Image(format!(
                "patch index {index} outside a grid of {}",
                grid.len()
            )));
        }
        let (r, c) = grid.position(index);
        for y in r * px..(r + 1) * px {
            mask.bits[y * grid.resolution + c * px..y * grid.resolution + (c + 1) * px].fill(1);
        }
    }
    Ok(mask)
}

/// Per-channel saturating sum of two equally sized images.
pub fn saturating_add(a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: a.pixels.len(),
            actual: b.pixels.len(),
        });
    }
    let mut out = a.clone();
    for (x, &y) in out.pixels.iter_mut().zip(&b.pixels) {
        *x = x.saturating_add(y);
    }
    Ok(out)
}
