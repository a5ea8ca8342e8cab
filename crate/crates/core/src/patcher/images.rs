use std::path::PathBuf;

use rand::Rng;

use super::grid::PatchGrid;
use crate::embedstore::SyntheticProvider;
use crate::error::Result;
use crate::seed;
use crate::streamgen::LabeledItem;
use crate::tensor::ImageTensor;

/// Decoded, resized pixels for a stream item.
pub trait ImageSource: Send + Sync {
    fn load(&self, item: &LabeledItem) -> Result<ImageTensor>;
}

/// Images on disk; item ids are paths relative to `root`.
#[derive(Debug, Clone)]
pub struct FileImages {
    pub root: PathBuf,
    pub resolution: usize,
}

impl FileImages {
    pub fn new(root: impl Into<PathBuf>, resolution: usize) -> Self {
        Self {
            root: root.into(),
            resolution,
        }
    }
}

impl ImageSource for FileImages {
    fn load(&self, item: &LabeledItem) -> Result<ImageTensor> {
        ImageTensor::load(&self.root.join(&item.item_id), self.resolution, &item.item_id, item.label_id)
    }
}

/// Procedural images that agree with a [`SyntheticProvider`]: foreground
/// patches are a flat label colour with light noise, background patches are
/// uniform noise.
#[derive(Debug, Clone)]
pub struct SyntheticImages {
    layout: SyntheticProvider,
    grid: PatchGrid,
    seed: u64,
}

impl SyntheticImages {
    pub fn new(layout: SyntheticProvider, grid: PatchGrid, seed: u64) -> Self {
        Self { layout, grid, seed }
    }

    pub fn label_colour(&self, label_id: u32) -> [u8; 3] {
        let mut rng = seed::rng(seed::hash_seed(self.seed, &[b"colour", &label_id.to_le_bytes()]));
        [rng.gen(), rng.gen(), rng.gen()]
    }
}

impl ImageSource for SyntheticImages {
    fn load(&self, item: &LabeledItem) -> Result<ImageTensor> {
        let size = self.grid.resolution;
        let px = self.grid.patch_px();
        let fg = self.layout.foreground_patches(&item.item_id, self.grid.len());
        let colour = self.label_colour(item.label_id);
        let mut rng = seed::rng(seed::hash_seed(self.seed, &[b"pixels", item.item_id.as_bytes()]));
        let mut image = ImageTensor::filled(size, [0, 0, 0], item.item_id.clone(), item.label_id);
        for y in 0..size {
            for x in 0..size {
                let patch = self.grid.index(y / px, x / px);
                let start = image.offset(y, x);
                let rgb = &mut image.pixels[start..start + 3];
                if fg.binary_search(&patch).is_ok() {
                    for (v, &c) in rgb.iter_mut().zip(&colour) {
                        *v = c.saturating_add_signed(rng.gen_range(-12i8..=12));
                    }
                } else {
                    rng.fill(rgb);
                }
            }
        }
        Ok(image)
    }
}
