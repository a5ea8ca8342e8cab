use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{EmbeddingProvider, EmbeddingVector, LabelRef, ProviderError};
use crate::seed;
use crate::tensor::ImageTensor;

/// Deterministic embeddings with a planted foreground.
///
/// Every label owns a random unit direction `u(label)`. For each item a
/// seeded subset of `round(foreground_fraction · N)` patches is foreground:
/// those vectors are `(1 − σ)·u(label) + σ·n` for a random unit `n`.
/// Background patches are `background_scale · n`. All values are pure
/// functions of `(seed, label, item_id, patch_index)`.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    seed: u64,
    dimension: usize,
    sigma: f64,
    foreground_fraction: f64,
    background_scale: f64,
}

impl SyntheticProvider {
    pub fn new(
        seed: u64,
        dimension: usize,
        sigma: f64,
        foreground_fraction: f64,
        background_scale: f64,
    ) -> Self {
        Self {
            seed,
            dimension,
            sigma,
            foreground_fraction,
            background_scale,
        }
    }

    fn unit(&self, stream: u64) -> Vec<f64> {
        let mut rng = seed::rng(stream);
        loop {
            let v: Vec<f64> = (0..self.dimension)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    fn to_vector(v: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::new(v.into_iter().map(|x| x as f32).collect()).expect("finite by construction")
    }

    /// The label's text direction.
    pub fn text_direction(&self, label: &str) -> Vec<f64> {
        self.unit(seed::hash_seed(self.seed, &[b"text", label.as_bytes()]))
    }

    /// Sorted foreground patch indices of `item_id` in an `n`-patch grid.
    pub fn foreground_patches(&self, item_id: &str, n: usize) -> Vec<usize> {
        let count = ((self.foreground_fraction * n as f64) + 0.5).floor() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        let stream = seed::hash_seed(self.seed, &[b"foreground", item_id.as_bytes(), &(n as u64).to_le_bytes()]);
        idx.shuffle(&mut seed::rng(stream));
        let mut fg: Vec<usize> = idx.into_iter().take(count.min(n)).collect();
        fg.sort_unstable();
        fg
    }

    fn patch_noise(&self, item_id: &str, patch: usize) -> Vec<f64> {
        self.unit(seed::hash_seed(
            self.seed,
            &[b"patch", item_id.as_bytes(), &(patch as u64).to_le_bytes()],
        ))
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn text_embedding(&self, label: LabelRef<'_>) -> Result<EmbeddingVector, ProviderError> {
        Ok(Self::to_vector(self.text_direction(label.name)))
    }

    fn patch_embeddings(
        &self,
        item_id: &str,
        label: LabelRef<'_>,
        _image: Option<&ImageTensor>,
        grid: usize,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let n = grid * grid;
        let fg = self.foreground_patches(item_id, n);
        let u = self.text_direction(label.name);
        Ok((0..n)
            .map(|p| {
                let noise = self.patch_noise(item_id, p);
                let v = if fg.binary_search(&p).is_ok() {
                    u.iter()
                        .zip(&noise)
                        .map(|(a, b)| (1.0 - self.sigma) * a + self.sigma * b)
                        .collect()
                } else {
                    noise.into_iter().map(|x| x * self.background_scale).collect()
                };
                Self::to_vector(v)
            })
            .collect())
    }
}
