use crate::embedstore::{cosine_similarity, EmbeddingProvider, EmbeddingVector, LabelRef, PatchScore};
use crate::error::Result;
use crate::tensor::ImageTensor;

/// Cosine similarity of every patch embedding with the label's text
/// embedding, in patch order.
pub fn score_patches(
    provider: &dyn EmbeddingProvider,
    item_id: &str,
    image: Option<&ImageTensor>,
    label: LabelRef<'_>,
    grid: usize,
) -> Result<Vec<PatchScore>> {
    let text = provider.text_embedding(label)?;
    let patches = provider.patch_embeddings(item_id, label, image, grid)?;
    scores_against(&patches, &text)
}

pub fn scores_against(patches: &[EmbeddingVector], text: &EmbeddingVector) -> Result<Vec<PatchScore>> {
    patches
        .iter()
        .enumerate()
        .map(|(patch_index, v)| {
            Ok(PatchScore {
                patch_index,
                score: cosine_similarity(v.as_slice(), text.as_slice())?,
            })
        })
        .collect()
}

/// Up to `k` highest-scoring patch indices whose score exceeds `threshold`,
/// returned in ascending index order. Ties prefer the lower patch index.
pub fn select_patches(scores: &[PatchScore], k: usize, threshold: f64) -> Vec<usize> {
    let mut eligible: Vec<&PatchScore> = scores.iter().filter(|s| s.score > threshold).collect();
    eligible.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.patch_index.cmp(&b.patch_index))
    });
    let mut chosen: Vec<usize> = eligible.into_iter().take(k).map(|s| s.patch_index).collect();
    chosen.sort_unstable();
    chosen
}
