use serde::{Deserialize, Serialize};

use super::augment::AugmentOp;
use super::grid::{build_mask, saturating_add, BinaryMask, PatchGrid};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeMode {
    /// Tail patches replace head content at the tail's own positions.
    #[default]
    Aligned,
    /// `(M^h)' ⊙ x^h + M^t ⊙ x^t` with saturating addition.
    Literal,
}

impl std::str::FromStr for ComposeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(Self::Aligned),
            "literal" => Ok(Self::Literal),
            other => Err(Error::config("mode", format!("unknown compose mode `{other}`"))),
        }
    }
}

/// Which source patch contributes to an output patch position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchOrigin {
    Head(usize),
    Tail(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub image: ImageTensor,
    /// Always the tail label.
    pub label_id: u32,
    pub head_source: String,
    pub head_label: u32,
    pub tail_source: String,
    pub head_indices: Vec<usize>,
    pub tail_indices: Vec<usize>,
    pub head_mask: BinaryMask,
    pub tail_mask: BinaryMask,
    pub mode: ComposeMode,
    /// Contributors to each output patch position; empty means blank.
    pub patch_sources: Vec<Vec<PatchOrigin>>,
    pub post_augment_ops: Vec<AugmentOp>,
}

/// Graft the selected tail patches into the head image. The result carries
/// the tail label.
pub fn compose_sample(
    head: &ImageTensor,
    tail: &ImageTensor,
    head_indices: &[usize],
    tail_indices: &[usize],
    mode: ComposeMode,
    grid: &PatchGrid,
) -> Result<AugmentedSample> {
    if !head.same_shape(tail) {
        return Err(Error::DimensionMismatch {
            expected: head.pixels.len(),
            actual: tail.pixels.len(),
        });
    }
    if head_indices.is_empty() || tail_indices.is_empty() {
        return Err(Error::Empty("patch selection"));
    }
    let head_mask = build_mask(head_indices, grid)?;
    let tail_mask = build_mask(tail_indices, grid)?;
    if head.height != head_mask.height || head.width != head_mask.width {
        return Err(Error::DimensionMismatch {
            expected: head_mask.height * head_mask.width,
            actual: head.height * head.width,
        });
    }

    let pixels = match mode {
        ComposeMode::Aligned => {
            let mut out = head.pixels.clone();
            for ((dst, src), &bit) in out
                .chunks_exact_mut(3)
                .zip(tail.pixels.chunks_exact(3))
                .zip(&tail_mask.bits)
            {
                if bit == 1 {
                    dst.copy_from_slice(src);
                }
            }
            out
        }
        ComposeMode::Literal => {
            let kept = head_mask.complement().apply(head)?;
            let grafted = tail_mask.apply(tail)?;
            saturating_add(&kept, &grafted)?.pixels
        }
    };

    let in_head = |p: &usize| head_indices.contains(p);
    let in_tail = |p: &usize| tail_indices.contains(p);
    let patch_sources = (0..grid.len())
        .map(|p| match mode {
            ComposeMode::Aligned if in_tail(&p) => vec![PatchOrigin::Tail(p)],
            ComposeMode::Aligned => vec![PatchOrigin::Head(p)],
            ComposeMode::Literal => {
                let mut v = Vec::with_capacity(2);
                if !in_head(&p) {
                    v.push(PatchOrigin::Head(p));
                }
                if in_tail(&p) {
                    v.push(PatchOrigin::Tail(p));
                }
                v
            }
        })
        .collect();

    let mut sorted_head = head_indices.to_vec();
    sorted_head.sort_unstable();
    let mut sorted_tail = tail_indices.to_vec();
    sorted_tail.sort_unstable();

    Ok(AugmentedSample {
        image: ImageTensor {
            height: head.height,
            width: head.width,
            pixels,
            item_id: format!("{}+{}", head.item_id, tail.item_id),
            label_id: tail.label_id,
        },
        label_id: tail.label_id,
        head_source: head.item_id.clone(),
        head_label: head.label_id,
        tail_source: tail.item_id.clone(),
        head_indices: sorted_head,
        tail_indices: sorted_tail,
        head_mask,
        tail_mask,
        mode,
        patch_sources,
        post_augment_ops: Vec::new(),
    })
}

/// Per-pixel reference for aligned composition.
pub fn aligned_reference(head: &ImageTensor, tail: &ImageTensor, tail_mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(head.pixels.len());
    for y in 0..head.height {
        for x in 0..head.width {
            let src = if tail_mask.get(y, x) { tail } else { head };
            out.extend_from_slice(&src.pixel(y, x));
        }
    }
    out
}
