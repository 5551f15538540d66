use crate::error::{Error, Result};
use crate::vit::{ViTModel, Weights};

/// Teacher blocks kept when initializing a shallower student.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSelection {
    keep: Vec<usize>,
}

impl BlockSelection {
    /// Validates that `keep` is non-empty and strictly increasing.
    pub fn new(keep: Vec<usize>) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("block selection must keep at least one block"));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("block indices must be strictly increasing, got {keep:?}")));
        }
        Ok(BlockSelection { keep })
    }

    /// Blocks 0, 2, 4, 7, 9 and 11 of a 12-block teacher.
    pub fn every_other() -> Self {
        BlockSelection {
            keep: vec![0, 2, 4, 7, 9, 11],
        }
    }

    /// The first `n` blocks.
    pub fn prefix(n: usize) -> Result<Self> {
        Self::new((0..n).collect())
    }

    /// Parses a comma-separated list such as `0,2,4,7,9,11`.
    pub fn parse(list: &str) -> Result<Self> {
        let keep = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad block index {s:?} in {list:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(keep)
    }

    pub fn indices(&self) -> &[usize] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn check_against(&self, teacher_layers: usize) -> Result<()> {
        match self.keep.last() {
            Some(&last) if last >= teacher_layers => Err(Error::invalid(format!(
                "block index {last} out of range for a {teacher_layers}-layer teacher"
            ))),
            _ => Ok(()),
        }
    }
}

/// Builds a student from a subset of the teacher's blocks.
///
/// Student block `j` copies teacher block `sel[j]`. Embeddings and the final
/// norm are copied as they are. With per-layer heads, student head `j` is
/// the teacher head attached after block `sel[j]`; a single-head model keeps
/// its final head.
pub fn init_student_from_teacher(teacher: &ViTModel, sel: &BlockSelection) -> Result<ViTModel> {
    sel.check_against(teacher.num_layers())?;
    let mut config = teacher.config.clone();
    config.num_layers = sel.len();
    let tw = &teacher.weights;
    let heads = if teacher.config.per_layer_heads {
        sel.indices().iter().map(|&i| tw.heads[i].clone()).collect()
    } else {
        tw.heads.clone()
    };
    let weights = Weights {
        patch_proj: tw.patch_proj.clone(),
        class_token: tw.class_token.clone(),
        pos_embed: tw.pos_embed.clone(),
        blocks: sel.indices().iter().map(|&i| tw.blocks[i].clone()).collect(),
        final_norm: tw.final_norm.clone(),
        heads,
    };
    Ok(ViTModel { config, weights })
}

/// Removes the last block; with per-layer heads the head after the new last
/// block becomes the final head.
pub fn strip_last_block(model: &ViTModel) -> Result<ViTModel> {
    let layers = model.num_layers();
    if layers < 2 {
        return Err(Error::invalid("cannot strip the only block of a 1-layer model"));
    }
    init_student_from_teacher(model, &BlockSelection::prefix(layers - 1)?)
}
