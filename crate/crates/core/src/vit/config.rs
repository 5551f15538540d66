use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a ViT classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub dropout_prob: f32,
    /// One classification head after every block instead of a single final head.
    pub per_layer_heads: bool,
    pub seed: u64,
    /// Standard deviation of the truncated-normal weight init.
    #[serde(default = "default_init_std")]
    pub init_std: f32,
}

fn default_init_std() -> f32 {
    0.02
}

impl ViTConfig {
    /// ViT-Base/16 geometry at 224 px with 8 output classes.
    pub fn paper() -> Self {
        ViTConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_dim: 3072,
            num_classes: 8,
            dropout_prob: 0.0,
            per_layer_heads: false,
            seed: 0,
            init_std: 0.02,
        }
    }

    /// Desk-scale model: 32 px images, 8 px patches, width 64, 12 blocks.
    /// At this width a 0.02 init leaves every image with nearly the same
    /// class embedding, so the mini model starts from a wider 0.1.
    pub fn mini() -> Self {
        ViTConfig {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            hidden_dim: 64,
            num_layers: 12,
            num_heads: 4,
            mlp_dim: 128,
            num_classes: 8,
            dropout_prob: 0.0,
            per_layer_heads: false,
            seed: 0,
            init_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(format!("invalid ViT config: {msg}")));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size ({}) must be a positive multiple of patch_size ({})",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim ({}) must be divisible by num_heads ({})",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_layers < 1 {
            return fail("num_layers must be >= 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.channels == 0 || self.mlp_dim == 0 {
            return fail("channels and mlp_dim must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std must be positive, got {}", self.init_std));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return fail(format!("dropout_prob must be in [0, 1), got {}", self.dropout_prob));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Sequence length including the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Scalars in one transformer block.
    pub fn block_param_count(&self) -> u64 {
        let d = self.hidden_dim as u64;
        let m = self.mlp_dim as u64;
        // two norms, four attention projections, two MLP layers
        4 * d + 4 * (d * d + d) + (d * m + m) + (m * d + d)
    }

    pub fn num_heads_total(&self) -> usize {
        if self.per_layer_heads {
            self.num_layers
        } else {
            1
        }
    }

    /// Model depth that owns head `i` of the head list.
    pub fn head_layer(&self, i: usize) -> usize {
        if self.per_layer_heads {
            i
        } else {
            self.num_layers - 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ViTConfig::paper().validate().unwrap();
        ViTConfig::mini().validate().unwrap();
        assert_eq!(ViTConfig::paper().num_tokens(), 197);
        assert_eq!(ViTConfig::mini().num_patches(), 16);
    }

    #[test]
    fn violations_are_named() {
        let mut c = ViTConfig::mini();
        c.patch_size = 5;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("patch_size"), "{msg}");

        let mut c = ViTConfig::mini();
        c.num_heads = 3;
        assert!(c.validate().unwrap_err().to_string().contains("num_heads"));

        let mut c = ViTConfig::mini();
        c.num_layers = 0;
        assert!(c.validate().unwrap_err().to_string().contains("num_layers"));

        let mut c = ViTConfig::mini();
        c.num_classes = 1;
        assert!(c.validate().unwrap_err().to_string().contains("num_classes"));
    }
}
