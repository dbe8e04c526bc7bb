use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per-sample, per-channel normalization with a learnable affine.
    Instance,
    None,
}

/// Convolutional feature extractor layout: `depth` blocks of
/// (3x3 conv, `width` channels, normalization, ReLU, 2x2 average pool).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub id: String,
    pub width: usize,
    pub depth: usize,
    pub norm: NormKind,
    pub in_channels: usize,
    pub input_side: usize,
}

impl ArchSpec {
    /// Resolves a registry id for a given input geometry.
    ///
    /// Known ids: `convnet-3` (width 128, depth 3), `tiny-conv` (width 32,
    /// depth 2), and the generic `conv-w{W}-d{D}`. A `-nonorm` suffix drops
    /// the normalization layers.
    pub fn resolve(id: &str, in_channels: usize, input_side: usize) -> Result<Self> {
        let (base, norm) = match id.strip_suffix("-nonorm") {
            Some(b) => (b, NormKind::None),
            None => (id, NormKind::Instance),
        };
        let (width, depth) = match base {
            "convnet-3" => (128, 3),
            "tiny-conv" => (32, 2),
            other => parse_generic(other)
                .ok_or_else(|| Error::Config(format!("unsupported architecture id {id:?}")))?,
        };
        if width == 0 || depth == 0 || in_channels == 0 {
            return Err(Error::Config(format!("degenerate architecture {id:?}")));
        }
        if input_side == 0 || input_side % (1 << depth) != 0 {
            return Err(Error::Config(format!(
                "{id} needs an input side divisible by {}, got {input_side}",
                1 << depth
            )));
        }
        Ok(ArchSpec {
            id: id.to_string(),
            width,
            depth,
            norm,
            in_channels,
            input_side,
        })
    }

    pub fn final_side(&self) -> usize {
        self.input_side >> self.depth
    }

    pub fn feature_dim(&self) -> usize {
        self.width * self.final_side() * self.final_side()
    }

    pub fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.in_channels
        } else {
            self.width
        }
    }

    pub fn block_side(&self, block: usize) -> usize {
        self.input_side >> block
    }
}

fn parse_generic(id: &str) -> Option<(usize, usize)> {
    let rest = id.strip_prefix("conv-w")?;
    let (w, d) = rest.split_once("-d")?;
    Some((w.parse().ok()?, d.parse().ok()?))
}
