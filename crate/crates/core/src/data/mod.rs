//! Synthetic video datasets and MNIST ingestion.
//!
//! Every generator is a pure function of `(config, seed, index)`; clip `i`
//! draws from its own RNG stream.

mod batch;
mod clip;
mod glyphs;
mod idx;
mod mnist;
mod shapes;

use std::path::Path;
use std::sync::Arc;

pub use batch::BatchIter;
pub use clip::{batch_to_clips, bfhwc_to_bcfhw, clips_to_batch, VideoClip, CLIP_FRAMES};
pub use glyphs::glyph_sprites;
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, SpriteSet, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use mnist::{DigitTrack, MovingMnist, MovingMnistConfig};
pub use shapes::{centroid, MotionAxis, ShapeKind, ShapeSpec, Shapes, ShapesConfig};

use crate::error::Result;

/// Indexed collection of clips with `len()` clips per epoch.
pub trait ClipSource {
    fn clip(&self, index: u64) -> Result<VideoClip>;
    fn len(&self) -> u64;
    /// `(frames, height, width, channels)`.
    fn frame_shape(&self) -> (usize, usize, usize, usize);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    MovingMnist,
    Shapes,
}

impl DatasetKind {
    pub fn channels(self) -> usize {
        match self {
            DatasetKind::MovingMnist => 1,
            DatasetKind::Shapes => 3,
        }
    }

    /// Training clips per epoch.
    pub fn default_len(self) -> u64 {
        match self {
            DatasetKind::MovingMnist => 64_000,
            DatasetKind::Shapes => 20_000,
        }
    }
}

/// Builds the training source; MNIST falls back to procedural glyphs when
/// no IDX file is given.
pub fn open_dataset(
    kind: DatasetKind,
    size: usize,
    seed: u64,
    len: u64,
    mnist_idx: Option<&Path>,
) -> Result<Box<dyn ClipSource + Send + Sync>> {
    Ok(match kind {
        DatasetKind::MovingMnist => {
            let sprites = match mnist_idx {
                Some(p) => load_idx(p)?,
                None => glyph_sprites(),
            };
            let cfg = MovingMnistConfig {
                size,
                ..Default::default()
            };
            Box::new(MovingMnist::new(cfg, Arc::new(sprites), seed, len)?)
        }
        DatasetKind::Shapes => Box::new(Shapes::new(ShapesConfig::for_size(size), seed, len)?),
    })
}
