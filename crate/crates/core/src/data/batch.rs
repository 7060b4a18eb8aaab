use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClipSource;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batches of `[B,F,H,W,C]` clips drawn without replacement within each
/// epoch; epoch `e` uses a permutation seeded by `(seed, e)`.
pub struct BatchIter<'a, S: ClipSource + ?Sized> {
    source: &'a S,
    batch_size: usize,
    seed: u64,
    /// Global clip position in the stream.
    pos: u64,
    /// Stop after one epoch, emitting a short final batch.
    single_epoch: bool,
    perm: Option<(u64, Vec<u64>)>,
}

impl<'a, S: ClipSource + ?Sized> BatchIter<'a, S> {
    /// Endless stream of full batches.
    pub fn new(source: &'a S, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || source.len() == 0 {
            return Err(Error::config("batch size and dataset length must be positive"));
        }
        Ok(BatchIter {
            source,
            batch_size,
            seed,
            pos: 0,
            single_epoch: false,
            perm: None,
        })
    }

    /// Exactly one pass over the dataset.
    pub fn epoch(source: &'a S, batch_size: usize, seed: u64) -> Result<Self> {
        Ok(BatchIter {
            single_epoch: true,
            ..Self::new(source, batch_size, seed)?
        })
    }

    /// Positions the stream at the start of batch `k`.
    pub fn seek(&mut self, k: u64) {
        self.pos = k * self.batch_size as u64;
    }

    /// Clip index at stream position `pos`.
    pub fn index_at(&mut self, pos: u64) -> u64 {
        let n = self.source.len();
        let epoch = pos / n;
        if self.perm.as_ref().map(|p| p.0) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            let mut p: Vec<u64> = (0..n).collect();
            p.shuffle(&mut rng);
            self.perm = Some((epoch, p));
        }
        self.perm.as_ref().expect("just set").1[(pos % n) as usize]
    }

    fn next_batch(&mut self) -> Result<Option<Tensor<f32>>> {
        let n = self.source.len();
        let take = if self.single_epoch {
            (n.saturating_sub(self.pos)).min(self.batch_size as u64) as usize
        } else {
            self.batch_size
        };
        if take == 0 {
            return Ok(None);
        }
        let (f, h, w, c) = self.source.frame_shape();
        let mut out = Vec::with_capacity(take * f * h * w * c);
        for _ in 0..take {
            let idx = self.index_at(self.pos);
            self.pos += 1;
            let clip = self.source.clip(idx)?;
            let d = clip.tensor().data();
            // [F,C,H,W] -> [F,H,W,C]
            for fr in 0..f {
                for p in 0..h * w {
                    for ch in 0..c {
                        out.push(d[(fr * c + ch) * h * w + p]);
                    }
                }
            }
        }
        Ok(Some(Tensor::new([take, f, h, w, c], out)?))
    }
}

impl<S: ClipSource + ?Sized> Iterator for BatchIter<'_, S> {
    type Item = Result<Tensor<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().transpose()
    }
}
