use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Frames per clip: the conditioning image plus four generated frames.
pub const CLIP_FRAMES: usize = 5;

/// Ordered frames stored `[F,C,H,W]`, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip<T = f32> {
    frames: Tensor<T>,
}

impl<T: Real> VideoClip<T> {
    pub fn new(frames: Tensor<T>) -> Result<Self> {
        if frames.shape().len() != 4 {
            return Err(Error::shape("VideoClip", frames.shape(), &[CLIP_FRAMES, 0, 0, 0]));
        }
        if let Some(v) = frames.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::invariant(format!("clip value {v} outside [0,1]")));
        }
        Ok(VideoClip { frames })
    }

    /// Stacks `[C,H,W]` frames.
    pub fn from_frames(frames: &[Tensor<T>]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::config("a clip needs at least one frame"))?;
        let s = first.shape().to_vec();
        let mut data = Vec::with_capacity(first.numel() * frames.len());
        for f in frames {
            if f.shape() != s.as_slice() {
                return Err(Error::shape("VideoClip::from_frames", &s, f.shape()));
            }
            data.extend_from_slice(f.data());
        }
        let mut shape = vec![frames.len()];
        shape.extend_from_slice(&s);
        Self::new(Tensor::new(shape, data)?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Frame `i` as `[C,H,W]`.
    pub fn frame(&self, i: usize) -> Tensor<T> {
        let per = self.frames.numel() / self.len();
        Tensor::new(&self.frames.shape()[1..], self.frames.data()[i * per..][..per].to_vec()).expect("frame slice")
    }

    pub fn cast<U: Real>(&self) -> VideoClip<U> {
        VideoClip { frames: self.frames.cast() }
    }
}

/// `[B,F,H,W,C]` batch (the stream layout) to `[B,C,F,H,W]` (the critic layout).
pub fn bfhwc_to_bcfhw<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() != 5 {
        return Err(Error::shape("bfhwc_to_bcfhw", s, &[0, 0, 0, 0, 0]));
    }
    let (b, f, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let src = t.data();
    let mut out = vec![T::zero(); t.numel()];
    for n in 0..b {
        for fr in 0..f {
            for y in 0..h {
                for x in 0..w {
                    let at = (((n * f + fr) * h + y) * w + x) * c;
                    for ch in 0..c {
                        out[(((n * c + ch) * f + fr) * h + y) * w + x] = src[at + ch];
                    }
                }
            }
        }
    }
    Tensor::new([b, c, f, h, w], out)
}

/// Clips to a `[B,C,F,H,W]` batch.
pub fn clips_to_batch<T: Real>(clips: &[VideoClip<T>]) -> Result<Tensor<T>> {
    let first = clips.first().ok_or_else(|| Error::config("empty clip batch"))?;
    let (f, c, h, w) = (first.len(), first.channels(), first.height(), first.width());
    let mut out = Vec::with_capacity(clips.len() * first.tensor().numel());
    for clip in clips {
        if clip.tensor().shape() != first.tensor().shape() {
            return Err(Error::shape("clips_to_batch", first.tensor().shape(), clip.tensor().shape()));
        }
        let d = clip.tensor().data();
        for ch in 0..c {
            for fr in 0..f {
                out.extend_from_slice(&d[(fr * c + ch) * h * w..][..h * w]);
            }
        }
    }
    Tensor::new([clips.len(), c, f, h, w], out)
}

/// Inverse of [`clips_to_batch`].
pub fn batch_to_clips<T: Real>(batch: &Tensor<T>) -> Result<Vec<VideoClip<T>>> {
    let s = batch.shape();
    if s.len() != 5 {
        return Err(Error::shape("batch_to_clips", s, &[0, 0, 0, 0, 0]));
    }
    let (b, c, f, hw) = (s[0], s[1], s[2], s[3] * s[4]);
    (0..b)
        .map(|n| {
            let mut data = Vec::with_capacity(c * f * hw);
            for fr in 0..f {
                for ch in 0..c {
                    data.extend_from_slice(&batch.data()[((n * c + ch) * f + fr) * hw..][..hw]);
                }
            }
            VideoClip::new(Tensor::new([f, c, s[3], s[4]], data)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(VideoClip::new(Tensor::full([5, 1, 2, 2], 1.5f32)).is_err());
        assert!(VideoClip::new(Tensor::full([5, 1, 2, 2], f32::NAN)).is_err());
        assert!(VideoClip::new(Tensor::full([5, 1, 2, 2], 0.5f32)).is_ok());
    }

    #[test]
    fn batch_round_trip() {
        let clips: Vec<VideoClip<f64>> = (0..3)
            .map(|k| VideoClip::new(Tensor::from_fn([5, 2, 3, 4], |i| ((i * 7 + k) % 11) as f64 / 10.0)).unwrap())
            .collect();
        let batch = clips_to_batch(&clips).unwrap();
        assert_eq!(batch.shape(), &[3, 2, 5, 3, 4]);
        assert_eq!(batch_to_clips(&batch).unwrap(), clips);
        // Element (n=1, c=1, f=2, y=0, x=3).
        assert_eq!(batch.data()[(((2 + 1) * 5 + 2) * 3) * 4 + 3], clips[1].frame(2).data()[12 + 3]);
    }

    #[test]
    fn stream_layout_permutation() {
        let t = Tensor::from_fn([1, 2, 1, 2, 3], |i| i as f64);
        let p = bfhwc_to_bcfhw(&t).unwrap();
        assert_eq!(p.shape(), &[1, 3, 2, 1, 2]);
        // Channel 1 of frame 1, pixel x=1 is source index ((1*1+0)*2+1)*3+1.
        assert_eq!(p.data()[((1 * 2) + 1) * 2 + 1], 10.0);
    }

    #[test]
    fn frames_stack() {
        let a = Tensor::full([1, 2, 2], 0.1f32);
        let b = Tensor::full([1, 2, 2], 0.9f32);
        let c = VideoClip::from_frames(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.frame(1), b);
        assert!(VideoClip::from_frames(&[a, Tensor::full([1, 3, 2], 0.0)]).is_err());
    }
}
