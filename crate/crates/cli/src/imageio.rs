//! PNG and GIF conversion for `[C,H,W]` tensors in `[0,1]`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, DynamicImage, Frame, ImageBuffer, ImageFormat, Luma, Rgb, RgbaImage};
use vimagine::data::VideoClip;
use vimagine::tensor::Tensor;

pub const GIF_DELAY_MS: u32 = 200;

/// Nearest 8-bit level; out-of-range values saturate.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn dims(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c @ (1 | 3), h, w] => Ok((c, h, w)),
        ref s => bail!("expected a [1|3,H,W] image, got {s:?}"),
    }
}

/// Interleaved 8-bit samples in HWC order.
fn interleave(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = dims(t)?;
    let d = t.data();
    Ok((0..h * w).flat_map(|i| (0..c).map(move |k| quantize(d[k * h * w + i]))).collect())
}

pub fn to_dynamic(t: &Tensor<f32>) -> Result<DynamicImage> {
    let (c, h, w) = dims(t)?;
    let raw = interleave(t)?;
    let (w, h) = (w as u32, h as u32);
    Ok(if c == 1 {
        DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
    } else {
        DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
    })
}

pub fn save_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    to_dynamic(t)?
        .save_with_format(path, ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}

/// Gray PNGs load as one channel; everything else as RGB with alpha dropped.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    let gray = matches!(img.color(), image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, raw) = if gray { (1, img.to_luma8().into_raw()) } else { (3, img.to_rgb8().into_raw()) };
    let data = (0..c * h * w)
        .map(|i| {
            let (k, p) = (i / (h * w), i % (h * w));
            f32::from(raw[p * c + k]) / 255.0
        })
        .collect();
    Ok(Tensor::new([c, h, w], data)?)
}

/// Converts between one and three channels: luminance or replication.
pub fn match_channels(t: Tensor<f32>, channels: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(&t)?;
    Ok(match (c, channels) {
        (a, b) if a == b => t,
        (3, 1) => {
            let d = t.data();
            Tensor::from_fn([1, h, w], |i| 0.299 * d[i] + 0.587 * d[h * w + i] + 0.114 * d[2 * h * w + i])
        }
        (1, 3) => Tensor::new([3, h, w], t.data().repeat(3))?,
        _ => bail!("cannot convert {c} channels to {channels}"),
    })
}

/// Looping animated GIF with a fixed frame delay.
pub fn save_gif(frames: &[Tensor<f32>], path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = GifEncoder::new(BufWriter::new(file));
    enc.set_repeat(Repeat::Infinite)?;
    let out: Result<Vec<Frame>> = frames
        .iter()
        .map(|f| {
            let rgba: RgbaImage = to_dynamic(f)?.to_rgba8();
            Ok(Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(GIF_DELAY_MS, 1)))
        })
        .collect();
    enc.encode_frames(out?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `0.5 + (frame - input) / 2`, clamped: mid-gray means no change.
pub fn difference(frame: &Tensor<f32>, input: &Tensor<f32>) -> Result<Tensor<f32>> {
    if frame.shape() != input.shape() {
        bail!("difference of {:?} and {:?}", frame.shape(), input.shape());
    }
    let data = frame.data().iter().zip(input.data()).map(|(f, x)| (0.5 + (f - x) / 2.0).clamp(0.0, 1.0)).collect();
    Ok(Tensor::new(frame.shape(), data)?)
}

/// Clips as rows and frames as columns of one `[C, rows*H, cols*W]` image.
pub fn grid(clips: &[VideoClip<f32>]) -> Result<Tensor<f32>> {
    let first = clips.first().context("empty grid")?;
    let (f, c, h, w) = (first.len(), first.channels(), first.height(), first.width());
    let frames: Vec<Vec<Tensor<f32>>> = clips.iter().map(|k| (0..f).map(|j| k.frame(j)).collect()).collect();
    let (gh, gw) = (clips.len() * h, f * w);
    Ok(Tensor::from_fn([c, gh, gw], |i| {
        let (k, y, x) = (i / (gh * gw), i / gw % gh, i % gw);
        frames[y / h][x / w].data()[k * h * w + (y % h) * w + x % w]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let t = Tensor::from_fn([c, 5, 7], |i| ((i * 31) % 97) as f32 / 96.0);
            let p = dir.path().join(format!("x{c}.png"));
            save_png(&t, &p).unwrap();
            let back = load_png(&p).unwrap();
            assert_eq!(back.shape(), t.shape());
            let err = t.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6, "{err}");
        }
    }

    #[test]
    fn difference_is_mid_gray_for_equal_frames() {
        let a = Tensor::from_fn([1, 2, 2], |i| (i % 2) as f32);
        let d = difference(&a, &a).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
        let b = Tensor::from_fn([1, 2, 2], |_| 0.0f32);
        assert_eq!(difference(&a, &b).unwrap().data(), &[0.5, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_places_frames() {
        let clip = VideoClip::from_frames(&[Tensor::from_fn([1, 2, 2], |_| 0.0f32), Tensor::from_fn([1, 2, 2], |_| 1.0f32)]).unwrap();
        let g = grid(&[clip.clone(), clip]).unwrap();
        assert_eq!(g.shape(), &[1, 4, 4]);
        assert_eq!(g.data()[3], 1.0);
        assert_eq!(g.data()[1], 0.0);
    }
}
