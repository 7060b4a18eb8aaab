//! One antialiased shape per clip moving at constant velocity along an axis.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClipSource, VideoClip, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionAxis {
    Horizontal,
    Vertical,
    /// Equal speed on both axes: speed `s` moves `(±s, ±s)` per frame.
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesConfig {
    pub size: usize,
    pub channels: usize,
    pub half_size: (f64, f64),
    pub max_speed: f64,
    pub kinds: Vec<ShapeKind>,
    pub axes: Vec<MotionAxis>,
    pub frames: usize,
    pub supersample: usize,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig::for_size(64)
    }
}

impl ShapesConfig {
    /// Half-sizes scale with the frame (6..12 at 64); the speed cap is 5
    /// unless the whole trajectory would not fit.
    pub fn for_size(size: usize) -> Self {
        let scale = size as f64 / 64.0;
        let half_size = ((6.0 * scale).max(2.0), (12.0 * scale).max(3.0));
        let frames = CLIP_FRAMES;
        let room = size as f64 - 2.0 * half_size.1;
        ShapesConfig {
            size,
            channels: 3,
            half_size,
            max_speed: (room / (frames - 1) as f64).clamp(0.0, 5.0),
            kinds: vec![ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle],
            axes: vec![MotionAxis::Horizontal, MotionAxis::Vertical, MotionAxis::Diagonal],
            frames,
            supersample: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.half_size;
        if !matches!(self.channels, 1 | 3) || self.frames == 0 || self.supersample == 0 {
            return Err(Error::config("shapes need 1 or 3 channels, frames >= 1, supersample >= 1"));
        }
        if self.kinds.is_empty() || self.axes.is_empty() {
            return Err(Error::config("shapes need at least one kind and one motion axis"));
        }
        if !(0.0 < lo && lo <= hi) || !(0.0..=5.0).contains(&self.max_speed) {
            return Err(Error::config("shape half-size must be positive and speed within [0,5]"));
        }
        let span = 2.0 * hi + self.max_speed * (self.frames - 1) as f64;
        if span > self.size as f64 {
            return Err(Error::config(format!(
                "a shape of half-size {hi} at speed {} leaves a {}-pixel frame",
                self.max_speed, self.size
            )));
        }
        Ok(())
    }
}

/// Everything needed to render one clip. Coordinates are continuous with
/// pixel `(x, y)` covering `[x, x+1) x [y, y+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub axis: MotionAxis,
    pub center: (f64, f64),
    pub half: f64,
    pub speed: f64,
    /// Per-frame displacement.
    pub velocity: (f64, f64),
    pub color: [f32; 3],
}

impl ShapeSpec {
    fn contains(&self, cx: f64, cy: f64, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - cx, py - cy);
        let h = self.half;
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= h * h,
            ShapeKind::Square => dx.abs() <= h && dy.abs() <= h,
            // Apex up, base at +h; |dx| <= (dy + h) / 2 inside the band.
            ShapeKind::Triangle => (-h..=h).contains(&dy) && dx.abs() <= (dy + h) / 2.0,
        }
    }
}

fn saturated(hue: f64) -> [f32; 3] {
    let h = hue * 6.0;
    let x = (1.0 - (h % 2.0 - 1.0).abs()) as f32;
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

#[derive(Clone, Debug)]
pub struct Shapes {
    pub cfg: ShapesConfig,
    pub seed: u64,
    pub len: u64,
}

impl Shapes {
    pub fn new(cfg: ShapesConfig, seed: u64, len: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Shapes { cfg, seed, len })
    }

    pub fn spec(&self, index: u64) -> ShapeSpec {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let kind = *cfg.kinds.choose(&mut rng).expect("validated");
        let axis = *cfg.axes.choose(&mut rng).expect("validated");
        let half = if cfg.half_size.1 > cfg.half_size.0 {
            rng.gen_range(cfg.half_size.0..=cfg.half_size.1)
        } else {
            cfg.half_size.0
        };
        let speed = rng.gen_range(0.0..=cfg.max_speed);
        let mut sign = || if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let velocity = match axis {
            MotionAxis::Horizontal => (sign() * speed, 0.0),
            MotionAxis::Vertical => (0.0, sign() * speed),
            MotionAxis::Diagonal => (sign() * speed, sign() * speed),
        };
        let travel = (cfg.frames - 1) as f64;
        let s = cfg.size as f64;
        let mut start = |v: f64| {
            let (a, b) = if v >= 0.0 { (half, s - half - v * travel) } else { (half - v * travel, s - half) };
            rng.gen_range(a..=b)
        };
        let center = (start(velocity.0), start(velocity.1));
        let color = saturated(rng.gen_range(0.0..1.0));
        ShapeSpec {
            kind,
            axis,
            center,
            half,
            speed,
            velocity,
            color,
        }
    }

    /// Coverage-weighted rendering on a black background.
    pub fn render(&self, spec: &ShapeSpec) -> Result<VideoClip> {
        let cfg = &self.cfg;
        let (s, c, f, ss) = (cfg.size, cfg.channels, cfg.frames, cfg.supersample);
        let step = 1.0 / ss as f64;
        let color: &[f32] = if c == 3 { &spec.color } else { &[1.0] };
        let mut data = vec![0f32; f * c * s * s];
        for fr in 0..f {
            let cx = spec.center.0 + spec.velocity.0 * fr as f64;
            let cy = spec.center.1 + spec.velocity.1 * fr as f64;
            let reach = spec.half + 1.0;
            let ys = ((cy - reach).floor().max(0.0) as usize)..((cy + reach).ceil().min(s as f64) as usize);
            let xs = ((cx - reach).floor().max(0.0) as usize)..((cx + reach).ceil().min(s as f64) as usize);
            for y in ys {
                for x in xs.clone() {
                    let mut hits = 0usize;
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let (px, py) = (x as f64 + (sx as f64 + 0.5) * step, y as f64 + (sy as f64 + 0.5) * step);
                            hits += spec.contains(cx, cy, px, py) as usize;
                        }
                    }
                    let cov = hits as f32 / (ss * ss) as f32;
                    for (ch, col) in color.iter().enumerate() {
                        data[((fr * c + ch) * s + y) * s + x] = cov * col;
                    }
                }
            }
        }
        VideoClip::new(Tensor::new([f, c, s, s], data)?)
    }
}

impl ClipSource for Shapes {
    fn clip(&self, index: u64) -> Result<VideoClip> {
        self.render(&self.spec(index))
    }

    fn len(&self) -> u64 {
        self.len
    }

    fn frame_shape(&self) -> (usize, usize, usize, usize) {
        (self.cfg.frames, self.cfg.size, self.cfg.size, self.cfg.channels)
    }
}

/// Intensity-weighted centroid of a `[C,H,W]` frame in continuous pixel
/// coordinates.
pub fn centroid(frame: &Tensor<f32>) -> Option<(f64, f64)> {
    let s = frame.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = frame.data()[(ch * h + y) * w + x] as f64;
                m += v;
                mx += v * (x as f64 + 0.5);
                my += v * (y as f64 + 0.5);
            }
        }
    }
    (m > 0.0).then(|| (mx / m, my / m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_shape_has_identical_frames() {
        let d = Shapes::new(ShapesConfig::default(), 1, 10).unwrap();
        let mut spec = d.spec(0);
        spec.velocity = (0.0, 0.0);
        let clip = d.render(&spec).unwrap();
        for f in 1..5 {
            assert_eq!(clip.frame(f), clip.frame(0));
        }
    }

    #[test]
    fn diagonal_square_centroid_moves_three_pixels() {
        let d = Shapes::new(ShapesConfig::default(), 1, 10).unwrap();
        let spec = ShapeSpec {
            kind: ShapeKind::Square,
            axis: MotionAxis::Diagonal,
            center: (20.0, 20.0),
            half: 8.0,
            speed: 3.0,
            velocity: (3.0, 3.0),
            color: [1.0, 0.0, 0.5],
        };
        let clip = d.render(&spec).unwrap();
        for f in 1..5 {
            let a = centroid(&clip.frame(f - 1)).unwrap();
            let b = centroid(&clip.frame(f)).unwrap();
            assert!((b.0 - a.0 - 3.0).abs() <= 0.5 && (b.1 - a.1 - 3.0).abs() <= 0.5);
        }
        let c0 = centroid(&clip.frame(0)).unwrap();
        assert!((c0.0 - 20.0).abs() < 0.1 && (c0.1 - 20.0).abs() < 0.1);
    }

    #[test]
    fn every_kind_stays_in_frame_and_in_range() {
        for size in [16, 32, 64] {
            let d = Shapes::new(ShapesConfig::for_size(size), 4, 200).unwrap();
            for i in 0..60 {
                let spec = d.spec(i);
                assert!((0.0..=5.0).contains(&spec.speed));
                let clip = d.clip(i).unwrap();
                let m0: f32 = clip.frame(0).data().iter().sum();
                for f in 0..5 {
                    let m: f32 = clip.frame(f).data().iter().sum();
                    assert!(m > 0.0 && (m - m0).abs() <= 0.05 * m0, "size {size} clip {i} frame {f}");
                }
            }
        }
    }

    #[test]
    fn grayscale_and_validation() {
        let cfg = ShapesConfig {
            channels: 1,
            ..ShapesConfig::for_size(32)
        };
        let d = Shapes::new(cfg, 0, 5).unwrap();
        assert_eq!(d.clip(0).unwrap().channels(), 1);
        let fast = ShapesConfig {
            max_speed: 6.0,
            ..Default::default()
        };
        assert!(Shapes::new(fast, 0, 1).is_err());
        assert_eq!(ShapesConfig::for_size(16).max_speed, 2.5);
        assert_eq!(ShapesConfig::for_size(64).max_speed, 5.0);
    }

    #[test]
    fn saturated_colours() {
        for k in 0..60 {
            let c = saturated(k as f64 / 60.0);
            assert!(c.iter().any(|v| *v == 1.0) && c.iter().any(|v| *v == 0.0));
        }
    }
}
