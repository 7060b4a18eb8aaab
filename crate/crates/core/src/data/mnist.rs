//! Moving MNIST: digits with constant speed bouncing inside the frame.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::SpriteSet;
use super::{ClipSource, VideoClip, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MovingMnistConfig {
    pub size: usize,
    pub digits: usize,
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Reflect at the walls; otherwise starts are chosen so digits never
    /// reach a wall.
    pub bounce: bool,
    pub frames: usize,
}

impl Default for MovingMnistConfig {
    fn default() -> Self {
        MovingMnistConfig {
            size: 64,
            digits: 2,
            speed: (2.0, 5.0),
            bounce: true,
            frames: CLIP_FRAMES,
        }
    }
}

impl MovingMnistConfig {
    pub fn validate(&self, sprites: &SpriteSet) -> Result<()> {
        if sprites.len() < 2 {
            return Err(Error::config("moving MNIST needs at least 2 sprites"));
        }
        if sprites.rows >= self.size || sprites.cols >= self.size {
            return Err(Error::config(format!(
                "{}x{} sprites do not fit a {s}x{s} frame",
                sprites.rows,
                sprites.cols,
                s = self.size
            )));
        }
        let room = (self.size - sprites.rows.max(sprites.cols)) as f64;
        let (lo, hi) = self.speed;
        if !(0.0 <= lo && lo <= hi) || self.digits == 0 || self.frames == 0 {
            return Err(Error::config("moving MNIST needs digits, frames >= 1 and 0 <= min speed <= max speed"));
        }
        let reach = if self.bounce { hi } else { hi * (self.frames - 1) as f64 };
        if reach > room {
            return Err(Error::config(format!("speed {hi} too large for the {room}-pixel range of motion")));
        }
        Ok(())
    }
}

/// One digit's sprite and motion; positions are the sprite's top-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitTrack {
    pub sprite: usize,
    pub start: (f64, f64),
    pub velocity: (f64, f64),
}

impl DigitTrack {
    /// Top-left corner per frame, reflecting inside `[0, limit]`.
    pub fn positions(&self, frames: usize, limit: (f64, f64)) -> Vec<(f64, f64)> {
        let (mut p, mut v) = (self.start, self.velocity);
        let mut out = vec![p];
        for _ in 1..frames {
            (p.0, v.0) = advance(p.0, v.0, limit.0);
            (p.1, v.1) = advance(p.1, v.1, limit.1);
            out.push(p);
        }
        out
    }

    pub fn speed(&self) -> f64 {
        self.velocity.0.hypot(self.velocity.1)
    }
}

fn advance(p: f64, v: f64, hi: f64) -> (f64, f64) {
    let q = p + v;
    if q < 0.0 {
        (-q, -v)
    } else if q > hi {
        (2.0 * hi - q, -v)
    } else {
        (q, v)
    }
}

/// Clip `index` of the stream for `seed` (independent of other indices).
#[derive(Clone, Debug)]
pub struct MovingMnist {
    pub cfg: MovingMnistConfig,
    pub sprites: Arc<SpriteSet>,
    pub seed: u64,
    pub len: u64,
}

impl MovingMnist {
    pub fn new(cfg: MovingMnistConfig, sprites: Arc<SpriteSet>, seed: u64, len: u64) -> Result<Self> {
        cfg.validate(&sprites)?;
        Ok(MovingMnist { cfg, sprites, seed, len })
    }

    fn limit(&self) -> (f64, f64) {
        (
            (self.cfg.size - self.sprites.cols) as f64,
            (self.cfg.size - self.sprites.rows) as f64,
        )
    }

    pub fn tracks(&self, index: u64) -> Vec<DigitTrack> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let limit = self.limit();
        let travel = (self.cfg.frames - 1) as f64;
        (0..self.cfg.digits)
            .map(|_| {
                let sprite = rng.gen_range(0..self.sprites.len());
                let angle = rng.gen_range(0.0..TAU);
                let (lo, hi) = self.cfg.speed;
                let speed = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let velocity = (speed * angle.cos(), speed * angle.sin());
                let mut start = |lim: f64, v: f64| {
                    if self.cfg.bounce {
                        rng.gen_range(0.0..=lim)
                    } else {
                        let (a, b) = if v >= 0.0 { (0.0, lim - v * travel) } else { (-v * travel, lim) };
                        rng.gen_range(a..=b)
                    }
                };
                let start = (start(limit.0, velocity.0), start(limit.1, velocity.1));
                DigitTrack { sprite, start, velocity }
            })
            .collect()
    }

    /// Renders explicit tracks with max compositing at rounded positions.
    pub fn render(&self, tracks: &[DigitTrack]) -> Result<VideoClip> {
        let (s, f) = (self.cfg.size, self.cfg.frames);
        let (rows, cols) = (self.sprites.rows, self.sprites.cols);
        let limit = self.limit();
        let mut data = vec![0f32; f * s * s];
        for t in tracks {
            if t.sprite >= self.sprites.len() {
                return Err(Error::config(format!("sprite {} out of range", t.sprite)));
            }
            let sprite = self.sprites.sprite(t.sprite);
            for (fr, (x, y)) in t.positions(f, limit).into_iter().enumerate() {
                let (x0, y0) = (x.round() as isize, y.round() as isize);
                if x0 < 0 || y0 < 0 || x0 as usize + cols > s || y0 as usize + rows > s {
                    return Err(Error::invariant(format!("digit left the frame at ({x0},{y0})")));
                }
                let frame = &mut data[fr * s * s..][..s * s];
                for r in 0..rows {
                    let row = &mut frame[(y0 as usize + r) * s + x0 as usize..][..cols];
                    for (d, v) in row.iter_mut().zip(&sprite[r * cols..][..cols]) {
                        *d = d.max(*v);
                    }
                }
            }
        }
        VideoClip::new(Tensor::new([f, 1, s, s], data)?)
    }
}

impl ClipSource for MovingMnist {
    fn clip(&self, index: u64) -> Result<VideoClip> {
        self.render(&self.tracks(index))
    }

    fn len(&self) -> u64 {
        self.len
    }

    fn frame_shape(&self) -> (usize, usize, usize, usize) {
        (self.cfg.frames, self.cfg.size, self.cfg.size, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::glyph_sprites;

    fn dataset(cfg: MovingMnistConfig) -> MovingMnist {
        MovingMnist::new(cfg, Arc::new(glyph_sprites()), 11, 100).unwrap()
    }

    fn bbox(frame: &[f32], s: usize) -> (usize, usize, usize, usize) {
        let lit: Vec<(usize, usize)> = (0..s * s).filter(|i| frame[*i] > 0.0).map(|i| (i % s, i / s)).collect();
        (
            lit.iter().map(|p| p.0).min().unwrap(),
            lit.iter().map(|p| p.1).min().unwrap(),
            lit.iter().map(|p| p.0).max().unwrap(),
            lit.iter().map(|p| p.1).max().unwrap(),
        )
    }

    #[test]
    fn zero_speed_gives_static_frames() {
        let d = dataset(MovingMnistConfig {
            speed: (0.0, 0.0),
            ..Default::default()
        });
        let clip = d.clip(3).unwrap();
        for f in 1..5 {
            assert_eq!(clip.frame(f), clip.frame(0));
        }
    }

    #[test]
    fn single_digit_kinematics() {
        let d = dataset(MovingMnistConfig {
            digits: 1,
            ..Default::default()
        });
        let track = DigitTrack {
            sprite: 8,
            start: (10.0, 10.0),
            velocity: (2.0, 0.0),
        };
        let clip = d.render(&[track]).unwrap();
        let b0 = bbox(clip.frame(0).data(), 64);
        let b3 = bbox(clip.frame(3).data(), 64);
        assert_eq!((b3.0, b3.1, b3.2, b3.3), (b0.0 + 6, b0.1, b0.2 + 6, b0.3));
    }

    #[test]
    fn reflection_matches_folded_path() {
        let limit = 36.0;
        let fold = |u: f64| {
            let m = u.rem_euclid(2.0 * limit);
            if m <= limit {
                m
            } else {
                2.0 * limit - m
            }
        };
        let t = DigitTrack {
            sprite: 0,
            start: (33.5, 1.0),
            velocity: (4.5, -3.0),
        };
        for (f, p) in t.positions(5, (limit, limit)).into_iter().enumerate() {
            assert!((p.0 - fold(33.5 + 4.5 * f as f64)).abs() < 1e-12);
            assert!((p.1 - fold(1.0 - 3.0 * f as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_is_conserved_without_wall_contact() {
        let d = dataset(MovingMnistConfig {
            digits: 1,
            bounce: false,
            ..Default::default()
        });
        for i in 0..50 {
            let clip = d.clip(i).unwrap();
            let m0: f32 = clip.frame(0).data().iter().sum();
            for f in 1..5 {
                let m: f32 = clip.frame(f).data().iter().sum();
                assert!((m - m0).abs() <= 0.01 * m0);
            }
        }
    }

    #[test]
    fn clips_are_pure_functions_of_index() {
        let d = dataset(MovingMnistConfig::default());
        let a = d.clip(42).unwrap();
        let _ = d.clip(7).unwrap();
        assert_eq!(a, d.clip(42).unwrap());
        assert_ne!(a, d.clip(43).unwrap());
        assert_eq!(d.tracks(5).len(), 2);
    }

    #[test]
    fn config_validation() {
        let sprites = Arc::new(glyph_sprites());
        let too_fast = MovingMnistConfig {
            speed: (1.0, 40.0),
            ..Default::default()
        };
        assert!(MovingMnist::new(too_fast, sprites.clone(), 0, 1).is_err());
        let one = SpriteSet::new(28, 28, vec![0.0; 784]).unwrap();
        assert!(MovingMnist::new(MovingMnistConfig::default(), Arc::new(one), 0, 1).is_err());
        let small = MovingMnistConfig {
            size: 16,
            ..Default::default()
        };
        assert!(MovingMnist::new(small, sprites, 0, 1).is_err());
    }
}
