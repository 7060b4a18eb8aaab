//! Procedural seven-segment digits, used when no IDX file is supplied.

use super::idx::SpriteSet;

const SIZE: usize = 28;
const SUPERSAMPLE: usize = 4;

// Segment endpoints on a 12x18 box centred in the sprite: a b c d e f g.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((8.0, 5.0), (20.0, 5.0)),
    ((20.0, 5.0), (20.0, 14.0)),
    ((20.0, 14.0), (20.0, 23.0)),
    ((8.0, 23.0), (20.0, 23.0)),
    ((8.0, 14.0), (8.0, 23.0)),
    ((8.0, 5.0), (8.0, 14.0)),
    ((8.0, 14.0), (20.0, 14.0)),
];

// Lit segments per digit, bit i = SEGMENTS[i].
const DIGITS: [u8; 10] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn render(digit: usize, slant: f64, half_width: f64) -> Vec<f32> {
    let mut out = vec![0f32; SIZE * SIZE];
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in 0..SIZE {
        for x in 0..SIZE {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) * step;
                    // Undo the shear so segments are tested upright.
                    let px = x as f64 + (sx as f64 + 0.5) * step - slant * (14.0 - py);
                    let lit = (0..7).any(|s| {
                        DIGITS[digit] >> s & 1 == 1 && segment_distance((px, py), SEGMENTS[s].0, SEGMENTS[s].1) <= half_width
                    });
                    hits += lit as usize;
                }
            }
            out[y * SIZE + x] = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        }
    }
    out
}

/// Ten digits in three slants and two stroke widths (60 sprites of 28x28).
pub fn glyph_sprites() -> SpriteSet {
    let mut pixels = Vec::with_capacity(60 * SIZE * SIZE);
    for half_width in [1.2, 1.8] {
        for slant in [-0.2, 0.0, 0.2] {
            for d in 0..10 {
                pixels.extend(render(d, slant, half_width));
            }
        }
    }
    SpriteSet::new(SIZE, SIZE, pixels).expect("glyphs are well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sprites_are_distinct_and_bounded() {
        let s = glyph_sprites();
        assert_eq!((s.len(), s.rows, s.cols), (60, 28, 28));
        for i in 0..s.len() {
            let sp = s.sprite(i);
            assert!(sp.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!(sp.iter().sum::<f32>() > 20.0);
            // Border rows and columns stay empty.
            assert!((0..28).all(|k| sp[k] == 0.0 && sp[27 * 28 + k] == 0.0 && sp[k * 28] == 0.0));
        }
        for a in 0..10 {
            for b in a + 1..10 {
                assert_ne!(s.sprite(a), s.sprite(b));
            }
        }
    }

    #[test]
    fn eight_covers_every_other_digit() {
        let s = glyph_sprites();
        let eight = s.sprite(8);
        for d in 0..10 {
            assert!(s.sprite(d).iter().zip(eight).all(|(p, e)| p <= e));
        }
    }
}
