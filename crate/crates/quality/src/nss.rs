//! Natural-scene statistics: MSCN coefficients and generalized Gaussian fits.

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use crate::error::{QualityError, Result};
use crate::gray::GrayImage;

pub const WINDOW: usize = 7;
pub const WINDOW_SIGMA: f64 = 7.0 / 6.0;
/// Stabilizer in the MSCN denominator, for intensities in `[0,255]`.
pub const MSCN_C: f64 = 1.0;
pub const MIN_SIDE: usize = 16;
pub const FEATURES: usize = 36;

/// Shape grid `0.2, 0.201, ..., 10`.
fn shape_grid() -> &'static [f64] {
    static GRID: OnceLock<Vec<f64>> = OnceLock::new();
    GRID.get_or_init(|| (0..=9800).map(|i| 0.2 + i as f64 * 0.001).collect())
}

/// `Γ(1/g)Γ(3/g)/Γ(2/g)²`, decreasing in `g` (3 at `g = 1`, 1.5 at `g = 2`).
fn moment_ratio(g: f64) -> f64 {
    (ln_gamma(1.0 / g) + ln_gamma(3.0 / g) - 2.0 * ln_gamma(2.0 / g)).exp()
}

fn ratio_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| shape_grid().iter().map(|g| moment_ratio(*g)).collect())
}

/// Grid shape whose moment ratio is closest to `target`.
fn invert_ratio(target: f64) -> f64 {
    let (i, _) = ratio_table()
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bd), (i, r)| {
            let d = (r - target).abs();
            if d < bd {
                (i, d)
            } else {
                (bi, bd)
            }
        });
    shape_grid()[i]
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Symmetric (edge-including) reflection of an out-of-range index.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn blur(img: &[f64], h: usize, w: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * img[y * w + reflect(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[reflect(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients of `img` scaled to
/// `[0,255]`.
pub fn mscn(img: &GrayImage) -> Result<GrayImage> {
    let (h, w) = (img.height, img.width);
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(QualityError::config(format!(
            "MSCN needs at least {MIN_SIDE}x{MIN_SIDE} pixels, got {h}x{w}"
        )));
    }
    // MSCN is invariant to a global offset; centering on the midrange makes
    // constant images exactly zero and keeps `mu_sq - mu²` well conditioned.
    let (lo, hi) = img.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let mid = 0.5 * (lo + hi);
    let px: Vec<f64> = img.data.iter().map(|v| (v - mid) * 255.0).collect();
    let sq: Vec<f64> = px.iter().map(|v| v * v).collect();
    let taps = gaussian_taps();
    let mu = blur(&px, h, w, &taps);
    let mu_sq = blur(&sq, h, w, &taps);
    let data = (0..h * w)
        .map(|i| {
            let sigma = (mu_sq[i] - mu[i] * mu[i]).abs().sqrt();
            (px[i] - mu[i]) / (sigma + MSCN_C)
        })
        .collect();
    GrayImage::new(h, w, data)
}

/// Generalized Gaussian fit; `degenerate` marks the all-zero fallback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GgdFit {
    pub alpha: f64,
    pub sigma_sq: f64,
    pub degenerate: bool,
}

/// Moment matching of `E[x²]/E|x|²` against the GGD moment ratio.
pub fn fit_ggd(samples: &[f64]) -> Result<GgdFit> {
    if samples.len() < 100 {
        return Err(QualityError::config(format!("GGD fit needs >= 100 samples, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let sigma_sq = samples.iter().map(|x| x * x).sum::<f64>() / n;
    let abs_mean = samples.iter().map(|x| x.abs()).sum::<f64>() / n;
    if abs_mean == 0.0 {
        return Ok(GgdFit {
            alpha: 10.0,
            sigma_sq: 0.0,
            degenerate: true,
        });
    }
    Ok(GgdFit {
        alpha: invert_ratio(sigma_sq / (abs_mean * abs_mean)),
        sigma_sq,
        degenerate: false,
    })
}

/// Asymmetric generalized Gaussian fit; `degenerate` marks samples that
/// lack one sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggdFit {
    pub eta: f64,
    pub nu: f64,
    pub left_var: f64,
    pub right_var: f64,
    pub degenerate: bool,
}

pub fn fit_aggd(samples: &[f64]) -> Result<AggdFit> {
    if samples.len() < 100 {
        return Err(QualityError::config(format!("AGGD fit needs >= 100 samples, got {}", samples.len())));
    }
    let side = |keep: fn(f64) -> bool| {
        let v: Vec<f64> = samples.iter().copied().filter(|x| keep(*x)).collect();
        (!v.is_empty()).then(|| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64)
    };
    let (left, right) = match (side(|x| x < 0.0), side(|x| x > 0.0)) {
        (Some(l), Some(r)) => (l, r),
        (l, r) => {
            return Ok(AggdFit {
                eta: 0.0,
                nu: 10.0,
                left_var: l.unwrap_or(0.0),
                right_var: r.unwrap_or(0.0),
                degenerate: true,
            })
        }
    };
    let n = samples.len() as f64;
    let (sl, sr) = (left.sqrt(), right.sqrt());
    let g = sl / sr;
    let abs_mean = samples.iter().map(|x| x.abs()).sum::<f64>() / n;
    let sq_mean = samples.iter().map(|x| x * x).sum::<f64>() / n;
    // Skew-corrected inverse moment ratio, matched against 1/r(nu).
    let r_hat = abs_mean * abs_mean / sq_mean;
    let big_r = r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let nu = invert_ratio(1.0 / big_r);
    let eta = (sr - sl) * (ln_gamma(2.0 / nu) - 0.5 * (ln_gamma(1.0 / nu) + ln_gamma(3.0 / nu))).exp();
    Ok(AggdFit {
        eta,
        nu,
        left_var: left,
        right_var: right,
        degenerate: false,
    })
}

/// Feature layout per scale: `[alpha, sigma²]` then `[eta, nu, σl², σr²]` for
/// horizontal, vertical, main-diagonal and anti-diagonal neighbour products.
#[derive(Clone, Debug, PartialEq)]
pub struct NssFeatures {
    pub values: [f64; FEATURES],
    /// Some fit fell back to its degenerate-input default.
    pub degenerate: bool,
}

/// Neighbour offsets `(dy, dx)` of the four orientation products.
pub const ORIENTATIONS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

fn scale_features(img: &GrayImage, out: &mut [f64]) -> Result<bool> {
    let m = mscn(img)?;
    let ggd = fit_ggd(&m.data)?;
    out[0] = ggd.alpha;
    out[1] = ggd.sigma_sq;
    let mut degenerate = ggd.degenerate;
    let (h, w) = (m.height as isize, m.width as isize);
    for (k, (dy, dx)) in ORIENTATIONS.iter().enumerate() {
        let mut prod = Vec::with_capacity((h * w) as usize);
        for y in 0..h - dy {
            for x in 0.max(-dx)..w - 0.max(*dx) {
                prod.push(m.at(y as usize, x as usize) * m.at((y + dy) as usize, (x + dx) as usize));
            }
        }
        let a = fit_aggd(&prod)?;
        out[2 + 4 * k..6 + 4 * k].copy_from_slice(&[a.eta, a.nu, a.left_var, a.right_var]);
        degenerate |= a.degenerate;
    }
    Ok(degenerate)
}

/// 18 features at full resolution followed by 18 at half resolution.
pub fn brisque_features(img: &GrayImage) -> Result<NssFeatures> {
    let mut values = [0.0; FEATURES];
    let d0 = scale_features(img, &mut values[..18])?;
    let d1 = scale_features(&img.downsample(), &mut values[18..])?;
    Ok(NssFeatures {
        values,
        degenerate: d0 || d1,
    })
}
