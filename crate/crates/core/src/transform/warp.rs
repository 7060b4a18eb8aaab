//! Tape operations that warp batches of images.
//!
//! Coordinates are normalized to `[-1, 1]` with the corner pixels at the
//! extremes, and the affine map sends output coordinates to the source
//! location they sample from.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Normalized coordinate of pixel `i` on an axis of `n` pixels.
#[inline]
pub(crate) fn mesh<T: Real>(i: usize, n: usize) -> T {
    T::lit(-1.0 + 2.0 * i as f64 / (n - 1) as f64)
}

/// `params[N,6] -> grid[N,H,W,2]`, grid entry = (source x, source y).
pub fn affine_grid<'t, T: Real>(params: Var<'t, T>, height: usize, width: usize) -> Result<Var<'t, T>> {
    let p = params.value();
    let ps = p.shape();
    if ps.len() != 2 || ps[1] != 6 {
        return Err(Error::shape("affine_grid", ps, &[ps[0], 6]));
    }
    if height < 2 || width < 2 {
        return Err(Error::config(format!("affine_grid needs at least 2x2 pixels, got {height}x{width}")));
    }
    let n = ps[0];
    let mut grid = Vec::with_capacity(n * height * width * 2);
    for b in 0..n {
        let a = &p.data()[b * 6..][..6];
        for i in 0..height {
            let y: T = mesh(i, height);
            for j in 0..width {
                let x: T = mesh(j, width);
                grid.push(a[0] * x + a[1] * y + a[2]);
                grid.push(a[3] * x + a[4] * y + a[5]);
            }
        }
    }
    let ip = params.id();
    Ok(params
        .tape()
        .push(Tensor::new([n, height, width, 2], grid)?, &[ip], move |g, sink| {
            let s = sink.slot(ip);
            for b in 0..n {
                let mut acc = [T::zero(); 6];
                for i in 0..height {
                    let y: T = mesh(i, height);
                    for j in 0..width {
                        let x: T = mesh(j, width);
                        let at = ((b * height + i) * width + j) * 2;
                        let (gx, gy) = (g[at], g[at + 1]);
                        acc[0] += gx * x;
                        acc[1] += gx * y;
                        acc[2] += gx;
                        acc[3] += gy * x;
                        acc[4] += gy * y;
                        acc[5] += gy;
                    }
                }
                for (d, a) in s[b * 6..][..6].iter_mut().zip(acc) {
                    *d += a;
                }
            }
        }))
}

struct Corners<T> {
    x0: isize,
    y0: isize,
    wx: T,
    wy: T,
}

/// Rounds pixel coordinates within a few ulps of an integer onto it, so
/// identity and integer-shift grids sample without interpolation residue.
#[inline]
fn snap<T: Real>(p: T) -> T {
    let r = p.round();
    if (p - r).abs() <= T::lit(8.0) * T::epsilon() * r.abs().max(T::one()) {
        r
    } else {
        p
    }
}

#[inline]
fn corners<T: Real>(gx: T, gy: T, h: usize, w: usize) -> Corners<T> {
    let half = T::lit(0.5);
    let px = snap((gx + T::one()) * half * T::lit((w - 1) as f64));
    let py = snap((gy + T::one()) * half * T::lit((h - 1) as f64));
    let fx = px.floor();
    let fy = py.floor();
    Corners {
        x0: fx.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy.to_isize().unwrap_or(isize::MIN / 2),
        wx: px - fx,
        wy: py - fy,
    }
}

#[inline]
fn inside(y: isize, x: isize, h: usize, w: usize) -> Option<usize> {
    (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
}

/// Samples `img[N,C,H,W]` at `grid[N,Ho,Wo,2]`; out-of-range taps read zero.
pub fn bilinear_sample<'t, T: Real>(img: Var<'t, T>, grid: Var<'t, T>) -> Result<Var<'t, T>> {
    let (iv, gv) = (img.value(), grid.value());
    let (is, gs) = (iv.shape(), gv.shape());
    if is.len() != 4 || gs.len() != 4 || gs[3] != 2 || gs[0] != is[0] {
        return Err(Error::shape("bilinear_sample", is, gs));
    }
    let (n, ch, h, w) = (is[0], is[1], is[2], is[3]);
    let (ho, wo) = (gs[1], gs[2]);
    if h < 2 || w < 2 {
        return Err(Error::config("bilinear_sample needs at least 2x2 source pixels"));
    }
    let mut out = vec![T::zero(); n * ch * ho * wo];
    let src = iv.data();
    for b in 0..n {
        for o in 0..ho * wo {
            let at = (b * ho * wo + o) * 2;
            let cn = corners(gv.data()[at], gv.data()[at + 1], h, w);
            let taps = [
                (inside(cn.y0, cn.x0, h, w), (T::one() - cn.wy) * (T::one() - cn.wx)),
                (inside(cn.y0, cn.x0 + 1, h, w), (T::one() - cn.wy) * cn.wx),
                (inside(cn.y0 + 1, cn.x0, h, w), cn.wy * (T::one() - cn.wx)),
                (inside(cn.y0 + 1, cn.x0 + 1, h, w), cn.wy * cn.wx),
            ];
            for c in 0..ch {
                let plane = &src[(b * ch + c) * h * w..][..h * w];
                let mut v = T::zero();
                for (idx, wt) in taps {
                    if let Some(i) = idx {
                        v += wt * plane[i];
                    }
                }
                out[(b * ch + c) * ho * wo + o] = v;
            }
        }
    }
    let (ii, ig) = (img.id(), grid.id());
    Ok(img.tape().push(Tensor::new([n, ch, ho, wo], out)?, &[ii, ig], move |g, sink| {
        let src = iv.data();
        let sx = T::lit(0.5 * (w - 1) as f64);
        let sy = T::lit(0.5 * (h - 1) as f64);
        let mut dgrid = sink.wants(ig).then(|| vec![T::zero(); n * ho * wo * 2]);
        let mut dimg = sink.wants(ii).then(|| vec![T::zero(); src.len()]);
        for b in 0..n {
            for o in 0..ho * wo {
                let at = (b * ho * wo + o) * 2;
                let cn = corners(gv.data()[at], gv.data()[at + 1], h, w);
                let i00 = inside(cn.y0, cn.x0, h, w);
                let i01 = inside(cn.y0, cn.x0 + 1, h, w);
                let i10 = inside(cn.y0 + 1, cn.x0, h, w);
                let i11 = inside(cn.y0 + 1, cn.x0 + 1, h, w);
                let (wx0, wx1) = (T::one() - cn.wx, cn.wx);
                let (wy0, wy1) = (T::one() - cn.wy, cn.wy);
                let mut dpx = T::zero();
                let mut dpy = T::zero();
                for c in 0..ch {
                    let base = (b * ch + c) * h * w;
                    let go = g[(b * ch + c) * ho * wo + o];
                    if go == T::zero() {
                        continue;
                    }
                    let val = |i: Option<usize>| i.map_or(T::zero(), |i| src[base + i]);
                    let (v00, v01, v10, v11) = (val(i00), val(i01), val(i10), val(i11));
                    dpx += go * (wy0 * (v01 - v00) + wy1 * (v11 - v10));
                    dpy += go * (wx0 * (v10 - v00) + wx1 * (v11 - v01));
                    if let Some(di) = dimg.as_deref_mut() {
                        for (idx, wt) in [(i00, wy0 * wx0), (i01, wy0 * wx1), (i10, wy1 * wx0), (i11, wy1 * wx1)] {
                            if let Some(i) = idx {
                                di[base + i] += go * wt;
                            }
                        }
                    }
                }
                if let Some(dg) = dgrid.as_deref_mut() {
                    dg[at] += dpx * sx;
                    dg[at + 1] += dpy * sy;
                }
            }
        }
        if let Some(d) = dimg {
            sink.add(ii, &d);
        }
        if let Some(d) = dgrid {
            sink.add(ig, &d);
        }
    }))
}

/// Same-size convolution of every channel of `img[N,C,H,W]` with the
/// sample's own kernel `k[N,s,s]` (`s` odd), zero padded:
/// `out[i][j] = sum k[a][b] * img[i + r - a][j + r - b]`, `r = s / 2`.
///
/// A delta one cell right of centre moves content one pixel right.
pub fn apply_kernel<'t, T: Real>(img: Var<'t, T>, kernel: Var<'t, T>) -> Result<Var<'t, T>> {
    let (iv, kv) = (img.value(), kernel.value());
    let (is, ks) = (iv.shape(), kv.shape());
    if is.len() != 4 || ks.len() != 3 || ks[0] != is[0] || ks[1] != ks[2] {
        return Err(Error::shape("apply_kernel", is, ks));
    }
    let size = ks[1];
    if size % 2 == 0 {
        return Err(Error::config(format!("transformation kernel size must be odd, got {size}")));
    }
    let (n, ch, h, w) = (is[0], is[1], is[2], is[3]);
    let mut out = vec![T::zero(); iv.numel()];
    let (src, kd) = (iv.data(), kv.data());
    for b in 0..n {
        conv_taps(b, size, ch, h, w, |si, ki, oi| out[oi] += kd[ki] * src[si]);
    }
    let (ii, ik) = (img.id(), kernel.id());
    Ok(img.tape().push(Tensor::new(is.to_vec(), out)?, &[ii, ik], move |g, sink| {
        let (src, kd) = (iv.data(), kv.data());
        if sink.wants(ik) {
            let mut dk = vec![T::zero(); kd.len()];
            for b in 0..n {
                conv_taps(b, size, ch, h, w, |si, ki, oi| dk[ki] += g[oi] * src[si]);
            }
            sink.add(ik, &dk);
        }
        if sink.wants(ii) {
            let di = sink.slot(ii);
            for b in 0..n {
                conv_taps(b, size, ch, h, w, |si, ki, oi| di[si] += g[oi] * kd[ki]);
            }
        }
    }))
}

/// Visits every valid (source, kernel, output) index triple of sample `b`.
#[inline]
fn conv_taps(b: usize, size: usize, ch: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    let r = (size / 2) as isize;
    for a in 0..size {
        let dy = r - a as isize;
        let i_lo = (-dy).max(0) as usize;
        let i_hi = (h as isize - dy).clamp(0, h as isize) as usize;
        for e in 0..size {
            let ki = (b * size + a) * size + e;
            let dx = r - e as isize;
            let j_lo = (-dx).max(0) as usize;
            let j_hi = (w as isize - dx).clamp(0, w as isize) as usize;
            for c in 0..ch {
                let base = (b * ch + c) * h * w;
                for i in i_lo..i_hi {
                    let srow = base + (i as isize + dy) as usize * w;
                    let orow = base + i * w;
                    for j in j_lo..j_hi {
                        f(srow + (j as isize + dx) as usize, ki, orow + j);
                    }
                }
            }
        }
    }
}
