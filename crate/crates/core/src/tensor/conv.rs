//! Volumetric and planar cross-correlation.
//!
//! Both paths compute the same function: `Direct` is a plain loop nest, and
//! `Im2Col` unfolds each sample into a patch matrix and runs one GEMM.

use std::rc::Rc;

use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    Direct,
    #[default]
    Im2Col,
}

/// Stride and zero padding per (depth, height, width) axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], pad: [usize; 3]) -> Self {
        ConvGeometry { stride, pad }
    }

    pub fn planar(stride: usize, pad: usize) -> Self {
        ConvGeometry {
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        }
    }

    fn out_extent(&self, input: [usize; 3], kernel: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let span = input[i] + 2 * self.pad[i];
            if self.stride[i] == 0 || span < kernel[i] || (span - kernel[i]) % self.stride[i] != 0 {
                return Err(Error::config(format!(
                    "convolution output size is not integral: input {input:?}, kernel {kernel:?}, stride {:?}, pad {:?}",
                    self.stride, self.pad
                )));
            }
            out[i] = (span - kernel[i]) / self.stride[i] + 1;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    f: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    out: [usize; 3],
    geom: ConvGeometry,
}

impl Dims {
    fn in_size(&self) -> usize {
        self.c * self.input.iter().product::<usize>()
    }

    fn patch(&self) -> usize {
        self.c * self.kernel.iter().product::<usize>()
    }

    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    /// Input offset (within one sample) feeding output position `o` through
    /// kernel tap `k`, or `None` when it falls into the padding.
    #[inline]
    fn source(&self, c: usize, k: [usize; 3], o: [usize; 3]) -> Option<usize> {
        let mut idx = c;
        for i in 0..3 {
            let p = (o[i] * self.geom.stride[i] + k[i]) as isize - self.geom.pad[i] as isize;
            if p < 0 || p as usize >= self.input[i] {
                return None;
            }
            idx = idx * self.input[i] + p as usize;
        }
        Some(idx)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let l = self.out_len();
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.out;
        let mut row = 0;
        for c in 0..self.c {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let dst = &mut cols[row * l..][..l];
                        let mut col = 0;
                        for z in 0..od {
                            for y in 0..oh {
                                for xo in 0..ow {
                                    dst[col] = match self.source(c, [a, b, e], [z, y, xo]) {
                                        Some(i) => x[i],
                                        None => T::zero(),
                                    };
                                    col += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let l = self.out_len();
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.out;
        let mut row = 0;
        for c in 0..self.c {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let src = &cols[row * l..][..l];
                        let mut col = 0;
                        for z in 0..od {
                            for y in 0..oh {
                                for xo in 0..ow {
                                    if let Some(i) = self.source(c, [a, b, e], [z, y, xo]) {
                                        dx[i] += src[col];
                                    }
                                    col += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

fn forward_im2col<T: Real>(d: &Dims, x: &[T], k: &[T]) -> Vec<T> {
    let (l, p) = (d.out_len(), d.patch());
    let mut out = vec![T::zero(); d.n * d.f * l];
    let mut cols = vec![T::zero(); p * l];
    for n in 0..d.n {
        d.im2col(&x[n * d.in_size()..][..d.in_size()], &mut cols);
        T::gemm(d.f, p, l, k, p as isize, 1, &cols, l as isize, 1, T::zero(), &mut out[n * d.f * l..][..d.f * l]);
    }
    out
}

fn backward_im2col<T: Real>(d: &Dims, x: &[T], k: &[T], g: &[T], mut dx: Option<&mut [T]>, mut dk: Option<&mut [T]>) {
    let (l, p) = (d.out_len(), d.patch());
    let mut cols = vec![T::zero(); p * l];
    let mut dcols = vec![T::zero(); p * l];
    for n in 0..d.n {
        let gn = &g[n * d.f * l..][..d.f * l];
        if let Some(dk) = dk.as_deref_mut() {
            d.im2col(&x[n * d.in_size()..][..d.in_size()], &mut cols);
            T::gemm(d.f, l, p, gn, l as isize, 1, &cols, 1, l as isize, T::one(), dk);
        }
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(p, d.f, l, k, 1, p as isize, gn, l as isize, 1, T::zero(), &mut dcols);
            d.col2im(&dcols, &mut dx[n * d.in_size()..][..d.in_size()]);
        }
    }
}

/// Visits every (sample, filter, channel, tap, output) combination with the
/// flat indices of the input, kernel and output element involved.
fn direct_visit(d: &Dims, mut f: impl FnMut(usize, usize, usize)) {
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.out;
    let l = d.out_len();
    for n in 0..d.n {
        for fi in 0..d.f {
            for c in 0..d.c {
                for a in 0..kd {
                    for b in 0..kh {
                        for e in 0..kw {
                            let ki = (((fi * d.c + c) * kd + a) * kh + b) * kw + e;
                            for z in 0..od {
                                for y in 0..oh {
                                    for xo in 0..ow {
                                        if let Some(xi) = d.source(c, [a, b, e], [z, y, xo]) {
                                            let oi = (n * d.f + fi) * l + (z * oh + y) * ow + xo;
                                            f(n * d.in_size() + xi, ki, oi);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// `x[N,C,D,H,W] * k[F,C,kd,kh,kw] -> [N,F,D',H',W']`.
    pub fn conv3d(self, kernel: Var<'t, T>, geom: ConvGeometry) -> Result<Var<'t, T>> {
        self.conv3d_with(kernel, geom, ConvAlgo::default())
    }

    pub fn conv3d_with(self, kernel: Var<'t, T>, geom: ConvGeometry, algo: ConvAlgo) -> Result<Var<'t, T>> {
        let (x, k) = (self.value(), kernel.value());
        let (xs, ks) = (x.shape(), k.shape());
        if xs.len() != 5 || ks.len() != 5 || xs[1] != ks[1] {
            return Err(Error::shape("conv3d", xs, ks));
        }
        let input = [xs[2], xs[3], xs[4]];
        let ksz = [ks[2], ks[3], ks[4]];
        let d = Dims {
            n: xs[0],
            c: xs[1],
            f: ks[0],
            input,
            kernel: ksz,
            out: geom.out_extent(input, ksz)?,
            geom,
        };
        let out = match algo {
            ConvAlgo::Im2Col => forward_im2col(&d, x.data(), k.data()),
            ConvAlgo::Direct => {
                let mut out = vec![T::zero(); d.n * d.f * d.out_len()];
                let (xd, kd) = (x.data(), k.data());
                direct_visit(&d, |xi, ki, oi| out[oi] += xd[xi] * kd[ki]);
                out
            }
        };
        let shape = vec![d.n, d.f, d.out[0], d.out[1], d.out[2]];
        let (ix, ik) = (self.id(), kernel.id());
        let (x, k): (Rc<Tensor<T>>, Rc<Tensor<T>>) = (x, k);
        Ok(self.tape().push(Tensor::new(shape, out)?, &[ix, ik], move |g, sink| {
            let mut dk = sink.wants(ik).then(|| vec![T::zero(); k.numel()]);
            match algo {
                ConvAlgo::Im2Col => {
                    let dx = if sink.wants(ix) { Some(sink.slot(ix)) } else { None };
                    backward_im2col(&d, x.data(), k.data(), g, dx, dk.as_deref_mut());
                }
                ConvAlgo::Direct => {
                    let (xd, kd) = (x.data(), k.data());
                    if let Some(dk) = dk.as_deref_mut() {
                        direct_visit(&d, |xi, ki, oi| dk[ki] += g[oi] * xd[xi]);
                    }
                    if sink.wants(ix) {
                        let dx = sink.slot(ix);
                        direct_visit(&d, |xi, ki, oi| dx[xi] += g[oi] * kd[ki]);
                    }
                }
            }
            if let Some(dk) = dk {
                sink.add(ik, &dk);
            }
        }))
    }

    /// `x[N,C,H,W] * k[F,C,kh,kw] -> [N,F,H',W']`.
    pub fn conv2d(self, kernel: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.conv2d_with(kernel, stride, pad, ConvAlgo::default())
    }

    pub fn conv2d_with(self, kernel: Var<'t, T>, stride: usize, pad: usize, algo: ConvAlgo) -> Result<Var<'t, T>> {
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        let x5 = self.reshape(&[xs[0], xs[1], 1, xs[2], xs[3]])?;
        let k5 = kernel.reshape(&[ks[0], ks[1], 1, ks[2], ks[3]])?;
        let y = x5.conv3d_with(k5, ConvGeometry::planar(stride, pad), algo)?;
        let ys = y.shape();
        y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
    }
}
