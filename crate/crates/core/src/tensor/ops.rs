//! Differentiable primitives recorded on the tape.

use std::rc::Rc;

use super::{split_axis, strides, Real, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = rhs.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, T::zero(), &mut out);
        let value = Tensor::new([m, n], out)?;
        let (ia, ib) = (self.id(), rhs.id());
        Ok(self.tape().push(value, &[ia, ib], move |g, sink| {
            if sink.wants(ia) {
                // dA = dC * B^T
                T::gemm(m, n, k, g, n as isize, 1, b.data(), 1, n as isize, T::one(), sink.slot(ia));
            }
            if sink.wants(ib) {
                // dB = A^T * dC
                T::gemm(k, m, n, a.data(), 1, k as isize, g, n as isize, 1, T::one(), sink.slot(ib));
            }
        }))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("add", a.shape(), b.shape())?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
        let (ia, ib) = (self.id(), rhs.id());
        Ok(self.tape().push(Tensor::new(a.shape(), data)?, &[ia, ib], move |g, sink| {
            sink.add(ia, g);
            sink.add(ib, g);
        }))
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.add(rhs.scale(-1.0))
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        same_shape("mul", a.shape(), b.shape())?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
        let (ia, ib) = (self.id(), rhs.id());
        Ok(self.tape().push(Tensor::new(a.shape(), data)?, &[ia, ib], move |g, sink| {
            if sink.wants(ia) {
                let s = sink.slot(ia);
                for ((s, g), y) in s.iter_mut().zip(g).zip(b.data()) {
                    *s += *g * *y;
                }
            }
            if sink.wants(ib) {
                let s = sink.slot(ib);
                for ((s, g), x) in s.iter_mut().zip(g).zip(a.data()) {
                    *s += *g * *x;
                }
            }
        }))
    }

    pub fn scale(self, factor: f64) -> Var<'t, T> {
        let a = self.value();
        let f = T::lit(factor);
        let data = a.data().iter().map(|x| *x * f).collect();
        let ia = self.id();
        self.tape().push(Tensor::new(a.shape(), data).unwrap(), &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for (s, g) in s.iter_mut().zip(g) {
                *s += *g * f;
            }
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let a = self.value();
        let c = T::lit(c);
        let data = a.data().iter().map(|x| *x + c).collect();
        let ia = self.id();
        self.tape()
            .push(Tensor::new(a.shape(), data).unwrap(), &[ia], move |g, sink| sink.add(ia, g))
    }

    /// Gradient passes where the input is strictly positive.
    pub fn relu(self) -> Var<'t, T> {
        let a = self.value();
        let data = a.data().iter().map(|x| x.max(T::zero())).collect();
        let ia = self.id();
        self.tape().push(Tensor::new(a.shape(), data).unwrap(), &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for ((s, g), x) in s.iter_mut().zip(g).zip(a.data()) {
                if *x > T::zero() {
                    *s += *g;
                }
            }
        })
    }

    pub fn tanh(self) -> Var<'t, T> {
        let a = self.value();
        let out: Rc<Vec<T>> = Rc::new(a.data().iter().map(|x| x.tanh()).collect());
        let ia = self.id();
        let y = Rc::clone(&out);
        self.tape()
            .push(Tensor::new(a.shape(), out.to_vec()).unwrap(), &[ia], move |g, sink| {
                let s = sink.slot(ia);
                for ((s, g), y) in s.iter_mut().zip(g).zip(y.iter()) {
                    *s += *g * (T::one() - *y * *y);
                }
            })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t, T> {
        let a = self.value();
        let total = a.data().iter().copied().sum();
        let ia = self.id();
        self.tape().push(Tensor::scalar(total), &[ia], move |g, sink| {
            let g0 = g[0];
            sink.slot(ia).iter_mut().for_each(|s| *s += g0);
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`; a rank-1 input collapses to shape `[1]`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::config(format!("sum_axis: axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a.data()[(o * len + l) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let ia = self.id();
        Ok(self.tape().push(Tensor::new(out_shape, out)?, &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for o in 0..outer {
                for l in 0..len {
                    let dst = &mut s[(o * len + l) * inner..][..inner];
                    for (d, g) in dst.iter_mut().zip(&g[o * inner..][..inner]) {
                        *d += *g;
                    }
                }
            }
        }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::config(format!("mean_axis: axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let value = (*a).clone().reshape(shape.to_vec())?;
        let ia = self.id();
        Ok(self.tape().push(value, &[ia], move |g, sink| sink.add(ia, g)))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::config(format!("permute: {axes:?} is not a permutation of {} axes", shape.len())));
        }
        let in_strides = strides(shape);
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let out_strides = strides(&out_shape);
        let numel = a.numel();
        let src: Rc<Vec<usize>> = Rc::new(
            (0..numel)
                .map(|flat| {
                    let mut rem = flat;
                    let mut idx = 0;
                    for (d, &ax) in axes.iter().enumerate() {
                        let c = rem / out_strides[d];
                        rem %= out_strides[d];
                        idx += c * in_strides[ax];
                    }
                    idx
                })
                .collect(),
        );
        let data = src.iter().map(|&i| a.data()[i]).collect();
        let ia = self.id();
        Ok(self.tape().push(Tensor::new(out_shape, data)?, &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for (g, &i) in g.iter().zip(src.iter()) {
                s[i] += *g;
            }
        }))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::config(format!("slice_axis: [{start}, {}) along axis {axis} of {shape:?}", start + len)));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&a.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ia = self.id();
        Ok(self.tape().push(Tensor::new(out_shape, out)?, &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for o in 0..outer {
                let dst = &mut s[(o * full + start) * inner..][..len * inner];
                for (d, g) in dst.iter_mut().zip(&g[o * len * inner..][..len * inner]) {
                    *d += *g;
                }
            }
        }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::config("concat of zero tensors"))?;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::config(format!("concat: axis {axis} out of range for {base:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (x, y))| d != axis && x != y) {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..][..l * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let parents = ids.clone();
        Ok(first.tape().push(Tensor::new(out_shape, out)?, &parents, move |g, sink| {
            let mut offset = 0;
            for (&id, &l) in ids.iter().zip(&lens) {
                if sink.wants(id) {
                    let s = sink.slot(id);
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..][..l * inner];
                        for (d, g) in s[o * l * inner..][..l * inner].iter_mut().zip(src) {
                            *d += *g;
                        }
                    }
                }
                offset += l;
            }
        }))
    }

    /// Repeats each leading-axis entry `times` times: row `n*times + t` is row `n`.
    pub fn repeat_rows(self, times: usize) -> Result<Var<'t, T>> {
        if times == 0 {
            return Err(Error::config("repeat_rows: times must be positive"));
        }
        let a = self.value();
        let mut shape = a.shape().to_vec();
        let rows = shape[0];
        let row = a.numel() / rows;
        let mut out = Vec::with_capacity(a.numel() * times);
        for r in 0..rows {
            for _ in 0..times {
                out.extend_from_slice(&a.data()[r * row..][..row]);
            }
        }
        shape[0] = rows * times;
        let ia = self.id();
        Ok(self.tape().push(Tensor::new(shape, out)?, &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for r in 0..rows {
                for t in 0..times {
                    let src = &g[(r * times + t) * row..][..row];
                    for (d, g) in s[r * row..][..row].iter_mut().zip(src) {
                        *d += *g;
                    }
                }
            }
        }))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1).
    pub fn add_channel_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), bias.value());
        let shape = a.shape().to_vec();
        if shape.len() < 2 || b.shape() != [shape[1]] {
            return Err(Error::shape("add_channel_bias", &shape, b.shape()));
        }
        let (outer, ch, inner) = split_axis(&shape, 1);
        let mut out = a.data().to_vec();
        for o in 0..outer {
            for c in 0..ch {
                let bc = b.data()[c];
                out[(o * ch + c) * inner..][..inner].iter_mut().for_each(|v| *v += bc);
            }
        }
        let (ia, ib) = (self.id(), bias.id());
        Ok(self.tape().push(Tensor::new(shape, out)?, &[ia, ib], move |g, sink| {
            sink.add(ia, g);
            if sink.wants(ib) {
                let s = sink.slot(ib);
                for o in 0..outer {
                    for (c, s) in s.iter_mut().enumerate() {
                        *s += g[(o * ch + c) * inner..][..inner].iter().copied().sum();
                    }
                }
            }
        }))
    }

    /// `x[N,C,...] * w[N,1,...]`, broadcasting `w` over channels.
    pub fn mul_channel_broadcast(self, w: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, wv) = (self.value(), w.value());
        let xs = x.shape().to_vec();
        let ws = wv.shape();
        if xs.len() < 2 || ws.len() != xs.len() || ws[1] != 1 || ws[0] != xs[0] || ws[2..] != xs[2..] {
            return Err(Error::shape("mul_channel_broadcast", &xs, ws));
        }
        let (n, ch, inner) = split_axis(&xs, 1);
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..n {
            let wrow = &wv.data()[b * inner..][..inner];
            for c in 0..ch {
                let base = (b * ch + c) * inner;
                for ((o, xv), wv) in out[base..][..inner].iter_mut().zip(&x.data()[base..][..inner]).zip(wrow) {
                    *o = *xv * *wv;
                }
            }
        }
        let (ix, iw) = (self.id(), w.id());
        Ok(self.tape().push(Tensor::new(xs, out)?, &[ix, iw], move |g, sink| {
            if sink.wants(ix) {
                let s = sink.slot(ix);
                for b in 0..n {
                    let wrow = &wv.data()[b * inner..][..inner];
                    for c in 0..ch {
                        let base = (b * ch + c) * inner;
                        for ((s, g), w) in s[base..][..inner].iter_mut().zip(&g[base..][..inner]).zip(wrow) {
                            *s += *g * *w;
                        }
                    }
                }
            }
            if sink.wants(iw) {
                let s = sink.slot(iw);
                for b in 0..n {
                    for c in 0..ch {
                        let base = (b * ch + c) * inner;
                        for ((s, g), xv) in s[b * inner..][..inner].iter_mut().zip(&g[base..][..inner]).zip(&x.data()[base..][..inner]) {
                            *s += *g * *xv;
                        }
                    }
                }
            }
        }))
    }

    /// Softmax along `axis`, using max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::config(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = vec![T::zero(); a.numel()];
        let x = a.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).fold(T::neg_infinity(), |m, l| m.max(x[at(l)]));
                let mut z = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - max).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        let y = Rc::new(out.clone());
        let ia = self.id();
        Ok(self.tape().push(Tensor::new(shape, out)?, &[ia], move |g, sink| {
            let s = sink.slot(ia);
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let dot: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                    for l in 0..len {
                        s[at(l)] += y[at(l)] * (g[at(l)] - dot);
                    }
                }
            }
        }))
    }
}
