//! Image transformations produced by the generator, and their cumulative
//! application to an input image.
//!
//! Images are planar `[C,H,W]`; batched tape operations work on
//! `[N,C,H,W]`.

mod warp;

pub use warp::{affine_grid, apply_kernel, bilinear_sample};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const AFFINE_IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// 2x3 matrix `(a11,a12,a13,a21,a22,a23)` from normalized output
/// coordinates to normalized source coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams<T>(pub [T; 6]);

impl<T: Real> AffineParams<T> {
    pub fn identity() -> Self {
        AffineParams(AFFINE_IDENTITY.map(T::lit))
    }

    /// Pure translation of the sampling location by `(tx, ty)` normalized units.
    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineParams([1.0, 0.0, tx, 0.0, 1.0, ty].map(T::lit))
    }
}

/// Square convolution kernel of odd size, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams<T> {
    size: usize,
    weights: Vec<T>,
}

impl<T: Real> KernelParams<T> {
    pub fn new(size: usize, weights: Vec<T>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::config(format!("transformation kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::shape("KernelParams", &[weights.len()], &[size, size]));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invariant("kernel weights must be finite"));
        }
        Ok(KernelParams { size, weights })
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::delta(size, 0, 0)
    }

    /// Delta at `(dy, dx)` cells from the centre; translates content by
    /// `dy` rows down and `dx` columns right.
    pub fn delta(size: usize, dy: isize, dx: isize) -> Result<Self> {
        let r = (size / 2) as isize;
        if dy.abs() > r || dx.abs() > r {
            return Err(Error::config(format!("delta offset ({dy},{dx}) outside a {size}x{size} kernel")));
        }
        let mut w = vec![T::zero(); size * size];
        w[((r + dy) * size as isize + r + dx) as usize] = T::one();
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transformation<T> {
    Affine(AffineParams<T>),
    Kernel(KernelParams<T>),
}

impl<T: Real> Transformation<T> {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transformation::Affine(_) => TransformKind::Affine,
            Transformation::Kernel(k) => TransformKind::Kernel { size: k.size },
        }
    }

    fn params(&self) -> &[T] {
        match self {
            Transformation::Affine(a) => &a.0,
            Transformation::Kernel(k) => &k.weights,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Affine,
    Kernel { size: usize },
}

impl TransformKind {
    /// Parameters per transformation (`K`).
    pub fn param_count(self) -> usize {
        match self {
            TransformKind::Affine => 6,
            TransformKind::Kernel { size } => size * size,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            TransformKind::Kernel { size } if size % 2 == 0 => {
                Err(Error::config(format!("transformation kernel size must be odd, got {size}")))
            }
            _ => Ok(()),
        }
    }
}

/// How raw generator outputs become kernel weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelNorm {
    #[default]
    Raw,
    /// Weights are a softmax over the kernel cells (sum to one, non-negative).
    Softmax,
}

/// Ordered, homogeneous list of transformations for one output frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformationSequence<T> {
    items: Vec<Transformation<T>>,
}

impl<T: Real> TransformationSequence<T> {
    pub fn new(items: Vec<Transformation<T>>) -> Result<Self> {
        let kind = items
            .first()
            .ok_or_else(|| Error::config("a transformation sequence needs at least one element"))?
            .kind();
        if items.iter().any(|t| t.kind() != kind) {
            return Err(Error::config("transformation sequences must be homogeneous"));
        }
        Ok(TransformationSequence { items })
    }

    /// Splits a flat `[P*K]` parameter vector.
    pub fn from_flat(kind: TransformKind, p: usize, flat: &[T]) -> Result<Self> {
        kind.validate()?;
        let k = kind.param_count();
        if flat.len() != p * k {
            return Err(Error::shape("TransformationSequence::from_flat", &[flat.len()], &[p, k]));
        }
        let items = flat
            .chunks(k)
            .map(|c| match kind {
                TransformKind::Affine => Ok(Transformation::Affine(AffineParams(c.try_into().expect("k == 6")))),
                TransformKind::Kernel { size } => KernelParams::new(size, c.to_vec()).map(Transformation::Kernel),
            })
            .collect::<Result<_>>()?;
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn kind(&self) -> TransformKind {
        self.items[0].kind()
    }

    pub fn items(&self) -> &[Transformation<T>] {
        &self.items
    }

    fn flat(&self) -> Vec<T> {
        self.items.iter().flat_map(|t| t.params().iter().copied()).collect()
    }
}

/// One sequence per output frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformationGroup<T> {
    sequences: Vec<TransformationSequence<T>>,
}

impl<T: Real> TransformationGroup<T> {
    pub fn new(sequences: Vec<TransformationSequence<T>>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::config("a transformation group needs at least one sequence"))?;
        if sequences.iter().any(|s| s.kind() != first.kind() || s.len() != first.len()) {
            return Err(Error::config("group sequences must share length and transformation kind"));
        }
        Ok(TransformationGroup { sequences })
    }

    /// Splits a flat `[T*P*K]` generator output.
    pub fn from_flat(kind: TransformKind, t: usize, p: usize, flat: &[T]) -> Result<Self> {
        let per = p * kind.param_count();
        if flat.len() != t * per {
            return Err(Error::shape("TransformationGroup::from_flat", &[flat.len()], &[t, per]));
        }
        Self::new(
            flat.chunks(per)
                .map(|c| TransformationSequence::from_flat(kind, p, c))
                .collect::<Result<_>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[TransformationSequence<T>] {
        &self.sequences
    }
}

/// `P` intermediate images of one sequence, stored `[C,P,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediateStack<T> {
    pub images: Tensor<T>,
}

impl<T: Real> IntermediateStack<T> {
    pub fn depth(&self) -> usize {
        self.images.shape()[1]
    }

    /// Intermediate image `p` as `[C,H,W]`.
    pub fn image(&self, p: usize) -> Tensor<T> {
        let s = self.images.shape();
        let (c, np, hw) = (s[0], s[1], s[2] * s[3]);
        assert!(p < np, "image {p} of a stack of {np}");
        let mut out = Vec::with_capacity(c * hw);
        for ch in 0..c {
            out.extend_from_slice(&self.images.data()[(ch * np + p) * hw..][..hw]);
        }
        Tensor::new([c, s[2], s[3]], out).expect("sizes match")
    }
}

/// One transformation per sample: `img[N,C,H,W]`, `params[N,K]`.
pub fn apply_transform<'t, T: Real>(img: Var<'t, T>, params: Var<'t, T>, kind: TransformKind) -> Result<Var<'t, T>> {
    let s = img.shape();
    if s.len() != 4 || params.shape() != [s[0], kind.param_count()] {
        return Err(Error::shape("apply_transform", &s, &params.shape()));
    }
    match kind {
        TransformKind::Affine => bilinear_sample(img, affine_grid(params, s[2], s[3])?),
        TransformKind::Kernel { size } => apply_kernel(img, params.reshape(&[s[0], size, size])?),
    }
}

/// Cumulative application: `I[0] = phi_0(img)`, `I[p] = phi_p(I[p-1])`.
/// `img[N,C,H,W]`, `params[N,P,K]`, result `[N,C,P,H,W]`.
pub fn apply_sequence_batched<'t, T: Real>(
    img: Var<'t, T>,
    params: Var<'t, T>,
    kind: TransformKind,
) -> Result<Var<'t, T>> {
    let s = img.shape();
    let ps = params.shape();
    if s.len() != 4 || ps.len() != 3 || ps[0] != s[0] || ps[2] != kind.param_count() {
        return Err(Error::shape("apply_sequence", &s, &ps));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut cur = img;
    let mut stages = Vec::with_capacity(ps[1]);
    for p in 0..ps[1] {
        let phi = params.slice_axis(1, p, 1)?.reshape(&[n, ps[2]])?;
        cur = apply_transform(cur, phi, kind)?;
        stages.push(cur.reshape(&[n, c, 1, h, w])?);
    }
    Var::concat(&stages, 2)
}

/// Maps raw generator outputs `[M,6]` to `identity + 0.5 * tanh(raw)`.
pub fn affine_from_raw<'t, T: Real>(raw: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = raw.shape();
    if s.len() != 2 || s[1] != 6 {
        return Err(Error::shape("affine_from_raw", &s, &[s[0], 6]));
    }
    let ident = Tensor::from_fn(s.clone(), |i| T::lit(AFFINE_IDENTITY[i % 6]));
    raw.tanh().scale(0.5).add(raw.tape().constant(ident))
}

/// Maps raw generator outputs `[M,k*k]` to kernel weights `[M,k*k]`.
pub fn kernel_from_raw<'t, T: Real>(raw: Var<'t, T>, norm: KernelNorm) -> Result<Var<'t, T>> {
    match norm {
        KernelNorm::Raw => Ok(raw),
        KernelNorm::Softmax => raw.softmax(1),
    }
}

/// Applies one sequence to `img[C,H,W]`.
pub fn apply_sequence<T: Real>(img: &Tensor<T>, seq: &TransformationSequence<T>) -> Result<IntermediateStack<T>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::shape("apply_sequence", s, &[0, 0, 0]));
    }
    let tape = Tape::new();
    let x = tape.constant(img.clone().reshape([1, s[0], s[1], s[2]])?);
    let p = tape.constant(Tensor::new([1, seq.len(), seq.kind().param_count()], seq.flat())?);
    let out = apply_sequence_batched(x, p, seq.kind())?;
    Ok(IntermediateStack {
        images: out.to_tensor().reshape([s[0], seq.len(), s[1], s[2]])?,
    })
}

/// One stack per sequence of the group.
pub fn apply_group<T: Real>(img: &Tensor<T>, group: &TransformationGroup<T>) -> Result<Vec<IntermediateStack<T>>> {
    group.sequences().iter().map(|s| apply_sequence(img, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::warp::mesh;
    use super::*;
    use crate::tensor::gradcheck::{finite_diff_check, CheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(0.0..1.0))
    }

    /// `out[c][i][j] = img[c][i - dy][j - dx]`, zero outside.
    fn shift_oracle(img: &Tensor<f64>, dy: isize, dx: isize) -> Vec<f64> {
        let s = img.shape();
        let (c, h, w) = (s[0], s[1] as isize, s[2] as isize);
        let mut out = vec![0.0; img.numel()];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let (si, sj) = (i - dy, j - dx);
                    if (0..h).contains(&si) && (0..w).contains(&sj) {
                        out[ch * (h * w) as usize + (i * w + j) as usize] =
                            img.data()[ch * (h * w) as usize + (si * w + sj) as usize];
                    }
                }
            }
        }
        out
    }

    fn warp(img: &Tensor<f64>, t: Transformation<f64>) -> Tensor<f64> {
        let seq = TransformationSequence::new(vec![t]).unwrap();
        apply_sequence(img, &seq).unwrap().image(0)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_grid_is_the_mesh() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new([1, 6], AFFINE_IDENTITY.to_vec()).unwrap());
        let g = affine_grid(p, 3, 4).unwrap().to_tensor();
        assert_eq!(g.shape(), &[1, 3, 4, 2]);
        for i in 0..3 {
            for j in 0..4 {
                let at = (i * 4 + j) * 2;
                assert!((g.data()[at] - (-1.0 + 2.0 * j as f64 / 3.0)).abs() < 1e-15);
                assert!((g.data()[at + 1] - (-1.0 + i as f64)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn translated_grid_shifts_x_by_half() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new([1, 6], vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.0]).unwrap());
        let g = affine_grid(p, 3, 3).unwrap().to_tensor();
        let xs: Vec<f64> = g.data().iter().step_by(2).copied().collect();
        let ys: Vec<f64> = g.data().iter().skip(1).step_by(2).copied().collect();
        assert_eq!(xs, [-0.5, 0.5, 1.5, -0.5, 0.5, 1.5, -0.5, 0.5, 1.5]);
        assert_eq!(ys, [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn affine_grid_rejects_tiny_images() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new([1, 6], AFFINE_IDENTITY.to_vec()).unwrap());
        assert!(matches!(affine_grid(p, 1, 5), Err(Error::Config(_))));
    }

    #[test]
    fn identity_affine_reproduces_image() {
        let img = random(&[3, 7, 5], 1);
        let out = warp(&img, Transformation::Affine(AffineParams::identity()));
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn out_of_bounds_grid_samples_black() {
        let img = random(&[2, 6, 6], 2);
        let out = warp(&img, Transformation::Affine(AffineParams::translation(5.0, -4.0)));
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn integer_affine_translation_matches_array_shift() {
        let img = random(&[1, 8, 8], 3);
        for (dx, dy) in [(1isize, 0isize), (-2, 0), (0, 3), (2, -1)] {
            // Sampling d pixels to the right moves content d pixels left.
            let t = AffineParams::translation(2.0 * dx as f64 / 7.0, 2.0 * dy as f64 / 7.0);
            let out = warp(&img, Transformation::Affine(t));
            let expect = shift_oracle(&img, -dy, -dx);
            assert_eq!(out.data(), expect.as_slice(), "shift ({dx},{dy})");
        }
    }

    #[test]
    fn delta_kernels_translate() {
        let img = random(&[3, 6, 7], 4);
        let out = warp(&img, Transformation::Kernel(KernelParams::identity(9).unwrap()));
        assert_eq!(out.data(), img.data());
        let out = warp(&img, Transformation::Kernel(KernelParams::delta(3, 0, 1).unwrap()));
        assert_eq!(out.data(), shift_oracle(&img, 0, 1).as_slice());
        let out = warp(&img, Transformation::Kernel(KernelParams::delta(5, -2, 1).unwrap()));
        assert_eq!(out.data(), shift_oracle(&img, -2, 1).as_slice());
    }

    #[test]
    fn even_kernel_is_a_config_error() {
        assert!(matches!(KernelParams::<f64>::identity(4), Err(Error::Config(_))));
        let tape = Tape::<f64>::new();
        let img = tape.constant(Tensor::zeros([1, 1, 4, 4]));
        let k = tape.constant(Tensor::zeros([1, 2, 2]));
        assert!(matches!(apply_kernel(img, k), Err(Error::Config(_))));
        assert!(TransformKind::Kernel { size: 16 }.validate().is_err());
    }

    #[test]
    fn cumulative_kernel_shifts_add_up() {
        let img = random(&[1, 8, 8], 5);
        let right = Transformation::Kernel(KernelParams::delta(3, 0, 1).unwrap());
        let seq = TransformationSequence::new(vec![right.clone(), right]).unwrap();
        let stack = apply_sequence(&img, &seq).unwrap();
        assert_eq!(stack.depth(), 2);
        assert_eq!(stack.image(0).data(), shift_oracle(&img, 0, 1).as_slice());
        assert_eq!(stack.image(1).data(), shift_oracle(&img, 0, 2).as_slice());
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let img = random(&[1, 9, 9], 6);
        let quarter = Transformation::Affine(AffineParams([0.0, -1.0, 0.0, 1.0, 0.0, 0.0]));
        let seq = TransformationSequence::new(vec![quarter.clone(), quarter]).unwrap();
        let out = apply_sequence(&img, &seq).unwrap().image(1);
        for i in 1..8 {
            for j in 1..8 {
                let expect = img.data()[(8 - i) * 9 + (8 - j)];
                assert!((out.data()[i * 9 + j] - expect).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn identity_sequences_and_groups_copy_the_image() {
        let img = random(&[3, 5, 5], 7);
        let seq = TransformationSequence::from_flat(TransformKind::Affine, 5, &AFFINE_IDENTITY.repeat(5)).unwrap();
        let group = TransformationGroup::new(vec![seq; 4]).unwrap();
        let stacks = apply_group(&img, &group).unwrap();
        assert_eq!(stacks.len(), 4);
        for s in &stacks {
            for p in 0..5 {
                assert!(max_diff(s.image(p).data(), img.data()) <= 1e-12);
            }
        }
    }

    #[test]
    fn distinct_translations_give_distinct_stacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random(&[1, 10, 10], 9);
        for _ in 0..10 {
            let mut shifts: Vec<(isize, isize)> = Vec::new();
            while shifts.len() < 4 {
                let s = (rng.gen_range(-1..=1), rng.gen_range(-1..=1));
                if !shifts.contains(&s) {
                    shifts.push(s);
                }
            }
            let seqs = shifts
                .iter()
                .map(|&(dy, dx)| {
                    let k = Transformation::Kernel(KernelParams::delta(3, dy, dx).unwrap());
                    TransformationSequence::new(vec![k; 2]).unwrap()
                })
                .collect();
            let stacks = apply_group(&img, &TransformationGroup::new(seqs).unwrap()).unwrap();
            for a in 0..4 {
                for b in a + 1..4 {
                    assert!(max_diff(stacks[a].image(1).data(), stacks[b].image(1).data()) > 1e-3);
                }
            }
        }
    }

    #[test]
    fn group_shapes_are_validated() {
        let a = TransformationSequence::from_flat(TransformKind::Affine, 2, &AFFINE_IDENTITY.repeat(2)).unwrap();
        let b = TransformationSequence::from_flat(TransformKind::Affine, 3, &AFFINE_IDENTITY.repeat(3)).unwrap();
        assert!(TransformationGroup::new(vec![a.clone(), b]).is_err());
        let k = TransformationSequence::new(vec![Transformation::Kernel(KernelParams::<f64>::identity(3).unwrap()); 2]);
        assert!(TransformationGroup::new(vec![a.clone(), k.unwrap()]).is_err());
        let mixed = vec![
            a.items()[0].clone(),
            Transformation::Kernel(KernelParams::identity(3).unwrap()),
        ];
        assert!(TransformationSequence::new(mixed).is_err());
        assert!(TransformationGroup::<f64>::from_flat(TransformKind::Affine, 4, 5, &[0.0; 119]).is_err());
    }

    #[test]
    fn raw_parameterizations() {
        let tape = Tape::<f64>::new();
        let raw = tape.constant(Tensor::zeros([2, 6]));
        let p = affine_from_raw(raw).unwrap().to_tensor();
        assert_eq!(p.data(), AFFINE_IDENTITY.repeat(2).as_slice());
        let big = tape.constant(Tensor::full([1, 6], 1e3));
        let p = affine_from_raw(big).unwrap().to_tensor();
        assert!(p.data().iter().zip(AFFINE_IDENTITY).all(|(v, i)| (v - i - 0.5).abs() < 1e-12));
        let k = kernel_from_raw(tape.constant(random(&[3, 9], 1)), KernelNorm::Softmax).unwrap().to_tensor();
        for row in k.data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_grid_gradient() {
        let p = random(&[2, 6], 10);
        let r = finite_diff_check(|_, v| affine_grid(v[0], 4, 5), &[p], &CheckOptions::new(1e-5)).unwrap();
        assert!(r.pass, "{:?}", r.worst);
    }

    #[test]
    fn bilinear_gradient_wrt_image_and_grid() {
        let img = random(&[2, 2, 5, 6], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = Tensor::from_fn([2, 4, 3, 2], |_| rng.gen_range(-1.2..1.2));
        let r = finite_diff_check(|_, v| bilinear_sample(v[0], v[1]), &[img, grid], &CheckOptions::new(1e-4)).unwrap();
        assert!(r.pass, "{:?}", r.worst);
    }

    #[test]
    fn kernel_gradient_wrt_image_and_kernel() {
        let img = random(&[2, 3, 6, 5], 13);
        let k = random(&[2, 3, 3], 14);
        let r = finite_diff_check(|_, v| apply_kernel(v[0], v[1]), &[img, k], &CheckOptions::new(1e-4)).unwrap();
        assert!(r.pass, "{:?}", r.worst);
    }

    #[test]
    fn sequence_gradient_reaches_parameters() {
        let img = random(&[1, 1, 6, 6], 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let raw = Tensor::from_fn([3, 6], |_| rng.gen_range(-0.3..0.3));
        let r = finite_diff_check(
            |_, v| {
                let p = affine_from_raw(v[1])?.reshape(&[1, 3, 6])?;
                apply_sequence_batched(v[0], p, TransformKind::Affine)
            },
            &[img.clone(), raw.clone()],
            &CheckOptions::new(1e-4),
        )
        .unwrap();
        assert!(r.pass, "{:?}", r.worst);

        let tape = Tape::new();
        let x = tape.constant(img);
        let rv = tape.var(raw);
        let p = affine_from_raw(rv).unwrap().reshape(&[1, 3, 6]).unwrap();
        let loss = apply_sequence_batched(x, p, TransformKind::Affine).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(rv).unwrap().iter().any(|v| v.abs() > 1e-6));
    }

    proptest! {
        #[test]
        fn kernel_is_linear_in_the_image(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let x = random(&[2, 5, 6], seed);
            let y = random(&[2, 5, 6], seed + 1);
            let k = KernelParams::new(3, random(&[9], seed + 2).into_data()).unwrap();
            let t = Transformation::Kernel(k);
            let mix = Tensor::from_fn([2, 5, 6], |i| a * x.data()[i] + b * y.data()[i]);
            let lhs = warp(&mix, t.clone());
            let (fx, fy) = (warp(&x, t.clone()), warp(&y, t));
            let rhs: Vec<f64> = fx.data().iter().zip(fy.data()).map(|(p, q)| a * p + b * q).collect();
            prop_assert!(max_diff(lhs.data(), &rhs) <= 1e-5);
        }

        #[test]
        fn translation_kernels_compose(d1 in (-1isize..=1, -1isize..=1), d2 in (-1isize..=1, -1isize..=1), seed in 0u64..100) {
            let img = random(&[1, 9, 9], seed);
            let t1 = Transformation::Kernel(KernelParams::delta(3, d1.0, d1.1).unwrap());
            let t2 = Transformation::Kernel(KernelParams::delta(3, d2.0, d2.1).unwrap());
            let chained = apply_sequence(&img, &TransformationSequence::new(vec![t1, t2]).unwrap()).unwrap().image(1);
            let sum = warp(&img, Transformation::Kernel(KernelParams::delta(5, d1.0 + d2.0, d1.1 + d2.1).unwrap()));
            // Outside a 2-pixel border band the results agree exactly.
            for i in 2..7 {
                for j in 2..7 {
                    prop_assert_eq!(chained.data()[i * 9 + j], sum.data()[i * 9 + j]);
                }
            }
        }

        #[test]
        fn affine_warp_of_constant_is_constant_in_bounds(
            c in 0.0f64..1.0,
            a in proptest::array::uniform6(-0.4f64..0.4),
        ) {
            let img = Tensor::full([1, 7, 8], c);
            let p = AffineParams([1.0 + a[0], a[1], a[2], a[3], 1.0 + a[4], a[5]]);
            let out = warp(&img, Transformation::Affine(p));
            for i in 0..7 {
                for j in 0..8 {
                    let (x, y) = (mesh::<f64>(j, 8), mesh::<f64>(i, 7));
                    let gx = p.0[0] * x + p.0[1] * y + p.0[2];
                    let gy = p.0[3] * x + p.0[4] * y + p.0[5];
                    if gx.abs() <= 1.0 && gy.abs() <= 1.0 {
                        prop_assert!((out.data()[i * 8 + j] - c).abs() <= 1e-9);
                    }
                }
            }
        }
    }

}
