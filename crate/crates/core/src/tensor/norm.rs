use std::rc::Rc;

use super::{split_axis, Mode, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { momentum: 0.9, eps: 1e-5 }
    }
}

/// Per-channel running mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Batch normalization over every axis except the channel axis 1.
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        stats: &mut RunningStats<T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::config(format!("batch_norm needs a channel axis, got {shape:?}")));
        }
        let (n, ch, inner) = split_axis(&shape, 1);
        if gamma.shape() != [ch] || beta.shape() != [ch] || stats.mean.len() != ch {
            return Err(Error::shape("batch_norm", &shape, &gamma.shape()));
        }
        let eps = T::lit(cfg.eps);
        let (gv, bv) = (gamma.value(), beta.value());
        let xd = x.data();
        let count = n * inner;

        let (mean, var) = match mode {
            Mode::Train { track_stats } => {
                if n < 2 {
                    return Err(Error::config("batch_norm in train mode needs a batch of at least 2"));
                }
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for c in 0..ch {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += xd[(b * ch + c) * inner..][..inner].iter().copied().sum();
                    }
                    mean[c] = s / T::lit(count as f64);
                    let mut v = T::zero();
                    for b in 0..n {
                        for x in &xd[(b * ch + c) * inner..][..inner] {
                            let d = *x - mean[c];
                            v += d * d;
                        }
                    }
                    var[c] = v / T::lit(count as f64);
                }
                if track_stats {
                    let m = T::lit(cfg.momentum);
                    for c in 0..ch {
                        stats.mean[c] = m * stats.mean[c] + (T::one() - m) * mean[c];
                        stats.var[c] = m * stats.var[c] + (T::one() - m) * var[c];
                    }
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };

        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..n {
            for c in 0..ch {
                let base = (b * ch + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = gv.data()[c] * xhat[i] + bv.data()[c];
                }
            }
        }

        let train = mode.is_train();
        let xhat = Rc::new(xhat);
        let (ix, ig, ib) = (self.id(), gamma.id(), beta.id());
        Ok(self.tape().push(Tensor::new(shape, out)?, &[ix, ig, ib], move |g, sink| {
            let mut dgamma = vec![T::zero(); ch];
            let mut dbeta = vec![T::zero(); ch];
            for b in 0..n {
                for c in 0..ch {
                    let base = (b * ch + c) * inner;
                    for i in base..base + inner {
                        dgamma[c] += g[i] * xhat[i];
                        dbeta[c] += g[i];
                    }
                }
            }
            if sink.wants(ix) {
                let dx = sink.slot(ix);
                let m = T::lit(count as f64);
                for c in 0..ch {
                    let gc = gv.data()[c];
                    // With batch statistics the mean and variance depend on x too.
                    let (sum_dxhat, sum_dxhat_xhat) = if train {
                        (gc * dbeta[c], gc * dgamma[c])
                    } else {
                        (T::zero(), T::zero())
                    };
                    for b in 0..n {
                        let base = (b * ch + c) * inner;
                        for i in base..base + inner {
                            let dxhat = g[i] * gc;
                            dx[i] += if train {
                                inv_std[c] / m * (m * dxhat - sum_dxhat - xhat[i] * sum_dxhat_xhat)
                            } else {
                                dxhat * inv_std[c]
                            };
                        }
                    }
                }
            }
            sink.add(ig, &dgamma);
            sink.add(ib, &dbeta);
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([4, 3, 5], |_| rng.gen_range(-3.0..7.0)));
        let g = tape.constant(Tensor::full([3], 1.0));
        let b = tape.constant(Tensor::zeros([3]));
        let mut stats = RunningStats::new(3);
        let y = x.batch_norm(g, b, &mut stats, Mode::TRAIN, BatchNormConfig::default()).unwrap().value();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.data()[(n * 3 + c) * 5..][..5].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        assert!(stats.mean.iter().any(|m| *m != 0.0));
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([2, 2, 3], |i| i as f64 * 0.1 - 0.4));
        let g = tape.constant(Tensor::full([2], 1.0));
        let b = tape.constant(Tensor::zeros([2]));
        let mut stats = RunningStats::new(2);
        let cfg = BatchNormConfig { momentum: 0.9, eps: 0.0 };
        let y = x.batch_norm(g, b, &mut stats, Mode::Eval, cfg).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn frozen_train_mode_leaves_stats() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([2, 1, 3], |i| i as f64));
        let g = tape.constant(Tensor::full([1], 1.0));
        let b = tape.constant(Tensor::zeros([1]));
        let mut stats = RunningStats::new(1);
        x.batch_norm(g, b, &mut stats, Mode::TRAIN_FROZEN, BatchNormConfig::default()).unwrap();
        assert_eq!(stats, RunningStats::new(1));
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 3]));
        let g = tape.constant(Tensor::full([2], 1.0));
        let b = tape.constant(Tensor::zeros([2]));
        let mut stats = RunningStats::new(2);
        let err = x.batch_norm(g, b, &mut stats, Mode::TRAIN, BatchNormConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(x.batch_norm(g, b, &mut stats, Mode::Eval, BatchNormConfig::default()).is_ok());
    }
}
