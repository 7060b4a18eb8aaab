use rand::Rng;

use super::layers::{linear, Builder};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Bound, NamedTensors, ParamStore, Real, Tensor, Var};

/// Fully connected stack from `(cond, z)` to `T*P*K` raw transformation
/// parameters.
#[derive(Clone, Debug)]
pub struct GeneratorNet<T: Real> {
    pub params: ParamStore<T>,
    pub buffers: NamedTensors<T>,
    cond_dim: usize,
    z_dim: usize,
    layers: usize,
    outputs: usize,
}

network!(GeneratorNet { cond_dim, z_dim, layers, outputs });

impl<T: Real> GeneratorNet<T> {
    pub(crate) fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder::new(cfg.init_std, rng);
        let outputs = cfg.transform_outputs();
        let mut prev = cfg.cond_dim + cfg.z_dim;
        for (i, &w) in cfg.generator_hidden.iter().chain(std::iter::once(&outputs)).enumerate() {
            b.linear(&format!("fc{}", i + 1), prev, w)?;
            prev = w;
        }
        Ok(GeneratorNet {
            params: b.params,
            buffers: b.buffers,
            cond_dim: cfg.cond_dim,
            z_dim: cfg.z_dim,
            layers: cfg.generator_hidden.len() + 1,
            outputs,
        })
    }

    /// `T*P*K`.
    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub(crate) fn output_layer(&self) -> String {
        format!("fc{}", self.layers)
    }

    /// Overwrites the output layer so every sample yields `bias`.
    pub(crate) fn force_output(&mut self, bias: &[T]) -> Result<()> {
        let name = self.output_layer();
        let w = self.params.get_mut(&format!("{name}.w")).expect("output layer");
        w.data_mut().iter_mut().for_each(|v| *v = T::zero());
        let b = self.params.get_mut(&format!("{name}.b")).expect("output layer");
        if bias.len() != b.numel() {
            return Err(Error::shape("force_output", &[bias.len()], b.shape()));
        }
        b.data_mut().copy_from_slice(bias);
        Ok(())
    }

    /// `cond[N,cond_dim]`, `z[N,z_dim]` -> `[N,T*P*K]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, cond: Var<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let (cs, zs) = (cond.shape(), z.shape());
        if cs.len() != 2 || zs.len() != 2 || cs[0] != zs[0] || cs[1] != self.cond_dim || zs[1] != self.z_dim {
            return Err(Error::config(format!(
                "generator expects [N,{}] condition and [N,{}] latent, got {cs:?} and {zs:?}",
                self.cond_dim, self.z_dim
            )));
        }
        let mut h = Var::concat(&[cond, z], 1)?;
        for l in 1..=self.layers {
            h = linear(p, &format!("fc{l}"), h)?;
            if l < self.layers {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Standard normal latent codes `[n, dim]`.
pub fn sample_latent<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Tensor<T> {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn([n, dim], |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}
