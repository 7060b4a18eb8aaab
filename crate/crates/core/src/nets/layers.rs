//! Parameter registration and forward helpers shared by the networks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    init_normal_truncated, BatchNormConfig, Bound, Mode, NamedTensors, ParamStore, Real, RunningStats, Tensor, Var,
};

pub(crate) struct Builder<'r, T: Real, R: Rng> {
    pub params: ParamStore<T>,
    pub buffers: NamedTensors<T>,
    pub std: f64,
    pub rng: &'r mut R,
}

impl<'r, T: Real, R: Rng> Builder<'r, T, R> {
    pub fn new(std: f64, rng: &'r mut R) -> Self {
        Builder {
            params: ParamStore::new(),
            buffers: NamedTensors::new(),
            std,
            rng,
        }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let t = init_normal_truncated(shape, self.std, self.rng);
        self.params.insert(name, t)
    }

    pub fn zeros(&mut self, name: &str, len: usize) -> Result<()> {
        self.params.insert(name, Tensor::zeros([len]))
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<()> {
        self.weight(&format!("{name}.w"), &[inputs, outputs])?;
        self.zeros(&format!("{name}.b"), outputs)
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<()> {
        self.params.insert(format!("{name}.gamma"), Tensor::full([channels], T::one()))?;
        self.zeros(&format!("{name}.beta"), channels)?;
        self.buffers.insert(format!("{name}.mean"), Tensor::zeros([channels]))?;
        self.buffers.insert(format!("{name}.var"), Tensor::full([channels], T::one()))
    }
}

/// `x[N,in] @ w + b`.
pub(crate) fn linear<'t, T: Real>(p: &Bound<'t, T>, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.matmul(p.get(&format!("{name}.w"))?)?
        .add_channel_bias(p.get(&format!("{name}.b"))?)
}

/// Batch norm whose running statistics live in `buffers`.
pub(crate) fn batch_norm<'t, T: Real>(
    p: &Bound<'t, T>,
    buffers: &mut NamedTensors<T>,
    name: &str,
    x: Var<'t, T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<Var<'t, T>> {
    let (mk, vk) = (format!("{name}.mean"), format!("{name}.var"));
    let missing = || Error::config(format!("missing running statistics for {name}"));
    let mut stats = RunningStats {
        mean: buffers.get(&mk).ok_or_else(missing)?.data().to_vec(),
        var: buffers.get(&vk).ok_or_else(missing)?.data().to_vec(),
    };
    let y = x.batch_norm(
        p.get(&format!("{name}.gamma"))?,
        p.get(&format!("{name}.beta"))?,
        &mut stats,
        mode,
        cfg,
    )?;
    if mode == Mode::TRAIN {
        buffers.get_mut(&mk).expect("checked").data_mut().copy_from_slice(&stats.mean);
        buffers.get_mut(&vk).expect("checked").data_mut().copy_from_slice(&stats.var);
    }
    Ok(y)
}
