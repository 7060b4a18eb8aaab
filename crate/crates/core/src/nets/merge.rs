use rand::Rng;

use super::layers::{batch_norm, Builder};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Bound, ConvGeometry, Mode, NamedTensors, ParamStore, Real, Var};

/// Volumetric merge: two 3x3x3 convolutions over the intermediate stack
/// (transformation axis as depth), then a one-channel head whose softmax
/// over the stack axis gives per-pixel merge weights.
#[derive(Clone, Debug)]
pub struct MergeNet<T: Real> {
    pub params: ParamStore<T>,
    pub buffers: NamedTensors<T>,
    channels: usize,
    bn: BatchNormConfig,
}

network!(MergeNet { channels, bn });

/// Output of [`MergeNet::forward`].
pub struct Merged<'t, T: Real> {
    /// `[M,C,H,W]`.
    pub frames: Var<'t, T>,
    /// `[M,1,P,H,W]`, positive and summing to one over `P`.
    pub weights: Var<'t, T>,
}

impl<T: Real> MergeNet<T> {
    pub(crate) fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder::new(cfg.init_std, rng);
        let m = cfg.merge_channels;
        b.weight("conv1.w", &[m, cfg.channels, 3, 3, 3])?;
        b.batch_norm("bn1", m)?;
        b.weight("conv2.w", &[m, m, 3, 3, 3])?;
        b.batch_norm("bn2", m)?;
        b.weight("head.w", &[1, m, 3, 3, 3])?;
        b.zeros("head.b", 1)?;
        Ok(MergeNet {
            params: b.params,
            buffers: b.buffers,
            channels: cfg.channels,
            bn: cfg.batch_norm,
        })
    }

    /// `stack[M,C,P,H,W]` -> frames `[M,C,H,W]`.
    pub fn forward<'t>(&mut self, p: &Bound<'t, T>, stack: Var<'t, T>, mode: Mode) -> Result<Merged<'t, T>> {
        let s = stack.shape();
        if s.len() != 5 || s[1] != self.channels {
            return Err(Error::shape("merge", &s, &[0, self.channels, 0, 0, 0]));
        }
        let geom = ConvGeometry::new([1, 1, 1], [1, 1, 1]);
        let mut h = stack;
        for l in 1..=2 {
            h = h.conv3d(p.get(&format!("conv{l}.w"))?, geom)?;
            h = batch_norm(p, &mut self.buffers, &format!("bn{l}"), h, mode, self.bn)?.relu();
        }
        let logits = h.conv3d(p.get("head.w")?, geom)?.add_channel_bias(p.get("head.b")?)?;
        let weights = logits.softmax(2)?;
        let frames = stack.mul_channel_broadcast(weights)?.sum_axis(2)?;
        Ok(Merged { frames, weights })
    }
}
