use rand::Rng;

use super::layers::{batch_norm, Builder};
use super::{ModelConfig, VideoCritic};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Bound, ConvGeometry, Mode, NamedTensors, ParamStore, Real, Var};

/// Spatio-temporal convolutions over `[N,C,F,H,W]` clips. Layers with
/// channels from the config use (3,4,4) kernels with spatial stride 2; the
/// head is a (3,3,3) convolution to one channel averaged over the volume.
/// Only the inner layers are batch normalized and nothing squashes the
/// output.
#[derive(Clone, Debug)]
pub struct CriticNet<T: Real> {
    pub params: ParamStore<T>,
    pub buffers: NamedTensors<T>,
    layers: usize,
    in_channels: usize,
    clip_frames: usize,
    bn: BatchNormConfig,
}

network!(CriticNet { layers, in_channels, clip_frames, bn });

impl<T: Real> CriticNet<T> {
    pub(crate) fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder::new(cfg.init_std, rng);
        let mut prev = cfg.channels;
        for (i, &c) in cfg.critic_channels.iter().enumerate() {
            let l = i + 1;
            b.weight(&format!("conv{l}.w"), &[c, prev, 3, 4, 4])?;
            if l == 1 {
                b.zeros("conv1.b", c)?;
            } else {
                b.batch_norm(&format!("bn{l}"), c)?;
            }
            prev = c;
        }
        b.weight("head.w", &[1, prev, 3, 3, 3])?;
        b.zeros("head.b", 1)?;
        Ok(CriticNet {
            params: b.params,
            buffers: b.buffers,
            layers: cfg.critic_channels.len(),
            in_channels: cfg.channels,
            clip_frames: cfg.clip_frames(),
            bn: cfg.batch_norm,
        })
    }

    /// `clip[N,C,F,H,W] -> [N]`.
    pub fn forward<'t>(&mut self, p: &Bound<'t, T>, clip: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let s = clip.shape();
        if s.len() != 5 || s[1] != self.in_channels {
            return Err(Error::shape("criticize", &s, &[0, self.in_channels, self.clip_frames, 0, 0]));
        }
        if s[2] != self.clip_frames {
            return Err(Error::config(format!(
                "critic expects {}-frame clips, got {}",
                self.clip_frames, s[2]
            )));
        }
        let down = ConvGeometry::new([1, 2, 2], [1, 1, 1]);
        let mut h = clip;
        for l in 1..=self.layers {
            h = h.conv3d(p.get(&format!("conv{l}.w"))?, down)?;
            h = if l == 1 {
                h.add_channel_bias(p.get("conv1.b")?)?
            } else {
                batch_norm(p, &mut self.buffers, &format!("bn{l}"), h, mode, self.bn)?
            };
            h = h.relu();
        }
        let out = h
            .conv3d(p.get("head.w")?, ConvGeometry::new([1, 1, 1], [1, 1, 1]))?
            .add_channel_bias(p.get("head.b")?)?;
        out.reshape(&[s[0], out.numel() / s[0]])?.mean_axis(1)
    }
}

impl<T: Real> VideoCritic<T> for CriticNet<T> {
    fn score<'t>(&mut self, p: &Bound<'t, T>, clip: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        self.forward(p, clip, mode)
    }
}
