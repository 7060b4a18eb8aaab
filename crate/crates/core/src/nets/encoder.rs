use rand::Rng;

use super::layers::{batch_norm, linear, Builder};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Bound, Mode, NamedTensors, ParamStore, Real, Var};

/// Stride-2 4x4 convolutions down to 2x2, then a fully connected layer to
/// the condition code. The first convolution has a bias; the others are
/// batch normalized.
#[derive(Clone, Debug)]
pub struct EncoderNet<T: Real> {
    pub params: ParamStore<T>,
    pub buffers: NamedTensors<T>,
    channels: Vec<usize>,
    in_channels: usize,
    resolution: usize,
    cond_dim: usize,
    bn: BatchNormConfig,
}

network!(EncoderNet { channels, in_channels, resolution, cond_dim, bn });

impl<T: Real> EncoderNet<T> {
    pub(crate) fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder::new(cfg.init_std, rng);
        let mut prev = cfg.channels;
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            let l = i + 1;
            b.weight(&format!("conv{l}.w"), &[c, prev, 4, 4])?;
            if l == 1 {
                b.zeros("conv1.b", c)?;
            } else {
                b.batch_norm(&format!("bn{l}"), c)?;
            }
            prev = c;
        }
        b.linear("fc", prev * 4, cfg.cond_dim)?;
        Ok(EncoderNet {
            params: b.params,
            buffers: b.buffers,
            channels: cfg.encoder_channels.clone(),
            in_channels: cfg.channels,
            resolution: cfg.resolution,
            cond_dim: cfg.cond_dim,
            bn: cfg.batch_norm,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    /// `x[N,C,H,W] -> [N,cond_dim]`.
    pub fn forward<'t>(&mut self, p: &Bound<'t, T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::shape("encode", &s, &[0, self.in_channels, self.resolution, self.resolution]));
        }
        if s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::config(format!(
                "encoder is configured for {r}x{r} images, got {}x{}",
                s[2],
                s[3],
                r = self.resolution
            )));
        }
        let mut h = x;
        for l in 1..=self.channels.len() {
            h = h.conv2d(p.get(&format!("conv{l}.w"))?, 2, 1)?;
            h = if l == 1 {
                h.add_channel_bias(p.get("conv1.b")?)?
            } else {
                batch_norm(p, &mut self.buffers, &format!("bn{l}"), h, mode, self.bn)?
            };
            h = h.relu();
        }
        let flat = h.reshape(&[s[0], h.numel() / s[0]])?;
        linear(p, "fc", flat)
    }
}
