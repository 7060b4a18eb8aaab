//! Encoder, transformation generator, volumetric merge network and video
//! critic, plus the sampling path that chains them.
//!
//! Clips are `[N,C,F,H,W]` where frame 0 is the conditioning image and the
//! remaining `T` frames are generated.

macro_rules! network {
    ($ty:ident { $($field:ident),* }) => {
        impl<T: crate::tensor::Real> $ty<T> {
            pub fn cast<U: crate::tensor::Real>(&self) -> $ty<U> {
                $ty {
                    params: self.params.cast(),
                    buffers: self.buffers.cast(),
                    $($field: self.$field.clone()),*
                }
            }
        }

        impl<T: crate::tensor::Real> crate::nets::Network<T> for $ty<T> {
            fn params(&self) -> &crate::tensor::ParamStore<T> {
                &self.params
            }

            fn params_mut(&mut self) -> &mut crate::tensor::ParamStore<T> {
                &mut self.params
            }

            fn buffers(&self) -> &crate::tensor::NamedTensors<T> {
                &self.buffers
            }

            fn buffers_mut(&mut self) -> &mut crate::tensor::NamedTensors<T> {
                &mut self.buffers
            }
        }
    };
}

mod critic;
mod encoder;
mod generator;
mod layers;
mod merge;

pub use critic::CriticNet;
pub use encoder::EncoderNet;
pub use generator::{sample_latent, GeneratorNet};
pub use merge::{MergeNet, Merged};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_to_clips, VideoClip};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Bound, Mode, NamedTensors, ParamStore, Real, Tape, Tensor, Var};
use crate::transform::{affine_from_raw, apply_sequence_batched, kernel_from_raw, KernelNorm, TransformKind};

/// A set of named parameters and running statistics.
pub trait Network<T: Real> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn buffers(&self) -> &NamedTensors<T>;
    fn buffers_mut(&mut self) -> &mut NamedTensors<T>;
}

/// Anything that scores `[N,C,F,H,W]` clips with one real per clip.
pub trait VideoCritic<T: Real>: Network<T> {
    fn score<'t>(&mut self, p: &Bound<'t, T>, clip: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>>;
}

/// Architecture of the four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square frame size; must equal `2^(encoder layers + 1)`.
    pub resolution: usize,
    pub channels: usize,
    pub transform: TransformKind,
    pub kernel_norm: KernelNorm,
    /// Generated frames per clip (`T`).
    pub frames: usize,
    /// Transformations per sequence (`P`).
    pub depth: usize,
    pub cond_dim: usize,
    pub z_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub merge_channels: usize,
    pub critic_channels: Vec<usize>,
    pub init_std: f64,
    pub batch_norm: BatchNormConfig,
}

impl ModelConfig {
    /// Default widths for a square `resolution` that is a power of two.
    pub fn new(resolution: usize, channels: usize, transform: TransformKind) -> Result<Self> {
        let layers = encoder_layers(resolution)?;
        let cfg = ModelConfig {
            resolution,
            channels,
            transform,
            kernel_norm: KernelNorm::Raw,
            frames: 4,
            depth: 5,
            cond_dim: 512,
            z_dim: 100,
            encoder_channels: (0..layers).map(|i| (32usize << i).min(512)).collect(),
            generator_hidden: vec![1024; 3],
            merge_channels: 8,
            critic_channels: vec![32, 64, 128, 256],
            init_std: 0.02,
            batch_norm: BatchNormConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Narrow networks with the default layer structure, for fast runs.
    pub fn miniature(resolution: usize, channels: usize, transform: TransformKind) -> Result<Self> {
        let mut cfg = Self::new(resolution, channels, transform)?;
        cfg.encoder_channels = (0..cfg.encoder_channels.len()).map(|i| (4usize << i).min(16)).collect();
        cfg.cond_dim = 16;
        cfg.z_dim = 8;
        cfg.generator_hidden = vec![32; 3];
        cfg.merge_channels = 4;
        cfg.critic_channels = vec![4, 8, 8, 8];
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !matches!(self.channels, 1 | 3) {
            return bad(format!("images must have 1 or 3 channels, got {}", self.channels));
        }
        if encoder_layers(self.resolution)? != self.encoder_channels.len() {
            return bad(format!(
                "{} encoder layers do not reduce {r}x{r} to 2x2",
                self.encoder_channels.len(),
                r = self.resolution
            ));
        }
        if self.critic_channels.is_empty() || self.resolution % (1 << self.critic_channels.len()) != 0 {
            return bad(format!(
                "resolution {} is not divisible by the critic's downsampling {}",
                self.resolution,
                1usize << self.critic_channels.len()
            ));
        }
        let widths = [self.frames, self.depth, self.cond_dim, self.z_dim, self.merge_channels];
        if widths.contains(&0)
            || self.generator_hidden.contains(&0)
            || self.encoder_channels.contains(&0)
            || self.critic_channels.contains(&0)
        {
            return bad("layer widths and counts must be positive".into());
        }
        if !(self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        self.transform.validate()
    }

    /// `T*P*K`.
    pub fn transform_outputs(&self) -> usize {
        self.frames * self.depth * self.transform.param_count()
    }

    /// `T + 1`.
    pub fn clip_frames(&self) -> usize {
        self.frames + 1
    }
}

fn encoder_layers(resolution: usize) -> Result<usize> {
    if resolution < 8 || !resolution.is_power_of_two() {
        return Err(Error::config(format!(
            "unsupported resolution {resolution}: must be a power of two, at least 8"
        )));
    }
    Ok(resolution.trailing_zeros() as usize - 1)
}

/// Number of clips and seed for [`Model::imagine`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleConfig {
    pub m: usize,
    pub seed: u64,
}

/// Generator-side parameters recorded on one tape.
pub struct GeneratorBounds<'t, T: Real> {
    pub encoder: Bound<'t, T>,
    pub generator: Bound<'t, T>,
    pub merge: Bound<'t, T>,
}

/// Intermediate values of one synthesis pass.
pub struct Synthesis<'t, T: Real> {
    /// `[N,C,T+1,H,W]` with the input as frame 0.
    pub clip: Var<'t, T>,
    /// `[N*T,P,K]` transformation parameters.
    pub transforms: Var<'t, T>,
    /// `[N*T,C,P,H,W]`.
    pub stack: Var<'t, T>,
    /// `[N*T,1,P,H,W]`.
    pub weights: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub encoder: EncoderNet<T>,
    pub generator: GeneratorNet<T>,
    pub merge: MergeNet<T>,
    pub critic: CriticNet<T>,
}

impl<T: Real> Model<T> {
    /// Truncated-normal weights, zero biases, unit batch-norm scales.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Model {
            encoder: EncoderNet::new(&config, &mut rng)?,
            generator: GeneratorNet::new(&config, &mut rng)?,
            merge: MergeNet::new(&config, &mut rng)?,
            critic: CriticNet::new(&config, &mut rng)?,
            config,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            generator: self.generator.cast(),
            merge: self.merge.cast(),
            critic: self.critic.cast(),
        }
    }

    /// `(prefix, network)` pairs in a fixed order.
    pub fn networks(&self) -> [(&'static str, &dyn Network<T>); 4] {
        [
            ("encoder", &self.encoder),
            ("generator", &self.generator),
            ("merge", &self.merge),
            ("critic", &self.critic),
        ]
    }

    pub fn networks_mut(&mut self) -> [(&'static str, &mut dyn Network<T>); 4] {
        [
            ("encoder", &mut self.encoder),
            ("generator", &mut self.generator),
            ("merge", &mut self.merge),
            ("critic", &mut self.critic),
        ]
    }

    pub fn bind_generator<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> GeneratorBounds<'t, T> {
        GeneratorBounds {
            encoder: tape.bind(&self.encoder.params, trainable),
            generator: tape.bind(&self.generator.params, trainable),
            merge: tape.bind(&self.merge.params, trainable),
        }
    }

    /// Encode, generate, warp cumulatively and merge: `x[N,C,H,W]`,
    /// `z[N,z_dim]`.
    pub fn synthesize<'t>(
        &mut self,
        b: &GeneratorBounds<'t, T>,
        x: Var<'t, T>,
        z: Var<'t, T>,
        mode: Mode,
    ) -> Result<Synthesis<'t, T>> {
        let s = x.shape();
        let cfg = &self.config;
        if s.len() != 4 {
            return Err(Error::shape("synthesize", &s, &[0, cfg.channels, cfg.resolution, cfg.resolution]));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (t, p, k) = (cfg.frames, cfg.depth, cfg.transform.param_count());
        let (kind, norm) = (cfg.transform, cfg.kernel_norm);

        let cond = self.encoder.forward(&b.encoder, x, mode)?;
        let raw = self.generator.forward(&b.generator, cond, z)?.reshape(&[n * t * p, k])?;
        let transforms = match kind {
            TransformKind::Affine => affine_from_raw(raw)?,
            TransformKind::Kernel { .. } => kernel_from_raw(raw, norm)?,
        }
        .reshape(&[n * t, p, k])?;
        let stack = apply_sequence_batched(x.repeat_rows(t)?, transforms, kind)?;
        let merged = self.merge.forward(&b.merge, stack, mode)?;
        let frames = merged.frames.reshape(&[n, t, c, h, w])?.permute(&[0, 2, 1, 3, 4])?;
        let clip = Var::concat(&[x.reshape(&[n, c, 1, h, w])?, frames], 2)?;
        Ok(Synthesis {
            clip,
            transforms,
            stack,
            weights: merged.weights,
        })
    }

    /// `m` clips from one `[C,H,W]` image, frames clamped to `[0,1]`.
    pub fn imagine(&mut self, x: &Tensor<T>, sample: &SampleConfig) -> Result<Vec<VideoClip<T>>> {
        if sample.m == 0 {
            return Err(Error::config("number of clips must be at least 1"));
        }
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::shape("imagine", s, &[self.config.channels, 0, 0]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
        let z = sample_latent(&mut rng, sample.m, self.config.z_dim);
        let tape = Tape::new();
        let b = self.bind_generator(&tape, false);
        let xs = Tensor::new([sample.m, s[0], s[1], s[2]], x.data().repeat(sample.m))?;
        let syn = self.synthesize(&b, tape.constant(xs), tape.constant(z), Mode::Eval)?;
        let mut clip = syn.clip.to_tensor();
        clip.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()).min(T::one()));
        batch_to_clips(&clip)
    }

    /// Critic score of one clip with running batch-norm statistics.
    pub fn criticize(&mut self, clip: &VideoClip<T>) -> Result<T> {
        let batch = crate::data::clips_to_batch(std::slice::from_ref(clip))?;
        let tape = Tape::new();
        let p = tape.bind(&self.critic.params, false);
        Ok(self.critic.forward(&p, tape.constant(batch), Mode::Eval)?.value().data()[0])
    }

    /// Makes the generator emit identity transformations for every input.
    pub fn force_identity_transforms(&mut self) -> Result<()> {
        let cfg = &self.config;
        let per: Vec<T> = match cfg.transform {
            TransformKind::Affine => vec![T::zero(); 6],
            TransformKind::Kernel { size } => {
                let centre = T::lit(if cfg.kernel_norm == KernelNorm::Softmax { 40.0 } else { 1.0 });
                (0..size * size)
                    .map(|i| if i == size * size / 2 { centre } else { T::zero() })
                    .collect()
            }
        };
        let bias = per.repeat(cfg.frames * cfg.depth);
        self.generator.force_output(&bias)
    }
}
