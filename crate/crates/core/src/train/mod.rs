//! Wasserstein adversarial training: `n_critic` clipped RMSProp critic
//! updates per generator update.
//!
//! Each iteration reads its critic batches plus one more (conditioning
//! images for the generator update) from a fixed offset of the seeded data
//! stream, so a resumed run sees exactly the batches an uninterrupted run
//! would.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{bfhwc_to_bcfhw, BatchIter, ClipSource, DatasetKind};
use crate::error::{Error, Result};
use crate::nets::{sample_latent, Model, ModelConfig, VideoCritic};
use crate::tensor::{clip_params, rmsprop_step, Mode, OptimizerState, ParamStore, Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Rate for encoder, generator and merge networks; `None` uses
    /// `learning_rate` for all four networks.
    pub generator_learning_rate: Option<f64>,
    /// RMSProp mean-square decay.
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub n_critic: usize,
    /// Optional `(iterations, steps)`: the first `iterations` generator
    /// updates are each preceded by `steps` critic updates instead of
    /// `n_critic`, so the critic starts near its optimum. Off by default.
    pub critic_warmup: Option<(u64, usize)>,
    pub clip_c: f64,
    pub batch_size: usize,
    pub total_iterations: u64,
    pub seed: u64,
    pub dataset: DatasetKind,
    /// Clips per data epoch.
    pub dataset_len: u64,
    /// Record elapsed seconds in metrics; off keeps logs reproducible.
    pub wall_clock: bool,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, dataset: DatasetKind, total_iterations: u64, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            generator_learning_rate: None,
            rms_decay: 0.9,
            rms_epsilon: 1e-10,
            n_critic: 5,
            critic_warmup: None,
            clip_c: 0.01,
            batch_size: 32,
            total_iterations,
            seed,
            dataset,
            dataset_len: dataset.default_len(),
            wall_clock: false,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_critic == 0 || !(self.clip_c > 0.0) || !(self.learning_rate > 0.0) || self.batch_size < 2 {
            return Err(Error::config(
                "training needs n_critic >= 1, clip_c > 0, learning_rate > 0 and batch_size >= 2",
            ));
        }
        if matches!(self.critic_warmup, Some((_, 0))) {
            return Err(Error::config("critic warm-up needs at least one step"));
        }
        if self.dataset_len == 0 {
            return Err(Error::config("dataset length must be positive"));
        }
        if self.model.channels != self.dataset.channels() {
            return Err(Error::config(format!(
                "{:?} clips have {} channels but the model expects {}",
                self.dataset,
                self.dataset.channels(),
                self.model.channels
            )));
        }
        OptimizerState::<f32>::new(self.learning_rate, self.rms_decay, self.rms_epsilon)?;
        OptimizerState::<f32>::new(self.generator_lr(), self.rms_decay, self.rms_epsilon)?;
        self.model.validate()
    }

    /// Critic updates preceding generator update `iteration` (0-based).
    pub fn critic_steps_at(&self, iteration: u64) -> usize {
        match self.critic_warmup {
            Some((n, steps)) if iteration < n => steps,
            _ => self.n_critic,
        }
    }

    /// Index of the first data batch read by `iteration`.
    pub fn batch_offset(&self, iteration: u64) -> u64 {
        let (n, steps) = self.critic_warmup.unwrap_or((0, self.n_critic));
        let warm = iteration.min(n);
        warm * (steps as u64 + 1) + (iteration - warm) * (self.n_critic as u64 + 1)
    }

    pub fn generator_lr(&self) -> f64 {
        self.generator_learning_rate.unwrap_or(self.learning_rate)
    }

    fn optimizer(&self, lr: f64) -> OptimizerState<f32> {
        OptimizerState::new(lr, self.rms_decay, self.rms_epsilon).expect("validated")
    }
}

/// One row of the metrics log, written after each generator update.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iter: u64,
    pub loss_c: f64,
    pub loss_g: f64,
    /// `-loss_c` of the most recent critic update.
    pub em_estimate: f64,
    pub wall_s: f64,
}

pub const METRICS_HEADER: [&str; 5] = ["iter", "loss_c", "loss_g", "em_estimate", "wall_s"];

/// Optimizer state per network.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub encoder: OptimizerState<f32>,
    pub generator: OptimizerState<f32>,
    pub merge: OptimizerState<f32>,
    pub critic: OptimizerState<f32>,
}

impl Optimizers {
    pub fn iter(&self) -> [(&'static str, &OptimizerState<f32>); 4] {
        [
            ("encoder", &self.encoder),
            ("generator", &self.generator),
            ("merge", &self.merge),
            ("critic", &self.critic),
        ]
    }

    pub fn iter_mut(&mut self) -> [(&'static str, &mut OptimizerState<f32>); 4] {
        [
            ("encoder", &mut self.encoder),
            ("generator", &mut self.generator),
            ("merge", &mut self.merge),
            ("critic", &mut self.critic),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed generator updates.
    pub iteration: u64,
    pub model: Model<f32>,
    pub optim: Optimizers,
    /// Latent draws.
    pub rng: ChaCha8Rng,
    pub metrics: Vec<MetricsRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(TrainState {
            iteration: 0,
            model: Model::new(cfg.model.clone(), cfg.seed)?,
            optim: Optimizers {
                encoder: cfg.optimizer(cfg.generator_lr()),
                generator: cfg.optimizer(cfg.generator_lr()),
                merge: cfg.optimizer(cfg.generator_lr()),
                critic: cfg.optimizer(cfg.learning_rate),
            },
            rng,
            metrics: Vec::new(),
        })
    }
}

/// Observer of training progress; every method defaults to a no-op.
pub trait TrainHook {
    fn after_critic_step(&mut self, _state: &TrainState, _loss_c: f64) -> Result<()> {
        Ok(())
    }

    fn after_generator_step(&mut self, _state: &TrainState, _loss_g: f64) -> Result<()> {
        Ok(())
    }

    fn after_iteration(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl TrainHook for () {}

fn non_finite(what: &str, value: f64, stores: &[(&str, &ParamStore<f32>)]) -> Error {
    let mut msg = format!("{what} = {value}; parameter norms:");
    for (net, s) in stores {
        msg.push_str(&format!("\n[{net}]\n{}", s.norm_report()));
    }
    Error::NonFinite(msg)
}

fn generator_stores(m: &Model<f32>) -> [(&str, &ParamStore<f32>); 3] {
    [
        ("encoder", &m.encoder.params),
        ("generator", &m.generator.params),
        ("merge", &m.merge.params),
    ]
}

/// One clipped RMSProp update of `critic` on `mean(c(fake)) - mean(c(real))`.
pub fn critic_update<T: Real, C: VideoCritic<T>>(
    critic: &mut C,
    opt: &mut OptimizerState<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    clip_c: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.bind(critic.params(), true);
    let s_real = critic.score(&p, tape.constant(real.clone()), Mode::TRAIN)?;
    let s_fake = critic.score(&p, tape.constant(fake.clone()), Mode::TRAIN)?;
    let loss = s_fake.mean().sub(s_real.mean())?;
    let value = loss.value().item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "critic loss = {value}; parameter norms:\n{}",
            critic.params().norm_report()
        )));
    }
    let grads = tape.backward(loss)?;
    grads.accumulate_into(&p, critic.params_mut())?;
    rmsprop_step(critic.params_mut(), opt)?;
    clip_params(critic.params_mut(), clip_c)?;
    Ok(value)
}

/// First frames `[B,C,H,W]` of a `[B,C,F,H,W]` batch.
pub fn first_frames<T: Real>(clips: &Tensor<T>) -> Result<Tensor<T>> {
    let s = clips.shape();
    if s.len() != 5 {
        return Err(Error::shape("first_frames", s, &[0, 0, 0, 0, 0]));
    }
    let (b, c, f, hw) = (s[0], s[1], s[2], s[3] * s[4]);
    let mut out = Vec::with_capacity(b * c * hw);
    for n in 0..b {
        for ch in 0..c {
            out.extend_from_slice(&clips.data()[((n * c + ch) * f) * hw..][..hw]);
        }
    }
    Tensor::new([b, c, s[3], s[4]], out)
}

/// Synthesizes clips for `x` without recording gradients.
fn synthesize_detached(model: &mut Model<f32>, x: &Tensor<f32>, z: Tensor<f32>) -> Result<Tensor<f32>> {
    let tape = Tape::new();
    let b = model.bind_generator(&tape, false);
    let syn = model.synthesize(&b, tape.constant(x.clone()), tape.constant(z), Mode::TRAIN_FROZEN)?;
    Ok(syn.clip.to_tensor())
}

/// Critic update against fakes conditioned on the real clips' first frames.
/// `real` is `[B,C,F,H,W]`.
pub fn critic_step(state: &mut TrainState, cfg: &TrainConfig, real: &Tensor<f32>) -> Result<f64> {
    let x = first_frames(real)?;
    let z = sample_latent(&mut state.rng, x.shape()[0], cfg.model.z_dim);
    let fake = synthesize_detached(&mut state.model, &x, z)?;
    critic_update(&mut state.model.critic, &mut state.optim.critic, real, &fake, cfg.clip_c)
}

/// Update of encoder, generator and merge networks on
/// `-mean(critic(imagine(x, z)))`; the critic is read-only.
pub fn generator_step(state: &mut TrainState, cfg: &TrainConfig, images: &Tensor<f32>) -> Result<f64> {
    let n = images.shape()[0];
    let z = sample_latent(&mut state.rng, n, cfg.model.z_dim);
    let model = &mut state.model;
    let tape = Tape::new();
    let b = model.bind_generator(&tape, true);
    let syn = model.synthesize(&b, tape.constant(images.clone()), tape.constant(z), Mode::TRAIN)?;
    let cp = tape.bind(&model.critic.params, false);
    let loss = model.critic.forward(&cp, syn.clip, Mode::TRAIN_FROZEN)?.mean().scale(-1.0);
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(non_finite("generator loss", value, &generator_stores(model)));
    }
    let grads = tape.backward(loss)?;
    grads.accumulate_into(&b.encoder, &mut model.encoder.params)?;
    grads.accumulate_into(&b.generator, &mut model.generator.params)?;
    grads.accumulate_into(&b.merge, &mut model.merge.params)?;
    rmsprop_step(&mut model.encoder.params, &mut state.optim.encoder)?;
    rmsprop_step(&mut model.generator.params, &mut state.optim.generator)?;
    rmsprop_step(&mut model.merge.params, &mut state.optim.merge)?;
    if !(model.encoder.params.is_finite() && model.generator.params.is_finite() && model.merge.params.is_finite()) {
        return Err(non_finite("generator parameters after update; loss", value, &generator_stores(model)));
    }
    Ok(value)
}

/// Runs iterations until `state.iteration == cfg.total_iterations`.
pub fn run(cfg: &TrainConfig, state: &mut TrainState, source: &dyn ClipSource, hook: &mut dyn TrainHook) -> Result<()> {
    cfg.validate()?;
    let (frames, h, w, c) = source.frame_shape();
    if frames != cfg.model.clip_frames() || h != cfg.model.resolution || w != h || c != cfg.model.channels {
        return Err(Error::config(format!(
            "dataset yields {frames} frames of {h}x{w}x{c}, model expects {} of {r}x{r}x{}",
            cfg.model.clip_frames(),
            cfg.model.channels,
            r = cfg.model.resolution
        )));
    }
    let mut stream = BatchIter::new(source, cfg.batch_size, cfg.seed)?;
    let started = Instant::now();
    while state.iteration < cfg.total_iterations {
        stream.seek(cfg.batch_offset(state.iteration));
        let mut next = || -> Result<Tensor<f32>> { bfhwc_to_bcfhw(&stream.next().expect("endless stream")?) };
        let mut loss_c = 0.0;
        for _ in 0..cfg.critic_steps_at(state.iteration) {
            let real = next()?;
            loss_c = critic_step(state, cfg, &real)?;
            hook.after_critic_step(state, loss_c)?;
        }
        let images = first_frames(&next()?)?;
        let loss_g = generator_step(state, cfg, &images)?;
        hook.after_generator_step(state, loss_g)?;
        state.iteration += 1;
        state.metrics.push(MetricsRecord {
            iter: state.iteration,
            loss_c,
            loss_g,
            em_estimate: -loss_c,
            wall_s: if cfg.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        });
        hook.after_iteration(state)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
