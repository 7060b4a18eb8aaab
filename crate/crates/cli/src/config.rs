//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use vimagine::data::DatasetKind;
use vimagine::nets::ModelConfig;
use vimagine::train::TrainConfig;
use vimagine::transform::{KernelNorm, TransformKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformChoice {
    Affine,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Widths {
    /// Full-size networks.
    Full,
    /// Narrow networks for smoke runs and tests.
    Miniature,
}

/// Every tunable of a run. `None` means "derived from other keys".
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub transform: TransformChoice,
    pub resolution: usize,
    pub iters: u64,
    pub seed: u64,
    pub learning_rate: f64,
    pub generator_learning_rate: Option<f64>,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub n_critic: usize,
    pub critic_warmup_iters: u64,
    pub critic_warmup_steps: usize,
    pub clip_c: f64,
    pub batch_size: usize,
    pub dataset_len: Option<u64>,
    pub widths: Widths,
    pub frames: usize,
    pub depth: usize,
    pub cond_dim: Option<usize>,
    pub z_dim: Option<usize>,
    pub kernel_size: Option<usize>,
    pub kernel_norm: KernelNorm,
    pub merge_channels: Option<usize>,
    pub init_std: f64,
    pub checkpoint_every: u64,
    pub wall_clock: bool,
    pub mnist_idx: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Shapes,
            transform: TransformChoice::Affine,
            resolution: 64,
            iters: 1000,
            seed: 0,
            learning_rate: 5e-5,
            generator_learning_rate: None,
            rms_decay: 0.9,
            rms_epsilon: 1e-10,
            n_critic: 5,
            critic_warmup_iters: 0,
            critic_warmup_steps: 100,
            clip_c: 0.01,
            batch_size: 32,
            dataset_len: None,
            widths: Widths::Full,
            frames: 4,
            depth: 5,
            cond_dim: None,
            z_dim: None,
            kernel_size: None,
            kernel_norm: KernelNorm::Raw,
            merge_channels: None,
            init_std: 0.02,
            checkpoint_every: 1000,
            wall_clock: false,
            mnist_idx: None,
        }
    }
}

pub const KEYS: [&str; 27] = [
    "dataset",
    "transform",
    "resolution",
    "iters",
    "seed",
    "learning_rate",
    "generator_learning_rate",
    "rms_decay",
    "rms_epsilon",
    "n_critic",
    "critic_warmup_iters",
    "critic_warmup_steps",
    "clip_c",
    "batch_size",
    "dataset_len",
    "widths",
    "frames",
    "depth",
    "cond_dim",
    "z_dim",
    "kernel_size",
    "kernel_norm",
    "merge_channels",
    "init_std",
    "checkpoint_every",
    "wall_clock",
    "mnist_idx",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("{key}: cannot parse {v:?}"))
}

pub fn parse_dataset(v: &str) -> Result<DatasetKind> {
    match v {
        "mnist" => Ok(DatasetKind::MovingMnist),
        "shapes" => Ok(DatasetKind::Shapes),
        _ => bail!("dataset must be mnist or shapes, got {v:?}"),
    }
}

pub fn parse_transform(v: &str) -> Result<TransformChoice> {
    match v {
        "affine" => Ok(TransformChoice::Affine),
        "conv" => Ok(TransformChoice::Conv),
        _ => bail!("transform must be affine or conv, got {v:?}"),
    }
}

/// Odd kernel side for a resolution: 9 at 64, 17 at 128, otherwise scaled
/// from 9/64 and rounded up to odd.
pub fn default_kernel_size(resolution: usize) -> usize {
    match resolution {
        64 => 9,
        128 => 17,
        r => {
            let k = ((r * 9) as f64 / 64.0).round() as usize;
            (k | 1).max(3)
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = parse_dataset(v)?,
            "transform" => self.transform = parse_transform(v)?,
            "resolution" => self.resolution = num(key, v)?,
            "iters" => self.iters = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "generator_learning_rate" => self.generator_learning_rate = Some(num(key, v)?),
            "rms_decay" => self.rms_decay = num(key, v)?,
            "rms_epsilon" => self.rms_epsilon = num(key, v)?,
            "n_critic" => self.n_critic = num(key, v)?,
            "critic_warmup_iters" => self.critic_warmup_iters = num(key, v)?,
            "critic_warmup_steps" => self.critic_warmup_steps = num(key, v)?,
            "clip_c" => self.clip_c = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "dataset_len" => self.dataset_len = Some(num(key, v)?),
            "widths" => {
                self.widths = match v {
                    "full" => Widths::Full,
                    "miniature" => Widths::Miniature,
                    _ => bail!("widths must be full or miniature, got {v:?}"),
                }
            }
            "frames" => self.frames = num(key, v)?,
            "depth" => self.depth = num(key, v)?,
            "cond_dim" => self.cond_dim = Some(num(key, v)?),
            "z_dim" => self.z_dim = Some(num(key, v)?),
            "kernel_size" => self.kernel_size = Some(num(key, v)?),
            "kernel_norm" => {
                self.kernel_norm = match v {
                    "raw" => KernelNorm::Raw,
                    "softmax" => KernelNorm::Softmax,
                    _ => bail!("kernel_norm must be raw or softmax, got {v:?}"),
                }
            }
            "merge_channels" => self.merge_channels = Some(num(key, v)?),
            "init_std" => self.init_std = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "wall_clock" => self.wall_clock = num(key, v)?,
            "mnist_idx" => self.mnist_idx = Some(PathBuf::from(v)),
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                bail!("line {}: duplicate key {k:?}", no + 1);
            }
            self.set(k, v.trim()).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn transform_kind(&self) -> TransformKind {
        match self.transform {
            TransformChoice::Affine => TransformKind::Affine,
            TransformChoice::Conv => TransformKind::Kernel {
                size: self.kernel_size.unwrap_or_else(|| default_kernel_size(self.resolution)),
            },
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let (res, ch, kind) = (self.resolution, self.dataset.channels(), self.transform_kind());
        let mut m = match self.widths {
            Widths::Full => ModelConfig::new(res, ch, kind),
            Widths::Miniature => ModelConfig::miniature(res, ch, kind),
        }?;
        m.frames = self.frames;
        m.depth = self.depth;
        m.kernel_norm = self.kernel_norm;
        m.init_std = self.init_std;
        if let Some(v) = self.cond_dim {
            m.cond_dim = v;
        }
        if let Some(v) = self.z_dim {
            m.z_dim = v;
        }
        if let Some(v) = self.merge_channels {
            m.merge_channels = v;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.model_config()?, self.dataset, self.iters, self.seed);
        t.learning_rate = self.learning_rate;
        t.generator_learning_rate = self.generator_learning_rate;
        t.rms_decay = self.rms_decay;
        t.rms_epsilon = self.rms_epsilon;
        t.n_critic = self.n_critic;
        t.critic_warmup = (self.critic_warmup_iters > 0).then_some((self.critic_warmup_iters, self.critic_warmup_steps));
        t.clip_c = self.clip_c;
        t.batch_size = self.batch_size;
        if let Some(n) = self.dataset_len {
            t.dataset_len = n;
        }
        t.wall_clock = self.wall_clock;
        t.validate()?;
        Ok(t)
    }

    /// Every key with its effective value; derived values become explicit and
    /// the two optional overrides appear only when set.
    pub fn to_text(&self) -> Result<String> {
        let m = self.model_config()?;
        let t = self.train_config()?;
        let mut s = String::new();
        let dataset = match self.dataset {
            DatasetKind::MovingMnist => "mnist",
            DatasetKind::Shapes => "shapes",
        };
        let transform = match self.transform {
            TransformChoice::Affine => "affine",
            TransformChoice::Conv => "conv",
        };
        let widths = match self.widths {
            Widths::Full => "full",
            Widths::Miniature => "miniature",
        };
        let norm = match self.kernel_norm {
            KernelNorm::Raw => "raw",
            KernelNorm::Softmax => "softmax",
        };
        let kernel = match m.transform {
            TransformKind::Kernel { size } => size,
            TransformKind::Affine => default_kernel_size(self.resolution),
        };
        let lines: Vec<(&str, String)> = vec![
            ("dataset", dataset.into()),
            ("transform", transform.into()),
            ("resolution", self.resolution.to_string()),
            ("iters", self.iters.to_string()),
            ("seed", self.seed.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("rms_decay", format!("{:?}", self.rms_decay)),
            ("rms_epsilon", format!("{:?}", self.rms_epsilon)),
            ("n_critic", self.n_critic.to_string()),
            ("critic_warmup_iters", self.critic_warmup_iters.to_string()),
            ("critic_warmup_steps", self.critic_warmup_steps.to_string()),
            ("clip_c", format!("{:?}", self.clip_c)),
            ("batch_size", self.batch_size.to_string()),
            ("dataset_len", t.dataset_len.to_string()),
            ("widths", widths.into()),
            ("frames", m.frames.to_string()),
            ("depth", m.depth.to_string()),
            ("cond_dim", m.cond_dim.to_string()),
            ("z_dim", m.z_dim.to_string()),
            ("kernel_size", kernel.to_string()),
            ("kernel_norm", norm.into()),
            ("merge_channels", m.merge_channels.to_string()),
            ("init_std", format!("{:?}", self.init_std)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("wall_clock", self.wall_clock.to_string()),
        ];
        for (k, v) in lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        if let Some(v) = self.generator_learning_rate {
            writeln!(s, "generator_learning_rate = {v:?}").unwrap();
        }
        if let Some(p) = &self.mnist_idx {
            writeln!(s, "mnist_idx = {}", p.display()).unwrap();
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        let m = c.model_config().unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.learning_rate, t.n_critic, t.clip_c), (5e-5, 5, 0.01));
        assert_eq!((m.depth, m.frames, m.z_dim, m.cond_dim), (5, 4, 100, 512));
        assert_eq!(default_kernel_size(64), 9);
        assert_eq!(default_kernel_size(128), 17);
        assert_eq!(default_kernel_size(16), 3);
        assert_eq!(t.critic_warmup, None);
    }

    #[test]
    fn parse_and_round_trip() {
        let text = "# smoke\ndataset = mnist\ntransform=conv  # kernels\nresolution = 32\nwidths = miniature\nbatch_size = 4\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.dataset, DatasetKind::MovingMnist);
        assert_eq!(c.transform_kind(), TransformKind::Kernel { size: 5 });
        let text = c.to_text().unwrap();
        for line in text.lines() {
            assert!(KEYS.contains(&line.split(" = ").next().unwrap()), "{line}");
        }
        assert_eq!(text.lines().count(), KEYS.len() - 2, "every key but the two optional ones is written");
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.model_config().unwrap(), c.model_config().unwrap());
        assert_eq!(back.train_config().unwrap(), c.train_config().unwrap());
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_lines() {
        let e = RunConfig::parse("seed = 1\nlearning_rat = 0.1\n").unwrap_err();
        assert!(format!("{e:#}").contains("line 2") && format!("{e:#}").contains("learning_rat"));
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed 1\n").is_err());
        assert!(RunConfig::parse("seed = x\n").is_err());
        assert!(RunConfig::parse("resolution = 48\n").unwrap().model_config().is_err());
    }
}
