//! Binary checkpoints of a training state.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "VIMC" | u16 version | u64 iteration
//! u32 rng_len | rng_len bytes (32-byte seed, u64 stream, u128 word position)
//! u32 entries | entries x (u16 name_len, name, u8 dtype, u8 ndim, ndim x u32, payload)
//! ```
//!
//! Entry names are `param.<net>.<name>`, `buffer.<net>.<name>` or
//! `opt.<net>.<name>`; dtype 0 is f32.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"VIMC";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const RNG_LEN: u32 = 32 + 8 + 16;

pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// Decoded file contents before they are matched against a model.
pub struct Checkpoint {
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        let mut entries = Vec::new();
        for (net, n) in state.model.networks() {
            for (name, t) in n.params().iter() {
                entries.push(Entry {
                    name: format!("param.{net}.{name}"),
                    tensor: t.clone(),
                });
            }
            for (name, t) in n.buffers().iter() {
                entries.push(Entry {
                    name: format!("buffer.{net}.{name}"),
                    tensor: t.clone(),
                });
            }
        }
        for (net, opt) in state.optim.iter() {
            for (name, acc) in opt.accumulators() {
                let t = Tensor::new([acc.len()], acc.to_vec()).expect("flat");
                entries.push(Entry {
                    name: format!("opt.{net}.{name}"),
                    tensor: t,
                });
            }
        }
        Checkpoint {
            iteration: state.iteration,
            rng: state.rng.clone(),
            entries,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.iteration.to_le_bytes())?;
        w.write_all(&RNG_LEN.to_le_bytes())?;
        w.write_all(&self.rng.get_seed())?;
        w.write_all(&self.rng.get_stream().to_le_bytes())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[DTYPE_F32, e.tensor.shape().len() as u8])?;
            for d in e.tensor.shape() {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in e.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut rd = Reader { inner: r, offset: 0 };
        let magic: [u8; 4] = rd.array()?;
        if &magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}, expected \"VIMC\"", String::from_utf8_lossy(&magic))));
        }
        let version = u16::from_le_bytes(rd.array()?);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let iteration = u64::from_le_bytes(rd.array()?);
        let at = rd.offset;
        let rng_len = u32::from_le_bytes(rd.array()?);
        if rng_len != RNG_LEN {
            return Err(Error::format(at, format!("rng state of {rng_len} bytes, expected {RNG_LEN}")));
        }
        let mut rng = ChaCha8Rng::from_seed(rd.array()?);
        rng.set_stream(u64::from_le_bytes(rd.array()?));
        rng.set_word_pos(u128::from_le_bytes(rd.array()?));
        let count = u32::from_le_bytes(rd.array()?);
        let mut entries = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let at = rd.offset;
            let len = u16::from_le_bytes(rd.array()?) as usize;
            let name = String::from_utf8(rd.bytes(len)?).map_err(|_| Error::format(at, "entry name is not UTF-8"))?;
            let [dtype, ndim] = rd.array()?;
            if dtype != DTYPE_F32 {
                return Err(Error::format(at, format!("entry {name}: unknown dtype {dtype}")));
            }
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(rd.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = rd.bytes(n * 4)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            entries.push(Entry {
                name,
                tensor: Tensor::new(shape, data)?,
            });
        }
        let mut extra = [0u8; 1];
        if rd.inner.read(&mut extra).map_err(|e| Error::io("reading checkpoint", e))? != 0 {
            return Err(Error::format(rd.offset, "trailing bytes after the last entry"));
        }
        Ok(Checkpoint { iteration, rng, entries })
    }

    /// Copies parameters and buffers into `model`; every tensor of the model
    /// must be present with the right shape. Optimizer entries are skipped.
    pub fn restore_model(&self, model: &mut Model<f32>) -> Result<()> {
        let mut seen = 0usize;
        for (net, n) in model.networks_mut() {
            for (name, t) in n.params_mut().iter_mut() {
                let src = self.tensor(&format!("param.{net}.{name}"), t.shape())?;
                t.data_mut().copy_from_slice(src.data());
                seen += 1;
            }
            for (name, t) in n.buffers_mut().iter_mut() {
                let src = self.tensor(&format!("buffer.{net}.{name}"), t.shape())?;
                t.data_mut().copy_from_slice(src.data());
                seen += 1;
            }
        }
        let stored = self.entries.iter().filter(|e| !e.name.starts_with("opt.")).count();
        if stored != seen {
            return Err(Error::config(format!(
                "checkpoint holds {stored} model tensors but the configured model has {seen}"
            )));
        }
        Ok(())
    }

    pub fn into_state(self, cfg: &TrainConfig) -> Result<TrainState> {
        let mut state = TrainState::new(cfg)?;
        self.restore_model(&mut state.model)?;
        for (net, opt) in state.optim.iter_mut() {
            let prefix = format!("opt.{net}.");
            for e in self.entries.iter().filter(|e| e.name.starts_with(&prefix)) {
                opt.set_accumulator(&e.name[prefix.len()..], e.tensor.data().to_vec())?;
            }
        }
        state.iteration = self.iteration;
        state.rng = self.rng;
        Ok(state)
    }

    fn tensor(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::config(format!("checkpoint has no entry {name}")))?;
        if e.tensor.shape() != shape {
            return Err(Error::config(format!(
                "checkpoint entry {name} has shape {:?}, model expects {shape:?}",
                e.tensor.shape()
            )));
        }
        Ok(&e.tensor)
    }
}

struct Reader<'a, R> {
    inner: &'a mut R,
    offset: u64,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = self
            .inner
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io("reading checkpoint", e))?;
        if got != n {
            return Err(Error::format(self.offset + got as u64, format!("truncated: needed {n} bytes, found {got}")));
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }
}

/// Writes atomically via a sibling temporary file.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let ctx = |what: &str| format!("{what} {}", tmp.display());
    let file = fs::File::create(&tmp).map_err(|e| Error::io(ctx("creating"), e))?;
    let mut w = BufWriter::new(file);
    Checkpoint::from_state(state)
        .write_to(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(ctx("writing"), e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Checkpoint::read_from(&mut BufReader::new(file))
}

/// Restores a full training state for `cfg`.
pub fn load_state(cfg: &TrainConfig, path: &Path) -> Result<TrainState> {
    read(path)?.into_state(cfg)
}

/// Restores only the networks, for sampling and scoring.
pub fn load_model(cfg: &ModelConfig, path: &Path) -> Result<Model<f32>> {
    let mut model = Model::new(cfg.clone(), 0)?;
    read(path)?.restore_model(&mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetKind, Shapes, ShapesConfig};
    use crate::train::run;
    use crate::transform::TransformKind;

    fn config(iterations: u64) -> TrainConfig {
        let model = ModelConfig::miniature(16, 3, TransformKind::Affine).unwrap();
        let mut cfg = TrainConfig::new(model, DatasetKind::Shapes, iterations, 21);
        cfg.batch_size = 4;
        cfg.dataset_len = 40;
        cfg
    }

    fn bytes(state: &TrainState) -> Vec<u8> {
        let mut out = Vec::new();
        Checkpoint::from_state(state).write_to(&mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = config(1);
        let src = Shapes::new(ShapesConfig::for_size(16), 21, 40).unwrap();
        let mut state = TrainState::new(&cfg).unwrap();
        run(&cfg, &mut state, &src, &mut ()).unwrap();
        let raw = bytes(&state);
        let back = Checkpoint::read_from(&mut raw.as_slice()).unwrap().into_state(&cfg).unwrap();
        assert_eq!(back.iteration, 1);
        assert_eq!(back.rng, state.rng);
        assert_eq!(back.optim, state.optim);
        for ((_, a), (_, b)) in back.model.networks().into_iter().zip(state.model.networks()) {
            assert_eq!(a.params(), b.params());
            assert_eq!(a.buffers(), b.buffers());
        }
        assert_eq!(bytes(&back), raw);
    }

    #[test]
    fn header_errors_name_their_offset() {
        let state = TrainState::new(&config(1)).unwrap();
        let mut raw = bytes(&state);
        raw[4..6].copy_from_slice(&(VERSION + 1).to_le_bytes());
        match Checkpoint::read_from(&mut raw.as_slice()) {
            Err(Error::Format { offset: 4, msg }) => assert!(msg.contains("version 2")),
            other => panic!("unexpected {:?}", other.err()),
        }
        let raw = bytes(&state);
        assert!(matches!(
            Checkpoint::read_from(&mut &raw[..raw.len() - 3]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(Checkpoint::read_from(&mut &b"PNG\0rest"[..]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let state = TrainState::new(&config(1)).unwrap();
        let raw = bytes(&state);
        let mut other = config(1);
        other.model.merge_channels = 5;
        let ck = Checkpoint::read_from(&mut raw.as_slice()).unwrap();
        assert!(matches!(ck.into_state(&other), Err(Error::Config(_))));
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let cfg = config(3);
        let src = Shapes::new(ShapesConfig::for_size(16), 21, 40).unwrap();

        let mut full = TrainState::new(&cfg).unwrap();
        run(&cfg, &mut full, &src, &mut ()).unwrap();

        let mut part = TrainState::new(&cfg).unwrap();
        run(&TrainConfig { total_iterations: 2, ..cfg.clone() }, &mut part, &src, &mut ()).unwrap();
        save(&part, &path).unwrap();
        let mut resumed = load_state(&cfg, &path).unwrap();
        run(&cfg, &mut resumed, &src, &mut ()).unwrap();

        assert_eq!(resumed.metrics.last(), full.metrics.last());
        assert_eq!(bytes(&resumed), bytes(&full));
        let model = load_model(&cfg.model, &path).unwrap();
        assert_eq!(model.critic.params, part.model.critic.params);
    }
}
