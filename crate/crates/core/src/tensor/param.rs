use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Ordered name -> tensor map without gradients (batch-norm running stats).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensors<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> NamedTensors<T> {
    pub fn new() -> Self {
        NamedTensors { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate tensor name {name}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cast<U: Real>(&self) -> NamedTensors<U> {
        NamedTensors {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Trainable parameters of one network, in insertion order.
///
/// Every entry requires a gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, t.with_grad());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.entries.values_mut().for_each(|t| t.zero_grad());
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|t| t.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.entries.values().fold(T::zero(), |m, t| m.max(t.max_abs()))
    }

    /// FNV-1a over the bit patterns of every value, in order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.entries {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for v in t.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }

    /// One line per parameter with its L2 norm, for diagnostics.
    pub fn norm_report(&self) -> String {
        self.entries
            .iter()
            .map(|(k, t)| format!("{k}: |p|={:.6e} max={:.6e}", t.l2_norm(), t.max_abs().as_f64()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Zero-mean normal samples truncated at two standard deviations.
pub fn init_normal_truncated<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("std must be positive");
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::lit(v);
        }
    })
}
