//! Flat parameter storage shared by all layers. Layers hold [`ParamId`]
//! handles; values live in one [`ParamSet`] so the optimizer, checkpoints,
//! finite-difference probes and checksums can walk every tensor uniformly.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Weight initialization policy. Draw order is row-major and fixed, so a
/// given (config, seed) always produces bit-identical parameters.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zero,
    One,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Kaiming-style normal scaled by sqrt(2 / fan_in).
    Kaiming { fan_in: usize },
}

#[derive(Debug, Clone)]
pub struct ParamSet {
    values: Vec<ArrayD<f64>>,
    names: Vec<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let mut arr = ArrayD::<f64>::zeros(IxDyn(shape));
        match init {
            Init::Zero => {}
            Init::One => arr.fill(1.0),
            Init::Normal(std) => {
                for v in arr.iter_mut() {
                    *v = std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                for v in arr.iter_mut() {
                    *v = std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        self.values.push(arr);
        self.names.push(name.into());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// SHA-256 over names and raw value bits; equal checksums mean
    /// bit-identical parameter sets.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, v) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Copies values from another set with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(CoreError::BadCheckpoint(
                "parameter name sets differ".into(),
            ));
        }
        for (dst, src) in self.values.iter_mut().zip(other.values.iter()) {
            if dst.shape() != src.shape() {
                return Err(CoreError::BadCheckpoint("parameter shape differs".into()));
            }
            dst.assign(src);
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffer with one slot per parameter, laid out like a ParamSet.
#[derive(Debug)]
pub struct Grads {
    g: Vec<ArrayD<f64>>,
}

impl Grads {
    pub fn zeros_like(ps: &ParamSet) -> Self {
        Self {
            g: ps.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.g[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.g[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.g {
            g.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArrayD<f64>> {
        self.g.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<f64>> {
        self.g.iter_mut()
    }

    pub fn global_norm(&self) -> f64 {
        self.g
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in &mut self.g {
                g.mapv_inplace(|v| v * scale);
            }
        }
    }
}
