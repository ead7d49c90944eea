use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Named dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// He-style normal init with std `gain / sqrt(fan_in)`.
    pub fn normal(name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut p = Self::zeros(name, shape);
        for v in &mut p.data {
            *v = dist.sample(rng);
        }
        p
    }
}

/// Ordered collection of parameters; the order is the serialization order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its slot index.
    pub fn push(&mut self, p: Param) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn data(&self, idx: usize) -> &[f64] {
        &self.params[idx].data
    }

    pub fn data_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.params[idx].data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Zero-filled buffers shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }

    /// Replaces values from `(name, shape, data)` triples, matching by name.
    pub fn load_from<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<(&'a [usize], &'a [f64])>) -> Result<()> {
        for p in &mut self.params {
            let (shape, data) = lookup(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter '{}'", p.name)))?;
            if shape != p.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    p.name, shape, p.shape
                )));
            }
            p.data.copy_from_slice(data);
        }
        Ok(())
    }
}
