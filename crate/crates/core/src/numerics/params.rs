use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named, ordered table of model parameters.
///
/// Insertion order is preserved and is the iteration order everywhere
/// (optimizer updates, checkpoints, fingerprints), so two stores built by the
/// same code are interchangeable.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].value = value;
            return ParamId(i);
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value,
            trainable: true,
        });
        ParamId(id)
    }

    /// Gaussian init scaled by 1/sqrt(fan_in).
    pub fn init_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let std = 1.0 / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data).expect("shape"))
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.insert(name, Tensor::full(shape, value))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Marks exactly the parameters whose names satisfy `pred` as trainable.
    pub fn train_only(&mut self, pred: impl Fn(&str) -> bool) {
        for e in &mut self.entries {
            e.trainable = pred(&e.name);
        }
    }

    pub fn train_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = true;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.name.clone())
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies every parameter of `other` whose name also exists here.
    /// Returns the names that were not found.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<Vec<String>> {
        let mut missing = Vec::new();
        for (_, name, value) in other.iter() {
            match self.index.get(name) {
                Some(&i) => {
                    if self.entries[i].value.shape() != value.shape() {
                        return Err(Error::ShapeMismatch {
                            op: "load_matching",
                            lhs: self.entries[i].value.shape().to_vec(),
                            rhs: value.shape().to_vec(),
                        });
                    }
                    self.entries[i].value = value.clone();
                }
                None => missing.push(name.to_string()),
            }
        }
        Ok(missing)
    }
}

/// Gradient table keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    map: BTreeMap<ParamId, Tensor>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor) {
        self.map.insert(id, g);
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match self.map.get_mut(&id) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                self.map.insert(id, g.clone());
            }
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (&id, g) in &other.map {
            self.accumulate(id, g);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.map.values_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
