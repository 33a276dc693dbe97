use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A named trainable tensor with a persistent gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Registry of every trainable tensor, keyed by hierarchical name.
///
/// Iteration order is the sorted name order, which keeps gradient clipping
/// and checkpoints deterministic.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                context: "register",
                left: vec![data.len()],
                right: shape,
            });
        }
        let grad = vec![0.0; data.len()];
        self.entries.insert(name.to_string(), Param { shape, data, grad });
        Ok(())
    }

    /// Register a tensor with i.i.d. `N(0, std^2)` entries.
    pub fn register_normal(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        use rand_distr::{Distribution, Normal};
        let numel: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let data: Vec<f64> = (0..numel).map(|_| dist.sample(rng)).collect();
        self.register(name, shape, data)
    }

    pub fn register_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        let numel: usize = shape.iter().product();
        self.register(name, shape, vec![0.0; numel])
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    pub fn add_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                context: "add_grad",
                left: vec![p.grad.len()],
                right: vec![grad.len()],
            });
        }
        for (g, d) in p.grad.iter_mut().zip(grad) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            for g in &mut p.grad {
                *g = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rejects_duplicate_names() {
        let mut s = ParamStore::new();
        s.register("a.w", vec![2], vec![1.0, 2.0]).unwrap();
        assert!(s.register("a.w", vec![2], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn grad_accumulation_and_zeroing() {
        let mut s = ParamStore::new();
        s.register("p", vec![2], vec![0.0, 0.0]).unwrap();
        s.add_grad("p", &[1.0, -2.0]).unwrap();
        s.add_grad("p", &[1.0, -2.0]).unwrap();
        assert_eq!(s.get("p").unwrap().grad, vec![2.0, -4.0]);
        s.zero_grads();
        assert_eq!(s.get("p").unwrap().grad, vec![0.0, 0.0]);
    }

    #[test]
    fn normal_init_is_deterministic() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        a.register_normal("w", vec![3, 3], 0.1, &mut r1).unwrap();
        b.register_normal("w", vec![3, 3], 0.1, &mut r2).unwrap();
        assert_eq!(a.get("w").unwrap().data, b.get("w").unwrap().data);
    }
}
