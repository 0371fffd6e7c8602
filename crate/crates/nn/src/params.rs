use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;
use crate::NnError;

pub type ParamId = usize;

/// Named parameter tensors, in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Glorot-uniform `[rows, cols]` weight.
    pub fn glorot(&mut self, rng: &mut ChaCha8Rng, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.glorot_fan(rng, name, rows, cols, rows, cols)
    }

    pub fn glorot_fan(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Tensor { rows, cols, data })
    }

    pub fn constant(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Tensor { rows, cols, data: vec![v; rows * cols] })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    /// Copy values from `other` by name; every name must exist with the
    /// same shape in both.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!("{} tensors, model expects {}", other.len(), self.len())));
        }
        for (name, t) in other.names.iter().zip(&other.values) {
            let id = self.id(name).ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {name}")))?;
            if self.values[id].shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {name}: shape {:?}, model expects {:?}",
                    t.shape(),
                    self.values[id].shape()
                )));
            }
            self.values[id] = t.clone();
        }
        Ok(())
    }
}
