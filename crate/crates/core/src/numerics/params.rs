use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Per-parameter gradients keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn accumulate(&mut self, name: &str, g: &Matrix) {
        match self.grads.get_mut(name) {
            Some(existing) => existing.add_assign(g),
            None => {
                self.grads.insert(name.to_string(), g.clone());
            }
        }
    }

    /// Adds `scale * other` into `self`, visiting names in sorted order.
    pub fn merge_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.grads {
            self.accumulate(name, &g.scale(scale));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: Matrix,
    grad: Matrix,
}

/// Named trainable matrices with a gradient accumulator of matching shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(name, Entry { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix, &Matrix)> {
        self.entries
            .iter_mut()
            .map(|(k, e)| (k.as_str(), &mut e.value, &e.grad))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds computed gradients into the accumulators.
    pub fn accumulate_grads(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
            if entry.grad.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "accumulate_grads",
                    left: entry.grad.shape(),
                    right: g.shape(),
                });
            }
            entry.grad.add_assign(g);
        }
        Ok(())
    }

    /// JSON lines, one `{name, rows, cols, values}` record per parameter in
    /// name order. Values round-trip exactly.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        for (name, e) in &self.entries {
            let rec = ParamRecord {
                name: name.clone(),
                rows: e.value.rows(),
                cols: e.value.cols(),
                values: e.value.data().to_vec(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("param record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut store = ParamStore::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ParamRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse("checkpoint", i + 1, e.to_string()))?;
            let m = Matrix::from_vec(rec.rows, rec.cols, rec.values)
                .map_err(|e| Error::parse("checkpoint", i + 1, e.to_string()))?;
            if !m.is_finite() {
                return Err(Error::parse("checkpoint", i + 1, "non-finite parameter value"));
            }
            store
                .insert(rec.name, m)
                .map_err(|e| Error::parse("checkpoint", i + 1, e.to_string()))?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut p = ParamStore::new();
        p.insert("a", Matrix::from_rows(&[[0.1, -1e-300], [std::f64::consts::PI, 7.0]])).unwrap();
        p.insert("b", Matrix::row_vector(&[1.0 / 3.0])).unwrap();
        let back = ParamStore::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new();
        p.insert("a", Matrix::zeros(1, 1)).unwrap();
        assert!(p.insert("a", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn gradient_shapes_are_checked() {
        let mut p = ParamStore::new();
        p.insert("a", Matrix::zeros(2, 2)).unwrap();
        let mut g = Gradients::default();
        g.accumulate("a", &Matrix::zeros(1, 2));
        assert!(p.accumulate_grads(&g).is_err());
    }
}
