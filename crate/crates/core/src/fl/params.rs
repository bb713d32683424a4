use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge_store::{decode_f32s, encode_f32s};

/// A named `f32` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ordered map of tensors, iterated lexicographically by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParameters {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::ShapeMismatch(format!("duplicate tensor {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Inserts or replaces every tensor of `other`.
    pub fn merge(&mut self, other: ModelParameters) {
        self.tensors.extend(other.tensors);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }

    /// Only the tensors whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ModelParameters {
        ModelParameters {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ModelParameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape == b.shape)
    }

    pub fn bit_identical(&self, other: &ModelParameters) -> bool {
        self.same_layout(other)
            && self
                .tensors
                .values()
                .zip(other.tensors.values())
                .all(|(a, b)| a.bits_eq(b))
    }

    /// Euclidean norm over every value, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| &t.values)
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct WireTensor {
    shape: Vec<usize>,
    data: String,
}

impl Serialize for ModelParameters {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.tensors.len()))?;
        for (name, t) in &self.tensors {
            map.serialize_entry(
                name,
                &WireTensor {
                    shape: t.shape.clone(),
                    data: encode_f32s(&t.values),
                },
            )?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ModelParameters {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = BTreeMap::<String, WireTensor>::deserialize(deserializer)?;
        let mut tensors = BTreeMap::new();
        for (name, wire) in raw {
            let values = decode_f32s(&wire.data).map_err(D::Error::custom)?;
            let tensor = Tensor::new(wire.shape, values)
                .map_err(|e| D::Error::custom(format!("{name}: {e}")))?;
            tensors.insert(name, tensor);
        }
        Ok(ModelParameters { tensors })
    }
}
