//! Dual-encoder retriever: two linear maps from hashed bag-of-words features to
//! `d`-dimensional embeddings, scored by raw inner product.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fl::{ModelParameters, Tensor};
use crate::knowledge_store::{CorpusRecord, KnowledgeChunk, Passage};
use crate::linalg::{dot, Matrix};
use crate::rng::SplitMix64;
use crate::text_features::{bow_features, tokenize, SparseFeatureVector};

pub const QUERY_TENSOR: &str = "retriever.query.W";
pub const CONTEXT_TENSOR: &str = "retriever.context.W";

/// `d x F` weight matrix applied to a sparse feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    weights: Matrix,
}

impl LinearEncoder {
    pub fn zeros(dim: usize, features: usize) -> Self {
        Self {
            weights: Matrix::zeros(dim, features),
        }
    }

    pub fn from_weights(weights: Matrix) -> Self {
        Self { weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn features(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn encode_features(&self, features: &SparseFeatureVector) -> Vec<f64> {
        self.weights.mul_sparse(features)
    }

    pub fn encode_text(&self, text: &str) -> Vec<f64> {
        self.encode_features(&bow_features(&tokenize(text), self.features()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverModel {
    query: LinearEncoder,
    context: LinearEncoder,
}

impl RetrieverModel {
    pub fn new(query: LinearEncoder, context: LinearEncoder) -> Result<Self> {
        if (query.dim(), query.features()) != (context.dim(), context.features()) {
            return Err(Error::ShapeMismatch(format!(
                "query encoder is {}x{}, context encoder is {}x{}",
                query.dim(),
                query.features(),
                context.dim(),
                context.features()
            )));
        }
        Ok(Self { query, context })
    }

    /// Weights i.i.d. uniform in `[-1/sqrt(F), 1/sqrt(F)]` from `SplitMix64(seed)`,
    /// query encoder first, each row-major. A draw `u` in `[0, 1)` maps to
    /// `bound * (2u - 1)`, rounded to the nearest `f32` and kept inside the bound.
    pub fn init(dim: usize, features: usize, seed: u64) -> Self {
        assert!(dim > 0 && features > 0, "dimensions must be positive");
        let bound = 1.0 / (features as f64).sqrt();
        let mut rng = SplitMix64::new(seed);
        let mut draw = || {
            let data = (0..dim * features)
                .map(|_| uniform_f32(&mut rng, bound))
                .collect();
            LinearEncoder::from_weights(Matrix::from_vec(dim, features, data).expect("shape"))
        };
        let query = draw();
        let context = draw();
        Self { query, context }
    }

    pub fn dim(&self) -> usize {
        self.query.dim()
    }

    pub fn features(&self) -> usize {
        self.query.features()
    }

    pub fn query_encoder(&self) -> &LinearEncoder {
        &self.query
    }

    pub fn query_encoder_mut(&mut self) -> &mut LinearEncoder {
        &mut self.query
    }

    pub fn context_encoder(&self) -> &LinearEncoder {
        &self.context
    }

    pub fn query_features(&self, text: &str) -> SparseFeatureVector {
        bow_features(&tokenize(text), self.features())
    }

    pub fn encode_query(&self, text: &str) -> Vec<f64> {
        self.query.encode_text(text)
    }

    pub fn encode_context<P: Passage + ?Sized>(&self, passage: &P) -> Vec<f64> {
        self.context.encode_text(&passage.context_text())
    }

    /// Embeds and converts a batch of corpus records into chunks.
    pub fn embed_records(&self, records: Vec<CorpusRecord>) -> Vec<KnowledgeChunk> {
        self.embed_records_with(records, Execution::default())
    }

    pub fn embed_records_with(
        &self,
        records: Vec<CorpusRecord>,
        exec: Execution,
    ) -> Vec<KnowledgeChunk> {
        let embeddings = exec.map(&records, |r| {
            self.encode_context(r)
                .into_iter()
                .map(|v| v as f32)
                .collect::<Vec<f32>>()
        });
        records
            .into_iter()
            .zip(embeddings)
            .map(|(r, e)| r.into_chunk(e))
            .collect()
    }

    pub fn parameters(&self) -> ModelParameters {
        let mut params = ModelParameters::new();
        for (name, enc) in [(QUERY_TENSOR, &self.query), (CONTEXT_TENSOR, &self.context)] {
            params
                .insert(
                    name,
                    Tensor::new(vec![enc.dim(), enc.features()], enc.weights().to_f32())
                        .expect("matrix shape"),
                )
                .expect("unique names");
        }
        params
    }

    pub fn from_parameters(params: &ModelParameters) -> Result<Self> {
        let load = |name: &str| -> Result<LinearEncoder> {
            let t = params
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}")))?;
            match t.shape() {
                [rows, cols] => Ok(LinearEncoder::from_weights(Matrix::from_f32(
                    *rows,
                    *cols,
                    t.values(),
                )?)),
                shape => Err(Error::ShapeMismatch(format!(
                    "{name} has shape {shape:?}, expected two dimensions"
                ))),
            }
        };
        Self::new(load(QUERY_TENSOR)?, load(CONTEXT_TENSOR)?)
    }

    /// Replaces the weights from `params`, which must match the current shapes.
    pub fn load_parameters(&mut self, params: &ModelParameters) -> Result<()> {
        let loaded = Self::from_parameters(params)?;
        if (loaded.dim(), loaded.features()) != (self.dim(), self.features()) {
            return Err(Error::ShapeMismatch(format!(
                "retriever is {}x{}, parameters are {}x{}",
                self.dim(),
                self.features(),
                loaded.dim(),
                loaded.features()
            )));
        }
        *self = loaded;
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        self.query.weights().checksum() ^ self.context.weights().checksum().rotate_left(1)
    }
}

fn uniform_f32(rng: &mut SplitMix64, bound: f64) -> f64 {
    let x = bound * (2.0 * rng.next_f64() - 1.0);
    let mut w = x as f32;
    if f64::from(w).abs() > bound {
        w = f32::from_bits(w.to_bits() - 1);
    }
    f64::from(w)
}

/// Raw inner product of two embeddings.
pub fn score(query: &[f64], context: &[f64]) -> Result<f64> {
    if query.len() != context.len() {
        return Err(Error::DimensionMismatch {
            expected: query.len(),
            actual: context.len(),
        });
    }
    Ok(dot(query, context))
}
