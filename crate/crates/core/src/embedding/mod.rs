//! Embedding backends: texts and frames in, unit vectors out.

mod cache;
mod remote;
mod synthetic;

pub use cache::CachedBackend;
pub use remote::{RemoteBackend, DEFAULT_TIMEOUT_MS};
pub use synthetic::{
    synthetic_planted_world, synthetic_frame_ref, DEFAULT_DIM, DEFAULT_ROTATION_RAD, SyntheticBackend, SyntheticParams, SyntheticSpec,
    SyntheticWorld, WorldSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameRef;

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(
                "cannot normalize an empty, zero or non-finite vector".into(),
            ));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub dim: usize,
    pub model_label: String,
}

pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// One unit vector per text, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    /// One unit vector per frame, in input order.
    fn embed_images(&self, frames: &[FrameRef]) -> Result<Vec<EmbeddingVector>>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<B> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_texts(texts)
    }
    fn embed_images(&self, frames: &[FrameRef]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_images(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.6, 0.8]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // 0.6*0.8 + 0.8*0.6
        let c = cosine_similarity(&v(&[0.6, 0.8]), &v(&[0.8, 0.6])).unwrap();
        assert!((c - 0.96).abs() < 1e-12);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_err());
        assert!(EmbeddingVector::normalized(vec![]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(a in proptest::collection::vec(-10.0f64..10.0, 8), b in proptest::collection::vec(-10.0f64..10.0, 8)) {
            if let (Ok(a), Ok(b)) = (EmbeddingVector::normalized(a), EmbeddingVector::normalized(b)) {
                let ab = cosine_similarity(&a, &b).unwrap();
                let ba = cosine_similarity(&b, &a).unwrap();
                proptest::prop_assert_eq!(ab, ba);
                proptest::prop_assert!((-1.0..=1.0).contains(&ab));
                proptest::prop_assert!((a.norm() - 1.0).abs() < 1e-6);
            }
        }
    }
}
