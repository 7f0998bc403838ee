//! Frozen table of concept vectors standing in for a text encoder: one
//! unit vector per dataset concept, well separated by rejection
//! sampling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptId, NUM_CONCEPTS};
use crate::tensor::Tensor;

/// Maximum allowed pairwise cosine between distinct concept vectors.
pub const CONCEPT_SEPARATION: f64 = 0.3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptEncoder {
    dim: usize,
    seed: u64,
    vectors: Vec<Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

impl ConceptEncoder {
    /// Generates the table from a seed; vectors are resampled until every
    /// pair is separated below [`CONCEPT_SEPARATION`].
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(NUM_CONCEPTS);
        while vectors.len() < NUM_CONCEPTS {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            if vectors.iter().all(|u| cosine(u, &v) < CONCEPT_SEPARATION) {
                vectors.push(v);
            }
        }
        ConceptEncoder { dim, seed, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vector(&self, concept: ConceptId) -> &[f64] {
        &self.vectors[concept.index()]
    }

    pub fn tensor(&self, concept: ConceptId) -> Tensor {
        Tensor::from_vec(self.vector(concept).to_vec()).expect("concept vectors are finite")
    }

    /// All vectors as one `[NUM_CONCEPTS, dim]` matrix (rows are unit
    /// vectors).
    pub fn matrix(&self) -> Tensor {
        let data: Vec<f64> = self.vectors.iter().flatten().copied().collect();
        Tensor::new(vec![NUM_CONCEPTS, self.dim], data).expect("finite")
    }

    pub fn max_pairwise_cosine(&self) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for i in 0..self.vectors.len() {
            for j in i + 1..self.vectors.len() {
                max = max.max(cosine(&self.vectors[i], &self.vectors[j]));
            }
        }
        max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_are_unit_and_separated() {
        let enc = ConceptEncoder::new(64, 0);
        for c in 0..NUM_CONCEPTS {
            let v = enc.vector(ConceptId(c as u8));
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!(enc.max_pairwise_cosine() < CONCEPT_SEPARATION);
    }

    #[test]
    fn regeneration_is_identical() {
        let a = ConceptEncoder::new(64, 3);
        let b = ConceptEncoder::new(64, 3);
        assert_eq!(a.matrix().data(), b.matrix().data());
    }
}
