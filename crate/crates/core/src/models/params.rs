//! Named flat parameter storage shared by all trainable models, plus a
//! small Adam optimizer.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, NodeId, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter vector with named, shaped views. The flat layout keeps
/// checkpointing, optimizer state, and gradient gathering trivial.
#[derive(Debug, Clone)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn builder(seed: u64) -> ParamSetBuilder {
        ParamSetBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            specs: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn from_parts(specs: Vec<ParamSpec>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = specs.iter().map(|s| s.len).sum();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter data length {} does not match specs ({expected})",
                data.len()
            )));
        }
        Ok(ParamSet { specs, data })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn spec(&self, name: &str) -> Result<&ParamSpec> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let spec = self.spec(name)?;
        Tensor::new(
            spec.shape.clone(),
            self.data[spec.offset..spec.offset + spec.len].to_vec(),
        )
    }

    /// Registers every parameter on the tape. `trainable` parameters are
    /// tape inputs (they receive adjoints); otherwise they are constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamBinding {
        let nodes = self
            .specs
            .iter()
            .map(|spec| {
                let t = Tensor::new(
                    spec.shape.clone(),
                    self.data[spec.offset..spec.offset + spec.len].to_vec(),
                )
                .expect("parameters are finite");
                if trainable {
                    tape.input(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        ParamBinding {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            offsets: self.specs.iter().map(|s| (s.offset, s.len)).collect(),
            nodes,
            total: self.data.len(),
        }
    }
}

pub struct ParamSetBuilder {
    rng: ChaCha8Rng,
    specs: Vec<ParamSpec>,
    data: Vec<f64>,
}

impl ParamSetBuilder {
    /// Adds a parameter initialized uniformly in `[-bound, bound]`.
    pub fn uniform(mut self, name: &str, shape: Vec<usize>, bound: f64) -> Self {
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        for _ in 0..len {
            self.data.push(self.rng.gen_range(-bound..=bound));
        }
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape,
            offset,
            len,
        });
        self
    }

    /// Adds a parameter with Xavier-style uniform init for the given
    /// fan-in/fan-out.
    pub fn xavier(self, name: &str, shape: Vec<usize>) -> Self {
        let (fan_in, fan_out) = match shape.as_slice() {
            [rows, cols] => (*rows, *cols),
            [n] => (*n, *n),
            _ => (shape.iter().product(), 1),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    /// Adds a bias-style parameter with small nonzero init so heads are
    /// nondegenerate from the start.
    pub fn bias(self, name: &str, shape: Vec<usize>) -> Self {
        self.uniform(name, shape, 0.05)
    }

    pub fn build(self) -> ParamSet {
        ParamSet {
            specs: self.specs,
            data: self.data,
        }
    }
}

/// Tape handles for one bound parameter set.
pub struct ParamBinding {
    names: Vec<String>,
    offsets: Vec<(usize, usize)>,
    nodes: Vec<NodeId>,
    total: usize,
}

impl ParamBinding {
    pub fn node(&self, name: &str) -> NodeId {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"));
        self.nodes[idx]
    }

    /// Gathers per-parameter adjoints back into flat layout.
    pub fn flat_grads(&self, grads: &Gradients) -> Result<Vec<f64>> {
        let mut flat = vec![0.0; self.total];
        for ((offset, len), node) in self.offsets.iter().zip(&self.nodes) {
            let g = grads.wrt(*node)?;
            flat[*offset..offset + len].copy_from_slice(g.data());
        }
        Ok(flat)
    }
}

/// Adam with bias correction; state lives next to the flat parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_is_deterministic() {
        let a = ParamSet::builder(9).xavier("w", vec![3, 4]).bias("b", vec![4]).build();
        let b = ParamSet::builder(9).xavier("w", vec![3, 4]).bias("b", vec![4]).build();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.tensor("w").unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn adam_descends_quadratic() {
        // minimize (x-3)^2
        let mut params = vec![0.0];
        let mut opt = Adam::new(1, 0.1);
        for _ in 0..500 {
            let g = 2.0 * (params[0] - 3.0);
            opt.step(&mut params, &[g]);
        }
        assert!((params[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn binding_gathers_grads() {
        let set = ParamSet::builder(1).uniform("w", vec![2], 1.0).build();
        let mut tape = Tape::new();
        let binding = set.bind(&mut tape, true);
        let w = binding.node("w");
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let flat = binding.flat_grads(&grads).unwrap();
        for (f, w) in flat.iter().zip(set.data()) {
            assert!((f - 2.0 * w).abs() < 1e-12);
        }
    }
}
