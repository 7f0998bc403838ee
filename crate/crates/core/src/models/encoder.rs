//! Differentiable image encoder with three heads: a global embedding, a
//! per-patch grid feature map, and a unit-norm identity embedding.
//!
//! Architecture: linear patch projection, then token-mixing tanh layers,
//! then the three heads. The global and grid heads are left unnormalized
//! while the identity head is L2-normalized, mirroring how conditioned
//! generators consume raw semantic features but normalized identity
//! features.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::models::params::{ParamBinding, ParamSet};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub identity_dim: usize,
    pub mixing_layers: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 32,
            channels: 3,
            patch_size: 8,
            embed_dim: 64,
            identity_dim: 32,
            mixing_layers: 2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument("zero-sized encoder".to_string()));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Number of patch tokens `n`.
    pub fn num_tokens(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Which encoder output a consumer reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Global,
    Grid,
    Identity,
}

/// Handles into one encoder forward pass.
pub struct EncoderForward {
    pub tokens: NodeId,
    pub global: NodeId,
    pub grid: NodeId,
    pub identity: NodeId,
}

impl EncoderForward {
    pub fn head(&self, head: Head) -> NodeId {
        match head {
            Head::Global => self.global,
            Head::Grid => self.grid,
            Head::Identity => self.identity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: ParamSet,
    /// Row-major gather indices turning a flat image into `[n, patch_dim]`.
    patch_indices: Rc<Vec<usize>>,
}

fn patch_indices(cfg: &EncoderConfig) -> Vec<usize> {
    let (size, patch, ch) = (cfg.image_size, cfg.patch_size, cfg.channels);
    let per_side = size / patch;
    let mut indices = Vec::with_capacity(size * size * ch);
    for py in 0..per_side {
        for px in 0..per_side {
            for y in 0..patch {
                for x in 0..patch {
                    for c in 0..ch {
                        let gy = py * patch + y;
                        let gx = px * patch + x;
                        indices.push((gy * size + gx) * ch + c);
                    }
                }
            }
        }
    }
    indices
}

impl EncoderModel {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let n = config.num_tokens();
        let d = config.embed_dim;
        let mut builder = ParamSet::builder(config.seed)
            .xavier("patch_proj", vec![config.patch_dim(), d])
            .bias("patch_bias", vec![d]);
        for layer in 0..config.mixing_layers {
            builder = builder
                .xavier(&format!("mix_w{layer}"), vec![n, n])
                .bias(&format!("mix_b{layer}"), vec![d]);
        }
        let params = builder
            .xavier("global_w", vec![d, d])
            .bias("global_b", vec![d])
            .xavier("grid_w", vec![d, d])
            .bias("grid_b", vec![d])
            .xavier("id_w", vec![d, config.identity_dim])
            .bias("id_b", vec![config.identity_dim])
            .build();
        let patch_indices = Rc::new(patch_indices(&config));
        Ok(EncoderModel {
            config,
            params,
            patch_indices,
        })
    }

    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let patch_indices = Rc::new(patch_indices(&config));
        Ok(EncoderModel {
            config,
            params,
            patch_indices,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_input(&self, img: &Tensor) -> Result<()> {
        let expect = [self.config.image_size, self.config.image_size, self.config.channels];
        if img.shape() != expect {
            return Err(Error::ShapeMismatch {
                op: "encoder",
                expected: format!("{expect:?}"),
                got: format!("{:?}", img.shape()),
            });
        }
        Ok(())
    }

    /// Registers the parameters on a tape; reuse one binding for every
    /// image in a batch so adjoints accumulate on shared weights.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamBinding {
        self.params.bind(tape, trainable)
    }

    /// Convenience wrapper: bind then run one image.
    pub fn forward(&self, tape: &mut Tape, image: NodeId, trainable: bool) -> Result<(EncoderForward, ParamBinding)> {
        let binding = self.bind(tape, trainable);
        let fwd = self.forward_on(tape, image, &binding)?;
        Ok((fwd, binding))
    }

    /// Runs the encoder on an already-registered image node against an
    /// existing parameter binding.
    pub fn forward_on(&self, tape: &mut Tape, image: NodeId, binding: &ParamBinding) -> Result<EncoderForward> {
        self.check_input(tape.value(image))?;
        let cfg = &self.config;
        let (n, d) = (cfg.num_tokens(), cfg.embed_dim);

        let flat = tape.reshape(image, vec![cfg.image_size * cfg.image_size * cfg.channels])?;
        let patches = tape.permute(flat, Rc::clone(&self.patch_indices), vec![n, cfg.patch_dim()])?;
        let projected = tape.matmul(patches, binding.node("patch_proj"))?;
        let mut tokens = tape.add(projected, binding.node("patch_bias"))?;
        for layer in 0..cfg.mixing_layers {
            let mixed = tape.matmul(binding.node(&format!("mix_w{layer}")), tokens)?;
            let biased = tape.add(mixed, binding.node(&format!("mix_b{layer}")))?;
            tokens = tape.tanh(biased)?;
        }

        // Mean over tokens as a [1,n] x [n,d] product.
        let pool_weights = tape.constant(Tensor::new(vec![1, n], vec![1.0 / n as f64; n])?);
        let pooled = tape.matmul(pool_weights, tokens)?;

        let global_rows = tape.matmul(pooled, binding.node("global_w"))?;
        let global_row = tape.add(global_rows, binding.node("global_b"))?;
        let global = tape.reshape(global_row, vec![d])?;

        let grid_rows = tape.matmul(tokens, binding.node("grid_w"))?;
        let grid = tape.add(grid_rows, binding.node("grid_b"))?;

        let id_rows = tape.matmul(pooled, binding.node("id_w"))?;
        let id_row = tape.add(id_rows, binding.node("id_b"))?;
        let id_flat = tape.reshape(id_row, vec![cfg.identity_dim])?;
        let identity = tape.normalize_last(id_flat)?;

        Ok(EncoderForward {
            tokens,
            global,
            grid,
            identity,
        })
    }

    fn encode(&self, image: &Image, head: Head) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(image.to_tensor());
        let (fwd, _) = self.forward(&mut tape, x, false)?;
        Ok(tape.value(fwd.head(head)).clone())
    }

    /// Length-`d` global embedding.
    pub fn encode_global(&self, image: &Image) -> Result<Tensor> {
        self.encode(image, Head::Global)
    }

    /// `[n, d]` per-patch grid features.
    pub fn encode_grid(&self, image: &Image) -> Result<Tensor> {
        self.encode(image, Head::Grid)
    }

    /// Unit-norm identity embedding of length `identity_dim`.
    pub fn encode_identity(&self, image: &Image) -> Result<Tensor> {
        self.encode(image, Head::Identity)
    }

    pub fn encode_head(&self, image: &Image, head: Head) -> Result<Tensor> {
        self.encode(image, head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;
    use crate::data::ConceptId;
    use crate::tensor::finite_diff_check;

    fn test_image(seed: u64) -> Image {
        let ds = generate_dataset(seed, 2, 1, ConceptId(0)).unwrap();
        ds.images[0].clone()
    }

    #[test]
    fn shapes_follow_config() {
        let model = EncoderModel::init(EncoderConfig::default()).unwrap();
        let img = test_image(0);
        assert_eq!(model.encode_global(&img).unwrap().shape(), &[64]);
        assert_eq!(model.encode_grid(&img).unwrap().shape(), &[16, 64]);
        assert_eq!(model.encode_identity(&img).unwrap().shape(), &[32]);
    }

    #[test]
    fn config_divisibility_enforced() {
        let cfg = EncoderConfig {
            patch_size: 7,
            ..EncoderConfig::default()
        };
        assert!(EncoderModel::init(cfg).is_err());
    }

    #[test]
    fn encoding_is_deterministic() {
        let model = EncoderModel::init(EncoderConfig::default()).unwrap();
        let img = test_image(1);
        let a = model.encode_global(&img).unwrap();
        let b = model.encode_global(&img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn global_embedding_nondegenerate() {
        let model = EncoderModel::init(EncoderConfig::default()).unwrap();
        let img = test_image(2);
        let g = model.encode_global(&img).unwrap();
        let norm: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm.is_finite() && norm > 0.0);
    }

    #[test]
    fn identity_head_is_unit_norm() {
        let model = EncoderModel::init(EncoderConfig::default()).unwrap();
        for seed in 0..5 {
            let img = test_image(seed);
            let id = model.encode_identity(&img).unwrap();
            let norm: f64 = id.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_mean_differs_from_global() {
        let model = EncoderModel::init(EncoderConfig::default()).unwrap();
        let img = test_image(3);
        let grid = model.encode_grid(&img).unwrap();
        let global = model.encode_global(&img).unwrap();
        let d = 64;
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..16).map(|t| grid.data()[t * d + j]).sum::<f64>() / 16.0)
            .collect();
        let diff: f64 = mean
            .iter()
            .zip(global.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-3, "distinct heads should not coincide");
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        // Small encoder so the finite-difference sweep stays quick.
        let cfg = EncoderConfig {
            image_size: 4,
            channels: 1,
            patch_size: 2,
            embed_dim: 6,
            identity_dim: 4,
            mixing_layers: 2,
            seed: 0,
        };
        let model = EncoderModel::init(cfg).unwrap();
        for head in [Head::Global, Head::Grid, Head::Identity] {
            let graph = |tape: &mut Tape, ids: &[NodeId]| {
                let (fwd, _) = model.forward(tape, ids[0], false)?;
                let h = fwd.head(head);
                let sq = tape.mul(h, h)?;
                tape.sum(sq)
            };
            let x = Tensor::new(vec![4, 4, 1], (0..16).map(|i| (i as f64) / 20.0 + 0.05).collect()).unwrap();
            let err = finite_diff_check(graph, &[x], 1e-4).unwrap();
            assert!(err < 1e-3, "{head:?} FD error {err}");
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let model = EncoderModel::init(EncoderConfig::default()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![16, 16, 3]));
        assert!(model.forward(&mut tape, x, false).is_err());
    }
}
