//! Conditioned image decoder with additively decoupled condition
//! injection: a text-path projection plus a weight-factor-scaled
//! image-feature projection, decoded through a small MLP with a sigmoid
//! output so generated values always land in `[0,1]`.
//!
//! The mixed variant balances a normalized identity embedding against
//! grid features through a structural-scale mixer instead of the
//! text/image split.

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::models::params::{ParamBinding, ParamSet};
use crate::tensor::{NodeId, Tape, Tensor};

/// Which encoder feature the generator is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningKind {
    Global,
    Grid,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: ConditioningKind,
    pub image_size: usize,
    pub channels: usize,
    /// Encoder embedding size `d` (text path and per-token grid width).
    pub embed_dim: usize,
    /// Encoder identity embedding size (mixed kind only).
    pub identity_dim: usize,
    /// Number of grid tokens `n` (grid and mixed kinds).
    pub grid_tokens: usize,
    /// Conditioned hidden state width.
    pub hidden_dim: usize,
    /// Decoder intermediate width.
    pub decoder_dim: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn with_kind(kind: ConditioningKind, seed: u64) -> Self {
        GeneratorConfig {
            kind,
            image_size: 32,
            channels: 3,
            embed_dim: 64,
            identity_dim: 32,
            grid_tokens: 16,
            hidden_dim: 64,
            decoder_dim: 128,
            seed,
        }
    }

    fn image_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    fn feature_dim(&self) -> usize {
        match self.kind {
            ConditioningKind::Global => self.embed_dim,
            ConditioningKind::Grid => self.grid_tokens * self.embed_dim,
            ConditioningKind::Mixed => self.grid_tokens * self.embed_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    params: ParamSet,
}

impl GeneratorModel {
    pub fn init(config: GeneratorConfig) -> Result<Self> {
        let h = config.hidden_dim;
        let mut builder = ParamSet::builder(config.seed)
            .xavier("tau_w", vec![config.embed_dim, h])
            .bias("tau_b", vec![h])
            .xavier("proj_w", vec![config.feature_dim(), h])
            .bias("proj_b", vec![h]);
        if config.kind == ConditioningKind::Mixed {
            builder = builder
                .xavier("mlp_w1", vec![config.identity_dim, h])
                .bias("mlp_b1", vec![h])
                .xavier("mlp_w2", vec![h, h])
                .bias("mlp_b2", vec![h])
                .xavier("mix_id_w", vec![config.identity_dim, h])
                .xavier("mix_grid_w", vec![config.feature_dim(), h])
                .bias("mix_b", vec![h])
                .xavier("mix_out_w", vec![h, h])
                .bias("mix_out_b", vec![h]);
        }
        let params = builder
            .xavier("dec_w1", vec![h, config.decoder_dim])
            .bias("dec_b1", vec![config.decoder_dim])
            .xavier("dec_w2", vec![config.decoder_dim, config.image_len()])
            .bias("dec_b2", vec![config.image_len()])
            .build();
        Ok(GeneratorModel { config, params })
    }

    pub fn from_params(config: GeneratorConfig, params: ParamSet) -> Result<Self> {
        Ok(GeneratorModel { config, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamBinding {
        self.params.bind(tape, trainable)
    }

    fn check_feature_shape(&self, shape: &[usize]) -> Result<()> {
        let ok = match self.config.kind {
            ConditioningKind::Global => shape == [self.config.embed_dim],
            ConditioningKind::Grid => shape == [self.config.grid_tokens, self.config.embed_dim],
            ConditioningKind::Mixed => {
                return Err(Error::InvalidArgument(
                    "mixed generator is conditioned through mix_structural, not inject_condition"
                        .to_string(),
                ))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "inject_condition",
                expected: format!("{:?} feature for {:?} kind", self.config.kind, self.config.kind),
                got: format!("{shape:?}"),
            })
        }
    }

    /// Decoupled injection on the tape: `tau(text) + lambda * proj(feat)`.
    /// Exactly affine in `lambda`; at `lambda == 0` the image branch is
    /// skipped entirely so the result is bitwise `tau(text)`.
    pub fn inject_condition_on(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        text: NodeId,
        image_feat: NodeId,
        lambda: f64,
    ) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} outside [0,1]"
            )));
        }
        self.check_feature_shape(tape.value(image_feat).shape())?;
        let tau = self.text_path_on(tape, bind, text)?;
        if lambda == 0.0 {
            return Ok(tau);
        }
        let feat_row = tape.reshape(image_feat, vec![1, self.config.feature_dim()])?;
        let proj = tape.matmul(feat_row, bind.node("proj_w"))?;
        let proj = tape.add(proj, bind.node("proj_b"))?;
        let scaled = tape.scale(proj, lambda)?;
        tape.add(tau, scaled)
    }

    /// `tau(text)`: the text-only conditioned hidden state `[1, h]`.
    pub fn text_path_on(&self, tape: &mut Tape, bind: &ParamBinding, text: NodeId) -> Result<NodeId> {
        let d = self.config.embed_dim;
        if tape.value(text).shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "text_path",
                expected: format!("[{d}]"),
                got: format!("{:?}", tape.value(text).shape()),
            });
        }
        let row = tape.reshape(text, vec![1, d])?;
        let t = tape.matmul(row, bind.node("tau_w"))?;
        tape.add(t, bind.node("tau_b"))
    }

    /// Structural-scale mixing on the tape:
    /// `MLP(identity) + s * Mixer(identity, grid)`. At `s == 0` the grid
    /// branch is skipped so the output depends only on the identity
    /// embedding.
    pub fn mix_structural_on(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        identity: NodeId,
        grid: NodeId,
        scale: f64,
    ) -> Result<NodeId> {
        if self.config.kind != ConditioningKind::Mixed {
            return Err(Error::InvalidArgument(
                "mix_structural requires a mixed-kind generator".to_string(),
            ));
        }
        if scale < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "structural scale {scale} must be nonnegative"
            )));
        }
        let d_id = self.config.identity_dim;
        if tape.value(identity).shape() != [d_id] {
            return Err(Error::ShapeMismatch {
                op: "mix_structural",
                expected: format!("[{d_id}]"),
                got: format!("{:?}", tape.value(identity).shape()),
            });
        }
        let expect_grid = [self.config.grid_tokens, self.config.embed_dim];
        if tape.value(grid).shape() != expect_grid {
            return Err(Error::ShapeMismatch {
                op: "mix_structural",
                expected: format!("{expect_grid:?}"),
                got: format!("{:?}", tape.value(grid).shape()),
            });
        }

        let id_row = tape.reshape(identity, vec![1, d_id])?;
        let m1 = tape.matmul(id_row, bind.node("mlp_w1"))?;
        let m1 = tape.add(m1, bind.node("mlp_b1"))?;
        let m1 = tape.tanh(m1)?;
        let m2 = tape.matmul(m1, bind.node("mlp_w2"))?;
        let mlp = tape.add(m2, bind.node("mlp_b2"))?;
        if scale == 0.0 {
            return Ok(mlp);
        }

        let grid_row = tape.reshape(grid, vec![1, self.config.feature_dim()])?;
        let from_id = tape.matmul(id_row, bind.node("mix_id_w"))?;
        let from_grid = tape.matmul(grid_row, bind.node("mix_grid_w"))?;
        let cross = tape.add(from_id, from_grid)?;
        let cross = tape.add(cross, bind.node("mix_b"))?;
        let cross = tape.tanh(cross)?;
        let mixer = tape.matmul(cross, bind.node("mix_out_w"))?;
        let mixer = tape.add(mixer, bind.node("mix_out_b"))?;
        let scaled = tape.scale(mixer, scale)?;
        tape.add(mlp, scaled)
    }

    /// Decodes a conditioned hidden state `[1, h]` to an image node
    /// `[size, size, channels]` with sigmoid-bounded values.
    pub fn decode_on(&self, tape: &mut Tape, bind: &ParamBinding, hidden: NodeId) -> Result<NodeId> {
        let h = self.config.hidden_dim;
        if tape.value(hidden).shape() != [1, h] {
            return Err(Error::ShapeMismatch {
                op: "decode",
                expected: format!("[1, {h}]"),
                got: format!("{:?}", tape.value(hidden).shape()),
            });
        }
        let l1 = tape.matmul(hidden, bind.node("dec_w1"))?;
        let l1 = tape.add(l1, bind.node("dec_b1"))?;
        let l1 = tape.tanh(l1)?;
        let l2 = tape.matmul(l1, bind.node("dec_w2"))?;
        let l2 = tape.add(l2, bind.node("dec_b2"))?;
        let bounded = tape.sigmoid(l2)?;
        tape.reshape(
            bounded,
            vec![self.config.image_size, self.config.image_size, self.config.channels],
        )
    }

    /// Tensor-level injection (inference convenience).
    pub fn inject_condition(
        &self,
        text: &Tensor,
        image_feat: &Tensor,
        lambda: f64,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = self.bind(&mut tape, false);
        let t = tape.constant(text.clone());
        let f = tape.constant(image_feat.clone());
        let hidden = self.inject_condition_on(&mut tape, &bind, t, f, lambda)?;
        Ok(tape.value(hidden).clone())
    }

    /// Tensor-level structural mixing (inference convenience).
    pub fn mix_structural(&self, identity: &Tensor, grid: &Tensor, scale: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = self.bind(&mut tape, false);
        let e_f = tape.constant(identity.clone());
        let e_c = tape.constant(grid.clone());
        let hidden = self.mix_structural_on(&mut tape, &bind, e_f, e_c, scale)?;
        Ok(tape.value(hidden).clone())
    }

    /// Decodes a conditioned hidden state to an image.
    pub fn generate(&self, hidden: &Tensor) -> Result<Image> {
        let mut tape = Tape::new();
        let bind = self.bind(&mut tape, false);
        let h = tape.constant(hidden.clone());
        let out = self.decode_on(&mut tape, &bind, h)?;
        let t = tape.value(out);
        Image::new(
            self.config.image_size,
            self.config.image_size,
            self.config.channels,
            t.data().to_vec(),
        )
    }
}
