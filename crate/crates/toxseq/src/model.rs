//! End-to-end classifier: encoder features into the recurrent head.

use crate::encoder::{encode_sequence, EncoderConfig, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::head::{head_forward, HeadConfig, HeadParams};
use crate::rng::Rng;
use crate::tensor::{Tape, Var};
use crate::text::EncodedExample;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Full model: both parameter sets plus the configs that shape them and the
/// seed they were initialized from. Cloning snapshots every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder_config: EncoderConfig,
    pub head_config: HeadConfig,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub seed: u64,
}

/// Model weights registered on a tape.
pub struct BoundModel {
    pub encoder: crate::encoder::BoundEncoder,
    pub head: crate::head::BoundHead,
}

impl Model {
    pub fn init(
        encoder_config: EncoderConfig,
        head_config: HeadConfig,
        seed: u64,
    ) -> Result<Model> {
        let mut rng = Rng::new(seed);
        let encoder = EncoderParams::init(&encoder_config, &mut rng)?;
        let head = HeadParams::init(
            &head_config,
            encoder_config.model_dim,
            encoder_config.max_len,
            &mut rng,
        )?;
        Ok(Model {
            encoder_config,
            head_config,
            encoder,
            head,
            seed,
        })
    }

    /// Zero-weight skeleton with the same shapes as [`Model::init`].
    pub fn zeros(
        encoder_config: EncoderConfig,
        head_config: HeadConfig,
        seed: u64,
    ) -> Result<Model> {
        let encoder = EncoderParams::zeros(&encoder_config)?;
        let head = HeadParams::zeros(
            &head_config,
            encoder_config.model_dim,
            encoder_config.max_len,
        )?;
        Ok(Model {
            encoder_config,
            head_config,
            encoder,
            head,
            seed,
        })
    }

    /// All parameters in canonical order: encoder block then head block.
    pub fn named(&self) -> Vec<(String, &crate::tensor::Tensor)> {
        let mut out = self.encoder.named();
        out.extend(self.head.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut crate::tensor::Tensor)> {
        let mut out = self.encoder.named_mut();
        out.extend(self.head.named_mut());
        out
    }

    /// Binds everything trainable. With `freeze_encoder` the encoder block is
    /// registered gradient-free, so backward never touches it.
    pub fn bind(&self, tape: &mut Tape, freeze_encoder: bool) -> BoundModel {
        let encoder = if freeze_encoder {
            self.encoder.bind_detached(tape)
        } else {
            self.encoder.bind(tape)
        };
        let head = self.head.bind(tape);
        BoundModel { encoder, head }
    }

    /// Class distribution `[1, 2]` for one example.
    pub fn forward_probs(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        example: &EncodedExample,
        mode: &mut Mode,
    ) -> Result<Var> {
        let c = encode_sequence(tape, &bound.encoder, example, &self.encoder_config, mode)?;
        head_forward(
            tape,
            c,
            &example.attention_mask,
            &bound.head,
            &self.head_config,
        )
    }

    /// Toxic probability for one example (eval mode, no randomness).
    pub fn predict_proba(&self, example: &EncodedExample) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let probs = self.forward_probs(&mut tape, &bound, example, &mut Mode::Eval)?;
        Ok(tape.value(probs)[1])
    }

    /// (label, p_toxic); label is 1 iff p_toxic ≥ threshold.
    pub fn predict(&self, example: &EncodedExample, threshold: f64) -> Result<(u8, f64)> {
        let p = self.predict_proba(example)?;
        Ok((u8::from(p >= threshold), p))
    }

    pub fn predict_batch(
        &self,
        examples: &[EncodedExample],
        threshold: f64,
    ) -> Result<Vec<(u8, f64)>> {
        examples
            .iter()
            .map(|ex| self.predict(ex, threshold))
            .collect()
    }

    /// Validation-style loss and label accuracy bookkeeping live in
    /// [`crate::train`]; this exposes the per-example negative log likelihood
    /// used there.
    pub fn example_nll(&self, example: &EncodedExample) -> Result<f64> {
        let label = example
            .label
            .ok_or_else(|| Error::Config("example carries no label".into()))?;
        let p = self.predict_proba(example)?;
        let p_label = if label == 1 { p } else { 1.0 - p };
        Ok(-p_label.max(crate::tensor::PROB_EPS).ln())
    }
}
