use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::dot;
use crate::repr::{observation_input, EncoderDecoder};
use crate::vq::{factor_match_fraction, QuantizedLatent};

/// How observations are presented to the value function and reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprMode {
    /// Quantized latents z_q and the factor-match intrinsic reward.
    Discrete,
    /// Continuous latents z_e and the rescaled-cosine intrinsic reward.
    Continuous,
}

impl ReprMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "discrete" => Ok(ReprMode::Discrete),
            "continuous" => Ok(ReprMode::Continuous),
            other => Err(Error::config(format!("unknown repr mode '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReprMode::Discrete => "discrete",
            ReprMode::Continuous => "continuous",
        }
    }
}

/// Cached encoding of one rendered observation.
#[derive(Debug, Clone)]
pub struct ReprEntry {
    /// Downsampled observation (the encoder input).
    pub obs: Rc<Vec<f64>>,
    pub z_e: Rc<Vec<f64>>,
    pub quantized: Rc<QuantizedLatent>,
}

impl ReprEntry {
    /// The vector fed to value functions under the given mode.
    pub fn repr(&self, mode: ReprMode) -> &[f64] {
        match mode {
            ReprMode::Discrete => &self.quantized.z_q,
            ReprMode::Continuous => &self.z_e,
        }
    }
}

/// Raster-keyed memo of encodings. Valid while the encoder and codebook are
/// frozen; joint fine-tuning must bypass it.
#[derive(Debug, Default)]
pub struct ReprCache {
    map: HashMap<Vec<u8>, Rc<ReprEntry>>,
}

impl ReprCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&mut self, model: &EncoderDecoder, raster: &[u8]) -> Result<Rc<ReprEntry>> {
        if let Some(entry) = self.map.get(raster) {
            return Ok(entry.clone());
        }
        let obs = observation_input(raster);
        let entry = Rc::new(encode_entry(model, obs)?);
        self.map.insert(raster.to_vec(), entry.clone());
        Ok(entry)
    }
}

/// Encodes an already-downsampled observation into a cacheable entry.
pub fn encode_entry(model: &EncoderDecoder, obs: Vec<f64>) -> Result<ReprEntry> {
    let q = model.encode_quantized(&obs)?;
    Ok(ReprEntry {
        obs: Rc::new(obs),
        z_e: Rc::new(q.z_e.clone()),
        quantized: Rc::new(q),
    })
}

/// Intrinsic goal-reaching reward in [0,1].
///
/// Discrete mode: fraction of matching factors between the quantized state
/// and goal representations. Continuous mode: cosine similarity of the
/// continuous latents rescaled from [-1,1] to [0,1].
pub fn goal_reward(
    state_obs: &[f64],
    goal_obs: &[f64],
    model: &EncoderDecoder,
    mode: ReprMode,
) -> Result<f64> {
    if !model.trained {
        return Err(Error::usage(
            "goal_reward requires a trained representation model",
        ));
    }
    match mode {
        ReprMode::Discrete => {
            let qs = model.encode_quantized(state_obs)?;
            let qg = model.encode_quantized(goal_obs)?;
            factor_match_fraction(&qs, &qg)
        }
        ReprMode::Continuous => {
            let zs = model.encode(state_obs)?;
            let zg = model.encode(goal_obs)?;
            Ok(rescaled_cosine(&zs, &zg))
        }
    }
}

/// Reward from precomputed cache entries; the hot path during training.
pub fn goal_reward_cached(state: &ReprEntry, goal: &ReprEntry, mode: ReprMode) -> Result<f64> {
    match mode {
        ReprMode::Discrete => factor_match_fraction(&state.quantized, &goal.quantized),
        ReprMode::Continuous => Ok(rescaled_cosine(&state.z_e, &goal.z_e)),
    }
}

pub fn rescaled_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    (cos + 1.0) / 2.0
}
