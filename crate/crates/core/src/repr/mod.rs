//! Self-supervised representation learning: an autoencoder with the
//! vector-quantization bottleneck between encoder and decoder, plus the
//! factor-ablation probe used to demonstrate factorization.

mod corpus;
mod synthetic;

pub use corpus::{
    collect_keychest_corpus, collect_rollout_corpus, observation_input, DOWNSAMPLE_FACTOR,
};
pub use synthetic::{
    build_synthetic_factor_dataset, build_with_variants, classify_color, classify_shape,
    color_prototype, shape_mask, SyntheticFactorDataset, MAX_COLORS, MAX_SHAPES,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, mlp_backward_batch, mlp_forward, mlp_forward_batch, AdamState, Activation,
    Checkpoint, DenseMatrix, GradTape, MlpModel, SECTION_CODEBOOK,
};
use crate::vq::{quantize, Codebook, QuantizedLatent, VqConfig};

/// Encoder, decoder, and the shared bottleneck codebook.
#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    pub encoder: MlpModel,
    pub decoder: MlpModel,
    pub codebook: Codebook,
    pub vq: VqConfig,
    /// Whether the bottleneck is applied between encoder and decoder.
    pub bottleneck: bool,
    /// Set once pretraining (or a checkpoint load) has produced usable
    /// representations; downstream reward computation refuses to run before.
    pub trained: bool,
}

impl EncoderDecoder {
    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// z_e for one observation.
    pub fn encode(&self, observation: &[f64]) -> Result<Vec<f64>> {
        if observation.len() != self.encoder.input_dim() {
            return Err(Error::usage(format!(
                "observation dim {} does not match encoder input {}",
                observation.len(),
                self.encoder.input_dim()
            )));
        }
        mlp_forward(&self.encoder, observation, None)
    }

    /// Encode then quantize through the bottleneck.
    pub fn encode_quantized(&self, observation: &[f64]) -> Result<QuantizedLatent> {
        let z_e = self.encode(observation)?;
        quantize(&z_e, &self.codebook, &self.vq)
    }

    /// Full reconstruction through the bottleneck.
    pub fn reconstruct(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let q = self.encode_quantized(observation)?;
        let z = if self.bottleneck { &q.z_q } else { &q.z_e };
        mlp_forward(&self.decoder, z, None)
    }

    /// Reconstruction with the listed factor groups replaced by zero vectors
    /// inside z_q before decoding.
    pub fn factor_ablation_reconstruct(
        &self,
        observation: &[f64],
        zeroed_groups: &[usize],
    ) -> Result<Vec<f64>> {
        let q = self.encode_quantized(observation)?;
        let seg_dim = self.latent_dim() / self.vq.factor_count;
        let mut z = q.z_q.clone();
        for &g in zeroed_groups {
            if g >= self.vq.factor_count {
                return Err(Error::usage(format!(
                    "factor group {g} out of range (G={})",
                    self.vq.factor_count
                )));
            }
            z[g * seg_dim..(g + 1) * seg_dim].fill(0.0);
        }
        mlp_forward(&self.decoder, &z, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new();
        ckpt.add_model("encoder", &self.encoder);
        ckpt.add_model("decoder", &self.decoder);
        ckpt.add_raw(SECTION_CODEBOOK, "codebook", self.codebook.to_bytes());
        ckpt.save(path)
    }

    pub fn load(path: &Path, vq: VqConfig, bottleneck: bool) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let encoder = ckpt.model("encoder")?;
        let decoder = ckpt.model("decoder")?;
        let codebook = Codebook::from_bytes(ckpt.raw(SECTION_CODEBOOK, "codebook")?)?;
        Ok(Self {
            encoder,
            decoder,
            codebook,
            vq,
            bottleneck,
            trained: true,
        })
    }
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub vq: VqConfig,
    pub bottleneck: bool,
    pub seed: u64,
    /// Bottleneck-codebook revival cadence, in updates.
    pub revive_every: usize,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("latent_dim, epochs, batch_size must be positive"));
        }
        if self.latent_dim % self.vq.factor_count != 0 {
            return Err(Error::config(format!(
                "latent dim {} is not divisible by factor count {}",
                self.latent_dim, self.vq.factor_count
            )));
        }
        self.vq.validate()
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            epochs: 3,
            batch_size: 64,
            hidden: vec![256, 256],
            learning_rate: 1e-3,
            vq: VqConfig::default(),
            bottleneck: true,
            seed: 0,
            revive_every: 50,
        }
    }
}

/// Training-curve record returned together with the trained model.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: EncoderDecoder,
    /// Mean total loss (MSE + commitment) per epoch.
    pub loss_curve: Vec<f64>,
    pub mse_curve: Vec<f64>,
    pub commitment_curve: Vec<f64>,
}

/// Trains the autoencoder with the discretization bottleneck on a dataset of
/// flattened observations.
///
/// Loss per batch: mean squared reconstruction error plus the mean
/// commitment loss across the batch; gradients pass straight through the
/// quantization; codes follow their assigned segments by EMA.
pub fn pretrain(data: &[Vec<f64>], config: &PretrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::config("pretraining dataset is empty"));
    }
    let input_dim = data[0].len();
    if data.iter().any(|d| d.len() != input_dim) {
        return Err(Error::config("pretraining dataset has ragged observations"));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let m = config.latent_dim;
    let mut enc_dims = vec![input_dim];
    enc_dims.extend_from_slice(&config.hidden);
    enc_dims.push(m);
    let mut enc_acts = vec![Activation::Relu; config.hidden.len()];
    enc_acts.push(Activation::Identity);
    let mut dec_dims = vec![m];
    dec_dims.extend(config.hidden.iter().rev());
    dec_dims.push(input_dim);
    let dec_acts = enc_acts.clone();

    let mut encoder = MlpModel::glorot(&enc_dims, &enc_acts, &mut rng)?;
    let mut decoder = MlpModel::glorot(&dec_dims, &dec_acts, &mut rng)?;
    let mut enc_opt = AdamState::new(encoder.param_count());
    let mut dec_opt = AdamState::new(decoder.param_count());

    let seg_dim = m / config.vq.factor_count;
    let mut codebook: Option<Codebook> = None;
    let mut recent_segments: Vec<Vec<f64>> = Vec::new();

    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut mse_curve = Vec::with_capacity(config.epochs);
    let mut commitment_curve = Vec::with_capacity(config.epochs);
    let mut update_count = 0usize;

    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_mse = 0.0;
        let mut epoch_commit = 0.0;
        let mut batches = 0.0;

        for (batch_no, chunk) in indices.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            let mut x = DenseMatrix::zeros(b, input_dim);
            for (r, &idx) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(&data[idx]);
            }

            let mut enc_tape = GradTape::new();
            let z_e = mlp_forward_batch(&encoder, &x, Some(&mut enc_tape))?;

            if codebook.is_none() && config.bottleneck {
                // Data-driven init: sample codes from the first batch's segments.
                let mut segs: Vec<Vec<f64>> = Vec::with_capacity(b * config.vq.factor_count);
                for r in 0..b {
                    for s in z_e.row(r).chunks_exact(seg_dim) {
                        segs.push(s.to_vec());
                    }
                }
                segs.shuffle(&mut rng);
                codebook = Some(Codebook::init_from_samples(
                    config.vq.codebook_size,
                    seg_dim,
                    &segs,
                    config.vq.eta,
                    &mut rng,
                )?);
            }

            // Quantize each row; batch commitment is the mean across rows.
            let mut z_dec = DenseMatrix::zeros(b, m);
            let mut commitment = 0.0;
            let mut assignments_buf: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut quantized: Vec<QuantizedLatent> = Vec::with_capacity(b);
            if config.bottleneck {
                let cb = codebook.as_ref().unwrap();
                for r in 0..b {
                    let q = quantize(z_e.row(r), cb, &config.vq)?;
                    commitment += q.commitment;
                    z_dec.row_mut(r).copy_from_slice(&q.z_q);
                    for (i, seg) in q.z_e.chunks_exact(seg_dim).enumerate() {
                        assignments_buf.push((q.factor_indices[i], seg.to_vec()));
                    }
                    quantized.push(q);
                }
                commitment /= b as f64;
            } else {
                z_dec = z_e.clone();
            }

            let mut dec_tape = GradTape::new();
            let recon = mlp_forward_batch(&decoder, &z_dec, Some(&mut dec_tape))?;

            let inv = 1.0 / (b * input_dim) as f64;
            let mut mse_val = 0.0;
            let mut d_recon = DenseMatrix::zeros(b, input_dim);
            for r in 0..b {
                let rr = recon.row(r);
                let xr = x.row(r);
                let dr = d_recon.row_mut(r);
                for i in 0..input_dim {
                    let diff = rr[i] - xr[i];
                    mse_val += diff * diff;
                    dr[i] = 2.0 * diff * inv;
                }
            }
            mse_val *= inv;
            let loss = mse_val + commitment;
            if !loss.is_finite() {
                return Err(Error::fault(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}"
                )));
            }

            let (dec_grads, d_zdec) = mlp_backward_batch(&decoder, &dec_tape, &d_recon)?;

            // Straight-through into the encoder plus the batch-mean
            // commitment gradient 2 beta / (G b) (c_i - e_{o_i}).
            let mut d_ze = d_zdec;
            if config.bottleneck {
                let cb = codebook.as_ref().unwrap();
                let scale = 2.0 * config.vq.beta / (config.vq.factor_count * b) as f64;
                for (r, q) in quantized.iter().enumerate() {
                    let row = d_ze.row_mut(r);
                    for (i, &code_idx) in q.factor_indices.iter().enumerate() {
                        let code = cb.code(code_idx);
                        for j in 0..seg_dim {
                            let c = q.z_e[i * seg_dim + j];
                            row[i * seg_dim + j] += scale * (c - code[j]);
                        }
                    }
                }
            }

            let (enc_grads, _) = mlp_backward_batch(&encoder, &enc_tape, &d_ze)?;
            adam_step(&mut decoder, &dec_grads, &mut dec_opt, config.learning_rate)?;
            adam_step(&mut encoder, &enc_grads, &mut enc_opt, config.learning_rate)?;

            if config.bottleneck {
                let cb = codebook.as_mut().unwrap();
                let assigns: Vec<(&[f64], usize)> = assignments_buf
                    .iter()
                    .map(|(idx, seg)| (seg.as_slice(), *idx))
                    .collect();
                cb.ema_update(&assigns)?;
                recent_segments.clear();
                recent_segments.extend(assignments_buf.iter().map(|(_, s)| s.clone()));
                update_count += 1;
                if config.revive_every > 0 && update_count % config.revive_every == 0 {
                    cb.revive_dead_codes(&recent_segments, &config.vq, &mut rng)?;
                }
            }

            epoch_loss += loss;
            epoch_mse += mse_val;
            epoch_commit += commitment;
            batches += 1.0;
        }

        loss_curve.push(epoch_loss / batches);
        mse_curve.push(epoch_mse / batches);
        commitment_curve.push(epoch_commit / batches);
    }

    let codebook = match codebook {
        Some(cb) => cb,
        // Bottleneck disabled: keep a placeholder codebook so the type stays
        // uniform; it is never consulted when `bottleneck` is false.
        None => Codebook::init_from_samples(
            config.vq.codebook_size,
            seg_dim,
            &[],
            config.vq.eta,
            &mut rng,
        )?,
    };

    Ok(PretrainOutcome {
        model: EncoderDecoder {
            encoder,
            decoder,
            codebook,
            vq: config.vq.clone(),
            bottleneck: config.bottleneck,
            trained: true,
        },
        loss_curve,
        mse_curve,
        commitment_curve,
    })
}

/// Mean squared error between two equally shaped vectors.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}
