//! Multi-factor vector-quantization bottleneck.
//!
//! A continuous latent of dimension `m` is split into `G` segments, each
//! segment is snapped to its nearest code in a shared codebook, and the
//! selected codes are concatenated back into the quantized latent. Codes are
//! maintained with an exponential moving average toward their assigned
//! segments; the encoder is pulled toward the codes by the commitment loss
//! and receives downstream gradients through the straight-through estimator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, squared_distance, DenseMatrix};

/// Bottleneck hyperparameters.
#[derive(Debug, Clone)]
pub struct VqConfig {
    /// Number of factors the latent is split into.
    pub factor_count: usize,
    /// Codebook size (number of codes shared across factors).
    pub codebook_size: usize,
    /// Commitment loss weight.
    pub beta: f64,
    /// EMA decay for code updates.
    pub eta: f64,
    /// Effective cluster size below which a code counts as unused.
    pub dead_code_threshold: f64,
    /// Consecutive updates a code may stay unused before revival.
    pub dead_code_patience: u32,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            factor_count: 16,
            codebook_size: 256,
            beta: 0.25,
            eta: 0.99,
            dead_code_threshold: 1e-3,
            dead_code_patience: 100,
        }
    }
}

impl VqConfig {
    pub fn with_factors(factor_count: usize) -> Self {
        Self {
            factor_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor_count == 0 || self.codebook_size == 0 {
            return Err(Error::config("factor_count and codebook_size must be >= 1"));
        }
        if self.beta < 0.0 {
            return Err(Error::config("beta must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("eta must lie in [0,1]"));
        }
        Ok(())
    }
}

/// Shared codebook of `L` code vectors of dimension `m/G`, with EMA usage
/// statistics used for dead-code detection.
#[derive(Debug, Clone)]
pub struct Codebook {
    codes: DenseMatrix,
    ema_cluster_size: Vec<f64>,
    ema_code_sum: DenseMatrix,
    eta: f64,
    /// Consecutive updates each code spent below the dead-code threshold.
    starved_updates: Vec<u32>,
}

impl Codebook {
    /// Initialises codes from provided segment samples, topping up with
    /// unit-normal noise when fewer samples than codes are available.
    pub fn init_from_samples(
        code_count: usize,
        seg_dim: usize,
        samples: &[Vec<f64>],
        eta: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if code_count == 0 {
            return Err(Error::config("codebook must contain at least one code"));
        }
        if seg_dim == 0 {
            return Err(Error::config("segment dimension must be >= 1"));
        }
        let mut codes = DenseMatrix::zeros(code_count, seg_dim);
        for j in 0..code_count {
            if j < samples.len() {
                if samples[j].len() != seg_dim {
                    return Err(Error::config(format!(
                        "init sample {} has dim {}, expected {seg_dim}",
                        j,
                        samples[j].len()
                    )));
                }
                codes.row_mut(j).copy_from_slice(&samples[j]);
            } else {
                for v in codes.row_mut(j) {
                    *v = standard_normal(rng);
                }
            }
        }
        let ema_code_sum = codes.clone();
        Ok(Self {
            codes,
            ema_cluster_size: vec![1.0; code_count],
            ema_code_sum,
            eta,
            starved_updates: vec![0; code_count],
        })
    }

    pub fn code_count(&self) -> usize {
        self.codes.rows()
    }

    pub fn seg_dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn code(&self, idx: usize) -> &[f64] {
        self.codes.row(idx)
    }

    pub fn ema_cluster_size(&self) -> &[f64] {
        &self.ema_cluster_size
    }

    /// Fraction of codes selected at least once in `assignments`, and the
    /// entropy (nats) of the usage distribution. Diagnostics for collapse.
    pub fn usage_entropy(counts: &[usize]) -> f64 {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let mut h = 0.0;
        for &c in counts {
            if c > 0 {
                let p = c as f64 / total as f64;
                h -= p * p.ln();
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.code_count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.seg_dim() as u32).to_le_bytes());
        nn::write_f64(&mut out, self.eta);
        nn::write_f64s(&mut out, self.codes.as_slice());
        nn::write_f64s(&mut out, &self.ema_cluster_size);
        nn::write_f64s(&mut out, self.ema_code_sum.as_slice());
        out
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self> {
        let mut cur = payload;
        let code_count = nn::take_u32(&mut cur)? as usize;
        let seg_dim = nn::take_u32(&mut cur)? as usize;
        let eta = nn::take_f64(&mut cur)?;
        let codes = nn::take_f64s(&mut cur, code_count * seg_dim)?;
        let ema_cluster_size = nn::take_f64s(&mut cur, code_count)?;
        let ema_code_sum = nn::take_f64s(&mut cur, code_count * seg_dim)?;
        Ok(Self {
            codes: DenseMatrix::from_vec(code_count, seg_dim, codes)?,
            ema_cluster_size,
            ema_code_sum: DenseMatrix::from_vec(code_count, seg_dim, ema_code_sum)?,
            eta,
            starved_updates: vec![0; code_count],
        })
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; avoids pulling in rand_distr for one draw site.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A quantized latent: the continuous input, the per-factor code choices,
/// their concatenation, and the commitment-loss value.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLatent {
    pub z_e: Vec<f64>,
    pub factor_indices: Vec<usize>,
    pub z_q: Vec<f64>,
    pub commitment: f64,
}

/// Splits `z_e` into `factor_count` equal contiguous segments.
pub fn split_segments(z_e: &[f64], factor_count: usize) -> Result<Vec<&[f64]>> {
    if factor_count == 0 {
        return Err(Error::config("factor count must be >= 1"));
    }
    if z_e.len() % factor_count != 0 {
        return Err(Error::config(format!(
            "latent dim {} is not divisible by factor count {}",
            z_e.len(),
            factor_count
        )));
    }
    Ok(z_e.chunks_exact(z_e.len() / factor_count).collect())
}

/// Index and code of the nearest codebook entry under Euclidean distance.
/// Ties break toward the lowest index.
pub fn nearest_code<'a>(segment: &[f64], codebook: &'a Codebook) -> Result<(usize, &'a [f64])> {
    if codebook.code_count() == 0 {
        return Err(Error::config("codebook is empty"));
    }
    if segment.len() != codebook.seg_dim() {
        return Err(Error::usage(format!(
            "segment dim {} does not match codebook dim {}",
            segment.len(),
            codebook.seg_dim()
        )));
    }
    let mut best = 0;
    let mut best_dist = squared_distance(segment, codebook.code(0));
    for j in 1..codebook.code_count() {
        let d = squared_distance(segment, codebook.code(j));
        if d < best_dist {
            best_dist = d;
            best = j;
        }
    }
    Ok((best, codebook.code(best)))
}

/// Commitment loss (beta / G) * sum_i ||c_i - e_{o_i}||^2 for one latent.
/// Codes are treated as constants; the gradient flows only to the segments.
pub fn commitment_loss(
    segments: &[&[f64]],
    selected_codes: &[&[f64]],
    beta: f64,
    factor_count: usize,
) -> Result<f64> {
    if segments.len() != selected_codes.len() {
        return Err(Error::usage("segment/code count mismatch"));
    }
    let mut total = 0.0;
    for (seg, code) in segments.iter().zip(selected_codes) {
        if seg.len() != code.len() {
            return Err(Error::usage("segment/code dim mismatch"));
        }
        total += squared_distance(seg, code);
    }
    Ok(beta / factor_count as f64 * total)
}

/// Full discretization: split, per-segment nearest-code lookup, concatenate.
pub fn quantize(z_e: &[f64], codebook: &Codebook, config: &VqConfig) -> Result<QuantizedLatent> {
    let segments = split_segments(z_e, config.factor_count)?;
    let mut factor_indices = Vec::with_capacity(config.factor_count);
    let mut z_q = Vec::with_capacity(z_e.len());
    let mut selected: Vec<&[f64]> = Vec::with_capacity(config.factor_count);
    for seg in &segments {
        let (idx, code) = nearest_code(seg, codebook)?;
        factor_indices.push(idx);
        z_q.extend_from_slice(code);
        selected.push(code);
    }
    let commitment = commitment_loss(&segments, &selected, config.beta, config.factor_count)?;
    Ok(QuantizedLatent {
        z_e: z_e.to_vec(),
        factor_indices,
        z_q,
        commitment,
    })
}

/// Straight-through gradient wrt `z_e`: the upstream gradient wrt `z_q` is
/// copied through the quantization and the analytic commitment gradient
/// `2 (beta/G) (c_i - e_{o_i})` is added per segment.
pub fn straight_through_grad(
    quantized: &QuantizedLatent,
    codebook: &Codebook,
    config: &VqConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if upstream.len() != quantized.z_e.len() {
        return Err(Error::usage(format!(
            "upstream gradient dim {} does not match latent dim {}",
            upstream.len(),
            quantized.z_e.len()
        )));
    }
    let seg_dim = codebook.seg_dim();
    let scale = 2.0 * config.beta / config.factor_count as f64;
    let mut grad = upstream.to_vec();
    for (i, &code_idx) in quantized.factor_indices.iter().enumerate() {
        let code = codebook.code(code_idx);
        let seg = &quantized.z_e[i * seg_dim..(i + 1) * seg_dim];
        let gseg = &mut grad[i * seg_dim..(i + 1) * seg_dim];
        for ((g, c), e) in gseg.iter_mut().zip(seg).zip(code) {
            *g += scale * (c - e);
        }
    }
    Ok(grad)
}

/// Fraction of factor positions whose code indices agree.
pub fn factor_match_fraction(a: &QuantizedLatent, b: &QuantizedLatent) -> Result<f64> {
    if a.factor_indices.len() != b.factor_indices.len() {
        return Err(Error::usage(format!(
            "factor counts differ: {} vs {}",
            a.factor_indices.len(),
            b.factor_indices.len()
        )));
    }
    let matches = a
        .factor_indices
        .iter()
        .zip(&b.factor_indices)
        .filter(|(x, y)| x == y)
        .count();
    Ok(matches as f64 / a.factor_indices.len() as f64)
}

impl Codebook {
    /// EMA update from a batch of (segment, selected index) assignments.
    ///
    /// Each selected code moves toward the mean of its assigned segments:
    /// `e <- eta e + (1 - eta) mean(assigned)`. Unassigned codes are left
    /// untouched this step. The running cluster-size and code-sum statistics
    /// decay every step regardless.
    pub fn ema_update(&mut self, assignments: &[(&[f64], usize)]) -> Result<()> {
        let l = self.code_count();
        let seg_dim = self.seg_dim();
        let mut counts = vec![0usize; l];
        let mut sums = DenseMatrix::zeros(l, seg_dim);
        for (seg, idx) in assignments {
            if *idx >= l {
                return Err(Error::usage(format!("assignment index {idx} out of range")));
            }
            if seg.len() != seg_dim {
                return Err(Error::usage("assignment segment dim mismatch"));
            }
            counts[*idx] += 1;
            for (s, v) in sums.row_mut(*idx).iter_mut().zip(*seg) {
                *s += v;
            }
        }

        for j in 0..l {
            // Statistics advance every update; they drive dead-code detection.
            self.ema_cluster_size[j] =
                self.eta * self.ema_cluster_size[j] + (1.0 - self.eta) * counts[j] as f64;
            for (m, s) in self
                .ema_code_sum
                .row_mut(j)
                .iter_mut()
                .zip(sums.row(j))
            {
                *m = self.eta * *m + (1.0 - self.eta) * s;
            }
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                let eta = self.eta;
                let sum_row = sums.row(j).to_vec();
                for (e, s) in self.codes.row_mut(j).iter_mut().zip(sum_row) {
                    *e = eta * *e + (1.0 - eta) * s * inv;
                }
            }
        }
        Ok(())
    }

    /// Resets codes that stayed below the dead-code threshold for the
    /// configured patience to randomly chosen recent segments.
    ///
    /// Returns the indices of revived codes.
    pub fn revive_dead_codes(
        &mut self,
        recent_segments: &[Vec<f64>],
        config: &VqConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>> {
        if recent_segments.is_empty() {
            return Err(Error::usage("revive_dead_codes needs candidate segments"));
        }
        let mut revived = Vec::new();
        for j in 0..self.code_count() {
            if self.ema_cluster_size[j] < config.dead_code_threshold {
                self.starved_updates[j] = self.starved_updates[j].saturating_add(1);
            } else {
                self.starved_updates[j] = 0;
            }
            if self.starved_updates[j] >= config.dead_code_patience {
                let pick = &recent_segments[rng.gen_range(0..recent_segments.len())];
                if pick.len() != self.seg_dim() {
                    return Err(Error::usage("revival segment dim mismatch"));
                }
                self.codes.row_mut(j).copy_from_slice(pick);
                self.ema_cluster_size[j] = 1.0;
                self.ema_code_sum.row_mut(j).copy_from_slice(pick);
                self.starved_updates[j] = 0;
                revived.push(j);
            }
        }
        Ok(revived)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn codebook_from_rows(rows: &[&[f64]]) -> Codebook {
        let samples: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Codebook::init_from_samples(rows.len(), rows[0].len(), &samples, 0.99, &mut rng).unwrap()
    }

    #[test]
    fn split_divides_in_order() {
        let segs = split_segments(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(segs, vec![&[1.0, 2.0][..], &[3.0, 4.0][..]]);
        let segs = split_segments(&[5.0], 1).unwrap();
        assert_eq!(segs, vec![&[5.0][..]]);
    }

    #[test]
    fn split_round_trips_by_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = rng.gen_range(1..6usize);
            let m = g * rng.gen_range(1..5usize);
            let z: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let segs = split_segments(&z, g).unwrap();
            let rebuilt: Vec<f64> = segs.concat();
            assert_eq!(rebuilt, z);
        }
    }

    #[test]
    fn split_rejects_indivisible_length() {
        let err = split_segments(&[1.0, 2.0, 3.0], 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "message names m and G: {msg}");
    }

    #[test]
    fn nearest_code_finds_exact_member() {
        let cb = codebook_from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]);
        let (idx, code) = nearest_code(&[2.0, 2.0], &cb).unwrap();
        assert_eq!(idx, 3);
        assert_eq!(code, &[2.0, 2.0]);
    }

    #[test]
    fn nearest_code_matches_exhaustive_oracle() {
        let cb = codebook_from_rows(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let seg = [0.1, -0.2];
        // Oracle: brute-force over all codes.
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..cb.code_count() {
            let d: f64 = seg
                .iter()
                .zip(cb.code(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        assert_eq!(best, 0);
        let (idx, _) = nearest_code(&seg, &cb).unwrap();
        assert_eq!(idx, best);
    }

    #[test]
    fn nearest_code_breaks_ties_low() {
        // Codes at indices 2 and 5 equidistant from the query.
        let cb = codebook_from_rows(&[
            &[9.0, 9.0],
            &[-9.0, 9.0],
            &[1.0, 0.0],
            &[9.0, -9.0],
            &[-9.0, -9.0],
            &[-1.0, 0.0],
        ]);
        let (idx, _) = nearest_code(&[0.0, 0.0], &cb).unwrap();
        assert_eq!(idx, 2);
    }

    #[test]
    fn quantize_concatenates_selected_codes() {
        let cb = codebook_from_rows(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let cfg = VqConfig {
            factor_count: 2,
            codebook_size: 2,
            ..VqConfig::default()
        };
        let q = quantize(&[0.1, -0.2, 0.9, 1.2], &cb, &cfg).unwrap();
        assert_eq!(q.factor_indices, vec![0, 1]);
        assert_eq!(q.z_q, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn quantize_is_a_fixed_point_on_codebook_rows() {
        let cb = codebook_from_rows(&[&[0.5, -0.5], &[1.5, 2.5]]);
        let cfg = VqConfig {
            factor_count: 2,
            codebook_size: 2,
            ..VqConfig::default()
        };
        let z_e = [1.5, 2.5, 0.5, -0.5];
        let q = quantize(&z_e, &cb, &cfg).unwrap();
        assert_eq!(q.z_q, z_e.to_vec());
        assert_eq!(q.commitment, 0.0);
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let cb = Codebook::init_from_samples(8, 3, &samples, 0.99, &mut rng).unwrap();
        let cfg = VqConfig {
            factor_count: 4,
            codebook_size: 8,
            ..VqConfig::default()
        };
        for _ in 0..50 {
            let z: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q1 = quantize(&z, &cb, &cfg).unwrap();
            let q2 = quantize(&q1.z_q, &cb, &cfg).unwrap();
            assert_eq!(q1.factor_indices, q2.factor_indices);
            assert_eq!(q1.z_q, q2.z_q);
            // Membership: every z_q segment is bit-identical to a codebook row.
            for (i, &idx) in q1.factor_indices.iter().enumerate() {
                assert_eq!(&q1.z_q[i * 3..(i + 1) * 3], cb.code(idx));
            }
        }
    }

    #[test]
    fn commitment_loss_direct_arithmetic() {
        // residuals [0,0] and [0.2,0]: (0.25/2) * 0.04 = 0.005
        let segs: Vec<&[f64]> = vec![&[1.0, 1.0], &[0.2, 0.0]];
        let codes: Vec<&[f64]> = vec![&[1.0, 1.0], &[0.0, 0.0]];
        let loss = commitment_loss(&segs, &codes, 0.25, 2).unwrap();
        assert!((loss - 0.005).abs() < 1e-15);

        let zero = commitment_loss(&segs[..1], &codes[..1], 0.25, 1).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn ema_decay_extremes() {
        // eta = 1: codebook unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = vec![vec![1.0], vec![2.0]];
        let mut cb = Codebook::init_from_samples(2, 1, &samples, 1.0, &mut rng).unwrap();
        cb.ema_update(&[(&[5.0], 0)]).unwrap();
        assert_eq!(cb.code(0), &[1.0]);

        // eta = 0: code jumps to the assigned segment.
        let mut cb = Codebook::init_from_samples(2, 1, &samples, 0.0, &mut rng).unwrap();
        cb.ema_update(&[(&[5.0], 1)]).unwrap();
        assert_eq!(cb.code(1), &[5.0]);

        // eta = 0.99 direct arithmetic: 0.99*1.0 + 0.01*0.0 = 0.99.
        let mut cb = Codebook::init_from_samples(2, 1, &samples, 0.99, &mut rng).unwrap();
        cb.ema_update(&[(&[0.0], 0)]).unwrap();
        assert!((cb.code(0)[0] - 0.99).abs() < 1e-15);
        // Unassigned code untouched.
        assert_eq!(cb.code(1), &[2.0]);
    }

    #[test]
    fn ema_contracts_geometrically_to_assignment_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = vec![vec![10.0, -10.0]];
        let mut cb = Codebook::init_from_samples(1, 2, &samples, 0.9, &mut rng).unwrap();
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mean = [2.0, 3.0];
        let mut prev_gap = f64::INFINITY;
        for step in 0..100 {
            cb.ema_update(&[(&a, 0), (&b, 0)]).unwrap();
            let gap: f64 = cb
                .code(0)
                .iter()
                .zip(&mean)
                .map(|(x, y)| (x - y).abs())
                .sum();
            if step > 0 {
                // Geometric contraction at rate eta.
                assert!(gap <= prev_gap * 0.9 + 1e-12, "step {step}: {gap} vs {prev_gap}");
            }
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-2);
    }

    #[test]
    fn straight_through_copies_upstream_and_adds_commitment() {
        let cb = codebook_from_rows(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let cfg = VqConfig {
            factor_count: 2,
            codebook_size: 2,
            beta: 0.25,
            ..VqConfig::default()
        };
        let q = quantize(&[0.0, 0.0, 1.0, 1.0], &cb, &cfg).unwrap();
        // Exactly on codes: commitment gradient is zero, upstream copies.
        let g = straight_through_grad(&q, &cb, &cfg, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g, vec![1.0, 2.0, 3.0, 4.0]);

        // Zero upstream leaves only 2 (beta/G) (c - e).
        let q = quantize(&[0.2, 0.0, 1.0, 1.0], &cb, &cfg).unwrap();
        let g = straight_through_grad(&q, &cb, &cfg, &[0.0; 4]).unwrap();
        let expected = 2.0 * (0.25 / 2.0) * 0.2;
        assert!((g[0] - expected).abs() < 1e-15);
        assert_eq!(&g[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn commitment_gradient_matches_finite_differences() {
        let cb = codebook_from_rows(&[&[0.1, -0.3], &[0.8, 0.9]]);
        let cfg = VqConfig {
            factor_count: 2,
            codebook_size: 2,
            beta: 0.25,
            ..VqConfig::default()
        };
        // Composite loss on the straight-through surrogate with the selected
        // codes frozen at the base point: z_q(z) = z + offset, plus the
        // commitment term against the frozen codes.
        let w = [0.7, -1.1, 0.4, 0.2];
        let z0 = [0.15, -0.2, 0.7, 1.0];
        let q = quantize(&z0, &cb, &cfg).unwrap();
        let offset: Vec<f64> = q.z_q.iter().zip(&z0).map(|(a, b)| a - b).collect();
        let frozen: Vec<Vec<f64>> = q
            .factor_indices
            .iter()
            .map(|&i| cb.code(i).to_vec())
            .collect();
        let f = |z: &[f64]| -> f64 {
            let downstream: f64 = z
                .iter()
                .zip(&offset)
                .zip(&w)
                .map(|((zi, o), wi)| (zi + o) * wi)
                .sum();
            let segs: Vec<&[f64]> = z.chunks_exact(2).collect();
            let codes: Vec<&[f64]> = frozen.iter().map(|c| c.as_slice()).collect();
            downstream + commitment_loss(&segs, &codes, cfg.beta, cfg.factor_count).unwrap()
        };
        let analytic = straight_through_grad(&q, &cb, &cfg, &w).unwrap();
        let step = 1e-5;
        for i in 0..z0.len() {
            let mut zp = z0;
            zp[i] += step;
            let mut zm = z0;
            zm[i] -= step;
            let numeric = (f(&zp) - f(&zm)) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic[i] - numeric).abs() / denom < 1e-4,
                "dim {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn match_fraction_counts_agreements() {
        let mk = |idx: Vec<usize>| QuantizedLatent {
            z_e: vec![0.0; idx.len()],
            z_q: vec![0.0; idx.len()],
            commitment: 0.0,
            factor_indices: idx,
        };
        let a = mk(vec![3, 7, 2, 9]);
        assert_eq!(factor_match_fraction(&a, &a).unwrap(), 1.0);
        let b = mk(vec![0, 7, 2, 1]);
        assert_eq!(factor_match_fraction(&a, &b).unwrap(), 0.5);
        let c = mk(vec![1, 0, 4, 5]);
        assert_eq!(factor_match_fraction(&a, &c).unwrap(), 0.0);
        // Symmetry.
        assert_eq!(
            factor_match_fraction(&a, &b).unwrap(),
            factor_match_fraction(&b, &a).unwrap()
        );
        let short = mk(vec![1, 2]);
        assert!(factor_match_fraction(&a, &short).is_err());
    }

    #[test]
    fn match_fraction_invariant_under_shared_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let g = 6;
            let a_idx: Vec<usize> = (0..g).map(|_| rng.gen_range(0..10)).collect();
            let b_idx: Vec<usize> = (0..g).map(|_| rng.gen_range(0..10)).collect();
            // Permutation of code labels applied to both lists.
            let mut perm: Vec<usize> = (0..10).collect();
            for i in (1..perm.len()).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let mk = |idx: &[usize]| QuantizedLatent {
                z_e: vec![0.0; idx.len()],
                z_q: vec![0.0; idx.len()],
                commitment: 0.0,
                factor_indices: idx.to_vec(),
            };
            let before =
                factor_match_fraction(&mk(&a_idx), &mk(&b_idx)).unwrap();
            let pa: Vec<usize> = a_idx.iter().map(|&i| perm[i]).collect();
            let pb: Vec<usize> = b_idx.iter().map(|&i| perm[i]).collect();
            let after = factor_match_fraction(&mk(&pa), &mk(&pb)).unwrap();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn dead_codes_revive_and_raise_usage_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Code 1 starts far away and never wins an assignment.
        let samples = vec![vec![0.0, 0.0], vec![100.0, 100.0]];
        let mut cb = Codebook::init_from_samples(2, 2, &samples, 0.5, &mut rng).unwrap();
        let cfg = VqConfig {
            factor_count: 1,
            codebook_size: 2,
            dead_code_threshold: 1e-3,
            dead_code_patience: 5,
            eta: 0.5,
            ..VqConfig::default()
        };
        let data: Vec<Vec<f64>> = (0..32)
            .map(|i| vec![(i % 8) as f64 * 0.1, ((i / 8) % 4) as f64 * 0.1])
            .collect();

        let usage = |cb: &Codebook| -> Vec<usize> {
            let mut counts = vec![0usize; cb.code_count()];
            for d in &data {
                let (idx, _) = nearest_code(d, cb).unwrap();
                counts[idx] += 1;
            }
            counts
        };

        // Active codebook: nothing revives.
        let before_codes = cb.codes.clone();
        let mut active = cb.clone();
        active.ema_cluster_size = vec![1.0, 1.0];
        let revived = active
            .revive_dead_codes(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!(revived.is_empty());
        assert_eq!(active.codes, before_codes);

        // Collapse scenario: all mass on code 0, code 1 starves.
        let entropy_before = Codebook::usage_entropy(&usage(&cb));
        for _ in 0..40 {
            let assigns: Vec<(&[f64], usize)> = data.iter().map(|d| (d.as_slice(), 0)).collect();
            cb.ema_update(&assigns).unwrap();
            cb.revive_dead_codes(&data, &cfg, &mut rng).unwrap();
        }
        let entropy_after = Codebook::usage_entropy(&usage(&cb));
        assert!(
            entropy_after > entropy_before,
            "revival must spread usage: {entropy_before} -> {entropy_after}"
        );

        // Forced single-candidate revival lands exactly on the candidate.
        let samples = vec![vec![0.0], vec![50.0]];
        let mut cb = Codebook::init_from_samples(2, 1, &samples, 0.0, &mut rng).unwrap();
        let cfg1 = VqConfig {
            factor_count: 1,
            codebook_size: 2,
            dead_code_threshold: 1e-3,
            dead_code_patience: 1,
            eta: 0.0,
            ..VqConfig::default()
        };
        let candidate = vec![vec![7.0]];
        for _ in 0..3 {
            cb.ema_update(&[(&[0.0], 0)]).unwrap();
            cb.revive_dead_codes(&candidate, &cfg1, &mut rng).unwrap();
        }
        assert_eq!(cb.code(1), &[7.0]);
    }

    #[test]
    fn codebook_serialization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut cb = Codebook::init_from_samples(4, 3, &samples, 0.95, &mut rng).unwrap();
        cb.ema_update(&[(&[0.5, 0.5, 0.5], 2)]).unwrap();
        let bytes = cb.to_bytes();
        let restored = Codebook::from_bytes(&bytes).unwrap();
        assert_eq!(cb.codes, restored.codes);
        assert_eq!(cb.ema_cluster_size, restored.ema_cluster_size);
        assert_eq!(cb.ema_code_sum, restored.ema_code_sum);
        assert_eq!(cb.eta, restored.eta);
    }
}
