//! Empirical checker for the quantized-goal generalization bound: build the
//! neighborhood partition induced by the quantizer, evaluate the
//! concentration gap omega, and Monte-Carlo both sides of the bound for the
//! identity and quantized goal pathways.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::nn::squared_distance;
use crate::vq::{quantize, Codebook, VqConfig};

/// Uniform goal distribution over the unit box [0,1]^dim.
#[derive(Debug, Clone, Copy)]
pub struct GoalSampler {
    pub dim: usize,
}

impl GoalSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim).map(|_| rng.gen_range(0.0..1.0)).collect()
    }
}

/// Vector quantizer over raw goal coordinates (identity encoder).
#[derive(Debug, Clone)]
pub struct GoalQuantizer {
    pub codebook: Codebook,
    pub config: VqConfig,
}

impl GoalQuantizer {
    /// Euclidean-grid quantizer: `levels` one-dimensional codes at the cell
    /// midpoints of [0,1], shared across all `dim` coordinates.
    pub fn grid(dim: usize, levels: usize) -> Result<Self> {
        let samples: Vec<Vec<f64>> = (0..levels)
            .map(|k| vec![(2 * k + 1) as f64 / (2 * levels) as f64])
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let codebook = Codebook::init_from_samples(levels, 1, &samples, 0.99, &mut rng)?;
        Ok(Self {
            codebook,
            config: VqConfig {
                factor_count: dim,
                codebook_size: levels,
                ..VqConfig::default()
            },
        })
    }

    pub fn apply(&self, goal: &[f64]) -> Result<Vec<f64>> {
        Ok(quantize(goal, &self.codebook, &self.config)?.z_q)
    }
}

/// The neighborhood structure: distinct quantized values in a fixed
/// (lexicographic) order, with goals assigned to the nearest one.
#[derive(Debug, Clone)]
pub struct GoalPartition {
    q_values: Vec<Vec<f64>>,
    quantizer: Arc<GoalQuantizer>,
}

impl GoalPartition {
    /// Builds the partition from a sample of the goal space: the distinct
    /// quantized values found become the neighborhood anchors.
    pub fn from_sample(sample: &[Vec<f64>], quantizer: Arc<GoalQuantizer>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::usage("partition requires a non-empty goal sample"));
        }
        let mut q_values: Vec<Vec<f64>> = Vec::new();
        for g in sample {
            let q = quantizer.apply(g)?;
            if !q_values.contains(&q) {
                q_values.push(q);
            }
        }
        q_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            q_values,
            quantizer,
        })
    }

    pub fn q_count(&self) -> usize {
        self.q_values.len()
    }

    pub fn q_value(&self, k: usize) -> &[f64] {
        &self.q_values[k]
    }

    pub fn quantizer(&self) -> &GoalQuantizer {
        &self.quantizer
    }

    /// Neighborhood index: argmin over the fixed ordering of the Euclidean
    /// distance between q(goal) and each anchor, ties to the lowest index.
    pub fn assign(&self, goal: &[f64]) -> Result<usize> {
        let q = self.quantizer.apply(goal)?;
        let mut best = 0;
        let mut best_d = squared_distance(&q, &self.q_values[0]);
        for (k, anchor) in self.q_values.iter().enumerate().skip(1) {
            let d = squared_distance(&q, anchor);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        Ok(best)
    }

    /// Index sets of the training goals per neighborhood.
    pub fn index_sets(&self, goals: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
        let mut sets = vec![Vec::new(); self.q_count()];
        for (i, g) in goals.iter().enumerate() {
            sets[self.assign(g)?].push(i);
        }
        Ok(sets)
    }
}

/// Bounded goal-value function phi with its declared sup bound.
pub struct ValueModel {
    pub phi: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Declared bound M >= sup |phi|.
    pub bound: f64,
    pub name: &'static str,
}

impl std::fmt::Debug for ValueModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueModel")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish()
    }
}

impl ValueModel {
    pub fn constant(c: f64) -> Self {
        Self {
            phi: Box::new(move |_| c),
            bound: c.abs(),
            name: "constant",
        }
    }

    /// phi(g) = w . g + b on the unit box.
    pub fn linear(weights: Vec<f64>, intercept: f64) -> Self {
        let bound = intercept.abs() + weights.iter().map(|w| w.abs()).sum::<f64>();
        Self {
            phi: Box::new(move |g| {
                g.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() + intercept
            }),
            bound,
            name: "linear",
        }
    }

    /// Piecewise-constant per neighborhood plus a bounded deterministic
    /// high-frequency component, spanning the omega > 0 regime.
    pub fn piecewise(partition: Arc<GoalPartition>, levels: Vec<f64>, noise_amp: f64) -> Self {
        let max_level = levels.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        Self {
            phi: Box::new(move |g| {
                let k = partition.assign(g).expect("assign is total");
                let wiggle: f64 = (g.iter().enumerate())
                    .map(|(i, x)| (x * (37.0 + 11.0 * i as f64)).sin())
                    .product();
                levels[k % levels.len()] + noise_amp * wiggle
            }),
            bound: max_level + noise_amp,
            name: "piecewise",
        }
    }
}

/// Which goal pathway the bound is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigma {
    Id,
    Quantized,
}

impl Sigma {
    pub fn name(self) -> &'static str {
        match self {
            Sigma::Id => "id",
            Sigma::Quantized => "q",
        }
    }
}

/// Compensated mean; keeps the quantized-pathway omega at machine zero.
pub fn mean_kahan(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum / values.len() as f64
}

/// The concentration gap
/// omega = (1/n) sum_{k active} |I_k| (mean_{i in I_k} phi(g_i) - E[phi | G_k]).
///
/// `conditional` holds the per-neighborhood conditional expectations;
/// neighborhoods without training goals are skipped.
pub fn omega(train_values: &[f64], index_sets: &[Vec<usize>], conditional: &[f64]) -> Result<f64> {
    let n: usize = index_sets.iter().map(|s| s.len()).sum();
    if n != train_values.len() {
        return Err(Error::usage("index sets do not cover the training goals"));
    }
    if conditional.len() != index_sets.len() {
        return Err(Error::usage("conditional expectations length mismatch"));
    }
    let mut total = 0.0;
    for (k, set) in index_sets.iter().enumerate() {
        if set.is_empty() {
            continue;
        }
        if !conditional[k].is_finite() {
            return Err(Error::usage(format!(
                "active neighborhood {k} lacks a conditional expectation estimate"
            )));
        }
        let vals: Vec<f64> = set.iter().map(|&i| train_values[i]).collect();
        total += set.len() as f64 * (mean_kahan(&vals) - conditional[k]);
    }
    Ok(total / n as f64)
}

/// Concentration term M sqrt(2 |Q| ln(2/delta) / n), instantiating the
/// theorem's constant as c = M sqrt(|Q|).
pub fn concentration_term(n: usize, delta: f64, q_count: usize, bound: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::usage("concentration term needs n >= 1"));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::usage(format!("delta {delta} outside (0,1)")));
    }
    Ok(bound * (2.0 * q_count as f64 * (2.0 / delta).ln() / n as f64).sqrt())
}

/// One evaluated instance of the bound.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub n: usize,
    pub trial: usize,
    pub sigma: Sigma,
    pub empirical_mean: f64,
    pub true_expectation: f64,
    pub omega_hat: f64,
    pub concentration: f64,
    pub holds: bool,
}

/// Configuration of the Monte-Carlo bound verification.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub n_list: Vec<usize>,
    pub delta: f64,
    pub trials: usize,
    /// Draws for estimating the true expectation (and the partition).
    pub expectation_draws: usize,
    /// Accepted samples required per active neighborhood.
    pub conditional_min_accepted: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_list: vec![10, 100, 1000],
            delta: 0.05,
            trials: 500,
            expectation_draws: 100_000,
            conditional_min_accepted: 1000,
            seed: 0,
        }
    }
}

/// Rejection-sampled conditional expectations of `f` per neighborhood.
/// Neighborhoods the sampler never hits keep NaN (no goal mass).
pub fn conditional_expectations(
    partition: &GoalPartition,
    sampler: &GoalSampler,
    f: &dyn Fn(&[f64]) -> f64,
    min_accepted: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<f64>> {
    let k = partition.q_count();
    let mut accepted: Vec<Vec<f64>> = vec![Vec::new(); k];
    let max_draws = (min_accepted * k * 50).max(100_000);
    for _ in 0..max_draws {
        if accepted.iter().all(|a| a.len() >= min_accepted) {
            break;
        }
        let g = sampler.sample(rng);
        let cell = partition.assign(&g)?;
        if accepted[cell].len() < min_accepted {
            accepted[cell].push(f(&g));
        }
    }
    Ok(accepted
        .iter()
        .map(|a| if a.is_empty() { f64::NAN } else { mean_kahan(a) })
        .collect())
}

/// Evaluates the bound across trials: per (n, trial), draw n training goals,
/// compute the empirical mean of phi composed with sigma, the omega term,
/// and check
/// E[phi o sigma] >= mean - M sqrt(2 |Q| ln(2/delta) / n) - 1{sigma=id} omega.
pub fn verify_bound(
    model: &ValueModel,
    sampler: &GoalSampler,
    quantizer: Arc<GoalQuantizer>,
    sigma: Sigma,
    config: &VerifyConfig,
) -> Result<Vec<BoundReport>> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    // Large-sample pass: the partition anchors and the true expectation.
    let big_sample: Vec<Vec<f64>> = (0..config.expectation_draws)
        .map(|_| sampler.sample(&mut rng))
        .collect();
    let partition = GoalPartition::from_sample(&big_sample, quantizer)?;

    let composed = |g: &[f64]| -> f64 {
        match sigma {
            Sigma::Id => (model.phi)(g),
            Sigma::Quantized => {
                let q = partition.quantizer.apply(g).expect("quantizer total");
                (model.phi)(&q)
            }
        }
    };

    let values: Vec<f64> = big_sample.iter().map(|g| composed(g)).collect();
    let true_expectation = mean_kahan(&values);
    drop(values);
    drop(big_sample);

    let conditional = conditional_expectations(
        &partition,
        sampler,
        &composed,
        config.conditional_min_accepted,
        &mut rng,
    )?;

    let mut reports = Vec::with_capacity(config.n_list.len() * config.trials);
    for &n in &config.n_list {
        let concentration = concentration_term(n, config.delta, partition.q_count(), model.bound)?;
        for trial in 0..config.trials {
            let train: Vec<Vec<f64>> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
            let train_values: Vec<f64> = train.iter().map(|g| composed(g)).collect();
            let empirical_mean = mean_kahan(&train_values);
            let index_sets = partition.index_sets(&train)?;
            let omega_hat = omega(&train_values, &index_sets, &conditional)?;
            let omega_term = match sigma {
                Sigma::Id => omega_hat,
                Sigma::Quantized => 0.0,
            };
            let holds = true_expectation >= empirical_mean - concentration - omega_term;
            reports.push(BoundReport {
                n,
                trial,
                sigma,
                empirical_mean,
                true_expectation,
                omega_hat,
                concentration,
                holds,
            });
        }
    }
    Ok(reports)
}

/// The default synthetic suite spanning omega = 0 and omega > 0 regimes.
pub fn synthetic_suite(partition: Arc<GoalPartition>) -> Vec<ValueModel> {
    let levels: Vec<f64> = (0..partition.q_count())
        .map(|k| ((k * 37 + 11) % 17) as f64 / 17.0 * 4.0 - 2.0)
        .collect();
    vec![
        ValueModel::constant(1.25),
        ValueModel::linear(vec![1.0, -2.0], 0.5),
        ValueModel::piecewise(partition, levels, 0.3),
    ]
}
