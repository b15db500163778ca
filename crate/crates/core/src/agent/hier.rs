use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::dqn::{greedy_action, EpisodeMetrics, GoalDqn};
use super::replay::ReplayBuffer;
use super::reward::{goal_reward_cached, ReprCache, ReprEntry, ReprMode};
use crate::env::{Action, Cell, KeyChestEnv};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, mlp_backward_batch, mlp_forward, mlp_forward_batch, AdamState, Activation,
    DenseMatrix, GradTape, MlpModel,
};
use crate::repr::EncoderDecoder;

/// State-only DQN used by the high-level policy and the flat baseline.
#[derive(Debug, Clone)]
pub struct Dqn {
    pub q_net: MlpModel,
    pub target_net: MlpModel,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
struct StateTransition {
    state: Rc<ReprEntry>,
    action: usize,
    reward: f64,
    next: Rc<ReprEntry>,
    done: bool,
}

impl Dqn {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        actions: usize,
        gamma: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(actions);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        let q_net = MlpModel::glorot(&dims, &acts, rng)?;
        let target_net = q_net.clone();
        Ok(Self {
            q_net,
            target_net,
            gamma,
        })
    }

    pub fn q_values(&self, state_repr: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.q_net, state_repr, None)
    }

    fn sync_target(&mut self) {
        self.target_net = self.q_net.clone();
    }

    fn update(
        &mut self,
        batch: &[&StateTransition],
        optimizer: &mut AdamState,
        learning_rate: f64,
        mode: ReprMode,
    ) -> Result<f64> {
        let b = batch.len();
        let dim = self.q_net.input_dim();
        let n_actions = self.q_net.output_dim();
        let mut x = DenseMatrix::zeros(b, dim);
        let mut xn = DenseMatrix::zeros(b, dim);
        for (r, t) in batch.iter().enumerate() {
            x.row_mut(r).copy_from_slice(t.state.repr(mode));
            xn.row_mut(r).copy_from_slice(t.next.repr(mode));
        }
        let next_q = mlp_forward_batch(&self.target_net, &xn, None)?;
        let mut tape = GradTape::new();
        let q = mlp_forward_batch(&self.q_net, &x, Some(&mut tape))?;
        let mut loss = 0.0;
        let mut d_out = DenseMatrix::zeros(b, n_actions);
        for (r, t) in batch.iter().enumerate() {
            let max_next = next_q
                .row(r)
                .iter()
                .fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let target = t.reward + self.gamma * (1.0 - f64::from(u8::from(t.done))) * max_next;
            let err = q.row(r)[t.action] - target;
            loss += err * err;
            d_out.row_mut(r)[t.action] = 2.0 * err / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::fault("non-finite TD loss in keychest training"));
        }
        let (grads, _) = mlp_backward_batch(&self.q_net, &tape, &d_out)?;
        adam_step(&mut self.q_net, &grads, optimizer, learning_rate)?;
        Ok(loss)
    }
}

/// Two-level agent: the high level picks subgoal cells every K steps and is
/// trained on extrinsic reward; the low level reaches them on the
/// factor-match intrinsic reward alone.
#[derive(Debug)]
pub struct HierAgent {
    pub high: Dqn,
    pub low: GoalDqn,
    pub period: usize,
    pub subgoal_cells: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub struct HierConfig {
    /// High-level decision period K.
    pub period: usize,
    /// Total environment steps to spend.
    pub step_budget: usize,
    pub repr_mode: ReprMode,
    pub gamma_high: f64,
    pub gamma_low: f64,
    pub batch_size: usize,
    pub warmup_low: usize,
    pub warmup_high: usize,
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the step budget over which epsilon decays.
    pub epsilon_fraction: f64,
    pub q_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for HierConfig {
    fn default() -> Self {
        Self {
            period: 10,
            step_budget: 30_000,
            repr_mode: ReprMode::Discrete,
            gamma_high: 0.95,
            gamma_low: 0.95,
            batch_size: 64,
            warmup_low: 500,
            warmup_high: 64,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.4,
            q_hidden: vec![128, 128],
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl HierConfig {
    fn epsilon_at(&self, step: usize) -> f64 {
        let span = (self.step_budget as f64 * self.epsilon_fraction).max(1.0);
        let t = (step as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

#[derive(Debug)]
pub struct HierOutcome {
    pub agent: HierAgent,
    pub metrics: Vec<EpisodeMetrics>,
    /// High-level decisions taken per episode.
    pub decisions_per_episode: Vec<usize>,
}

/// Low-level subgoal-reaching success threshold: all factors must match up
/// to half a factor's worth of slack.
pub fn subgoal_success_threshold(factor_count: usize) -> f64 {
    1.0 - 1.0 / (2.0 * factor_count as f64)
}

/// Trains the two-level agent on KeyChest under a fixed step budget.
pub fn train_hier(
    env: &mut KeyChestEnv,
    model: &EncoderDecoder,
    config: &HierConfig,
) -> Result<HierOutcome> {
    if !model.trained {
        return Err(Error::usage("train_hier requires a trained representation"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let m = model.latent_dim();
    let subgoal_cells = env.maze.floor_cells();
    let mut high = Dqn::new(
        m,
        &config.q_hidden,
        subgoal_cells.len(),
        config.gamma_high,
        &mut rng,
    )?;
    let mut low = GoalDqn::new(
        2 * m,
        &config.q_hidden,
        4,
        config.repr_mode,
        config.gamma_low,
        &mut rng,
    )?;
    let mut high_opt = AdamState::new(high.q_net.param_count());
    let mut low_opt = AdamState::new(low.q_net.param_count());
    let mut high_buffer: ReplayBuffer<StateTransition> = ReplayBuffer::new(10_000);
    let mut low_buffer: ReplayBuffer<super::dqn::Transition> = ReplayBuffer::new(50_000);
    let mut cache = ReprCache::new();

    let threshold = subgoal_success_threshold(model.vq.factor_count);
    let chest = env.maze.chest.expect("keychest maze has a chest");
    let mut metrics = Vec::new();
    let mut decisions_per_episode = Vec::new();
    let mut env_steps = 0usize;
    let mut updates = 0usize;
    let mut episode = 0usize;

    while env_steps < config.step_budget {
        let obs = env.reset(&mut rng);
        let mut st = cache.get(model, &obs)?;
        let mut return_ext = 0.0;
        let mut return_int = 0.0;
        let mut steps = 0usize;
        let mut decisions = 0usize;
        let mut opened = false;
        let mut done = false;

        while !done {
            // High-level decision.
            let epsilon = config.epsilon_at(env_steps);
            let decision_state = st.clone();
            let subgoal_idx = if rng.gen_range(0.0..1.0) < epsilon {
                rng.gen_range(0..subgoal_cells.len())
            } else {
                greedy_action(&high.q_values(decision_state.repr(config.repr_mode))?)
            };
            decisions += 1;
            let goal_entry = cache.get(model, &env.render_subgoal(subgoal_cells[subgoal_idx])?)?;

            let mut segment_reward = 0.0;
            for _ in 0..config.period {
                let epsilon = config.epsilon_at(env_steps);
                let action_idx = if rng.gen_range(0.0..1.0) < epsilon {
                    rng.gen_range(0..4)
                } else {
                    greedy_action(
                        &low.q_values(
                            st.repr(config.repr_mode),
                            goal_entry.repr(config.repr_mode),
                        )?,
                    )
                };
                let out = env.step(Action::from_index(action_idx))?;
                env_steps += 1;
                steps += 1;
                segment_reward += out.reward;
                return_ext += out.reward;
                let next = cache.get(model, &out.observation)?;
                let r_int = goal_reward_cached(&next, &goal_entry, config.repr_mode)?;
                return_int += r_int;
                let reached = r_int >= threshold;
                low_buffer.push(super::dqn::Transition {
                    state: st.clone(),
                    action: action_idx,
                    reward: r_int,
                    next: next.clone(),
                    goal: goal_entry.clone(),
                    done: reached || out.done,
                });
                if low_buffer.len() >= config.warmup_low {
                    let batch = low_buffer.sample(config.batch_size, &mut rng);
                    super::dqn::td_update(&mut low, &batch, &mut low_opt, config.learning_rate)?;
                    updates += 1;
                    if updates % config.target_sync == 0 {
                        low.sync_target();
                        high.sync_target();
                    }
                }
                st = next;
                if out.done {
                    done = true;
                    let state = env.state();
                    opened = state.agent == chest
                        && state.keychest.map(|kc| kc.has_key).unwrap_or(false);
                    break;
                }
                if reached {
                    break;
                }
            }

            high_buffer.push(StateTransition {
                state: decision_state,
                action: subgoal_idx,
                reward: segment_reward,
                next: st.clone(),
                done,
            });
            if high_buffer.len() >= config.warmup_high {
                let batch = high_buffer.sample(config.batch_size.min(32), &mut rng);
                high.update(&batch, &mut high_opt, config.learning_rate, config.repr_mode)?;
            }
        }

        metrics.push(EpisodeMetrics {
            episode,
            goal_id: -1,
            steps,
            return_ext,
            return_int,
            success: opened,
            seed: config.seed,
        });
        decisions_per_episode.push(decisions);
        episode += 1;
    }

    Ok(HierOutcome {
        agent: HierAgent {
            high,
            low,
            period: config.period,
            subgoal_cells,
        },
        metrics,
        decisions_per_episode,
    })
}

/// Flat DQN baseline on KeyChest: same representations, extrinsic reward
/// only, same step budget.
pub fn train_flat_keychest(
    env: &mut KeyChestEnv,
    model: &EncoderDecoder,
    config: &HierConfig,
) -> Result<(Dqn, Vec<EpisodeMetrics>)> {
    if !model.trained {
        return Err(Error::usage(
            "train_flat_keychest requires a trained representation",
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let m = model.latent_dim();
    let mut dqn = Dqn::new(m, &config.q_hidden, 4, config.gamma_low, &mut rng)?;
    let mut optimizer = AdamState::new(dqn.q_net.param_count());
    let mut buffer: ReplayBuffer<StateTransition> = ReplayBuffer::new(50_000);
    let mut cache = ReprCache::new();
    let chest = env.maze.chest.expect("keychest maze has a chest");

    let mut metrics = Vec::new();
    let mut env_steps = 0usize;
    let mut updates = 0usize;
    let mut episode = 0usize;

    while env_steps < config.step_budget {
        let obs = env.reset(&mut rng);
        let mut st = cache.get(model, &obs)?;
        let mut return_ext = 0.0;
        let mut steps = 0usize;
        let opened;

        loop {
            let epsilon = config.epsilon_at(env_steps);
            let action_idx = if rng.gen_range(0.0..1.0) < epsilon {
                rng.gen_range(0..4)
            } else {
                greedy_action(&dqn.q_values(st.repr(config.repr_mode))?)
            };
            let out = env.step(Action::from_index(action_idx))?;
            env_steps += 1;
            steps += 1;
            return_ext += out.reward;
            let next = cache.get(model, &out.observation)?;
            buffer.push(StateTransition {
                state: st.clone(),
                action: action_idx,
                reward: out.reward,
                next: next.clone(),
                done: out.done,
            });
            if buffer.len() >= config.warmup_low {
                let batch = buffer.sample(config.batch_size, &mut rng);
                dqn.update(&batch, &mut optimizer, config.learning_rate, config.repr_mode)?;
                updates += 1;
                if updates % config.target_sync == 0 {
                    dqn.sync_target();
                }
            }
            st = next;
            if out.done {
                let state = env.state();
                opened = state.agent == chest
                    && state.keychest.map(|kc| kc.has_key).unwrap_or(false);
                break;
            }
        }

        metrics.push(EpisodeMetrics {
            episode,
            goal_id: -1,
            steps,
            return_ext,
            return_int: 0.0,
            success: opened,
            seed: config.seed,
        });
        episode += 1;
    }
    Ok((dqn, metrics))
}
