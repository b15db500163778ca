use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::replay::ReplayBuffer;
use super::reward::{encode_entry, goal_reward_cached, ReprCache, ReprEntry, ReprMode};
use crate::env::{Action, Cell, GoalDistribution, GridEnv};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, mlp_backward_batch, mlp_forward, mlp_forward_batch, AdamState, Activation,
    DenseMatrix, GradTape, MlpModel,
};
use crate::repr::{observation_input, EncoderDecoder};
use crate::vq::{quantize, straight_through_grad, QuantizedLatent};

/// One replayed step. Representations are frozen snapshots; the downsampled
/// observations ride along for joint fine-tuning.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Rc<ReprEntry>,
    pub action: usize,
    pub reward: f64,
    pub next: Rc<ReprEntry>,
    pub goal: Rc<ReprEntry>,
    pub done: bool,
}

/// Goal-conditioned Q network with a frozen target copy.
#[derive(Debug, Clone)]
pub struct GoalDqn {
    pub q_net: MlpModel,
    pub target_net: MlpModel,
    pub repr_mode: ReprMode,
    pub gamma: f64,
}

impl GoalDqn {
    /// `input_dim` is the concatenated state+goal representation width.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        actions: usize,
        repr_mode: ReprMode,
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
            repr_mode,
            gamma,
        })
    }

    pub fn q_values(&self, state_repr: &[f64], goal_repr: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(state_repr.len() + goal_repr.len());
        input.extend_from_slice(state_repr);
        input.extend_from_slice(goal_repr);
        mlp_forward(&self.q_net, &input, None)
    }

    pub fn sync_target(&mut self) {
        self.target_net = self.q_net.clone();
    }
}

/// Index of the maximal entry, lowest index on ties.
pub fn greedy_action(q_values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q_values.iter().enumerate().skip(1) {
        if *v > q_values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action selection over the Q values for (state, goal).
pub fn select_action(
    dqn: &GoalDqn,
    state_repr: &[f64],
    goal_repr: &[f64],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    let n_actions = dqn.q_net.output_dim();
    if epsilon > 0.0 && rng.gen_range(0.0..1.0) < epsilon {
        return Ok(rng.gen_range(0..n_actions));
    }
    let q = dqn.q_values(state_repr, goal_repr)?;
    Ok(greedy_action(&q))
}

/// Hyperparameters for flat goal-conditioned DQN training.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: usize,
    pub repr_mode: ReprMode,
    pub intrinsic_weight: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    pub q_hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Greedy evaluation cadence over the training goals, in episodes.
    pub eval_every: usize,
    /// Stop training once greedy evaluation reaches this success rate
    /// (values above 1 disable early stopping).
    pub stop_at_success: f64,
    /// Joint fine-tuning of the encoder during TD updates.
    pub fine_tune: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 400,
            repr_mode: ReprMode::Discrete,
            intrinsic_weight: 0.1,
            gamma: 0.95,
            buffer_capacity: 50_000,
            batch_size: 64,
            warmup: 500,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.3,
            q_hidden: vec![128, 128],
            learning_rate: 1e-3,
            eval_every: 10,
            stop_at_success: 0.9,
            fine_tune: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let span = (self.episodes as f64 * self.epsilon_fraction).max(1.0);
        let t = (episode as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// Per-episode training record.
#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub goal_id: i64,
    pub steps: usize,
    pub return_ext: f64,
    pub return_int: f64,
    pub success: bool,
    pub seed: u64,
}

/// Greedy train-goal success measured during training.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint {
    pub episode: usize,
    pub success_rate: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub dqn: GoalDqn,
    pub metrics: Vec<EpisodeMetrics>,
    pub eval_curve: Vec<EvalPoint>,
    /// First episode count at which greedy evaluation reached
    /// `stop_at_success`, if it did.
    pub episodes_to_target: Option<usize>,
    /// The representation model actually used at the end (fine-tuned copy
    /// when joint training was enabled).
    pub model: EncoderDecoder,
}

/// Encoder fine-tuning state for joint training.
#[derive(Debug)]
pub struct FineTuner {
    pub model: EncoderDecoder,
    pub optimizer: AdamState,
    pub learning_rate: f64,
}

impl FineTuner {
    pub fn new(model: EncoderDecoder, learning_rate: f64) -> Self {
        let optimizer = AdamState::new(model.encoder.param_count());
        Self {
            model,
            optimizer,
            learning_rate,
        }
    }
}

/// Mean squared TD error over a batch with target
/// r + gamma (1-done) max_a' Q_target(s', g, a'); gradients are applied to
/// the online network only.
pub fn td_update(
    dqn: &mut GoalDqn,
    batch: &[&Transition],
    optimizer: &mut AdamState,
    learning_rate: f64,
) -> Result<f64> {
    td_update_inner(dqn, batch, optimizer, learning_rate, None)
}

/// TD update that additionally fine-tunes the encoder through the
/// straight-through bottleneck and keeps the codebook EMA moving.
pub fn td_update_finetune(
    dqn: &mut GoalDqn,
    batch: &[&Transition],
    optimizer: &mut AdamState,
    learning_rate: f64,
    finetune: &mut FineTuner,
) -> Result<f64> {
    td_update_inner(dqn, batch, optimizer, learning_rate, Some(finetune))
}

fn td_update_inner(
    dqn: &mut GoalDqn,
    batch: &[&Transition],
    optimizer: &mut AdamState,
    learning_rate: f64,
    mut finetune: Option<&mut FineTuner>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::usage("td_update requires a non-empty batch"));
    }
    let b = batch.len();
    let n_actions = dqn.q_net.output_dim();
    let mode = dqn.repr_mode;

    struct EncodedSide {
        reprs: Vec<Vec<f64>>,
        tape: Option<GradTape>,
        quantized: Vec<QuantizedLatent>,
    }

    let encode_side = |obs: Vec<&Rc<ReprEntry>>,
                       ft: &FineTuner,
                       with_tape: bool|
     -> Result<EncodedSide> {
        let dim = ft.model.encoder.input_dim();
        let mut x = DenseMatrix::zeros(obs.len(), dim);
        for (r, o) in obs.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&o.obs);
        }
        let mut tape = GradTape::new();
        let z = mlp_forward_batch(
            &ft.model.encoder,
            &x,
            with_tape.then_some(&mut tape),
        )?;
        let mut reprs = Vec::with_capacity(obs.len());
        let mut quantized = Vec::with_capacity(obs.len());
        for r in 0..obs.len() {
            let q = quantize(z.row(r), &ft.model.codebook, &ft.model.vq)?;
            reprs.push(match mode {
                ReprMode::Discrete => q.z_q.clone(),
                ReprMode::Continuous => q.z_e.clone(),
            });
            quantized.push(q);
        }
        Ok(EncodedSide {
            reprs,
            tape: with_tape.then_some(tape),
            quantized,
        })
    };

    // Either the frozen snapshots from the replay, or fresh encodings.
    let (state_repr, goal_repr, next_repr, mut side_s, mut side_g) =
        match finetune.as_deref_mut() {
            None => {
                let s: Vec<Vec<f64>> =
                    batch.iter().map(|t| t.state.repr(mode).to_vec()).collect();
                let g: Vec<Vec<f64>> =
                    batch.iter().map(|t| t.goal.repr(mode).to_vec()).collect();
                let n: Vec<Vec<f64>> =
                    batch.iter().map(|t| t.next.repr(mode).to_vec()).collect();
                (s, g, n, None, None)
            }
            Some(ft) => {
                let s = encode_side(batch.iter().map(|t| &t.state).collect(), ft, true)?;
                let g = encode_side(batch.iter().map(|t| &t.goal).collect(), ft, true)?;
                let n = encode_side(batch.iter().map(|t| &t.next).collect(), ft, false)?;
                (
                    s.reprs.clone(),
                    g.reprs.clone(),
                    n.reprs,
                    Some(s),
                    Some(g),
                )
            }
        };

    let repr_dim = state_repr[0].len();
    let mut q_in = DenseMatrix::zeros(b, 2 * repr_dim);
    let mut next_in = DenseMatrix::zeros(b, 2 * repr_dim);
    for r in 0..b {
        q_in.row_mut(r)[..repr_dim].copy_from_slice(&state_repr[r]);
        q_in.row_mut(r)[repr_dim..].copy_from_slice(&goal_repr[r]);
        next_in.row_mut(r)[..repr_dim].copy_from_slice(&next_repr[r]);
        next_in.row_mut(r)[repr_dim..].copy_from_slice(&goal_repr[r]);
    }

    let next_q = mlp_forward_batch(&dqn.target_net, &next_in, None)?;
    let mut tape = GradTape::new();
    let q = mlp_forward_batch(&dqn.q_net, &q_in, Some(&mut tape))?;

    let mut loss = 0.0;
    let mut d_out = DenseMatrix::zeros(b, n_actions);
    for (r, t) in batch.iter().enumerate() {
        let max_next = next_q
            .row(r)
            .iter()
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let target = t.reward + dqn.gamma * (1.0 - f64::from(u8::from(t.done))) * max_next;
        let err = q.row(r)[t.action] - target;
        loss += err * err;
        d_out.row_mut(r)[t.action] = 2.0 * err / b as f64;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::fault("non-finite TD loss"));
    }

    let (grads, d_input) = mlp_backward_batch(&dqn.q_net, &tape, &d_out)?;
    adam_step(&mut dqn.q_net, &grads, optimizer, learning_rate)?;

    if let Some(ft) = finetune {
        let side_s = side_s.take().unwrap();
        let side_g = side_g.take().unwrap();
        let seg_dim = ft.model.latent_dim() / ft.model.vq.factor_count;
        let mut backprop_half = |side: &EncodedSide, half: usize| -> Result<crate::nn::ParamGrads> {
            let mut dz = DenseMatrix::zeros(b, repr_dim);
            for r in 0..b {
                let upstream = &d_input.row(r)[half * repr_dim..(half + 1) * repr_dim];
                let g = straight_through_grad(
                    &side.quantized[r],
                    &ft.model.codebook,
                    &ft.model.vq,
                    upstream,
                )?;
                dz.row_mut(r).copy_from_slice(&g);
            }
            let (grads, _) =
                mlp_backward_batch(&ft.model.encoder, side.tape.as_ref().unwrap(), &dz)?;
            Ok(grads)
        };
        let mut enc_grads = backprop_half(&side_s, 0)?;
        enc_grads.add_assign(&backprop_half(&side_g, 1)?);
        let lr = ft.learning_rate;
        adam_step(&mut ft.model.encoder, &enc_grads, &mut ft.optimizer, lr)?;

        // Codebook keeps following the shifting encoder outputs.
        let mut assigns: Vec<(Vec<f64>, usize)> = Vec::new();
        for q in side_s.quantized.iter().chain(&side_g.quantized) {
            for (i, seg) in q.z_e.chunks_exact(seg_dim).enumerate() {
                assigns.push((seg.to_vec(), q.factor_indices[i]));
            }
        }
        let refs: Vec<(&[f64], usize)> = assigns.iter().map(|(s, i)| (s.as_slice(), *i)).collect();
        ft.model.codebook.ema_update(&refs)?;
    }
    Ok(loss)
}

/// Greedy evaluation over a goal list: per-goal success fraction and mean
/// steps, plus the summed steps-to-first-success (horizon-capped).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_goal: Vec<GoalEval>,
    pub total_steps_to_solve: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone)]
pub struct GoalEval {
    pub goal: Cell,
    pub success_fraction: f64,
    pub mean_steps: f64,
    pub steps_to_first_success: usize,
}

pub fn evaluate(
    dqn: &GoalDqn,
    model: &EncoderDecoder,
    env: &mut GridEnv,
    cache: &mut ReprCache,
    goals: &[Cell],
    episodes_per_goal: usize,
) -> Result<EvalReport> {
    if goals.is_empty() {
        return Err(Error::usage("evaluate needs at least one goal"));
    }
    let mode = dqn.repr_mode;
    let mut per_goal = Vec::with_capacity(goals.len());
    let mut total_steps = 0usize;
    let mut successes = 0.0;
    for &goal in goals {
        let mut goal_successes = 0.0;
        let mut steps_sum = 0.0;
        let mut first_success_steps = env.horizon;
        for _ in 0..episodes_per_goal.max(1) {
            let (state_obs, goal_obs) = env.reset(goal)?;
            let goal_entry = cache.get(model, &goal_obs)?;
            let mut st = cache.get(model, &state_obs)?;
            let mut steps = 0usize;
            let success;
            loop {
                let q = dqn.q_values(st.repr(mode), goal_entry.repr(mode))?;
                let action = Action::from_index(greedy_action(&q));
                let out = env.step(action)?;
                steps += 1;
                st = cache.get(model, &out.observation)?;
                if out.done {
                    success = env.state().agent == goal;
                    break;
                }
            }
            goal_successes += f64::from(u8::from(success));
            steps_sum += steps as f64;
            if success {
                first_success_steps = first_success_steps.min(steps);
            }
        }
        let n = episodes_per_goal.max(1) as f64;
        successes += goal_successes / n;
        total_steps += first_success_steps;
        per_goal.push(GoalEval {
            goal,
            success_fraction: goal_successes / n,
            mean_steps: steps_sum / n,
            steps_to_first_success: first_success_steps,
        });
    }
    Ok(EvalReport {
        per_goal,
        total_steps_to_solve: total_steps,
        success_rate: successes / goals.len() as f64,
    })
}

/// Full goal-conditioned DQN training loop. Per episode a training goal is
/// sampled, the policy rolls out epsilon-greedily with per-step reward
/// extrinsic + weight * intrinsic, and one TD update runs per environment
/// step after warmup.
pub fn train_goal_dqn(
    env: &mut GridEnv,
    model: &EncoderDecoder,
    goals: &GoalDistribution,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !model.trained {
        return Err(Error::usage(
            "train_goal_dqn requires a trained representation",
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let repr_dim = model.latent_dim();
    let mut dqn = GoalDqn::new(
        2 * repr_dim,
        &config.q_hidden,
        4,
        config.repr_mode,
        config.gamma,
        &mut rng,
    )?;

    let mut optimizer = AdamState::new(dqn.q_net.param_count());
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(config.buffer_capacity);
    let mut cache = ReprCache::new();
    let mut finetuner = config
        .fine_tune
        .then(|| FineTuner::new(model.clone(), config.learning_rate));

    let mut metrics = Vec::with_capacity(config.episodes);
    let mut eval_curve = Vec::new();
    let mut episodes_to_target = None;
    let mut updates = 0usize;

    for episode in 0..config.episodes {
        let epsilon = config.epsilon_at(episode);
        let goal = goals.sample_train(&mut rng);
        let goal_id = goals
            .train_goals
            .iter()
            .position(|g| *g == goal)
            .map(|i| i as i64)
            .unwrap_or(-1);
        let (state_obs, goal_obs) = env.reset(goal)?;

        // Fine-tuning invalidates cached encodings, so recompute fresh ones.
        let fresh = |ft: &Option<FineTuner>,
                     cache: &mut ReprCache,
                     raster: &[u8]|
         -> Result<Rc<ReprEntry>> {
            match ft {
                None => cache.get(model, raster),
                Some(f) => Ok(Rc::new(encode_entry(&f.model, observation_input(raster))?)),
            }
        };
        let goal_entry = fresh(&finetuner, &mut cache, &goal_obs)?;
        let mut st = fresh(&finetuner, &mut cache, &state_obs)?;

        let mut return_ext = 0.0;
        let mut return_int = 0.0;
        let mut steps = 0usize;
        let mut success = false;
        loop {
            let action_idx = select_action(
                &dqn,
                st.repr(config.repr_mode),
                goal_entry.repr(config.repr_mode),
                epsilon,
                &mut rng,
            )?;
            let out = env.step(Action::from_index(action_idx))?;
            let next = fresh(&finetuner, &mut cache, &out.observation)?;
            let r_int = goal_reward_cached(&next, &goal_entry, config.repr_mode)?;
            let reward = out.reward + config.intrinsic_weight * r_int;
            return_ext += out.reward;
            return_int += r_int;
            steps += 1;
            buffer.push(Transition {
                state: st.clone(),
                action: action_idx,
                reward,
                next: next.clone(),
                goal: goal_entry.clone(),
                done: out.done,
            });
            if buffer.len() >= config.warmup {
                let batch = buffer.sample(config.batch_size, &mut rng);
                match finetuner.as_mut() {
                    None => {
                        td_update(&mut dqn, &batch, &mut optimizer, config.learning_rate)?;
                    }
                    Some(ft) => {
                        td_update_finetune(
                            &mut dqn,
                            &batch,
                            &mut optimizer,
                            config.learning_rate,
                            ft,
                        )?;
                    }
                }
                updates += 1;
                if updates % config.target_sync == 0 {
                    dqn.sync_target();
                }
            }
            st = next;
            if out.done {
                success = env.state().agent == goal;
                break;
            }
        }
        metrics.push(EpisodeMetrics {
            episode,
            goal_id,
            steps,
            return_ext,
            return_int,
            success,
            seed: config.seed,
        });

        if (episode + 1) % config.eval_every == 0 {
            let eval_model = finetuner.as_ref().map(|f| &f.model).unwrap_or(model);
            let mut eval_cache = ReprCache::new();
            let report = evaluate(
                &dqn,
                eval_model,
                env,
                &mut eval_cache,
                &goals.train_goals,
                1,
            )?;
            eval_curve.push(EvalPoint {
                episode,
                success_rate: report.success_rate,
            });
            if report.success_rate >= config.stop_at_success && episodes_to_target.is_none() {
                episodes_to_target = Some(episode + 1);
                break;
            }
        }
    }

    let model_out = finetuner.map(|f| f.model).unwrap_or_else(|| model.clone());
    Ok(TrainOutcome {
        dqn,
        metrics,
        eval_curve,
        episodes_to_target,
        model: model_out,
    })
}
