use rand::Rng;

use crate::env::{downsample, Action, GridEnv, KeyChestEnv};
use crate::error::Result;

/// Downsample factor from 80x80 rasters to the 20x20 encoder inputs.
pub const DOWNSAMPLE_FACTOR: usize = 4;

/// Collects `n` downsampled observations from uniform-random rollouts.
///
/// Each episode samples a goal uniformly from the maze's candidate cells so
/// the corpus covers the whole state space, including every goal rendering
/// the encoder may later be asked to embed. The goal observation of each
/// episode is included once.
pub fn collect_rollout_corpus(
    env: &mut GridEnv,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut corpus = Vec::with_capacity(n);
    let candidates = env.maze.goal_candidates.clone();
    while corpus.len() < n {
        let goal = candidates[rng.gen_range(0..candidates.len())];
        let (state_obs, goal_obs) = env.reset(goal)?;
        corpus.push(downsample(&state_obs, DOWNSAMPLE_FACTOR));
        if corpus.len() < n {
            corpus.push(downsample(&goal_obs, DOWNSAMPLE_FACTOR));
        }
        loop {
            if corpus.len() >= n {
                break;
            }
            let action = Action::from_index(rng.gen_range(0..4));
            let out = env.step(action)?;
            corpus.push(downsample(&out.observation, DOWNSAMPLE_FACTOR));
            if out.done {
                break;
            }
        }
    }
    Ok(corpus)
}

/// Random-rollout corpus for KeyChest, covering both key-present and
/// key-collected renderings plus the subgoal observations the hierarchy will
/// quantize.
pub fn collect_keychest_corpus(
    env: &mut KeyChestEnv,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut corpus = Vec::with_capacity(n);
    let floor = env.maze.floor_cells();
    while corpus.len() < n {
        let obs = env.reset(rng);
        corpus.push(downsample(&obs, DOWNSAMPLE_FACTOR));
        if corpus.len() < n {
            // One subgoal rendering per episode keeps goal views represented.
            let cell = floor[rng.gen_range(0..floor.len())];
            corpus.push(downsample(&env.render_subgoal(cell)?, DOWNSAMPLE_FACTOR));
        }
        loop {
            if corpus.len() >= n {
                break;
            }
            let action = Action::from_index(rng.gen_range(0..4));
            let out = env.step(action)?;
            corpus.push(downsample(&out.observation, DOWNSAMPLE_FACTOR));
            if out.done {
                break;
            }
        }
    }
    Ok(corpus)
}

/// Downsampled state observation helper shared by agents.
pub fn observation_input(raster: &[u8]) -> Vec<f64> {
    downsample(raster, DOWNSAMPLE_FACTOR)
}
