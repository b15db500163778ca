use rand::Rng;

use super::maze::{Cell, MazeSpec};
use super::render::{render_pixels, RenderView};
use crate::error::{Error, Result};

pub const DEFAULT_HORIZON: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(idx: usize) -> Action {
        Self::ALL[idx]
    }

    fn apply(self, cell: Cell) -> Cell {
        match self {
            Action::Up => Cell::new(cell.row.wrapping_sub(1), cell.col),
            Action::Down => Cell::new(cell.row + 1, cell.col),
            Action::Left => Cell::new(cell.row, cell.col.wrapping_sub(1)),
            Action::Right => Cell::new(cell.row, cell.col + 1),
        }
    }
}

/// Dynamic episode state shared by the maze tasks and KeyChest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridState {
    pub agent: Cell,
    pub goal: Cell,
    pub steps: usize,
    pub keychest: Option<KeyChestState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyChestState {
    pub key: Cell,
    pub chest: Cell,
    pub key_present: bool,
    pub has_key: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    State,
    Goal,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Vec<u8>,
    pub reward: f64,
    pub done: bool,
}

/// Training/evaluation goal split with uniform sampling per split.
#[derive(Debug, Clone)]
pub struct GoalDistribution {
    pub train_goals: Vec<Cell>,
    pub test_goals: Vec<Cell>,
}

impl GoalDistribution {
    pub fn new(train_goals: Vec<Cell>, test_goals: Vec<Cell>) -> Result<Self> {
        if train_goals.is_empty() {
            return Err(Error::config("goal distribution needs training goals"));
        }
        for t in &test_goals {
            if train_goals.contains(t) {
                return Err(Error::config(format!(
                    "test goal {t:?} also appears in the training split"
                )));
            }
        }
        Ok(Self {
            train_goals,
            test_goals,
        })
    }

    /// Canonical split: `n_train` goals spaced along the corridor plus
    /// `n_test` held-out goals from the remaining corridor cells.
    pub fn canonical(maze: &MazeSpec, n_train: usize, n_test: usize) -> Result<Self> {
        let train = maze.canonical_train_goals(n_train)?;
        let test = maze.canonical_test_goals(n_test, &train)?;
        Self::new(train, test)
    }

    pub fn sample_train(&self, rng: &mut impl Rng) -> Cell {
        self.train_goals[rng.gen_range(0..self.train_goals.len())]
    }

    pub fn sample_test(&self, rng: &mut impl Rng) -> Result<Cell> {
        if self.test_goals.is_empty() {
            return Err(Error::config("goal distribution has no test goals"));
        }
        Ok(self.test_goals[rng.gen_range(0..self.test_goals.len())])
    }
}

/// Goal-reaching gridworld with pixel observations: -1 per step, +5 on
/// reaching the active goal, episode capped at the horizon.
#[derive(Debug, Clone)]
pub struct GridEnv {
    pub maze: MazeSpec,
    pub horizon: usize,
    state: GridState,
    episode_active: bool,
}

impl GridEnv {
    pub fn new(maze: MazeSpec) -> Self {
        let start = maze.start;
        Self {
            maze,
            horizon: DEFAULT_HORIZON,
            state: GridState {
                agent: start,
                goal: start,
                steps: 0,
                keychest: None,
            },
            episode_active: false,
        }
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    /// Starts an episode toward `goal`. Returns the initial state observation
    /// and the goal observation.
    pub fn reset(&mut self, goal: Cell) -> Result<(Vec<u8>, Vec<u8>)> {
        if !self.maze.goal_candidates.contains(&goal) {
            return Err(Error::usage(format!(
                "goal {goal:?} is not a candidate goal cell"
            )));
        }
        self.state = GridState {
            agent: self.maze.start,
            goal,
            steps: 0,
            keychest: None,
        };
        self.episode_active = true;
        Ok((self.observe(RenderMode::State), self.observe(RenderMode::Goal)))
    }

    /// Renders the current state, or the goal as the observation the agent
    /// would receive standing on the goal cell.
    pub fn observe(&self, mode: RenderMode) -> Vec<u8> {
        render_state(&self.maze, &self.state, mode)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if !self.episode_active {
            return Err(Error::usage("step called on a finished episode"));
        }
        let next = action.apply(self.state.agent);
        if self.maze.is_floor(next) {
            self.state.agent = next;
        }
        self.state.steps += 1;

        let reached = self.state.agent == self.state.goal;
        let reward = if reached { -1.0 + 5.0 } else { -1.0 };
        let done = reached || self.state.steps >= self.horizon;
        if done {
            self.episode_active = false;
        }
        Ok(StepOutcome {
            observation: self.observe(RenderMode::State),
            reward,
            done,
        })
    }
}

/// KeyChest task: +1 for picking up the key (once), +5 for opening the chest
/// with the key (ends the episode), zero otherwise. The start cell is
/// sampled uniformly among floor cells other than the key and chest.
#[derive(Debug, Clone)]
pub struct KeyChestEnv {
    pub maze: MazeSpec,
    pub horizon: usize,
    state: GridState,
    episode_active: bool,
}

impl KeyChestEnv {
    pub fn new(maze: MazeSpec) -> Result<Self> {
        let key = maze
            .key
            .ok_or_else(|| Error::config("KeyChest maze must define a key cell"))?;
        let chest = maze
            .chest
            .ok_or_else(|| Error::config("KeyChest maze must define a chest cell"))?;
        let start = maze.start;
        Ok(Self {
            maze,
            horizon: DEFAULT_HORIZON,
            state: GridState {
                agent: start,
                goal: start,
                steps: 0,
                keychest: Some(KeyChestState {
                    key,
                    chest,
                    key_present: true,
                    has_key: false,
                }),
            },
            episode_active: false,
        })
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn start_candidates(&self) -> Vec<Cell> {
        let kc = self.state.keychest.unwrap();
        self.maze
            .floor_cells()
            .into_iter()
            .filter(|c| *c != kc.key && *c != kc.chest)
            .collect()
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<u8> {
        let starts = self.start_candidates();
        let start = starts[rng.gen_range(0..starts.len())];
        let kc = self.state.keychest.unwrap();
        self.state = GridState {
            agent: start,
            goal: start,
            steps: 0,
            keychest: Some(KeyChestState {
                key: kc.key,
                chest: kc.chest,
                key_present: true,
                has_key: false,
            }),
        };
        self.episode_active = true;
        self.observe()
    }

    pub fn observe(&self) -> Vec<u8> {
        render_state(&self.maze, &self.state, RenderMode::State)
    }

    /// Observation the agent would receive standing on `subgoal`. Targeting
    /// the key cell implies having picked the key up.
    pub fn render_subgoal(&self, subgoal: Cell) -> Result<Vec<u8>> {
        if !self.maze.is_floor(subgoal) {
            return Err(Error::usage(format!("subgoal {subgoal:?} is not a floor cell")));
        }
        let kc = self.state.keychest.unwrap();
        let mut view_state = self.state.clone();
        view_state.agent = subgoal;
        if subgoal == kc.key {
            view_state.keychest = Some(KeyChestState {
                key_present: false,
                ..kc
            });
        }
        Ok(render_state(&self.maze, &view_state, RenderMode::State))
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if !self.episode_active {
            return Err(Error::usage("step called on a finished episode"));
        }
        let next = action.apply(self.state.agent);
        if self.maze.is_floor(next) {
            self.state.agent = next;
        }
        self.state.steps += 1;

        let mut kc = self.state.keychest.unwrap();
        let mut reward = 0.0;
        let mut done = false;
        if self.state.agent == kc.key && kc.key_present {
            kc.key_present = false;
            kc.has_key = true;
            reward += 1.0;
        }
        if self.state.agent == kc.chest && kc.has_key {
            reward += 5.0;
            done = true;
        }
        self.state.keychest = Some(kc);
        if self.state.steps >= self.horizon {
            done = true;
        }
        if done {
            self.episode_active = false;
        }
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done,
        })
    }
}

/// Renders state or goal view of a `GridState`. Goal mode places the agent
/// marker on the goal cell so that a reached goal and its goal observation
/// coincide exactly.
pub fn render_state(maze: &MazeSpec, state: &GridState, mode: RenderMode) -> Vec<u8> {
    let agent = match mode {
        RenderMode::State => state.agent,
        RenderMode::Goal => state.goal,
    };
    let (key, chest, goal_marker) = match state.keychest {
        Some(kc) => (
            kc.key_present.then_some(kc.key),
            Some(kc.chest),
            None,
        ),
        None => (None, None, Some(state.goal)),
    };
    render_pixels(
        maze,
        &RenderView {
            agent,
            goal_marker,
            key,
            chest,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::maze::{build_keychest_maze, build_maze, Topology};
    use crate::env::render::differing_cell_blocks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loop_env() -> GridEnv {
        GridEnv::new(build_maze(Topology::Loop, 0).unwrap())
    }

    #[test]
    fn reset_is_deterministic_and_places_agent_at_start() {
        let mut env = loop_env();
        let goal = Cell::new(5, 5);
        let (s1, g1) = env.reset(goal).unwrap();
        let (s2, g2) = env.reset(goal).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(g1, g2);
        assert_eq!(env.state().agent, env.maze.start);
    }

    #[test]
    fn goal_observation_differs_only_in_marker_blocks() {
        let mut env = loop_env();
        let goal = Cell::new(5, 5);
        let (state_obs, goal_obs) = env.reset(goal).unwrap();
        let diff = differing_cell_blocks(&state_obs, &goal_obs);
        assert_eq!(diff, vec![Cell::new(0, 0), Cell::new(5, 5)]);
    }

    #[test]
    fn reached_goal_state_matches_goal_observation_exactly() {
        let mut env = loop_env();
        let goal = Cell::new(0, 1);
        let (_, goal_obs) = env.reset(goal).unwrap();
        let out = env.step(Action::Right).unwrap();
        assert!(out.done);
        assert_eq!(out.observation, goal_obs);
    }

    #[test]
    fn invalid_goal_is_rejected() {
        let mut env = loop_env();
        assert!(env.reset(Cell::new(2, 2)).is_err()); // interior wall
        assert!(env.reset(env.maze.start).is_err()); // start is not a candidate
    }

    #[test]
    fn wall_bump_keeps_position_and_costs_one() {
        let mut env = loop_env();
        env.reset(Cell::new(5, 5)).unwrap();
        let out = env.step(Action::Down).unwrap(); // (0,0) -> (1,0) is floor on loop
        assert_eq!(env.state().agent, Cell::new(1, 0));
        assert_eq!(out.reward, -1.0);
        let out = env.step(Action::Right).unwrap(); // (1,1) is wall
        assert_eq!(env.state().agent, Cell::new(1, 0));
        assert_eq!(out.reward, -1.0);
        // Leaving the grid is also a wall.
        let mut env2 = loop_env();
        env2.reset(Cell::new(5, 5)).unwrap();
        env2.step(Action::Up).unwrap();
        assert_eq!(env2.state().agent, Cell::new(0, 0));
    }

    #[test]
    fn reaching_goal_pays_plus_five_and_ends() {
        let mut env = loop_env();
        env.reset(Cell::new(0, 1)).unwrap();
        let out = env.step(Action::Right).unwrap();
        assert_eq!(out.reward, 4.0); // -1 step + 5 goal
        assert!(out.done);
        assert!(env.step(Action::Right).is_err());
    }

    #[test]
    fn return_decomposition_is_exact() {
        // Return over t steps without reaching the goal is exactly -t;
        // reaching the goal adds exactly +5.
        let mut env = loop_env();
        env.reset(Cell::new(5, 5)).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        let mut reached = false;
        for action in [Action::Down, Action::Down, Action::Up, Action::Up, Action::Right] {
            let out = env.step(action).unwrap();
            total += out.reward;
            steps += 1;
            if out.done {
                reached = env.state().agent == env.state().goal;
                break;
            }
        }
        assert_eq!(total, 5.0 * f64::from(u8::from(reached)) - steps as f64);
    }

    #[test]
    fn horizon_caps_episodes() {
        let mut env = loop_env();
        env.horizon = 3;
        env.reset(Cell::new(5, 5)).unwrap();
        for _ in 0..2 {
            assert!(!env.step(Action::Up).unwrap().done);
        }
        assert!(env.step(Action::Up).unwrap().done);
    }

    #[test]
    fn transition_is_deterministic() {
        let mut a = loop_env();
        let mut b = loop_env();
        a.reset(Cell::new(5, 0)).unwrap();
        b.reset(Cell::new(5, 0)).unwrap();
        for action in [Action::Down, Action::Down, Action::Left, Action::Down] {
            let oa = a.step(action).unwrap();
            let ob = b.step(action).unwrap();
            assert_eq!(oa.observation, ob.observation);
            assert_eq!(oa.reward, ob.reward);
        }
    }

    #[test]
    fn keychest_key_then_chest_pays_six() {
        let maze = build_keychest_maze().unwrap();
        let mut env = KeyChestEnv::new(maze).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        // Drive deterministically: walk to key at (0,5), then to chest (5,0).
        let mut total = 0.0;
        let key = Cell::new(0, 5);
        let chest = Cell::new(5, 0);
        for target in [key, chest] {
            for _ in 0..60 {
                if env.state().agent == target {
                    break;
                }
                let cur = env.state().agent;
                let next_step = pick_step_toward(&env.maze, cur, target);
                let out = env.step(next_step).unwrap();
                total += out.reward;
                if out.done {
                    break;
                }
            }
        }
        assert_eq!(total, 6.0, "key (+1) then chest (+5)");
        assert!(env.state().keychest.unwrap().has_key);
    }

    #[test]
    fn chest_without_key_does_nothing() {
        let maze = build_keychest_maze().unwrap();
        let mut env = KeyChestEnv::new(maze).unwrap();
        // Fix a start next to the chest, away from the key.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        loop {
            env.reset(&mut rng);
            if env.state().agent == Cell::new(4, 0) {
                break;
            }
        }
        let out = env.step(Action::Down).unwrap();
        assert_eq!(env.state().agent, Cell::new(5, 0));
        assert_eq!(out.reward, 0.0);
        assert!(!out.done, "chest without key leaves the episode running");
    }

    #[test]
    fn key_reward_is_paid_at_most_once() {
        let maze = build_keychest_maze().unwrap();
        let mut env = KeyChestEnv::new(maze).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        loop {
            env.reset(&mut rng);
            if env.state().agent == Cell::new(0, 4) {
                break;
            }
        }
        let first = env.step(Action::Right).unwrap(); // onto the key
        assert_eq!(first.reward, 1.0);
        let away = env.step(Action::Left).unwrap();
        assert_eq!(away.reward, 0.0);
        let back = env.step(Action::Right).unwrap(); // back onto the key cell
        assert_eq!(back.reward, 0.0);
    }

    #[test]
    fn keychest_reset_is_seed_reproducible() {
        let maze = build_keychest_maze().unwrap();
        let mut a = KeyChestEnv::new(maze.clone()).unwrap();
        let mut b = KeyChestEnv::new(maze).unwrap();
        let obs_a = a.reset(&mut ChaCha8Rng::seed_from_u64(9));
        let obs_b = b.reset(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(obs_a, obs_b);
        assert_eq!(a.state().agent, b.state().agent);
    }

    #[test]
    fn goal_sampling_is_uniform_within_three_sigma() {
        let maze = build_maze(Topology::Loop, 0).unwrap();
        let dist = GoalDistribution::canonical(&maze, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 10_000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            *counts.entry(dist.sample_train(&mut rng)).or_insert(0usize) += 1;
        }
        let p = 1.0 / 8.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for g in &dist.train_goals {
            let c = *counts.get(g).unwrap_or(&0) as f64;
            assert!(
                (c - draws as f64 * p).abs() <= 3.0 * sigma,
                "goal {g:?} drawn {c} times"
            );
        }
        // Test split never returns a train goal.
        for _ in 0..1000 {
            let t = dist.sample_test(&mut rng).unwrap();
            assert!(!dist.train_goals.contains(&t));
        }
        // Single-goal list always returns that goal.
        let single = GoalDistribution::new(vec![Cell::new(5, 5)], vec![]).unwrap();
        for _ in 0..10 {
            assert_eq!(single.sample_train(&mut rng), Cell::new(5, 5));
        }
        assert!(single.sample_test(&mut rng).is_err());
    }

    fn pick_step_toward(maze: &MazeSpec, from: Cell, to: Cell) -> Action {
        // One BFS step along a shortest path; test helper only.
        let mut best = Action::Up;
        let mut best_len = usize::MAX;
        for action in Action::ALL {
            let next = action.apply(from);
            if maze.is_floor(next) {
                if let Some(len) = maze.shortest_path_len(next, to) {
                    if len < best_len {
                        best_len = len;
                        best = action;
                    }
                }
            }
        }
        best
    }
}
