//! Tabular Q-learning baseline and the environment step function it (and
//! plan validation) runs against.
//!
//! The learner operates on the same augmented state space as the planner,
//! so key and door tasks stay Markov. Rewards are sparse: 1.0 on reaching
//! the goal, 0.0 everywhere else, with no penalty for invalid attempts.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::GridWorld;
use crate::logic::Direction;
use crate::planner::{initial_state, AugmentedState};

/// Result of attempting one action in the environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: AugmentedState,
    pub reward: f64,
    /// The attempt was rejected (wall, out of bounds, or locked door); the
    /// agent stays in place.
    pub invalid: bool,
    /// The resulting cell is the goal.
    pub terminal: bool,
}

/// Attempts to move one cell in `dir`.
///
/// The move succeeds when the target is in bounds, not a wall, and, for
/// door cells, the matching key is held. Entering a key cell adds that key
/// to the inventory. Rejected moves leave the state untouched.
pub fn simulate_step(world: &GridWorld, state: AugmentedState, dir: Direction) -> StepOutcome {
    let target = world.neighbor(state.cell, dir).filter(|c| !world.is_wall(*c));
    let passable = match target {
        Some(cell) => match world.door_at(cell) {
            Some(key) => state.inventory.contains(key),
            None => true,
        },
        None => false,
    };
    if !passable {
        return StepOutcome {
            next: state,
            reward: 0.0,
            invalid: true,
            terminal: world.goal() == Some(state.cell),
        };
    }
    let cell = target.expect("passable implies a target cell");
    let mut inventory = state.inventory;
    if let Some(key) = world.key_at(cell) {
        inventory.insert(key);
    }
    let terminal = world.goal() == Some(cell);
    StepOutcome {
        next: AugmentedState::new(cell, inventory),
        reward: if terminal { 1.0 } else { 0.0 },
        invalid: false,
        terminal,
    }
}

/// Training configuration. Field names double as the JSON config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub alpha: f64,
    pub gamma_discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: u32,
    pub episodes: u32,
    pub max_steps_per_episode: u32,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 0.1,
            gamma_discount: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 4000,
            episodes: 5000,
            max_steps_per_episode: 200,
            seed: 0,
        }
    }
}

/// A hyperparameter fell outside its allowed range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvalidHyperparams(pub String);

impl fmt::Display for InvalidHyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid hyperparameters: {}", self.0)
    }
}

impl std::error::Error for InvalidHyperparams {}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), InvalidHyperparams> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(InvalidHyperparams(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !(self.gamma_discount >= 0.0 && self.gamma_discount < 1.0) {
            return Err(InvalidHyperparams(format!(
                "gamma_discount {} not in [0, 1)",
                self.gamma_discount
            )));
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(InvalidHyperparams(format!("{name} {eps} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Exploration rate for a 0-based episode index: linear decay from
    /// `epsilon_start` to `epsilon_end` over `epsilon_decay_episodes`.
    pub fn epsilon_for(&self, episode: u32) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let t = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// Action-value table with implicit zeros for unseen pairs.
#[derive(Clone, Debug, Default)]
pub struct QTable {
    values: HashMap<AugmentedState, [f64; 4]>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, state: &AugmentedState, dir: Direction) -> f64 {
        self.values.get(state).map_or(0.0, |row| row[dir.index()])
    }

    pub fn max_value(&self, state: &AugmentedState) -> f64 {
        self.values
            .get(state)
            .map_or(0.0, |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Argmax action with ties broken by the fixed N, E, S, W order.
    pub fn best_action(&self, state: &AugmentedState) -> Direction {
        let row = self.values.get(state);
        let mut best = Direction::North;
        let mut best_value = f64::NEG_INFINITY;
        for dir in Direction::ALL {
            let value = row.map_or(0.0, |r| r[dir.index()]);
            if value > best_value {
                best = dir;
                best_value = value;
            }
        }
        best
    }

    fn nudge(&mut self, state: AugmentedState, dir: Direction, alpha: f64, target: f64) {
        let row = self.values.entry(state).or_insert([0.0; 4]);
        let q = &mut row[dir.index()];
        *q += alpha * (target - *q);
    }

    /// Number of states with stored values.
    pub fn state_count(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All stored values are finite.
    pub fn is_finite(&self) -> bool {
        self.values.values().flatten().all(|v| v.is_finite())
    }

    /// Entries in canonical order, for deterministic serialization.
    pub fn sorted_entries(&self) -> Vec<(AugmentedState, Direction, f64)> {
        let mut states: Vec<&AugmentedState> = self.values.keys().collect();
        states.sort();
        let mut out = Vec::with_capacity(states.len() * 4);
        for state in states {
            for dir in Direction::ALL {
                out.push((*state, dir, self.values[state][dir.index()]));
            }
        }
        out
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values
            .values()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

impl Direction {
    pub(crate) fn index(self) -> usize {
        match self {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        }
    }
}

/// Per-episode training record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeMetrics {
    pub episode: u32,
    pub steps: u32,
    pub invalid_count: u32,
    pub success: bool,
}

/// Trained table plus the per-episode series.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub qtable: QTable,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Trains a tabular Q-learner with epsilon-greedy exploration and one-step
/// temporal-difference updates. Deterministic for a given seed.
pub fn train_q(world: &GridWorld, hp: &Hyperparams) -> Result<TrainOutput, InvalidHyperparams> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut qtable = QTable::new();
    let mut episodes = Vec::with_capacity(hp.episodes as usize);
    let start = initial_state(world);

    for episode in 0..hp.episodes {
        let epsilon = hp.epsilon_for(episode);
        let mut state = start;
        let mut steps = 0u32;
        let mut invalid_count = 0u32;
        let mut success = false;

        for _ in 0..hp.max_steps_per_episode {
            let action = if rng.random::<f64>() < epsilon {
                Direction::ALL[rng.random_range(0..4)]
            } else {
                qtable.best_action(&state)
            };
            let outcome = simulate_step(world, state, action);
            // At terminal successors the table holds no entries, so the
            // bootstrap term is zero and the target collapses to the reward.
            let target = outcome.reward + hp.gamma_discount * qtable.max_value(&outcome.next);
            qtable.nudge(state, action, hp.alpha, target);
            steps += 1;
            if outcome.invalid {
                invalid_count += 1;
            }
            state = outcome.next;
            if outcome.terminal {
                success = true;
                break;
            }
        }
        episodes.push(EpisodeMetrics { episode, steps, invalid_count, success });
    }
    Ok(TrainOutput { qtable, episodes })
}

/// A greedy policy execution trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<AugmentedState>,
    pub actions: Vec<Direction>,
    pub success: bool,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// Follows the argmax action from the start until the goal, a revisited
/// state (a loop under the greedy policy), or the step limit.
pub fn greedy_rollout(qtable: &QTable, world: &GridWorld, max_steps: u32) -> Rollout {
    let mut state = initial_state(world);
    let mut states = vec![state];
    let mut actions = Vec::new();
    let mut visited = std::collections::HashSet::new();
    visited.insert(state);
    let mut success = world.goal() == Some(state.cell);

    for _ in 0..max_steps {
        if success {
            break;
        }
        let action = qtable.best_action(&state);
        let outcome = simulate_step(world, state, action);
        actions.push(action);
        states.push(outcome.next);
        if outcome.terminal && !outcome.invalid {
            success = true;
            break;
        }
        if !visited.insert(outcome.next) {
            break;
        }
        state = outcome.next;
    }
    Rollout { states, actions, success }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;
    use crate::logic::Cell;
    use crate::planner::oracle_shortest;

    #[test]
    fn east_move_in_corridor_is_valid() {
        let world = parse_grid("S.G").unwrap();
        let out = simulate_step(&world, initial_state(&world), Direction::East);
        assert!(!out.invalid);
        assert_eq!(out.next.cell, Cell::new(1, 0));
        assert_eq!(out.reward, 0.0);
        assert!(!out.terminal);
    }

    #[test]
    fn out_of_bounds_move_is_invalid_and_stays() {
        let world = parse_grid("S.G").unwrap();
        let start = initial_state(&world);
        let out = simulate_step(&world, start, Direction::West);
        assert!(out.invalid);
        assert_eq!(out.next, start);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn locked_door_rejects_keyless_entry() {
        let world = parse_grid("SaAG").unwrap();
        // Teleported next to the door without the key.
        let state = AugmentedState::new(Cell::new(1, 0), crate::planner::KeySet::empty());
        let out = simulate_step(&world, state, Direction::East);
        assert!(out.invalid);
        assert_eq!(out.next, state);

        let keyed = AugmentedState::new(Cell::new(1, 0), crate::planner::KeySet::empty().with(crate::logic::KeyId('a')));
        let out = simulate_step(&world, keyed, Direction::East);
        assert!(!out.invalid);
    }

    #[test]
    fn goal_entry_pays_one_and_terminates() {
        let world = parse_grid("SG").unwrap();
        let out = simulate_step(&world, initial_state(&world), Direction::East);
        assert!(out.terminal);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn zero_episodes_yields_empty_output() {
        let world = parse_grid("S.G").unwrap();
        let hp = Hyperparams { episodes: 0, ..Hyperparams::default() };
        let out = train_q(&world, &hp).unwrap();
        assert!(out.qtable.is_empty());
        assert!(out.episodes.is_empty());
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let world = parse_grid("S.G").unwrap();
        let hp = Hyperparams { alpha: 0.0, ..Hyperparams::default() };
        assert!(train_q(&world, &hp).is_err());
        let hp = Hyperparams { gamma_discount: 1.0, ..Hyperparams::default() };
        assert!(train_q(&world, &hp).is_err());
        let hp = Hyperparams { epsilon_start: 1.5, ..Hyperparams::default() };
        assert!(train_q(&world, &hp).is_err());
    }

    #[test]
    fn corridor_training_converges_to_oracle_length() {
        let world = parse_grid("S.G").unwrap();
        let oracle = oracle_shortest(&world).unwrap().0;
        let mut converged = 0;
        for seed in 0..20 {
            let hp = Hyperparams {
                episodes: 500,
                epsilon_decay_episodes: 400,
                seed,
                ..Hyperparams::default()
            };
            let out = train_q(&world, &hp).unwrap();
            let rollout = greedy_rollout(&out.qtable, &world, 50);
            if rollout.success && rollout.steps() == oracle {
                converged += 1;
            }
        }
        assert!(converged >= 18, "only {converged}/20 seeds converged");
    }

    #[test]
    fn all_zero_table_loops_north_on_corridor() {
        let world = parse_grid("S.G").unwrap();
        let rollout = greedy_rollout(&QTable::new(), &world, 50);
        assert!(!rollout.success);
        assert_eq!(rollout.actions, vec![Direction::North]);
        assert_eq!(rollout.states.len(), 2);
        assert_eq!(rollout.states[0], rollout.states[1]);
    }

    #[test]
    fn unsolvable_grid_never_rolls_out_successfully() {
        let world = parse_grid("S#G").unwrap();
        let hp = Hyperparams { episodes: 200, epsilon_decay_episodes: 100, ..Hyperparams::default() };
        let out = train_q(&world, &hp).unwrap();
        let rollout = greedy_rollout(&out.qtable, &world, 100);
        assert!(!rollout.success);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let world = parse_grid("SaAG").unwrap();
        let hp = Hyperparams { episodes: 300, seed: 9, ..Hyperparams::default() };
        let a = train_q(&world, &hp).unwrap();
        let b = train_q(&world, &hp).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.qtable.sorted_entries(), b.qtable.sorted_entries());
    }

    #[test]
    fn q_values_stay_bounded() {
        let world = parse_grid("SaAG").unwrap();
        let hp = Hyperparams { episodes: 1000, ..Hyperparams::default() };
        let out = train_q(&world, &hp).unwrap();
        assert!(out.qtable.is_finite());
        let bound = 1.0 / (1.0 - hp.gamma_discount);
        assert!(out.qtable.max_abs_value() <= bound);
    }
}
