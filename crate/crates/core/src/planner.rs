//! Plan construction on top of provability.
//!
//! Provability comes from the closure of the compiled rules; the executable
//! trajectory comes from breadth-first search over the augmented state
//! space (cell paired with key inventory), which guarantees the returned
//! movement sequence is shortest. Each move is then annotated with the
//! compiled rule that licenses it, so plans replay as chains of justified
//! rule applications.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grid::{CompiledEnv, GridWorld};
use crate::logic::{
    close, extract_proof, proves, ActionLabel, Cell, ClosureStats, Direction, KeyId, ProofTree,
    Proposition, Rule, RuleId,
};
use crate::rl::simulate_step;

/// A set of held keys, packed as a bitmask over the letters a-z.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeySet(u32);

impl KeySet {
    pub fn empty() -> Self {
        KeySet(0)
    }

    fn bit(key: KeyId) -> u32 {
        debug_assert!(key.0.is_ascii_lowercase(), "key ids are lowercase letters");
        1 << (key.0 as u8 - b'a')
    }

    pub fn insert(&mut self, key: KeyId) {
        self.0 |= Self::bit(key);
    }

    pub fn with(mut self, key: KeyId) -> Self {
        self.insert(key);
        self
    }

    pub fn contains(self, key: KeyId) -> bool {
        self.0 & Self::bit(key) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: KeySet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = KeyId> {
        (0..26u8)
            .filter(move |i| self.0 & (1 << i) != 0)
            .map(|i| KeyId((b'a' + i) as char))
    }
}

impl FromIterator<KeyId> for KeySet {
    fn from_iter<T: IntoIterator<Item = KeyId>>(iter: T) -> Self {
        let mut set = KeySet::empty();
        for key in iter {
            set.insert(key);
        }
        set
    }
}

impl fmt::Debug for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeySet({self})")
    }
}

impl fmt::Display for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in self.iter() {
            write!(f, "{key}")?;
        }
        Ok(())
    }
}

impl Serialize for KeySet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeySet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let mut set = KeySet::empty();
        for ch in s.chars() {
            if !ch.is_ascii_lowercase() {
                return Err(serde::de::Error::custom(format!("invalid key letter {ch:?}")));
            }
            set.insert(KeyId(ch));
        }
        Ok(set)
    }
}

/// A cell together with the keys held on arrival, the product state on
/// which optimality and the learning baseline are defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugmentedState {
    pub cell: Cell,
    pub inventory: KeySet,
}

impl AugmentedState {
    pub fn new(cell: Cell, inventory: KeySet) -> Self {
        AugmentedState { cell, inventory }
    }
}

/// The license carried by a plan step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepJustification {
    /// A rule application: the rule and the ground antecedents it consumed.
    Rule { rule: RuleId, antecedents: Vec<Proposition> },
    /// A message send; the payload is provable in the sender's knowledge base.
    Message { payload: Proposition },
    /// A synchronization no-op in round-based execution.
    Wait,
}

/// One justified step of a plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: ActionLabel,
    pub from: AugmentedState,
    pub to: AugmentedState,
    pub justification: StepJustification,
}

/// A justified action sequence. Consecutive steps chain (`steps[i].to ==
/// steps[i+1].from`) and `total_length` counts movement actions only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub total_length: usize,
}

impl Plan {
    pub fn from_steps(steps: Vec<PlanStep>) -> Self {
        let total_length = steps
            .iter()
            .filter(|s| matches!(s.action, ActionLabel::Move(_)))
            .count();
        Plan { steps, total_length }
    }

    pub fn empty() -> Self {
        Plan { steps: Vec::new(), total_length: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The state the plan starts from, when it has any steps.
    pub fn initial_state(&self) -> Option<AugmentedState> {
        self.steps.first().map(|s| s.from)
    }

    /// Movement directions in order, ignoring sends and waits.
    pub fn movement_actions(&self) -> Vec<Direction> {
        self.steps
            .iter()
            .filter_map(|s| match s.action {
                ActionLabel::Move(dir) => Some(dir),
                _ => None,
            })
            .collect()
    }

    /// Cells visited by the plan, starting cell first; only movement steps
    /// contribute.
    pub fn cell_sequence(&self) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(self.steps.len() + 1);
        if let Some(first) = self.steps.first() {
            cells.push(first.from.cell);
        }
        for step in &self.steps {
            if matches!(step.action, ActionLabel::Move(_)) {
                cells.push(step.to.cell);
            }
        }
        cells
    }
}

/// Lookup structures over a compiled rule set for product-space search.
pub(crate) struct RuleIndex<'a> {
    moves: HashMap<(Cell, Direction), Vec<&'a Rule>>,
    pickups: HashMap<Cell, Vec<KeyId>>,
}

impl<'a> RuleIndex<'a> {
    pub(crate) fn new(rules: &'a [Rule]) -> Self {
        let mut moves: HashMap<(Cell, Direction), Vec<&'a Rule>> = HashMap::new();
        let mut pickups: HashMap<Cell, Vec<KeyId>> = HashMap::new();
        for rule in rules {
            match rule.action() {
                Some(ActionLabel::Move(dir)) => {
                    let sources: Vec<Cell> = rule
                        .antecedents()
                        .iter()
                        .filter_map(|p| match p {
                            Proposition::At(c) => Some(*c),
                            _ => None,
                        })
                        .collect();
                    // Executable movement rules have exactly one source cell.
                    if let [source] = sources[..] {
                        moves.entry((source, dir)).or_default().push(rule);
                    }
                }
                _ => {
                    if let (
                        [Proposition::At(cell)],
                        Proposition::HasKey(key),
                    ) = (rule.antecedents(), rule.consequent())
                    {
                        pickups.entry(*cell).or_default().push(*key);
                    }
                }
            }
        }
        for rules in moves.values_mut() {
            rules.sort_by_key(|r| r.id());
        }
        RuleIndex { moves, pickups }
    }

    /// State on entering `cell`: the inventory absorbs any keys picked up there.
    pub(crate) fn absorb(&self, cell: Cell, mut inventory: KeySet) -> KeySet {
        if let Some(keys) = self.pickups.get(&cell) {
            for key in keys {
                inventory.insert(*key);
            }
        }
        inventory
    }

    pub(crate) fn entry_state(&self, cell: Cell) -> AugmentedState {
        AugmentedState::new(cell, self.absorb(cell, KeySet::empty()))
    }

    /// Applies the lowest-id rule moving `dir` from the current state, if
    /// one is satisfied by the held knowledge.
    pub(crate) fn step(
        &self,
        state: AugmentedState,
        dir: Direction,
    ) -> Option<(AugmentedState, &'a Rule)> {
        let candidates = self.moves.get(&(state.cell, dir))?;
        for rule in candidates {
            let licensed = rule.antecedents().iter().all(|p| match p {
                Proposition::At(c) => *c == state.cell,
                Proposition::HasKey(k) => state.inventory.contains(*k),
                _ => false,
            });
            if !licensed {
                continue;
            }
            let Proposition::At(target) = rule.consequent() else { continue };
            let inventory = self.absorb(*target, state.inventory);
            return Some((AugmentedState::new(*target, inventory), rule));
        }
        None
    }
}

/// Shortest justified step sequence from `start` to a state satisfying
/// `is_goal`, searching the augmented state space with directions expanded
/// in the fixed N, E, S, W order.
fn search(
    index: &RuleIndex<'_>,
    start: AugmentedState,
    is_goal: impl Fn(&AugmentedState) -> bool,
) -> Option<Vec<PlanStep>> {
    if is_goal(&start) {
        return Some(Vec::new());
    }
    let mut parent: HashMap<AugmentedState, (AugmentedState, Direction, &Rule)> = HashMap::new();
    let mut queue = VecDeque::new();
    queue.push_back(start);
    let mut found: Option<AugmentedState> = None;
    'bfs: while let Some(state) = queue.pop_front() {
        for dir in Direction::ALL {
            let Some((next, rule)) = index.step(state, dir) else { continue };
            if next == start || parent.contains_key(&next) {
                continue;
            }
            parent.insert(next, (state, dir, rule));
            if is_goal(&next) {
                found = Some(next);
                break 'bfs;
            }
            queue.push_back(next);
        }
    }
    let mut cursor = found?;
    let mut steps = Vec::new();
    while let Some((prev, dir, rule)) = parent.get(&cursor) {
        steps.push(PlanStep {
            action: ActionLabel::Move(*dir),
            from: *prev,
            to: cursor,
            justification: StepJustification::Rule {
                rule: rule.id(),
                antecedents: rule.antecedents().to_vec(),
            },
        });
        cursor = *prev;
    }
    steps.reverse();
    Some(steps)
}

/// True when the state establishes the given proposition by itself.
fn satisfies(state: &AugmentedState, goal: &Proposition) -> bool {
    match goal {
        Proposition::At(c) => state.cell == *c,
        Proposition::HasKey(k) => state.inventory.contains(*k),
        _ => false,
    }
}

/// The goal proposition is not derivable from the initial knowledge base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unsolvable;

impl fmt::Display for Unsolvable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "goal is not derivable from the initial knowledge base")
    }
}

impl std::error::Error for Unsolvable {}

/// A solved instance: the optimal justified plan, the goal's proof tree,
/// and the work counters of the single closure computation behind it.
#[derive(Clone, Debug)]
pub struct Solution {
    pub plan: Plan,
    pub proof: ProofTree,
    pub stats: ClosureStats,
}

/// Plans a compiled environment.
///
/// One closure computation decides solvability and yields the proof tree;
/// breadth-first search over (cell, inventory) then extracts a shortest
/// valid trajectory. The two agree on reachability for this rule class
/// because keys persist and movement is reversible.
pub fn plan(env: &CompiledEnv, world: &GridWorld) -> Result<Solution, Unsolvable> {
    let closure = close(&env.initial, &env.rules);
    if !proves(&closure.facts, &env.goal_prop) {
        return Err(Unsolvable);
    }
    let proof = extract_proof(&closure.graph, &env.goal_prop)
        .expect("proven goals are in the derivation graph");
    let Proposition::At(goal_cell) = env.goal_prop else {
        return Err(Unsolvable);
    };
    let index = RuleIndex::new(&env.rules);
    let start = index.entry_state(world.start());
    let steps = search(&index, start, |s| s.cell == goal_cell)
        .expect("closure membership and product-space reachability agree");
    Ok(Solution { plan: Plan::from_steps(steps), proof, stats: closure.stats })
}

/// Independent brute-force shortest path over (cell, inventory), stepping
/// on raw grid geometry rather than compiled rules. Returns the movement
/// count and the visited state sequence.
pub fn oracle_shortest(world: &GridWorld) -> Option<(usize, Vec<AugmentedState>)> {
    let goal = world.goal()?;
    let mut inventory = KeySet::empty();
    if let Some(k) = world.key_at(world.start()) {
        inventory.insert(k);
    }
    let start = AugmentedState::new(world.start(), inventory);
    if start.cell == goal {
        return Some((0, vec![start]));
    }
    let mut parent: HashMap<AugmentedState, AugmentedState> = HashMap::new();
    let mut queue = VecDeque::new();
    queue.push_back(start);
    let mut found: Option<AugmentedState> = None;
    'bfs: while let Some(state) = queue.pop_front() {
        for dir in Direction::ALL {
            let Some(cell) = world.neighbor(state.cell, dir) else { continue };
            if world.is_wall(cell) {
                continue;
            }
            if let Some(door) = world.door_at(cell) {
                if !state.inventory.contains(door) {
                    continue;
                }
            }
            let mut inventory = state.inventory;
            if let Some(key) = world.key_at(cell) {
                inventory.insert(key);
            }
            let next = AugmentedState::new(cell, inventory);
            if next == start || parent.contains_key(&next) {
                continue;
            }
            parent.insert(next, state);
            if cell == goal {
                found = Some(next);
                break 'bfs;
            }
            queue.push_back(next);
        }
    }
    let mut cursor = found?;
    let mut path = vec![cursor];
    while let Some(prev) = parent.get(&cursor) {
        path.push(*prev);
        cursor = *prev;
    }
    path.reverse();
    Some((path.len() - 1, path))
}

/// Keyed plan-fragment cache for goal chaining.
///
/// The fingerprint is the subgoal plus the part of the knowledge state that
/// determines reachable futures in this environment class: the current cell
/// and the held keys.
#[derive(Clone, Debug, Default)]
pub struct MemoCache {
    entries: HashMap<(Proposition, AugmentedState), Vec<PlanStep>>,
    hits: u64,
    misses: u64,
}

impl MemoCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&mut self, key: &(Proposition, AugmentedState)) -> Option<Vec<PlanStep>> {
        match self.entries.get(key) {
            Some(fragment) => {
                self.hits += 1;
                Some(fragment.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    fn store(&mut self, key: (Proposition, AugmentedState), fragment: Vec<PlanStep>) {
        self.entries.insert(key, fragment);
    }
}

/// Chaining failure, identifying the first subgoal that cannot be reached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainError {
    SubgoalUnreachable(usize),
}

impl fmt::Display for ChainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainError::SubgoalUnreachable(i) => write!(f, "subgoal {i} is unreachable"),
        }
    }
}

impl std::error::Error for ChainError {}

/// Plans a sequence of subgoals, each from the state the previous one
/// established, reusing memoized fragments where the fingerprint matches.
pub fn plan_chain(
    env: &CompiledEnv,
    subgoals: &[Proposition],
    cache: &mut MemoCache,
) -> Result<Plan, ChainError> {
    let index = RuleIndex::new(&env.rules);
    let start_cell = env
        .initial
        .iter()
        .find_map(|p| match p {
            Proposition::At(c) => Some(*c),
            _ => None,
        })
        .expect("compiled environments place the agent somewhere");
    let mut state = index.entry_state(start_cell);
    let mut steps = Vec::new();
    for (i, subgoal) in subgoals.iter().enumerate() {
        let key = (subgoal.clone(), state);
        let fragment = match cache.lookup(&key) {
            Some(fragment) => fragment,
            None => {
                let fragment = search(&index, state, |s| satisfies(s, subgoal))
                    .ok_or(ChainError::SubgoalUnreachable(i))?;
                cache.store(key, fragment.clone());
                fragment
            }
        };
        if let Some(last) = fragment.last() {
            state = last.to;
        }
        steps.extend(fragment);
    }
    Ok(Plan::from_steps(steps))
}

/// Replays a plan against the environment step function and reports every
/// step the environment would reject. Sends and waits have no physical
/// effect and are never rejected.
pub fn validate_plan(plan: &Plan, world: &GridWorld) -> (bool, Vec<usize>) {
    let mut state = match plan.initial_state() {
        Some(state) => state,
        None => return (true, Vec::new()),
    };
    let mut invalid = Vec::new();
    for (i, step) in plan.steps.iter().enumerate() {
        if let ActionLabel::Move(dir) = step.action {
            let outcome = simulate_step(world, state, dir);
            if outcome.invalid {
                invalid.push(i);
            }
            state = outcome.next;
        }
    }
    (invalid.is_empty(), invalid)
}

/// Replays a bare movement sequence from an explicit initial state,
/// reporting rejected indices and the final state.
pub fn replay_moves(
    world: &GridWorld,
    initial: AugmentedState,
    moves: &[Direction],
) -> (Vec<usize>, AugmentedState) {
    let mut state = initial;
    let mut invalid = Vec::new();
    for (i, dir) in moves.iter().enumerate() {
        let outcome = simulate_step(world, state, *dir);
        if outcome.invalid {
            invalid.push(i);
        }
        state = outcome.next;
    }
    (invalid, state)
}

/// The augmented state an agent occupies before acting in `world`.
pub fn initial_state(world: &GridWorld) -> AugmentedState {
    let mut inventory = KeySet::empty();
    if let Some(key) = world.key_at(world.start()) {
        inventory.insert(key);
    }
    AugmentedState::new(world.start(), inventory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{compile_rules, parse_grid};

    fn solve(text: &str) -> Result<Solution, Unsolvable> {
        let world = parse_grid(text).unwrap();
        let env = compile_rules(&world);
        plan(&env, &world)
    }

    #[test]
    fn corridor_plan_is_two_east_moves() {
        let solution = solve("S.G").unwrap();
        assert_eq!(solution.plan.total_length, 2);
        assert_eq!(
            solution.plan.movement_actions(),
            vec![Direction::East, Direction::East]
        );
        assert_eq!(solution.proof.depth(), 3);
        assert!(solution.stats.iterations >= 1);
    }

    #[test]
    fn walled_corridor_is_unsolvable() {
        assert_eq!(solve("S#G").unwrap_err(), Unsolvable);
    }

    #[test]
    fn key_door_corridor_plans_through_the_key() {
        let solution = solve("SaAG").unwrap();
        assert_eq!(solution.plan.total_length, 3);
        let world = parse_grid("SaAG").unwrap();
        let (length, _) = oracle_shortest(&world).unwrap();
        assert_eq!(length, 3);
        let (valid, bad) = validate_plan(&solution.plan, &world);
        assert!(valid, "unexpected invalid steps {bad:?}");
    }

    #[test]
    fn plan_steps_chain_and_carry_justifications() {
        let solution = solve("SaAG").unwrap();
        let steps = &solution.plan.steps;
        for pair in steps.windows(2) {
            assert_eq!(pair[0].to, pair[1].from);
        }
        for step in steps {
            match &step.justification {
                StepJustification::Rule { antecedents, .. } => {
                    assert!(antecedents.contains(&Proposition::At(step.from.cell)));
                }
                other => panic!("unexpected justification {other:?}"),
            }
        }
        // Entering the door requires the key to be in inventory already.
        let door_step = steps.iter().find(|s| s.to.cell == Cell::new(2, 0)).unwrap();
        assert!(door_step.from.inventory.contains(KeyId('a')));
    }

    #[test]
    fn oracle_corridor_lengths() {
        let world = parse_grid("S.G").unwrap();
        assert_eq!(oracle_shortest(&world).unwrap().0, 2);
        let world = parse_grid("S#G").unwrap();
        assert_eq!(oracle_shortest(&world), None);
    }

    #[test]
    fn chain_with_identity_subgoal_is_empty() {
        let world = parse_grid("SaAG").unwrap();
        let env = compile_rules(&world);
        let mut cache = MemoCache::new();
        let plan = plan_chain(&env, &[Proposition::at(0, 0)], &mut cache).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.total_length, 0);
    }

    #[test]
    fn chain_through_key_matches_direct_plan() {
        let world = parse_grid("SaAG").unwrap();
        let env = compile_rules(&world);
        let mut cache = MemoCache::new();
        let chained = plan_chain(
            &env,
            &[Proposition::has_key('a'), Proposition::at(3, 0)],
            &mut cache,
        )
        .unwrap();
        let direct = plan(&env, &world).unwrap().plan;
        assert_eq!(chained.total_length, direct.total_length);
        assert_eq!(chained.total_length, 3);
        let (valid, _) = validate_plan(&chained, &world);
        assert!(valid);
    }

    #[test]
    fn chain_reports_first_unreachable_subgoal() {
        let world = parse_grid("S#G").unwrap();
        let env = compile_rules(&world);
        let mut cache = MemoCache::new();
        let err = plan_chain(
            &env,
            &[Proposition::at(0, 0), Proposition::at(2, 0)],
            &mut cache,
        )
        .unwrap_err();
        assert_eq!(err, ChainError::SubgoalUnreachable(1));
    }

    #[test]
    fn memo_cache_hits_on_repeated_subgoals() {
        let world = parse_grid("SaAG").unwrap();
        let env = compile_rules(&world);
        let mut cache = MemoCache::new();
        let subgoals = [Proposition::has_key('a'), Proposition::at(3, 0)];
        let first = plan_chain(&env, &subgoals, &mut cache).unwrap();
        assert_eq!(cache.hits(), 0);
        let second = plan_chain(&env, &subgoals, &mut cache).unwrap();
        assert_eq!(first, second);
        assert_eq!(cache.hits(), 2);
    }

    #[test]
    fn validate_plan_flags_wall_walk() {
        let world = parse_grid("S#G").unwrap();
        let start = initial_state(&world);
        let step = PlanStep {
            action: ActionLabel::Move(Direction::East),
            from: start,
            to: AugmentedState::new(Cell::new(1, 0), KeySet::empty()),
            justification: StepJustification::Wait,
        };
        let plan = Plan::from_steps(vec![step]);
        let (valid, bad) = validate_plan(&plan, &world);
        assert!(!valid);
        assert_eq!(bad, vec![0]);
    }

    #[test]
    fn validate_plan_flags_door_before_key() {
        // Door sits before its key, so marching east fails at the door.
        let world = parse_grid("SAaG").unwrap();
        let start = initial_state(&world);
        let mut steps = Vec::new();
        let mut from = start;
        for _ in 0..3 {
            let to = AugmentedState::new(Cell::new(from.cell.x + 1, 0), from.inventory);
            steps.push(PlanStep {
                action: ActionLabel::Move(Direction::East),
                from,
                to,
                justification: StepJustification::Wait,
            });
            from = to;
        }
        let plan = Plan::from_steps(steps);
        let (valid, bad) = validate_plan(&plan, &world);
        assert!(!valid);
        assert_eq!(bad.first(), Some(&0));
    }

    #[test]
    fn keyset_operations() {
        let mut set = KeySet::empty();
        assert!(set.is_empty());
        set.insert(KeyId('a'));
        set.insert(KeyId('c'));
        assert!(set.contains(KeyId('a')));
        assert!(!set.contains(KeyId('b')));
        assert_eq!(set.len(), 2);
        assert_eq!(set.to_string(), "ac");
        assert!(KeySet::empty().is_subset(set));
        assert!(set.is_subset(set));
        let keys: Vec<KeyId> = set.iter().collect();
        assert_eq!(keys, vec![KeyId('a'), KeyId('c')]);
    }
}
