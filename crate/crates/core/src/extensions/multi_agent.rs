//! Round-synchronous multi-agent planning with verifiable message passing.
//!
//! Each agent holds its own monotone knowledge base over the shared rule
//! set. Per round every agent performs one action: a movement licensed by
//! a rule whose side conditions hold in its own knowledge, a point-to-point
//! send of a fact it can prove, or a wait. Sends are delivered at the start
//! of the next round as `received` facts of the recipient, which is the
//! only way such facts ever enter a knowledge base.
//!
//! The joint planner is a breadth-first search over the combined state of
//! all agents plus messages in flight, so the returned interleaving uses
//! the fewest rounds. Fixtures stay at desk scale; the joint branching
//! factor is exponential in the agent count.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::grid::{CompiledEnv, GridWorld};
use crate::logic::{
    ActionLabel, AgentId, Cell, Direction, KnowledgeBase, Proposition, Rule, RuleId,
};
use crate::planner::{AugmentedState, KeySet, Plan, PlanStep, StepJustification};

/// Per-agent view used during replay: its own knowledge base plus message
/// queues.
#[derive(Clone, Debug)]
pub struct AgentKb {
    pub agent: AgentId,
    pub gamma: KnowledgeBase,
    /// Facts sent by this agent and not yet delivered: (recipient, fact).
    pub outbox: VecDeque<(AgentId, Proposition)>,
    /// Facts delivered to this agent this round: (sender, fact).
    pub inbox: VecDeque<(AgentId, Proposition)>,
}

impl AgentKb {
    fn new(agent: AgentId, position: Cell) -> Self {
        let mut gamma = KnowledgeBase::new();
        gamma.insert(Proposition::At(position));
        AgentKb { agent, gamma, outbox: VecDeque::new(), inbox: VecDeque::new() }
    }
}

/// One message delivery: `fact` from `from` arrives at `to` at the start of
/// `round` (rounds are 1-based).
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Delivery {
    pub round: u32,
    pub from: AgentId,
    pub to: AgentId,
    pub fact: Proposition,
}

/// A coordinated plan: one plan per agent (padded with waits so that step i
/// executes in round i+1, trailing waits trimmed) plus the delivery
/// schedule that makes them sound.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct JointPlan {
    pub plans: BTreeMap<AgentId, Plan>,
    pub schedule: Vec<Delivery>,
    pub rounds: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MultiAgentError {
    /// Fewer than two agents in the grid.
    NotMultiAgent,
    /// No interleaving achieves the goal within the round budget.
    NoJointPlan { budget: u32 },
}

impl fmt::Display for MultiAgentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiAgentError::NotMultiAgent => write!(f, "scenario needs at least two agents"),
            MultiAgentError::NoJointPlan { budget } => {
                write!(f, "no joint plan within {budget} rounds")
            }
        }
    }
}

impl std::error::Error for MultiAgentError {}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct AgentSnap {
    cell: Cell,
    keys: KeySet,
    received: BTreeSet<Proposition>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct JointState {
    agents: Vec<AgentSnap>,
    /// Messages in flight, delivered at the start of the next round:
    /// (recipient index, sender id, fact). Kept sorted.
    inflight: Vec<(usize, AgentId, Proposition)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum AgentAction {
    Wait,
    Move { dir: Direction, rule: RuleId },
    Send { to: AgentId, fact: Proposition },
}

struct Scenario<'a> {
    world: &'a GridWorld,
    agent_ids: Vec<AgentId>,
    rules: Vec<&'a Rule>,
    /// Movement rules grouped by (source cell, direction), ascending id.
    moves: HashMap<(Cell, Direction), Vec<&'a Rule>>,
    /// Facts that occur inside `received(...)` antecedents of the comm
    /// rules; the only payloads worth sending.
    payloads: Vec<(AgentId, Proposition)>,
}

impl<'a> Scenario<'a> {
    fn new(world: &'a GridWorld, env: &'a CompiledEnv, comm_rules: &'a [Rule]) -> Self {
        let agent_ids: Vec<AgentId> = world.agents().keys().copied().collect();
        let rules: Vec<&Rule> = env.rules.iter().chain(comm_rules.iter()).collect();
        let mut moves: HashMap<(Cell, Direction), Vec<&Rule>> = HashMap::new();
        for rule in &rules {
            if let Some(ActionLabel::Move(dir)) = rule.action() {
                let sources: Vec<Cell> = rule
                    .antecedents()
                    .iter()
                    .filter_map(|p| match p {
                        Proposition::At(c) => Some(*c),
                        _ => None,
                    })
                    .collect();
                if let [source] = sources[..] {
                    moves.entry((source, dir)).or_default().push(rule);
                }
            }
        }
        for list in moves.values_mut() {
            list.sort_by_key(|r| r.id());
        }
        let mut payloads: BTreeSet<(AgentId, Proposition)> = BTreeSet::new();
        for rule in comm_rules {
            for p in rule.antecedents() {
                if let Proposition::Received { agent, fact } = p {
                    payloads.insert((*agent, (**fact).clone()));
                }
            }
        }
        Scenario { world, agent_ids, rules, moves, payloads: payloads.into_iter().collect() }
    }

    fn agent_index(&self, id: AgentId) -> Option<usize> {
        self.agent_ids.iter().position(|a| *a == id)
    }

    fn initial(&self) -> JointState {
        let agents = self
            .agent_ids
            .iter()
            .map(|id| {
                let cell = self.world.agents()[id];
                let mut keys = KeySet::empty();
                if let Some(k) = self.world.key_at(cell) {
                    keys.insert(k);
                }
                AgentSnap { cell, keys, received: BTreeSet::new() }
            })
            .collect();
        JointState { agents: agents, inflight: Vec::new() }
    }

    /// Whether `fact` is provable by the agent in this snapshot. Positional
    /// facts are limited to the current cell.
    fn knows(&self, idx: usize, snap: &AgentSnap, fact: &Proposition) -> bool {
        match fact {
            Proposition::At(c) => snap.cell == *c,
            Proposition::HasKey(k) => snap.keys.contains(*k),
            Proposition::Received { agent, fact } => {
                self.agent_ids[idx] == *agent && snap.received.contains(fact)
            }
            Proposition::Atom { .. } => false,
        }
    }

    fn rule_applies(&self, idx: usize, snap: &AgentSnap, rule: &Rule) -> bool {
        rule.antecedents().iter().all(|p| self.knows(idx, snap, p))
    }

    /// Candidate actions for one agent, in deterministic order: wait,
    /// moves (N, E, S, W), sends sorted by recipient and fact.
    fn candidates(&self, idx: usize, state: &JointState) -> Vec<AgentAction> {
        let snap = &state.agents[idx];
        let mut out = vec![AgentAction::Wait];
        for dir in Direction::ALL {
            if let Some(rules) = self.moves.get(&(snap.cell, dir)) {
                if let Some(rule) = rules.iter().find(|r| self.rule_applies(idx, snap, r)) {
                    out.push(AgentAction::Move { dir, rule: rule.id() });
                }
            }
        }
        for (to, fact) in &self.payloads {
            if *to == self.agent_ids[idx] {
                continue;
            }
            if !self.knows(idx, snap, fact) {
                continue;
            }
            let Some(to_idx) = self.agent_index(*to) else { continue };
            let already_there = state.agents[to_idx].received.contains(fact);
            let already_flying = state
                .inflight
                .iter()
                .any(|(i, _, f)| *i == to_idx && f == fact);
            if !already_there && !already_flying {
                out.push(AgentAction::Send { to: *to, fact: fact.clone() });
            }
        }
        out
    }

    fn rule_by_id(&self, id: RuleId) -> Option<&'a Rule> {
        self.rules.iter().find(|r| r.id() == id).copied()
    }

    fn apply(&self, state: &JointState, actions: &[AgentAction]) -> JointState {
        let mut next = state.clone();
        next.inflight = Vec::new();
        for (idx, action) in actions.iter().enumerate() {
            match action {
                AgentAction::Wait => {}
                AgentAction::Move { rule, .. } => {
                    let rule = self.rule_by_id(*rule).expect("actions cite known rules");
                    let Proposition::At(target) = rule.consequent() else { continue };
                    let snap = &mut next.agents[idx];
                    snap.cell = *target;
                    if let Some(k) = self.world.key_at(*target) {
                        snap.keys.insert(k);
                    }
                }
                AgentAction::Send { to, fact } => {
                    let to_idx = self.agent_index(*to).expect("sends target known agents");
                    next.inflight.push((to_idx, self.agent_ids[idx], fact.clone()));
                }
            }
        }
        next.inflight.sort();
        next
    }

    fn deliver(&self, state: &JointState) -> JointState {
        let mut next = state.clone();
        for (to_idx, _, fact) in state.inflight.iter() {
            next.agents[*to_idx].received.insert(fact.clone());
        }
        next
    }

    fn goal_holds(&self, state: &JointState, goal: &Proposition) -> bool {
        state
            .agents
            .iter()
            .enumerate()
            .any(|(idx, snap)| self.knows(idx, snap, goal))
    }
}

/// Plans a multi-agent scenario toward `goal`, returning per-agent plans
/// and the delivery schedule. The search is breadth-first over rounds, so
/// the joint plan completes in the fewest possible rounds.
pub fn multi_agent_plan(
    world: &GridWorld,
    comm_rules: &[Rule],
    goal: &Proposition,
    round_budget: u32,
) -> Result<JointPlan, MultiAgentError> {
    if world.agents().len() < 2 {
        return Err(MultiAgentError::NotMultiAgent);
    }
    let env = crate::grid::compile_rules(world);
    let scenario = Scenario::new(world, &env, comm_rules);

    let root = scenario.initial();
    if scenario.goal_holds(&root, goal) {
        return Ok(JointPlan { plans: empty_plans(&scenario), schedule: Vec::new(), rounds: 0 });
    }

    // Parent links: state after a round -> (state before the round, actions).
    let mut parent: HashMap<JointState, (JointState, Vec<AgentAction>)> = HashMap::new();
    let mut depth: HashMap<JointState, u32> = HashMap::new();
    depth.insert(root.clone(), 0);
    let mut queue = VecDeque::new();
    queue.push_back(root.clone());
    let mut reached: Option<JointState> = None;

    'bfs: while let Some(state) = queue.pop_front() {
        let d = depth[&state];
        if d >= round_budget {
            continue;
        }
        let delivered = scenario.deliver(&state);
        let per_agent: Vec<Vec<AgentAction>> = (0..scenario.agent_ids.len())
            .map(|idx| scenario.candidates(idx, &delivered))
            .collect();
        let mut combo = vec![0usize; per_agent.len()];
        loop {
            let actions: Vec<AgentAction> = combo
                .iter()
                .enumerate()
                .map(|(i, &j)| per_agent[i][j].clone())
                .collect();
            let mut next = scenario.apply(&delivered, &actions);
            next.inflight.sort();
            if !depth.contains_key(&next) {
                depth.insert(next.clone(), d + 1);
                parent.insert(next.clone(), (state.clone(), actions));
                if scenario.goal_holds(&next, goal) {
                    reached = Some(next);
                    break 'bfs;
                }
                queue.push_back(next);
            }
            // Advance the mixed-radix counter over candidate lists.
            let mut k = per_agent.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                combo[k] += 1;
                if combo[k] < per_agent[k].len() {
                    break;
                }
                combo[k] = 0;
                if k == 0 {
                    k = usize::MAX;
                    break;
                }
            }
            if k == usize::MAX {
                break;
            }
        }
    }

    let Some(goal_state) = reached else {
        return Err(MultiAgentError::NoJointPlan { budget: round_budget });
    };

    // Reconstruct the round sequence root..goal.
    let mut rounds_rev: Vec<(JointState, Vec<AgentAction>)> = Vec::new();
    let mut cursor = goal_state;
    while let Some((prev, actions)) = parent.get(&cursor) {
        rounds_rev.push((prev.clone(), actions.clone()));
        cursor = prev.clone();
    }
    rounds_rev.reverse();

    let mut plans: BTreeMap<AgentId, Vec<PlanStep>> = scenario
        .agent_ids
        .iter()
        .map(|id| (*id, Vec::new()))
        .collect();
    let mut schedule = Vec::new();
    for (round_no, (before, actions)) in rounds_rev.iter().enumerate() {
        let round = round_no as u32 + 1;
        for (to_idx, from, fact) in &before.inflight {
            schedule.push(Delivery {
                round,
                from: *from,
                to: scenario.agent_ids[*to_idx],
                fact: fact.clone(),
            });
        }
        let delivered = scenario.deliver(before);
        for (idx, action) in actions.iter().enumerate() {
            let id = scenario.agent_ids[idx];
            let snap = &delivered.agents[idx];
            let here = AugmentedState::new(snap.cell, snap.keys);
            let step = match action {
                AgentAction::Wait => PlanStep {
                    action: ActionLabel::Wait,
                    from: here,
                    to: here,
                    justification: StepJustification::Wait,
                },
                AgentAction::Move { dir, rule } => {
                    let rule = scenario.rule_by_id(*rule).expect("actions cite known rules");
                    let Proposition::At(target) = rule.consequent() else { unreachable!() };
                    let mut keys = snap.keys;
                    if let Some(k) = world.key_at(*target) {
                        keys.insert(k);
                    }
                    PlanStep {
                        action: ActionLabel::Move(*dir),
                        from: here,
                        to: AugmentedState::new(*target, keys),
                        justification: StepJustification::Rule {
                            rule: rule.id(),
                            antecedents: rule.antecedents().to_vec(),
                        },
                    }
                }
                AgentAction::Send { to, fact } => PlanStep {
                    action: ActionLabel::Send { to: *to },
                    from: here,
                    to: here,
                    justification: StepJustification::Message { payload: fact.clone() },
                },
            };
            plans.get_mut(&id).expect("all agents have plans").push(step);
        }
    }

    let rounds = rounds_rev.len() as u32;
    let plans = plans
        .into_iter()
        .map(|(id, mut steps)| {
            while matches!(steps.last().map(|s| &s.action), Some(ActionLabel::Wait)) {
                steps.pop();
            }
            (id, Plan::from_steps(steps))
        })
        .collect();
    Ok(JointPlan { plans, schedule, rounds })
}

fn empty_plans(scenario: &Scenario<'_>) -> BTreeMap<AgentId, Plan> {
    scenario.agent_ids.iter().map(|id| (*id, Plan::empty())).collect()
}

/// Why a joint plan failed to replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplayError {
    /// A movement step's rule conditions do not hold in the agent's
    /// knowledge base at that round.
    StepNotLicensed { agent: AgentId, round: u32 },
    /// A send's payload is not provable by the sender.
    PayloadUnproven { agent: AgentId, round: u32 },
    /// A delivery names a fact its sender cannot prove by that round.
    DeliveryUnproven { round: u32 },
    /// All steps replayed but the goal is not in the union of the final
    /// knowledge bases.
    GoalNotAchieved,
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayError::StepNotLicensed { agent, round } => {
                write!(f, "agent {agent} step in round {round} is not licensed")
            }
            ReplayError::PayloadUnproven { agent, round } => {
                write!(f, "agent {agent} cannot prove its round {round} payload")
            }
            ReplayError::DeliveryUnproven { round } => {
                write!(f, "round {round} delivery payload is unproven by its sender")
            }
            ReplayError::GoalNotAchieved => write!(f, "goal missing from the union of knowledge bases"),
        }
    }
}

impl std::error::Error for ReplayError {}

/// Replays per-agent plans under their own knowledge bases with the given
/// delivery schedule, enforcing that every movement is licensed, every
/// payload is proven by its sender at delivery time, and the goal ends up
/// in the union of the final knowledge bases.
///
/// Extra deliveries of provable facts are harmless (knowledge is monotone);
/// removing a delivery that a movement depended on makes the replay fail.
pub fn replay_joint_plan(
    world: &GridWorld,
    comm_rules: &[Rule],
    joint: &JointPlan,
    goal: &Proposition,
) -> Result<(), ReplayError> {
    let env = crate::grid::compile_rules(world);
    let scenario = Scenario::new(world, &env, comm_rules);
    let mut kbs: Vec<AgentKb> = scenario
        .agent_ids
        .iter()
        .map(|id| AgentKb::new(*id, world.agents()[id]))
        .collect();
    let mut positions: Vec<Cell> = scenario.agent_ids.iter().map(|id| world.agents()[id]).collect();
    let mut keysets: Vec<KeySet> = positions
        .iter()
        .map(|cell| match world.key_at(*cell) {
            Some(k) => KeySet::empty().with(k),
            None => KeySet::empty(),
        })
        .collect();
    for (idx, cell) in positions.iter().enumerate() {
        for k in keysets[idx].iter() {
            kbs[idx].gamma.insert(Proposition::HasKey(k));
        }
        kbs[idx].gamma.insert(Proposition::At(*cell));
    }

    let max_rounds = joint
        .plans
        .values()
        .map(|p| p.steps.len() as u32)
        .chain(joint.schedule.iter().map(|d| d.round))
        .max()
        .unwrap_or(0)
        .max(joint.rounds);

    for round in 1..=max_rounds {
        // Deliveries first; each must be provable by its sender now.
        for delivery in joint.schedule.iter().filter(|d| d.round == round) {
            let Some(from_idx) = scenario.agent_index(delivery.from) else {
                return Err(ReplayError::DeliveryUnproven { round });
            };
            let Some(to_idx) = scenario.agent_index(delivery.to) else {
                return Err(ReplayError::DeliveryUnproven { round });
            };
            if !kbs[from_idx].gamma.contains(&delivery.fact) {
                return Err(ReplayError::DeliveryUnproven { round });
            }
            kbs[to_idx].inbox.push_back((delivery.from, delivery.fact.clone()));
        }
        for idx in 0..kbs.len() {
            while let Some((_, fact)) = kbs[idx].inbox.pop_front() {
                let received = Proposition::received(scenario.agent_ids[idx], fact);
                kbs[idx].gamma.insert(received);
            }
        }

        for (idx, id) in scenario.agent_ids.iter().enumerate() {
            let Some(plan) = joint.plans.get(id) else { continue };
            let Some(step) = plan.steps.get(round as usize - 1) else { continue };
            match (&step.action, &step.justification) {
                (ActionLabel::Wait, _) => {}
                (ActionLabel::Send { to }, StepJustification::Message { payload }) => {
                    if !kbs[idx].gamma.contains(payload) {
                        return Err(ReplayError::PayloadUnproven { agent: *id, round });
                    }
                    kbs[idx].outbox.push_back(((*to), payload.clone()));
                }
                (ActionLabel::Move(_), StepJustification::Rule { rule, .. }) => {
                    let Some(rule) = scenario.rule_by_id(*rule) else {
                        return Err(ReplayError::StepNotLicensed { agent: *id, round });
                    };
                    let snap = AgentSnap {
                        cell: positions[idx],
                        keys: keysets[idx],
                        received: kbs[idx]
                            .gamma
                            .iter()
                            .filter_map(|p| match p {
                                Proposition::Received { agent, fact } if agent == id => {
                                    Some((**fact).clone())
                                }
                                _ => None,
                            })
                            .collect(),
                    };
                    if !scenario.rule_applies(idx, &snap, rule) {
                        return Err(ReplayError::StepNotLicensed { agent: *id, round });
                    }
                    let Proposition::At(target) = rule.consequent() else {
                        return Err(ReplayError::StepNotLicensed { agent: *id, round });
                    };
                    positions[idx] = *target;
                    kbs[idx].gamma.insert(Proposition::At(*target));
                    if let Some(k) = world.key_at(*target) {
                        keysets[idx].insert(k);
                        kbs[idx].gamma.insert(Proposition::HasKey(k));
                    }
                }
                _ => return Err(ReplayError::StepNotLicensed { agent: *id, round }),
            }
        }
    }

    let mut union = KnowledgeBase::new();
    for kb in &kbs {
        union.extend(kb.gamma.iter().cloned());
    }
    if union.contains(goal) {
        Ok(())
    } else {
        Err(ReplayError::GoalNotAchieved)
    }
}
