//! Ground Horn rules and monotonic forward chaining with full derivation
//! provenance.
//!
//! Everything here is propositional: facts are ground atoms, rules are
//! implications from a non-empty antecedent set to a single consequent,
//! and [`close`] computes the least fixpoint of a fact set under a rule
//! set while recording, for every derived fact, the rule application that
//! first produced it. [`extract_proof`] then slices the goal-rooted proof
//! tree out of that record.

mod closure;
mod proof;

pub use closure::{close, proves, Closure, ClosureStats, DerivationGraph, DerivationNode, Justification};
pub use proof::{extract_proof, GoalNotDerived, ProofNode, ProofTree};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A grid cell, addressed as (column, row) with the origin in the top-left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Identifier of a key (and of the doors it opens), always a lowercase letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub char);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of an agent in multi-agent scenarios, the digit from the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u8);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The four cardinal movement directions.
///
/// Wherever a tie between directions has to be broken (plan search, greedy
/// rollouts) the fixed order of [`Direction::ALL`] decides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "N")]
    North,
    #[serde(rename = "E")]
    East,
    #[serde(rename = "S")]
    South,
    #[serde(rename = "W")]
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    /// Unit offset as (dx, dy); north is negative y.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Direction::North => 'N',
            Direction::East => 'E',
            Direction::South => 'S',
            Direction::West => 'W',
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The environment action a rule realizes, carried on rules and plan steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    Move(Direction),
    Pickup(KeyId),
    Send { to: AgentId },
    Wait,
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionLabel::Move(d) => write!(f, "move {d}"),
            ActionLabel::Pickup(k) => write!(f, "pickup {k}"),
            ActionLabel::Send { to } => write!(f, "send to {to}"),
            ActionLabel::Wait => write!(f, "wait"),
        }
    }
}

/// A fully ground logical atom.
///
/// `Received` may wrap any other proposition but never another `Received`;
/// use [`Proposition::received`] to construct one with that check applied.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposition {
    /// The agent is at the given cell.
    At(Cell),
    /// The agent holds the given key.
    HasKey(KeyId),
    /// `agent` has been informed of `fact` by another agent.
    Received { agent: AgentId, fact: Box<Proposition> },
    /// An uninterpreted ground atom, for rule systems outside the grid domain.
    Atom { symbol: String, args: Vec<String> },
}

impl Proposition {
    pub fn at(x: u32, y: u32) -> Self {
        Proposition::At(Cell::new(x, y))
    }

    pub fn has_key(letter: char) -> Self {
        Proposition::HasKey(KeyId(letter))
    }

    /// Builds a `Received` fact, rejecting nested `Received` payloads.
    pub fn received(agent: AgentId, fact: Proposition) -> Self {
        assert!(
            !matches!(fact, Proposition::Received { .. }),
            "received facts never wrap another received fact"
        );
        Proposition::Received { agent, fact: Box::new(fact) }
    }

    pub fn atom(symbol: impl Into<String>) -> Self {
        Proposition::Atom { symbol: symbol.into(), args: Vec::new() }
    }
}

impl fmt::Display for Proposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proposition::At(c) => write!(f, "at{c}"),
            Proposition::HasKey(k) => write!(f, "has_key({k})"),
            Proposition::Received { agent, fact } => write!(f, "received({agent}, {fact})"),
            Proposition::Atom { symbol, args } => {
                if args.is_empty() {
                    write!(f, "{symbol}")
                } else {
                    write!(f, "{}({})", symbol, args.join(","))
                }
            }
        }
    }
}

/// Stable identifier of a rule within one rule set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u32);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Rejected rule shapes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleError {
    /// Rules must have at least one antecedent; initial facts belong in the
    /// knowledge base, not in antecedent-free rules.
    EmptyAntecedents,
    /// The consequent may not appear among the antecedents.
    SelfLoop,
}

impl fmt::Display for RuleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleError::EmptyAntecedents => write!(f, "rule has no antecedents"),
            RuleError::SelfLoop => write!(f, "rule consequent appears among its antecedents"),
        }
    }
}

impl std::error::Error for RuleError {}

/// A ground Horn rule: a conjunction of antecedents implying one consequent.
///
/// Antecedents are kept sorted and deduplicated, so two rules with the same
/// logical content compare equal regardless of construction order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Rule {
    id: RuleId,
    antecedents: Vec<Proposition>,
    consequent: Proposition,
    action: Option<ActionLabel>,
}

impl Rule {
    pub fn new(
        id: RuleId,
        antecedents: Vec<Proposition>,
        consequent: Proposition,
        action: Option<ActionLabel>,
    ) -> Result<Self, RuleError> {
        let mut antecedents = antecedents;
        antecedents.sort();
        antecedents.dedup();
        if antecedents.is_empty() {
            return Err(RuleError::EmptyAntecedents);
        }
        if antecedents.contains(&consequent) {
            return Err(RuleError::SelfLoop);
        }
        Ok(Rule { id, antecedents, consequent, action })
    }

    pub fn id(&self) -> RuleId {
        self.id
    }

    /// Sorted, duplicate-free antecedent set. Its length is the rule's arity.
    pub fn antecedents(&self) -> &[Proposition] {
        &self.antecedents
    }

    pub fn consequent(&self) -> &Proposition {
        &self.consequent
    }

    pub fn action(&self) -> Option<ActionLabel> {
        self.action
    }

    /// Logical content without the identifier, for comparing rule sets that
    /// were numbered independently.
    pub fn content(&self) -> (&[Proposition], &Proposition) {
        (&self.antecedents, &self.consequent)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self.antecedents.iter().map(|p| p.to_string()).collect();
        write!(f, "{}: {} -> {}", self.id, body.join(" & "), self.consequent)
    }
}

/// A monotone set of proven propositions.
///
/// Facts are never removed; `generation` increases exactly when a genuinely
/// new fact is inserted, so equal generations mean equal content across the
/// life of one knowledge base.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    facts: indexmap::IndexSet<Proposition>,
    generation: u64,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a fact, returning true (and bumping the generation) when it
    /// was not already present.
    pub fn insert(&mut self, fact: Proposition) -> bool {
        let fresh = self.facts.insert(fact);
        if fresh {
            self.generation += 1;
        }
        fresh
    }

    pub fn contains(&self, fact: &Proposition) -> bool {
        self.facts.contains(fact)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Iterates facts in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Proposition> {
        self.facts.iter()
    }

    pub fn extend(&mut self, facts: impl IntoIterator<Item = Proposition>) {
        for fact in facts {
            self.insert(fact);
        }
    }

    /// Content as a sorted set, the canonical form used for comparisons.
    pub fn to_sorted_set(&self) -> BTreeSet<Proposition> {
        self.facts.iter().cloned().collect()
    }

    pub fn is_subset(&self, other: &KnowledgeBase) -> bool {
        self.facts.iter().all(|f| other.contains(f))
    }
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.facts.len() == other.facts.len() && self.is_subset(other)
    }
}

impl Eq for KnowledgeBase {}

impl FromIterator<Proposition> for KnowledgeBase {
    fn from_iter<T: IntoIterator<Item = Proposition>>(iter: T) -> Self {
        let mut kb = KnowledgeBase::new();
        kb.extend(iter);
        kb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_antecedents_are_canonicalized() {
        let a = Proposition::atom("a");
        let b = Proposition::atom("b");
        let c = Proposition::atom("c");
        let r1 = Rule::new(RuleId(0), vec![b.clone(), a.clone(), b.clone()], c.clone(), None).unwrap();
        let r2 = Rule::new(RuleId(0), vec![a, b], c, None).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.antecedents().len(), 2);
    }

    #[test]
    fn rule_rejects_empty_and_self_loop() {
        let a = Proposition::atom("a");
        assert_eq!(
            Rule::new(RuleId(0), vec![], a.clone(), None).unwrap_err(),
            RuleError::EmptyAntecedents
        );
        assert_eq!(
            Rule::new(RuleId(0), vec![a.clone()], a, None).unwrap_err(),
            RuleError::SelfLoop
        );
    }

    #[test]
    fn knowledge_base_generation_tracks_new_facts_only() {
        let mut kb = KnowledgeBase::new();
        assert_eq!(kb.generation(), 0);
        assert!(kb.insert(Proposition::atom("a")));
        assert_eq!(kb.generation(), 1);
        assert!(!kb.insert(Proposition::atom("a")));
        assert_eq!(kb.generation(), 1);
        assert!(kb.insert(Proposition::atom("b")));
        assert_eq!(kb.generation(), 2);
    }

    #[test]
    fn knowledge_base_equality_ignores_insertion_order() {
        let kb1: KnowledgeBase = [Proposition::atom("a"), Proposition::atom("b")].into_iter().collect();
        let kb2: KnowledgeBase = [Proposition::atom("b"), Proposition::atom("a")].into_iter().collect();
        assert_eq!(kb1, kb2);
    }

    #[test]
    #[should_panic(expected = "never wrap")]
    fn nested_received_is_rejected() {
        let inner = Proposition::received(AgentId(0), Proposition::has_key('a'));
        let _ = Proposition::received(AgentId(1), inner);
    }

    #[test]
    fn proposition_ordering_is_stable_for_display() {
        let mut props = vec![
            Proposition::has_key('b'),
            Proposition::at(1, 0),
            Proposition::at(0, 1),
            Proposition::has_key('a'),
        ];
        props.sort();
        let rendered: Vec<String> = props.iter().map(|p| p.to_string()).collect();
        assert_eq!(rendered, vec!["at(0,1)", "at(1,0)", "has_key(a)", "has_key(b)"]);
    }
}
