//! Semi-naive fixpoint evaluation over ground Horn rules.
//!
//! Propositions are interned to dense integer handles on entry, each rule
//! keeps a countdown of antecedents not yet proven, and an index from
//! proposition to the rules watching it turns every fact insertion into a
//! constant-time set of decrements. A rule therefore fires at most once,
//! when its last antecedent arrives, which realizes the O(|S| + |T| * k)
//! cost profile without ever rescanning the rule set.

use std::collections::HashMap;

use indexmap::IndexMap;

use super::{KnowledgeBase, Proposition, Rule, RuleId};

/// How a fact entered the closure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Justification {
    /// Member of the initial knowledge base.
    Axiom,
    /// First produced by this rule from these (previously derived) antecedents.
    Applied { rule: RuleId, antecedents: Vec<Proposition> },
}

/// Provenance record for one fact in the closure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivationNode {
    pub justification: Justification,
    /// Global derivation sequence number; every `Applied` node's antecedents
    /// carry strictly smaller numbers.
    pub order: u64,
    /// Fixpoint pass in which the fact appeared (axioms are pass 0).
    pub pass: u64,
}

/// Justification for every member of a closure, in derivation order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DerivationGraph {
    nodes: IndexMap<Proposition, DerivationNode>,
}

impl DerivationGraph {
    pub fn get(&self, prop: &Proposition) -> Option<&DerivationNode> {
        self.nodes.get(prop)
    }

    pub fn contains(&self, prop: &Proposition) -> bool {
        self.nodes.contains_key(prop)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in derivation order (ascending `order`).
    pub fn iter(&self) -> impl Iterator<Item = (&Proposition, &DerivationNode)> {
        self.nodes.iter()
    }

    fn insert(&mut self, prop: Proposition, node: DerivationNode) {
        self.nodes.insert(prop, node);
    }
}

/// Work counters for one closure computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClosureStats {
    /// Rules fired (each ground rule fires at most once).
    pub rule_applications: u64,
    /// Antecedent-satisfaction checks plus consequent dedup lookups.
    pub membership_tests: u64,
    /// Fixpoint passes processed.
    pub iterations: u64,
}

/// Result of [`close`]: the least fixpoint, its provenance, and cost counters.
#[derive(Clone, Debug)]
pub struct Closure {
    pub facts: KnowledgeBase,
    pub graph: DerivationGraph,
    pub stats: ClosureStats,
}

/// True iff `goal` is a member of the closed knowledge base.
pub fn proves(closure: &KnowledgeBase, goal: &Proposition) -> bool {
    closure.contains(goal)
}

/// Computes the least fixpoint of `gamma0` under `rules`.
///
/// The result is deterministic for a given fact set and rule set regardless
/// of input ordering: axioms are processed in canonical proposition order
/// and, within a pass, rules fire in ascending rule id, so when several
/// rules could first derive the same fact the lowest id is recorded.
pub fn close(gamma0: &KnowledgeBase, rules: &[Rule]) -> Closure {
    let mut interner: IndexMap<Proposition, u32> = IndexMap::new();
    let mut intern = |p: &Proposition, interner: &mut IndexMap<Proposition, u32>| -> u32 {
        if let Some(&id) = interner.get(p) {
            id
        } else {
            let id = interner.len() as u32;
            interner.insert(p.clone(), id);
            id
        }
    };

    // Canonical rule order: ascending id, content as tie-break.
    let mut ordered: Vec<&Rule> = rules.iter().collect();
    ordered.sort_by(|a, b| a.id().cmp(&b.id()).then_with(|| a.content().cmp(&b.content())));
    ordered.dedup_by(|a, b| a == b);

    let mut axioms: Vec<Proposition> = gamma0.iter().cloned().collect();
    axioms.sort();
    axioms.dedup();

    for prop in &axioms {
        intern(prop, &mut interner);
    }
    struct CompiledRule {
        source: usize,
        antecedent_ids: Vec<u32>,
        consequent_id: u32,
    }
    let mut compiled: Vec<CompiledRule> = Vec::with_capacity(ordered.len());
    for (idx, rule) in ordered.iter().enumerate() {
        let antecedent_ids = rule.antecedents().iter().map(|p| intern(p, &mut interner)).collect();
        let consequent_id = intern(rule.consequent(), &mut interner);
        compiled.push(CompiledRule { source: idx, antecedent_ids, consequent_id });
    }

    // watchers[p] lists the rules that mention proposition p as an antecedent.
    let mut watchers: Vec<Vec<usize>> = vec![Vec::new(); interner.len()];
    let mut remaining: Vec<u32> = Vec::with_capacity(compiled.len());
    for (ridx, rule) in compiled.iter().enumerate() {
        remaining.push(rule.antecedent_ids.len() as u32);
        for &p in &rule.antecedent_ids {
            watchers[p as usize].push(ridx);
        }
    }

    let mut stats = ClosureStats::default();
    let mut derived: Vec<bool> = vec![false; interner.len()];
    let mut graph = DerivationGraph::default();
    let mut facts = KnowledgeBase::new();
    let mut order: u64 = 0;

    let mut frontier: Vec<u32> = Vec::with_capacity(axioms.len());
    for prop in axioms {
        let id = interner[&prop];
        derived[id as usize] = true;
        graph.insert(prop.clone(), DerivationNode { justification: Justification::Axiom, order, pass: 0 });
        facts.insert(prop);
        order += 1;
        frontier.push(id);
    }

    let mut pass: u64 = 0;
    while !frontier.is_empty() {
        pass += 1;
        stats.iterations += 1;

        let mut satisfied: Vec<usize> = Vec::new();
        for &p in &frontier {
            for &ridx in &watchers[p as usize] {
                stats.membership_tests += 1;
                remaining[ridx] -= 1;
                if remaining[ridx] == 0 {
                    satisfied.push(ridx);
                }
            }
        }
        // `satisfied` is already in canonical rule order within this pass
        // only if the frontier happened to be; sort to make the lowest-id
        // justification win deterministically.
        satisfied.sort_unstable();

        let mut next: Vec<u32> = Vec::new();
        for ridx in satisfied {
            stats.rule_applications += 1;
            let consequent_id = compiled[ridx].consequent_id;
            stats.membership_tests += 1;
            if derived[consequent_id as usize] {
                continue;
            }
            derived[consequent_id as usize] = true;
            let rule = ordered[compiled[ridx].source];
            let (prop, _) = interner.get_index(consequent_id as usize).expect("interned");
            graph.insert(
                prop.clone(),
                DerivationNode {
                    justification: Justification::Applied {
                        rule: rule.id(),
                        antecedents: rule.antecedents().to_vec(),
                    },
                    order,
                    pass,
                },
            );
            facts.insert(prop.clone());
            order += 1;
            next.push(consequent_id);
        }
        frontier = next;
    }

    Closure { facts, graph, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::RuleId;

    fn atom(s: &str) -> Proposition {
        Proposition::atom(s)
    }

    fn rule(id: u32, body: &[&str], head: &str) -> Rule {
        Rule::new(
            RuleId(id),
            body.iter().map(|s| atom(s)).collect(),
            atom(head),
            None,
        )
        .unwrap()
    }

    #[test]
    fn linear_chain_closes_with_two_applications() {
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(0, &["a"], "b"), rule(1, &["b"], "c")];
        let out = close(&gamma0, &rules);
        let expected: KnowledgeBase = [atom("a"), atom("b"), atom("c")].into_iter().collect();
        assert_eq!(out.facts, expected);
        assert_eq!(out.stats.rule_applications, 2);
    }

    #[test]
    fn blocked_antecedent_never_fires() {
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(0, &["a", "k"], "b")];
        let out = close(&gamma0, &rules);
        let expected: KnowledgeBase = [atom("a")].into_iter().collect();
        assert_eq!(out.facts, expected);
        assert_eq!(out.stats.rule_applications, 0);
        assert!(!proves(&out.facts, &atom("b")));
    }

    #[test]
    fn empty_gamma0_yields_empty_closure() {
        let gamma0 = KnowledgeBase::new();
        let rules = vec![rule(0, &["a"], "b")];
        let out = close(&gamma0, &rules);
        assert!(out.facts.is_empty());
        assert_eq!(out.stats.iterations, 0);
    }

    #[test]
    fn lowest_rule_id_wins_same_pass_ties() {
        // Both rules become satisfied in the same pass and derive "b".
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(7, &["a"], "b"), rule(3, &["a"], "b")];
        let out = close(&gamma0, &rules);
        match &out.graph.get(&atom("b")).unwrap().justification {
            Justification::Applied { rule, .. } => assert_eq!(*rule, RuleId(3)),
            other => panic!("unexpected justification {other:?}"),
        }
        // Input order must not matter.
        let flipped = vec![rule(3, &["a"], "b"), rule(7, &["a"], "b")];
        let out2 = close(&gamma0, &flipped);
        assert_eq!(out.graph, out2.graph);
    }

    #[test]
    fn first_derivation_wins_across_passes() {
        // Rule 5 derives "c" in pass 1; rule 0 could re-derive it in pass 2
        // but the original justification must stand.
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(5, &["a"], "c"), rule(4, &["a"], "b"), rule(0, &["b"], "c")];
        let out = close(&gamma0, &rules);
        match &out.graph.get(&atom("c")).unwrap().justification {
            Justification::Applied { rule, .. } => assert_eq!(*rule, RuleId(5)),
            other => panic!("unexpected justification {other:?}"),
        }
    }

    #[test]
    fn cyclic_rules_terminate() {
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(0, &["a"], "b"), rule(1, &["b"], "a"), rule(2, &["b"], "c")];
        let out = close(&gamma0, &rules);
        let expected: KnowledgeBase = [atom("a"), atom("b"), atom("c")].into_iter().collect();
        assert_eq!(out.facts, expected);
    }

    #[test]
    fn antecedent_orders_precede_consequents() {
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(0, &["a"], "b"), rule(1, &["a", "b"], "c")];
        let out = close(&gamma0, &rules);
        for (_, node) in out.graph.iter() {
            if let Justification::Applied { antecedents, .. } = &node.justification {
                for a in antecedents {
                    assert!(out.graph.get(a).unwrap().order < node.order);
                }
            }
        }
    }

    #[test]
    fn closing_a_closure_is_identity() {
        let gamma0: KnowledgeBase = [atom("a")].into_iter().collect();
        let rules = vec![rule(0, &["a"], "b"), rule(1, &["b"], "c")];
        let once = close(&gamma0, &rules);
        let twice = close(&once.facts, &rules);
        assert_eq!(once.facts, twice.facts);
    }
}
