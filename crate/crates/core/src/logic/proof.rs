//! Goal-rooted proof trees sliced out of a derivation graph.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DerivationGraph, Justification, Proposition, RuleId};

/// Requested proof goal was never derived.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoalNotDerived(pub Proposition);

impl fmt::Display for GoalNotDerived {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "goal {} is not in the derivation graph", self.0)
    }
}

impl std::error::Error for GoalNotDerived {}

/// One node of a proof tree. Leaves are axioms (`rule == None`); internal
/// nodes cite the rule that derived them and carry one subtree per
/// antecedent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofNode {
    pub proposition: Proposition,
    pub rule: Option<RuleId>,
    pub children: Vec<ProofNode>,
}

impl ProofNode {
    pub fn is_axiom(&self) -> bool {
        self.rule.is_none()
    }
}

/// A complete constructive proof of one goal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTree {
    pub root: ProofNode,
}

impl ProofTree {
    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn depth(node: &ProofNode) -> usize {
            1 + node.children.iter().map(depth).max().unwrap_or(0)
        }
        depth(&self.root)
    }

    pub fn node_count(&self) -> usize {
        fn count(node: &ProofNode) -> usize {
            1 + node.children.iter().map(count).sum::<usize>()
        }
        count(&self.root)
    }

    /// Axiom propositions at the leaves, in left-to-right order, deduplicated.
    pub fn leaves(&self) -> Vec<&Proposition> {
        let mut out: Vec<&Proposition> = Vec::new();
        fn walk<'a>(node: &'a ProofNode, out: &mut Vec<&'a Proposition>) {
            if node.children.is_empty() {
                if !out.contains(&&node.proposition) {
                    out.push(&node.proposition);
                }
            }
            for child in &node.children {
                walk(child, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }

    /// All propositions appearing anywhere in the tree, deduplicated.
    pub fn propositions(&self) -> Vec<&Proposition> {
        let mut out: Vec<&Proposition> = Vec::new();
        fn walk<'a>(node: &'a ProofNode, out: &mut Vec<&'a Proposition>) {
            if !out.contains(&&node.proposition) {
                out.push(&node.proposition);
            }
            for child in &node.children {
                walk(child, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }
}

/// Builds the goal-rooted proof tree from a derivation graph.
///
/// Termination is guaranteed by derivation acyclicity: every antecedent of
/// an applied node was derived strictly earlier, so recursion always moves
/// to smaller order numbers. Shared subproofs are expanded at every use,
/// which keeps the result a plain tree.
pub fn extract_proof(graph: &DerivationGraph, goal: &Proposition) -> Result<ProofTree, GoalNotDerived> {
    if !graph.contains(goal) {
        return Err(GoalNotDerived(goal.clone()));
    }
    fn build(graph: &DerivationGraph, prop: &Proposition) -> ProofNode {
        let node = graph.get(prop).expect("antecedents of derived facts are derived");
        match &node.justification {
            Justification::Axiom => ProofNode {
                proposition: prop.clone(),
                rule: None,
                children: Vec::new(),
            },
            Justification::Applied { rule, antecedents } => ProofNode {
                proposition: prop.clone(),
                rule: Some(*rule),
                children: antecedents.iter().map(|a| build(graph, a)).collect(),
            },
        }
    }
    Ok(ProofTree { root: build(graph, goal) })
}
