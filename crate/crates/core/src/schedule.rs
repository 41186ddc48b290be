//! Linearized contraction plans with stem annotations.
//!
//! A stem is a chain of tree nodes where one large tensor absorbs smaller
//! operands. A node qualifies when its off-chain operand (the smaller child)
//! has rank at most `rank(node) - 1`; the on-chain child is the larger one.
//! Chains grow down and up from the costliest unassigned qualifying node.
//! The first chain is always reported; later chains only when they carry at
//! least a quarter of the total cost.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};
use crate::tensor::{pair_permutation_plans, CaseClass, Index};
use crate::tree::ContractionTree;

/// Share of total cost a secondary chain needs to count as a stem.
pub const STEM_COST_FRACTION: (u128, u128) = (1, 4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Leaf(usize),
    Step(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    /// Tree node computed by this step.
    pub node: usize,
    pub lhs: Operand,
    pub rhs: Operand,
    pub lhs_indices: Vec<Index>,
    pub rhs_indices: Vec<Index>,
    pub result: Vec<Index>,
    pub cost: u128,
}

impl Step {
    pub fn operands_have(&self, label: &str) -> bool {
        self.lhs_indices
            .iter()
            .chain(&self.rhs_indices)
            .any(|i| i.label == label)
    }

    pub fn result_has(&self, label: &str) -> bool {
        self.result.iter().any(|i| i.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stem {
    /// Step ids from the bottom of the chain to the top.
    pub steps: Vec<usize>,
    /// For each entry of `steps`, whether the stem tensor is the left operand.
    pub stem_is_lhs: Vec<bool>,
    pub cost: u128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSchedule {
    tree: ContractionTree,
    pub steps: Vec<Step>,
    pub stem_flags: Vec<bool>,
    pub stems: Vec<Stem>,
    /// At least two stems each carrying a quarter of the total cost.
    pub multi_stem: bool,
    step_of_node: HashMap<usize, usize>,
}

struct Chains {
    chains: Vec<(Vec<usize>, u128)>,
}

fn on_chain_child(t: &ContractionTree, v: usize) -> (usize, usize) {
    let (x, y) = t.node(v).children.unwrap();
    if t.node(y).size() > t.node(x).size() {
        (y, x)
    } else {
        (x, y)
    }
}

fn qualifies(t: &ContractionTree, v: usize) -> bool {
    let (_, off) = on_chain_child(t, v);
    (t.node(off).rank() as i64) < t.node(v).rank() as i64
}

fn detect_stems(t: &ContractionTree) -> Chains {
    let total: u128 = t.internal().map(|v| t.node(v).cost).sum();
    let mut order: Vec<usize> = t.internal().collect();
    order.sort_by(|&a, &b| t.node(b).cost.cmp(&t.node(a).cost).then(a.cmp(&b)));
    let mut assigned = vec![false; t.nodes().len()];
    let mut chains: Vec<(Vec<usize>, u128)> = Vec::new();
    for seed in order {
        if assigned[seed] || !qualifies(t, seed) {
            continue;
        }
        let mut down = vec![seed];
        let mut cur = seed;
        loop {
            let (c, _) = on_chain_child(t, cur);
            if !t.node(c).is_leaf() && !assigned[c] && qualifies(t, c) {
                down.push(c);
                cur = c;
            } else {
                break;
            }
        }
        down.reverse();
        cur = seed;
        while let Some(p) = t.parent(cur) {
            if !assigned[p] && qualifies(t, p) && on_chain_child(t, p).0 == cur {
                down.push(p);
                cur = p;
            } else {
                break;
            }
        }
        let cost: u128 = down.iter().map(|&v| t.node(v).cost).sum();
        let (num, den) = STEM_COST_FRACTION;
        if chains.is_empty() || cost * den >= total * num {
            for &v in &down {
                assigned[v] = true;
            }
            chains.push((down, cost));
        }
    }
    Chains { chains }
}

impl LinearSchedule {
    /// Builds a schedule from an explicit order of internal nodes.
    pub fn with_order(tree: &ContractionTree, order: &[usize]) -> Result<Self> {
        let internal = tree.internal();
        if order.len() != internal.len() {
            return Err(TncError::InvalidTree(
                "order must list every internal node once".into(),
            ));
        }
        let mut step_of_node = HashMap::new();
        let mut steps = Vec::with_capacity(order.len());
        for (s, &v) in order.iter().enumerate() {
            if !internal.contains(&v) || step_of_node.insert(v, s).is_some() {
                return Err(TncError::InvalidTree(format!("bad node {v} in order")));
            }
            let (x, y) = tree.node(v).children.unwrap();
            let operand = |c: usize| -> Result<Operand> {
                if tree.node(c).is_leaf() {
                    Ok(Operand::Leaf(c))
                } else {
                    step_of_node
                        .get(&c)
                        .copied()
                        .filter(|&cs| cs < s)
                        .map(Operand::Step)
                        .ok_or_else(|| {
                            TncError::InvalidTree(format!("node {v} scheduled before child {c}"))
                        })
                }
            };
            steps.push(Step {
                node: v,
                lhs: operand(x)?,
                rhs: operand(y)?,
                lhs_indices: tree.node(x).indices.clone(),
                rhs_indices: tree.node(y).indices.clone(),
                result: tree.node(v).indices.clone(),
                cost: tree.node(v).cost,
            });
        }
        let chains = detect_stems(tree);
        let mut stem_flags = vec![false; steps.len()];
        let stems: Vec<Stem> = chains
            .chains
            .iter()
            .map(|(nodes, cost)| {
                let steps_ids: Vec<usize> = nodes.iter().map(|v| step_of_node[v]).collect();
                for &s in &steps_ids {
                    stem_flags[s] = true;
                }
                let stem_is_lhs = nodes
                    .iter()
                    .map(|&v| on_chain_child(tree, v).0 == tree.node(v).children.unwrap().0)
                    .collect();
                Stem {
                    steps: steps_ids,
                    stem_is_lhs,
                    cost: *cost,
                }
            })
            .collect();
        let total: u128 = steps.iter().map(|s| s.cost).sum();
        let (num, den) = STEM_COST_FRACTION;
        let heavy = stems.iter().filter(|s| s.cost * den >= total * num).count();
        Ok(LinearSchedule {
            tree: tree.clone(),
            steps,
            stem_flags,
            stems,
            multi_stem: heavy >= 2,
            step_of_node,
        })
    }

    pub fn tree(&self) -> &ContractionTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_of(&self, node: usize) -> Option<usize> {
        self.step_of_node.get(&node).copied()
    }

    pub fn total_cost(&self) -> u128 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn order(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.node).collect()
    }

    /// Operand permutations each class receives when the steps run in order.
    pub fn permutation_histogram(&self) -> Result<Vec<(CaseClass, u64)>> {
        let mut counts: HashMap<CaseClass, u64> = HashMap::new();
        for st in &self.steps {
            for plan in pair_permutation_plans(&st.lhs_indices, &st.rhs_indices)? {
                *counts.entry(plan.case_class).or_default() += 1;
            }
        }
        Ok(CaseClass::ALL
            .iter()
            .map(|c| (*c, counts.get(c).copied().unwrap_or(0)))
            .collect())
    }

    /// Step costs with the given labels fixed (dim 1).
    pub fn sliced_costs<S: AsRef<str>>(&self, labels: &[S]) -> Vec<u128> {
        let t = self.tree.sliced(labels);
        self.steps.iter().map(|s| t.node(s.node).cost).collect()
    }
}

/// Depth-first post-order. At stem nodes the on-chain child is visited before
/// the off-chain branch, so each absorbed branch is computed right before it
/// is consumed and the chain steps run in order.
pub fn linearize(tree: &ContractionTree) -> LinearSchedule {
    let chains = detect_stems(tree);
    let mut on_stem = vec![false; tree.nodes().len()];
    for (nodes, _) in &chains.chains {
        for &v in nodes {
            on_stem[v] = true;
        }
    }
    let mut order = Vec::with_capacity(tree.internal().len());
    let mut stack: Vec<(usize, bool)> = vec![(tree.root(), false)];
    while let Some((v, expanded)) = stack.pop() {
        let node = tree.node(v);
        if node.is_leaf() {
            continue;
        }
        if expanded {
            order.push(v);
            continue;
        }
        let (first, second) = if on_stem[v] {
            on_chain_child(tree, v)
        } else {
            node.children.unwrap()
        };
        stack.push((v, true));
        stack.push((second, false));
        stack.push((first, false));
    }
    LinearSchedule::with_order(tree, &order).expect("post-order is topological")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(l: &str) -> Index {
        Index::qubit(l)
    }

    /// A stem that grows by one open leg per absorption.
    fn growing_chain(len: usize) -> ContractionTree {
        let mut leaves = vec![vec![q("s0")]];
        let mut path = Vec::new();
        for k in 1..=len {
            leaves.push(vec![q(&format!("s{k}"))]);
        }
        let n = leaves.len();
        path.push((0, 1));
        for k in 2..n {
            path.push((n + k - 2, k));
        }
        ContractionTree::from_ssa_path(&leaves, &path).unwrap()
    }

    #[test]
    fn pure_chain_is_one_stem() {
        let t = growing_chain(6);
        let s = linearize(&t);
        assert_eq!(s.stems.len(), 1);
        assert_eq!(s.stems[0].steps, (0..6).collect::<Vec<_>>());
        assert!(s.stem_flags.iter().all(|&f| f));
        assert!(!s.multi_stem);
    }

    #[test]
    fn order_is_topological_and_complete() {
        let t = growing_chain(4);
        let s = linearize(&t);
        assert_eq!(s.len(), 4);
        for (k, st) in s.steps.iter().enumerate() {
            for op in [st.lhs, st.rhs] {
                if let Operand::Step(p) = op {
                    assert!(p < k);
                }
            }
        }
        assert_eq!(s.total_cost(), crate::tree::tree_metrics(&t).total_cost);
    }

    #[test]
    fn with_order_rejects_non_topological() {
        let t = growing_chain(3);
        let mut order: Vec<usize> = t.internal().collect();
        order.reverse();
        assert!(LinearSchedule::with_order(&t, &order).is_err());
    }
}
