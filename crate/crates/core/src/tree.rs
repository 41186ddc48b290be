//! Binary contraction trees, their cost metrics and a seeded greedy finder.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};
use crate::network::label_table;
use crate::tensor::{volume, Index};

/// One node of a contraction tree. Leaves have no children and zero cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub children: Option<(usize, usize)>,
    pub indices: Vec<Index>,
    /// Scalar multiplies: product of the dims in the union of the operands' indices.
    pub cost: u128,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Legs with dimension above one.
    pub fn rank(&self) -> usize {
        self.indices.iter().filter(|i| i.dim > 1).count()
    }

    pub fn size(&self) -> u128 {
        self.indices.iter().map(|i| i.dim as u128).product()
    }

    pub fn has(&self, label: &str) -> bool {
        self.indices.iter().any(|i| i.label == label)
    }
}

/// A pairwise contraction plan in SSA numbering: leaves are `0..n` in network
/// order and the `k`-th contraction creates node `n + k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionTree {
    n_leaves: usize,
    nodes: Vec<TreeNode>,
    parent: Vec<Option<usize>>,
}

fn free_of(x: &[Index], y: &[Index]) -> Vec<Index> {
    x.iter()
        .filter(|i| !y.iter().any(|j| j.label == i.label))
        .cloned()
        .collect()
}

fn union_cost(x: &[Index], y: &[Index]) -> u128 {
    let shared: u128 = x
        .iter()
        .filter(|i| y.iter().any(|j| j.label == i.label))
        .map(|i| i.dim as u128)
        .product();
    let vx: u128 = x.iter().map(|i| i.dim as u128).product();
    let vy: u128 = y.iter().map(|i| i.dim as u128).product();
    vx * vy / shared
}

/// Result legs of contracting `x` with `y`: x-free then y-free.
pub fn result_indices(x: &[Index], y: &[Index]) -> Vec<Index> {
    let mut r = free_of(x, y);
    r.extend(free_of(y, x));
    r
}

impl ContractionTree {
    /// Builds a tree from leaf index lists and an SSA pair list.
    pub fn from_ssa_path(leaves: &[Vec<Index>], path: &[(usize, usize)]) -> Result<Self> {
        if leaves.is_empty() {
            return Err(TncError::InvalidTree("no leaves".into()));
        }
        label_table(leaves)?;
        let n = leaves.len();
        if path.len() + 1 != n {
            return Err(TncError::InvalidTree(format!(
                "{} leaves need {} contractions, path has {}",
                n,
                n - 1,
                path.len()
            )));
        }
        let mut nodes: Vec<TreeNode> = leaves
            .iter()
            .map(|l| TreeNode {
                children: None,
                indices: l.clone(),
                cost: 0,
            })
            .collect();
        let mut parent = vec![None; 2 * n - 1];
        for &(x, y) in path {
            let next = nodes.len();
            for id in [x, y] {
                if id >= next {
                    return Err(TncError::InvalidTree(format!(
                        "node {id} used before it exists"
                    )));
                }
                if parent[id].is_some() {
                    return Err(TncError::InvalidTree(format!("node {id} consumed twice")));
                }
            }
            if x == y {
                return Err(TncError::InvalidTree(format!(
                    "node {x} contracted with itself"
                )));
            }
            parent[x] = Some(next);
            parent[y] = Some(next);
            let (a, b) = (&nodes[x].indices, &nodes[y].indices);
            nodes.push(TreeNode {
                children: Some((x, y)),
                indices: result_indices(a, b),
                cost: union_cost(a, b),
            });
        }
        Ok(ContractionTree {
            n_leaves: n,
            nodes,
            parent,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Internal node ids in SSA order.
    pub fn internal(&self) -> std::ops::Range<usize> {
        self.n_leaves..self.nodes.len()
    }

    pub fn leaf_structure(&self) -> Vec<Vec<Index>> {
        self.nodes[..self.n_leaves]
            .iter()
            .map(|n| n.indices.clone())
            .collect()
    }

    pub fn ssa_path(&self) -> Vec<(usize, usize)> {
        self.nodes[self.n_leaves..]
            .iter()
            .map(|n| n.children.expect("internal node"))
            .collect()
    }

    /// Dimension of every label in the tree's leaves.
    pub fn label_dims(&self) -> BTreeMap<String, usize> {
        self.nodes[..self.n_leaves]
            .iter()
            .flat_map(|n| n.indices.iter())
            .map(|i| (i.label.clone(), i.dim))
            .collect()
    }

    /// Labels carried by exactly two leaves.
    pub fn closed_labels(&self) -> Vec<String> {
        let table = label_table(&self.leaf_structure()).expect("validated");
        table
            .into_iter()
            .filter(|(_, (c, _))| *c == 2)
            .map(|(l, _)| l)
            .collect()
    }

    /// The same plan with the given label dims replaced.
    pub fn with_dims(&self, dims: &BTreeMap<String, usize>) -> Self {
        let leaves: Vec<Vec<Index>> = self
            .leaf_structure()
            .into_iter()
            .map(|l| {
                l.into_iter()
                    .map(|mut i| {
                        if let Some(&d) = dims.get(&i.label) {
                            i.dim = d;
                        }
                        i
                    })
                    .collect()
            })
            .collect();
        Self::from_ssa_path(&leaves, &self.ssa_path()).expect("same structure")
    }

    /// The plan each sliced subtask runs: every label in `labels` has dim 1.
    pub fn sliced<S: AsRef<str>>(&self, labels: &[S]) -> Self {
        let dims = labels.iter().map(|l| (l.as_ref().to_string(), 1)).collect();
        self.with_dims(&dims)
    }

    /// Node where `label` is summed out, i.e. the lowest common ancestor of the
    /// two leaves carrying it. `None` for open or unknown labels.
    pub fn contraction_node(&self, label: &str) -> Option<usize> {
        self.internal().find(|&id| {
            let (x, y) = self.nodes[id].children.unwrap();
            self.nodes[x].has(label) && self.nodes[y].has(label)
        })
    }

    pub fn is_ancestor_or_self(&self, anc: usize, mut node: usize) -> bool {
        loop {
            if node == anc {
                return true;
            }
            match self.parent[node] {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    /// Rebuilds the tree with some nodes' children replaced, renumbering
    /// internal nodes into a valid SSA order. Leaves keep their ids.
    pub fn rebuild_with_children(
        &self,
        overrides: &HashMap<usize, (usize, usize)>,
    ) -> Result<Self> {
        let children = |v: usize| overrides.get(&v).copied().or(self.nodes[v].children);
        let mut new_id: HashMap<usize, usize> = HashMap::new();
        let mut path = Vec::with_capacity(self.internal().len());
        let mut stack = vec![(self.root(), false)];
        while let Some((v, expanded)) = stack.pop() {
            let Some((x, y)) = children(v) else { continue };
            if expanded {
                let map = |c: usize| {
                    if c < self.n_leaves {
                        Some(c)
                    } else {
                        new_id.get(&c).copied()
                    }
                };
                let (Some(nx), Some(ny)) = (map(x), map(y)) else {
                    return Err(TncError::InvalidTree(format!(
                        "node {v} has unresolved children"
                    )));
                };
                new_id.insert(v, self.n_leaves + path.len());
                path.push((nx, ny));
            } else {
                stack.push((v, true));
                stack.push((y, false));
                stack.push((x, false));
            }
        }
        Self::from_ssa_path(&self.leaf_structure(), &path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMetric {
    pub node: usize,
    pub cost: u128,
    pub rank: usize,
    pub size: u128,
}

/// Aggregate cost of a tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeMetrics {
    pub total_cost: u128,
    pub max_rank: usize,
    /// Three times the largest intermediate: two operands and a result. With
    /// all dims 2 this is `3 * 2^max_rank`.
    pub peak_memory_elements: u128,
    pub per_step: Vec<StepMetric>,
}

pub fn tree_metrics(t: &ContractionTree) -> TreeMetrics {
    let per_step: Vec<StepMetric> = t
        .internal()
        .map(|id| {
            let n = t.node(id);
            StepMetric {
                node: id,
                cost: n.cost,
                rank: n.rank(),
                size: n.size(),
            }
        })
        .collect();
    TreeMetrics {
        total_cost: per_step.iter().map(|s| s.cost).sum(),
        max_rank: per_step.iter().map(|s| s.rank).max().unwrap_or(0),
        peak_memory_elements: 3 * per_step.iter().map(|s| s.size).max().unwrap_or(0),
        per_step,
    }
}

/// Pairwise greedy: repeatedly contracts the connected pair with the smallest
/// result, breaking ties with a seeded RNG. Disconnected components are joined
/// by outer products of the two smallest remaining tensors.
pub fn greedy_path(leaves: &[Vec<Index>], seed: u64) -> Result<ContractionTree> {
    if leaves.is_empty() {
        return Err(TncError::InvalidNetwork("network has no tensors".into()));
    }
    label_table(leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut active: BTreeMap<usize, Vec<Index>> = leaves.iter().cloned().enumerate().collect();
    let mut owners: HashMap<String, BTreeSet<usize>> = HashMap::new();
    for (id, ixs) in &active {
        for i in ixs {
            owners.entry(i.label.clone()).or_default().insert(*id);
        }
    }
    let mut next = leaves.len();
    let mut path = Vec::with_capacity(leaves.len().saturating_sub(1));

    while active.len() > 1 {
        let mut best: Option<u128> = None;
        let mut ties: Vec<(usize, usize)> = Vec::new();
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for ids in owners.values() {
            let v: Vec<usize> = ids.iter().copied().collect();
            for a in 0..v.len() {
                for b in a + 1..v.len() {
                    pairs.insert((v[a], v[b]));
                }
            }
        }
        for &(x, y) in &pairs {
            let size = volume(&result_indices(&active[&x], &active[&y])) as u128;
            match best {
                Some(b) if size > b => {}
                Some(b) if size == b => ties.push((x, y)),
                _ => {
                    best = Some(size);
                    ties.clear();
                    ties.push((x, y));
                }
            }
        }
        if ties.is_empty() {
            let mut by_size: Vec<(usize, usize)> =
                active.iter().map(|(&id, ix)| (volume(ix), id)).collect();
            by_size.sort();
            ties.push((
                by_size[0].1.min(by_size[1].1),
                by_size[0].1.max(by_size[1].1),
            ));
        }
        let (x, y) = ties[rng.gen_range(0..ties.len())];
        let a = active.remove(&x).unwrap();
        let b = active.remove(&y).unwrap();
        for i in a.iter().chain(&b) {
            if let Some(set) = owners.get_mut(&i.label) {
                set.remove(&x);
                set.remove(&y);
            }
        }
        let r = result_indices(&a, &b);
        for i in &r {
            owners.entry(i.label.clone()).or_default().insert(next);
        }
        owners.retain(|_, s| !s.is_empty());
        active.insert(next, r);
        path.push((x, y));
        next += 1;
    }
    ContractionTree::from_ssa_path(leaves, &path)
}
