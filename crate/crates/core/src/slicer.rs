//! Sliced-index lifetimes, per-index overhead, greedy slice selection and
//! branch exchange for nesting lifetimes.
//!
//! The overhead of slicing index `a` with dimension `d` is `d * C_a / C_ori`,
//! where `C_a` is the cost of the tree with `a` fixed to a single value. A
//! value above 1 means the sliced subtasks repeat work.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};
use crate::par;
use crate::schedule::{linearize, LinearSchedule};
use crate::tensor::Index;
use crate::tree::{tree_metrics, ContractionTree};

/// Steps (0-based) during which an index is live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetime {
    /// First step with an operand carrying the index.
    pub start: usize,
    /// Step that sums the index out; the last step for open indices.
    pub end: usize,
}

impl Lifetime {
    pub fn contains(&self, other: &Lifetime) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// Lifetimes of every label in the schedule's network.
pub fn compute_lifetimes(s: &LinearSchedule) -> BTreeMap<String, Lifetime> {
    let mut out = BTreeMap::new();
    for label in s.tree().label_dims().into_keys() {
        if let Ok(l) = lifetime_of(s, &label) {
            out.insert(label, l);
        }
    }
    out
}

/// Lifetime of one label.
pub fn lifetime_of(s: &LinearSchedule, label: &str) -> Result<Lifetime> {
    let start = s
        .steps
        .iter()
        .position(|st| st.operands_have(label))
        .ok_or_else(|| TncError::UnknownLabel(label.to_string()))?;
    let end = s.steps[start..]
        .iter()
        .position(|st| st.operands_have(label) && !st.result_has(label))
        .map(|k| start + k)
        .unwrap_or(s.len() - 1);
    Ok(Lifetime { start, end })
}

/// One sliced index. `fork <= start` and `merge >= end`; the reuse planner may
/// widen the interval to checkpoint smaller tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub index: Index,
    pub lifetime: Lifetime,
    pub fork: usize,
    pub merge: usize,
    /// Whether the reuse planner shares work across this index's values.
    pub reuse: bool,
}

impl SliceEntry {
    pub fn label(&self) -> &str {
        &self.index.label
    }

    fn interval(&self) -> (usize, usize) {
        (self.fork, self.merge)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub entries: Vec<SliceEntry>,
    /// All `(fork, merge)` intervals are pairwise nested.
    pub nesting_ok: bool,
}

/// True when `(f1, m1)` and `(f2, m2)` contain one another.
pub fn intervals_nested(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 <= b.0 && b.1 <= a.1) || (b.0 <= a.0 && a.1 <= b.1)
}

impl SliceSpec {
    pub fn empty() -> Self {
        SliceSpec {
            entries: Vec::new(),
            nesting_ok: true,
        }
    }

    /// Entries for `labels` with `fork = start`, `merge = end`.
    pub fn from_labels<S: AsRef<str>>(s: &LinearSchedule, labels: &[S]) -> Result<Self> {
        let dims = s.tree().label_dims();
        let entries = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                let dim = *dims
                    .get(l)
                    .ok_or_else(|| TncError::UnknownLabel(l.to_string()))?;
                let lifetime = lifetime_of(s, l)?;
                Ok(SliceEntry {
                    index: Index::new(l, dim),
                    fork: lifetime.start,
                    merge: lifetime.end,
                    lifetime,
                    reuse: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut spec = SliceSpec {
            entries,
            nesting_ok: true,
        };
        spec.refresh_nesting();
        Ok(spec)
    }

    pub fn refresh_nesting(&mut self) {
        self.nesting_ok = all_nested(self.entries.iter());
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.index.label.clone()).collect()
    }

    pub fn get(&self, label: &str) -> Option<&SliceEntry> {
        self.entries.iter().find(|e| e.index.label == label)
    }

    /// Product of the sliced dims.
    pub fn subtask_count(&self) -> u128 {
        self.entries.iter().map(|e| e.index.dim as u128).product()
    }

    pub fn nested(&self) -> impl Iterator<Item = &SliceEntry> {
        self.entries.iter().filter(|e| e.reuse)
    }

    pub fn outer(&self) -> impl Iterator<Item = &SliceEntry> {
        self.entries.iter().filter(|e| !e.reuse)
    }

    /// Reuse entries ordered outermost first.
    pub fn nesting_levels(&self) -> Vec<&SliceEntry> {
        let mut v: Vec<&SliceEntry> = self.nested().collect();
        v.sort_by(|a, b| {
            a.fork
                .cmp(&b.fork)
                .then(b.merge.cmp(&a.merge))
                .then(a.index.label.cmp(&b.index.label))
        });
        v
    }
}

pub(crate) fn all_nested<'a>(entries: impl Iterator<Item = &'a SliceEntry> + Clone) -> bool {
    let v: Vec<(usize, usize)> = entries.map(|e| e.interval()).collect();
    v.iter()
        .enumerate()
        .all(|(i, &a)| v[i + 1..].iter().all(|&b| intervals_nested(a, b)))
}

fn total_cost(t: &ContractionTree) -> u128 {
    tree_metrics(t).total_cost
}

/// `d * C_a / C_ori` for one label.
pub fn index_overhead(t: &ContractionTree, label: &str) -> Result<Ratio<u128>> {
    let dim = *t
        .label_dims()
        .get(label)
        .ok_or_else(|| TncError::UnknownLabel(label.to_string()))?;
    let c_ori = total_cost(t);
    if c_ori == 0 {
        return Ok(Ratio::from_integer(1));
    }
    let c_a = total_cost(&t.sliced(&[label]));
    Ok(Ratio::new(dim as u128 * c_a, c_ori))
}

/// `(prod d) * C_sliced / C_ori` for a set of labels.
pub fn total_overhead<S: AsRef<str>>(t: &ContractionTree, labels: &[S]) -> Ratio<u128> {
    let c_ori = total_cost(t);
    if c_ori == 0 {
        return Ratio::from_integer(1);
    }
    let dims = t.label_dims();
    let d: u128 = labels.iter().map(|l| dims[l.as_ref()] as u128).product();
    Ratio::new(d * total_cost(&t.sliced(labels)), c_ori)
}

/// Effective rank of the largest intermediate after slicing `labels`.
pub fn sliced_max_rank<S: AsRef<str>>(t: &ContractionTree, labels: &[S]) -> usize {
    tree_metrics(&t.sliced(labels)).max_rank
}

/// Greedy slicing under a rank cap.
///
/// Each round evaluates up to `budget` closed labels that occur in an
/// over-cap intermediate (all of them when `budget` is 0, a seeded sample
/// otherwise), and slices the one with the lowest per-round overhead, ties
/// broken by label.
pub fn select_slices(
    t: &ContractionTree,
    max_rank: usize,
    budget: usize,
    seed: u64,
) -> Result<SliceSpec> {
    let leaf_rank = t.nodes()[..t.n_leaves()]
        .iter()
        .map(|n| n.rank())
        .max()
        .unwrap_or(0);
    if max_rank < leaf_rank {
        return Err(TncError::SliceCapUnreachable {
            cap: max_rank,
            reason: format!("a leaf tensor already has rank {leaf_rank}"),
        });
    }
    let closed: BTreeSet<String> = t.closed_labels().into_iter().collect();
    let dims = t.label_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<String> = Vec::new();
    loop {
        let current = t.sliced(&chosen);
        let over: Vec<usize> = current
            .internal()
            .filter(|&v| current.node(v).rank() > max_rank)
            .collect();
        if over.is_empty() {
            break;
        }
        let mut candidates: Vec<String> = over
            .iter()
            .flat_map(|&v| current.node(v).indices.iter())
            .filter(|i| i.dim > 1 && closed.contains(&i.label))
            .map(|i| i.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if candidates.is_empty() {
            return Err(TncError::SliceCapUnreachable {
                cap: max_rank,
                reason: format!(
                    "no closed index left to slice in an intermediate of rank {}",
                    tree_metrics(&current).max_rank
                ),
            });
        }
        if budget > 0 && candidates.len() > budget {
            candidates.shuffle(&mut rng);
            candidates.truncate(budget);
            candidates.sort();
        }
        let base = total_cost(&current);
        let scored = par::map(&candidates, |l| {
            let c = total_cost(&current.sliced(&[l]));
            Ratio::new(dims[l] as u128 * c, base.max(1))
        });
        let best = scored
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1).then(candidates[a.0].cmp(&candidates[b.0])))
            .map(|(k, _)| k)
            .unwrap();
        chosen.push(candidates[best].clone());
    }
    SliceSpec::from_labels(&linearize(t), &chosen)
}

/// Sum over crossing pairs of the distance to a nested configuration.
fn nesting_violation(s: &LinearSchedule, labels: &[String]) -> u128 {
    let lt: Vec<(usize, usize)> = labels
        .iter()
        .map(|l| {
            lifetime_of(s, l)
                .map(|x| (x.start, x.end))
                .unwrap_or((0, 0))
        })
        .collect();
    let mut total = 0u128;
    for i in 0..lt.len() {
        for j in i + 1..lt.len() {
            let (x, y) = if lt[i].0 <= lt[j].0 {
                (lt[i], lt[j])
            } else {
                (lt[j], lt[i])
            };
            if !intervals_nested(x, y) {
                let grow = y.1.saturating_sub(x.1);
                let shift = y.0 - x.0;
                total += grow.min(shift).max(1) as u128;
            }
        }
    }
    total
}

fn labels_of(t: &ContractionTree, v: usize) -> BTreeSet<&str> {
    t.node(v).indices.iter().map(|i| i.label.as_str()).collect()
}

/// Candidate adjacent-absorption swaps along every stem, as child overrides.
fn exchange_candidates(s: &LinearSchedule) -> Vec<HashMap<usize, (usize, usize)>> {
    let t = s.tree();
    let mut out = Vec::new();
    for stem in &s.stems {
        for w in 0..stem.steps.len().saturating_sub(1) {
            let lower = &s.steps[stem.steps[w]];
            let upper = &s.steps[stem.steps[w + 1]];
            let (c, p) = (lower.node, upper.node);
            let (cx, cy) = t.node(c).children.unwrap();
            let (px, py) = t.node(p).children.unwrap();
            let (x, b1, x_left) = if stem.stem_is_lhs[w] {
                (cx, cy, true)
            } else {
                (cy, cx, false)
            };
            let (c_on, b2, c_left) = if stem.stem_is_lhs[w + 1] {
                (px, py, true)
            } else {
                (py, px, false)
            };
            if c_on != c {
                continue;
            }
            if !labels_of(t, b1).is_disjoint(&labels_of(t, b2)) {
                continue;
            }
            let mut ov = HashMap::new();
            ov.insert(c, if x_left { (x, b2) } else { (b2, x) });
            ov.insert(p, if c_left { (c, b1) } else { (b1, c) });
            out.push(ov);
        }
    }
    out
}

fn cost_multiset(s: &LinearSchedule) -> Vec<u128> {
    let mut v: Vec<u128> = s.steps.iter().map(|x| x.cost).collect();
    v.sort_unstable();
    v
}

/// Swaps adjacent stem absorptions until the sliced lifetimes nest.
///
/// A swap is taken only when the two absorbed branches share no label and the
/// multiset of step costs is unchanged. Returns the new schedule and the spec
/// recomputed on it; `nesting_ok` reports whether nesting was reached.
pub fn branch_exchange_nest(s: &LinearSchedule, spec: &SliceSpec) -> (LinearSchedule, SliceSpec) {
    let labels = spec.labels();
    let refreshed = |sched: &LinearSchedule| -> SliceSpec {
        let mut out =
            SliceSpec::from_labels(sched, &labels).expect("labels come from this network");
        for (e, old) in out.entries.iter_mut().zip(&spec.entries) {
            e.reuse = old.reuse;
        }
        out
    };
    let mut current = s.clone();
    let mut score = nesting_violation(&current, &labels);
    if score == 0 {
        return (current, refreshed(s));
    }
    let costs = cost_multiset(s);
    let max_rounds = 4 * s.len() + 8;
    for _ in 0..max_rounds {
        let mut best: Option<(u128, LinearSchedule)> = None;
        for ov in exchange_candidates(&current) {
            let Ok(t) = current.tree().rebuild_with_children(&ov) else {
                continue;
            };
            let cand = linearize(&t);
            if cost_multiset(&cand) != costs {
                continue;
            }
            let v = nesting_violation(&cand, &labels);
            if v < best.as_ref().map_or(score, |b| b.0) {
                best = Some((v, cand));
            }
        }
        match best {
            Some((v, cand)) => {
                current = cand;
                score = v;
                if score == 0 {
                    break;
                }
            }
            None => break,
        }
    }
    let out = refreshed(&current);
    (current, out)
}
