//! Reuse schedules across sliced subtasks.
//!
//! Sliced indices chosen for reuse form nesting levels, outermost first, with
//! `f1 <= f2 <= .. <= fk <= mk <= .. <= m1`. Steps before `f1` run once. At each
//! fork the live intermediates are checkpointed and the remaining work runs
//! once per value of that level's index; at each merge the single tensor that
//! depends on the index is summed over its values and execution continues
//! once. A step therefore runs `prod(d_j)` times over the levels whose
//! `[fork, merge]` interval covers it.
//!
//! Indices not chosen for reuse stay outer slices: every outer assignment runs
//! the whole spindle independently.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};
use crate::io::ratio_str;
use crate::schedule::{LinearSchedule, Operand};
use crate::slicer::{all_nested, branch_exchange_nest, index_overhead, SliceEntry, SliceSpec};
use crate::tensor::Precision;
use crate::tree::ContractionTree;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReuseAction {
    /// Runs steps `from..to` with the nested indices in `assignment` fixed.
    Run {
        from: usize,
        to: usize,
        assignment: Vec<(String, usize)>,
    },
    /// Snapshots every live intermediate.
    Checkpoint {
        id: usize,
    },
    /// Replaces the live intermediates with the snapshot.
    Restore {
        id: usize,
    },
    Free {
        id: usize,
    },
    /// Moves the tensor of `node` into partial buffer `id`, adding to what is there.
    StorePartial {
        id: usize,
        node: usize,
    },
    /// Puts the summed buffer back as the tensor of `node`.
    Merge {
        id: usize,
        index: String,
        node: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseSchedule {
    pub actions: Vec<ReuseAction>,
    /// Reuse levels, outermost first; level `j` uses checkpoint and partial id `j`.
    pub nested_slices: Vec<SliceEntry>,
    pub outer_slices: Vec<SliceEntry>,
    pub n_steps: usize,
}

impl ReuseSchedule {
    /// Product of outer slice dims.
    pub fn outer_count(&self) -> u128 {
        self.outer_slices
            .iter()
            .map(|e| e.index.dim as u128)
            .product()
    }

    pub fn all_labels(&self) -> Vec<String> {
        self.nested_slices
            .iter()
            .chain(&self.outer_slices)
            .map(|e| e.index.label.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReusePlanReport {
    pub predicted_multiplies: u128,
    pub predicted_peak_bytes: u128,
    #[serde(with = "ratio_str")]
    pub overhead_with_reuse: Ratio<u128>,
    #[serde(with = "ratio_str")]
    pub overhead_without_reuse: Ratio<u128>,
    /// Reuse indices moved back to the outer loop because one checkpoint
    /// alone exceeds the budget.
    pub demoted: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub bytes: u128,
    pub element_bytes: u128,
}

impl MemoryBudget {
    pub fn new(bytes: u128, precision: Precision) -> Self {
        MemoryBudget {
            bytes,
            element_bytes: precision.element_bytes() as u128,
        }
    }

    pub fn unlimited(precision: Precision) -> Self {
        Self::new(u128::MAX, precision)
    }
}

/// Counts and sizes implied by a spec on a schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub multiplies: u128,
    pub peak_bytes: u128,
    /// Peak of live intermediates plus the step output, without reuse buffers.
    pub working_peak_bytes: u128,
    /// Per level, outermost first.
    pub checkpoint_bytes: Vec<u128>,
    pub partial_bytes: Vec<u128>,
    /// Times each step runs inside one outer assignment.
    pub step_weights: Vec<u128>,
}

struct Sizes {
    /// Bytes of live intermediates before each step; index `T` is after the last.
    live_before: Vec<u128>,
    working_peak: u128,
    node_bytes: Vec<u128>,
}

fn sizes(s: &LinearSchedule, sliced: &ContractionTree, eb: u128) -> Sizes {
    let node_bytes: Vec<u128> = sliced.nodes().iter().map(|n| n.size() * eb).collect();
    let mut live = 0u128;
    let mut live_before = Vec::with_capacity(s.len() + 1);
    let mut peak = 0u128;
    for st in &s.steps {
        live_before.push(live);
        let out = node_bytes[st.node];
        peak = peak.max(live + out);
        for op in [st.lhs, st.rhs] {
            if let Operand::Step(p) = op {
                live -= node_bytes[s.steps[p].node];
            }
        }
        live += out;
    }
    live_before.push(live);
    Sizes {
        live_before,
        working_peak: peak,
        node_bytes,
    }
}

/// Node holding everything that depends on `label` once step `merge` is done.
pub fn dependent_node(s: &LinearSchedule, label: &str, merge: usize) -> Result<usize> {
    let t = s.tree();
    let mut v = t
        .contraction_node(label)
        .ok_or_else(|| TncError::UnknownLabel(label.to_string()))?;
    if s.step_of(v).unwrap() > merge {
        return Err(TncError::MalformedSchedule(format!(
            "merge of {label} at step {merge} precedes its contraction"
        )));
    }
    while let Some(p) = t.parent(v) {
        if s.step_of(p).unwrap() <= merge {
            v = p;
        } else {
            break;
        }
    }
    Ok(v)
}

fn check_entry(s: &LinearSchedule, e: &SliceEntry) -> Result<()> {
    if e.fork > e.lifetime.start || e.merge < e.lifetime.end || e.merge >= s.len() {
        return Err(TncError::MalformedSchedule(format!(
            "{}: fork {} and merge {} must bracket lifetime {}..={} within {} steps",
            e.index.label,
            e.fork,
            e.merge,
            e.lifetime.start,
            e.lifetime.end,
            s.len()
        )));
    }
    Ok(())
}

/// Predicted multiplies and bytes for `spec` (reuse entries nested) on `s`.
pub fn predict(s: &LinearSchedule, spec: &SliceSpec, element_bytes: u128) -> Result<Prediction> {
    let levels = spec.nesting_levels();
    for e in &levels {
        check_entry(s, e)?;
    }
    if !all_nested(levels.iter().copied()) {
        return Err(TncError::NotNested(
            "reuse intervals cross; reorder with branch_exchange_nest first".into(),
        ));
    }
    let labels = spec.labels();
    let sliced = s.tree().sliced(&labels);
    let costs: Vec<u128> = s.steps.iter().map(|st| sliced.node(st.node).cost).collect();
    let sz = sizes(s, &sliced, element_bytes);

    let step_weights: Vec<u128> = (0..s.len())
        .map(|i| {
            levels
                .iter()
                .filter(|e| e.fork <= i && i <= e.merge)
                .map(|e| e.index.dim as u128)
                .product()
        })
        .collect();
    let outer: u128 = spec.outer().map(|e| e.index.dim as u128).product();
    let inner: u128 = costs.iter().zip(&step_weights).map(|(c, w)| c * w).sum();

    let mut checkpoint_bytes = Vec::new();
    let mut partial_bytes = Vec::new();
    let mut extra = 0u128;
    for e in &levels {
        let c = sz.live_before[e.fork];
        let p = sz.node_bytes[dependent_node(s, &e.index.label, e.merge)?];
        // a dim-2 level holds its checkpoint or its partial, never both for
        // long; wider levels hold both through the middle values
        extra += if e.index.dim <= 2 { c.max(p) } else { c + p };
        checkpoint_bytes.push(c);
        partial_bytes.push(p);
    }
    extra += partial_bytes.iter().copied().max().unwrap_or(0);
    Ok(Prediction {
        multiplies: outer * inner,
        peak_bytes: sz.working_peak + extra,
        working_peak_bytes: sz.working_peak,
        checkpoint_bytes,
        partial_bytes,
        step_weights,
    })
}

fn push_run(out: &mut Vec<ReuseAction>, from: usize, to: usize, asg: &[(String, usize)]) {
    if from < to {
        out.push(ReuseAction::Run {
            from,
            to,
            assignment: asg.to_vec(),
        });
    }
}

fn emit_level(
    out: &mut Vec<ReuseAction>,
    levels: &[&SliceEntry],
    nodes: &[usize],
    j: usize,
    asg: &mut Vec<(String, usize)>,
) {
    let e = levels[j];
    let d = e.index.dim;
    if d > 1 {
        out.push(ReuseAction::Checkpoint { id: j });
    }
    for v in 0..d {
        if v > 0 {
            out.push(ReuseAction::Restore { id: j });
            if v + 1 == d {
                out.push(ReuseAction::Free { id: j });
            }
        }
        asg.push((e.index.label.clone(), v));
        if j + 1 < levels.len() {
            push_run(out, e.fork, levels[j + 1].fork, asg);
            emit_level(out, levels, nodes, j + 1, asg);
            push_run(out, levels[j + 1].merge + 1, e.merge + 1, asg);
        } else {
            push_run(out, e.fork, e.merge + 1, asg);
        }
        asg.pop();
        out.push(ReuseAction::StorePartial {
            id: j,
            node: nodes[j],
        });
    }
    out.push(ReuseAction::Merge {
        id: j,
        index: e.index.label.clone(),
        node: nodes[j],
    });
}

/// Drops reuse levels, outermost first, whose fork checkpoint alone exceeds the budget.
fn demote_oversized(
    s: &LinearSchedule,
    spec: &SliceSpec,
    budget: &MemoryBudget,
) -> Result<(SliceSpec, Vec<String>)> {
    let sliced = s.tree().sliced(&spec.labels());
    let sz = sizes(s, &sliced, budget.element_bytes);
    let mut out = spec.clone();
    let mut demoted = Vec::new();
    let order: Vec<String> = spec
        .nesting_levels()
        .iter()
        .map(|e| e.index.label.clone())
        .collect();
    for l in order {
        let e = out.entries.iter_mut().find(|e| e.index.label == l).unwrap();
        if sz.live_before[e.fork] > budget.bytes {
            e.reuse = false;
            demoted.push(l);
        }
    }
    Ok((out, demoted))
}

/// Spindle schedule: checkpoints at the forks and partial sums at the merges
/// of every reuse entry in `spec`.
pub fn plan_spindle(
    s: &LinearSchedule,
    spec: &SliceSpec,
    budget: &MemoryBudget,
) -> Result<(ReuseSchedule, ReusePlanReport)> {
    if s.is_empty() {
        return Err(TncError::MalformedSchedule("schedule has no steps".into()));
    }
    let (spec, demoted) = demote_oversized(s, spec, budget)?;
    let pred = predict(s, &spec, budget.element_bytes)?;
    let levels = spec.nesting_levels();
    let nodes = levels
        .iter()
        .map(|e| dependent_node(s, &e.index.label, e.merge))
        .collect::<Result<Vec<_>>>()?;

    let t = s.len();
    let mut actions = Vec::new();
    if levels.is_empty() {
        push_run(&mut actions, 0, t, &[]);
    } else {
        push_run(&mut actions, 0, levels[0].fork, &[]);
        emit_level(&mut actions, &levels, &nodes, 0, &mut Vec::new());
        push_run(&mut actions, levels[0].merge + 1, t, &[]);
    }

    let c_ori = s.total_cost().max(1);
    let all_dims: u128 = spec.subtask_count();
    let c_sliced: u128 = s.sliced_costs(&spec.labels()).iter().sum();
    let report = ReusePlanReport {
        predicted_multiplies: pred.multiplies,
        predicted_peak_bytes: pred.peak_bytes,
        overhead_with_reuse: Ratio::new(pred.multiplies, c_ori),
        overhead_without_reuse: Ratio::new(all_dims * c_sliced, c_ori),
        demoted,
    };
    let schedule = ReuseSchedule {
        actions,
        nested_slices: levels.into_iter().cloned().collect(),
        outer_slices: spec.outer().cloned().collect(),
        n_steps: t,
    };
    Ok((schedule, report))
}

/// Pre-lifetime sharing only: every reuse entry merges at the last step, so the
/// common prefix before each fork runs once per parent branch.
pub fn plan_tree_reuse(
    s: &LinearSchedule,
    spec: &SliceSpec,
    budget: &MemoryBudget,
) -> Result<(ReuseSchedule, ReusePlanReport)> {
    let mut spec = spec.clone();
    let last = s.len().saturating_sub(1);
    for e in spec.entries.iter_mut().filter(|e| e.reuse) {
        e.merge = last;
    }
    spec.refresh_nesting();
    plan_spindle(s, &spec, budget)
}

/// What a stack interpreter observed while walking a schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpretStats {
    pub peak_checkpoints: usize,
    /// Peak of checkpoints plus partial buffers.
    pub peak_buffers: usize,
    /// Buffers beyond one per level.
    pub extra_buffers: usize,
    /// Times each step runs within one outer assignment.
    pub step_runs: Vec<u128>,
}

/// Checks bracket structure and buffer bounds.
///
/// Every checkpoint is freed, restores and frees name live checkpoints, each
/// merge follows exactly `dim` partial stores, runs stay in range, and every
/// step runs. At most one checkpoint per level is live; counting partial
/// buffers too, dim-2 levels allow one buffer beyond that and wider levels
/// allow one checkpoint plus one partial per level.
pub fn interpret(rs: &ReuseSchedule) -> Result<InterpretStats> {
    let bad = |m: String| Err(TncError::MalformedSchedule(m));
    let k = rs.nested_slices.len();
    let mut ckpt = vec![false; k];
    let mut partials = vec![0usize; k];
    let mut step_runs = vec![0u128; rs.n_steps];
    let (mut peak_c, mut peak_b) = (0usize, 0usize);
    for (i, a) in rs.actions.iter().enumerate() {
        match a {
            ReuseAction::Run {
                from,
                to,
                assignment,
            } => {
                if from >= to || *to > rs.n_steps {
                    return bad(format!("action {i}: run {from}..{to} out of range"));
                }
                for (l, v) in assignment {
                    match rs.nested_slices.iter().find(|e| &e.index.label == l) {
                        Some(e) if *v < e.index.dim => {}
                        _ => return bad(format!("action {i}: bad assignment {l}={v}")),
                    }
                }
                for r in &mut step_runs[*from..*to] {
                    *r += 1;
                }
            }
            ReuseAction::Checkpoint { id }
            | ReuseAction::Restore { id }
            | ReuseAction::Free { id }
                if *id >= k =>
            {
                return bad(format!("action {i}: unknown id {id}"));
            }
            ReuseAction::Checkpoint { id } => {
                if ckpt[*id] {
                    return bad(format!("action {i}: checkpoint {id} already live"));
                }
                ckpt[*id] = true;
            }
            ReuseAction::Restore { id } => {
                if !ckpt[*id] {
                    return bad(format!("action {i}: restore of dead checkpoint {id}"));
                }
            }
            ReuseAction::Free { id } => {
                if !ckpt[*id] {
                    return bad(format!("action {i}: free of dead checkpoint {id}"));
                }
                ckpt[*id] = false;
            }
            ReuseAction::StorePartial { id, .. } => {
                if *id >= k {
                    return bad(format!("action {i}: unknown id {id}"));
                }
                partials[*id] += 1;
            }
            ReuseAction::Merge { id, index, .. } => {
                if *id >= k || rs.nested_slices[*id].index.label != *index {
                    return bad(format!("action {i}: merge of {index} under id {id}"));
                }
                let d = rs.nested_slices[*id].index.dim;
                if partials[*id] != d {
                    return bad(format!(
                        "action {i}: merge of {index} after {} partials, expected {d}",
                        partials[*id]
                    ));
                }
                if ckpt[*id] && d > 1 {
                    return bad(format!("action {i}: checkpoint {id} still live at merge"));
                }
                ckpt[*id] = false;
                partials[*id] = 0;
            }
        }
        let c = ckpt.iter().filter(|&&x| x).count();
        let b = c + partials.iter().filter(|&&p| p > 0).count();
        peak_c = peak_c.max(c);
        peak_b = peak_b.max(b);
    }
    if ckpt.iter().any(|&x| x) || partials.iter().any(|&p| p > 0) {
        return bad("buffers still live at the end".into());
    }
    if let Some(s) = step_runs.iter().position(|&r| r == 0) {
        return bad(format!("step {s} never runs"));
    }
    let narrow = rs.nested_slices.iter().all(|e| e.index.dim <= 2);
    let bound = if narrow { k + 1 } else { 2 * k };
    if peak_c > k || (k > 0 && peak_b > bound) {
        return bad(format!(
            "{peak_c} checkpoints and {peak_b} buffers for {k} levels"
        ));
    }
    Ok(InterpretStats {
        peak_checkpoints: peak_c,
        peak_buffers: peak_b,
        extra_buffers: peak_b.saturating_sub(k),
        step_runs,
    })
}

/// Multiplies the interpreter counts: outer assignments times the sliced cost
/// of every step run.
pub fn interpreted_multiplies(s: &LinearSchedule, rs: &ReuseSchedule) -> Result<u128> {
    let stats = interpret(rs)?;
    let costs = s.sliced_costs(&rs.all_labels());
    Ok(rs.outer_count()
        * stats
            .step_runs
            .iter()
            .zip(&costs)
            .map(|(r, c)| r * c)
            .sum::<u128>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Fork,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneMove {
    pub label: String,
    pub kind: MoveKind,
    pub from: usize,
    pub to: usize,
    pub added_multiplies: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneReport {
    pub moves: Vec<TuneMove>,
    pub added_multiplies: u128,
    pub demoted: Vec<String>,
    pub predicted_peak_bytes: u128,
    pub fits: bool,
}

/// Widens reuse intervals until the predicted peak fits the budget.
///
/// Each round tries moving one fork a step earlier or one merge a step later
/// (keeping the levels nested) and takes the move that lowers the peak with
/// the fewest added multiplies. When no move lowers the peak the innermost
/// level is demoted to the outer loop.
pub fn tune_memory(
    s: &LinearSchedule,
    spec: &SliceSpec,
    budget: &MemoryBudget,
) -> Result<(SliceSpec, TuneReport)> {
    let eb = budget.element_bytes;
    let mut cur = spec.clone();
    let mut pred = predict(s, &cur, eb)?;
    let mut report = TuneReport {
        moves: Vec::new(),
        added_multiplies: 0,
        demoted: Vec::new(),
        predicted_peak_bytes: pred.peak_bytes,
        fits: pred.peak_bytes <= budget.bytes,
    };
    let last = s.len().saturating_sub(1);
    while pred.peak_bytes > budget.bytes {
        let levels: Vec<SliceEntry> = cur.nesting_levels().into_iter().cloned().collect();
        if levels.is_empty() {
            break;
        }
        let mut best: Option<(u128, u128, TuneMove, SliceSpec, Prediction)> = None;
        for (j, e) in levels.iter().enumerate() {
            let outer = j.checked_sub(1).map(|p| &levels[p]);
            let mut moves = Vec::new();
            if e.fork > 0 && outer.is_none_or(|o| e.fork > o.fork) {
                moves.push((MoveKind::Fork, e.fork, e.fork - 1));
            }
            if e.merge < last && outer.is_none_or(|o| e.merge < o.merge) {
                moves.push((MoveKind::Merge, e.merge, e.merge + 1));
            }
            for (kind, from, to) in moves {
                let mut cand = cur.clone();
                let ce = cand
                    .entries
                    .iter_mut()
                    .find(|x| x.index.label == e.index.label)
                    .unwrap();
                match kind {
                    MoveKind::Fork => ce.fork = to,
                    MoveKind::Merge => ce.merge = to,
                }
                let Ok(p) = predict(s, &cand, eb) else {
                    continue;
                };
                if p.peak_bytes >= pred.peak_bytes {
                    continue;
                }
                let added = p.multiplies - pred.multiplies;
                let better = best
                    .as_ref()
                    .is_none_or(|b| (added, p.peak_bytes) < (b.0, b.1));
                if better {
                    let mv = TuneMove {
                        label: e.index.label.clone(),
                        kind,
                        from,
                        to,
                        added_multiplies: added,
                    };
                    best = Some((added, p.peak_bytes, mv, cand, p));
                }
            }
        }
        match best {
            Some((added, _, mv, cand, p)) => {
                report.added_multiplies += added;
                report.moves.push(mv);
                cur = cand;
                pred = p;
            }
            None => {
                let inner = levels.last().unwrap().index.label.clone();
                let ce = cur
                    .entries
                    .iter_mut()
                    .find(|x| x.index.label == inner)
                    .unwrap();
                ce.reuse = false;
                ce.fork = ce.lifetime.start;
                ce.merge = ce.lifetime.end;
                report.demoted.push(inner);
                let before = pred.multiplies;
                pred = predict(s, &cur, eb)?;
                report.added_multiplies += pred.multiplies - before;
            }
        }
    }
    cur.refresh_nesting();
    report.predicted_peak_bytes = pred.peak_bytes;
    report.fits = pred.peak_bytes <= budget.bytes;
    Ok((cur, report))
}

/// Result of choosing which sliced indices to reuse.
#[derive(Debug, Clone)]
pub struct ReuseChoice {
    /// Schedule after any branch exchanges needed for nesting.
    pub schedule: LinearSchedule,
    /// The full spec on `schedule`, reuse flags set for the chosen indices.
    pub spec: SliceSpec,
    /// Every sliced index with its individual overhead, highest first.
    pub ranking: Vec<(String, Ratio<u128>)>,
    /// Chosen indices in admission order.
    pub chosen: Vec<String>,
}

fn with_reuse(s: &LinearSchedule, labels: &[String], reuse: &[String]) -> Result<SliceSpec> {
    let mut spec = SliceSpec::from_labels(s, labels)?;
    for e in &mut spec.entries {
        e.reuse = reuse.contains(&e.index.label);
    }
    spec.refresh_nesting();
    Ok(spec)
}

/// Ranks sliced indices by individual overhead and admits them greedily while
/// the reuse set stays nested (after branch exchange), fits the budget, and
/// has at most `max_k` members. Indices with overhead 1 gain nothing and are
/// never admitted.
pub fn choose_reuse_subset(
    s: &LinearSchedule,
    spec: &SliceSpec,
    budget: &MemoryBudget,
    max_k: usize,
) -> Result<ReuseChoice> {
    let labels = spec.labels();
    let mut ranking = labels
        .iter()
        .map(|l| Ok((l.clone(), index_overhead(s.tree(), l)?)))
        .collect::<Result<Vec<_>>>()?;
    ranking.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut sched = s.clone();
    let mut chosen: Vec<String> = Vec::new();
    for (label, o) in &ranking {
        if chosen.len() >= max_k || *o <= Ratio::from_integer(1) {
            break;
        }
        let mut trial: Vec<String> = chosen.clone();
        trial.push(label.clone());
        let sub = SliceSpec::from_labels(&sched, &trial)?;
        let (next, sub) = branch_exchange_nest(&sched, &sub);
        if !sub.nesting_ok {
            continue;
        }
        let full = with_reuse(&next, &labels, &trial)?;
        let pred = predict(&next, &full, budget.element_bytes)?;
        if pred.peak_bytes > budget.bytes {
            continue;
        }
        sched = next;
        chosen = trial;
    }
    let spec = with_reuse(&sched, &labels, &chosen)?;
    Ok(ReuseChoice {
        schedule: sched,
        spec,
        ranking,
        chosen,
    })
}

/// Per-label individual overheads, keyed by label.
pub fn overhead_table(
    t: &ContractionTree,
    spec: &SliceSpec,
) -> Result<BTreeMap<String, Ratio<u128>>> {
    spec.labels()
        .into_iter()
        .map(|l| Ok((l.clone(), index_overhead(t, &l)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::linearize;
    use crate::tensor::Index;

    /// Stem `S` absorbing `n` two-leg tensors; each absorption closes the
    /// previous index and opens the next: S(x0) * L1(x0, x1) * L2(x1, x2) ...
    fn ladder(n: usize) -> LinearSchedule {
        let mut leaves = vec![vec![Index::qubit("x0"), Index::qubit("w")]];
        for k in 1..=n {
            let mut l = vec![
                Index::qubit(format!("x{}", k - 1)),
                Index::qubit(format!("x{k}")),
            ];
            if k == n {
                l.push(Index::qubit("w"));
            }
            leaves.push(l);
        }
        let mut path = vec![(0, 1)];
        for k in 2..=n {
            path.push((n + k - 1, k));
        }
        linearize(&ContractionTree::from_ssa_path(&leaves, &path).unwrap())
    }

    fn spec_with(s: &LinearSchedule, labels: &[&str], reuse: &[&str]) -> SliceSpec {
        let reuse: Vec<String> = reuse.iter().map(|x| x.to_string()).collect();
        let labels: Vec<String> = labels.iter().map(|x| x.to_string()).collect();
        with_reuse(s, &labels, &reuse).unwrap()
    }

    fn unlimited() -> MemoryBudget {
        MemoryBudget::unlimited(Precision::Double)
    }

    #[test]
    fn no_reuse_is_a_bare_run() {
        let s = ladder(4);
        let (rs, rep) = plan_spindle(&s, &SliceSpec::empty(), &unlimited()).unwrap();
        assert_eq!(
            rs.actions,
            vec![ReuseAction::Run {
                from: 0,
                to: 4,
                assignment: vec![]
            }]
        );
        assert_eq!(rep.predicted_multiplies, s.total_cost());
        assert_eq!(rep.overhead_with_reuse, Ratio::from_integer(1));
    }

    #[test]
    fn single_level_matches_hand_formula() {
        let s = ladder(5);
        let spec = spec_with(&s, &["x2"], &["x2"]);
        let e = &spec.entries[0];
        let costs = s.sliced_costs(&["x2"]);
        let (f, m) = (e.fork, e.merge);
        let hand: u128 = costs[..f].iter().sum::<u128>()
            + 2 * costs[f..=m].iter().sum::<u128>()
            + costs[m + 1..].iter().sum::<u128>();
        let (rs, rep) = plan_spindle(&s, &spec, &unlimited()).unwrap();
        assert_eq!(rep.predicted_multiplies, hand);
        assert_eq!(interpreted_multiplies(&s, &rs).unwrap(), hand);
        // only the lifetime runs twice, and each of those runs is half price
        assert_eq!(rep.overhead_with_reuse, Ratio::from_integer(1));
        assert_eq!(
            rep.overhead_without_reuse,
            index_overhead(s.tree(), "x2").unwrap()
        );
        assert_eq!(rep.overhead_without_reuse, Ratio::new(8, 5));
    }

    #[test]
    fn tree_reuse_order_for_three_levels() {
        let s = ladder(6);
        let spec = spec_with(&s, &["x1", "x2", "x3"], &["x1", "x2", "x3"]);
        let (rs, _) = plan_tree_reuse(&s, &spec, &unlimited()).unwrap();
        let stats = interpret(&rs).unwrap();
        assert_eq!(stats.peak_checkpoints, 3);
        assert!(stats.extra_buffers <= 1);
        let visits: Vec<String> = rs
            .actions
            .iter()
            .filter_map(|a| match a {
                ReuseAction::Run { assignment, .. } if assignment.len() == 3 => {
                    Some(assignment.iter().map(|(_, v)| v.to_string()).collect())
                }
                _ => None,
            })
            .collect();
        assert_eq!(
            visits,
            ["000", "001", "010", "011", "100", "101", "110", "111"]
        );
    }

    #[test]
    fn crossing_levels_are_rejected() {
        let s = ladder(5);
        let mut spec = spec_with(&s, &["x1", "x2"], &["x1", "x2"]);
        // x1 lives over steps 0..=1 and x2 over 1..=2
        assert!(!spec.nesting_ok);
        assert!(matches!(
            plan_spindle(&s, &spec, &unlimited()),
            Err(TncError::NotNested(_))
        ));
        spec.entries[0].merge = spec.entries[1].merge;
        spec.refresh_nesting();
        assert!(plan_spindle(&s, &spec, &unlimited()).is_ok());
    }

    #[test]
    fn interpreter_rejects_broken_brackets() {
        let s = ladder(4);
        let spec = spec_with(&s, &["x2"], &["x2"]);
        let (mut rs, _) = plan_spindle(&s, &spec, &unlimited()).unwrap();
        let pos = rs
            .actions
            .iter()
            .position(|a| matches!(a, ReuseAction::StorePartial { .. }))
            .unwrap();
        rs.actions.remove(pos);
        assert!(matches!(
            interpret(&rs),
            Err(TncError::MalformedSchedule(_))
        ));
    }

    #[test]
    fn tune_is_noop_with_room() {
        let s = ladder(6);
        let spec = spec_with(&s, &["x3"], &["x3"]);
        let (out, rep) = tune_memory(&s, &spec, &unlimited()).unwrap();
        assert_eq!(out, spec);
        assert!(rep.moves.is_empty() && rep.fits);
    }

    #[test]
    fn tune_demotes_when_nothing_fits() {
        let s = ladder(6);
        let spec = spec_with(&s, &["x3"], &["x3"]);
        let (out, rep) = tune_memory(&s, &spec, &MemoryBudget::new(1, Precision::Double)).unwrap();
        assert_eq!(rep.demoted, vec!["x3".to_string()]);
        assert!(!out.entries[0].reuse);
        assert!(!rep.fits);
    }

    #[test]
    fn unit_overheads_choose_nothing() {
        // w is carried from the first step to the last, so slicing it repeats nothing
        let s = ladder(4);
        let spec = spec_with(&s, &["w"], &[]);
        let c = choose_reuse_subset(&s, &spec, &unlimited(), 4).unwrap();
        assert!(c.chosen.is_empty());
        assert_eq!(c.ranking[0].1, Ratio::from_integer(1));
    }
}
