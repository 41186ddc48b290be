//! Residency and traffic model for running stem steps on an array of cells
//! with small private scratchpads.
//!
//! A stem tensor whose rank fits the cap stays resident across consecutive
//! steps; such a run is a fused section and costs one load and one store to
//! main memory instead of one of each per step. Solo cells hold at most
//! `intra_rank_cap` legs. Cooperating cells spread `log2(cells)` legs across
//! the array (inter legs), so the cap grows to `coop_rank_cap`, but an inter
//! leg has to be swapped with an intra leg before it is summed.
//!
//! Swap traffic is counted per cell as bytes sent. A pairwise swap sends half
//! the cell's block; a batch of `n` swaps inside a group of `2^n` cells sends
//! `1 - 2^-n` of it.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};
use crate::io::ratio_str;
use crate::schedule::LinearSchedule;
use crate::slicer::compute_lifetimes;
use crate::tensor::Index;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayParams {
    pub cells: usize,
    pub intra_rank_cap: usize,
    pub coop_rank_cap: usize,
    pub element_bytes: usize,
    /// Bytes per second, for model time estimates only.
    pub dma_bandwidth: Option<f64>,
    pub rma_bandwidth: Option<f64>,
}

impl Default for ArrayParams {
    fn default() -> Self {
        ArrayParams {
            cells: 64,
            intra_rank_cap: 13,
            coop_rank_cap: 19,
            element_bytes: 8,
            dma_bandwidth: Some(51.2e9),
            rma_bandwidth: None,
        }
    }
}

impl ArrayParams {
    pub fn new(cells: usize, intra_rank_cap: usize, element_bytes: usize) -> Result<Self> {
        if !cells.is_power_of_two() {
            return Err(TncError::InvalidParameter(format!(
                "{cells} cells is not a power of two"
            )));
        }
        Ok(ArrayParams {
            cells,
            intra_rank_cap,
            coop_rank_cap: intra_rank_cap + cells.trailing_zeros() as usize,
            element_bytes,
            ..ArrayParams::default()
        })
    }

    pub fn inter_slots(&self) -> usize {
        self.cells.trailing_zeros() as usize
    }

    fn validate(&self) -> Result<()> {
        if !self.cells.is_power_of_two()
            || self.coop_rank_cap != self.intra_rank_cap + self.inter_slots()
        {
            return Err(TncError::InvalidParameter(
                "coop cap must equal intra cap plus log2(cells)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapEvent {
    pub step: usize,
    pub indices: Vec<String>,
    pub group_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedSection {
    pub stem: usize,
    /// First and last step ids.
    pub start: usize,
    pub end: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidencyState {
    pub step: usize,
    pub intra: Vec<String>,
    pub inter: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub cooperate: bool,
    pub dma_bytes: u128,
    /// Bytes sent by all cells, rounded down.
    pub rma_bytes: u128,
    #[serde(with = "ratio_str")]
    pub rma_bytes_per_cell: Ratio<u128>,
    pub swap_events: Vec<SwapEvent>,
    pub fused_sections: Vec<FusedSection>,
    pub memory_accesses: u128,
    /// Accesses when every step stores and reloads its stem tensor.
    pub baseline_accesses: u128,
    pub residency: Vec<ResidencyState>,
    /// Model output from the bandwidth parameters, not a measurement.
    pub estimated_dma_seconds: Option<f64>,
    pub estimated_rma_seconds: Option<f64>,
}

impl TrafficReport {
    pub fn mean_fused_length(&self) -> Ratio<u128> {
        let steps: usize = self.fused_sections.iter().map(|s| s.length).sum();
        Ratio::new(steps as u128, self.fused_sections.len().max(1) as u128)
    }
}

/// Swaps taken in cooperate mode with their traffic under both schemes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub events: Vec<SwapEvent>,
    #[serde(with = "ratio_str")]
    pub per_cell_bytes: Ratio<u128>,
    /// The same swaps done one pair at a time.
    #[serde(with = "ratio_str")]
    pub pairwise_per_cell_bytes: Ratio<u128>,
}

impl BatchPlan {
    pub fn ratio(&self) -> Ratio<u128> {
        if self.per_cell_bytes == Ratio::from_integer(0) {
            Ratio::from_integer(1)
        } else {
            self.pairwise_per_cell_bytes / self.per_cell_bytes
        }
    }
}

fn rank(ix: &[Index]) -> usize {
    ix.iter().filter(|i| i.dim > 1).count()
}

fn bytes(ix: &[Index], eb: usize) -> u128 {
    ix.iter().map(|i| i.dim as u128).product::<u128>() * eb as u128
}

struct StemStep {
    id: usize,
    operand: Vec<Index>,
    result: Vec<Index>,
    contracted: BTreeSet<String>,
}

fn stem_steps(s: &LinearSchedule, stem: usize) -> Vec<StemStep> {
    let st = &s.stems[stem];
    st.steps
        .iter()
        .zip(&st.stem_is_lhs)
        .map(|(&id, &lhs)| {
            let step = &s.steps[id];
            let (operand, other) = if lhs {
                (&step.lhs_indices, &step.rhs_indices)
            } else {
                (&step.rhs_indices, &step.lhs_indices)
            };
            let contracted = operand
                .iter()
                .filter(|i| i.dim > 1 && other.iter().any(|o| o.label == i.label))
                .map(|i| i.label.clone())
                .collect();
            StemStep {
                id,
                operand: operand.clone(),
                result: step.result.clone(),
                contracted,
            }
        })
        .collect()
}

struct Walk {
    sections: Vec<FusedSection>,
    events: Vec<SwapEvent>,
    residency: Vec<ResidencyState>,
    dma: u128,
    per_cell: Ratio<u128>,
    pairwise_per_cell: Ratio<u128>,
}

/// Orders labels by lifetime end, latest first, ties by label.
fn by_life<'a>(
    labels: impl Iterator<Item = &'a String>,
    end: &BTreeMap<String, usize>,
) -> Vec<String> {
    let mut v: Vec<String> = labels.cloned().collect();
    v.sort_by(|a, b| end[b].cmp(&end[a]).then(a.cmp(b)));
    v
}

fn walk(
    s: &LinearSchedule,
    p: &ArrayParams,
    cooperate: bool,
    lookahead: Option<usize>,
) -> Result<Walk> {
    p.validate()?;
    if s.stems.is_empty() {
        return Err(TncError::MalformedSchedule("schedule has no stem".into()));
    }
    let end: BTreeMap<String, usize> = compute_lifetimes(s)
        .into_iter()
        .map(|(l, lt)| (l, lt.end))
        .collect();
    let cap = if cooperate {
        p.coop_rank_cap
    } else {
        p.intra_rank_cap
    };
    let eb = p.element_bytes;
    let mut w = Walk {
        sections: Vec::new(),
        events: Vec::new(),
        residency: Vec::new(),
        dma: 0,
        per_cell: Ratio::from_integer(0),
        pairwise_per_cell: Ratio::from_integer(0),
    };
    for stem in 0..s.stems.len() {
        let steps = stem_steps(s, stem);
        // stem position at which each label is summed
        let summed_at: BTreeMap<&str, usize> = steps
            .iter()
            .enumerate()
            .flat_map(|(k, st)| st.contracted.iter().map(move |l| (l.as_str(), k)))
            .collect();
        let fits = |st: &StemStep| rank(&st.operand).max(rank(&st.result)) <= cap;
        let mut k = 0;
        while k < steps.len() {
            let lo = k;
            if fits(&steps[k]) {
                while k < steps.len() && fits(&steps[k]) {
                    k += 1;
                }
            } else {
                k += 1;
            }
            let sec = &steps[lo..k];
            w.dma += bytes(&sec[0].operand, eb) + bytes(&sec[sec.len() - 1].result, eb);
            w.sections.push(FusedSection {
                stem,
                start: sec[0].id,
                end: sec[sec.len() - 1].id,
                length: sec.len(),
            });
            let spills = sec
                .iter()
                .any(|st| rank(&st.operand).max(rank(&st.result)) > p.intra_rank_cap);
            if cooperate && fits(&sec[0]) && spills {
                residency_walk(&mut w, sec, lo, &summed_at, &end, p, lookahead);
            }
        }
    }
    Ok(w)
}

fn residency_walk(
    w: &mut Walk,
    sec: &[StemStep],
    offset: usize,
    summed_at: &BTreeMap<&str, usize>,
    end: &BTreeMap<String, usize>,
    p: &ArrayParams,
    lookahead: Option<usize>,
) {
    let dims: BTreeMap<String, usize> = sec
        .iter()
        .flat_map(|st| st.operand.iter().chain(&st.result))
        .map(|i| (i.label.clone(), i.dim))
        .collect();
    let legs: Vec<String> = sec[0]
        .operand
        .iter()
        .filter(|i| i.dim > 1)
        .map(|i| i.label.clone())
        .collect();
    let ordered = by_life(legs.iter(), end);
    let n_inter = p.inter_slots().min(ordered.len());
    let mut inter: BTreeSet<String> = ordered[..n_inter].iter().cloned().collect();
    let mut intra: BTreeSet<String> = ordered[n_inter..].iter().cloned().collect();
    let block = |intra: &BTreeSet<String>| -> u128 {
        intra.iter().map(|l| dims[l] as u128).product::<u128>() * p.element_bytes as u128
    };
    for (k, st) in sec.iter().enumerate() {
        let pos = offset + k;
        let mut pending: Vec<String> = st.contracted.intersection(&inter).cloned().collect();
        if let (Some(l), false) = (lookahead, pending.is_empty()) {
            let mut ahead: Vec<(usize, String)> = inter
                .iter()
                .filter(|x| !st.contracted.contains(*x))
                .filter_map(|x| summed_at.get(x.as_str()).map(|&q| (q, x.clone())))
                .filter(|(q, _)| *q > pos && *q <= pos + l && *q < offset + sec.len())
                .collect();
            ahead.sort();
            pending.extend(ahead.into_iter().map(|(_, x)| x));
        }
        if !pending.is_empty() {
            let candidates: Vec<String> = intra
                .iter()
                .filter(|x| !st.contracted.contains(*x))
                .cloned()
                .collect();
            let victims = by_life(candidates.iter(), end);
            let b = block(&intra);
            let groups: Vec<Vec<String>> = match lookahead {
                None => pending.iter().map(|x| vec![x.clone()]).collect(),
                Some(_) => vec![pending.clone()],
            };
            let mut vi = victims.into_iter();
            for g in groups {
                let n = g.len() as u32;
                for x in &g {
                    inter.remove(x);
                    intra.insert(x.clone());
                    if let Some(v) = vi.next() {
                        intra.remove(&v);
                        inter.insert(v);
                    }
                }
                let half = Ratio::new(b, 2);
                w.pairwise_per_cell += half * n as u128;
                w.per_cell += Ratio::new(b * ((1u128 << n) - 1), 1u128 << n);
                w.events.push(SwapEvent {
                    step: st.id,
                    indices: g,
                    group_cells: 1 << n,
                });
            }
        }
        for c in &st.contracted {
            intra.remove(c);
            inter.remove(c);
        }
        for r in st.result.iter().filter(|i| i.dim > 1) {
            if !inter.contains(&r.label) {
                intra.insert(r.label.clone());
            }
        }
        w.residency.push(ResidencyState {
            step: st.id,
            intra: intra.iter().cloned().collect(),
            inter: inter.iter().cloned().collect(),
        });
    }
}

/// Walks every stem step and reports fused sections and traffic.
///
/// A step fits when both its stem operand and its result fit the active cap.
/// Consecutive fitting steps form one section; every other step is a section
/// of its own. Sections are charged one load of the incoming stem tensor and
/// one store of the outgoing one.
pub fn simulate_fusion(
    s: &LinearSchedule,
    p: &ArrayParams,
    cooperate: bool,
) -> Result<TrafficReport> {
    let w = walk(s, p, cooperate, None)?;
    let steps: usize = w.sections.iter().map(|x| x.length).sum();
    let rma_total = w.per_cell * p.cells as u128;
    Ok(TrafficReport {
        cooperate,
        dma_bytes: w.dma,
        rma_bytes: rma_total.to_integer(),
        rma_bytes_per_cell: w.per_cell,
        swap_events: w.events,
        memory_accesses: 2 * w.sections.len() as u128,
        baseline_accesses: 2 * steps as u128,
        fused_sections: w.sections,
        residency: w.residency,
        estimated_dma_seconds: p.dma_bandwidth.map(|bw| w.dma as f64 / bw),
        estimated_rma_seconds: p.rma_bandwidth.map(|bw| rma_total.to_integer() as f64 / bw),
    })
}

/// Cooperate-mode swaps with look-ahead batching.
///
/// `None` swaps one pair at a time. `Some(l)` takes every swap a step needs,
/// plus inter legs summed within the next `l` stem steps of the same section,
/// as one group exchange.
pub fn plan_batch_swaps(
    s: &LinearSchedule,
    p: &ArrayParams,
    lookahead: Option<usize>,
) -> Result<BatchPlan> {
    let w = walk(s, p, true, lookahead)?;
    Ok(BatchPlan {
        events: w.events,
        per_cell_bytes: w.per_cell,
        pairwise_per_cell_bytes: w.pairwise_per_cell,
    })
}

/// Traffic of `n` one-by-one swaps over one batched swap of `n` legs:
/// `n * 2^(n-1) / (2^n - 1)`.
pub fn batch_swap_ratio(n: u32) -> Result<Ratio<u128>> {
    if n == 0 || n > 100 {
        return Err(TncError::InvalidParameter(format!(
            "batch size {n} outside 1..=100"
        )));
    }
    Ok(Ratio::new(n as u128 * (1u128 << (n - 1)), (1u128 << n) - 1))
}

/// Probability that at least one of `n` independent parts fails.
pub fn failure_rate(n: u64, per_part: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&per_part) {
        return Err(TncError::InvalidParameter(format!(
            "probability {per_part} outside [0, 1]"
        )));
    }
    if n == 0 || per_part == 0.0 {
        return Ok(0.0);
    }
    Ok(-(n as f64 * (-per_part).ln_1p()).exp_m1())
}
