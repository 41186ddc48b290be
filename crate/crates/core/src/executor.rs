//! Direct, sliced and reuse execution with exact counters.
//!
//! Every run walks a [`LinearSchedule`] and counts `M * K * N` multiplies per
//! pairwise contraction, which equals the step cost of the tree with sliced
//! labels at dim 1. Live bytes cover intermediates, the step output,
//! checkpoint snapshots and partial buffers; leaf tensors are inputs and are
//! not counted.
//!
//! Sliced runs keep one partial per subtask in assignment order (the first
//! label is the most significant digit) and sum them with a fixed two-level
//! reduction, so the value only depends on the group size.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex;
use num_traits::Zero;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};
use crate::network::TensorNetwork;
use crate::par;
use crate::reuse::{ReuseAction, ReuseSchedule};
use crate::schedule::{linearize, LinearSchedule, Operand};
use crate::slicer::SliceSpec;
use crate::tensor::{cast_complex, contract_pair, DenseTensor, Index, Precision, Real};
use crate::tree::ContractionTree;

/// Environment variable read when no worker count is given.
pub const WORKERS_ENV: &str = "TNC_WORKERS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub multiplies: u128,
    pub bytes_peak: u128,
    /// Operand loads plus result stores, per step.
    pub bytes_moved: u128,
    /// Seconds.
    pub wall_time: f64,
    pub subtasks_done: u128,
}

impl RunStats {
    fn absorb(&mut self, c: &Counters) {
        self.multiplies += c.multiplies;
        self.bytes_peak = self.bytes_peak.max(c.peak);
        self.bytes_moved += c.moved;
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub group_size: usize,
    /// Fails a step whose output would exceed this many elements.
    pub max_intermediate_elements: Option<usize>,
    /// Fails a checkpoint larger than this many bytes.
    pub checkpoint_budget_bytes: Option<u128>,
    /// Writes per-subtask partials here and reduces from the file.
    pub spill: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            group_size: 256,
            max_intermediate_elements: None,
            checkpoint_budget_bytes: None,
            spill: None,
        }
    }
}

/// Worker count from an explicit value, then the environment, then the machine.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T: Real> {
    pub value: Complex<T>,
    pub stats: RunStats,
    /// One value per subtask in assignment order.
    pub partials: Vec<Complex<T>>,
}

#[derive(Debug, Default, Clone)]
struct Counters {
    multiplies: u128,
    live: u128,
    peak: u128,
    moved: u128,
}

impl Counters {
    fn bump(&mut self, extra: u128) {
        self.peak = self.peak.max(self.live + extra);
    }
}

type Frontier<T> = BTreeMap<usize, DenseTensor<T>>;

fn frontier_bytes<T: Real>(f: &Frontier<T>) -> u128 {
    f.values().map(|t| t.byte_size() as u128).sum()
}

struct Engine<'a, T: Real> {
    net: &'a TensorNetwork<T>,
    s: &'a LinearSchedule,
    guard: Option<usize>,
    c: Counters,
}

impl<'a, T: Real> Engine<'a, T> {
    fn new(net: &'a TensorNetwork<T>, s: &'a LinearSchedule, opts: &RunOptions) -> Self {
        Engine {
            net,
            s,
            guard: opts.max_intermediate_elements,
            c: Counters::default(),
        }
    }

    fn leaf(&self, i: usize, asg: &[(String, usize)]) -> Result<DenseTensor<T>> {
        let mut t = self.net.tensors()[i].clone();
        for (l, v) in asg {
            if t.position(l).is_some() {
                t = t.project(l, *v)?;
            }
        }
        Ok(t)
    }

    fn operand(
        &mut self,
        f: &mut Frontier<T>,
        op: Operand,
        asg: &[(String, usize)],
    ) -> Result<(DenseTensor<T>, bool)> {
        match op {
            Operand::Leaf(i) => Ok((self.leaf(i, asg)?, false)),
            Operand::Step(p) => {
                let node = self.s.steps[p].node;
                f.remove(&node)
                    .map(|t| (t, true))
                    .ok_or_else(|| TncError::MalformedSchedule(format!("node {node} is not live")))
            }
        }
    }

    fn run(
        &mut self,
        f: &mut Frontier<T>,
        from: usize,
        to: usize,
        asg: &[(String, usize)],
    ) -> Result<()> {
        for i in from..to {
            let st = &self.s.steps[i];
            let (x, x_live) = self.operand(f, st.lhs, asg)?;
            let (y, y_live) = self.operand(f, st.rhs, asg)?;
            let out_elems: usize = x
                .indices()
                .iter()
                .chain(y.indices())
                .filter(|ix| x.position(&ix.label).is_none() || y.position(&ix.label).is_none())
                .map(|ix| ix.dim)
                .product();
            if let Some(cap) = self.guard {
                if out_elems > cap {
                    return Err(TncError::OutOfMemory {
                        step: i,
                        elements: out_elems,
                        cap,
                    });
                }
            }
            let (r, shape) = contract_pair(&x, &y)?;
            let out = r.byte_size() as u128;
            self.c.multiplies += shape.multiplies();
            self.c.moved += (x.byte_size() + y.byte_size()) as u128 + out;
            self.c.bump(out);
            for (t, live) in [(&x, x_live), (&y, y_live)] {
                if live {
                    self.c.live -= t.byte_size() as u128;
                }
            }
            self.c.live += out;
            f.insert(st.node, r);
        }
        Ok(())
    }

    fn finish(&self, mut f: Frontier<T>) -> Result<Complex<T>> {
        let root = self.s.tree().root();
        let t = if self.s.is_empty() {
            self.net.tensors()[root].clone()
        } else {
            f.remove(&root)
                .ok_or_else(|| TncError::MalformedSchedule("root was not computed".into()))?
        };
        if !f.is_empty() {
            return Err(TncError::MalformedSchedule(format!(
                "{} intermediates left over",
                f.len()
            )));
        }
        if t.indices().iter().any(|i| i.dim > 1) {
            return Err(TncError::InvalidNetwork("network has open indices".into()));
        }
        Ok(t.data()[0])
    }
}

fn check_match<T: Real>(net: &TensorNetwork<T>, t: &ContractionTree) -> Result<()> {
    if net.structure() != t.leaf_structure() {
        return Err(TncError::InvalidTree(
            "tree leaves do not match the network".into(),
        ));
    }
    Ok(())
}

fn run_plain<T: Real>(
    net: &TensorNetwork<T>,
    s: &LinearSchedule,
    opts: &RunOptions,
) -> Result<(Complex<T>, Counters)> {
    let mut e = Engine::new(net, s, opts);
    let mut f = Frontier::new();
    e.run(&mut f, 0, s.len(), &[])?;
    let v = e.finish(f)?;
    Ok((v, e.c))
}

/// Contracts the whole network along `t`.
pub fn run_direct<T: Real>(
    net: &TensorNetwork<T>,
    t: &ContractionTree,
    opts: &RunOptions,
) -> Result<(Complex<T>, RunStats)> {
    check_match(net, t)?;
    let start = Instant::now();
    let (v, c) = run_plain(net, &linearize(t), opts)?;
    let mut stats = RunStats {
        subtasks_done: 1,
        ..RunStats::default()
    };
    stats.absorb(&c);
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok((v, stats))
}

/// Values of `indices` for subtask `n`, first index most significant.
pub fn decode_assignment(indices: &[Index], mut n: u128) -> Vec<(String, usize)> {
    let mut out = vec![(String::new(), 0); indices.len()];
    for (k, ix) in indices.iter().enumerate().rev() {
        out[k] = (ix.label.clone(), (n % ix.dim as u128) as usize);
        n /= ix.dim as u128;
    }
    out
}

fn subtask_count(indices: &[Index]) -> Result<usize> {
    let n: u128 = indices.iter().map(|i| i.dim as u128).product();
    usize::try_from(n).map_err(|_| TncError::InvalidParameter(format!("{n} subtasks")))
}

fn settle<T: Real>(
    partials: Vec<Complex<T>>,
    opts: &RunOptions,
) -> Result<(Complex<T>, Vec<Complex<T>>)> {
    let topo = ReductionTopology::new(opts.group_size)?;
    let partials = match &opts.spill {
        Some(path) => {
            write_partials(path, &partials)?;
            read_partials(path)?
                .into_iter()
                .map(|(_, c)| cast_complex(c))
                .collect()
        }
        None => partials,
    };
    Ok((hierarchical_reduce(&partials, &topo), partials))
}

/// Sums the contraction over every assignment of the sliced indices.
pub fn run_sliced<T: Real>(
    net: &TensorNetwork<T>,
    t: &ContractionTree,
    spec: &SliceSpec,
    opts: &RunOptions,
) -> Result<RunOutcome<T>> {
    check_match(net, t)?;
    let start = Instant::now();
    let s = linearize(t);
    let indices: Vec<Index> = spec.entries.iter().map(|e| e.index.clone()).collect();
    let n = subtask_count(&indices)?;
    let results = par::with_workers(opts.workers, || {
        par::map_range(n, |k| {
            let sub = net.project(&decode_assignment(&indices, k as u128))?;
            run_plain(&sub, &s, opts)
        })
    });
    let mut stats = RunStats::default();
    let mut partials = Vec::with_capacity(n);
    for r in results {
        let (v, c) = r?;
        stats.absorb(&c);
        partials.push(v);
    }
    stats.subtasks_done = n as u128;
    let (value, partials) = settle(partials, opts)?;
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok(RunOutcome {
        value,
        stats,
        partials,
    })
}

/// Runs the spindle for one outer assignment.
fn run_spindle<T: Real>(
    net: &TensorNetwork<T>,
    s: &LinearSchedule,
    rs: &ReuseSchedule,
    opts: &RunOptions,
) -> Result<(Complex<T>, Counters)> {
    let mut e = Engine::new(net, s, opts);
    let k = rs.nested_slices.len();
    let mut f: Frontier<T> = Frontier::new();
    let mut snaps: Vec<Option<(Frontier<T>, u128)>> = vec![None; k];
    let mut bufs: Vec<Option<DenseTensor<T>>> = vec![None; k];
    let dead = |id: usize| TncError::MalformedSchedule(format!("buffer {id} is not live"));
    for (i, a) in rs.actions.iter().enumerate() {
        match a {
            ReuseAction::Run {
                from,
                to,
                assignment,
            } => e.run(&mut f, *from, *to, assignment)?,
            ReuseAction::Checkpoint { id } => {
                let bytes = frontier_bytes(&f);
                if let Some(budget) = opts.checkpoint_budget_bytes {
                    if bytes > budget {
                        return Err(TncError::CheckpointOverflow {
                            label: rs.nested_slices[*id].index.label.clone(),
                            bytes: bytes.min(u64::MAX as u128) as u64,
                            budget: budget.min(u64::MAX as u128) as u64,
                        });
                    }
                }
                e.c.live += bytes;
                e.c.bump(0);
                snaps[*id] = Some((f.clone(), bytes));
            }
            ReuseAction::Restore { id } => {
                e.c.live -= frontier_bytes(&f);
                // a restore followed by a free hands over the snapshot itself
                let last =
                    matches!(rs.actions.get(i + 1), Some(ReuseAction::Free { id: x }) if x == id);
                let snap = if last {
                    snaps[*id].take()
                } else {
                    snaps[*id].clone()
                };
                let (copy, bytes) = snap.ok_or_else(|| dead(*id))?;
                if !last {
                    e.c.live += bytes;
                    e.c.bump(0);
                }
                f = copy;
            }
            ReuseAction::Free { id } => {
                if let Some((_, bytes)) = snaps[*id].take() {
                    e.c.live -= bytes;
                }
            }
            ReuseAction::StorePartial { id, node } => {
                let t = f.remove(node).ok_or_else(|| dead(*id))?;
                match &mut bufs[*id] {
                    Some(b) => {
                        b.add_assign(&t)?;
                        e.c.live -= t.byte_size() as u128;
                    }
                    slot => *slot = Some(t),
                }
            }
            ReuseAction::Merge { id, node, .. } => {
                let b = bufs[*id].take().ok_or_else(|| dead(*id))?;
                f.insert(*node, b);
            }
        }
    }
    let v = e.finish(f)?;
    Ok((v, e.c))
}

/// Executes a reuse schedule: outer assignments are split into contiguous
/// blocks, one per worker, and each worker runs its spindles in order.
pub fn run_reuse<T: Real>(
    net: &TensorNetwork<T>,
    s: &LinearSchedule,
    rs: &ReuseSchedule,
    opts: &RunOptions,
) -> Result<RunOutcome<T>> {
    check_match(net, s.tree())?;
    if rs.n_steps != s.len() {
        return Err(TncError::MalformedSchedule(
            "reuse schedule is for another plan".into(),
        ));
    }
    let start = Instant::now();
    let outer: Vec<Index> = rs.outer_slices.iter().map(|e| e.index.clone()).collect();
    let n = subtask_count(&outer)?;
    let workers = opts.workers.clamp(1, n.max(1));
    let blocks: Vec<(usize, usize)> = (0..workers)
        .map(|w| (w * n / workers, (w + 1) * n / workers))
        .collect();
    let results = par::with_workers(workers, || {
        par::map(&blocks, |&(lo, hi)| {
            (lo..hi)
                .map(|k| {
                    let sub = net.project(&decode_assignment(&outer, k as u128))?;
                    run_spindle(&sub, s, rs, opts)
                })
                .collect::<Result<Vec<_>>>()
        })
    });
    let mut stats = RunStats::default();
    let mut partials = Vec::with_capacity(n);
    for block in results {
        for (v, c) in block? {
            stats.absorb(&c);
            partials.push(v);
        }
    }
    stats.subtasks_done = n as u128;
    let (value, partials) = settle(partials, opts)?;
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok(RunOutcome {
        value,
        stats,
        partials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionTopology {
    pub group_size: usize,
}

impl ReductionTopology {
    pub fn new(group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(TncError::InvalidParameter(
                "group size must be at least 1".into(),
            ));
        }
        Ok(ReductionTopology { group_size })
    }

    /// Partials per first-level group.
    pub fn levels(&self, n: usize) -> Vec<usize> {
        (0..n)
            .step_by(self.group_size)
            .map(|lo| (n - lo).min(self.group_size))
            .collect()
    }
}

/// Left-folds each group of `group_size` partials, then left-folds the group sums.
pub fn hierarchical_reduce<T: Real>(
    partials: &[Complex<T>],
    topo: &ReductionTopology,
) -> Complex<T> {
    partials
        .chunks(topo.group_size.max(1))
        .map(|g| g.iter().fold(Complex::zero(), |acc, &x| acc + x))
        .fold(Complex::zero(), |acc, x| acc + x)
}

/// Fraction of `trials` in which at least one of `n` partials failed, each
/// failing independently with probability `p`.
pub fn simulate_failure_rate(n: usize, p: f64, trials: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TncError::InvalidParameter(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failed = (0..trials)
        .filter(|_| (0..n).any(|_| rng.gen_bool(p)))
        .count();
    Ok(failed as f64 / trials.max(1) as f64)
}

/// Default relative tolerance for comparing values at a precision.
pub fn default_tolerance(p: Precision) -> f64 {
    match p {
        Precision::Single => 1e-5,
        Precision::Double => 1e-10,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySample {
    pub subtask: u64,
    pub recorded: [f64; 2],
    pub recomputed: [f64; 2],
    pub deviation: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub samples: Vec<VerifySample>,
    pub flagged: Vec<u64>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Recomputes `sample_count` random subtasks without reuse and compares them
/// with the recorded partials.
///
/// `indices` define the subtask numbering of `partials`. Deviation is
/// `|recorded - recomputed| / max(|recomputed|, m)` where `m` is the largest
/// recomputed magnitude in the sample; non-finite values always fail.
#[allow(clippy::too_many_arguments)]
pub fn replay_verify<T: Real>(
    net: &TensorNetwork<T>,
    t: &ContractionTree,
    indices: &[Index],
    partials: &[Complex<T>],
    sample_count: usize,
    seed: u64,
    tolerance: f64,
) -> Result<VerifyReport> {
    check_match(net, t)?;
    let n = subtask_count(indices)?;
    if partials.len() != n {
        return Err(TncError::InvalidParameter(format!(
            "{} partials for {n} subtasks",
            partials.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, n, sample_count.min(n)).into_vec();
    picks.sort_unstable();
    let s = linearize(t);
    let opts = RunOptions::default();
    let fresh = par::map(&picks, |&k| -> Result<Complex<T>> {
        let sub = net.project(&decode_assignment(indices, k as u128))?;
        Ok(run_plain(&sub, &s, &opts)?.0)
    });
    let fresh = fresh.into_iter().collect::<Result<Vec<_>>>()?;
    let scale = fresh
        .iter()
        .map(|c| c.norm().as_f64())
        .fold(f64::MIN_POSITIVE, f64::max);
    let mut report = VerifyReport {
        samples: Vec::new(),
        flagged: Vec::new(),
        max_deviation: 0.0,
        tolerance,
        passed: true,
    };
    for (&k, b) in picks.iter().zip(&fresh) {
        let a = partials[k];
        let (a, b) = (cast_complex::<T, f64>(a), cast_complex::<T, f64>(*b));
        let dev = if a.is_finite() && b.is_finite() {
            (a - b).norm() / b.norm().max(scale)
        } else {
            f64::INFINITY
        };
        let ok = dev <= tolerance;
        if !ok {
            report.flagged.push(k as u64);
            report.passed = false;
        }
        report.max_deviation = report.max_deviation.max(dev);
        report.samples.push(VerifySample {
            subtask: k as u64,
            recorded: [a.re, a.im],
            recomputed: [b.re, b.im],
            deviation: dev,
            ok,
        });
    }
    Ok(report)
}

/// Writes partials as little-endian records `(u64 subtask, f64 re, f64 im)`.
pub fn write_partials<T: Real>(path: &Path, partials: &[Complex<T>]) -> Result<()> {
    let mut buf = Vec::with_capacity(partials.len() * 24);
    for (k, c) in partials.iter().enumerate() {
        buf.extend_from_slice(&(k as u64).to_le_bytes());
        buf.extend_from_slice(&c.re.as_f64().to_le_bytes());
        buf.extend_from_slice(&c.im.as_f64().to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_partials(path: &Path) -> Result<Vec<(u64, Complex<f64>)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() % 24 != 0 {
        return Err(TncError::Format(format!(
            "spill file length {} is not a multiple of 24",
            buf.len()
        )));
    }
    let word = |r: &[u8]| <[u8; 8]>::try_from(r).unwrap();
    Ok(buf
        .chunks_exact(24)
        .map(|r| {
            (
                u64::from_le_bytes(word(&r[..8])),
                Complex::new(
                    f64::from_le_bytes(word(&r[8..16])),
                    f64::from_le_bytes(word(&r[16..])),
                ),
            )
        })
        .collect())
}
