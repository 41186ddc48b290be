use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use tnc_core::circuit::{circuit_to_network, parse_circuit};
use tnc_core::cost::{plan_batch_swaps, simulate_fusion, ArrayParams};
use tnc_core::executor::{
    default_tolerance, replay_verify, resolve_workers, run_reuse, run_sliced, RunOptions,
    RunOutcome,
};
use tnc_core::io::{
    overhead_csv, slice_spec_from_json, slice_spec_to_json, tensor_from_json, traffic_csv,
    tree_from_json,
};
use tnc_core::network::TensorNetwork;
use tnc_core::reuse::{
    choose_reuse_subset, interpret, overhead_table, plan_spindle, tune_memory, InterpretStats,
    MemoryBudget, ReusePlanReport, ReuseSchedule, TuneReport,
};
use tnc_core::schedule::{linearize, LinearSchedule};
use tnc_core::slicer::{select_slices, sliced_max_rank, total_overhead, SliceSpec};
use tnc_core::tensor::{Index, Precision, Real};
use tnc_core::tree::{greedy_path, tree_metrics, ContractionTree};

use crate::args::{Command, Job};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Config,
    Planning,
    Execution,
    Verification,
}

#[derive(Debug)]
pub struct Failure {
    kind: Kind,
    stage: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: Kind, stage: &'static str, e: impl fmt::Display) -> Self {
        Failure {
            kind,
            stage,
            message: e.to_string(),
        }
    }

    pub fn config(stage: &'static str, e: impl fmt::Display) -> Self {
        Self::new(Kind::Config, stage, e)
    }

    fn plan(stage: &'static str, e: impl fmt::Display) -> Self {
        Self::new(Kind::Planning, stage, e)
    }

    fn exec(stage: &'static str, e: impl fmt::Display) -> Self {
        Self::new(Kind::Execution, stage, e)
    }

    pub fn verify(message: String) -> Self {
        Self::new(Kind::Verification, "verify", message)
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Execution => 1,
            Kind::Config => 2,
            Kind::Planning => 3,
            Kind::Verification => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

pub struct Output {
    pub json: Value,
    pub csv: String,
    /// Set when the report was produced but replay verification failed.
    pub verification_error: Option<String>,
}

impl Output {
    fn ok(json: Value, csv: String) -> Self {
        Output {
            json,
            csv,
            verification_error: None,
        }
    }
}

struct Input<T: Real> {
    net: TensorNetwork<T>,
    qubits: Option<usize>,
    bitstring: Option<String>,
}

fn read(path: &Path, stage: &'static str) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::config(stage, format!("{}: {e}", path.display())))
}

fn ingest<T: Real>(job: &Job) -> Result<Input<T>, Failure> {
    match (&job.circuit, &job.network) {
        (Some(p), _) => {
            let c = parse_circuit(&read(p, "ingest")?).map_err(|e| Failure::config("ingest", e))?;
            let bits = job
                .bitstring
                .clone()
                .unwrap_or_else(|| "0".repeat(c.n_qubits));
            let net =
                circuit_to_network::<T>(&c, &bits).map_err(|e| Failure::config("ingest", e))?;
            Ok(Input {
                net,
                qubits: Some(c.n_qubits),
                bitstring: Some(bits),
            })
        }
        (None, Some(p)) => {
            if job.bitstring.is_some() {
                return Err(Failure::config(
                    "ingest",
                    "--bitstring applies to --circuit input only",
                ));
            }
            let items: Vec<Value> = serde_json::from_str(&read(p, "ingest")?)
                .map_err(|e| Failure::config("ingest", e))?;
            let tensors = items
                .iter()
                .map(|v| tensor_from_json::<T>(&v.to_string()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::config("ingest", e))?;
            let net = TensorNetwork::new(tensors).map_err(|e| Failure::config("ingest", e))?;
            Ok(Input {
                net,
                qubits: None,
                bitstring: None,
            })
        }
        (None, None) => Err(Failure::config(
            "ingest",
            "one of --circuit or --network is required",
        )),
    }
}

fn build_tree<T: Real>(job: &Job, net: &TensorNetwork<T>) -> Result<ContractionTree, Failure> {
    let leaves = net.structure();
    match &job.tree {
        Some(p) => {
            tree_from_json(&read(p, "tree")?, &leaves).map_err(|e| Failure::config("tree", e))
        }
        None => greedy_path(&leaves, job.seed).map_err(|e| Failure::plan("tree", e)),
    }
}

fn slice_spec(job: &Job, s: &LinearSchedule) -> Result<SliceSpec, Failure> {
    if let Some(p) = &job.slices {
        let v: Value =
            serde_json::from_str(&read(p, "slice")?).map_err(|e| Failure::config("slice", e))?;
        let rows = v.get("slices").cloned().unwrap_or(v);
        return slice_spec_from_json(s, &rows.to_string()).map_err(|e| Failure::config("slice", e));
    }
    match job.max_rank {
        Some(cap) => select_slices(s.tree(), cap, job.slice_budget, job.seed)
            .map_err(|e| Failure::plan("slice", e)),
        None => Ok(SliceSpec::empty()),
    }
}

fn budget(job: &Job, p: Precision) -> MemoryBudget {
    MemoryBudget::new(job.mem_budget_bytes.map_or(u128::MAX, u128::from), p)
}

fn ratio_value(r: &num_rational::Ratio<u128>) -> Value {
    json!({ "exact": r.to_string(), "value": *r.numer() as f64 / *r.denom() as f64 })
}

fn slice_records(spec: &SliceSpec) -> Result<Value, Failure> {
    let text = slice_spec_to_json(spec).map_err(|e| Failure::plan("slice", e))?;
    serde_json::from_str(&text).map_err(|e| Failure::plan("slice", e))
}

struct ReusePlan {
    schedule: LinearSchedule,
    spec: SliceSpec,
    ranking: Vec<(String, num_rational::Ratio<u128>)>,
    chosen: Vec<String>,
    tune: TuneReport,
    actions: ReuseSchedule,
    report: ReusePlanReport,
    interp: InterpretStats,
}

fn plan_reuse(
    job: &Job,
    s: &LinearSchedule,
    spec: &SliceSpec,
    budget: &MemoryBudget,
) -> Result<ReusePlan, Failure> {
    let choice = choose_reuse_subset(s, spec, budget, job.reuse_max_k)
        .map_err(|e| Failure::plan("reuse", e))?;
    let (tuned, tune) = tune_memory(&choice.schedule, &choice.spec, budget)
        .map_err(|e| Failure::plan("tune", e))?;
    let (actions, report) =
        plan_spindle(&choice.schedule, &tuned, budget).map_err(|e| Failure::plan("reuse", e))?;
    let interp = interpret(&actions).map_err(|e| Failure::plan("reuse", e))?;
    Ok(ReusePlan {
        schedule: choice.schedule,
        spec: tuned,
        ranking: choice.ranking,
        chosen: choice.chosen,
        tune,
        actions,
        report,
        interp,
    })
}

fn reuse_json(p: &ReusePlan) -> Result<Value, Failure> {
    let ranking: Vec<Value> = p
        .ranking
        .iter()
        .map(|(l, o)| json!({ "label": l, "overhead": ratio_value(o) }))
        .collect();
    Ok(json!({
        "ranking": ranking,
        "chosen": p.chosen,
        "reused": p.actions.nested_slices.iter().map(|e| e.index.label.clone()).collect::<Vec<_>>(),
        "tune": p.tune,
        "plan": p.report,
        "interpreter": p.interp,
        "slices": slice_records(&p.spec)?,
    }))
}

pub fn dispatch(cmd: &Command) -> Result<Output, Failure> {
    let job = cmd.job();
    if job.group_size == 0 {
        return Err(Failure::config("config", "--group-size must be at least 1"));
    }
    if job.workers == Some(0) {
        return Err(Failure::config("config", "--workers must be at least 1"));
    }
    match Precision::from(job.precision) {
        Precision::Single => dispatch_as::<f32>(cmd, job),
        Precision::Double => dispatch_as::<f64>(cmd, job),
    }
}

fn dispatch_as<T: Real>(cmd: &Command, job: &Job) -> Result<Output, Failure> {
    let input = ingest::<T>(job)?;
    let tree = build_tree(job, &input.net)?;
    match cmd {
        Command::Plan(_) => plan_cmd(&tree),
        Command::Slice(_) => slice_cmd(job, &tree),
        Command::ReusePlan(_) => reuse_cmd::<T>(job, &tree),
        Command::Cost(_) => cost_cmd::<T>(job, &tree),
        Command::PermStats(_) => perm_cmd(&tree),
        Command::Run(_) => execute(job, &input, &tree, false),
        Command::Verify(_) => execute(job, &input, &tree, true),
    }
}

fn plan_cmd(t: &ContractionTree) -> Result<Output, Failure> {
    let s = linearize(t);
    let m = tree_metrics(t);
    let stems: Vec<Value> = s
        .stems
        .iter()
        .map(|st| json!({ "steps": st.steps, "cost": st.cost }))
        .collect();
    let mut csv = String::from("step,node,cost,rank,size,stem\n");
    let on_stem = &s.stem_flags;
    for (k, st) in s.steps.iter().enumerate() {
        let n = t.node(st.node);
        csv.push_str(&format!(
            "{k},{},{},{},{},{}\n",
            st.node,
            st.cost,
            n.rank(),
            n.size(),
            on_stem[k]
        ));
    }
    let json = json!({
        "command": "plan",
        "ssa_path": t.ssa_path(),
        "total_cost": m.total_cost,
        "max_rank": m.max_rank,
        "peak_memory_elements": m.peak_memory_elements,
        "steps": s.len(),
        "stems": stems,
        "multi_stem": s.multi_stem,
        "per_step": m.per_step,
    });
    Ok(Output::ok(json, csv))
}

fn slice_cmd(job: &Job, t: &ContractionTree) -> Result<Output, Failure> {
    let s = linearize(t);
    let spec = slice_spec(job, &s)?;
    let labels = spec.labels();
    let table = overhead_table(t, &spec).map_err(|e| Failure::plan("slice", e))?;
    let rows: Vec<(String, num_rational::Ratio<u128>)> =
        labels.iter().map(|l| (l.clone(), table[l])).collect();
    let overheads: Vec<Value> = rows
        .iter()
        .map(|(l, o)| json!({ "label": l, "overhead": ratio_value(o) }))
        .collect();
    let json = json!({
        "command": "slice",
        "max_rank": job.max_rank,
        "slices": slice_records(&spec)?,
        "overheads": overheads,
        "total_overhead": ratio_value(&total_overhead(t, &labels)),
        "sliced_max_rank": sliced_max_rank(t, &labels),
        "subtasks": spec.subtask_count() as u64,
    });
    Ok(Output::ok(json, overhead_csv(&rows)))
}

fn reuse_cmd<T: Real>(job: &Job, t: &ContractionTree) -> Result<Output, Failure> {
    let s = linearize(t);
    let spec = slice_spec(job, &s)?;
    let plan = plan_reuse(job, &s, &spec, &budget(job, T::PRECISION))?;
    let mut csv = String::from("label,overhead,overhead_value,reused\n");
    let reused: Vec<&str> = plan
        .actions
        .nested_slices
        .iter()
        .map(|e| e.index.label.as_str())
        .collect();
    for (l, o) in &plan.ranking {
        let v = *o.numer() as f64 / *o.denom() as f64;
        csv.push_str(&format!(
            "{l},{o},{v:.6},{}\n",
            reused.contains(&l.as_str())
        ));
    }
    let mut json = reuse_json(&plan)?;
    json["command"] = json!("reuse-plan");
    json["actions"] =
        serde_json::to_value(&plan.actions.actions).map_err(|e| Failure::plan("reuse", e))?;
    Ok(Output::ok(json, csv))
}

fn cost_cmd<T: Real>(job: &Job, t: &ContractionTree) -> Result<Output, Failure> {
    let spec = slice_spec(job, &linearize(t))?;
    let s = linearize(&t.sliced(&spec.labels()));
    let mut p = ArrayParams::new(job.cells, job.intra_rank_cap, T::PRECISION.element_bytes())
        .map_err(|e| Failure::config("cost", e))?;
    p.rma_bandwidth = None;
    let solo = simulate_fusion(&s, &p, false).map_err(|e| Failure::plan("cost", e))?;
    let coop = simulate_fusion(&s, &p, true).map_err(|e| Failure::plan("cost", e))?;
    let batch = plan_batch_swaps(&s, &p, job.lookahead).map_err(|e| Failure::plan("cost", e))?;
    let reduction = num_rational::Ratio::new(
        solo.memory_accesses - coop.memory_accesses.min(solo.memory_accesses),
        solo.memory_accesses.max(1),
    );
    let json = json!({
        "command": "cost",
        "params": p,
        "solo": solo,
        "coop": coop,
        "batch": { "lookahead": job.lookahead, "plan": batch, "ratio": ratio_value(&batch.ratio()) },
        "access_reduction": ratio_value(&reduction),
    });
    Ok(Output::ok(json, traffic_csv(&[&solo, &coop])))
}

fn perm_cmd(t: &ContractionTree) -> Result<Output, Failure> {
    let s = linearize(t);
    let hist = s
        .permutation_histogram()
        .map_err(|e| Failure::plan("perm-stats", e))?;
    let mut csv = String::from("case,count\n");
    let mut buckets = Vec::new();
    for (c, n) in &hist {
        csv.push_str(&format!("{c},{n}\n"));
        buckets.push(json!({ "case": c.to_string(), "count": n }));
    }
    let total: u64 = hist.iter().map(|(_, n)| n).sum();
    let json = json!({ "command": "perm-stats", "buckets": buckets, "total": total });
    Ok(Output::ok(json, csv))
}

fn fault_bit(p: Precision) -> u32 {
    match p {
        Precision::Single => 30,
        Precision::Double => 62,
    }
}

fn execute<T: Real>(
    job: &Job,
    input: &Input<T>,
    t: &ContractionTree,
    verify_only: bool,
) -> Result<Output, Failure> {
    let start = Instant::now();
    let s = linearize(t);
    let spec = slice_spec(job, &s)?;
    let workers = resolve_workers(job.workers);
    let opts = RunOptions {
        workers,
        group_size: job.group_size,
        max_intermediate_elements: None,
        checkpoint_budget_bytes: job.mem_budget_bytes.map(u128::from),
        spill: job.spill.clone(),
    };

    let (outcome, verify_tree, indices, reuse, predicted): (
        RunOutcome<T>,
        ContractionTree,
        Vec<Index>,
        Value,
        Value,
    ) = if job.no_reuse {
        let out =
            run_sliced(&input.net, t, &spec, &opts).map_err(|e| Failure::exec("execute", e))?;
        let idx = spec.entries.iter().map(|e| e.index.clone()).collect();
        (out, t.clone(), idx, Value::Null, Value::Null)
    } else {
        let plan = plan_reuse(job, &s, &spec, &budget(job, T::PRECISION))?;
        let out = run_reuse(&input.net, &plan.schedule, &plan.actions, &opts)
            .map_err(|e| Failure::exec("execute", e))?;
        let idx = plan
            .actions
            .outer_slices
            .iter()
            .map(|e| e.index.clone())
            .collect();
        let predicted = json!(plan.report.predicted_multiplies);
        (
            out,
            plan.schedule.tree().clone(),
            idx,
            reuse_json(&plan)?,
            predicted,
        )
    };

    let mut recorded = outcome.partials.clone();
    if let Some(k) = job.inject_fault {
        let slot = recorded.get_mut(k as usize).ok_or_else(|| {
            Failure::config(
                "verify",
                format!("no partial {k} among {}", outcome.partials.len()),
            )
        })?;
        slot.re = slot.re.flip_bit(fault_bit(T::PRECISION));
    }
    let tolerance = job.tolerance.unwrap_or(default_tolerance(T::PRECISION));
    let report = replay_verify(
        &input.net,
        &verify_tree,
        &indices,
        &recorded,
        job.verify_samples,
        job.seed,
        tolerance,
    )
    .map_err(|e| Failure::exec("verify", e))?;

    let value = outcome.value;
    let (re, im) = (value.re.as_f64(), value.im.as_f64());
    let m = tree_metrics(t);
    let labels = spec.labels();
    let st = &outcome.stats;
    let mut json = json!({
        "command": if verify_only { "verify" } else { "run" },
        "input": {
            "qubits": input.qubits,
            "bitstring": input.bitstring,
            "tensors": input.net.len(),
        },
        "precision": T::PRECISION,
        "seed": job.seed,
        "workers": workers,
        "group_size": job.group_size,
        "amplitude": { "re": re, "im": im },
        "probability": re * re + im * im,
        "tree": { "total_cost": m.total_cost, "max_rank": m.max_rank, "steps": s.len() },
        "slicing": {
            "labels": labels,
            "subtasks": spec.subtask_count() as u64,
            "sliced_max_rank": sliced_max_rank(t, &labels),
            "overhead": ratio_value(&total_overhead(t, &labels)),
        },
        "reuse": reuse,
        "stats": {
            "multiplies": st.multiplies,
            "predicted_multiplies": predicted,
            "bytes_peak": st.bytes_peak,
            "bytes_moved": st.bytes_moved,
            "subtasks_done": st.subtasks_done,
        },
        "verify": report,
        "injected_fault": job.inject_fault,
    });
    let wall = start.elapsed().as_secs_f64();
    json["timing"] = json!({ "wall_time_s": wall, "execute_wall_time_s": st.wall_time });

    let csv = format!(
        "key,value\namplitude_re,{re:e}\namplitude_im,{im:e}\nmultiplies,{}\nbytes_peak,{}\nbytes_moved,{}\nsubtasks_done,{}\nverify_passed,{}\nverify_max_deviation,{:e}\nwall_time_s,{wall}\n",
        st.multiplies, st.bytes_peak, st.bytes_moved, st.subtasks_done, report.passed, report.max_deviation
    );
    let verification_error = (!report.passed).then(|| {
        format!(
            "{} of {} replayed subtasks deviate beyond {tolerance:e} (flagged {:?})",
            report.flagged.len(),
            report.samples.len(),
            report.flagged
        )
    });
    Ok(Output {
        json,
        csv,
        verification_error,
    })
}
