//! File formats shared by the library and the command line.
//!
//! Tensor JSON: `{"indices": [{"label", "dim"}, ...], "data": [[re, im], ...]}`
//! in row-major order. Tensor binary: `u32` rank, one `u64` per dim, a `u8`
//! precision tag (0 single, 1 double), then little-endian interleaved floats;
//! labels are not stored and read back as `i0, i1, ...`.
//!
//! Tree file: `{"ssa_path": [[i, j], ...]}` with leaves numbered in network
//! order. Slice file: a JSON list of `{label, fork, start, end, merge}`.

use num_complex::Complex;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::cost::TrafficReport;
use crate::error::{Result, TncError};
use crate::schedule::LinearSchedule;
use crate::slicer::SliceSpec;
use crate::tensor::{cast_complex, DenseTensor, Index, Precision, Real};
use crate::tree::ContractionTree;

/// Serializes `Ratio<u128>` as `"p/q"` (or `"p"` for integers).
pub mod ratio_str {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u128>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u128>, D::Error> {
        let text = String::deserialize(d)?;
        text.parse()
            .map_err(|_| D::Error::custom(format!("bad ratio {text:?}")))
    }
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    indices: Vec<Index>,
    data: Vec<[f64; 2]>,
}

pub fn tensor_to_json<T: Real>(t: &DenseTensor<T>) -> Result<String> {
    let j = TensorJson {
        indices: t.indices().to_vec(),
        data: t
            .data()
            .iter()
            .map(|c| [c.re.as_f64(), c.im.as_f64()])
            .collect(),
    };
    Ok(serde_json::to_string(&j)?)
}

pub fn tensor_from_json<T: Real>(text: &str) -> Result<DenseTensor<T>> {
    let j: TensorJson = serde_json::from_str(text)?;
    let data = j
        .data
        .iter()
        .map(|[re, im]| Complex::new(T::from_f64(*re), T::from_f64(*im)))
        .collect();
    DenseTensor::new(j.indices, data)
}

pub fn tensor_to_binary<T: Real>(t: &DenseTensor<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for i in t.indices() {
        out.extend_from_slice(&(i.dim as u64).to_le_bytes());
    }
    out.push(T::PRECISION.tag());
    for c in t.data() {
        match T::PRECISION {
            Precision::Single => {
                out.extend_from_slice(&(c.re.as_f64() as f32).to_le_bytes());
                out.extend_from_slice(&(c.im.as_f64() as f32).to_le_bytes());
            }
            Precision::Double => {
                out.extend_from_slice(&c.re.as_f64().to_le_bytes());
                out.extend_from_slice(&c.im.as_f64().to_le_bytes());
            }
        }
    }
    out
}

/// Reads a binary tensor, converting to `T` when the stored precision differs.
pub fn tensor_from_binary<T: Real>(bytes: &[u8]) -> Result<DenseTensor<T>> {
    let short = || TncError::Format("binary tensor is truncated".into());
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(short);
    let rank = u32::from_le_bytes(take(0, 4)?.try_into().unwrap()) as usize;
    let mut at = 4;
    let mut indices = Vec::with_capacity(rank);
    for k in 0..rank {
        let d = u64::from_le_bytes(take(at, 8)?.try_into().unwrap());
        indices.push(Index::new(format!("i{k}"), d as usize));
        at += 8;
    }
    let precision = Precision::from_tag(take(at, 1)?[0])?;
    at += 1;
    let n: usize = indices.iter().map(|i| i.dim).product();
    let width = precision.element_bytes() / 2;
    if bytes.len() != at + n * 2 * width {
        return Err(TncError::Format(format!(
            "expected {} payload bytes, found {}",
            n * 2 * width,
            bytes.len().saturating_sub(at)
        )));
    }
    let float = |k: usize| -> f64 {
        let r = &bytes[at + k * width..at + (k + 1) * width];
        match precision {
            Precision::Single => f32::from_le_bytes(r.try_into().unwrap()) as f64,
            Precision::Double => f64::from_le_bytes(r.try_into().unwrap()),
        }
    };
    let data = (0..n)
        .map(|k| cast_complex::<f64, T>(Complex::new(float(2 * k), float(2 * k + 1))))
        .collect();
    DenseTensor::new(indices, data)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFile {
    pub ssa_path: Vec<(usize, usize)>,
}

pub fn tree_to_json(t: &ContractionTree) -> Result<String> {
    Ok(serde_json::to_string(&TreeFile {
        ssa_path: t.ssa_path(),
    })?)
}

pub fn tree_from_json(text: &str, leaves: &[Vec<Index>]) -> Result<ContractionTree> {
    let f: TreeFile = serde_json::from_str(text)?;
    ContractionTree::from_ssa_path(leaves, &f.ssa_path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub label: String,
    pub fork: usize,
    pub start: usize,
    pub end: usize,
    pub merge: usize,
    #[serde(default)]
    pub reuse: bool,
}

pub fn slice_spec_to_json(spec: &SliceSpec) -> Result<String> {
    let rows: Vec<SliceRecord> = spec
        .entries
        .iter()
        .map(|e| SliceRecord {
            label: e.index.label.clone(),
            fork: e.fork,
            start: e.lifetime.start,
            end: e.lifetime.end,
            merge: e.merge,
            reuse: e.reuse,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// Reads a slice file against a schedule; stored lifetimes must match it.
pub fn slice_spec_from_json(s: &LinearSchedule, text: &str) -> Result<SliceSpec> {
    let rows: Vec<SliceRecord> = serde_json::from_str(text)?;
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let mut spec = SliceSpec::from_labels(s, &labels)?;
    for (e, r) in spec.entries.iter_mut().zip(&rows) {
        if (e.lifetime.start, e.lifetime.end) != (r.start, r.end) {
            return Err(TncError::Format(format!(
                "{}: file lifetime {}..={} differs from schedule {}..={}",
                r.label, r.start, r.end, e.lifetime.start, e.lifetime.end
            )));
        }
        if r.fork > r.start || r.merge < r.end {
            return Err(TncError::Format(format!(
                "{}: fork/merge must bracket the lifetime",
                r.label
            )));
        }
        e.fork = r.fork;
        e.merge = r.merge;
        e.reuse = r.reuse;
    }
    spec.refresh_nesting();
    Ok(spec)
}

fn ratio_f64(r: &Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `label,overhead,overhead_value` rows, one per index.
pub fn overhead_csv(rows: &[(String, Ratio<u128>)]) -> String {
    let mut out = String::from("label,overhead,overhead_value\n");
    for (l, o) in rows {
        out.push_str(&format!("{l},{o},{:.6}\n", ratio_f64(o)));
    }
    out
}

/// One row per fused section: `mode,stem,start,end,length,memory_accesses`.
pub fn traffic_csv(reports: &[&TrafficReport]) -> String {
    let mut out = String::from("mode,stem,start,end,length,memory_accesses\n");
    for r in reports {
        let mode = if r.cooperate { "coop" } else { "solo" };
        for s in &r.fused_sections {
            out.push_str(&format!(
                "{mode},{},{},{},{},2\n",
                s.stem, s.start, s.end, s.length
            ));
        }
    }
    out
}
