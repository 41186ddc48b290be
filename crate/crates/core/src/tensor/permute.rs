use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{row_major_strides, volume, DenseTensor, Index, Real};
use crate::error::{Result, TncError};

/// Permutation buckets keyed by `[chunk elements, offset]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseClass {
    /// `[2,1]`
    Two1,
    /// `[4,1]`
    Four1,
    /// `[4,2]`
    Four2,
    /// `[>=8,1]`
    Eight1,
    /// `[>=8,2]`
    Eight2,
    /// `[>=8,4]`
    Eight4,
    /// Identity (or rank 0): a straight copy.
    Contiguous,
    /// Anything outside the vectorizable buckets.
    ScalarFallback,
}

impl CaseClass {
    pub const ALL: [CaseClass; 8] = [
        CaseClass::Two1,
        CaseClass::Four1,
        CaseClass::Four2,
        CaseClass::Eight1,
        CaseClass::Eight2,
        CaseClass::Eight4,
        CaseClass::Contiguous,
        CaseClass::ScalarFallback,
    ];

    fn bucket(chunk_elements: usize, offset: usize) -> Self {
        match (chunk_elements, offset) {
            (c, 1) if c >= 8 => CaseClass::Eight1,
            (c, 2) if c >= 8 => CaseClass::Eight2,
            (c, 4) if c >= 8 => CaseClass::Eight4,
            (c, 1) if c >= 4 => CaseClass::Four1,
            (c, 2) if c >= 4 => CaseClass::Four2,
            (c, 1) if c >= 2 => CaseClass::Two1,
            _ => CaseClass::ScalarFallback,
        }
    }
}

impl fmt::Display for CaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseClass::Two1 => "[2,1]",
            CaseClass::Four1 => "[4,1]",
            CaseClass::Four2 => "[4,2]",
            CaseClass::Eight1 => "[>=8,1]",
            CaseClass::Eight2 => "[>=8,2]",
            CaseClass::Eight4 => "[>=8,4]",
            CaseClass::Contiguous => "contiguous",
            CaseClass::ScalarFallback => "scalar-fallback",
        };
        f.write_str(s)
    }
}

/// How a permutation moves data, in terms of trailing contiguity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub source_order: Vec<Index>,
    pub target_order: Vec<Index>,
    /// Length of the longest suffix of the target that is an ascending,
    /// gap-free run of source positions.
    pub stride: usize,
    /// `m` such that the last source index lands `m - 1` places from the end
    /// of the source order: the target's last index is source index `rank - m`.
    pub offset: usize,
    pub case_class: CaseClass,
    /// Elements moved per chunk (product of the stride run's dims).
    pub chunk_elements: usize,
    /// Source-memory distance between consecutive chunk elements.
    pub chunk_source_stride: usize,
    /// `source_position[t]` is where target index `t` sits in the source.
    pub source_position: Vec<usize>,
}

impl PermutationPlan {
    pub fn rank(&self) -> usize {
        self.source_order.len()
    }

    pub fn is_identity(&self) -> bool {
        self.source_position
            .iter()
            .enumerate()
            .all(|(t, &s)| t == s)
    }
}

/// Classifies the permutation taking `source_order` to `target_order`.
pub fn classify_permutation(
    source_order: &[Index],
    target_order: &[Index],
) -> Result<PermutationPlan> {
    let n = source_order.len();
    if target_order.len() != n {
        return Err(TncError::InvalidPermutation(format!(
            "rank {} cannot be permuted to rank {}",
            n,
            target_order.len()
        )));
    }
    let lookup: HashMap<&str, usize> = source_order
        .iter()
        .enumerate()
        .map(|(k, i)| (i.label.as_str(), k))
        .collect();
    if lookup.len() != n {
        return Err(TncError::InvalidPermutation(
            "duplicate source label".into(),
        ));
    }
    let mut used = vec![false; n];
    let mut source_position = Vec::with_capacity(n);
    for ix in target_order {
        let &p = lookup.get(ix.label.as_str()).ok_or_else(|| {
            TncError::InvalidPermutation(format!("label `{}` not in source", ix.label))
        })?;
        if used[p] {
            return Err(TncError::InvalidPermutation(format!(
                "label `{}` repeated in target",
                ix.label
            )));
        }
        if source_order[p].dim != ix.dim {
            return Err(TncError::InvalidPermutation(format!(
                "label `{}` changes dimension",
                ix.label
            )));
        }
        used[p] = true;
        source_position.push(p);
    }

    if n == 0 {
        return Ok(PermutationPlan {
            source_order: Vec::new(),
            target_order: Vec::new(),
            stride: 0,
            offset: 1,
            case_class: CaseClass::Contiguous,
            chunk_elements: 1,
            chunk_source_stride: 1,
            source_position,
        });
    }

    let offset = n - source_position[n - 1];
    let mut stride = 1;
    while stride < n && source_position[n - 1 - stride] + 1 == source_position[n - stride] {
        stride += 1;
    }
    let chunk_elements = volume(&target_order[n - stride..]);
    let chunk_source_stride = row_major_strides(source_order)[source_position[n - 1]];
    let identity = source_position.iter().enumerate().all(|(t, &s)| t == s);
    let case_class = if identity {
        CaseClass::Contiguous
    } else {
        CaseClass::bucket(chunk_elements, offset)
    };

    Ok(PermutationPlan {
        source_order: source_order.to_vec(),
        target_order: target_order.to_vec(),
        stride,
        offset,
        case_class,
        chunk_elements,
        chunk_source_stride,
        source_position,
    })
}

/// Reorders `t` into `target_labels` order.
///
/// Copies proceed chunk by chunk: each chunk is the stride run of the target,
/// which is contiguous in the output and evenly strided in the source.
pub fn permute<T: Real, S: AsRef<str>>(
    t: &DenseTensor<T>,
    target_labels: &[S],
) -> Result<DenseTensor<T>> {
    let target: Vec<Index> = target_labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            t.position(l)
                .map(|p| t.indices()[p].clone())
                .ok_or_else(|| TncError::InvalidPermutation(format!("label `{l}` not in tensor")))
        })
        .collect::<Result<_>>()?;
    let plan = classify_permutation(t.indices(), &target)?;
    Ok(permute_with_plan(t, &plan))
}

pub(crate) fn permute_with_plan<T: Real>(
    t: &DenseTensor<T>,
    plan: &PermutationPlan,
) -> DenseTensor<T> {
    if plan.is_identity() {
        return t.clone();
    }
    let n = plan.rank();
    let src = t.data();
    let src_strides = row_major_strides(t.indices());
    let outer = &plan.target_order[..n - plan.stride];
    let outer_src_strides: Vec<usize> = plan.source_position[..n - plan.stride]
        .iter()
        .map(|&p| src_strides[p])
        .collect();
    let chunk = plan.chunk_elements;
    let step = plan.chunk_source_stride;

    let mut out = Vec::with_capacity(src.len());
    let mut multi = vec![0usize; outer.len()];
    let mut base = 0usize;
    let outer_count = volume(outer);
    for _ in 0..outer_count {
        if step == 1 {
            out.extend_from_slice(&src[base..base + chunk]);
        } else {
            out.extend((0..chunk).map(|k| src[base + k * step]));
        }
        for k in (0..outer.len()).rev() {
            multi[k] += 1;
            base += outer_src_strides[k];
            if multi[k] < outer[k].dim {
                break;
            }
            base -= multi[k] * outer_src_strides[k];
            multi[k] = 0;
        }
    }
    DenseTensor::from_parts_unchecked(plan.target_order.clone(), out)
}
