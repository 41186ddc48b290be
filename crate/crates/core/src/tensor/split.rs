use num_complex::Complex;
use num_traits::Zero;

use super::contract::{dot, prepare, ContractionShape};
use super::{DenseTensor, Real};
use crate::error::{Result, TncError};
use crate::par;

/// Panel boundaries when K is cut into `panels` pieces; the first `k % panels`
/// panels take one extra element.
fn panel_bounds(k: usize, panels: usize) -> Vec<(usize, usize)> {
    (0..panels)
        .map(|p| (p * k / panels, (p + 1) * k / panels))
        .collect()
}

/// Combines values pairwise, level by level: `(v0+v1), (v2+v3), ...`, with an
/// odd tail carried up unchanged.
fn tree_sum<T: Real>(mut v: Vec<Complex<T>>) -> Complex<T> {
    if v.is_empty() {
        return Complex::zero();
    }
    while v.len() > 1 {
        v = v
            .chunks(2)
            .map(|p| if p.len() == 2 { p[0] + p[1] } else { p[0] })
            .collect();
    }
    v[0]
}

/// Longest chain of dependent additions behind one output element when K is
/// split into `panels` panels.
pub fn accumulation_chain_length(k: usize, panels: usize) -> usize {
    let panels = panels.clamp(1, k.max(1));
    let longest = k.div_ceil(panels);
    longest + (usize::BITS - (panels - 1).leading_zeros()) as usize
}

/// Split-K contraction: K is cut into `blocks * group_size` panels, each panel
/// accumulates independently, and panels are combined with a fixed pairwise
/// tree. `blocks = group_size = 1` reproduces [`super::contract_pair`] bit for bit.
pub fn split_common_contract<T: Real>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
    blocks: usize,
    group_size: usize,
) -> Result<(DenseTensor<T>, ContractionShape)> {
    if blocks == 0 || group_size == 0 {
        return Err(TncError::InvalidPartition { blocks, group_size });
    }
    let g = prepare(a, b)?;
    let k = g.k;
    let panels = (blocks * group_size).min(k).max(1);
    let bounds = panel_bounds(k, panels);
    let outputs = g.big_rows * g.small_rows;

    // one partial block of M*N values per panel
    let partials: Vec<Vec<Complex<T>>> = par::map(&bounds, |&(lo, hi)| {
        let mut block = Vec::with_capacity(outputs);
        for i in 0..g.big_rows {
            let x = &g.big[i * k + lo..i * k + hi];
            for j in 0..g.small_rows {
                block.push(dot(x, &g.small[j * k + lo..j * k + hi]));
            }
        }
        block
    });
    let out: Vec<Complex<T>> = (0..outputs)
        .map(|e| tree_sum(partials.iter().map(|p| p[e]).collect()))
        .collect();
    let shape = g.shape;
    Ok((g.finish(out), shape))
}
