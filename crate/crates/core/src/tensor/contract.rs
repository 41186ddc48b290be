use num_complex::Complex;
use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::permute::{classify_permutation, permute_with_plan, PermutationPlan};
use super::{volume, DenseTensor, Index, Real};
use crate::error::{Result, TncError};
use crate::par;

/// GEMM view of a pairwise contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractionShape {
    /// Product of A's free dims.
    pub m: usize,
    /// Product of B's free dims.
    pub n: usize,
    /// Product of the common dims.
    pub k: usize,
    pub n_common: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl ContractionShape {
    /// Shape of contracting tensors with index lists `a` and `b`.
    pub fn of(a: &[Index], b: &[Index]) -> Result<Self> {
        let mut k = 1;
        let mut n_common = 0;
        let mut m = 1;
        for ia in a {
            match b.iter().find(|ib| ib.label == ia.label) {
                Some(ib) => {
                    if ib.dim != ia.dim {
                        return Err(TncError::DimensionMismatch {
                            label: ia.label.clone(),
                            left: ia.dim,
                            right: ib.dim,
                        });
                    }
                    k *= ia.dim;
                    n_common += 1;
                }
                None => m *= ia.dim,
            }
        }
        let n = volume(b) / k;
        Ok(ContractionShape {
            m,
            n,
            k,
            n_common,
            n_a: a.len(),
            n_b: b.len(),
        })
    }

    /// `2 * n_common / (n_a + n_b)`; zero when both operands are scalars.
    pub fn narrow(&self) -> Ratio<usize> {
        let total = self.n_a + self.n_b;
        if total == 0 {
            Ratio::zero()
        } else {
            Ratio::new(2 * self.n_common, total)
        }
    }

    /// Scalar multiplies, one per point of the union index space.
    pub fn multiplies(&self) -> u128 {
        self.m as u128 * self.k as u128 * self.n as u128
    }
}

/// Operands laid out as two row-major matrices with K as the contiguous axis.
pub(crate) struct Gemm<T: Real> {
    pub big: Vec<Complex<T>>,
    pub small: Vec<Complex<T>>,
    pub big_rows: usize,
    pub small_rows: usize,
    pub k: usize,
    /// True when A is the big (left) multiplier.
    pub a_is_big: bool,
    pub result: Vec<Index>,
    pub shape: ContractionShape,
}

fn first_label(t: &[Index]) -> &str {
    t.first().map(|i| i.label.as_str()).unwrap_or("")
}

/// Operand roles and layouts chosen for one pairwise contraction.
struct Layout {
    a_is_big: bool,
    big_free: Vec<Index>,
    small_free: Vec<Index>,
    big_plan: PermutationPlan,
    small_plan: PermutationPlan,
    result: Vec<Index>,
}

fn layout(a: &[Index], b: &[Index]) -> Result<Layout> {
    let a_is_big = match volume(a).cmp(&volume(b)) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => first_label(a) <= first_label(b),
    };
    let (big, small) = if a_is_big { (a, b) } else { (b, a) };
    let shared = |t: &[Index], l: &str| t.iter().any(|i| i.label == l);
    // common indices follow the big operand's order so its permutation only
    // relocates a few legs
    let common: Vec<Index> = big
        .iter()
        .filter(|i| shared(small, &i.label))
        .cloned()
        .collect();
    let free_of = |t: &[Index], other: &[Index]| -> Vec<Index> {
        t.iter()
            .filter(|i| !shared(other, &i.label))
            .cloned()
            .collect()
    };
    let big_free = free_of(big, small);
    let small_free = free_of(small, big);
    let plan = |t: &[Index], free: &[Index]| {
        let target: Vec<Index> = free.iter().chain(common.iter()).cloned().collect();
        classify_permutation(t, &target)
    };
    Ok(Layout {
        a_is_big,
        big_plan: plan(big, &big_free)?,
        small_plan: plan(small, &small_free)?,
        big_free,
        small_free,
        result: free_of(a, b).into_iter().chain(free_of(b, a)).collect(),
    })
}

/// The two operand permutations (big operand first) performed by
/// [`contract_pair`] on tensors with these index orders.
pub fn pair_permutation_plans(a: &[Index], b: &[Index]) -> Result<[PermutationPlan; 2]> {
    ContractionShape::of(a, b)?;
    let l = layout(a, b)?;
    Ok([l.big_plan, l.small_plan])
}

pub(crate) fn prepare<T: Real>(a: &DenseTensor<T>, b: &DenseTensor<T>) -> Result<Gemm<T>> {
    let shape = ContractionShape::of(a.indices(), b.indices())?;
    let l = layout(a.indices(), b.indices())?;
    let (big, small) = if l.a_is_big { (a, b) } else { (b, a) };
    Ok(Gemm {
        big: permute_with_plan(big, &l.big_plan).into_data(),
        small: permute_with_plan(small, &l.small_plan).into_data(),
        big_rows: volume(&l.big_free),
        small_rows: volume(&l.small_free),
        k: shape.k,
        a_is_big: l.a_is_big,
        result: l.result,
        shape,
    })
}

impl<T: Real> Gemm<T> {
    /// Scatters an output computed as `[big_row][small_row]` into A-free ++ B-free order.
    pub fn finish(&self, out_bs: Vec<Complex<T>>) -> DenseTensor<T> {
        let data = if self.a_is_big || self.big_rows == 1 || self.small_rows == 1 {
            out_bs
        } else {
            let mut data = vec![Complex::zero(); out_bs.len()];
            for i in 0..self.big_rows {
                for j in 0..self.small_rows {
                    data[j * self.big_rows + i] = out_bs[i * self.small_rows + j];
                }
            }
            data
        };
        DenseTensor::from_parts_unchecked(self.result.clone(), data)
    }
}

/// Below this many multiplies the row loop stays on the calling thread.
const PAR_THRESHOLD: u128 = 1 << 16;

/// Sums `x[k] * y[k]` left to right from zero.
#[inline]
pub(crate) fn dot<T: Real>(x: &[Complex<T>], y: &[Complex<T>]) -> Complex<T> {
    let mut acc = Complex::zero();
    for (p, q) in x.iter().zip(y) {
        acc = acc + *p * *q;
    }
    acc
}

/// Einstein summation over the shared labels of `a` and `b`.
///
/// The result carries A's free indices (in A's order) followed by B's free
/// indices (in B's order). The returned shape records `M * K * N` multiplies.
pub fn contract_pair<T: Real>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
) -> Result<(DenseTensor<T>, ContractionShape)> {
    let g = prepare(a, b)?;
    let k = g.k;
    let row = |i: usize| -> Vec<Complex<T>> {
        let x = &g.big[i * k..(i + 1) * k];
        (0..g.small_rows)
            .map(|j| dot(x, &g.small[j * k..(j + 1) * k]))
            .collect()
    };
    let out: Vec<Complex<T>> = if g.shape.multiplies() >= PAR_THRESHOLD && g.big_rows > 1 {
        par::map_range(g.big_rows, row)
            .into_iter()
            .flatten()
            .collect()
    } else {
        (0..g.big_rows).flat_map(row).collect()
    };
    let shape = g.shape;
    Ok((g.finish(out), shape))
}
