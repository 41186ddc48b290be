//! Independent reference implementations and fixture builders for the
//! integration tests. Nothing here calls the kernels under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_complex::{Complex, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnc_core::circuit::Circuit;
use tnc_core::network::TensorNetwork;
use tnc_core::tensor::{DenseTensor, Index, Real};
use tnc_core::tree::ContractionTree;

/// Amplitude `<bits| C |0..0>` by applying each gate to a dense state vector.
/// Qubit 0 is the most significant bit of the basis index.
pub fn statevector_amplitude(c: &Circuit, bits: &str) -> Complex64 {
    let n = c.n_qubits;
    let mut psi = vec![Complex64::new(0.0, 0.0); 1 << n];
    psi[0] = Complex64::new(1.0, 0.0);
    for g in &c.gates {
        let m = g.kind.matrix();
        let shift = |q: usize| n - 1 - q;
        let mut next = vec![Complex64::new(0.0, 0.0); 1 << n];
        for (idx, amp) in psi.iter().enumerate() {
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            match *g.qubits.as_slice() {
                [q] => {
                    let b = (idx >> shift(q)) & 1;
                    for o in 0..2 {
                        let j = (idx & !(1 << shift(q))) | (o << shift(q));
                        next[j] += m[o * 2 + b] * amp;
                    }
                }
                [q0, q1] => {
                    let b = ((idx >> shift(q0)) & 1) << 1 | ((idx >> shift(q1)) & 1);
                    for o in 0..4 {
                        let mut j = idx & !(1 << shift(q0)) & !(1 << shift(q1));
                        j |= (o >> 1) << shift(q0);
                        j |= (o & 1) << shift(q1);
                        next[j] += m[o * 4 + b] * amp;
                    }
                }
                _ => unreachable!(),
            }
        }
        psi = next;
    }
    let target = usize::from_str_radix(bits, 2).unwrap();
    psi[target]
}

fn odometer(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = dims.iter().product();
    let mut m = vec![0usize; dims.len()];
    for _ in 0..total {
        f(&m);
        for k in (0..dims.len()).rev() {
            m[k] += 1;
            if m[k] < dims[k] {
                break;
            }
            m[k] = 0;
        }
    }
}

fn flat(dims: &[usize], m: &[usize]) -> usize {
    m.iter().zip(dims).fold(0, |acc, (x, d)| acc * d + x)
}

/// Element-wise Einstein summation; result legs are a-free then b-free.
pub fn naive_contract<T: Real>(a: &DenseTensor<T>, b: &DenseTensor<T>) -> DenseTensor<T> {
    let has = |t: &DenseTensor<T>, l: &str| t.indices().iter().any(|i| i.label == l);
    let free: Vec<Index> = a
        .indices()
        .iter()
        .filter(|i| !has(b, &i.label))
        .chain(b.indices().iter().filter(|i| !has(a, &i.label)))
        .cloned()
        .collect();
    let common: Vec<Index> = a
        .indices()
        .iter()
        .filter(|i| has(b, &i.label))
        .cloned()
        .collect();
    let fd: Vec<usize> = free.iter().map(|i| i.dim).collect();
    let cd: Vec<usize> = common.iter().map(|i| i.dim).collect();
    let mut data = vec![Complex::new(T::zero(), T::zero()); fd.iter().product()];
    let lookup = |t: &DenseTensor<T>, vals: &BTreeMap<&str, usize>| -> Complex<T> {
        let m: Vec<usize> = t.indices().iter().map(|i| vals[i.label.as_str()]).collect();
        t.get(&m)
    };
    odometer(&fd, |fm| {
        let mut acc = Complex::new(T::zero(), T::zero());
        odometer(&cd, |cm| {
            let mut vals: BTreeMap<&str, usize> = BTreeMap::new();
            for (i, v) in free.iter().zip(fm) {
                vals.insert(&i.label, *v);
            }
            for (i, v) in common.iter().zip(cm) {
                vals.insert(&i.label, *v);
            }
            acc = acc + lookup(a, &vals) * lookup(b, &vals);
        });
        data[flat(&fd, fm)] = acc;
    });
    DenseTensor::new(free, data).unwrap()
}

/// Element-by-element transpose into `labels` order.
pub fn naive_permute<T: Real>(t: &DenseTensor<T>, labels: &[String]) -> DenseTensor<T> {
    let pos: Vec<usize> = labels.iter().map(|l| t.position(l).unwrap()).collect();
    let target: Vec<Index> = pos.iter().map(|&p| t.indices()[p].clone()).collect();
    let td: Vec<usize> = target.iter().map(|i| i.dim).collect();
    let mut data = vec![Complex::new(T::zero(), T::zero()); t.len()];
    odometer(&td, |m| {
        let mut src = vec![0; m.len()];
        for (k, &p) in pos.iter().enumerate() {
            src[p] = m[k];
        }
        data[flat(&td, m)] = t.get(&src);
    });
    DenseTensor::new(target, data).unwrap()
}

/// Step costs recomputed from set algebra: a node carries the labels that
/// appear in exactly one of its children, and costs the product of dims over
/// the union of its children's labels. Labels in `fixed` count as dim 1.
pub fn brute_step_costs(
    leaves: &[Vec<Index>],
    path: &[(usize, usize)],
    fixed: &[&str],
) -> Vec<u128> {
    let dims: BTreeMap<String, usize> = leaves
        .iter()
        .flatten()
        .map(|i| (i.label.clone(), i.dim))
        .collect();
    let mut sets: Vec<BTreeSet<String>> = leaves
        .iter()
        .map(|l| l.iter().map(|i| i.label.clone()).collect())
        .collect();
    let dim = |l: &str| {
        if fixed.contains(&l) {
            1u128
        } else {
            dims[l] as u128
        }
    };
    let mut costs = Vec::new();
    for &(x, y) in path {
        let union: BTreeSet<String> = sets[x].union(&sets[y]).cloned().collect();
        costs.push(union.iter().map(|l| dim(l)).product());
        sets.push(sets[x].symmetric_difference(&sets[y]).cloned().collect());
    }
    costs
}

pub fn random_tensor<T: Real>(indices: Vec<Index>, rng: &mut ChaCha8Rng) -> DenseTensor<T> {
    DenseTensor::from_fn(indices, |_| {
        Complex::new(
            T::from_f64(rng.gen_range(-1.0..1.0)),
            T::from_f64(rng.gen_range(-1.0..1.0)),
        )
    })
    .unwrap()
}

/// Relative error with a floor for amplitudes near zero.
pub fn rel_err(got: Complex64, want: Complex64, floor: f64) -> f64 {
    (got - want).norm() / want.norm().max(floor)
}

pub fn to_c64<T: Real>(c: Complex<T>) -> Complex64 {
    Complex64::new(c.re.as_f64(), c.im.as_f64())
}

#[derive(Clone, Copy)]
enum Node {
    Leaf(usize),
    Joined(usize),
}

/// Builds trees out of leaves and joins without tracking SSA ids by hand.
#[derive(Default)]
pub struct TreeBuilder {
    pub leaves: Vec<Vec<Index>>,
    joins: Vec<(Node, Node)>,
    fresh: usize,
}

/// Handle to a leaf or a join in a [`TreeBuilder`].
#[derive(Clone, Copy)]
pub struct Handle(Node);

/// A chain under construction: its handle and current legs.
pub struct Chain {
    pub head: Handle,
    pub legs: Vec<Index>,
}

impl TreeBuilder {
    pub fn leaf(&mut self, ix: Vec<Index>) -> Handle {
        self.leaves.push(ix);
        Handle(Node::Leaf(self.leaves.len() - 1))
    }

    pub fn join(&mut self, a: Handle, b: Handle) -> Handle {
        self.joins.push((a.0, b.0));
        Handle(Node::Joined(self.joins.len() - 1))
    }

    pub fn fresh(&mut self, prefix: &str, dim: usize) -> Index {
        self.fresh += 1;
        Index::new(format!("{prefix}{}", self.fresh), dim)
    }

    pub fn chain(&mut self, legs: Vec<Index>) -> Chain {
        let head = self.leaf(legs.clone());
        Chain { head, legs }
    }

    /// Absorbs a leaf carrying the chain legs at `close` plus `open`.
    pub fn absorb(&mut self, c: &mut Chain, close: &[usize], open: Vec<Index>) {
        let closing: Vec<Index> = close.iter().map(|&k| c.legs[k].clone()).collect();
        let leaf = self.leaf(
            closing
                .iter()
                .cloned()
                .chain(open.iter().cloned())
                .collect(),
        );
        c.head = self.join(c.head, leaf);
        c.legs.retain(|l| !closing.contains(l));
        c.legs.extend(open);
    }

    /// Replaces chain leg `k` by a fresh leg of the same dim.
    pub fn rename(&mut self, c: &mut Chain, k: usize, prefix: &str) {
        let d = c.legs[k].dim;
        let n = self.fresh(prefix, d);
        self.absorb(c, &[k], vec![n]);
    }

    pub fn leg(c: &Chain, label: &str) -> usize {
        c.legs.iter().position(|i| i.label == label).unwrap()
    }

    pub fn build(&self) -> ContractionTree {
        let n = self.leaves.len();
        let id = |x: Node| match x {
            Node::Leaf(i) => i,
            Node::Joined(k) => n + k,
        };
        let path: Vec<(usize, usize)> = self.joins.iter().map(|&(a, b)| (id(a), id(b))).collect();
        ContractionTree::from_ssa_path(&self.leaves, &path).unwrap()
    }

    pub fn network<T: Real>(&self, seed: u64) -> TensorNetwork<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TensorNetwork::new(
            self.leaves
                .iter()
                .map(|l| random_tensor(l.clone(), &mut rng))
                .collect(),
        )
        .unwrap()
    }
}

pub fn legs(prefix: &str, n: usize, dim: usize) -> Vec<Index> {
    (0..n)
        .map(|k| Index::new(format!("{prefix}{k}"), dim))
        .collect()
}

/// A closed stem over six dim-2 legs: `before` renames, then three dim-`d`
/// indices `n1`, `n2`, `n3` opened in that order and closed in reverse, then
/// `after` renames and a final tensor absorbing every remaining leg.
pub fn nested_stem(before: usize, after: usize, d: usize) -> TreeBuilder {
    let mut b = TreeBuilder::default();
    let mut s = b.chain(legs("y", 6, 2));
    for k in 0..before {
        b.rename(&mut s, k % 6, "f");
    }
    for (k, name) in ["n1", "n2", "n3"].iter().enumerate() {
        let n = b.fresh("g", 2);
        b.absorb(&mut s, &[k], vec![Index::new(*name, d), n]);
    }
    for name in ["n3", "n2", "n1"] {
        let pos = TreeBuilder::leg(&s, name);
        let n = b.fresh("h", 2);
        b.absorb(&mut s, &[pos, 0], vec![n]);
    }
    for k in 0..after {
        let k = k % s.legs.len();
        b.rename(&mut s, k, "f");
    }
    let all: Vec<usize> = (0..s.legs.len()).collect();
    b.absorb(&mut s, &all, vec![]);
    b
}

fn rename_into(b: &mut TreeBuilder, c: &mut Chain, names: &[String]) {
    for n in names {
        b.absorb(c, &[0], vec![Index::qubit(n.as_str())]);
    }
}

/// Two stems joined at the root. Stem A (rank 8, many renames) carries the
/// short-lived dim-2 index `c1`; stem B (rank 6) carries the nested dim-4
/// indices `n1`, `n2`, `n3`. Both end on the shared legs `z0..z5`.
pub fn multi_stem() -> TreeBuilder {
    let mut b = TreeBuilder::default();
    let z: Vec<String> = (0..6).map(|k| format!("z{k}")).collect();

    let mut a = b.chain(legs("x", 8, 2));
    for k in 0..12 {
        b.rename(&mut a, k % 8, "f");
    }
    let g = b.fresh("g", 2);
    b.absorb(&mut a, &[0], vec![Index::qubit("c1"), g]);
    b.rename(&mut a, 1, "f");
    let pos = TreeBuilder::leg(&a, "c1");
    let g = b.fresh("g", 2);
    b.absorb(&mut a, &[pos, 1], vec![g]);
    for k in 0..14 {
        b.rename(&mut a, k % 8, "f");
    }
    b.absorb(&mut a, &[0, 1], vec![]);
    rename_into(&mut b, &mut a, &z);

    let mut s = b.chain(legs("y", 6, 2));
    for k in 0..5 {
        b.rename(&mut s, k % 6, "e");
    }
    for (k, name) in ["n1", "n2", "n3"].iter().enumerate() {
        let g = b.fresh("g", 2);
        b.absorb(&mut s, &[k], vec![Index::new(*name, 4), g]);
    }
    for name in ["n3", "n2", "n1"] {
        let pos = TreeBuilder::leg(&s, name);
        let h = b.fresh("h", 2);
        b.absorb(&mut s, &[pos, 0], vec![h]);
    }
    for k in 0..5 {
        b.rename(&mut s, k % 6, "e");
    }
    rename_into(&mut b, &mut s, &z);
    b.join(a.head, s.head);
    b
}

/// A random stem whose tensor rank stays within `lo..=hi` (dim-2 legs).
pub fn random_stem(seed: u64, lo: usize, hi: usize, steps: usize) -> ContractionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TreeBuilder::default();
    let r0 = rng.gen_range(lo..=hi);
    let mut s = b.chain(legs("s", r0, 2));
    for _ in 0..steps {
        loop {
            let c = rng.gen_range(0..=2usize).min(s.legs.len());
            let o = rng.gen_range(0..=3usize);
            let r = s.legs.len() - c + o;
            if c + o == 0 || r < lo || r > hi || c + o + 1 > r {
                continue;
            }
            let mut pos: Vec<usize> = (0..s.legs.len()).collect();
            for k in 0..c {
                let j = rng.gen_range(k..pos.len());
                pos.swap(k, j);
            }
            let open: Vec<Index> = (0..o).map(|_| b.fresh("n", 2)).collect();
            b.absorb(&mut s, &pos[..c], open);
            break;
        }
    }
    b.build()
}

/// Twenty steps alternating the stem rank between 14 and 18.
pub fn oscillating_stem() -> ContractionTree {
    let mut b = TreeBuilder::default();
    let mut s = b.chain(legs("s", 14, 2));
    for step in 0..20 {
        if step % 2 == 0 {
            let open: Vec<Index> = (0..4).map(|_| b.fresh("n", 2)).collect();
            b.absorb(&mut s, &[], open);
        } else {
            let r = s.legs.len();
            b.absorb(&mut s, &[r - 4, r - 3, r - 2, r - 1], vec![]);
        }
    }
    b.build()
}

/// A rank-14 stem where the six legs longest alive are `6 - n` open legs and
/// `n` legs summed together by one late absorption; eight short-lived legs
/// are renamed first.
pub fn batch_stem(n: usize) -> ContractionTree {
    let mut b = TreeBuilder::default();
    let mut start = legs("o", 6 - n, 2);
    start.extend(legs("g", n, 2));
    start.extend(legs("f", 8, 2));
    let mut s = b.chain(start);
    for k in 0..8 {
        let pos = TreeBuilder::leg(&s, &format!("f{k}"));
        b.rename(&mut s, pos, "r");
    }
    let gs: Vec<usize> = (0..n)
        .map(|k| TreeBuilder::leg(&s, &format!("g{k}")))
        .collect();
    b.absorb(&mut s, &gs, vec![]);
    for _ in 0..2 {
        let last = s.legs.len() - 1;
        b.rename(&mut s, last, "r");
    }
    b.build()
}
