//! Text circuits and their amplitude networks.
//!
//! Two-qubit matrices act on `|q0 q1>` with `q0` the most significant bit.
//! `fs(theta, phi)` is the fSim gate: an `-i sin(theta)` swap block between
//! `|01>` and `|10>` and an `e^{-i phi}` phase on `|11>`.

use std::collections::HashSet;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TncError};
use crate::network::TensorNetwork;
use crate::tensor::{cast_complex, DenseTensor, Index, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateKind {
    H,
    T,
    X,
    Y,
    Z,
    Cz,
    Cx,
    ISwap,
    SqrtX,
    SqrtY,
    SqrtW,
    Rz(f64),
    FSim(f64, f64),
}

impl GateKind {
    pub fn name(&self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::T => "t",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::Cz => "cz",
            GateKind::Cx => "cx",
            GateKind::ISwap => "is",
            GateKind::SqrtX => "x_1_2",
            GateKind::SqrtY => "y_1_2",
            GateKind::SqrtW => "hz_1_2",
            GateKind::Rz(_) => "rz",
            GateKind::FSim(..) => "fs",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            GateKind::Cz | GateKind::Cx | GateKind::ISwap | GateKind::FSim(..) => 2,
            _ => 1,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            GateKind::Rz(t) => vec![t],
            GateKind::FSim(t, p) => vec![t, p],
            _ => Vec::new(),
        }
    }

    fn from_parts(name: &str, params: &[f64]) -> std::result::Result<Self, String> {
        let want = match name {
            "rz" => 1,
            "fs" | "fsim" => 2,
            _ => 0,
        };
        if params.len() != want {
            return Err(format!(
                "gate `{name}` takes {want} parameter(s), got {}",
                params.len()
            ));
        }
        Ok(match name {
            "h" => GateKind::H,
            "t" => GateKind::T,
            "x" => GateKind::X,
            "y" => GateKind::Y,
            "z" => GateKind::Z,
            "cz" => GateKind::Cz,
            "cx" | "cnot" => GateKind::Cx,
            "is" | "iswap" => GateKind::ISwap,
            "x_1_2" => GateKind::SqrtX,
            "y_1_2" => GateKind::SqrtY,
            "hz_1_2" => GateKind::SqrtW,
            "rz" => GateKind::Rz(params[0]),
            "fs" | "fsim" => GateKind::FSim(params[0], params[1]),
            other => return Err(format!("unknown gate `{other}`")),
        })
    }

    /// Row-major unitary: 2x2 or 4x4.
    pub fn matrix(&self) -> Vec<Complex64> {
        let c = Complex64::new;
        let z = c(0.0, 0.0);
        let o = c(1.0, 0.0);
        let i = c(0.0, 1.0);
        let h = c(0.5, 0.5);
        let l = c(0.5, -0.5);
        match *self {
            GateKind::H => {
                let s = c(FRAC_1_SQRT_2, 0.0);
                vec![s, s, s, -s]
            }
            GateKind::T => vec![o, z, z, Complex64::from_polar(1.0, PI / 4.0)],
            GateKind::X => vec![z, o, o, z],
            GateKind::Y => vec![z, -i, i, z],
            GateKind::Z => vec![o, z, z, -o],
            // sqrt(P) = (1+i)/2 I + (1-i)/2 P for a Hermitian involution P
            GateKind::SqrtX => vec![h, l, l, h],
            GateKind::SqrtY => vec![h, -h, h, h],
            GateKind::SqrtW => vec![h, c(0.0, -FRAC_1_SQRT_2), c(FRAC_1_SQRT_2, 0.0), h],
            GateKind::Rz(t) => vec![
                Complex64::from_polar(1.0, -t / 2.0),
                z,
                z,
                Complex64::from_polar(1.0, t / 2.0),
            ],
            GateKind::Cz => diag4(o, o, o, -o),
            GateKind::Cx => vec![o, z, z, z, z, o, z, z, z, z, z, o, z, z, o, z],
            GateKind::ISwap => vec![o, z, z, z, z, z, i, z, z, i, z, z, z, z, z, o],
            GateKind::FSim(theta, phi) => {
                let cs = c(theta.cos(), 0.0);
                let sn = c(0.0, -theta.sin());
                let ph = Complex64::from_polar(1.0, -phi);
                vec![o, z, z, z, z, cs, sn, z, z, sn, cs, z, z, z, z, ph]
            }
        }
    }
}

fn diag4(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Vec<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    vec![a, z, z, z, z, b, z, z, z, z, c, z, z, z, z, d]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub cycle: usize,
}

impl Gate {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    /// Renders the circuit in the text format accepted by [`parse_circuit`].
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n_qubits);
        for g in &self.gates {
            write!(s, "{} {}", g.cycle, g.name()).unwrap();
            for q in &g.qubits {
                write!(s, " {q}").unwrap();
            }
            for p in g.kind.params() {
                write!(s, " {p:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Parses `n_qubits` on the first line, then `cycle name q0 [q1] [params...]`.
///
/// Blank lines and `#` comments are skipped. Gates are stably sorted by cycle.
pub fn parse_circuit(text: &str) -> Result<Circuit> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (first_no, first) = lines.next().ok_or(TncError::Parse {
        line: 1,
        message: "empty circuit".into(),
    })?;
    let n_qubits: usize = first.parse().map_err(|_| TncError::Parse {
        line: first_no,
        message: format!("expected qubit count, found `{first}`"),
    })?;
    if n_qubits == 0 {
        return Err(TncError::Parse {
            line: first_no,
            message: "qubit count must be positive".into(),
        });
    }

    let mut gates = Vec::new();
    let mut busy: HashSet<(usize, usize)> = HashSet::new();
    for (line, l) in lines {
        let err = |message: String| TncError::Parse { line, message };
        let mut tok = l.split_whitespace();
        let cycle: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(format!("expected cycle number in `{l}`")))?;
        let name = tok
            .next()
            .ok_or_else(|| err("missing gate name".into()))?
            .to_lowercase();
        let rest: Vec<&str> = tok.collect();
        let arity = match name.as_str() {
            "cz" | "cx" | "cnot" | "is" | "iswap" | "fs" | "fsim" => 2,
            "h" | "t" | "x" | "y" | "z" | "x_1_2" | "y_1_2" | "hz_1_2" | "rz" => 1,
            other => return Err(err(format!("unknown gate `{other}`"))),
        };
        if rest.len() < arity {
            return Err(err(format!("gate `{name}` needs {arity} qubit(s)")));
        }
        let qubits: Vec<usize> = rest[..arity]
            .iter()
            .map(|q| q.parse().map_err(|_| err(format!("bad qubit id `{q}`"))))
            .collect::<Result<_>>()?;
        let params: Vec<f64> = rest[arity..]
            .iter()
            .map(|p| p.parse().map_err(|_| err(format!("bad parameter `{p}`"))))
            .collect::<Result<_>>()?;
        let kind = GateKind::from_parts(&name, &params).map_err(err)?;
        for (k, &q) in qubits.iter().enumerate() {
            if q >= n_qubits {
                return Err(err(format!("qubit {q} out of range for {n_qubits} qubits")));
            }
            if qubits[..k].contains(&q) {
                return Err(err(format!("duplicate qubit {q} in one gate")));
            }
            if !busy.insert((cycle, q)) {
                return Err(err(format!("duplicate qubit {q} in cycle {cycle}")));
            }
        }
        gates.push(Gate {
            kind,
            qubits,
            cycle,
        });
    }
    gates.sort_by_key(|g| g.cycle);
    Ok(Circuit { n_qubits, gates })
}

fn vector<T: Real>(label: String, bit: usize) -> DenseTensor<T> {
    DenseTensor::from_fn(vec![Index::qubit(label)], |m| {
        cast_complex(Complex64::new(if m[0] == bit { 1.0 } else { 0.0 }, 0.0))
    })
    .expect("valid vector")
}

/// Closed network for the amplitude `<bitstring| C |0...0>`.
///
/// Tensor order: one `|0>` per qubit, one tensor per gate (legs
/// `[out.., in..]`), then one `<b_q|` per qubit. Wire labels are `q{q}_{k}`
/// where `k` counts the gates applied to qubit `q` so far.
pub fn circuit_to_network<T: Real>(c: &Circuit, bitstring: &str) -> Result<TensorNetwork<T>> {
    let bits: Vec<usize> = bitstring
        .chars()
        .map(|ch| match ch {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(TncError::InvalidParameter(format!(
                "bitstring character `{other}`"
            ))),
        })
        .collect::<Result<_>>()?;
    if bits.len() != c.n_qubits {
        return Err(TncError::BitstringLength {
            expected: c.n_qubits,
            got: bits.len(),
        });
    }
    let mut layer = vec![0usize; c.n_qubits];
    let wire = |q: usize, k: usize| format!("q{q}_{k}");
    let mut tensors: Vec<DenseTensor<T>> = (0..c.n_qubits).map(|q| vector(wire(q, 0), 0)).collect();
    for g in &c.gates {
        let ins: Vec<Index> = g
            .qubits
            .iter()
            .map(|&q| Index::qubit(wire(q, layer[q])))
            .collect();
        for &q in &g.qubits {
            layer[q] += 1;
        }
        let outs: Vec<Index> = g
            .qubits
            .iter()
            .map(|&q| Index::qubit(wire(q, layer[q])))
            .collect();
        let data = g.kind.matrix().into_iter().map(cast_complex).collect();
        tensors.push(DenseTensor::new(
            outs.into_iter().chain(ins).collect(),
            data,
        )?);
    }
    for (q, &b) in bits.iter().enumerate() {
        tensors.push(vector(wire(q, layer[q]), b));
    }
    TensorNetwork::new(tensors)
}

/// Random circuit of `depth` rounds. Each round is a cycle of random
/// single-qubit gates on every qubit followed by a cycle of fSim / CZ gates on
/// a random disjoint pairing.
pub fn random_circuit(n_qubits: usize, depth: usize, seed: u64) -> Circuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gates = Vec::new();
    for d in 0..depth {
        for q in 0..n_qubits {
            let kind = match rng.gen_range(0..6) {
                0 => GateKind::SqrtX,
                1 => GateKind::SqrtY,
                2 => GateKind::SqrtW,
                3 => GateKind::H,
                4 => GateKind::T,
                _ => GateKind::Rz(rng.gen_range(-PI..PI)),
            };
            gates.push(Gate {
                kind,
                qubits: vec![q],
                cycle: 2 * d,
            });
        }
        let mut order: Vec<usize> = (0..n_qubits).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.gen_range(0..=k));
        }
        for pair in order.chunks_exact(2) {
            let kind = if rng.gen_bool(0.5) {
                GateKind::FSim(rng.gen_range(0.0..PI), rng.gen_range(0.0..PI))
            } else {
                GateKind::Cz
            };
            gates.push(Gate {
                kind,
                qubits: pair.to_vec(),
                cycle: 2 * d + 1,
            });
        }
    }
    Circuit { n_qubits, gates }
}
