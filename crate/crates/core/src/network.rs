use std::collections::BTreeMap;

use crate::error::{Result, TncError};
use crate::tensor::{DenseTensor, Index, Real};

/// A set of tensors joined by shared labels.
///
/// Every label appears in at most two tensors; a label seen once is open.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorNetwork<T: Real> {
    tensors: Vec<DenseTensor<T>>,
}

/// Occurrence count and dimension of every label in a list of index lists.
pub fn label_table(structure: &[Vec<Index>]) -> Result<BTreeMap<String, (usize, usize)>> {
    let mut table: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ixs in structure {
        for ix in ixs {
            let entry = table.entry(ix.label.clone()).or_insert((0, ix.dim));
            if entry.1 != ix.dim {
                return Err(TncError::DimensionMismatch {
                    label: ix.label.clone(),
                    left: entry.1,
                    right: ix.dim,
                });
            }
            entry.0 += 1;
            if entry.0 > 2 {
                return Err(TncError::InvalidNetwork(format!(
                    "label `{}` appears in more than two tensors",
                    ix.label
                )));
            }
        }
    }
    Ok(table)
}

impl<T: Real> TensorNetwork<T> {
    pub fn new(tensors: Vec<DenseTensor<T>>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(TncError::InvalidNetwork("network has no tensors".into()));
        }
        let structure: Vec<Vec<Index>> = tensors.iter().map(|t| t.indices().to_vec()).collect();
        label_table(&structure)?;
        Ok(TensorNetwork { tensors })
    }

    pub fn tensors(&self) -> &[DenseTensor<T>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Index lists of every tensor, in network order.
    pub fn structure(&self) -> Vec<Vec<Index>> {
        self.tensors.iter().map(|t| t.indices().to_vec()).collect()
    }

    /// Labels seen exactly once.
    pub fn open_labels(&self) -> Vec<String> {
        label_table(&self.structure())
            .expect("validated at construction")
            .into_iter()
            .filter(|(_, (count, _))| *count == 1)
            .map(|(l, _)| l)
            .collect()
    }

    pub fn is_closed(&self) -> bool {
        self.open_labels().is_empty()
    }

    pub fn dim_of(&self, label: &str) -> Option<usize> {
        self.tensors
            .iter()
            .flat_map(|t| t.indices())
            .find(|i| i.label == label)
            .map(|i| i.dim)
    }

    /// Fixes each `(label, value)` pair in every tensor carrying the label.
    pub fn project(&self, assignment: &[(String, usize)]) -> Result<Self> {
        let mut tensors = self.tensors.clone();
        for (label, value) in assignment {
            let mut found = false;
            for t in tensors.iter_mut() {
                if t.position(label).is_some() {
                    *t = t.project(label, *value)?;
                    found = true;
                }
            }
            if !found {
                return Err(TncError::UnknownLabel(label.clone()));
            }
        }
        Ok(TensorNetwork { tensors })
    }

    pub fn cast<U: Real>(&self) -> TensorNetwork<U> {
        TensorNetwork {
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Replaces tensor `i`; the index list must not change.
    pub fn replace(&mut self, i: usize, t: DenseTensor<T>) -> Result<()> {
        if self.tensors[i].indices() != t.indices() {
            return Err(TncError::InvalidNetwork(
                "replacement changes indices".into(),
            ));
        }
        self.tensors[i] = t;
        Ok(())
    }
}
