//! Per-group embedding dictionaries with table-lookup semantics and strictly
//! sparse gradient application: a training step may only touch rows whose
//! feature ids occur in the current mini-batch.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Embedding dictionary for one id space: `cardinality` rows of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    cardinality: usize,
    rows: Vec<f64>, // row-major, cardinality * dim
}

impl EmbeddingTable {
    /// Rows drawn i.i.d. uniform on [-1/sqrt(dim), +1/sqrt(dim)], so pooled
    /// sums over typical behavior lists stay O(1).
    pub fn init(name: impl Into<String>, cardinality: usize, dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dim must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let rows = (0..cardinality * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        EmbeddingTable {
            name: name.into(),
            dim,
            cardinality,
            rows,
        }
    }

    pub fn from_rows(name: impl Into<String>, dim: usize, rows: Vec<f64>) -> Self {
        assert!(dim >= 1 && rows.len() % dim == 0);
        EmbeddingTable {
            name: name.into(),
            dim,
            cardinality: rows.len() / dim,
            rows,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.rows[i..i + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let i = id as usize * self.dim;
        &mut self.rows[i..i + self.dim]
    }

    pub fn raw(&self) -> &[f64] {
        &self.rows
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.rows
    }

    /// Table lookup: one vector per id, in id order. Empty input is the
    /// cold-start case and yields an empty list.
    pub fn lookup(&self, ids: &[u32]) -> Result<Vec<&[f64]>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= self.cardinality {
                return Err(Error::IdOutOfRange {
                    group: self.name.clone(),
                    id,
                    cardinality: self.cardinality,
                });
            }
            out.push(self.row(id));
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|v| v.is_finite())
    }
}

/// Accumulated gradient touching only the rows named in `entries`.
#[derive(Debug, Clone, Default)]
pub struct SparseGradient {
    entries: BTreeMap<u32, Vec<f64>>,
}

impl SparseGradient {
    pub fn new() -> Self {
        SparseGradient::default()
    }

    /// Adds `grad` into the accumulator for `id`.
    pub fn accumulate(&mut self, id: u32, grad: &[f64]) {
        match self.entries.get_mut(&id) {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.len());
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            None => {
                self.entries.insert(id, grad.to_vec());
            }
        }
    }

    pub fn entry_mut(&mut self, id: u32, dim: usize) -> &mut [f64] {
        self.entries.entry(id).or_insert_with(|| vec![0.0; dim])
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.entries.values_mut() {
            for g in grad.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.entries.get(&id).map(|v| v.as_slice())
    }

    /// Touched rows in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.entries.iter().map(|(&id, g)| (id, g.as_slice()))
    }
}

/// Applies `step` to exactly the rows named in `grad`; every other row is
/// left bitwise unchanged. Rejects non-finite gradients before touching
/// anything.
pub fn apply_sparse_update(
    table: &mut EmbeddingTable,
    grad: &SparseGradient,
    mut step: impl FnMut(u32, &mut [f64], &[f64]),
) -> Result<()> {
    for (id, g) in grad.iter() {
        if id as usize >= table.cardinality {
            return Err(Error::IdOutOfRange {
                group: table.name.clone(),
                id,
                cardinality: table.cardinality,
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: format!("{}[{}]", table.name, id),
            });
        }
    }
    for (id, g) in grad.iter() {
        step(id, table.row_mut(id), g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = EmbeddingTable::init("g", 3, 2, 7);
        let b = EmbeddingTable::init("g", 3, 2, 7);
        assert_eq!(a.raw(), b.raw());
        let c = EmbeddingTable::init("g", 3, 2, 8);
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn init_respects_range() {
        for dim in [1usize, 12] {
            let t = EmbeddingTable::init("g", 50, dim, 3);
            let bound = 1.0 / (dim as f64).sqrt();
            assert!(t.raw().iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn lookup_indexes_rows() {
        let t = EmbeddingTable::from_rows("g", 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        assert_eq!(t.lookup(&[2]).unwrap(), vec![&[2.0, 2.0][..]]);
        assert_eq!(
            t.lookup(&[0, 2]).unwrap(),
            vec![&[1.0, 0.0][..], &[2.0, 2.0][..]]
        );
        assert!(t.lookup(&[]).unwrap().is_empty());
        assert!(matches!(
            t.lookup(&[3]).unwrap_err(),
            Error::IdOutOfRange { id: 3, .. }
        ));
    }

    #[test]
    fn repeated_lookup_is_stable() {
        let t = EmbeddingTable::init("g", 10, 4, 1);
        let a: Vec<Vec<f64>> = t.lookup(&[1, 5]).unwrap().iter().map(|r| r.to_vec()).collect();
        let b: Vec<Vec<f64>> = t.lookup(&[1, 5]).unwrap().iter().map(|r| r.to_vec()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_step_touches_only_named_rows() {
        let mut t = EmbeddingTable::from_rows("g", 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let before = t.raw().to_vec();
        let mut grad = SparseGradient::new();
        grad.accumulate(1, &[1.0, 1.0]);
        apply_sparse_update(&mut t, &grad, |_, row, g| {
            for (w, g) in row.iter_mut().zip(g) {
                *w -= 0.1 * g;
            }
        })
        .unwrap();
        assert_eq!(t.row(1), &[-0.1, 0.9]);
        assert_eq!(t.row(0), &before[0..2]);
        assert_eq!(t.row(2), &before[4..6]);
    }

    #[test]
    fn empty_gradient_is_noop() {
        let mut t = EmbeddingTable::init("g", 5, 3, 9);
        let before = t.raw().to_vec();
        apply_sparse_update(&mut t, &SparseGradient::new(), |_, _, _| unreachable!()).unwrap();
        assert_eq!(t.raw(), &before[..]);
    }

    #[test]
    fn nan_gradient_rejected_without_touching_table() {
        let mut t = EmbeddingTable::from_rows("g", 2, vec![1.0, 0.0, 0.0, 1.0]);
        let before = t.raw().to_vec();
        let mut grad = SparseGradient::new();
        grad.accumulate(0, &[0.5, 0.5]);
        grad.accumulate(1, &[f64::NAN, 0.0]);
        let err = apply_sparse_update(&mut t, &grad, |_, row, g| {
            for (w, g) in row.iter_mut().zip(g) {
                *w -= g;
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
        assert_eq!(t.raw(), &before[..]);
    }

    #[test]
    fn accumulate_sums_repeated_ids() {
        let mut grad = SparseGradient::new();
        grad.accumulate(4, &[1.0, 2.0]);
        grad.accumulate(4, &[0.5, -1.0]);
        assert_eq!(grad.get(4).unwrap(), &[1.5, 1.0]);
        assert_eq!(grad.len(), 1);
    }
}
