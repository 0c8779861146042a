//! FIFO feature queues holding normalized key embeddings.
//!
//! Each view keeps a queue of recent key features; during co-training the two
//! queues are pushed in lockstep so row r of both queues always describes the
//! same sample. Storage order equals FIFO order: the oldest surviving entry is
//! row 0, the newest is row `fill - 1`.

use std::path::Path;

use crate::checkpoint;
use crate::encoder::{Activation, Layer, MlpParams};
use crate::error::{CoclrError, Result};
use crate::numerics::{dot, Matrix};

/// Tolerance for the stored-rows-are-unit-norm contract.
const UNIT_TOL: f64 = 1e-10;

/// Fixed-capacity FIFO of feature rows with parallel sample ids.
///
/// The ids exist purely for diagnostics (mining-precision measurement); the
/// training path never reads labels through them.
#[derive(Clone, Debug)]
pub struct QueueState {
    capacity: usize,
    dim: usize,
    /// `capacity x dim` backing store; rows `0..fill` are valid, oldest first.
    entries: Matrix,
    fill: usize,
    ids: Vec<usize>,
}

impl QueueState {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(CoclrError::InvalidArgument(format!(
                "queue needs positive capacity and dim, got {capacity}x{dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            entries: Matrix::zeros(capacity, dim),
            fill: 0,
            ids: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    /// Sample ids of the valid entries, oldest first.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Row `r` of the valid region (r < fill), oldest first.
    pub fn entry(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.fill);
        self.entries.row(r)
    }

    /// Copy of the valid region as a `fill x dim` matrix, oldest first.
    pub fn snapshot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.fill, self.dim);
        for r in 0..self.fill {
            m.row_mut(r).copy_from_slice(self.entries.row(r));
        }
        m
    }

    /// Append a batch, evicting exactly the oldest rows on overflow.
    pub fn push_batch(&mut self, keys: &Matrix, ids: &[usize]) -> Result<()> {
        if keys.cols() != self.dim {
            return Err(CoclrError::DimMismatch(format!(
                "push_batch: keys have dim {}, queue stores {}",
                keys.cols(),
                self.dim
            )));
        }
        if keys.rows() != ids.len() {
            return Err(CoclrError::DimMismatch(format!(
                "push_batch: {} key rows but {} ids",
                keys.rows(),
                ids.len()
            )));
        }
        if keys.rows() > self.capacity {
            return Err(CoclrError::InvalidArgument(format!(
                "push_batch: batch of {} exceeds capacity {}",
                keys.rows(),
                self.capacity
            )));
        }
        for (r, norm) in keys.row_norms().iter().enumerate() {
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(CoclrError::InvalidArgument(format!(
                    "push_batch: key row {r} has norm {norm}, expected unit"
                )));
            }
        }
        let incoming = keys.rows();
        if incoming == 0 {
            return Ok(());
        }
        let evict = (self.fill + incoming).saturating_sub(self.capacity);
        if evict > 0 {
            // Shift the survivors toward row 0; storage order stays FIFO.
            for r in evict..self.fill {
                let row = self.entries.row(r).to_vec();
                self.entries.row_mut(r - evict).copy_from_slice(&row);
            }
            self.ids.drain(..evict);
            self.fill -= evict;
        }
        for r in 0..incoming {
            self.entries.row_mut(self.fill + r).copy_from_slice(keys.row(r));
        }
        self.ids.extend_from_slice(ids);
        self.fill += incoming;
        Ok(())
    }

    /// `z x queue^T`: dot products of each query row against every valid
    /// entry, in storage order.
    pub fn similarity_to_queue(&self, z: &Matrix) -> Result<Matrix> {
        if self.fill == 0 {
            return Err(CoclrError::EmptyQueue(
                "similarity_to_queue on empty queue".into(),
            ));
        }
        if z.cols() != self.dim {
            return Err(CoclrError::DimMismatch(format!(
                "similarity_to_queue: queries have dim {}, queue stores {}",
                z.cols(),
                self.dim
            )));
        }
        let mut out = Matrix::zeros(z.rows(), self.fill);
        for i in 0..z.rows() {
            for j in 0..self.fill {
                out.set(i, j, dot(z.row(i), self.entries.row(j)));
            }
        }
        Ok(out)
    }

    /// Dump the valid region to disk, reusing the checkpoint container
    /// (a single linear layer whose weight matrix is the snapshot).
    pub fn dump_snapshot(&self, path: &Path) -> Result<()> {
        let wrapper = MlpParams {
            layers: vec![Layer {
                weight: self.snapshot(),
                bias: vec![0.0; self.dim],
                activation: Activation::Linear,
            }],
        };
        checkpoint::save_params(path, &wrapper)
    }

    /// Read a snapshot written by [`QueueState::dump_snapshot`].
    pub fn load_snapshot(path: &Path) -> Result<Matrix> {
        let wrapper = checkpoint::load_params(path)?;
        if wrapper.layers.len() != 1 {
            return Err(CoclrError::CorruptFile {
                path: path.display().to_string(),
                reason: format!("queue snapshot has {} layers", wrapper.layers.len()),
            });
        }
        Ok(wrapper.layers.into_iter().next().unwrap().weight)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Rng, NORM_EPS};
    use std::collections::VecDeque;

    fn unit_rows(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        let mut m = Matrix::zeros(n, d);
        rng.fill_normal(&mut m, 0.0, 1.0);
        m.l2_normalize_rows(NORM_EPS)
    }

    fn one_hot(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn fifo_eviction_by_hand() {
        // capacity 4: push [a,b], then [c,d,e] -> contents [b,c,d,e].
        let d = 8;
        let mut q = QueueState::new(4, d).unwrap();
        let ab = Matrix::from_rows(&[one_hot(d, 0), one_hot(d, 1)]).unwrap();
        q.push_batch(&ab, &[0, 1]).unwrap();
        let cde =
            Matrix::from_rows(&[one_hot(d, 2), one_hot(d, 3), one_hot(d, 4)]).unwrap();
        q.push_batch(&cde, &[2, 3, 4]).unwrap();
        assert_eq!(q.fill(), 4);
        assert_eq!(q.ids(), &[1, 2, 3, 4]);
        for (r, want) in [1usize, 2, 3, 4].iter().enumerate() {
            assert_eq!(q.entry(r), one_hot(d, *want).as_slice());
        }
    }

    #[test]
    fn empty_push_is_a_no_op() {
        let mut q = QueueState::new(4, 3).unwrap();
        let keys = unit_rows(&mut Rng::new(1), 2, 3);
        q.push_batch(&keys, &[7, 8]).unwrap();
        let before = (q.snapshot(), q.ids().to_vec());
        q.push_batch(&Matrix::zeros(0, 3), &[]).unwrap();
        assert_eq!(q.snapshot(), before.0);
        assert_eq!(q.ids(), before.1.as_slice());
    }

    #[test]
    fn matches_deque_oracle_over_random_ops() {
        let mut rng = Rng::new(99);
        let cap = 16;
        let d = 4;
        let mut q = QueueState::new(cap, d).unwrap();
        let mut oracle: VecDeque<(Vec<f64>, usize)> = VecDeque::new();
        let mut next_id = 0;
        for _ in 0..1000 {
            let batch = rng.below(cap + 1);
            let keys = unit_rows(&mut rng, batch, d);
            let ids: Vec<usize> = (next_id..next_id + batch).collect();
            next_id += batch;
            q.push_batch(&keys, &ids).unwrap();
            for (r, &id) in ids.iter().enumerate() {
                oracle.push_back((keys.row(r).to_vec(), id));
                if oracle.len() > cap {
                    oracle.pop_front();
                }
            }
            assert_eq!(q.fill(), oracle.len());
            for (r, (row, id)) in oracle.iter().enumerate() {
                assert_eq!(q.entry(r), row.as_slice());
                assert_eq!(q.ids()[r], *id);
            }
        }
    }

    #[test]
    fn rejects_oversized_batch_and_dim_mismatch() {
        let mut q = QueueState::new(2, 3).unwrap();
        let too_many = unit_rows(&mut Rng::new(2), 3, 3);
        assert!(matches!(
            q.push_batch(&too_many, &[0, 1, 2]),
            Err(CoclrError::InvalidArgument(_))
        ));
        let wrong_dim = unit_rows(&mut Rng::new(3), 1, 4);
        assert!(matches!(
            q.push_batch(&wrong_dim, &[0]),
            Err(CoclrError::DimMismatch(_))
        ));
        let keys = unit_rows(&mut Rng::new(4), 2, 3);
        assert!(q.push_batch(&keys, &[0]).is_err());
    }

    #[test]
    fn rejects_non_unit_rows() {
        let mut q = QueueState::new(4, 3).unwrap();
        let mut keys = unit_rows(&mut Rng::new(5), 1, 3);
        for v in keys.data_mut() {
            *v *= 1.5;
        }
        assert!(q.push_batch(&keys, &[0]).is_err());
    }

    #[test]
    fn similarity_identical_and_orthogonal_rows() {
        let d = 4;
        let mut q = QueueState::new(4, d).unwrap();
        let stored = Matrix::from_rows(&[one_hot(d, 0), one_hot(d, 1)]).unwrap();
        q.push_batch(&stored, &[0, 1]).unwrap();
        let z = Matrix::from_rows(&[one_hot(d, 0), one_hot(d, 2)]).unwrap();
        let sim = q.similarity_to_queue(&z).unwrap();
        assert_eq!(sim.get(0, 0), 1.0);
        assert_eq!(sim.get(0, 1), 0.0);
        assert_eq!(sim.get(1, 0), 0.0);
        assert_eq!(sim.get(1, 1), 0.0);
    }

    #[test]
    fn similarity_matches_dense_oracle() {
        let mut rng = Rng::new(6);
        let mut q = QueueState::new(8, 5).unwrap();
        q.push_batch(&unit_rows(&mut rng, 6, 5), &[0, 1, 2, 3, 4, 5])
            .unwrap();
        let z = unit_rows(&mut rng, 3, 5);
        let sim = q.similarity_to_queue(&z).unwrap();
        let oracle = z.matmul_transposed(&q.snapshot()).unwrap();
        assert!(sim.max_abs_diff(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn empty_queue_error_is_distinct_from_dim_mismatch() {
        let q = QueueState::new(4, 3).unwrap();
        let z = unit_rows(&mut Rng::new(7), 2, 3);
        assert!(matches!(
            q.similarity_to_queue(&z),
            Err(CoclrError::EmptyQueue(_))
        ));
        let mut q = QueueState::new(4, 3).unwrap();
        q.push_batch(&unit_rows(&mut Rng::new(8), 1, 3), &[0])
            .unwrap();
        let bad = unit_rows(&mut Rng::new(9), 2, 4);
        assert!(matches!(
            q.similarity_to_queue(&bad),
            Err(CoclrError::DimMismatch(_))
        ));
    }

    #[test]
    fn snapshot_dump_round_trip() {
        let mut rng = Rng::new(10);
        let mut q = QueueState::new(8, 4).unwrap();
        q.push_batch(&unit_rows(&mut rng, 5, 4), &[0, 1, 2, 3, 4])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queue.ckpt");
        q.dump_snapshot(&path).unwrap();
        let back = QueueState::load_snapshot(&path).unwrap();
        assert_eq!(back, q.snapshot());
    }

    #[test]
    fn stored_rows_stay_unit_norm() {
        let mut rng = Rng::new(11);
        let mut q = QueueState::new(8, 6).unwrap();
        for step in 0..20 {
            let keys = unit_rows(&mut rng, 3, 6);
            q.push_batch(&keys, &[step * 3, step * 3 + 1, step * 3 + 2])
                .unwrap();
            for norm in q.snapshot().row_norms() {
                assert!((norm - 1.0).abs() <= 1e-10);
            }
        }
    }
}
