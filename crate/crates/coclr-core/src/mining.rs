//! Cross-view hard-positive mining.
//!
//! Given similarities between the current batch (embedded by the *other*
//! view's frozen encoder) and the other view's queue, the top-K most similar
//! queue entries of each sample are declared positives. The resulting mask
//! shares its column layout with the logits: column 0 is the sample's own
//! augmentation, columns 1.. are queue entries in storage order.

use crate::error::{CoclrError, Result};
use crate::numerics::Matrix;

/// Boolean positive mask of shape `N x (1 + fill)`.
///
/// Column 0 (the self-augmentation positive) is always true.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositiveMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl PositiveMask {
    /// Mask with only the self column set: the InfoNCE positive set.
    pub fn self_only(rows: usize, fill: usize) -> Self {
        let cols = 1 + fill;
        let mut data = vec![false; rows * cols];
        for r in 0..rows {
            data[r * cols] = true;
        }
        Self { rows, cols, data }
    }

    /// Build from full rows including the self column. Unlike the mining
    /// constructors this does not force column 0 true; it exists for oracle
    /// masks in tests. Rows must be rectangular and nonempty.
    pub fn from_bool_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(CoclrError::DimMismatch(
                "from_bool_rows: empty or ragged rows".into(),
            ));
        }
        Ok(Self {
            rows: n,
            cols,
            data: rows.concat(),
        })
    }

    /// Build from explicit queue-column flags (used by label-oracle masks).
    /// `queue_flags` has one row per sample and one flag per queue entry.
    pub fn from_queue_flags(queue_flags: &[Vec<bool>]) -> Result<Self> {
        let rows = queue_flags.len();
        let fill = queue_flags.first().map_or(0, Vec::len);
        if queue_flags.iter().any(|r| r.len() != fill) {
            return Err(CoclrError::DimMismatch(
                "from_queue_flags: ragged rows".into(),
            ));
        }
        let mut mask = Self::self_only(rows, fill);
        for (r, flags) in queue_flags.iter().enumerate() {
            for (j, &f) in flags.iter().enumerate() {
                mask.data[r * mask.cols + 1 + j] = f;
            }
        }
        Ok(mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Number of true entries in row `r`.
    pub fn true_count(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&b| b).count()
    }
}

/// Per row, the indices of the `k` largest entries in descending-similarity
/// order; ties broken toward the lowest index.
pub fn topk_indices(sim: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > sim.cols() {
        return Err(CoclrError::InvalidArgument(format!(
            "topk_indices: k {} outside [1, {}]",
            k,
            sim.cols()
        )));
    }
    let mut out = Vec::with_capacity(sim.rows());
    for r in 0..sim.rows() {
        let row = sim.row(r);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("similarities are finite")
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        out.push(idx);
    }
    Ok(out)
}

/// Positive mask from cross-view similarities: column 0 true, plus a one-hot
/// top-K selection over the queue columns.
pub fn build_mask(cross_view_sim: &Matrix, k: usize) -> Result<PositiveMask> {
    let picks = topk_indices(cross_view_sim, k)?;
    let mut mask = PositiveMask::self_only(cross_view_sim.rows(), cross_view_sim.cols());
    for (r, row_picks) in picks.iter().enumerate() {
        for &j in row_picks {
            mask.data[r * mask.cols + 1 + j] = true;
        }
    }
    Ok(mask)
}

/// Diagnostic quality of the mined queue positives against ground-truth
/// labels: `precision` is the fraction of mined entries sharing the query's
/// class, `recall` the fraction of same-class queue entries that were mined.
/// Both are micro-averaged over the batch; an empty denominator yields 1.0
/// (vacuously perfect). Labels never influence training.
pub fn mask_quality(
    mask: &PositiveMask,
    query_labels: &[usize],
    queue_labels: &[usize],
) -> Result<(f64, f64)> {
    if query_labels.len() != mask.rows() {
        return Err(CoclrError::DimMismatch(format!(
            "mask_quality: {} query labels for {} mask rows",
            query_labels.len(),
            mask.rows()
        )));
    }
    if queue_labels.len() + 1 != mask.cols() {
        return Err(CoclrError::DimMismatch(format!(
            "mask_quality: {} queue labels for {} queue columns",
            queue_labels.len(),
            mask.cols() - 1
        )));
    }
    let mut mined = 0usize;
    let mut mined_correct = 0usize;
    let mut same_class = 0usize;
    for (r, &qy) in query_labels.iter().enumerate() {
        for (j, &gy) in queue_labels.iter().enumerate() {
            let is_mined = mask.get(r, 1 + j);
            let is_match = gy == qy;
            mined += is_mined as usize;
            mined_correct += (is_mined && is_match) as usize;
            same_class += is_match as usize;
        }
    }
    let precision = if mined == 0 {
        1.0
    } else {
        mined_correct as f64 / mined as f64
    };
    let recall = if same_class == 0 {
        1.0
    } else {
        mined_correct as f64 / same_class as f64
    };
    Ok((precision, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn topk_trivial_rows() {
        let sim = Matrix::from_rows(&[vec![0.1, 0.9, 0.5]]).unwrap();
        assert_eq!(topk_indices(&sim, 1).unwrap(), vec![vec![1]]);
        assert_eq!(topk_indices(&sim, 3).unwrap(), vec![vec![1, 2, 0]]);
    }

    #[test]
    fn topk_ties_break_toward_lowest_index() {
        let sim = Matrix::from_rows(&[vec![0.5, 0.7, 0.7, 0.5]]).unwrap();
        assert_eq!(topk_indices(&sim, 1).unwrap(), vec![vec![1]]);
        assert_eq!(topk_indices(&sim, 3).unwrap(), vec![vec![1, 2, 0]]);
    }

    #[test]
    fn topk_rejects_out_of_range_k() {
        let sim = Matrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        assert!(topk_indices(&sim, 0).is_err());
        assert!(topk_indices(&sim, 3).is_err());
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = Rng::new(31);
        let mut sim = Matrix::zeros(64, 512);
        rng.fill_uniform_in(&mut sim, -1.0, 1.0);
        let got = topk_indices(&sim, 5).unwrap();
        for r in 0..sim.rows() {
            // Oracle: decorate-sort the whole row.
            let row = sim.row(r);
            let mut all: Vec<usize> = (0..row.len()).collect();
            all.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            assert_eq!(got[r], all[..5]);
        }
    }

    #[test]
    fn topk_is_scale_invariant() {
        let mut rng = Rng::new(32);
        let mut sim = Matrix::zeros(8, 20);
        rng.fill_uniform_in(&mut sim, -1.0, 1.0);
        let base = topk_indices(&sim, 4).unwrap();
        for c in [0.5, 2.0, 1e6] {
            let scaled = sim.scale(c).unwrap();
            assert_eq!(topk_indices(&scaled, 4).unwrap(), base);
        }
    }

    #[test]
    fn build_mask_single_row() {
        let sim = Matrix::from_rows(&[vec![0.2, 0.8, 0.5]]).unwrap();
        let mask = build_mask(&sim, 1).unwrap();
        assert_eq!(mask.row(0), &[true, false, true, false]);
    }

    #[test]
    fn build_mask_k_equals_fill_is_all_true() {
        let sim = Matrix::from_rows(&[vec![0.2, 0.8, 0.5], vec![-1.0, 0.0, 1.0]]).unwrap();
        let mask = build_mask(&sim, 3).unwrap();
        for r in 0..2 {
            assert!(mask.row(r).iter().all(|&b| b));
        }
    }

    #[test]
    fn build_mask_row_counts_and_topk_agreement() {
        let mut rng = Rng::new(33);
        let mut sim = Matrix::zeros(16, 40);
        rng.fill_uniform_in(&mut sim, -1.0, 1.0);
        let k = 5;
        let mask = build_mask(&sim, k).unwrap();
        let picks = topk_indices(&sim, k).unwrap();
        for r in 0..16 {
            assert!(mask.get(r, 0));
            assert_eq!(mask.true_count(r), 1 + k);
            let from_mask: Vec<usize> =
                (0..40).filter(|&j| mask.get(r, 1 + j)).collect();
            let mut from_topk = picks[r].clone();
            from_topk.sort_unstable();
            assert_eq!(from_mask, from_topk);
        }
    }

    #[test]
    fn build_mask_is_deterministic() {
        let mut rng = Rng::new(34);
        let mut sim = Matrix::zeros(6, 15);
        rng.fill_uniform_in(&mut sim, -1.0, 1.0);
        assert_eq!(build_mask(&sim, 3).unwrap(), build_mask(&sim, 3).unwrap());
    }

    #[test]
    fn self_only_mask_shape() {
        let m = PositiveMask::self_only(3, 4);
        assert_eq!((m.rows(), m.cols()), (3, 5));
        for r in 0..3 {
            assert_eq!(m.true_count(r), 1);
            assert!(m.get(r, 0));
        }
    }

    #[test]
    fn mask_quality_extremes() {
        let sim = Matrix::from_rows(&[vec![0.9, 0.8, 0.1]]).unwrap();
        let mask = build_mask(&sim, 2).unwrap();
        // Both mined entries (columns 0 and 1 of the queue) share class 3.
        let (p, _) = mask_quality(&mask, &[3], &[3, 3, 0]).unwrap();
        assert_eq!(p, 1.0);
        // Neither mined entry matches.
        let (p, r) = mask_quality(&mask, &[3], &[1, 2, 3]).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn mask_quality_matches_hand_count() {
        let mut rng = Rng::new(35);
        let mut sim = Matrix::zeros(10, 30);
        rng.fill_uniform_in(&mut sim, -1.0, 1.0);
        let mask = build_mask(&sim, 5).unwrap();
        let query_labels: Vec<usize> = (0..10).map(|_| rng.below(4)).collect();
        let queue_labels: Vec<usize> = (0..30).map(|_| rng.below(4)).collect();
        let (p, rec) = mask_quality(&mask, &query_labels, &queue_labels).unwrap();

        let mut mined = 0;
        let mut hit = 0;
        let mut avail = 0;
        for (r, &qy) in query_labels.iter().enumerate() {
            for (j, &gy) in queue_labels.iter().enumerate() {
                if gy == qy {
                    avail += 1;
                }
                if mask.get(r, 1 + j) {
                    mined += 1;
                    if gy == qy {
                        hit += 1;
                    }
                }
            }
        }
        assert_eq!(p, hit as f64 / mined as f64);
        assert_eq!(rec, hit as f64 / avail as f64);
    }

    #[test]
    fn mask_quality_rejects_misaligned_labels() {
        let mask = PositiveMask::self_only(2, 3);
        assert!(mask_quality(&mask, &[0], &[0, 1, 2]).is_err());
        assert!(mask_quality(&mask, &[0, 1], &[0, 1]).is_err());
    }
}
