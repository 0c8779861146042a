//! Contrastive objectives with analytic gradients.
//!
//! All losses operate on a [`LogitsBlock`]: temperature-scaled similarities
//! of each query against its own key (column 0) and the queue (columns 1..).
//! InfoNCE, UberNCE, and CoCLR's Multi-Instance InfoNCE are all the same
//! masked-softmax computation with different positive masks; InfoNCE uses the
//! self-only mask and UberNCE the label-oracle mask, so there is exactly one
//! loss code path. Gradients flow only to the query embeddings — keys and
//! queue entries are constants.

use crate::error::{CoclrError, Result};
use crate::mining::PositiveMask;
use crate::numerics::Matrix;
use crate::queue::QueueState;

/// Temperature-scaled logits plus the constants needed to push gradients
/// back to the query embeddings.
#[derive(Clone, Debug)]
pub struct LogitsBlock {
    /// `N x (1 + fill)`; already divided by the temperature.
    logits: Matrix,
    tau: f64,
    /// Key embeddings, `N x d` (column 0's partners).
    zk: Matrix,
    /// Queue snapshot, `fill x d` (columns 1.. partners).
    queue: Matrix,
}

/// Scalar loss (batch mean) and its gradient at the query embeddings.
#[derive(Clone, Debug)]
pub struct LossResult {
    pub loss: f64,
    pub d_zq: Matrix,
}

impl LogitsBlock {
    /// Assemble from raw parts. Exists for tests that need hand-built logits;
    /// training always goes through [`build_logits`].
    pub fn from_parts(logits: Matrix, tau: f64, zk: Matrix, queue: Matrix) -> Result<Self> {
        if tau <= 0.0 {
            return Err(CoclrError::InvalidArgument(format!(
                "temperature {tau} must be positive"
            )));
        }
        if logits.cols() != 1 + queue.rows() || logits.rows() != zk.rows() {
            return Err(CoclrError::DimMismatch(format!(
                "logits {}x{} vs {} keys and {} queue rows",
                logits.rows(),
                logits.cols(),
                zk.rows(),
                queue.rows()
            )));
        }
        if queue.rows() > 0 && queue.cols() != zk.cols() {
            return Err(CoclrError::DimMismatch(format!(
                "key dim {} vs queue dim {}",
                zk.cols(),
                queue.cols()
            )));
        }
        Ok(Self {
            logits,
            tau,
            zk,
            queue,
        })
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of queue columns.
    pub fn fill(&self) -> usize {
        self.logits.cols() - 1
    }
}

/// Column 0 = `diag(zq zk^T) / tau`; columns 1.. = `zq queue^T / tau`.
///
/// An empty queue is legal and yields a single-column block. `zq` and `zk`
/// are expected rowwise unit-norm in normal use but this is not enforced, so
/// gradients can be checked by off-sphere finite differences.
pub fn build_logits(zq: &Matrix, zk: &Matrix, q: &QueueState, tau: f64) -> Result<LogitsBlock> {
    if tau <= 0.0 {
        return Err(CoclrError::InvalidArgument(format!(
            "temperature {tau} must be positive"
        )));
    }
    if zq.shape() != zk.shape() {
        return Err(CoclrError::DimMismatch(format!(
            "build_logits: queries {}x{} vs keys {}x{}",
            zq.rows(),
            zq.cols(),
            zk.rows(),
            zk.cols()
        )));
    }
    let n = zq.rows();
    let fill = q.fill();
    let mut logits = Matrix::zeros(n, 1 + fill);
    let l_current = zq.row_dots(zk)?;
    for (i, &l) in l_current.iter().enumerate() {
        logits.set(i, 0, l / tau);
    }
    if fill > 0 {
        let l_history = q.similarity_to_queue(zq)?;
        for i in 0..n {
            for j in 0..fill {
                logits.set(i, 1 + j, l_history.get(i, j) / tau);
            }
        }
    } else if zq.cols() != q.dim() {
        return Err(CoclrError::DimMismatch(format!(
            "build_logits: embedding dim {} vs queue dim {}",
            zq.cols(),
            q.dim()
        )));
    }
    LogitsBlock::from_parts(logits, tau, zk.clone(), q.snapshot())
}

/// Multi-Instance InfoNCE: per row, `-log` of the positive softmax mass,
/// averaged over the batch.
///
/// Positive mass is computed as a ratio of shifted-exponential sums that
/// share one max and one accumulation order, so an all-true mask gives a loss
/// of exactly zero. The gradient at logit j is
/// `softmax_j - [j positive] * softmax_j / mass`, mapped back to the query
/// embeddings through the similarity products.
pub fn mil_nce(block: &LogitsBlock, mask: &PositiveMask) -> Result<LossResult> {
    let logits = &block.logits;
    let (n, cols) = logits.shape();
    if mask.rows() != n || mask.cols() != cols {
        return Err(CoclrError::DimMismatch(format!(
            "mil_nce: mask {}x{} vs logits {}x{}",
            mask.rows(),
            mask.cols(),
            n,
            cols
        )));
    }
    let mut total = 0.0;
    let mut d_logits = Matrix::zeros(n, cols);
    for i in 0..n {
        let row = logits.row(i);
        let mrow = mask.row(i);
        if !mrow.iter().any(|&b| b) {
            return Err(CoclrError::InvalidArgument(format!(
                "mil_nce: row {i} has no positive; loss undefined"
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // One pass in index order for both sums: identical masks give
        // bitwise-identical sums, hence an exact zero loss.
        let mut s_all = 0.0;
        let mut s_pos = 0.0;
        let nums: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
        for (j, &num) in nums.iter().enumerate() {
            s_all += num;
            if mrow[j] {
                s_pos += num;
            }
        }
        total += s_all.ln() - s_pos.ln();
        for (j, &num) in nums.iter().enumerate() {
            let g = num / s_all - if mrow[j] { num / s_pos } else { 0.0 };
            d_logits.set(i, j, g / n as f64);
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(CoclrError::NonFinite(format!("mil_nce loss {loss}")));
    }

    // Back through build_logits: l_{i,0} = <zq_i, zk_i>/tau and
    // l_{i,1+j} = <zq_i, queue_j>/tau.
    let d = block.zk.cols();
    let mut d_zq = Matrix::zeros(n, d);
    for i in 0..n {
        let g0 = d_logits.get(i, 0) / block.tau;
        let key = block.zk.row(i);
        let out = d_zq.row_mut(i);
        for (o, &k) in out.iter_mut().zip(key) {
            *o = g0 * k;
        }
        for j in 0..block.queue.rows() {
            let gj = d_logits.get(i, 1 + j) / block.tau;
            if gj == 0.0 {
                continue;
            }
            let qrow = block.queue.row(j);
            let out = d_zq.row_mut(i);
            for (o, &qv) in out.iter_mut().zip(qrow) {
                *o += gj * qv;
            }
        }
    }
    Ok(LossResult { loss, d_zq })
}

/// Plain InfoNCE: MIL-NCE with the self-only positive mask. Agrees bitwise
/// with [`mil_nce`] on identical inputs by construction.
pub fn info_nce(block: &LogitsBlock) -> Result<LossResult> {
    let mask = PositiveMask::self_only(block.logits.rows(), block.fill());
    mil_nce(block, &mask)
}

/// Label-oracle positive mask: column 0 plus every queue entry of the
/// query's own class. Feeding this to [`mil_nce`] *is* the UberNCE loss;
/// there is no separate code path.
pub fn uber_nce_mask(query_labels: &[usize], queue_labels: &[usize]) -> Result<PositiveMask> {
    let flags: Vec<Vec<bool>> = query_labels
        .iter()
        .map(|&qy| queue_labels.iter().map(|&gy| gy == qy).collect())
        .collect();
    PositiveMask::from_queue_flags(&flags)
}

/// CMC-style cross-view instance loss: the positive for query `z1_i` is the
/// other view's embedding `z2_i`, negatives come from the other view's queue.
/// Gradients flow to `z1` only.
pub fn cmc_cross_view(
    z1: &Matrix,
    z2: &Matrix,
    q_other: &QueueState,
    tau: f64,
) -> Result<LossResult> {
    let block = build_logits(z1, z2, q_other, tau)?;
    info_nce(&block)
}
