//! Downstream evaluation protocols: linear probe, nearest-neighbour
//! retrieval, two-stream fusion, and end-to-end finetuning.
//!
//! Probes and retrieval consume frozen features (normalized backbone outputs
//! with the projection head removed); they never touch encoder parameters.

use crate::encoder::{Activation, Grads, Layer, MlpParams};
use crate::error::{CoclrError, Result};
use crate::numerics::Matrix;

/// Linear-probe (and finetune) report.
#[derive(Clone, Debug)]
pub struct ProbeResult {
    /// Top-1 accuracy, exactly correct/total.
    pub accuracy: f64,
    /// Trained classifier weights, `(d x C)`.
    pub weights: Matrix,
    /// Trained classifier bias, length C.
    pub bias: Vec<f64>,
    /// Per-class accuracy; 0.0 for classes absent from the test set.
    pub per_class: Vec<f64>,
}

/// Recall-at-k results, monotone nondecreasing in k.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub ks: Vec<usize>,
    pub recalls: Vec<f64>,
}

impl RetrievalResult {
    /// R@k for one of the requested cutoffs.
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks
            .iter()
            .position(|&kk| kk == k)
            .map(|i| self.recalls[i])
    }
}

/// Probe training hyperparameters: full-batch gradient descent on softmax
/// cross-entropy with L2-regularized weights (bias unregularized).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeHyper {
    pub lr: f64,
    pub steps: usize,
    pub l2: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            lr: 1.0,
            steps: 400,
            l2: 1e-4,
        }
    }
}

/// Finetune hyperparameters: joint full-batch descent on backbone + head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneHyper {
    pub lr: f64,
    pub steps: usize,
    /// L2 on the classifier head.
    pub l2: f64,
    /// Decoupled weight decay on the backbone.
    pub weight_decay: f64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        Self {
            lr: 0.1,
            steps: 300,
            l2: 1e-4,
            weight_decay: 1e-5,
        }
    }
}

fn count_classes(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// Mean softmax cross-entropy of a linear classifier plus `l2/2 * |w|^2`,
/// with gradients for the weights, bias, and (for finetuning) the features.
///
/// Exposed so gradient suites can check it against finite differences.
pub fn probe_loss_and_grad(
    features: &Matrix,
    labels: &[usize],
    w: &Matrix,
    bias: &[f64],
    l2: f64,
) -> Result<(f64, Grads, Matrix)> {
    let n = features.rows();
    if labels.len() != n {
        return Err(CoclrError::DimMismatch(format!(
            "probe: {} labels for {} rows",
            labels.len(),
            n
        )));
    }
    let c = w.cols();
    if bias.len() != c || features.cols() != w.rows() {
        return Err(CoclrError::DimMismatch(format!(
            "probe: features {}x{}, weights {}x{}, bias {}",
            n,
            features.cols(),
            w.rows(),
            w.cols(),
            bias.len()
        )));
    }
    if labels.iter().any(|&y| y >= c) {
        return Err(CoclrError::InvalidArgument(
            "probe: label out of range".into(),
        ));
    }
    let mut logits = features.matmul(w)?;
    for r in 0..n {
        for (v, b) in logits.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    let probs = logits.softmax_rows()?;
    let mut loss = 0.0;
    let mut d_logits = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        loss -= probs.get(r, y).ln();
        d_logits.set(r, y, d_logits.get(r, y) - 1.0);
    }
    loss /= n as f64;
    let mut w_sq = 0.0;
    for v in w.data() {
        w_sq += v * v;
    }
    loss += 0.5 * l2 * w_sq;

    let scale = 1.0 / n as f64;
    let d_logits = d_logits.scale(scale)?;
    let mut dw = features.transpose().matmul(&d_logits)?;
    for (g, &p) in dw.data_mut().iter_mut().zip(w.data()) {
        *g += l2 * p;
    }
    let db = d_logits.col_sums();
    let d_features = d_logits.matmul_transposed(w)?;
    let grads = Grads {
        layers: vec![(dw, db)],
    };
    Ok((loss, grads, d_features))
}

/// Top-1 predictions of a linear classifier; argmax ties resolve to the
/// lowest class index.
fn predict(features: &Matrix, w: &Matrix, bias: &[f64]) -> Result<Vec<usize>> {
    let mut logits = features.matmul(w)?;
    let mut out = Vec::with_capacity(features.rows());
    for r in 0..features.rows() {
        let row = logits.row_mut(r);
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

fn accuracy_report(predictions: &[usize], labels: &[usize], c: usize) -> (f64, Vec<f64>) {
    let mut correct = 0usize;
    let mut per_total = vec![0usize; c];
    let mut per_correct = vec![0usize; c];
    for (&p, &y) in predictions.iter().zip(labels) {
        per_total[y] += 1;
        if p == y {
            correct += 1;
            per_correct[y] += 1;
        }
    }
    let acc = correct as f64 / labels.len() as f64;
    let per_class = per_total
        .iter()
        .zip(&per_correct)
        .map(|(&t, &c)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    (acc, per_class)
}

/// Multinomial logistic regression on frozen features: full-batch gradient
/// descent from zero initialization, fixed step budget, no randomness.
pub fn linear_probe(
    train_features: &Matrix,
    train_labels: &[usize],
    test_features: &Matrix,
    test_labels: &[usize],
    hyper: &ProbeHyper,
) -> Result<ProbeResult> {
    if train_features.rows() == 0 || test_features.rows() == 0 {
        return Err(CoclrError::InvalidArgument("probe: empty split".into()));
    }
    let c = count_classes(train_labels).max(count_classes(test_labels));
    let distinct = {
        let mut seen = vec![false; c];
        for &y in train_labels {
            seen[y] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(CoclrError::InvalidArgument(
            "probe: training set has a single class".into(),
        ));
    }
    let d = train_features.cols();
    let mut w = Matrix::zeros(d, c);
    let mut bias = vec![0.0; c];
    for _ in 0..hyper.steps {
        let (_, grads, _) = probe_loss_and_grad(train_features, train_labels, &w, &bias, hyper.l2)?;
        let (dw, db) = &grads.layers[0];
        for (p, &g) in w.data_mut().iter_mut().zip(dw.data()) {
            *p -= hyper.lr * g;
        }
        for (p, &g) in bias.iter_mut().zip(db) {
            *p -= hyper.lr * g;
        }
    }
    let predictions = predict(test_features, &w, &bias)?;
    let (accuracy, per_class) = accuracy_report(&predictions, test_labels, c);
    Ok(ProbeResult {
        accuracy,
        weights: w,
        bias,
        per_class,
    })
}

/// R@k from a precomputed query-by-gallery similarity matrix. Ranking is by
/// descending similarity with ties broken toward the lowest gallery index; a
/// query scores at cutoff k if any of its top k gallery rows shares its class.
pub fn retrieval_from_sim(
    sim: &Matrix,
    query_labels: &[usize],
    gallery_labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult> {
    let (nq, ng) = sim.shape();
    if ng == 0 {
        return Err(CoclrError::InvalidArgument("retrieval: empty gallery".into()));
    }
    if query_labels.len() != nq || gallery_labels.len() != ng {
        return Err(CoclrError::DimMismatch(format!(
            "retrieval: labels ({}, {}) vs similarity {}x{}",
            query_labels.len(),
            gallery_labels.len(),
            nq,
            ng
        )));
    }
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoclrError::InvalidArgument(
            "retrieval: cutoffs must be strictly increasing and nonempty".into(),
        ));
    }
    if *ks.last().unwrap() > ng {
        return Err(CoclrError::InvalidArgument(format!(
            "retrieval: cutoff {} exceeds gallery size {ng}",
            ks.last().unwrap()
        )));
    }
    let kmax = *ks.last().unwrap();
    let mut hits = vec![0usize; ks.len()];
    for qi in 0..nq {
        let row = sim.row(qi);
        let mut order: Vec<usize> = (0..ng).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("similarities are finite")
                .then(a.cmp(&b))
        });
        // First rank (1-based) at which a same-class item appears.
        let first_hit = order[..kmax]
            .iter()
            .position(|&g| gallery_labels[g] == query_labels[qi]);
        if let Some(pos) = first_hit {
            for (i, &k) in ks.iter().enumerate() {
                if pos < k {
                    hits[i] += 1;
                }
            }
        }
    }
    let recalls = hits.iter().map(|&h| h as f64 / nq as f64).collect();
    Ok(RetrievalResult {
        ks: ks.to_vec(),
        recalls,
    })
}

/// Cosine-similarity R@k of query features against a gallery.
pub fn retrieval(
    query_features: &Matrix,
    query_labels: &[usize],
    gallery_features: &Matrix,
    gallery_labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult> {
    let sim = query_features.matmul_transposed(gallery_features)?;
    retrieval_from_sim(&sim, query_labels, gallery_labels, ks)
}

/// Two-stream fusion: the elementwise mean of two similarity (or logit)
/// matrices.
pub fn two_stream_fuse(sim1: &Matrix, sim2: &Matrix) -> Result<Matrix> {
    sim1.add(sim2)?.scale(0.5)
}

/// End-to-end finetune: initialize from `params` truncated to the backbone,
/// attach a zero-initialized linear head on the normalized features, and
/// descend jointly on the full training split. Deterministic: no randomness
/// anywhere in the path.
pub fn finetune(
    params: &MlpParams,
    backbone_layers: usize,
    train_x: &Matrix,
    train_labels: &[usize],
    test_x: &Matrix,
    test_labels: &[usize],
    hyper: &FinetuneHyper,
) -> Result<ProbeResult> {
    let mut backbone = params.truncate(backbone_layers)?;
    let c = count_classes(train_labels).max(count_classes(test_labels));
    if c < 2 {
        return Err(CoclrError::InvalidArgument(
            "finetune: need at least two classes".into(),
        ));
    }
    let d = backbone.output_dim();
    let mut head = MlpParams {
        layers: vec![Layer {
            weight: Matrix::zeros(d, c),
            bias: vec![0.0; c],
            activation: Activation::Linear,
        }],
    };
    for _ in 0..hyper.steps {
        let (features, tape) = backbone.forward(train_x, true)?;
        let (_, head_grads, d_features) = probe_loss_and_grad(
            &features,
            train_labels,
            &head.layers[0].weight,
            &head.layers[0].bias,
            hyper.l2,
        )?;
        let backbone_grads = backbone.backward(tape.as_ref().unwrap(), &d_features)?;
        backbone.sgd_step(&backbone_grads, hyper.lr, hyper.weight_decay)?;
        head.sgd_step(&head_grads, hyper.lr, 0.0)?;
    }
    let (test_features, _) = backbone.forward(test_x, false)?;
    let predictions = predict(&test_features, &head.layers[0].weight, &head.layers[0].bias)?;
    let (accuracy, per_class) = accuracy_report(&predictions, test_labels, c);
    Ok(ProbeResult {
        accuracy,
        weights: head.layers[0].weight.clone(),
        bias: head.layers[0].bias.clone(),
        per_class,
    })
}
