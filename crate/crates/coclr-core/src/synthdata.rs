//! Synthetic two-view dataset.
//!
//! The generator reproduces the premise that makes co-training work: the two
//! views of a sample carry the same class but wildly different amounts of
//! recoverable structure. View 2 is easy — class means are orthonormal unit
//! vectors with small isotropic noise, so raw nearest neighbours are almost
//! always same-class. View 1 is hard — the class signal occupies a minority
//! of coordinates while high-variance per-sample nuisance dimensions dominate
//! every raw distance, so instance discrimination latches onto sample
//! identity instead of class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoclrError, Result};
use crate::numerics::{dot, Matrix, Rng};

/// Generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoViewSpec {
    /// Number of classes C.
    pub n_classes: usize,
    /// Samples per class (N = n_classes * per_class).
    pub per_class: usize,
    /// View-1 width; the first `d1_signal` coordinates carry class signal,
    /// the rest are per-sample nuisance.
    pub d1: usize,
    /// Width of the signal block; must be >= n_classes so class means can be
    /// orthonormal (and should stay a minority of d1).
    pub d1_signal: usize,
    /// View-2 width; must be >= n_classes so class means can be orthonormal.
    pub d2: usize,
    /// Noise on the view-1 signal block.
    pub sigma_sig: f64,
    /// Spread of the view-1 nuisance block (dominates raw distances).
    pub sigma_nuis: f64,
    /// Cluster spread of view 2.
    pub sigma2: f64,
    /// Cosine similarity between the view-2 means of paired classes
    /// (class 2p and 2p+1). Zero keeps all view-2 means orthonormal; a
    /// positive value makes each pair mutually confusable — mining mistakes
    /// then concentrate on the paired class instead of spreading uniformly.
    pub pair_correlation: f64,
    /// Stratified train fraction.
    pub train_fraction: f64,
}

impl Default for TwoViewSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            per_class: 40,
            d1: 32,
            d1_signal: 10,
            d2: 16,
            sigma_sig: 0.15,
            // Calibrated so instance discrimination cannot solve view 1 by
            // matching nuisance fingerprints, while raw 1-NN still trails
            // view 2 by a wide margin (see the separation-margin test).
            sigma_nuis: 0.75,
            // View 2 is kept tight: nearest-neighbour mining in a trained
            // view-2 space must be reliable for small K, and fused retrieval
            // must not be dragged below the view-2 stream by view-1 noise.
            sigma2: 0.10,
            pair_correlation: 0.0,
            train_fraction: 0.8,
        }
    }
}

impl TwoViewSpec {
    pub fn n_samples(&self) -> usize {
        self.n_classes * self.per_class
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(CoclrError::InvalidArgument(
                "spec: need at least 2 classes".into(),
            ));
        }
        if self.per_class < 2 {
            return Err(CoclrError::InvalidArgument(
                "spec: need at least 2 samples per class so hard positives exist".into(),
            ));
        }
        if self.d1 < 2 || self.d2 < 2 {
            return Err(CoclrError::InvalidArgument(
                "spec: view dims must be at least 2".into(),
            ));
        }
        if self.d1_signal == 0 || self.d1_signal > self.d1 {
            return Err(CoclrError::InvalidArgument(format!(
                "spec: d1_signal {} outside [1, {}]",
                self.d1_signal, self.d1
            )));
        }
        if self.d1_signal < self.n_classes || self.d2 < self.n_classes {
            return Err(CoclrError::InvalidArgument(format!(
                "spec: signal dims ({}, {}) below n_classes {} prevent orthonormal class means",
                self.d1_signal, self.d2, self.n_classes
            )));
        }
        if self.sigma_sig < 0.0 || self.sigma_nuis < 0.0 || self.sigma2 < 0.0 {
            return Err(CoclrError::InvalidArgument(
                "spec: negative noise scale".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.pair_correlation) {
            return Err(CoclrError::InvalidArgument(format!(
                "spec: pair_correlation {} outside [0, 1)",
                self.pair_correlation
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CoclrError::InvalidArgument(format!(
                "spec: train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Stochastic augmentation: additive Gaussian noise then independent
/// coordinate dropout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub sigma_aug: f64,
    pub dropout: f64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_aug < 0.0 {
            return Err(CoclrError::InvalidArgument(format!(
                "augment: sigma_aug {}",
                self.sigma_aug
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoclrError::InvalidArgument(format!(
                "augment: dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Two aligned views with labels and a stratified train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoViewDataset {
    pub spec: TwoViewSpec,
    pub view1: Matrix,
    pub view2: Matrix,
    pub labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// `count` orthonormal vectors in `dim` dimensions: Gram-Schmidt over
/// Gaussian draws, redrawing on (vanishingly rare) near-dependence.
fn orthonormal_means(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    while means.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for prev in &means {
            let proj = dot(&v, prev);
            for (vi, &pi) in v.iter_mut().zip(prev) {
                *vi -= proj * pi;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            for vi in &mut v {
                *vi /= norm;
            }
            means.push(v);
        }
    }
    means
}

/// Rotate the second mean of every class pair toward the first, so paired
/// classes sit at cosine `rho` while distinct pairs stay orthogonal. The
/// inputs must be orthonormal; unit norms are preserved.
fn correlate_pairs(means: &mut [Vec<f64>], rho: f64) {
    let ortho = (1.0 - rho * rho).sqrt();
    for p in 0..means.len() / 2 {
        let (a, b) = (2 * p, 2 * p + 1);
        for j in 0..means[b].len() {
            means[b][j] = rho * means[a][j] + ortho * means[b][j];
        }
    }
}

/// Generate a dataset. Fully determined by `spec` and the generator state.
///
/// Draw order: view-2 class means (C x d2 normals, then Gram-Schmidt, then
/// pair correlation), view-1 class means (C x d1_signal normals, orthonormal
/// only), then per sample in class-major order its signal noise, nuisance
/// block, and view-2 noise, and finally one shuffle per class for the split.
pub fn generate(spec: &TwoViewSpec, rng: &mut Rng) -> Result<TwoViewDataset> {
    spec.validate()?;
    let c = spec.n_classes;
    let n = spec.n_samples();

    let mut means2 = orthonormal_means(c, spec.d2, rng);
    correlate_pairs(&mut means2, spec.pair_correlation);
    let means1 = orthonormal_means(c, spec.d1_signal, rng);

    let mut view1 = Matrix::zeros(n, spec.d1);
    let mut view2 = Matrix::zeros(n, spec.d2);
    let mut labels = Vec::with_capacity(n);
    for class in 0..c {
        for s in 0..spec.per_class {
            let row = class * spec.per_class + s;
            labels.push(class);
            let r1 = view1.row_mut(row);
            for (j, r) in r1.iter_mut().enumerate().take(spec.d1_signal) {
                *r = means1[class][j] + spec.sigma_sig * rng.normal();
            }
            for r in r1.iter_mut().skip(spec.d1_signal) {
                *r = spec.sigma_nuis * rng.normal();
            }
            let r2 = view2.row_mut(row);
            for (j, r) in r2.iter_mut().enumerate() {
                *r = means2[class][j] + spec.sigma2 * rng.normal();
            }
        }
    }

    // Stratified split: shuffle each class's rows, take the front for train.
    let per_train = ((spec.per_class as f64 * spec.train_fraction).round() as usize)
        .clamp(1, spec.per_class - 1);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..c {
        let mut rows: Vec<usize> =
            (class * spec.per_class..(class + 1) * spec.per_class).collect();
        rng.shuffle(&mut rows);
        train_idx.extend_from_slice(&rows[..per_train]);
        test_idx.extend_from_slice(&rows[per_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(TwoViewDataset {
        spec: spec.clone(),
        view1,
        view2,
        labels,
        train_idx,
        test_idx,
    })
}

/// Apply additive Gaussian noise, then independent coordinate dropout. Both
/// passes sweep row-major and always consume their draws, so the stream
/// position never depends on the parameter values.
pub fn augment(x: &Matrix, spec: &AugmentSpec, rng: &mut Rng) -> Result<Matrix> {
    spec.validate()?;
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += spec.sigma_aug * rng.normal();
    }
    for v in out.data_mut() {
        if rng.uniform() < spec.dropout {
            *v = 0.0;
        }
    }
    Ok(out)
}

impl TwoViewDataset {
    /// Rows of `view` selected by `idx`, in the given order.
    pub fn gather(view: &Matrix, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), view.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(view.row(i));
        }
        out
    }

    /// Labels selected by `idx`, in the given order.
    pub fn gather_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Serialize to the columnar text format:
    /// line 1 magic, line 2 the spec as JSON, then one line per sample:
    /// `label split v1_0 .. v1_{d1-1} v2_0 .. v2_{d2-1}`. Floats are written
    /// in shortest round-trip form, so import is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("coclr-dataset v1\n");
        out.push_str(&serde_json::to_string(&self.spec).expect("spec serializes"));
        out.push('\n');
        let is_train: Vec<bool> = {
            let mut v = vec![false; self.labels.len()];
            for &i in &self.train_idx {
                v[i] = true;
            }
            v
        };
        for i in 0..self.labels.len() {
            out.push_str(&self.labels[i].to_string());
            out.push(' ');
            out.push_str(if is_train[i] { "train" } else { "test" });
            for v in self.view1.row(i) {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            for v in self.view2.row(i) {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn from_text_inner(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("coclr-dataset v1") => {}
            other => return Err(format!("bad magic line: {other:?}")),
        }
        let spec_line = lines.next().ok_or("missing spec line")?;
        let spec: TwoViewSpec =
            serde_json::from_str(spec_line).map_err(|e| format!("bad spec: {e}"))?;
        spec.validate().map_err(|e| format!("invalid spec: {e}"))?;
        let n = spec.n_samples();
        let mut view1 = Matrix::zeros(n, spec.d1);
        let mut view2 = Matrix::zeros(n, spec.d2);
        let mut labels = Vec::with_capacity(n);
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (i, line) in lines.enumerate() {
            if i >= n {
                return Err(format!("more than {n} data rows"));
            }
            let mut tok = line.split_whitespace();
            let label: usize = tok
                .next()
                .ok_or_else(|| format!("row {i}: missing label"))?
                .parse()
                .map_err(|e| format!("row {i}: bad label: {e}"))?;
            if label >= spec.n_classes {
                return Err(format!("row {i}: label {label} out of range"));
            }
            match tok.next() {
                Some("train") => train_idx.push(i),
                Some("test") => test_idx.push(i),
                other => return Err(format!("row {i}: bad split tag {other:?}")),
            }
            labels.push(label);
            for c in 0..spec.d1 {
                let v: f64 = tok
                    .next()
                    .ok_or_else(|| format!("row {i}: missing view1[{c}]"))?
                    .parse()
                    .map_err(|e| format!("row {i}: bad view1[{c}]: {e}"))?;
                view1.set(i, c, v);
            }
            for c in 0..spec.d2 {
                let v: f64 = tok
                    .next()
                    .ok_or_else(|| format!("row {i}: missing view2[{c}]"))?
                    .parse()
                    .map_err(|e| format!("row {i}: bad view2[{c}]: {e}"))?;
                view2.set(i, c, v);
            }
            if tok.next().is_some() {
                return Err(format!("row {i}: trailing fields"));
            }
        }
        if labels.len() != n {
            return Err(format!("expected {n} rows, found {}", labels.len()));
        }
        Ok(Self {
            spec,
            view1,
            view2,
            labels,
            train_idx,
            test_idx,
        })
    }

    /// Parse the columnar text format.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_text_inner(text).map_err(|reason| CoclrError::CorruptFile {
            path: "<buffer>".into(),
            reason,
        })
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text_inner(&text).map_err(|reason| CoclrError::CorruptFile {
            path: path.display().to_string(),
            reason,
        })
    }
}

/// Exact 1-nearest-neighbour accuracy of `test_idx` rows against `train_idx`
/// rows under squared Euclidean distance; ties resolve to the lowest train
/// index. Used to calibrate and verify raw-view difficulty.
pub fn raw_1nn_accuracy(
    view: &Matrix,
    labels: &[usize],
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<f64> {
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(CoclrError::InvalidArgument(
            "raw_1nn_accuracy: empty split".into(),
        ));
    }
    if labels.len() != view.rows() {
        return Err(CoclrError::DimMismatch(format!(
            "raw_1nn_accuracy: {} labels for {} rows",
            labels.len(),
            view.rows()
        )));
    }
    let mut correct = 0usize;
    for &t in test_idx {
        let mut best = f64::INFINITY;
        let mut best_label = usize::MAX;
        for &g in train_idx {
            let mut d2 = 0.0;
            for (a, b) in view.row(t).iter().zip(view.row(g)) {
                let diff = a - b;
                d2 += diff * diff;
            }
            if d2 < best {
                best = d2;
                best_label = labels[g];
            }
        }
        correct += (best_label == labels[t]) as usize;
    }
    Ok(correct as f64 / test_idx.len() as f64)
}
