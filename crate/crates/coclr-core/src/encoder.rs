//! MLP encoders with projection heads and momentum-updated key twins.
//!
//! Each view owns an [`EncoderPair`]: a query encoder trained by gradient
//! descent and a key encoder that trails it as an exponential moving average.
//! Forward passes end in row-wise L2 normalization so embeddings live on the
//! unit hypersphere and dot products are cosine similarities.

use crate::error::{CoclrError, Result};
use crate::numerics::{Matrix, Rng, NORM_EPS};

/// Per-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Weight-scale rule for initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleRule {
    /// Uniform in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
}

/// One fully-connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `(in_dim, out_dim)` weight matrix; inputs multiply from the left.
    pub weight: Matrix,
    /// One bias per output unit.
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A full MLP: backbone plus projection head, stored as a flat layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Parameter gradients, shape-congruent with an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct Grads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

/// Activation record produced by a recording forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Matrix>,
    /// Pre-activation values of each layer.
    preacts: Vec<Matrix>,
    /// Raw row norms of the pre-normalization output.
    norms: Vec<f64>,
    /// Whether the final L2 normalization was applied.
    normalized: bool,
    /// Final output rows (normalized when `normalized` is set).
    embeddings: Matrix,
}

impl Tape {
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    /// Smallest absolute pre-activation across all ReLU layers. Gradient
    /// tests use this to reject configurations sitting on a ReLU kink, where
    /// finite differences straddle the non-differentiable point.
    pub fn min_abs_preact(&self, params: &MlpParams) -> f64 {
        let mut min = f64::INFINITY;
        for (layer, pre) in params.layers.iter().zip(&self.preacts) {
            if layer.activation == Activation::Relu {
                for &v in pre.data() {
                    min = min.min(v.abs());
                }
            }
        }
        min
    }

    /// Smallest pre-normalization row norm.
    pub fn min_norm(&self) -> f64 {
        self.norms.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl MlpParams {
    /// Fan-balanced uniform initialization: weights i.i.d. uniform in
    /// `[-s, s]` with `s = sqrt(6/(fan_in+fan_out))`, biases zero. Layers are
    /// filled in order, each weight matrix in row-major order. Every layer is
    /// ReLU except the last, which is linear (its output is normalized by
    /// `forward` instead).
    pub fn init_params(layer_dims: &[usize], rng: &mut Rng, rule: ScaleRule) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(CoclrError::InvalidArgument(format!(
                "init_params needs at least 2 dims, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(CoclrError::InvalidArgument(
                "init_params: zero-width layer".into(),
            ));
        }
        let ScaleRule::GlorotUniform = rule;
        let n_layers = layer_dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weight = Matrix::zeros(fan_in, fan_out);
            rng.fill_uniform_in(&mut weight, -s, s);
            let activation = if l + 1 < n_layers {
                Activation::Relu
            } else {
                Activation::Linear
            };
            layers.push(Layer {
                weight,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Total parameter count (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Flatten all parameters into one vector: per layer, weights row-major
    /// then biases. Order matches [`MlpParams::assign_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Overwrite all parameters from a flat vector laid out as by
    /// [`MlpParams::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoclrError::DimMismatch(format!(
                "assign_flat: {} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            let nw = layer.weight.rows() * layer.weight.cols();
            layer.weight.data_mut().copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    /// Forward pass ending in row-wise L2 normalization. With `record` set,
    /// also returns the activation tape required by [`MlpParams::backward`].
    pub fn forward(&self, x: &Matrix, record: bool) -> Result<(Matrix, Option<Tape>)> {
        self.forward_with(x, record, true)
    }

    /// The first `n_layers` layers only, L2-normalized: the evaluation
    /// feature map (projection head removed when `n_layers` is the backbone
    /// depth).
    pub fn forward_features(&self, x: &Matrix, n_layers: usize) -> Result<Matrix> {
        let (z, _) = self.truncate(n_layers)?.forward(x, false)?;
        Ok(z)
    }

    /// Copy of the first `n_layers` layers as a standalone network.
    pub fn truncate(&self, n_layers: usize) -> Result<MlpParams> {
        if n_layers == 0 || n_layers > self.layers.len() {
            return Err(CoclrError::InvalidArgument(format!(
                "truncate: {} layers requested of {}",
                n_layers,
                self.layers.len()
            )));
        }
        Ok(MlpParams {
            layers: self.layers[..n_layers].to_vec(),
        })
    }

    /// Forward pass with the final normalization made explicit. Training and
    /// evaluation always normalize; the raw variant exists so gradient tests
    /// can exercise the plain linear chain.
    pub fn forward_with(
        &self,
        x: &Matrix,
        record: bool,
        normalize: bool,
    ) -> Result<(Matrix, Option<Tape>)> {
        if x.cols() != self.input_dim() {
            return Err(CoclrError::DimMismatch(format!(
                "forward: input has {} columns, first layer expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut layer_inputs = Vec::new();
        let mut preacts = Vec::new();
        let mut h = x.clone();
        for layer in &self.layers {
            if record {
                layer_inputs.push(h.clone());
            }
            let mut pre = h.matmul(&layer.weight)?;
            for r in 0..pre.rows() {
                for (v, b) in pre.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            h = pre.map(|v| layer.activation.apply(v));
            if record {
                preacts.push(pre);
            }
        }
        let norms = h.row_norms();
        let out = if normalize {
            h.l2_normalize_rows(NORM_EPS)
        } else {
            h
        };
        let tape = record.then(|| Tape {
            layer_inputs,
            preacts,
            norms,
            normalized: normalize,
            embeddings: out.clone(),
        });
        Ok((out, tape))
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// parameter, given the loss gradient at the (normalized) output.
    pub fn backward(&self, tape: &Tape, d_embedding: &Matrix) -> Result<Grads> {
        if tape.preacts.len() != self.layers.len() {
            return Err(CoclrError::InvalidArgument(format!(
                "backward: tape has {} layers, params have {}",
                tape.preacts.len(),
                self.layers.len()
            )));
        }
        if d_embedding.shape() != tape.embeddings.shape() {
            return Err(CoclrError::DimMismatch(format!(
                "backward: upstream gradient is {}x{}, embeddings are {}x{}",
                d_embedding.rows(),
                d_embedding.cols(),
                tape.embeddings.rows(),
                tape.embeddings.cols()
            )));
        }

        // Through the normalization y = v / max(|v|, eps):
        //   |v| >= eps:  dv = (dy - y * <y, dy>) / |v|
        //   |v| <  eps:  dv = dy / eps           (the map is linear there)
        let mut d = d_embedding.clone();
        if tape.normalized {
            for r in 0..d.rows() {
                let norm = tape.norms[r];
                let y = tape.embeddings.row(r);
                if norm >= NORM_EPS {
                    let proj = crate::numerics::dot(y, d.row(r));
                    let row = d.row_mut(r);
                    for (dv, &yi) in row.iter_mut().zip(y) {
                        *dv = (*dv - yi * proj) / norm;
                    }
                } else {
                    for dv in d.row_mut(r) {
                        *dv /= NORM_EPS;
                    }
                }
            }
        }

        let mut grads = vec![(Matrix::zeros(0, 0), Vec::new()); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let pre = &tape.preacts[l];
            // d now holds dLoss/d(layer output); fold in the activation.
            let mut du = d;
            for (v, &p) in du.data_mut().iter_mut().zip(pre.data()) {
                *v *= layer.activation.derivative(p);
            }
            let dw = tape.layer_inputs[l].transpose().matmul(&du)?;
            let db = du.col_sums();
            d = du.matmul_transposed(&layer.weight)?;
            grads[l] = (dw, db);
        }
        Ok(Grads { layers: grads })
    }

    /// One descent step with decoupled weight decay:
    /// `p <- p - lr * (g + weight_decay * p)`.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64, weight_decay: f64) -> Result<()> {
        if lr <= 0.0 || weight_decay < 0.0 {
            return Err(CoclrError::InvalidArgument(format!(
                "sgd_step: lr {lr}, weight_decay {weight_decay}"
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(CoclrError::DimMismatch(format!(
                "sgd_step: {} gradient layers for {} parameter layers",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&grads.layers) {
            if dw.shape() != layer.weight.shape() || db.len() != layer.bias.len() {
                return Err(CoclrError::DimMismatch(
                    "sgd_step: gradient shape mismatch".into(),
                ));
            }
            for (p, &g) in layer.weight.data_mut().iter_mut().zip(dw.data()) {
                *p -= lr * (g + weight_decay * *p);
            }
            for (p, &g) in layer.bias.iter_mut().zip(db) {
                *p -= lr * (g + weight_decay * *p);
            }
        }
        Ok(())
    }
}

impl Grads {
    /// Flat view matching [`MlpParams::flatten`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    /// Accumulate another gradient of identical shape.
    pub fn add_assign(&mut self, other: &Grads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(CoclrError::DimMismatch(
                "grad accumulate: layer count mismatch".into(),
            ));
        }
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            if w.shape() != ow.shape() || b.len() != ob.len() {
                return Err(CoclrError::DimMismatch(
                    "grad accumulate: shape mismatch".into(),
                ));
            }
            for (v, &o) in w.data_mut().iter_mut().zip(ow.data()) {
                *v += o;
            }
            for (v, &o) in b.iter_mut().zip(ob) {
                *v += o;
            }
        }
        Ok(())
    }
}

/// Query encoder plus its momentum key twin for one view.
#[derive(Clone, Debug)]
pub struct EncoderPair {
    pub query: MlpParams,
    pub key: MlpParams,
    /// EMA coefficient of the key update.
    pub momentum: f64,
}

impl EncoderPair {
    /// The key starts as an exact copy of the query.
    pub fn new(query: MlpParams, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(CoclrError::InvalidArgument(format!(
                "momentum {momentum} outside [0, 1]"
            )));
        }
        let key = query.clone();
        Ok(Self {
            query,
            key,
            momentum,
        })
    }

    /// `key <- m * key + (1 - m) * query`, elementwise; the query is untouched.
    pub fn momentum_update(&mut self) {
        let m = self.momentum;
        for (kl, ql) in self.key.layers.iter_mut().zip(&self.query.layers) {
            for (k, &q) in kl.weight.data_mut().iter_mut().zip(ql.weight.data()) {
                *k = m * *k + (1.0 - m) * q;
            }
            for (k, &q) in kl.bias.iter_mut().zip(&ql.bias) {
                *k = m * *k + (1.0 - m) * q;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, relative_l2_error, FD_STEP, FD_TOL};

    fn random_input(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        let mut x = Matrix::zeros(rows, cols);
        rng.fill_uniform_in(&mut x, -1.5, 1.5);
        x
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init_params(&[4, 8, 3], &mut Rng::new(0), ScaleRule::GlorotUniform)
            .unwrap();
        let b = MlpParams::init_params(&[4, 8, 3], &mut Rng::new(0), ScaleRule::GlorotUniform)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_shapes_and_activations() {
        let p = MlpParams::init_params(&[4, 8, 3], &mut Rng::new(1), ScaleRule::GlorotUniform)
            .unwrap();
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].weight.shape(), (4, 8));
        assert_eq!(p.layers[0].bias.len(), 8);
        assert_eq!(p.layers[0].activation, Activation::Relu);
        assert_eq!(p.layers[1].weight.shape(), (8, 3));
        assert_eq!(p.layers[1].bias.len(), 3);
        assert_eq!(p.layers[1].activation, Activation::Linear);
        assert!(p.layers[1].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_weight_mean_matches_uniform_law() {
        // 200*500 = 1e5 draws from uniform[-s, s]; the empirical mean should
        // sit within 3 standard errors of zero.
        let p = MlpParams::init_params(&[200, 500], &mut Rng::new(7), ScaleRule::GlorotUniform)
            .unwrap();
        let w = &p.layers[0].weight;
        let n = (w.rows() * w.cols()) as f64;
        let mean = w.sum() / n;
        let s = (6.0 / 700.0_f64).sqrt();
        let sigma = s / 3.0_f64.sqrt();
        assert!(
            mean.abs() < 3.0 * sigma / n.sqrt(),
            "mean {mean} vs bound {}",
            3.0 * sigma / n.sqrt()
        );
        // And every draw respects the bound.
        assert!(w.data().iter().all(|&v| v.abs() <= s));
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut rng = Rng::new(0);
        assert!(MlpParams::init_params(&[4], &mut rng, ScaleRule::GlorotUniform).is_err());
        assert!(MlpParams::init_params(&[4, 0, 3], &mut rng, ScaleRule::GlorotUniform).is_err());
    }

    #[test]
    fn forward_zero_network_keeps_zero_rows() {
        let mut p = MlpParams::init_params(&[3, 4, 2], &mut Rng::new(2), ScaleRule::GlorotUniform)
            .unwrap();
        for layer in &mut p.layers {
            layer.weight.data_mut().fill(0.0);
        }
        let x = random_input(&mut Rng::new(3), 5, 3);
        let (z, _) = p.forward(&x, false).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_identity_layer_is_row_normalization() {
        let p = MlpParams {
            layers: vec![Layer {
                weight: Matrix::identity(4),
                bias: vec![0.0; 4],
                activation: Activation::Linear,
            }],
        };
        let x = random_input(&mut Rng::new(4), 6, 4);
        let (z, _) = p.forward(&x, false).unwrap();
        let want = x.l2_normalize_rows(NORM_EPS);
        assert!(z.max_abs_diff(&want).unwrap() <= 1e-15);
    }

    #[test]
    fn forward_matches_layer_by_layer_oracle() {
        let p = MlpParams::init_params(&[5, 7, 6, 3], &mut Rng::new(9), ScaleRule::GlorotUniform)
            .unwrap();
        let x = random_input(&mut Rng::new(10), 4, 5);
        let (z, _) = p.forward(&x, false).unwrap();

        // Independent oracle: scalar loops, no Matrix ops.
        let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        for layer in &p.layers {
            let mut next = vec![vec![0.0; layer.weight.cols()]; h.len()];
            for (row_in, row_out) in h.iter().zip(next.iter_mut()) {
                for (j, out) in row_out.iter_mut().enumerate() {
                    let mut acc = layer.bias[j];
                    for (k, &v) in row_in.iter().enumerate() {
                        acc += v * layer.weight.get(k, j);
                    }
                    *out = match layer.activation {
                        Activation::Relu => acc.max(0.0),
                        Activation::Linear => acc,
                    };
                }
            }
            h = next;
        }
        for (r, row) in h.iter().enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            for (c, &v) in row.iter().enumerate() {
                assert!((z.get(r, c) - v / norm).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let p = MlpParams::init_params(&[5, 3], &mut Rng::new(0), ScaleRule::GlorotUniform)
            .unwrap();
        let x = Matrix::zeros(2, 4);
        assert!(matches!(
            p.forward(&x, false),
            Err(CoclrError::DimMismatch(_))
        ));
    }

    #[test]
    fn embeddings_are_unit_norm() {
        for seed in 0..5 {
            let p = MlpParams::init_params(
                &[6, 8, 4],
                &mut Rng::new(seed),
                ScaleRule::GlorotUniform,
            )
            .unwrap();
            let x = random_input(&mut Rng::new(seed + 100), 7, 6);
            let (z, _) = p.forward(&x, false).unwrap();
            for norm in z.row_norms() {
                assert!((norm - 1.0).abs() <= 1e-10, "row norm {norm}");
            }
        }
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let p = MlpParams::init_params(&[3, 5, 2], &mut Rng::new(5), ScaleRule::GlorotUniform)
            .unwrap();
        let x = random_input(&mut Rng::new(6), 4, 3);
        let (_, tape) = p.forward(&x, true).unwrap();
        let g = p
            .backward(tape.as_ref().unwrap(), &Matrix::zeros(4, 2))
            .unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_chain_without_normalization() {
        // Single linear layer, loss = sum(z): dW = x^T * ones, db = batch size.
        let p = MlpParams::init_params(&[3, 2], &mut Rng::new(8), ScaleRule::GlorotUniform)
            .unwrap();
        let x = random_input(&mut Rng::new(9), 5, 3);
        let (_, tape) = p.forward_with(&x, true, false).unwrap();
        let ones = Matrix::from_vec(5, 2, vec![1.0; 10]).unwrap();
        let g = p.backward(tape.as_ref().unwrap(), &ones).unwrap();
        let want = x.transpose().matmul(&ones).unwrap();
        assert!(g.layers[0].0.max_abs_diff(&want).unwrap() <= 1e-12);
        assert!(g.layers[0].1.iter().all(|&b| (b - 5.0).abs() <= 1e-12));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Loss: sum of elementwise products of the normalized embeddings with
        // a fixed random coefficient matrix. Configurations landing near a
        // ReLU kink are resampled so the central difference stays valid.
        let mut accepted = 0;
        let mut seed = 0;
        while accepted < 20 {
            seed += 1;
            let mut rng = Rng::new(seed);
            let p =
                MlpParams::init_params(&[3, 5, 4], &mut rng, ScaleRule::GlorotUniform).unwrap();
            let x = random_input(&mut rng, 3, 3);
            let coeff = random_input(&mut rng, 3, 4);
            let (_, tape) = p.forward(&x, true).unwrap();
            let tape = tape.unwrap();
            if tape.min_abs_preact(&p) < 1e-3 || tape.min_norm() < 1e-3 {
                continue;
            }
            accepted += 1;

            let analytic = p.backward(&tape, &coeff).unwrap().flatten();
            let base = p.flatten();
            let mut eval = |flat: &[f64]| {
                let mut q = p.clone();
                q.assign_flat(flat).unwrap();
                let (z, _) = q.forward(&x, false).unwrap();
                z.hadamard(&coeff).unwrap().sum()
            };
            let numeric = finite_difference_grad(&mut eval, &base, FD_STEP);
            let err = relative_l2_error(&analytic, &numeric, 1e-12);
            assert!(err < FD_TOL, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let p = MlpParams::init_params(&[3, 2], &mut Rng::new(1), ScaleRule::GlorotUniform)
            .unwrap();
        let x = random_input(&mut Rng::new(2), 4, 3);
        let (_, tape) = p.forward(&x, true).unwrap();
        assert!(p
            .backward(tape.as_ref().unwrap(), &Matrix::zeros(4, 3))
            .is_err());
    }

    #[test]
    fn momentum_update_fixed_point_copy_and_blend() {
        let q = MlpParams::init_params(&[3, 2], &mut Rng::new(11), ScaleRule::GlorotUniform)
            .unwrap();

        // m = 1: key unchanged.
        let mut pair = EncoderPair::new(q.clone(), 1.0).unwrap();
        pair.key.layers[0].weight.set(0, 0, 42.0);
        let before = pair.key.clone();
        pair.momentum_update();
        assert_eq!(pair.key, before);

        // m = 0: key == query exactly.
        let mut pair = EncoderPair::new(q.clone(), 0.0).unwrap();
        pair.key.layers[0].weight.set(0, 0, 42.0);
        pair.momentum_update();
        assert_eq!(pair.key, pair.query);

        // key=1, query=0, m=0.999 -> 0.999.
        let mut pair = EncoderPair::new(q, 0.999).unwrap();
        for layer in &mut pair.query.layers {
            layer.weight.data_mut().fill(0.0);
        }
        for layer in &mut pair.key.layers {
            layer.weight.data_mut().fill(1.0);
        }
        pair.momentum_update();
        assert!(pair.key.layers[0]
            .weight
            .data()
            .iter()
            .all(|&v| (v - 0.999).abs() <= 1e-15));
    }

    #[test]
    fn momentum_contraction_rate() {
        let q = MlpParams::init_params(&[4, 6, 3], &mut Rng::new(13), ScaleRule::GlorotUniform)
            .unwrap();
        let mut pair = EncoderPair::new(q, 0.9).unwrap();
        // Separate key from query, then freeze the query and update.
        let mut drift = Rng::new(14);
        for layer in &mut pair.key.layers {
            for v in layer.weight.data_mut() {
                *v += drift.uniform_in(-0.5, 0.5);
            }
        }
        let gap = |pair: &EncoderPair| -> f64 {
            pair.key
                .flatten()
                .iter()
                .zip(pair.query.flatten())
                .map(|(&k, q)| (k - q) * (k - q))
                .sum::<f64>()
                .sqrt()
        };
        let g0 = gap(&pair);
        for _ in 0..10 {
            pair.momentum_update();
        }
        let g10 = gap(&pair);
        assert!((g10 - 0.9_f64.powi(10) * g0).abs() <= 1e-10);
    }

    #[test]
    fn sgd_trivial_cases() {
        let mut p = MlpParams::init_params(&[2, 2], &mut Rng::new(15), ScaleRule::GlorotUniform)
            .unwrap();
        let before = p.clone();
        let zero = Grads {
            layers: vec![(Matrix::zeros(2, 2), vec![0.0; 2])],
        };
        p.sgd_step(&zero, 0.1, 0.0).unwrap();
        assert_eq!(p, before);

        // p=1, g=1, lr=0.1, wd=0 -> 0.9.
        let mut p = before;
        p.layers[0].weight.data_mut().fill(1.0);
        p.layers[0].bias.fill(1.0);
        let one = Grads {
            layers: vec![(
                Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap(),
                vec![1.0; 2],
            )],
        };
        p.sgd_step(&one, 0.1, 0.0).unwrap();
        assert!(p.flatten().iter().all(|&v| (v - 0.9).abs() <= 1e-15));
    }

    #[test]
    fn sgd_quadratic_bowl_decay() {
        // f = 0.5 * |p|^2 has gradient p, so each step scales p by (1 - lr).
        let mut p = MlpParams::init_params(&[3, 3], &mut Rng::new(16), ScaleRule::GlorotUniform)
            .unwrap();
        let start = p.flatten();
        for _ in 0..100 {
            let g = Grads {
                layers: vec![(p.layers[0].weight.clone(), p.layers[0].bias.clone())],
            };
            p.sgd_step(&g, 0.1, 0.0).unwrap();
        }
        let factor = 0.9_f64.powi(100);
        for (now, then) in p.flatten().iter().zip(&start) {
            assert!((now - factor * then).abs() <= 1e-10);
        }
    }

    #[test]
    fn sgd_rejects_bad_hyper_and_shapes() {
        let mut p = MlpParams::init_params(&[2, 2], &mut Rng::new(17), ScaleRule::GlorotUniform)
            .unwrap();
        let g = Grads {
            layers: vec![(Matrix::zeros(2, 2), vec![0.0; 2])],
        };
        assert!(p.sgd_step(&g, 0.0, 0.0).is_err());
        assert!(p.sgd_step(&g, 0.1, -1.0).is_err());
        let wrong = Grads {
            layers: vec![(Matrix::zeros(3, 2), vec![0.0; 2])],
        };
        assert!(p.sgd_step(&wrong, 0.1, 0.0).is_err());
    }

    #[test]
    fn flatten_assign_round_trip() {
        let p = MlpParams::init_params(&[4, 5, 3], &mut Rng::new(19), ScaleRule::GlorotUniform)
            .unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.param_count());
        let mut q = p.clone();
        for layer in &mut q.layers {
            layer.weight.data_mut().fill(0.0);
        }
        q.assign_flat(&flat).unwrap();
        assert_eq!(p, q);
    }
}
