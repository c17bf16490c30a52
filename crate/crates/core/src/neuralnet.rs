//! From-scratch multilayer perceptron trained by gradient descent.
//!
//! The standard shape is two hidden layers with one activation kind applied
//! to both and a linear output pair (x, y). `MlpModel` also accepts other
//! depths so degenerate configurations (e.g. a single linear layer) can be
//! tested against closed forms.
//!
//! Training is plain (full-batch by default) gradient descent on the
//! mean-squared-error loss, deterministic given the seed: weights and biases
//! initialize uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded
//! generator. Non-finite losses or parameters abort with a divergence error
//! carrying the epoch index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Hidden-layer activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Hyperbolic tangent.
    Tansig,
    /// Logistic sigmoid `1/(1+e^-x)`.
    Logsig,
    /// Identity.
    Purelin,
    /// Rectifier `max(0, x)`.
    Poslin,
    /// Radial basis `e^(-x^2)`.
    Radbas,
}

pub const ALL_ACTIVATIONS: [Activation; 5] = [
    Activation::Tansig,
    Activation::Logsig,
    Activation::Purelin,
    Activation::Poslin,
    Activation::Radbas,
];

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tansig => x.tanh(),
            Activation::Logsig => 1.0 / (1.0 + (-x).exp()),
            Activation::Purelin => x,
            Activation::Poslin => x.max(0.0),
            Activation::Radbas => (-x * x).exp(),
        }
    }

    /// Derivative with respect to the pre-activation. `poslin` uses 0 at the
    /// kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tansig => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Logsig => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Purelin => 1.0,
            Activation::Poslin => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Radbas => -2.0 * x * (-x * x).exp(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tansig => "tansig",
            Activation::Logsig => "logsig",
            Activation::Purelin => "purelin",
            Activation::Poslin => "poslin",
            Activation::Radbas => "radbas",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tansig" => Ok(Activation::Tansig),
            "logsig" => Ok(Activation::Logsig),
            "purelin" => Ok(Activation::Purelin),
            "poslin" => Ok(Activation::Poslin),
            "radbas" => Ok(Activation::Radbas),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation '{other}' (expected tansig, logsig, purelin, poslin or radbas)"
            ))),
        }
    }
}

/// Feed-forward network: `layer_sizes = [n_in, ..., n_out]`, one weight
/// matrix (out x in) and bias vector per layer, hidden activation shared by
/// all non-final layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
    pub rng_seed: u64,
}

/// Parameter gradients matching an [`MlpModel`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
}

/// How samples are batched per update step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchMode {
    FullBatch,
    MiniBatch(usize),
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_mode: BatchMode,
    /// Stop after this many epochs without `min_improvement` progress.
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_epochs: 2000,
            batch_mode: BatchMode::FullBatch,
            patience: 50,
            min_improvement: 1e-9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if let BatchMode::MiniBatch(0) = self.batch_mode {
            return Err(Error::InvalidConfig("minibatch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl MlpModel {
    /// Seeded model with the given layer sizes (at least input and output).
    pub fn new(layer_sizes: Vec<usize>, hidden_activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "layer_sizes needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data));
            biases.push((0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect());
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
            rng_seed: seed,
        })
    }

    /// The standard two-hidden-layer regressor with a 2D output.
    pub fn two_hidden(
        n_in: usize,
        h1: usize,
        h2: usize,
        hidden_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        Self::new(vec![n_in, h1, h2, 2], hidden_activation, seed)
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut Vec<f64> {
        &mut self.biases[layer]
    }

    #[inline]
    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Purelin
        } else {
            self.hidden_activation
        }
    }

    fn check_feature_width(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                features.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass caching pre-activations and activations per layer.
    fn forward_cached(&self, features: &Matrix) -> (Vec<Matrix>, Vec<Matrix>) {
        let n = features.rows();
        let mut zs = Vec::with_capacity(self.num_layers());
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(features.clone());
        for l in 0..self.num_layers() {
            let input = &activations[l];
            let w = &self.weights[l];
            let b = &self.biases[l];
            let out_dim = w.rows();
            let mut z = Matrix::zeros(n, out_dim);
            for i in 0..n {
                let row = input.row(i);
                for o in 0..out_dim {
                    let wrow = w.row(o);
                    let mut acc = b[o];
                    for (wv, xv) in wrow.iter().zip(row) {
                        acc += wv * xv;
                    }
                    z.set(i, o, acc);
                }
            }
            let act = self.layer_activation(l);
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = act.apply(*v);
            }
            zs.push(z);
            activations.push(a);
        }
        (zs, activations)
    }

    /// Predicted outputs, one row per input row.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        self.check_feature_width(features)?;
        let (_, mut activations) = self.forward_cached(features);
        Ok(activations.pop().unwrap())
    }

    /// Analytic gradients of [`mse_loss`] with respect to every parameter.
    pub fn backward(&self, features: &Matrix, labels: &Matrix) -> Result<Gradients> {
        self.check_feature_width(features)?;
        if labels.rows() != features.rows() || labels.cols() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "labels are {}x{}, expected {}x{}",
                labels.rows(),
                labels.cols(),
                features.rows(),
                self.output_dim()
            )));
        }
        let n = features.rows();
        let (zs, activations) = self.forward_cached(features);
        let scale = 2.0 / (n as f64 * self.output_dim() as f64);

        // delta for the output layer: d(loss)/d(z_L).
        let last = self.num_layers() - 1;
        let out = &activations[last + 1];
        let mut delta = Matrix::zeros(n, self.output_dim());
        let act_last = self.layer_activation(last);
        for i in 0..n {
            for o in 0..self.output_dim() {
                let residual = out.get(i, o) - labels.get(i, o);
                delta.set(i, o, scale * residual * act_last.derivative(zs[last].get(i, o)));
            }
        }

        let mut d_weights = vec![Matrix::zeros(0, 0); self.num_layers()];
        let mut d_biases = vec![Vec::new(); self.num_layers()];
        for l in (0..self.num_layers()).rev() {
            let input = &activations[l];
            let out_dim = self.weights[l].rows();
            let in_dim = self.weights[l].cols();
            let mut dw = Matrix::zeros(out_dim, in_dim);
            let mut db = vec![0.0; out_dim];
            for i in 0..n {
                let xrow = input.row(i);
                for o in 0..out_dim {
                    let d = delta.get(i, o);
                    db[o] += d;
                    for (c, xv) in xrow.iter().enumerate() {
                        dw.set(o, c, dw.get(o, c) + d * xv);
                    }
                }
            }
            d_weights[l] = dw;
            d_biases[l] = db;

            if l > 0 {
                let act = self.layer_activation(l - 1);
                let w = &self.weights[l];
                let mut prev = Matrix::zeros(n, in_dim);
                for i in 0..n {
                    for c in 0..in_dim {
                        let mut acc = 0.0;
                        for o in 0..out_dim {
                            acc += delta.get(i, o) * w.get(o, c);
                        }
                        prev.set(i, c, acc * act.derivative(zs[l - 1].get(i, c)));
                    }
                }
                delta = prev;
            }
        }
        Ok(Gradients {
            d_weights,
            d_biases,
        })
    }

    fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for l in 0..self.num_layers() {
            let dw = &grads.d_weights[l];
            let w = &mut self.weights[l];
            for (wv, gv) in w.data_mut().iter_mut().zip(dw.data()) {
                *wv -= lr * gv;
            }
            for (bv, gv) in self.biases[l].iter_mut().zip(&grads.d_biases[l]) {
                *bv -= lr * gv;
            }
        }
    }

    fn params_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.data().iter().all(|v| v.is_finite()))
            && self
                .biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Mean squared error over every entry of the prediction matrix.
pub fn mse_loss(pred: &Matrix, labels: &Matrix) -> Result<f64> {
    if pred.rows() != labels.rows() || pred.cols() != labels.cols() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs labels {}x{}",
            pred.rows(),
            pred.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(labels.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Gradient descent on MSE. Returns the trained model and the loss history
/// (initial loss followed by the loss after each epoch). Deterministic given
/// the config seed; the input matrices are never mutated.
pub fn train(
    model: MlpModel,
    features: &Matrix,
    labels: &Matrix,
    config: &TrainConfig,
) -> Result<(MlpModel, Vec<f64>)> {
    config.validate()?;
    let mut model = model;
    model.check_feature_width(features)?;
    if labels.rows() != features.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} label rows",
            features.rows(),
            labels.rows()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::EmptyInput("no training samples".into()));
    }

    let initial = mse_loss(&model.forward(features)?, labels)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut history = vec![initial];
    let mut best = initial;
    let mut stale = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for epoch in 0..config.max_epochs {
        match config.batch_mode {
            BatchMode::FullBatch => {
                let grads = model.backward(features, labels)?;
                model.apply_step(&grads, config.learning_rate);
            }
            BatchMode::MiniBatch(size) => {
                let mut order: Vec<usize> = (0..features.rows()).collect();
                use rand::seq::SliceRandom;
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    let f = features.select_rows(chunk);
                    let l = labels.select_rows(chunk);
                    let grads = model.backward(&f, &l)?;
                    model.apply_step(&grads, config.learning_rate);
                }
            }
        }
        let loss = mse_loss(&model.forward(features)?, labels)?;
        if !loss.is_finite() || !model.params_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(loss);
        if best - loss > config.min_improvement {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((model, history))
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    /// Row-major (out x in) weight buffer per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    rng_seed: u64,
}

const MODEL_FORMAT_VERSION: u32 = 1;

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            hidden_activation: self.hidden_activation,
            weights: self.weights.iter().map(|w| w.data().to_vec()).collect(),
            biases: self.biases.clone(),
            rng_seed: self.rng_seed,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if file.layer_sizes.len() < 2
            || file.weights.len() != file.layer_sizes.len() - 1
            || file.biases.len() != file.layer_sizes.len() - 1
        {
            return Err(Error::Parse("model layer shapes are inconsistent".into()));
        }
        let mut weights = Vec::with_capacity(file.weights.len());
        for (l, buf) in file.weights.into_iter().enumerate() {
            let rows = file.layer_sizes[l + 1];
            let cols = file.layer_sizes[l];
            if buf.len() != rows * cols || file.biases[l].len() != rows {
                return Err(Error::Parse(format!("layer {l} has a malformed parameter buffer")));
            }
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("layer {l} has non-finite weights")));
            }
            weights.push(Matrix::from_vec(rows, cols, buf));
        }
        Ok(Self {
            layer_sizes: file.layer_sizes,
            weights,
            biases: file.biases,
            hidden_activation: file.hidden_activation,
            rng_seed: file.rng_seed,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(mut model: MlpModel) -> MlpModel {
        for l in 0..model.num_layers() {
            model.weights_mut(l).data_mut().fill(0.0);
            model.biases_mut(l).fill(0.0);
        }
        model
    }

    /// Central finite differences of the MSE loss for every parameter.
    fn numeric_gradients(model: &MlpModel, x: &Matrix, y: &Matrix, h: f64) -> Gradients {
        let mut m = model.clone();
        let mut d_weights = Vec::new();
        let mut d_biases = Vec::new();
        for l in 0..m.num_layers() {
            let (rows, cols) = (m.weights(l).rows(), m.weights(l).cols());
            let mut dw = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let orig = m.weights(l).get(r, c);
                    m.weights_mut(l).set(r, c, orig + h);
                    let up = mse_loss(&m.forward(x).unwrap(), y).unwrap();
                    m.weights_mut(l).set(r, c, orig - h);
                    let down = mse_loss(&m.forward(x).unwrap(), y).unwrap();
                    m.weights_mut(l).set(r, c, orig);
                    dw.set(r, c, (up - down) / (2.0 * h));
                }
            }
            let mut db = vec![0.0; rows];
            for r in 0..rows {
                let orig = m.biases(l)[r];
                m.biases_mut(l)[r] = orig + h;
                let up = mse_loss(&m.forward(x).unwrap(), y).unwrap();
                m.biases_mut(l)[r] = orig - h;
                let down = mse_loss(&m.forward(x).unwrap(), y).unwrap();
                m.biases_mut(l)[r] = orig;
                db[r] = (up - down) / (2.0 * h);
            }
            d_weights.push(dw);
            d_biases.push(db);
        }
        Gradients {
            d_weights,
            d_biases,
        }
    }

    fn assert_grad_close(analytic: &Gradients, numeric: &Gradients) {
        for (aw, nw) in analytic.d_weights.iter().zip(&numeric.d_weights) {
            for (a, n) in aw.data().iter().zip(nw.data()) {
                let tol = 1e-8_f64.max(1e-5 * a.abs().max(n.abs()));
                assert!((a - n).abs() <= tol, "weight grad {a} vs numeric {n}");
            }
        }
        for (ab, nb) in analytic.d_biases.iter().zip(&numeric.d_biases) {
            for (a, n) in ab.iter().zip(nb) {
                let tol = 1e-8_f64.max(1e-5 * a.abs().max(n.abs()));
                assert!((a - n).abs() <= tol, "bias grad {a} vs numeric {n}");
            }
        }
    }

    // --- activations -----------------------------------------------------

    #[test]
    fn activation_fixed_points() {
        assert_eq!(Activation::Tansig.apply(0.0), 0.0);
        assert_eq!(Activation::Logsig.apply(0.0), 0.5);
        assert_eq!(Activation::Radbas.apply(0.0), 1.0);
        assert_eq!(Activation::Poslin.apply(-3.0), 0.0);
        assert_eq!(Activation::Poslin.apply(2.5), 2.5);
        assert_eq!(Activation::Purelin.apply(1.7), 1.7);
        // poslin kink defined as 0.
        assert_eq!(Activation::Poslin.derivative(0.0), 0.0);
        // radbas'(x) = -2x e^{-x^2}.
        let x = 0.8;
        assert!((Activation::Radbas.derivative(x) - (-2.0 * x * (-x * x).exp())).abs() < 1e-15);
    }

    // --- forward -----------------------------------------------------------

    #[test]
    fn zero_parameters_give_zero_output() {
        let model = zeroed(MlpModel::two_hidden(3, 4, 4, Activation::Tansig, 1).unwrap());
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![5.0, 5.0, 5.0]]);
        let y = model.forward(&x).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn purelin_network_collapses_to_matrix_product() {
        // With identity activations the network is affine; compare against
        // the explicit composition A = W3 W2 W1, c = W3 W2 b1 + W3 b2 + b3.
        let model = MlpModel::two_hidden(2, 3, 3, Activation::Purelin, 7).unwrap();
        let x = Matrix::from_rows(&[vec![0.4, -0.9], vec![1.2, 0.3], vec![-0.5, 0.8]]);
        let pred = model.forward(&x).unwrap();

        let mat = |m: &Matrix, v: &[f64]| -> Vec<f64> {
            (0..m.rows())
                .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        };
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        };
        for i in 0..x.rows() {
            let h1 = add(&mat(model.weights(0), x.row(i)), model.biases(0));
            let h2 = add(&mat(model.weights(1), &h1), model.biases(1));
            let out = add(&mat(model.weights(2), &h2), model.biases(2));
            for (o, expect) in out.iter().enumerate() {
                assert!((pred.get(i, o) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logsig_zero_input_passes_output_bias() {
        let mut model = zeroed(MlpModel::two_hidden(3, 4, 4, Activation::Logsig, 1).unwrap());
        let last = model.num_layers() - 1;
        model.biases_mut(last).copy_from_slice(&[1.0, 2.0]);
        let y = model
            .forward(&Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]))
            .unwrap();
        // Hidden values are logsig(0) = 0.5 but feed zero weights.
        assert_eq!(y.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = MlpModel::two_hidden(3, 4, 4, Activation::Tansig, 1).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!(matches!(model.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn forward_of_batch_equals_per_row_forward() {
        let model = MlpModel::two_hidden(4, 6, 5, Activation::Radbas, 11).unwrap();
        let rows = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![-1.0, 0.5, 2.0, -0.3],
            vec![0.0, 0.0, 1.0, 1.0],
        ];
        let batch = model.forward(&Matrix::from_rows(&rows)).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let single = model
                .forward(&Matrix::from_rows(std::slice::from_ref(row)))
                .unwrap();
            for o in 0..2 {
                assert!((batch.get(i, o) - single.get(0, o)).abs() < 1e-12);
            }
        }
    }

    // --- mse ------------------------------------------------------------------

    #[test]
    fn mse_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = Matrix::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert_eq!(mse_loss(&a, &b).unwrap(), 1.0);
        let p = Matrix::from_rows(&[vec![0.0, 0.0]]);
        let l = Matrix::from_rows(&[vec![3.0, 4.0]]);
        assert_eq!(mse_loss(&p, &l).unwrap(), 12.5);
    }

    // --- backward ---------------------------------------------------------------

    #[test]
    fn zero_residual_means_zero_output_bias_gradient() {
        let model = MlpModel::two_hidden(2, 3, 3, Activation::Tansig, 3).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.4]]);
        let labels = model.forward(&x).unwrap();
        let grads = model.backward(&x, &labels).unwrap();
        let last = model.num_layers() - 1;
        assert!(grads.d_biases[last].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_finite_differences_all_activations() {
        for (i, act) in ALL_ACTIVATIONS.iter().enumerate() {
            let model = MlpModel::two_hidden(3, 5, 4, *act, 100 + i as u64).unwrap();
            let x = Matrix::from_rows(&[
                vec![0.2, -0.7, 0.5],
                vec![0.9, 0.1, -0.2],
                vec![-0.4, 0.4, 0.8],
            ]);
            let y = Matrix::from_rows(&[vec![0.3, 0.6], vec![-0.2, 0.1], vec![0.5, 0.5]]);
            let analytic = model.backward(&x, &y).unwrap();
            let numeric = numeric_gradients(&model, &x, &y, 1e-6);
            assert_grad_close(&analytic, &numeric);
        }
    }

    #[test]
    fn single_linear_layer_matches_regression_gradient() {
        // One purelin layer: d(loss)/dW = 2/(N*out) * delta^T X.
        let model = MlpModel::new(vec![3, 2], Activation::Purelin, 5).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.5, -0.3], vec![0.2, -1.0, 0.7]]);
        let y = Matrix::from_rows(&[vec![0.4, -0.1], vec![0.9, 0.3]]);
        let grads = model.backward(&x, &y).unwrap();
        let pred = model.forward(&x).unwrap();
        let scale = 2.0 / (2.0 * 2.0);
        for o in 0..2 {
            for c in 0..3 {
                let mut expect = 0.0;
                for i in 0..2 {
                    expect += scale * (pred.get(i, o) - y.get(i, o)) * x.get(i, c);
                }
                assert!((grads.d_weights[0].get(o, c) - expect).abs() < 1e-12);
            }
        }
    }

    // --- train -----------------------------------------------------------------

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let model = MlpModel::two_hidden(2, 3, 3, Activation::Tansig, 9).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.5, 0.4]]);
        let y = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.1]]);
        let config = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 5,
            patience: 100,
            ..TrainConfig::default()
        };
        let before = model.to_json().unwrap();
        let (trained, history) = train(model, &x, &y, &config).unwrap();
        assert_eq!(trained.to_json().unwrap(), before);
        assert!(history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn linear_toy_learns_slope_two() {
        // y = 2x with a single purelin unit; closed-form least squares says
        // the slope converges to 2 and the intercept to 0.
        let model = MlpModel::new(vec![1, 1], Activation::Purelin, 21).unwrap();
        let xs: Vec<f64> = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let x = Matrix::from_vec(5, 1, xs.clone());
        let y = Matrix::from_vec(5, 1, xs.iter().map(|v| 2.0 * v).collect());
        let config = TrainConfig {
            learning_rate: 0.5,
            max_epochs: 2000,
            min_improvement: 0.0,
            patience: 2000,
            ..TrainConfig::default()
        };
        let (trained, history) = train(model, &x, &y, &config).unwrap();
        let slope = trained.weights(0).get(0, 0);
        let intercept = trained.biases(0)[0];
        assert!((slope - 2.0).abs() < 1e-3, "slope {slope}");
        assert!(intercept.abs() < 1e-3, "intercept {intercept}");
        assert!(history.last().unwrap() <= history.first().unwrap());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let x = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.5, 0.4], vec![0.7, 0.7]]);
        let y = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.1], vec![0.9, 0.9]]);
        let config = TrainConfig {
            learning_rate: 0.1,
            max_epochs: 50,
            batch_mode: BatchMode::MiniBatch(2),
            seed: 77,
            ..TrainConfig::default()
        };
        let run = || {
            let model = MlpModel::two_hidden(2, 4, 4, Activation::Logsig, 13).unwrap();
            let (m, h) = train(model, &x, &y, &config).unwrap();
            (m.to_json().unwrap(), h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn divergence_reports_epoch() {
        let model = MlpModel::new(vec![1, 1], Activation::Purelin, 2).unwrap();
        let x = Matrix::from_vec(2, 1, vec![1.0, -1.0]);
        let y = Matrix::from_vec(2, 1, vec![2.0, -2.0]);
        let config = TrainConfig {
            learning_rate: 1e8,
            max_epochs: 100,
            ..TrainConfig::default()
        };
        match train(model, &x, &y, &config) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_does_not_mutate_inputs() {
        let x = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.5, 0.4]]);
        let y = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.1]]);
        let x_copy = x.clone();
        let y_copy = y.clone();
        let model = MlpModel::two_hidden(2, 3, 3, Activation::Tansig, 4).unwrap();
        let _ = train(model, &x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(x, x_copy);
        assert_eq!(y, y_copy);
    }

    // --- serialization -----------------------------------------------------------

    #[test]
    fn model_json_roundtrip() {
        let model = MlpModel::two_hidden(9, 40, 50, Activation::Logsig, 42).unwrap();
        let json = model.to_json().unwrap();
        let back = MlpModel::from_json(&json).unwrap();
        assert_eq!(model, back);
        assert!(json.contains("\"format_version\": 1"));
        assert!(json.contains("\"logsig\""));
    }

    #[test]
    fn model_json_rejects_malformed_buffers() {
        let model = MlpModel::two_hidden(2, 3, 3, Activation::Tansig, 1).unwrap();
        let mut file: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        file["weights"][0] = serde_json::json!([1.0, 2.0]);
        assert!(MlpModel::from_json(&file.to_string()).is_err());
    }
}
