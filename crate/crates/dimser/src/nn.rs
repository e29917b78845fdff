//! The deep MLP regressor: five hidden layers by default (256, 128, 64,
//! 32, 16) feeding three one-unit linear heads for valence, arousal, and
//! dominance. Backpropagation, Adam, minibatch training with shuffling,
//! and dev-loss early stopping with best-epoch weight restoration.

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_HIDDEN_SIZES: [usize; 5] = [256, 128, 64, 32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of pre-activation z.
    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One affine layer: `weights` is input x output, `biases` is output-sized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Array2::zeros(self.weights.dim()),
            biases: Array1::zeros(self.biases.len()),
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Multilayer perceptron with three scalar regression heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub hidden: Vec<Layer>,
    /// Valence, arousal, dominance heads, each mapping the last hidden
    /// layer to one linear unit.
    pub heads: Vec<Layer>,
}

pub const N_HEADS: usize = 3;

impl MlpModel {
    pub fn param_count(&self) -> usize {
        self.hidden
            .iter()
            .chain(self.heads.iter())
            .map(Layer::param_count)
            .sum()
    }

    /// Hidden layers followed by the three heads, in a fixed order shared
    /// with [`Gradients`] and [`AdamState`].
    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.hidden.iter().chain(self.heads.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.hidden.iter_mut().chain(self.heads.iter_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.layers().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }
}

/// Glorot-uniform initialization: weights uniform on
/// +-sqrt(6 / (fan_in + fan_out)), biases zero. Deterministic per seed.
pub fn init_model(
    input_dim: usize,
    hidden_sizes: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<MlpModel> {
    if input_dim == 0 {
        return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
    }
    if hidden_sizes.is_empty() || hidden_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument(
            "hidden sizes must be non-empty and positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |fan_in: usize, fan_out: usize| -> Layer {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Layer {
            weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit)),
            biases: Array1::zeros(fan_out),
        }
    };
    let mut hidden = Vec::with_capacity(hidden_sizes.len());
    let mut fan_in = input_dim;
    for &size in hidden_sizes {
        hidden.push(glorot(fan_in, size));
        fan_in = size;
    }
    let heads = (0..N_HEADS).map(|_| glorot(fan_in, 1)).collect();
    Ok(MlpModel {
        input_dim,
        hidden_sizes: hidden_sizes.to_vec(),
        activation,
        hidden,
        heads,
    })
}

/// Per-head prediction vectors for a batch: (valence, arousal, dominance).
pub type Predictions = [Array1<f64>; 3];

struct ForwardCache {
    /// Post-activation outputs, `activations[0]` being the input batch.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values per hidden layer.
    preacts: Vec<Array2<f64>>,
    predictions: Predictions,
}

fn forward_cached(model: &MlpModel, batch: &Array2<f64>) -> Result<ForwardCache> {
    if batch.ncols() != model.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} columns, model expects {}",
            batch.ncols(),
            model.input_dim
        )));
    }
    let mut activations = vec![batch.clone()];
    let mut preacts = Vec::with_capacity(model.hidden.len());
    for layer in &model.hidden {
        let z = activations.last().unwrap().dot(&layer.weights) + &layer.biases;
        let h = z.mapv(|v| model.activation.apply(v));
        preacts.push(z);
        activations.push(h);
    }
    let last = activations.last().unwrap();
    let predictions: Vec<Array1<f64>> = model
        .heads
        .iter()
        .map(|head| last.dot(&head.weights).column(0).to_owned() + head.biases[0])
        .collect();
    let predictions: Predictions = predictions.try_into().unwrap();
    Ok(ForwardCache { activations, preacts, predictions })
}

/// Run the model on a batch; rows are independent utterances.
pub fn forward(model: &MlpModel, batch: &Array2<f64>) -> Result<Predictions> {
    Ok(forward_cached(model, batch)?.predictions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MseMultitask,
    CccMultitask,
}

/// Total multitask loss of predictions against an n x 3 target matrix.
///
/// MSE averages the three per-head MSEs; CCC combines per-head CCC losses
/// with the configured weights, using batch statistics.
pub fn loss_value(
    predictions: &Predictions,
    targets: &Array2<f64>,
    kind: LossKind,
    weights: &LossWeights,
) -> Result<f64> {
    check_targets(predictions, targets, kind)?;
    match kind {
        LossKind::MseMultitask => {
            let per_head: Vec<f64> = (0..N_HEADS)
                .map(|j| {
                    let y = targets.column(j);
                    predictions[j]
                        .iter()
                        .zip(y.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / y.len() as f64
                })
                .collect();
            Ok(crate::objectives::total_mse(per_head[0], per_head[1], per_head[2]))
        }
        LossKind::CccMultitask => {
            let per_head: Vec<f64> = (0..N_HEADS)
                .map(|j| {
                    let y = targets.column(j).to_vec();
                    crate::objectives::ccc_loss(predictions[j].as_slice().unwrap(), &y)
                })
                .collect::<Result<_>>()?;
            Ok(crate::objectives::total_ccc_loss(
                per_head[0],
                per_head[1],
                per_head[2],
                weights,
            ))
        }
    }
}

fn check_targets(predictions: &Predictions, targets: &Array2<f64>, kind: LossKind) -> Result<()> {
    if targets.ncols() != N_HEADS {
        return Err(Error::ShapeMismatch(format!(
            "targets must have 3 columns, got {}",
            targets.ncols()
        )));
    }
    if targets.nrows() != predictions[0].len() {
        return Err(Error::ShapeMismatch(format!(
            "targets have {} rows, predictions {}",
            targets.nrows(),
            predictions[0].len()
        )));
    }
    if kind == LossKind::CccMultitask && targets.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "ccc loss undefined for minibatches of size 1".into(),
        ));
    }
    Ok(())
}

/// Parameter gradients, shaped like the model's hidden layers followed by
/// its heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Gradient of the per-head loss term with respect to that head's
/// predictions.
fn head_output_gradient(
    predictions: &Array1<f64>,
    targets: &ndarray::ArrayView1<f64>,
    kind: LossKind,
    head_weight: f64,
) -> Array1<f64> {
    let n = predictions.len() as f64;
    match kind {
        LossKind::MseMultitask => {
            // d/dx_i of (1/3) * mean((x - y)^2) = 2 (x_i - y_i) / (3 n).
            let mut g = predictions - targets;
            g.mapv_inplace(|v| 2.0 * v / (3.0 * n));
            g
        }
        LossKind::CccMultitask => {
            // Differentiate 1 - 2 cov / (var_x + var_y + (mx - my)^2)
            // through the batch statistics.
            let x = predictions;
            let mx = x.sum() / n;
            let my = targets.sum() / n;
            let mut cov = 0.0;
            let mut var_x = 0.0;
            let mut var_y = 0.0;
            for (&a, &b) in x.iter().zip(targets.iter()) {
                cov += (a - mx) * (b - my);
                var_x += (a - mx) * (a - mx);
                var_y += (b - my) * (b - my);
            }
            cov /= n;
            var_x /= n;
            var_y /= n;
            let denom = var_x + var_y + (mx - my) * (mx - my);
            if denom == 0.0 {
                return Array1::zeros(x.len());
            }
            let ccc = 2.0 * cov / denom;
            Array1::from_shape_fn(x.len(), |i| {
                let dcov = (targets[i] - my) / n;
                let ddenom = 2.0 * (x[i] - mx) / n + 2.0 * (mx - my) / n;
                let dccc = (2.0 * dcov - ccc * ddenom) / denom;
                -head_weight * dccc
            })
        }
    }
}

/// Exact gradients of the configured total loss for one minibatch.
/// Returns the gradients together with the loss value.
pub fn backward(
    model: &MlpModel,
    batch: &Array2<f64>,
    targets: &Array2<f64>,
    kind: LossKind,
    weights: &LossWeights,
) -> Result<(Gradients, f64)> {
    let cache = forward_cached(model, batch)?;
    check_targets(&cache.predictions, targets, kind)?;
    let loss = loss_value(&cache.predictions, targets, kind, weights)?;

    let head_weights = [weights.alpha, weights.beta, weights.dominance()];
    let last_hidden = cache.activations.last().unwrap();
    let mut head_grads = Vec::with_capacity(N_HEADS);
    let mut d_hidden: Array2<f64> = Array2::zeros(last_hidden.dim());
    for (j, head) in model.heads.iter().enumerate() {
        let g = head_output_gradient(
            &cache.predictions[j],
            &targets.column(j),
            kind,
            head_weights[j],
        );
        // dW = h^T g (column vector), db = sum g, dh += g w^T.
        let g_col = g.view().insert_axis(Axis(1));
        let dw = last_hidden.t().dot(&g_col);
        let db = Array1::from_elem(1, g.sum());
        let w_row = head.weights.t();
        d_hidden = d_hidden + g_col.dot(&w_row);
        head_grads.push(Layer { weights: dw, biases: db });
    }

    let mut hidden_grads: Vec<Layer> = Vec::with_capacity(model.hidden.len());
    let mut upstream = d_hidden;
    for (i, layer) in model.hidden.iter().enumerate().rev() {
        let dz = &upstream * &cache.preacts[i].mapv(|v| model.activation.derivative(v));
        let dw = cache.activations[i].t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        upstream = dz.dot(&layer.weights.t());
        hidden_grads.push(Layer { weights: dw, biases: db });
    }
    hidden_grads.reverse();
    hidden_grads.extend(head_grads);
    Ok((Gradients { layers: hidden_grads }, loss))
}

/// Adam optimizer state: bias-corrected first and second moments per
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros: Vec<Layer> = model.layers().map(Layer::zeros_like).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of every parameter in place.
pub fn adam_step(
    state: &mut AdamState,
    model: &mut MlpModel,
    gradients: &Gradients,
    learning_rate: f64,
) -> Result<()> {
    for layer in &gradients.layers {
        if layer.weights.iter().any(|v| !v.is_finite())
            || layer.biases.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Numerical("non-finite gradient in adam_step".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    for (((layer, grad), m), v) in model
        .layers_mut()
        .zip(gradients.layers.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        };
        for ((p, &g), (m, v)) in layer
            .weights
            .iter_mut()
            .zip(grad.weights.iter())
            .zip(m.weights.iter_mut().zip(v.weights.iter_mut()))
        {
            update(p, g, m, v);
        }
        for ((p, &g), (m, v)) in layer
            .biases
            .iter_mut()
            .zip(grad.biases.iter())
            .zip(m.biases.iter_mut().zip(v.biases.iter_mut()))
        {
            update(p, g, m, v);
        }
    }
    Ok(())
}

/// Training hyperparameters. Fields omitted from a config file take the
/// [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            max_epochs: 180,
            patience: 10,
            learning_rate: 1e-3,
            loss: LossKind::MseMultitask,
            weights: LossWeights::equal(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        LossWeights::new(self.weights.alpha, self.weights.beta)?;
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    /// Zero-based epoch index of the best dev loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.dev_loss.len()
    }

    pub fn best_dev_loss(&self) -> f64 {
        self.dev_loss[self.best_epoch]
    }
}

/// Minibatch training with per-epoch shuffling and early stopping on dev
/// loss. Returns the parameters from the best-dev epoch.
///
/// Features must be pre-scaled and targets already mapped to the training
/// label space; the trainer never fits scalers.
pub fn train(
    model: MlpModel,
    train_x: &Array2<f64>,
    train_y: &Array2<f64>,
    dev_x: &Array2<f64>,
    dev_y: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if train_x.nrows() == 0 || dev_x.nrows() == 0 {
        return Err(Error::InvalidArgument("train and dev sets must be non-empty".into()));
    }
    if train_x.nrows() != train_y.nrows() || dev_x.nrows() != dev_y.nrows() {
        return Err(Error::ShapeMismatch("features and targets row counts differ".into()));
    }

    let mut model = model;
    let mut adam = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train_x.nrows();
    let mut indices: Vec<usize> = (0..n).collect();

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        dev_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_dev = f64::INFINITY;
    let mut best_model = model.clone();
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            // CCC batch statistics are undefined for one row; drop such a
            // trailing batch instead of erroring mid-epoch.
            if cfg.loss == LossKind::CccMultitask && chunk.len() < 2 {
                continue;
            }
            let batch_x = train_x.select(Axis(0), chunk);
            let batch_y = train_y.select(Axis(0), chunk);
            let (grads, loss) = backward(&model, &batch_x, &batch_y, cfg.loss, &cfg.weights)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            adam_step(&mut adam, &mut model, &grads, cfg.learning_rate)?;
            epoch_loss += loss;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::InvalidArgument(
                "no usable minibatches (training set too small for ccc loss)".into(),
            ));
        }
        history.train_loss.push(epoch_loss / batches as f64);

        let dev_pred = forward(&model, dev_x)?;
        let dev_loss = loss_value(&dev_pred, dev_y, cfg.loss, &cfg.weights)?;
        if !dev_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite dev loss at epoch {epoch}"
            )));
        }
        history.dev_loss.push(dev_loss);

        if dev_loss < best_dev {
            best_dev = dev_loss;
            best_model = model.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best_model, history))
}

/// Everything needed to run inference later: the trained model plus the
/// scalers fitted on its training data. Serialized as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: MlpModel,
    pub feature_scaler: Scaler,
    pub label_scaler: Scaler,
    pub feature_names: Vec<String>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&json).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Scaler, ScalerKind};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_model(seed: u64) -> MlpModel {
        init_model(5, &[8, 4], Activation::Relu, seed).unwrap()
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn param_count_paper_configuration() {
        let model = init_model(47, &DEFAULT_HIDDEN_SIZES, Activation::Relu, 0).unwrap();
        // Closed-form oracle, term by term.
        let expected = 47 * 256 + 256
            + 256 * 128 + 128
            + 128 * 64 + 64
            + 64 * 32 + 32
            + 32 * 16 + 16
            + 3 * (16 + 1);
        assert_eq!(model.param_count(), expected);
    }

    #[test]
    fn init_deterministic_and_biases_zero() {
        let a = small_model(123);
        let b = small_model(123);
        let c = small_model(124);
        assert_eq!(a, b, "same seed, bit-identical parameters");
        assert_ne!(a, c);
        for layer in a.hidden.iter().chain(a.heads.iter()) {
            assert!(layer.biases.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(init_model(0, &[4], Activation::Relu, 0).is_err());
        assert!(init_model(4, &[], Activation::Relu, 0).is_err());
        assert!(init_model(4, &[4, 0], Activation::Relu, 0).is_err());
    }

    #[test]
    fn forward_zero_parameters_gives_zero() {
        let mut model = small_model(1);
        for layer in model.hidden.iter_mut().chain(model.heads.iter_mut()) {
            layer.weights.fill(0.0);
            layer.biases.fill(0.0);
        }
        let preds = forward(&model, &random_batch(4, 5, 2)).unwrap();
        for head in &preds {
            assert!(head.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_row_independence() {
        let model = small_model(3);
        let batch = random_batch(6, 5, 4);
        let full = forward(&model, &batch).unwrap();
        for row in 0..6 {
            let single = batch.select(Axis(0), &[row]);
            let one = forward(&model, &single).unwrap();
            for j in 0..3 {
                assert_abs_diff_eq!(one[j][0], full[j][row], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        // 2-input, one hidden layer of 2 (relu), one head used; weights
        // chosen so the matrix products are easy to do by hand.
        let mut model = init_model(2, &[2], Activation::Relu, 0).unwrap();
        model.hidden[0].weights = array![[1.0, -1.0], [2.0, 0.5]];
        model.hidden[0].biases = array![0.1, -0.2];
        model.heads[0].weights = array![[1.0], [2.0]];
        model.heads[0].biases = array![0.5];
        let batch = array![[1.0, 2.0]];
        // z = [1 + 4 + 0.1, -1 + 1 - 0.2] = [5.1, -0.2]; h = [5.1, 0];
        // head = 5.1 * 1 + 0 * 2 + 0.5 = 5.6.
        let preds = forward(&model, &batch).unwrap();
        assert_abs_diff_eq!(preds[0][0], 5.6, epsilon = 1e-12);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let model = small_model(5);
        assert!(forward(&model, &random_batch(3, 4, 6)).is_err());
    }

    #[test]
    fn mse_gradients_zero_at_exact_fit() {
        let model = small_model(7);
        let batch = random_batch(8, 5, 8);
        let preds = forward(&model, &batch).unwrap();
        let mut targets = Array2::zeros((8, 3));
        for j in 0..3 {
            targets.column_mut(j).assign(&preds[j]);
        }
        let (grads, loss) = backward(
            &model,
            &batch,
            &targets,
            LossKind::MseMultitask,
            &LossWeights::equal(),
        )
        .unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-20);
        for layer in &grads.layers {
            assert!(layer.weights.iter().all(|&g| g.abs() < 1e-15));
            assert!(layer.biases.iter().all(|&g| g.abs() < 1e-15));
        }
    }

    #[test]
    fn mse_gradient_linearity_in_residual() {
        let model = small_model(9);
        let batch = random_batch(6, 5, 10);
        let preds = forward(&model, &batch).unwrap();
        // Targets y and y' with doubled residuals: grads must double.
        let mut y = Array2::zeros((6, 3));
        let mut y2 = Array2::zeros((6, 3));
        for j in 0..3 {
            for i in 0..6 {
                let r = 0.1 * (i as f64 + 1.0) * (j as f64 + 1.0);
                y[[i, j]] = preds[j][i] - r;
                y2[[i, j]] = preds[j][i] - 2.0 * r;
            }
        }
        let (g1, _) =
            backward(&model, &batch, &y, LossKind::MseMultitask, &LossWeights::equal()).unwrap();
        let (g2, _) =
            backward(&model, &batch, &y2, LossKind::MseMultitask, &LossWeights::equal()).unwrap();
        for (a, b) in g1.layers.iter().zip(g2.layers.iter()) {
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-10);
            }
        }
    }

    /// Central finite differences over every parameter of the model.
    fn finite_diff_check(kind: LossKind, weights: &LossWeights, tanh: bool) {
        let activation = if tanh { Activation::Tanh } else { Activation::Relu };
        let model = init_model(5, &[8, 4], activation, 42).unwrap();
        let batch = random_batch(16, 5, 43);
        let targets = random_batch(16, 3, 44);
        let (grads, _) = backward(&model, &batch, &targets, kind, weights).unwrap();

        let step = 1e-5;
        let mut max_rel = 0.0f64;
        let n_layers = model.hidden.len() + model.heads.len();
        for li in 0..n_layers {
            let shape = grads.layers[li].weights.dim();
            for wi in 0..shape.0 {
                for wj in 0..shape.1 {
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    let get = |m: &mut MlpModel| -> *mut f64 {
                        let l = if li < m.hidden.len() {
                            &mut m.hidden[li]
                        } else {
                            let k = li - m.hidden.len();
                            &mut m.heads[k]
                        };
                        &mut l.weights[[wi, wj]]
                    };
                    unsafe {
                        *get(&mut plus) += step;
                        *get(&mut minus) -= step;
                    }
                    let lp = loss_value(&forward(&plus, &batch).unwrap(), &targets, kind, weights)
                        .unwrap();
                    let lm = loss_value(&forward(&minus, &batch).unwrap(), &targets, kind, weights)
                        .unwrap();
                    let numeric = (lp - lm) / (2.0 * step);
                    let analytic = grads.layers[li].weights[[wi, wj]];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                    max_rel = max_rel.max((analytic - numeric).abs() / denom);
                }
            }
            for bi in 0..grads.layers[li].biases.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let get = |m: &mut MlpModel| -> *mut f64 {
                    let l = if li < m.hidden.len() {
                        &mut m.hidden[li]
                    } else {
                        let k = li - m.hidden.len();
                        &mut m.heads[k]
                    };
                    &mut l.biases[bi]
                };
                unsafe {
                    *get(&mut plus) += step;
                    *get(&mut minus) -= step;
                }
                let lp =
                    loss_value(&forward(&plus, &batch).unwrap(), &targets, kind, weights).unwrap();
                let lm =
                    loss_value(&forward(&minus, &batch).unwrap(), &targets, kind, weights).unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let analytic = grads.layers[li].biases[bi];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max((analytic - numeric).abs() / denom);
            }
        }
        assert!(max_rel < 1e-6, "max relative gradient error {max_rel}");
    }

    #[test]
    fn gradient_check_mse_tanh() {
        finite_diff_check(LossKind::MseMultitask, &LossWeights::equal(), true);
    }

    #[test]
    fn gradient_check_ccc_tanh() {
        finite_diff_check(
            LossKind::CccMultitask,
            &LossWeights::new(0.5, 0.3).unwrap(),
            true,
        );
    }

    #[test]
    fn ccc_loss_rejects_singleton_batch() {
        let model = small_model(11);
        let batch = random_batch(1, 5, 12);
        let targets = random_batch(1, 3, 13);
        assert!(backward(
            &model,
            &batch,
            &targets,
            LossKind::CccMultitask,
            &LossWeights::equal()
        )
        .is_err());
    }

    #[test]
    fn batch_permutation_invariance() {
        let model = small_model(14);
        let batch = random_batch(10, 5, 15);
        let targets = random_batch(10, 3, 16);
        let perm: Vec<usize> = vec![7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
        let batch_p = batch.select(Axis(0), &perm);
        let targets_p = targets.select(Axis(0), &perm);
        for kind in [LossKind::MseMultitask, LossKind::CccMultitask] {
            let w = LossWeights::equal();
            let (g1, l1) = backward(&model, &batch, &targets, kind, &w).unwrap();
            let (g2, l2) = backward(&model, &batch_p, &targets_p, kind, &w).unwrap();
            assert_abs_diff_eq!(l1, l2, epsilon = 1e-12);
            for (a, b) in g1.layers.iter().zip(g2.layers.iter()) {
                for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut model = small_model(17);
        let before = model.clone();
        let mut state = AdamState::new(&model);
        let grads = Gradients {
            layers: model.hidden.iter().chain(model.heads.iter()).map(Layer::zeros_like).collect(),
        };
        adam_step(&mut state, &mut model, &grads, 1e-3).unwrap();
        assert_eq!(model, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // Scalar oracle: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps).
        let mut model = init_model(1, &[1], Activation::Relu, 0).unwrap();
        model.hidden[0].weights[[0, 0]] = 0.0;
        let mut state = AdamState::new(&model);
        let mut grads = Gradients {
            layers: model.hidden.iter().chain(model.heads.iter()).map(Layer::zeros_like).collect(),
        };
        grads.layers[0].weights[[0, 0]] = 0.5;
        adam_step(&mut state, &mut model, &grads, 1e-3).unwrap();
        let expected = -1e-3 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert_abs_diff_eq!(model.hidden[0].weights[[0, 0]], expected, epsilon = 1e-12);
    }

    #[test]
    fn adam_two_steps_follow_recurrences() {
        let mut model = init_model(1, &[1], Activation::Relu, 0).unwrap();
        model.hidden[0].weights[[0, 0]] = 0.0;
        let mut state = AdamState::new(&model);
        let g = 0.3;
        let mut grads = Gradients {
            layers: model.hidden.iter().chain(model.heads.iter()).map(Layer::zeros_like).collect(),
        };
        grads.layers[0].weights[[0, 0]] = g;
        adam_step(&mut state, &mut model, &grads, 1e-3).unwrap();
        adam_step(&mut state, &mut model, &grads, 1e-3).unwrap();
        assert_eq!(state.step, 2);
        // Recurrence oracle computed independently.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 1e-3);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut p = 0.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1_pow(b1, t));
            let v_hat: f64 = v / (1.0 - b1_pow(b2, t));
            p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert_abs_diff_eq!(model.hidden[0].weights[[0, 0]], p, epsilon = 1e-12);
    }

    fn b1_pow(b: f64, t: u64) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut model = small_model(18);
        let mut state = AdamState::new(&model);
        let mut grads = Gradients {
            layers: model.hidden.iter().chain(model.heads.iter()).map(Layer::zeros_like).collect(),
        };
        grads.layers[0].weights[[0, 0]] = f64::NAN;
        assert!(adam_step(&mut state, &mut model, &grads, 1e-3).is_err());
    }

    #[test]
    fn train_stops_after_patience_on_flat_dev_loss() {
        // lr = 0: parameters never move, dev loss is constant from epoch 1,
        // so training stops at epoch 1 + patience.
        let model = small_model(19);
        let x = random_batch(20, 5, 20);
        let y = random_batch(20, 3, 21);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 180,
            patience: 10,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (_, history) = train(model, &x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(history.epochs_run(), 11);
        assert!(history.stopped_early);
        assert_eq!(history.best_epoch, 0);
    }

    #[test]
    fn train_runs_to_max_epochs_when_improving() {
        let model = small_model(22);
        let x = random_batch(32, 5, 23);
        // Learnable smooth target keeps dev loss strictly improving at the
        // start of training.
        let mut y = Array2::zeros((32, 3));
        for i in 0..32 {
            let s: f64 = x.row(i).sum();
            y[[i, 0]] = 0.3 * s;
            y[[i, 1]] = -0.2 * s;
            y[[i, 2]] = 0.1 * s + 0.05;
        }
        let cfg = TrainConfig {
            max_epochs: 12,
            patience: 10,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let (_, history) = train(model, &x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(history.epochs_run(), 12);
        assert!(!history.stopped_early);
        for w in history.dev_loss.windows(2) {
            assert!(w[1] < w[0], "dev loss not strictly improving: {:?}", history.dev_loss);
        }
    }

    #[test]
    fn train_returns_best_dev_model() {
        let model = small_model(24);
        let x = random_batch(24, 5, 25);
        let y = random_batch(24, 3, 26);
        let cfg = TrainConfig { max_epochs: 30, batch_size: 8, ..TrainConfig::default() };
        let (best, history) = train(model, &x, &y, &x, &y, &cfg).unwrap();
        let preds = forward(&best, &x).unwrap();
        let loss = loss_value(&preds, &y, cfg.loss, &cfg.weights).unwrap();
        assert_abs_diff_eq!(loss, history.best_dev_loss(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            history.best_dev_loss(),
            history.dev_loss.iter().cloned().fold(f64::INFINITY, f64::min),
            epsilon = 1e-15
        );
    }

    #[test]
    fn train_deterministic_for_fixed_seed() {
        let x = random_batch(20, 5, 27);
        let y = random_batch(20, 3, 28);
        let cfg = TrainConfig { max_epochs: 5, batch_size: 8, ..TrainConfig::default() };
        let (m1, h1) = train(small_model(29), &x, &y, &x, &y, &cfg).unwrap();
        let (m2, h2) = train(small_model(29), &x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn train_rejects_empty_sets() {
        let model = small_model(30);
        let x = random_batch(4, 5, 31);
        let y = random_batch(4, 3, 32);
        let empty_x = Array2::zeros((0, 5));
        let empty_y = Array2::zeros((0, 3));
        let cfg = TrainConfig::default();
        assert!(train(model, &empty_x, &empty_y, &x, &y, &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = small_model(33);
        let features = random_batch(10, 5, 34);
        let labels = random_batch(10, 3, 35);
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            feature_scaler: Scaler::fit(ScalerKind::Zscore, &features).unwrap(),
            label_scaler: Scaler::fit(ScalerKind::Minmax, &labels).unwrap(),
            feature_names: (0..5).map(|i| format!("f{i}")).collect(),
        };
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt, "bit-exact checkpoint round trip");
    }
}
