//! A small fully-connected classifier trained from scratch on synthetic
//! data: cross-entropy plus a virtual-outlier energy-separation loss, with an
//! optional dimension-reducing head layer and the spectral penalties. Plain
//! SGD, single-threaded by contract, bit-deterministic per seed.

mod grad;
mod vos;

pub use grad::{energy_uncertainty_loss, step_loss_and_grads, EnergyLossGrads, ModelGrads, StepOptions};
pub use vos::{vos_synthesize_outliers, ClassGaussian};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{head_forward, ClassifierHead};
use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix, DEFAULT_REL_TOL};
use crate::rng::{derive_seed, stream_rng};

/// RNG stream offset for the per-epoch shuffle (stream 0 is initialization).
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;
/// Tag for deriving per-epoch outlier-synthesis seeds.
const VOS_SEED_TAG: u64 = 2;

/// Architecture of the classifier: backbone input, hidden widths (the last
/// one is the feature dimension) and class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl LayerDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.is_empty() {
            return Err(Error::ConfigError(format!(
                "invalid dimension chain: input {}, hidden {:?}, classes {}",
                self.input_dim, self.hidden_dims, self.num_classes
            )));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::ConfigError("hidden layer width of zero".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated non-empty")
    }
}

/// Training hyperparameters. `lambda_lsv` and `lambda_cn` may not both be
/// positive in one run so the ablations stay interpretable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_lsv: f64,
    pub lambda_cn: f64,
    pub energy_loss_weight: f64,
    pub nsr_r: Option<usize>,
    pub hidden_dims: Vec<usize>,
    pub outlier_samples_per_class: usize,
    pub outlier_start_epoch: usize,
    pub outlier_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            lambda_lsv: 0.0,
            lambda_cn: 0.0,
            energy_loss_weight: 0.5,
            nsr_r: None,
            hidden_dims: vec![16, 8],
            outlier_samples_per_class: 4,
            outlier_start_epoch: 10,
            outlier_candidates: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_lsv > 0.0 && self.lambda_cn > 0.0 {
            return Err(Error::ConfigError(
                "lambda_lsv and lambda_cn may not both be positive in one run".into(),
            ));
        }
        if self.lambda_lsv < 0.0 || self.lambda_cn < 0.0 || self.energy_loss_weight < 0.0 {
            return Err(Error::ConfigError("loss weights must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigError("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigError(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.energy_loss_weight > 0.0 {
            if self.outlier_candidates < 10 {
                return Err(Error::ConfigError("outlier_candidates must be >= 10".into()));
            }
            if self.outlier_samples_per_class == 0 {
                return Err(Error::ConfigError("outlier_samples_per_class must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One dense layer: weights stored input x output, forward is `w^T a + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// The classifier: a rectifier MLP backbone, the linear head (with optional
/// reduction layer) and a single logistic uncertainty unit on free energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Full dimension chain input -> hidden... -> [reduction ->] classes.
    pub(crate) layer_dims: Vec<usize>,
    pub(crate) backbone: Vec<LinearLayer>,
    pub(crate) head: ClassifierHead,
    pub(crate) psi_weight: f64,
    pub(crate) psi_bias: f64,
}

impl MlpModel {
    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    /// (psi_weight, psi_bias) of the uncertainty unit.
    pub fn psi(&self) -> (f64, f64) {
        (self.psi_weight, self.psi_bias)
    }

    pub fn set_psi(&mut self, weight: f64, bias: f64) {
        self.psi_weight = weight;
        self.psi_bias = bias;
    }

    /// All parameters flattened: per backbone layer weights then bias, then
    /// the reduction matrix, then `w_cls`, then the two psi scalars.
    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.backbone {
            out.extend_from_slice(layer.w.data());
            out.extend_from_slice(&layer.b);
        }
        if let Some(g) = self.head.nsr() {
            out.extend_from_slice(g.data());
        }
        out.extend_from_slice(self.head.w_cls().data());
        out.push(self.psi_weight);
        out.push(self.psi_bias);
        out
    }

    /// Inverse of [`params_vec`]; used by the finite-difference checks.
    pub fn set_params_vec(&mut self, params: &[f64]) -> Result<()> {
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<Vec<f64>> {
            if pos + len > params.len() {
                return Err(Error::shape(format!("{} parameters", pos + len), format!("{}", params.len())));
            }
            let slice = params[pos..pos + len].to_vec();
            pos += len;
            Ok(slice)
        };
        let mut backbone = Vec::with_capacity(self.backbone.len());
        for layer in &self.backbone {
            let w = Matrix::new(layer.w.rows(), layer.w.cols(), take(layer.w.rows() * layer.w.cols())?)?;
            let b = take(layer.b.len())?;
            backbone.push(LinearLayer { w, b });
        }
        let head = match self.head.nsr() {
            Some(g) => {
                let nsr = Matrix::new(g.rows(), g.cols(), take(g.rows() * g.cols())?)?;
                let w_cls = Matrix::new(
                    self.head.w_cls().rows(),
                    self.head.w_cls().cols(),
                    take(self.head.w_cls().rows() * self.head.w_cls().cols())?,
                )?;
                ClassifierHead::with_reduction(nsr, w_cls)?
            }
            None => {
                let w_cls = Matrix::new(
                    self.head.w_cls().rows(),
                    self.head.w_cls().cols(),
                    take(self.head.w_cls().rows() * self.head.w_cls().cols())?,
                )?;
                ClassifierHead::new(w_cls)?
            }
        };
        let psi = take(2)?;
        if pos != params.len() {
            return Err(Error::shape(format!("{pos} parameters"), format!("{}", params.len())));
        }
        self.backbone = backbone;
        self.head = head;
        self.psi_weight = psi[0];
        self.psi_bias = psi[1];
        Ok(())
    }

    /// Serialize to the model file format: one JSON document with the
    /// dimension chain and row-major weight arrays. Round-trips bit-exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MlpModel = serde_json::from_str(text).map_err(|e| Error::ParseError {
            line: e.line(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let mut chain = vec![self.input_dim()];
        for layer in &self.backbone {
            if layer.w.rows() != *chain.last().unwrap() {
                return Err(Error::shape(format!("layer input {}", chain.last().unwrap()), format!("{}", layer.w.rows())));
            }
            if layer.b.len() != layer.w.cols() {
                return Err(Error::shape(format!("bias of length {}", layer.w.cols()), format!("{}", layer.b.len())));
            }
            chain.push(layer.w.cols());
        }
        if let Some(g) = self.head.nsr() {
            if g.rows() != *chain.last().unwrap() {
                return Err(Error::shape(format!("reduction input {}", chain.last().unwrap()), format!("{}", g.rows())));
            }
            chain.push(g.cols());
        } else if self.head.w_cls().rows() != *chain.last().unwrap() {
            return Err(Error::shape(
                format!("head input {}", chain.last().unwrap()),
                format!("{}", self.head.w_cls().rows()),
            ));
        }
        chain.push(self.head.num_classes());
        if chain != self.layer_dims {
            return Err(Error::ConfigError(format!(
                "layer_dims {:?} does not match weights {:?}",
                self.layer_dims, chain
            )));
        }
        if !self.psi_weight.is_finite() || !self.psi_bias.is_finite() {
            return Err(Error::ConfigError("non-finite uncertainty parameters".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform initialization, deterministic per seed: every weight
/// matrix draws from `U[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`,
/// biases start at zero and the uncertainty unit starts at `(1, 0)`.
pub fn init_model(config: &TrainConfig, dims: &LayerDims) -> Result<MlpModel> {
    dims.validate()?;
    if let Some(r) = config.nsr_r {
        if r == 0 || r >= dims.feature_dim() {
            return Err(Error::ConfigError(format!(
                "reduction dimension r = {r} must satisfy 0 < r < feature dim {}",
                dims.feature_dim()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut glorot = |fan_in: usize, fan_out: usize| -> Matrix {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Matrix::from_fn(fan_in, fan_out, |_, _| a * (2.0 * rng.gen::<f64>() - 1.0))
    };

    let mut chain = vec![dims.input_dim];
    chain.extend_from_slice(&dims.hidden_dims);
    let mut backbone = Vec::with_capacity(dims.hidden_dims.len());
    for pair in chain.windows(2) {
        backbone.push(LinearLayer { w: glorot(pair[0], pair[1]), b: vec![0.0; pair[1]] });
    }

    let feature_dim = dims.feature_dim();
    let head = match config.nsr_r {
        Some(r) => {
            let nsr = glorot(feature_dim, r);
            let w_cls = glorot(r, dims.num_classes);
            chain.push(r);
            ClassifierHead::with_reduction(nsr, w_cls)?
        }
        None => ClassifierHead::new(glorot(feature_dim, dims.num_classes))?,
    };
    chain.push(dims.num_classes);

    Ok(MlpModel { layer_dims: chain, backbone, head, psi_weight: 1.0, psi_bias: 0.0 })
}

/// Labeled training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.features.len() != self.labels.len() {
            return Err(Error::shape(format!("{} labels", self.features.len()), format!("{}", self.labels.len())));
        }
        if self.num_classes < 2 {
            return Err(Error::ConfigError("need at least 2 classes".into()));
        }
        let dim = self.features[0].len();
        if self.features.iter().any(|f| f.len() != dim) {
            return Err(Error::ConfigError("inconsistent feature dimensions".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::ConfigError(format!("label {bad} out of range")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }
}

/// Spectrum and accuracy snapshot after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub sigma_min: f64,
    pub kappa: f64,
    pub nullity: usize,
}

/// Output of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub model: MlpModel,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(model: &MlpModel, dataset: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in dataset.features.iter().zip(&dataset.labels) {
        if argmax(&model.logits(x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.features.len() as f64)
}

fn spectrum_stats(w_cls: &Matrix) -> Result<(f64, f64, usize)> {
    let decomp = svd(w_cls)?;
    let e = decomp.sigma_extremes(DEFAULT_REL_TOL)?;
    let nullity = w_cls.rows() - decomp.rank(DEFAULT_REL_TOL);
    Ok((e.sigma_min, e.sigma_max / e.sigma_min, nullity))
}

/// Train from scratch with plain SGD. The per-step objective is
/// cross-entropy + `energy_loss_weight` x uncertainty loss (once the outlier
/// start epoch is reached) + the configured spectral penalty. Fully
/// deterministic: same config and dataset give a bit-identical report.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainReport> {
    config.validate()?;
    dataset.validate()?;
    let dims = LayerDims {
        input_dim: dataset.dim(),
        hidden_dims: config.hidden_dims.clone(),
        num_classes: dataset.num_classes,
    };
    let mut model = init_model(config, &dims)?;
    let opts = StepOptions {
        energy_weight: config.energy_loss_weight,
        lambda_lsv: config.lambda_lsv,
        lambda_cn: config.lambda_cn,
    };
    let n = dataset.features.len();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // Epoch outlier set, synthesized from the current feature space.
        let outliers = if config.energy_loss_weight > 0.0 && epoch >= config.outlier_start_epoch {
            let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); dataset.num_classes];
            for (x, &y) in dataset.features.iter().zip(&dataset.labels) {
                by_class[y].push(model.features(x)?);
            }
            let mut all = Vec::with_capacity(config.outlier_samples_per_class * dataset.num_classes);
            for round in 0..config.outlier_samples_per_class {
                let seed = derive_seed(config.seed, VOS_SEED_TAG, (epoch * config.outlier_samples_per_class + round) as u64);
                all.extend(vos_synthesize_outliers(&by_class, config.outlier_candidates, seed)?);
            }
            all
        } else {
            Vec::new()
        };

        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM_BASE + epoch as u64);
        // Fisher-Yates, explicit so the byte order never depends on rand's
        // shuffle implementation details.
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for batch in order.chunks(config.batch_size) {
            let feats: Vec<Vec<f64>> = batch.iter().map(|&i| dataset.features[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let (loss, grads) = step_loss_and_grads(&model, &feats, &labels, &outliers, &opts)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            apply_sgd(&mut model, &grads, config.learning_rate);
            epoch_loss += loss;
            steps += 1;
        }

        if model.head.w_cls().data().iter().any(|x| !x.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        let (sigma_min, kappa, nullity) = spectrum_stats(model.head.w_cls())?;
        epochs.push(EpochStats {
            loss: epoch_loss / steps as f64,
            accuracy: accuracy(&model, dataset)?,
            sigma_min,
            kappa,
            nullity,
        });
    }

    Ok(TrainReport { epochs, model })
}

fn apply_sgd(model: &mut MlpModel, grads: &ModelGrads, lr: f64) {
    for (layer, (dw, db)) in model.backbone.iter_mut().zip(&grads.backbone) {
        layer.w.add_scaled(dw, -lr);
        for (b, d) in layer.b.iter_mut().zip(db) {
            *b -= lr * d;
        }
    }
    let mut w_cls = model.head.w_cls().clone();
    w_cls.add_scaled(&grads.w_cls, -lr);
    model.head = match (model.head.nsr(), &grads.nsr) {
        (Some(g), Some(dg)) => {
            let mut nsr = g.clone();
            nsr.add_scaled(dg, -lr);
            ClassifierHead::with_reduction(nsr, w_cls).expect("shapes unchanged")
        }
        _ => ClassifierHead::new(w_cls).expect("shapes unchanged"),
    };
    model.psi_weight -= lr * grads.psi_weight;
    model.psi_bias -= lr * grads.psi_bias;
}

#[cfg(test)]
mod tests;
