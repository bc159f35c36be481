//! Forward/backward passes, the energy-separation loss and the composite
//! per-step objective. All accumulation is sequential in a fixed order, so
//! gradients are bit-identical across runs.

use crate::energy::{head_forward, logsumexp, ClassifierHead};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::regularizers::{cn_penalty, lsv_penalty};

use super::MlpModel;

/// Gradients for every parameter of an [`MlpModel`], in the same layout as
/// [`MlpModel::params_vec`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub backbone: Vec<(Matrix, Vec<f64>)>,
    pub nsr: Option<Matrix>,
    pub w_cls: Matrix,
    pub psi_weight: f64,
    pub psi_bias: f64,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            backbone: model
                .backbone
                .iter()
                .map(|l| (Matrix::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
                .collect(),
            nsr: model.head.nsr().map(|g| Matrix::zeros(g.rows(), g.cols())),
            w_cls: Matrix::zeros(model.head.w_cls().rows(), model.head.w_cls().cols()),
            psi_weight: 0.0,
            psi_bias: 0.0,
        }
    }

    /// Flatten in the parameter-vector layout (for finite-difference checks).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.backbone {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        if let Some(g) = &self.nsr {
            out.extend_from_slice(g.data());
        }
        out.extend_from_slice(self.w_cls.data());
        out.push(self.psi_weight);
        out.push(self.psi_bias);
        out
    }
}

/// Per-layer activations of one forward pass; `activations[0]` is the input
/// and the last entry is the backbone feature vector.
pub(crate) struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn features(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

/// Gradients contributed by [`energy_uncertainty_loss`]: the uncertainty
/// unit, the head (and reduction layer), and the loss derivative with
/// respect to each in-distribution feature vector so a caller can continue
/// backpropagation into the backbone. Outlier features are synthetic
/// constants and carry no feature gradient.
#[derive(Debug, Clone)]
pub struct EnergyLossGrads {
    pub psi_weight: f64,
    pub psi_bias: f64,
    pub w_cls: Matrix,
    pub nsr: Option<Matrix>,
    pub d_id_features: Vec<Vec<f64>>,
}

/// Knobs for the composite step objective.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub energy_weight: f64,
    pub lambda_lsv: f64,
    pub lambda_cn: f64,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

impl MlpModel {
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                format!("input of length {}", self.input_dim()),
                format!("{}", x.len()),
            ));
        }
        let mut activations = Vec::with_capacity(self.backbone.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.backbone {
            let z = layer.w.transpose_matvec(activations.last().unwrap())?;
            let a: Vec<f64> = z.iter().zip(&layer.b).map(|(zi, bi)| (zi + bi).max(0.0)).collect();
            activations.push(a);
        }
        Ok(ForwardTrace { activations })
    }

    /// Backbone feature vector `h(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.activations.pop().expect("at least the input"))
    }

    /// Logits for an input.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let phi = self.features(x)?;
        Ok(head_forward(&self.head, &phi)?.1)
    }

    /// Free energy of an input under this model.
    pub fn input_free_energy(&self, x: &[f64]) -> Result<f64> {
        Ok(-logsumexp(&self.logits(x)?)?)
    }
}

/// Backpropagate `dlogits` through the head. Accumulates `w_cls` (and
/// reduction) gradients and returns the gradient at the head input.
fn head_backward(
    head: &ClassifierHead,
    input_features: &[f64],
    effective: &[f64],
    dlogits: &[f64],
    dw_cls: &mut Matrix,
    dnsr: &mut Option<Matrix>,
) -> Vec<f64> {
    dw_cls.add_outer(1.0, effective, dlogits);
    let d_eff = head.w_cls().matvec(dlogits).expect("head dims");
    match (head.nsr(), dnsr) {
        (Some(g), Some(dg)) => {
            dg.add_outer(1.0, input_features, &d_eff);
            g.matvec(&d_eff).expect("reduction dims")
        }
        _ => d_eff,
    }
}

/// Backpropagate a feature-space gradient through the backbone.
fn backbone_backward(model: &MlpModel, trace: &ForwardTrace, d_features: &[f64], grads: &mut ModelGrads) {
    let mut d_a = d_features.to_vec();
    for (l, layer) in model.backbone.iter().enumerate().rev() {
        let a_out = &trace.activations[l + 1];
        let a_in = &trace.activations[l];
        // relu gate: a > 0 iff the pre-activation was positive
        let d_z: Vec<f64> = d_a.iter().zip(a_out).map(|(d, a)| if *a > 0.0 { *d } else { 0.0 }).collect();
        let (dw, db) = &mut grads.backbone[l];
        for (b, dz) in db.iter_mut().zip(&d_z) {
            *b += dz;
        }
        dw.add_outer(1.0, a_in, &d_z);
        d_a = layer.w.matvec(&d_z).expect("layer dims");
    }
}

/// Binary cross-entropy of the logistic uncertainty unit on free energy:
/// label 0 for in-distribution features, 1 for synthesized outliers, averaged
/// over the combined set. Features live in the backbone output space; the
/// reduction layer (when present) is applied inside, so gradients flow into
/// the uncertainty unit, `w_cls` and the reduction weights, and out through
/// `d_id_features` for the in-distribution inputs.
pub fn energy_uncertainty_loss(
    model: &MlpModel,
    id_features: &[Vec<f64>],
    outlier_features: &[Vec<f64>],
) -> Result<(f64, EnergyLossGrads)> {
    if id_features.is_empty() || outlier_features.is_empty() {
        return Err(Error::EmptyInput);
    }
    let head = &model.head;
    let m = (id_features.len() + outlier_features.len()) as f64;
    let mut loss = 0.0;
    let mut grads = EnergyLossGrads {
        psi_weight: 0.0,
        psi_bias: 0.0,
        w_cls: Matrix::zeros(head.w_cls().rows(), head.w_cls().cols()),
        nsr: head.nsr().map(|g| Matrix::zeros(g.rows(), g.cols())),
        d_id_features: Vec::with_capacity(id_features.len()),
    };

    let mut accumulate = |feat: &[f64], is_outlier: bool, grads: &mut EnergyLossGrads| -> Result<Vec<f64>> {
        let (eff, logits) = head_forward(head, feat)?;
        let f = -logsumexp(&logits)?;
        let u = model.psi_weight * f + model.psi_bias;
        let (sample_loss, du) = if is_outlier {
            (softplus(-u), (sigmoid(u) - 1.0) / m)
        } else {
            (softplus(u), sigmoid(u) / m)
        };
        loss += sample_loss / m;
        grads.psi_weight += du * f;
        grads.psi_bias += du;
        let df = du * model.psi_weight;
        let sm = softmax(&logits);
        let dlogits: Vec<f64> = sm.iter().map(|s| -df * s).collect();
        Ok(head_backward(head, feat, &eff, &dlogits, &mut grads.w_cls, &mut grads.nsr))
    };

    for feat in id_features {
        let d_feat = accumulate(feat, false, &mut grads)?;
        grads.d_id_features.push(d_feat);
    }
    for feat in outlier_features {
        accumulate(feat, true, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Loss and gradients for one optimizer step: mean cross-entropy over the
/// batch, plus the weighted energy-separation loss against the epoch's
/// outlier set, plus the spectral penalties on the current head. Penalties
/// depend only on the weights and are evaluated once per step.
pub fn step_loss_and_grads(
    model: &MlpModel,
    features: &[Vec<f64>],
    labels: &[usize],
    outliers: &[Vec<f64>],
    opts: &StepOptions,
) -> Result<(f64, ModelGrads)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", features.len()),
            format!("{}", labels.len()),
        ));
    }
    let n = features.len() as f64;
    let mut grads = ModelGrads::zeros_like(model);
    let mut loss = 0.0;

    let mut traces = Vec::with_capacity(features.len());
    let mut phis: Vec<Vec<f64>> = Vec::with_capacity(features.len());
    let mut d_phis: Vec<Vec<f64>> = Vec::with_capacity(features.len());

    for (x, &y) in features.iter().zip(labels) {
        let trace = model.forward_trace(x)?;
        let phi = trace.features().to_vec();
        let (eff, logits) = head_forward(&model.head, &phi)?;
        if y >= logits.len() {
            return Err(Error::ConfigError(format!("label {y} out of range for {} classes", logits.len())));
        }
        let lse = logsumexp(&logits)?;
        loss += (lse - logits[y]) / n;
        let mut dlogits = softmax(&logits);
        dlogits[y] -= 1.0;
        for d in dlogits.iter_mut() {
            *d /= n;
        }
        let d_phi = head_backward(&model.head, &phi, &eff, &dlogits, &mut grads.w_cls, &mut grads.nsr);
        traces.push(trace);
        phis.push(phi);
        d_phis.push(d_phi);
    }

    if opts.energy_weight > 0.0 && !outliers.is_empty() {
        let (el, eg) = energy_uncertainty_loss(model, &phis, outliers)?;
        let w = opts.energy_weight;
        loss += w * el;
        grads.psi_weight += w * eg.psi_weight;
        grads.psi_bias += w * eg.psi_bias;
        grads.w_cls.add_scaled(&eg.w_cls, w);
        if let (Some(dg), Some(src)) = (&mut grads.nsr, &eg.nsr) {
            dg.add_scaled(src, w);
        }
        for (d_phi, extra) in d_phis.iter_mut().zip(&eg.d_id_features) {
            for (a, b) in d_phi.iter_mut().zip(extra) {
                *a += w * b;
            }
        }
    }

    for (trace, d_phi) in traces.iter().zip(&d_phis) {
        backbone_backward(model, trace, d_phi, &mut grads);
    }

    if opts.lambda_lsv > 0.0 {
        let p = lsv_penalty(model.head.w_cls())?;
        loss += opts.lambda_lsv * p.value;
        grads.w_cls.add_scaled(&p.grad, opts.lambda_lsv);
    }
    if opts.lambda_cn > 0.0 {
        let p = cn_penalty(model.head.w_cls())?;
        loss += opts.lambda_cn * p.value;
        grads.w_cls.add_scaled(&p.grad, opts.lambda_cn);
    }
    Ok((loss, grads))
}
