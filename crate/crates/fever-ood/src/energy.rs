//! Free energy scoring over classifier logits.
//!
//! The score used everywhere downstream is `F(x) = -logsumexp(logits)`:
//! lower means more in-distribution once a model has been trained with the
//! energy-separation loss, so the OOD score is `s(x) = F(x)` (higher means
//! more OOD).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// The last linear layer of a classifier: `logits = w_cls^T . features`,
/// optionally preceded by a dimension-reducing linear layer (`nsr`) so the
/// effective feature space is smaller than the backbone output. Neither
/// layer carries a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    w_cls: Matrix,
    nsr: Option<Matrix>,
}

impl ClassifierHead {
    /// Plain head: `w_cls` is `d' x K`.
    pub fn new(w_cls: Matrix) -> Result<Self> {
        if w_cls.cols() < 1 {
            return Err(Error::shape("K >= 1", "0"));
        }
        Ok(Self { w_cls, nsr: None })
    }

    /// Head with a reduction layer: `nsr` is `d_in x r` and must strictly
    /// reduce dimension; `w_cls` is then `r x K`.
    pub fn with_reduction(nsr: Matrix, w_cls: Matrix) -> Result<Self> {
        if nsr.cols() >= nsr.rows() {
            return Err(Error::shape(
                format!("reduction layer with r < d_in = {}", nsr.rows()),
                format!("r = {}", nsr.cols()),
            ));
        }
        if nsr.cols() != w_cls.rows() {
            return Err(Error::shape(
                format!("w_cls with {} rows to match the reduction output", nsr.cols()),
                format!("{} rows", w_cls.rows()),
            ));
        }
        if w_cls.cols() < 1 {
            return Err(Error::shape("K >= 1", "0"));
        }
        Ok(Self { w_cls, nsr: Some(nsr) })
    }

    pub fn w_cls(&self) -> &Matrix {
        &self.w_cls
    }

    pub fn nsr(&self) -> Option<&Matrix> {
        self.nsr.as_ref()
    }

    /// Dimension of the features this head accepts.
    pub fn input_dim(&self) -> usize {
        match &self.nsr {
            Some(g) => g.rows(),
            None => self.w_cls.rows(),
        }
    }

    /// Dimension of the space `w_cls` acts on (`d'`): the reduction output
    /// when present, otherwise the input dimension. Attacks and energies
    /// live here.
    pub fn effective_dim(&self) -> usize {
        self.w_cls.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w_cls.cols()
    }

    /// The composed linear map `d_in -> K` as a single matrix
    /// (`nsr . w_cls` when a reduction layer is present). Its transpose's
    /// nullity measures blind spots upstream of the reduction.
    pub fn composed_matrix(&self) -> Matrix {
        match &self.nsr {
            Some(g) => g.matmul(&self.w_cls).expect("validated dimensions"),
            None => self.w_cls.clone(),
        }
    }
}

/// Free energy of a logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyScore {
    pub value: f64,
}

/// `log(sum_i exp(v_i))` computed against the running maximum so it cannot
/// overflow for any finite input.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Free energy `F = -logsumexp(logits)`.
pub fn free_energy(logits: &[f64]) -> Result<EnergyScore> {
    Ok(EnergyScore { value: -logsumexp(logits)? })
}

/// Forward pass through the head. Returns the effective features (after the
/// reduction layer when present) and the logits.
pub fn head_forward(head: &ClassifierHead, features: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.len() != head.input_dim() {
        return Err(Error::shape(
            format!("features of length {}", head.input_dim()),
            format!("{}", features.len()),
        ));
    }
    let effective = match head.nsr() {
        Some(g) => g.transpose_matvec(features)?,
        None => features.to_vec(),
    };
    let logits = head.w_cls().transpose_matvec(&effective)?;
    Ok((effective, logits))
}

/// Free energy of effective features under `w_cls` alone. This is the hot
/// path for attacks, which perturb the effective feature space directly.
pub fn effective_free_energy(head: &ClassifierHead, effective: &[f64]) -> Result<f64> {
    let logits = head.w_cls().transpose_matvec(effective)?;
    Ok(-logsumexp(&logits)?)
}
