//! Gradient steps. Plain SGD is the default everywhere the federated
//! protocols are concerned; momentum and Adam are opt-in.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    Ascend,
    Descend,
}

impl Direction {
    #[inline]
    fn sign(self) -> f64 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

/// `p ± lr · grad`; the layout is carried over unchanged.
pub fn sgd_step(params: &ModelParams, grad: &[f64], lr: f64, direction: Direction) -> Result<ModelParams> {
    let mut out = params.clone();
    apply_sgd(out.values_mut(), grad, lr, direction)?;
    if !out.values().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sgd step"));
    }
    Ok(out)
}

fn apply_sgd(values: &mut [f64], grad: &[f64], lr: f64, direction: Direction) -> Result<()> {
    check_len(values.len(), grad.len())?;
    let step = direction.sign() * lr;
    for (p, g) in values.iter_mut().zip(grad) {
        *p += step * g;
    }
    Ok(())
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context: "gradient length",
            expected,
            actual,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimizer bound to one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64], direction: Direction) -> Result<()> {
        let values = params.values_mut();
        check_len(values.len(), grad.len())?;
        match self.kind {
            OptimizerKind::Sgd => apply_sgd(values, grad, self.lr, direction)?,
            OptimizerKind::Momentum { beta } => {
                if self.first.len() != values.len() {
                    self.first = vec![0.0; values.len()];
                }
                let sign = direction.sign();
                for ((p, g), v) in values.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = beta * *v + g;
                    *p += sign * self.lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first.len() != values.len() {
                    self.first = vec![0.0; values.len()];
                    self.second = vec![0.0; values.len()];
                    self.steps = 0;
                }
                self.steps += 1;
                let c1 = 1.0 - libm::pow(beta1, self.steps as f64);
                let c2 = 1.0 - libm::pow(beta2, self.steps as f64);
                let sign = direction.sign();
                for (((p, g), m), v) in values.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p += sign * self.lr * m_hat / (libm::sqrt(v_hat) + eps);
                }
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("optimizer step"));
        }
        Ok(())
    }
}
