use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::accumulate_grads;
use super::{NumericsError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent with a fixed step size.
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer {other:?} (allowed: sgd, adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// First-order update rule over named parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    step_size: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, step_size: f64) -> Self {
        Self {
            kind,
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn sgd(step_size: f64) -> Self {
        Self::new(OptimizerKind::Sgd, step_size)
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn set_step_size(&mut self, step_size: f64) {
        self.step_size = step_size;
    }

    /// Applies one update. Names in `grads` missing from `params` are errors.
    pub fn apply(
        &mut self,
        params: &mut ParamStore,
        grads: Vec<(String, Tensor)>,
    ) -> Result<(), NumericsError> {
        let mut summed = BTreeMap::new();
        accumulate_grads(&mut summed, grads)?;
        self.t += 1;
        for (name, g) in summed {
            let p = params
                .get_mut(&name)
                .ok_or_else(|| NumericsError::Contract(format!("no parameter named {name}")))?;
            if p.shape() != g.shape() {
                return Err(NumericsError::Shape { op: "optimizer", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.step_size * d;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.v.entry(name).or_insert_with(|| Tensor::zeros(g.shape()));
                    let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                    let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                    for i in 0..g.len() {
                        let d = g.data()[i];
                        let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * d;
                        let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * d * d;
                        m.data_mut()[i] = mi;
                        v.data_mut()[i] = vi;
                        let update = (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                        p.data_mut()[i] -= self.step_size * update;
                    }
                }
            }
        }
        Ok(())
    }
}
