use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        match *self {
            Optimizer::Sgd { momentum } => unit(momentum, "momentum"),
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                unit(beta1, "beta1")?;
                unit(beta2, "beta2")?;
                if epsilon > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig("epsilon must be > 0".into()))
                }
            }
        }
    }
}

/// Per-parameter optimizer memory.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        OptimizerState {
            optimizer,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    /// One update over `(parameter, gradient)` slices, which must arrive in
    /// the same order on every call.
    pub fn step(&mut self, params: Vec<(&mut [f64], &[f64])>, lr: f64) {
        if self.first.is_empty() {
            self.first = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            if matches!(self.optimizer, Optimizer::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        match self.optimizer {
            Optimizer::Sgd { momentum } => {
                for ((p, g), vel) in params.into_iter().zip(&mut self.first) {
                    for ((pv, gv), v) in p.iter_mut().zip(g).zip(vel.iter_mut()) {
                        *v = momentum * *v + gv;
                        *pv -= lr * *v;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}
