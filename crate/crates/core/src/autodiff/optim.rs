use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamGrad, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adagrad,
    Adam,
    Nadam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Adagrad, Method::Adam, Method::Nadam];

    pub fn name(self) -> &'static str {
        match self {
            Method::Adagrad => "adagrad",
            Method::Adam => "adam",
            Method::Nadam => "nadam",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn defaults(method: Method) -> Self {
        let (learning_rate, epsilon) = match method {
            Method::Adagrad => (0.01, 1e-7),
            Method::Adam => (0.001, 1e-8),
            Method::Nadam => (0.002, 1e-8),
        };
        OptimizerConfig {
            method,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
        }
    }
}

/// Optimiser plus its per-parameter accumulators.
///
/// Row-sparse gradients update only the rows they touch.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &ParamSet<T>) -> Self {
        let zeros = |_| -> Vec<Vec<T>> { params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect() };
        let first = match config.method {
            Method::Adagrad => Vec::new(),
            _ => zeros(()),
        };
        Optimizer {
            config,
            step: 0,
            first,
            second: zeros(()),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Squared-gradient sums (adagrad) or second moments (adam, nadam).
    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.second
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    /// Applies one update. Fails without touching anything if a gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<()> {
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} at step {}",
                        params.name(id),
                        self.step + 1
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::c(c.learning_rate);
        let eps = T::c(c.epsilon);
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let one = T::one();
        let bc1 = one - T::c(c.beta1.powi(t));
        let bc1_next = one - T::c(c.beta1.powi(t + 1));
        let bc2 = one - T::c(c.beta2.powi(t));

        for id in params.ids() {
            let Some(grad) = grads.get(id) else { continue };
            let k = id.index();
            let values = params.get_mut(id).data_mut();
            let mut update = |j: usize, g: T| match c.method {
                Method::Adagrad => {
                    let acc = &mut self.second[k][j];
                    *acc += g * g;
                    values[j] -= lr * g / (acc.sqrt() + eps);
                }
                Method::Adam | Method::Nadam => {
                    let m = &mut self.first[k][j];
                    *m = b1 * *m + (one - b1) * g;
                    let v = &mut self.second[k][j];
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = if c.method == Method::Adam {
                        *m / bc1
                    } else {
                        b1 * *m / bc1_next + (one - b1) * g / bc1
                    };
                    let v_hat = *v / bc2;
                    values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            };
            match grad {
                ParamGrad::Dense(g) => {
                    for (j, &gj) in g.iter().enumerate() {
                        update(j, gj);
                    }
                }
                ParamGrad::Rows { width, rows } => {
                    for (&r, g) in rows {
                        for (o, &gj) in g.iter().enumerate() {
                            update(r * width + o, gj);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
