use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
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

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Heavy-ball momentum for SGD.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, len: usize) -> Self {
        let second = match cfg.kind {
            OptimizerKind::Adam => vec![0.0; len],
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            cfg,
            first: vec![0.0; len],
            second,
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.first.len());
        self.steps += 1;
        let c = self.cfg;
        match c.kind {
            OptimizerKind::Sgd => {
                for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = c.momentum * *v + g;
                    *p -= c.lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - c.beta1.powi(self.steps);
                let bc2 = 1.0 - c.beta2.powi(self.steps);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let cfg = OptimizerConfig { kind: OptimizerKind::Sgd, lr: 0.1, momentum: 0.0, ..Default::default() };
        let mut opt = Optimizer::new(cfg, 2);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[2.0, 4.0]);
        assert_eq!(p, [0.8, -1.4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = OptimizerConfig { lr: 0.01, ..Default::default() };
        let mut opt = Optimizer::new(cfg, 2);
        let mut p = [0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_leaves_parameters_untouched() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = OptimizerConfig { kind, lr: 0.0, ..Default::default() };
            let mut opt = Optimizer::new(cfg, 3);
            let mut p = [0.1, -2.5, 3e-9];
            let before = p;
            opt.step(&mut p, &[1.0, -7.0, 0.3]);
            assert_eq!(p.map(f64::to_bits), before.map(f64::to_bits));
        }
    }
}
