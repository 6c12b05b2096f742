use std::fmt;
use std::str::FromStr;

use crate::encoder::Activation;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, KeyValues};
use crate::loss::{Ablation, MarginConfig};

use super::optim::OptimizerConfig;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    CrossEntropy,
    AmSoftmax,
    AamSoftmax,
    SupCon,
    SupMarginCon,
    #[default]
    CaaMarginCon,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        Self::CrossEntropy,
        Self::AmSoftmax,
        Self::AamSoftmax,
        Self::SupCon,
        Self::SupMarginCon,
        Self::CaaMarginCon,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Self::CrossEntropy => "cross_entropy",
            Self::AmSoftmax => "am_softmax",
            Self::AamSoftmax => "aam_softmax",
            Self::SupCon => "supcon",
            Self::SupMarginCon => "sup_margin_con",
            Self::CaaMarginCon => "caa_margin_con",
        }
    }

    /// Whether the loss trains a classification head.
    pub fn uses_classifier(self) -> bool {
        matches!(
            self,
            Self::CrossEntropy | Self::AmSoftmax | Self::AamSoftmax | Self::CaaMarginCon
        )
    }

    /// Whether classifier rows are kept on the unit sphere.
    pub fn constrained_classifier(self) -> bool {
        self.uses_classifier() && self != Self::CrossEntropy
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss {s:?}")))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// How the classification and contrastive terms are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LambdaMode {
    /// Min-norm weights recomputed from the two task gradients at every step.
    #[default]
    Mgda,
    Fixed(f64, f64),
}

/// Every key accepted by [`TrainConfig::apply`].
pub const TRAIN_KEYS: &[&str] = &[
    "loss",
    "margin",
    "tau",
    "scale",
    "denominator",
    "batch_size",
    "epochs",
    "optimizer",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "eps",
    "lambda_mode",
    "lambda1",
    "lambda2",
    "ablation",
    "hidden",
    "embed_dim",
    "activation",
    "aug_noise",
    "aug_dropout",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub margin: MarginConfig<f64>,
    /// Rows per step, originals plus augmented views.
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub lambda_mode: LambdaMode,
    /// Which parts of the contrastive term are active for `caa_margin_con`.
    pub ablation: Ablation,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub aug_noise: f64,
    pub aug_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::default(),
            margin: MarginConfig::default(),
            batch_size: 64,
            epochs: 30,
            optimizer: OptimizerConfig::default(),
            lambda_mode: LambdaMode::Mgda,
            ablation: Ablation::Full,
            hidden: vec![64, 64],
            embed_dim: 16,
            activation: Activation::Relu,
            aug_noise: 0.3,
            aug_dropout: 0.1,
            seed: 0,
        }
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn bad(kv: &KeyValues, key: &str, e: impl fmt::Display) -> Error {
    Error::Parse {
        line: kv.line_of(key),
        message: format!("{key}: {e}"),
    }
}

impl TrainConfig {
    /// Parses a config file on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_known(TRAIN_KEYS)?;
        let mut cfg = Self::default();
        cfg.apply(&kv)?;
        Ok(cfg)
    }

    /// Overwrites the fields named in `kv`; keys outside [`TRAIN_KEYS`] are ignored.
    /// Errors carry the line of the offending key.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get($key) {
                    $field = v.parse().map_err(|e| bad(kv, $key, e))?;
                }
            };
        }
        set!("loss", self.loss);
        set!("margin", self.margin.margin);
        set!("tau", self.margin.tau);
        set!("scale", self.margin.scale);
        set!("denominator", self.margin.denominator);
        set!("batch_size", self.batch_size);
        set!("epochs", self.epochs);
        set!("optimizer", self.optimizer.kind);
        set!("lr", self.optimizer.lr);
        set!("momentum", self.optimizer.momentum);
        set!("beta1", self.optimizer.beta1);
        set!("beta2", self.optimizer.beta2);
        set!("eps", self.optimizer.eps);
        set!("ablation", self.ablation);
        set!("embed_dim", self.embed_dim);
        set!("activation", self.activation);
        set!("aug_noise", self.aug_noise);
        set!("aug_dropout", self.aug_dropout);
        set!("seed", self.seed);
        if let Some(v) = kv.get("hidden") {
            self.hidden = parse_list(v).map_err(|e| bad(kv, "hidden", e))?;
        }
        let (mut l1, mut l2) = match self.lambda_mode {
            LambdaMode::Fixed(a, b) => (a, b),
            LambdaMode::Mgda => (1.0, 1.0),
        };
        set!("lambda1", l1);
        set!("lambda2", l2);
        let mode = kv.get("lambda_mode").map(str::to_string).unwrap_or(match self.lambda_mode {
            LambdaMode::Mgda => "mgda".into(),
            LambdaMode::Fixed(..) => "fixed".into(),
        });
        self.lambda_mode = match mode.as_str() {
            "mgda" => LambdaMode::Mgda,
            "fixed" => LambdaMode::Fixed(l1, l2),
            other => return Err(bad(kv, "lambda_mode", format!("unknown mode {other:?}"))),
        };
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.margin.validate()?;
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} must be even and >= 4",
                self.batch_size
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} must be >= 2",
                self.embed_dim
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden sizes must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {} must be >= 0", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
        {
            return Err(Error::InvalidConfig(
                "momentum, beta1, beta2 must lie in [0, 1) and eps > 0".into(),
            ));
        }
        if let LambdaMode::Fixed(l1, l2) = self.lambda_mode {
            if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "fixed lambdas ({l1}, {l2}) must be finite and >= 0"
                )));
            }
        }
        if !(self.aug_noise >= 0.0) || !(0.0..1.0).contains(&self.aug_dropout) {
            return Err(Error::InvalidConfig(
                "aug_noise must be >= 0 and aug_dropout in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Encoder layer sizes for input dimension `d_in`.
    pub fn dims(&self, d_in: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(&self.hidden);
        dims.push(self.embed_dim);
        dims
    }

    /// Every field as `key = value`, in [`TRAIN_KEYS`] order. Parsing the result
    /// gives back an equal config.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let (mode, l1, l2) = match self.lambda_mode {
            LambdaMode::Mgda => ("mgda", None, None),
            LambdaMode::Fixed(a, b) => ("fixed", Some(a), Some(b)),
        };
        let o = &self.optimizer;
        kv.set("loss", self.loss.to_string());
        kv.set("margin", fmt_f64(self.margin.margin));
        kv.set("tau", fmt_f64(self.margin.tau));
        kv.set("scale", fmt_f64(self.margin.scale));
        kv.set("denominator", self.margin.denominator.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("epochs", self.epochs.to_string());
        kv.set("optimizer", o.kind.to_string());
        kv.set("lr", fmt_f64(o.lr));
        kv.set("momentum", fmt_f64(o.momentum));
        kv.set("beta1", fmt_f64(o.beta1));
        kv.set("beta2", fmt_f64(o.beta2));
        kv.set("eps", fmt_f64(o.eps));
        kv.set("lambda_mode", mode);
        if let (Some(a), Some(b)) = (l1, l2) {
            kv.set("lambda1", fmt_f64(a));
            kv.set("lambda2", fmt_f64(b));
        }
        kv.set("ablation", self.ablation.key());
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        kv.set("hidden", hidden.join(","));
        kv.set("embed_dim", self.embed_dim.to_string());
        kv.set("activation", self.activation.to_string());
        kv.set("aug_noise", fmt_f64(self.aug_noise));
        kv.set("aug_dropout", fmt_f64(self.aug_dropout));
        kv.set("seed", self.seed.to_string());
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = TrainConfig {
            loss: LossKind::SupCon,
            lambda_mode: LambdaMode::Fixed(0.25, 0.75),
            hidden: vec![8],
            seed: 99,
            ..Default::default()
        };
        cfg.margin.tau = 0.1;
        let text = cfg.to_key_values().to_text();
        assert_eq!(TrainConfig::from_text(&text).unwrap(), cfg);
        let d = TrainConfig::default();
        assert_eq!(TrainConfig::from_text(&d.to_key_values().to_text()).unwrap(), d);
    }

    #[test]
    fn errors_name_the_line() {
        let err = TrainConfig::from_text("lr = 0.1\n\nloss = triplet\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = TrainConfig::from_text("# c\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = TrainConfig::from_text("lambda_mode = sometimes\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 6;
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 7;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 2;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            lambda_mode: LambdaMode::Fixed(-1.0, 2.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
