//! Effective settings: defaults, overlaid by a config file, overlaid by flags.

use std::path::{Path, PathBuf};

use caamargin::eval::DcfParams;
use caamargin::io::{fmt_f64, KeyValues};
use caamargin::synth::GeneratorParams;
use caamargin::train::{TrainConfig, TRAIN_KEYS};
use caamargin::Error;

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CAAMARGIN_OUT";
pub const DEFAULT_OUT: &str = "caamargin-out";

/// Keys outside the training config.
pub const EXPERIMENT_KEYS: &[&str] = &[
    "n_speakers",
    "utts",
    "heldout_utts",
    "d_in",
    "spread",
    "outlier_rate",
    "outlier_shift",
    "radius",
    "data_seed",
    "n_target",
    "n_nontarget",
    "p_target",
    "c_miss",
    "c_fa",
    "instances",
    "gradcheck_seed",
    "seeds",
    "ablation_outlier_rate",
];

pub fn all_keys() -> Vec<&'static str> {
    TRAIN_KEYS.iter().chain(EXPERIMENT_KEYS).copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub n_speakers: usize,
    pub utts: usize,
    pub heldout_utts: usize,
    pub generator: GeneratorParams,
    pub seed: u64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utts: 50,
            heldout_utts: 20,
            generator: GeneratorParams::default(),
            seed: 1,
            n_target: 3000,
            n_nontarget: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub data: DataSettings,
    pub dcf: DcfParams,
    pub instances: usize,
    pub gradcheck_seed: u64,
    pub seeds: Vec<u64>,
    pub ablation_outlier_rate: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataSettings::default(),
            dcf: DcfParams::default(),
            instances: 50,
            gradcheck_seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            ablation_outlier_rate: 0.15,
        }
    }
}

fn parse_err(kv: &KeyValues, key: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line: kv.line_of(key),
        message: format!("{key}: {e}"),
    }
}

impl Settings {
    /// Defaults overlaid with `file` (if any) and then `flags`.
    pub fn resolve(file: Option<&Path>, flags: &KeyValues) -> Result<Self, CliError> {
        let mut kv = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let kv = KeyValues::parse(&text).map_err(|e| CliError::from(e).in_file(path))?;
                kv.check_known(&all_keys())
                    .map_err(|e| CliError::from(e).in_file(path))?;
                kv
            }
            None => KeyValues::default(),
        };
        kv.merge(flags);
        let mut s = Self::default();
        s.apply(&kv).map_err(|e| match file {
            Some(p) if matches!(e, Error::Parse { line, .. } if line > 0) => CliError::from(e).in_file(p),
            _ => CliError::from(e),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn apply(&mut self, kv: &KeyValues) -> caamargin::Result<()> {
        self.train.apply(kv)?;
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get($key) {
                    $field = v.parse().map_err(|e| parse_err(kv, $key, e))?;
                }
            };
        }
        let d = &mut self.data;
        set!("n_speakers", d.n_speakers);
        set!("utts", d.utts);
        set!("heldout_utts", d.heldout_utts);
        set!("d_in", d.generator.d_in);
        set!("spread", d.generator.spread);
        set!("outlier_rate", d.generator.outlier_rate);
        set!("outlier_shift", d.generator.outlier_shift);
        set!("radius", d.generator.radius);
        set!("data_seed", d.seed);
        set!("n_target", d.n_target);
        set!("n_nontarget", d.n_nontarget);
        set!("p_target", self.dcf.p_target);
        set!("c_miss", self.dcf.c_miss);
        set!("c_fa", self.dcf.c_fa);
        set!("instances", self.instances);
        set!("gradcheck_seed", self.gradcheck_seed);
        set!("ablation_outlier_rate", self.ablation_outlier_rate);
        if let Some(v) = kv.get("seeds") {
            self.seeds = v
                .split(',')
                .map(|t| t.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(kv, "seeds", e))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        self.data.generator.validate()?;
        self.dcf.validate()?;
        if self.data.n_speakers < 2 || self.data.utts < 2 || self.data.heldout_utts < 2 {
            return Err(CliError::Config(
                "n_speakers, utts and heldout_utts must be >= 2".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        if !(0.0..=1.0).contains(&self.ablation_outlier_rate) {
            return Err(CliError::Config(format!(
                "ablation_outlier_rate {} outside [0, 1]",
                self.ablation_outlier_rate
            )));
        }
        Ok(())
    }

    /// Every key with its effective value, training keys first.
    pub fn snapshot(&self) -> KeyValues {
        let mut kv = self.train.to_key_values();
        let d = &self.data;
        let g = &d.generator;
        kv.set("n_speakers", d.n_speakers.to_string());
        kv.set("utts", d.utts.to_string());
        kv.set("heldout_utts", d.heldout_utts.to_string());
        kv.set("d_in", g.d_in.to_string());
        kv.set("spread", fmt_f64(g.spread));
        kv.set("outlier_rate", fmt_f64(g.outlier_rate));
        kv.set("outlier_shift", fmt_f64(g.outlier_shift));
        kv.set("radius", fmt_f64(g.radius));
        kv.set("data_seed", d.seed.to_string());
        kv.set("n_target", d.n_target.to_string());
        kv.set("n_nontarget", d.n_nontarget.to_string());
        kv.set("p_target", fmt_f64(self.dcf.p_target));
        kv.set("c_miss", fmt_f64(self.dcf.c_miss));
        kv.set("c_fa", fmt_f64(self.dcf.c_fa));
        kv.set("instances", self.instances.to_string());
        kv.set("gradcheck_seed", self.gradcheck_seed.to_string());
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        kv.set("seeds", seeds.join(","));
        kv.set("ablation_outlier_rate", fmt_f64(self.ablation_outlier_rate));
        kv
    }
}

/// Output directory: explicit flag, then the environment, then the default.
pub fn output_root(flag: Option<&PathBuf>) -> PathBuf {
    flag.cloned()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
