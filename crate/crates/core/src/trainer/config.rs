//! Flat `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::objectives::ObjectiveConfig;
use crate::similarity::FilterOrientation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Text-only dropout contrast on every step.
    Simcse,
    /// Interleaved text-only and multimodal contrast against visual features.
    Mcse,
    /// Interleaved text-only and filtered adaptive-margin distillation.
    Kdmcse,
    /// `Kdmcse` without the adaptive margin.
    KdmcseNoMargin,
    /// `Kdmcse` without threshold filtering.
    KdmcseNoFilter,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Simcse => "simcse",
            Objective::Mcse => "mcse",
            Objective::Kdmcse => "kdmcse",
            Objective::KdmcseNoMargin => "kdmcse_no_margin",
            Objective::KdmcseNoFilter => "kdmcse_no_filter",
        }
    }

    pub fn uses_multimodal(self) -> bool {
        self != Objective::Simcse
    }
}

impl FromStr for Objective {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "simcse" => Objective::Simcse,
            "mcse" => Objective::Mcse,
            "kdmcse" => Objective::Kdmcse,
            "kdmcse_no_margin" => Objective::KdmcseNoMargin,
            "kdmcse_no_filter" => Objective::KdmcseNoFilter,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(()),
        }
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub objective_config: ObjectiveConfig,
    pub dropout_rate: f64,
    pub hidden_dim: usize,
    pub grounded_dim: usize,
    /// Scale of the uniform initialization of the sentence table.
    pub init_scale: f64,
    /// Update the teacher projection heads (the raw teacher features stay frozen).
    pub train_teacher_heads: bool,
    pub normalize_features: bool,
    pub histogram_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Kdmcse,
            batch_size: 64,
            learning_rate: 3e-5,
            steps: 1000,
            eval_every: 125,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            objective_config: ObjectiveConfig::default(),
            dropout_rate: 0.1,
            hidden_dim: 64,
            grounded_dim: 32,
            init_scale: 1.0,
            train_teacher_heads: true,
            normalize_features: true,
            histogram_bins: 20,
        }
    }
}

pub const KEYS: &[&str] = &[
    "objective",
    "batch_size",
    "learning_rate",
    "steps",
    "eval_every",
    "seed",
    "optimizer",
    "tau",
    "tau_prime",
    "margin",
    "threshold",
    "sum_over_both_dropout_views",
    "filter_orientation",
    "dropout_rate",
    "hidden_dim",
    "grounded_dim",
    "init_scale",
    "train_teacher_heads",
    "normalize_features",
    "histogram_bins",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::BadConfigValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let oc = &mut self.objective_config;
        match key {
            "objective" => self.objective = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "optimizer" => self.optimizer = parse(key, value)?,
            "tau" => oc.tau = parse(key, value)?,
            "tau_prime" => oc.tau_prime = parse(key, value)?,
            "margin" => oc.margin = parse(key, value)?,
            "threshold" => oc.threshold = parse(key, value)?,
            "sum_over_both_dropout_views" => oc.sum_over_both_dropout_views = parse(key, value)?,
            "filter_orientation" => oc.filter_orientation = parse::<FilterOrientation>(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "grounded_dim" => self.grounded_dim = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "train_teacher_heads" => self.train_teacher_heads = parse(key, value)?,
            "normalize_features" => self.normalize_features = parse(key, value)?,
            "histogram_bins" => self.histogram_bins = parse(key, value)?,
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies one `KEY=VALUE` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override {assignment:?} is not KEY=VALUE"))
        })?;
        self.set(k.trim(), v)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Canonical `key = value` rendering; `parse_str(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let oc = &self.objective_config;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("objective", self.objective.name().into());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", format!("{:?}", self.learning_rate));
        put("steps", self.steps.to_string());
        put("eval_every", self.eval_every.to_string());
        put("seed", self.seed.to_string());
        put("optimizer", self.optimizer.name().into());
        put("tau", format!("{:?}", oc.tau));
        put("tau_prime", format!("{:?}", oc.tau_prime));
        put("margin", format!("{:?}", oc.margin));
        put("threshold", format!("{:?}", oc.threshold));
        put(
            "sum_over_both_dropout_views",
            oc.sum_over_both_dropout_views.to_string(),
        );
        put("filter_orientation", oc.filter_orientation.to_string());
        put("dropout_rate", format!("{:?}", self.dropout_rate));
        put("hidden_dim", self.hidden_dim.to_string());
        put("grounded_dim", self.grounded_dim.to_string());
        put("init_scale", format!("{:?}", self.init_scale));
        put("train_teacher_heads", self.train_teacher_heads.to_string());
        put("normalize_features", self.normalize_features.to_string());
        put("histogram_bins", self.histogram_bins.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.objective_config.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(
                "dropout_rate must lie in [0, 1)".into(),
            ));
        }
        if self.hidden_dim == 0 || self.grounded_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidConfig("histogram_bins must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments_and_overrides() {
        let cfg = TrainConfig::parse_str(
            "# header\nobjective = mcse # trailing\nsteps=10\n\nmargin = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.objective, Objective::Mcse);
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.objective_config.margin, 0.2);

        let mut c = TrainConfig::default();
        c.apply_override("filter_orientation=keep_similar")
            .unwrap();
        assert_eq!(
            c.objective_config.filter_orientation,
            FilterOrientation::KeepSimilar
        );
        assert!(matches!(
            c.apply_override("nope=1"),
            Err(Error::UnknownConfigKey(_))
        ));
        assert!(matches!(
            c.apply_override("steps=abc"),
            Err(Error::BadConfigValue { .. })
        ));
        assert!(c.apply_override("steps").is_err());
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut c = TrainConfig::default();
        c.apply_override("learning_rate=0.0123").unwrap();
        c.apply_override("objective=kdmcse_no_filter").unwrap();
        assert_eq!(TrainConfig::parse_str(&c.to_text()).unwrap(), c);
        for key in KEYS {
            assert!(c.to_text().contains(&format!("{key} = ")));
        }
    }

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.objective_config.tau, 0.05);
        assert_eq!(c.objective_config.tau_prime, 0.05);
        assert_eq!(c.objective_config.margin, 0.125);
        assert_eq!(c.objective_config.threshold, 0.9);
        assert_eq!(c.eval_every, 125);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.learning_rate, 3e-5);
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.eval_every = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.objective_config.threshold = 1.5;
        assert!(c.validate().is_err());
    }
}
