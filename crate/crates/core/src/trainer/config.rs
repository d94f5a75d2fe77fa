use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub topics: usize,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    /// Weight of `L_s + L_a` in the loss.
    pub lambda_weight: f64,
    /// Number of truncated-Poisson outcomes `0..n`.
    pub truncation: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Steps between log lines.
    pub log_every: u64,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub pretrain_iters: usize,
    pub pretrain_tol: f64,
    /// Initial scale of the θ and β factors.
    pub init_scale: f64,
    /// Initial scale of the η and x factors.
    pub polarity_init_scale: f64,
    pub normalize_soft_counts: bool,
    /// Keep η and x fixed at their initial locations.
    pub freeze_polarity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            topics: 30,
            batch_size: 1024,
            max_steps: 50_000,
            tau: 1.0,
            lambda_weight: 100.0,
            truncation: 8,
            learning_rate: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip: 10.0,
            seed: 0,
            checkpoint_every: 1000,
            log_every: 100,
            prior_shape: 0.3,
            prior_rate: 0.3,
            pretrain_iters: 200,
            pretrain_tol: 1e-5,
            init_scale: 0.1,
            polarity_init_scale: 0.1,
            normalize_soft_counts: false,
            freeze_polarity: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("topics", self.topics as u64),
            ("batch_size", self.batch_size as u64),
            ("log_every", self.log_every),
        ];
        for (name, v) in positive_int {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        if self.truncation < 2 {
            return Err(Error::validation("truncation must be at least 2"));
        }
        let positive = [
            ("tau", self.tau),
            ("learning_rate", self.learning_rate),
            ("adam_epsilon", self.adam_epsilon),
            ("prior_shape", self.prior_shape),
            ("prior_rate", self.prior_rate),
            ("init_scale", self.init_scale),
            ("polarity_init_scale", self.polarity_init_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lambda_weight", self.lambda_weight),
            ("grad_clip", self.grad_clip),
            ("pretrain_tol", self.pretrain_tol),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::validation(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.topics, c.batch_size, c.max_steps), (30, 1024, 50_000));
        assert_eq!((c.tau, c.lambda_weight, c.truncation), (1.0, 100.0, 8));
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let mut c = TrainConfig::default();
        c.seed = 42;
        c.lambda_weight = 0.0;
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = TrainConfig::from_toml("topics = 5\nbatch_size = 64\n").unwrap();
        assert_eq!(partial.topics, 5);
        assert_eq!(partial.max_steps, 50_000);
    }

    #[test]
    fn rejects_invalid() {
        assert!(TrainConfig::from_toml("topics = 0").unwrap_err().is_validation());
        assert!(TrainConfig::from_toml("tau = -1.0").is_err());
        assert!(TrainConfig::from_toml("lambda_weight = -1.0").is_err());
        assert!(TrainConfig::from_toml("adam_beta2 = 1.0").is_err());
        assert!(TrainConfig::from_toml("truncation = 1").is_err());
        assert!(TrainConfig::from_toml("no_such_key = 1").is_err());
        assert!(TrainConfig::from_toml("topics = [").is_err());
    }
}
