//! Run configuration: `key=value` settings merged from defaults, the
//! `SAGA_SEED` environment variable, a config file and command-line
//! overrides, in that order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::cost::CostWeights;
use crate::error::{Result, SagaError};
use crate::harness::{EpisodeConfig, SelectionMode};
use crate::net::NetConfig;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "SAGA_SEED";

/// Every recognized key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("v_max", "2"),
    ("replan_interval", "0.1"),
    ("control_dt", "0.02"),
    ("goal_tolerance", "1.5"),
    ("vehicle_radius", "0.3"),
    ("timeout", "120"),
    ("ppe_enabled", "true"),
    ("mode", "oracle"),
    ("density", "0.05"),
    ("lambda_smooth", "0.01"),
    ("lambda_safe", "1000"),
    ("lambda_goal", "1"),
    ("lambda_acc", "0.01"),
    ("lambda_traj", "1"),
    ("lambda_score", "0.5"),
    ("d_safe", "0.8"),
    ("n_samples", "20"),
    ("net", "standard"),
    ("epochs", "20"),
    ("batch_size", "32"),
    ("learning_rate", "0.001"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("epsilon", "1e-8"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults with `SAGA_SEED` applied when set.
    pub fn from_env() -> Result<Self> {
        let mut c = RunConfig::default();
        if let Ok(s) = std::env::var(SEED_ENV) {
            c.set("seed", &s)
                .map_err(|e| SagaError::config(format!("{SEED_ENV}: {e}")))?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(SagaError::config(format!("unknown configuration key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| SagaError::config(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    /// Merges a config file: one `key=value` per line, `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| SagaError::config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| SagaError::io(path, e))?;
        self.merge_text(&text, path)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| SagaError::config(format!("unknown configuration key {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| SagaError::config(format!("bad value {v:?} for {key}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let x: f64 = self.parse(key)?;
        if !x.is_finite() {
            return Err(SagaError::config(format!("{key} must be finite")));
        }
        Ok(x)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            v => Err(SagaError::config(format!("bad value {v:?} for {key} (true/false)"))),
        }
    }

    pub fn cost_weights(&self) -> Result<CostWeights> {
        let w = CostWeights {
            lambda_smooth: self.f64("lambda_smooth")?,
            lambda_safe: self.f64("lambda_safe")?,
            lambda_goal: self.f64("lambda_goal")?,
            lambda_acc: self.f64("lambda_acc")?,
            lambda_traj: self.f64("lambda_traj")?,
            lambda_score: self.f64("lambda_score")?,
            d_safe: self.f64("d_safe")?,
            n_samples: self.usize("n_samples")?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        match self.get("net")? {
            "standard" => Ok(NetConfig::standard()),
            "tiny" => Ok(NetConfig::tiny()),
            v => Err(SagaError::config(format!("bad value {v:?} for net (standard, tiny)"))),
        }
    }

    pub fn episode_config(&self) -> Result<EpisodeConfig> {
        let c = EpisodeConfig {
            v_max: self.f64("v_max")?,
            replan_interval: self.f64("replan_interval")?,
            control_dt: self.f64("control_dt")?,
            goal_tolerance: self.f64("goal_tolerance")?,
            vehicle_radius: self.f64("vehicle_radius")?,
            timeout: self.f64("timeout")?,
            ppe_enabled: self.bool("ppe_enabled")?,
            selection_mode: self.get("mode")?.parse::<SelectionMode>()?,
            seed: self.u64("seed")?,
            cost: self.cost_weights()?,
            ..EpisodeConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            epochs: self.usize("epochs")?,
            batch_size: self.usize("batch_size")?,
            learning_rate: self.f64("learning_rate")?,
            beta1: self.f64("beta1")?,
            beta2: self.f64("beta2")?,
            epsilon: self.f64("epsilon")?,
            seed: self.u64("seed")?,
            ppe_enabled: self.bool("ppe_enabled")?,
            v_max: self.f64("v_max")?,
            net: self.net_config()?,
            weights: self.cost_weights()?,
            ..TrainConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    /// Resolved settings, one `key=value` per line in key order.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.cost_weights().unwrap(), CostWeights::default());
        assert_eq!(c.episode_config().unwrap(), EpisodeConfig::default());
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn file_then_flags_precedence() {
        let mut c = RunConfig::default();
        c.merge_text("# comment\nv_max = 3   # trailing\n\nlambda_safe=5\n", Path::new("c.cfg"))
            .unwrap();
        c.set_pair("v_max=4").unwrap();
        assert_eq!(c.f64("v_max").unwrap(), 4.0);
        assert_eq!(c.f64("lambda_safe").unwrap(), 5.0);
        assert!(c.echo().contains("v_max=4\n"));
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set_pair("vmax=3"), Err(SagaError::Config(_))));
        let e = c.merge_text("v_max=2\nlamda_safe=1\n", Path::new("c.cfg")).unwrap_err();
        assert!(e.to_string().contains("c.cfg:2"));
        assert!(c.set_pair("no_equals_sign").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = RunConfig::default();
        c.set("batch_size", "0").unwrap();
        assert!(c.train_config().is_err());
        c.set("batch_size", "x").unwrap();
        assert!(c.train_config().is_err());
        let mut c = RunConfig::default();
        c.set("mode", "greedy").unwrap();
        assert!(c.episode_config().is_err());
        c.set("mode", "random").unwrap();
        c.set("v_max", "nan").unwrap();
        assert!(c.episode_config().is_err());
    }
}
