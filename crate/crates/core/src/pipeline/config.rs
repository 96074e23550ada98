//! Experiment configuration and its flat `section.key = value` text form.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::fairness::{BiasSpec, FairnessConfig};
use crate::probes::ProbeConfig;
use crate::suppression::SuppressionConfig;

/// Environment variable naming the output root when no flag is given.
pub const OUT_ENV: &str = "EMOBLIND_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Identity-disjoint train/dev/test fractions.
    pub fractions: Vec<f64>,
    /// Verification pairs drawn from the dev and test splits.
    pub verification_pairs: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: vec![0.6, 0.2, 0.2],
            verification_pairs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub fractions: Vec<f64>,
    pub repeats: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            fractions: vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95],
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub gen: GenConfig,
    pub split: SplitConfig,
    pub sup: SuppressionConfig,
    pub probe: ProbeConfig,
    pub ablate: AblationConfig,
    pub bias: BiasSpec,
    pub fair: FairnessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("emoblind-out"),
            gen: GenConfig::default(),
            split: SplitConfig::default(),
            sup: SuppressionConfig::default(),
            probe: ProbeConfig::default(),
            ablate: AblationConfig::default(),
            bias: BiasSpec::default(),
            fair: FairnessConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.sup.validate()?;
        self.probe.validate()?;
        self.bias.validate()?;
        self.fair.validate()?;
        let f = &self.split.fractions;
        if f.len() != 3 {
            return Err(Error::Config(format!("split.fractions needs 3 values, got {}", f.len())));
        }
        if self.split.verification_pairs < 2 {
            return Err(Error::Config("split.verification_pairs must be ≥ 2".into()));
        }
        if self.ablate.repeats == 0 {
            return Err(Error::Config("ablate.repeats must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override such as `--set sup.depth=2`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Sets a dotted key; the value is parsed as the type the key already holds.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        }
        if slot.is_object() {
            return Err(Error::Config(format!("'{key}' is a section, not a key")));
        }
        *slot = parse_like(slot, value).ok_or_else(|| Error::Config(format!("invalid value '{value}' for '{key}'")))?;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("'{key}': {e}")))?;
        Ok(())
    }

    /// Every settable key with its current value, in a stable order.
    pub fn to_text(&self) -> String {
        let root = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        flatten("", &root, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => {
            out.push_str(&format!("{prefix} = {}\n", render(other)));
        }
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn parse_like(current: &Value, text: &str) -> Option<Value> {
    let number = |t: &str| -> Option<Value> {
        if let Ok(u) = t.parse::<u64>() {
            return Some(Value::from(u));
        }
        t.parse::<f64>().ok().filter(|f| f.is_finite()).map(Value::from)
    };
    match current {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => text.parse::<f64>().ok().filter(|f| f.is_finite()).map(Value::from),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Null => match text {
            "none" | "" => Some(Value::Null),
            t => number(t),
        },
        Value::Array(_) => text
            .split(',')
            .map(|t| number(t.trim()))
            .collect::<Option<Vec<_>>>()
            .map(Value::Array),
        Value::Object(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dotted_keys() {
        let cfg = ExperimentConfig::parse(
            "# comment\n\
             gen.num_identities = 120\n\
             sup.train.learning_rate = 0.002\n\
             sup.emotion_ceiling = 0.3\n\
             bias.balance_gender = false\n\
             ablate.fractions = 0, 0.5, 0.9\n\
             out_dir = /tmp/x\n",
        )
        .unwrap();
        assert_eq!(cfg.gen.num_identities, 120);
        assert_eq!(cfg.sup.train.learning_rate, 0.002);
        assert_eq!(cfg.sup.emotion_ceiling, Some(0.3));
        assert!(!cfg.bias.balance_gender);
        assert_eq!(cfg.ablate.fractions, vec![0.0, 0.5, 0.9]);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("gen.bogus_key = 3").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("gen.bogus_key")), "{err}");
        assert_eq!(err.exit_code(), 1);
        let err = ExperimentConfig::default().apply_override("sup=3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("gen.num_identities", "-4").is_err());
        assert!(cfg.set("gen.noise_sigma", "abc").is_err());
        assert!(cfg.set("bias.balance_gender", "yes").is_err());
        assert!(matches!(ExperimentConfig::parse("no equals sign"), Err(Error::Config(m)) if m.starts_with("line 1:")));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("sup.verification_floor=0.8").unwrap();
        cfg.apply_override("seed=7").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
