use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::ServerId;
use crate::crypto::{max_payload, GroupId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// `l = max(ceil(log10 N), 1)`.
pub fn layer_count(messages: usize) -> u32 {
    let mut l = 0u32;
    let mut reach: u128 = 1;
    while reach < messages as u128 {
        reach *= 10;
        l += 1;
    }
    l.max(1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    #[serde(default = "one")]
    pub throughput: u64,
    #[serde(default)]
    pub org: String,
    /// Pin to a layer; unpinned mixes are placed by the partitioner.
    #[serde(default)]
    pub layer: Option<u32>,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixBehavior {
    #[default]
    Passive,
    WrongRouting,
    InvalidShuffle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReBehavior {
    #[default]
    Honest,
    AbortAfterCommit,
    BadOpening,
    Grind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub mixes: Vec<u32>,
    #[serde(default)]
    pub behavior: MixBehavior,
    #[serde(default)]
    pub routing_entities: Vec<u32>,
    #[serde(default)]
    pub re_behavior: ReBehavior,
    #[serde(default = "one")]
    pub grind_attempts: u64,
    #[serde(default)]
    pub auditors: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Input,
    Mix,
    Commit,
    Open,
    Audit,
    Decrypt,
}

/// What a fault takes out: one server or every mix of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultTarget {
    Server(ServerId),
    Layer(u32),
}

impl Serialize for FaultTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FaultTarget::Server(id) => id.serialize(s),
            FaultTarget::Layer(l) => s.serialize_str(&format!("layer-{l}")),
        }
    }
}

impl<'de> Deserialize<'de> for FaultTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if let Some(l) = text.strip_prefix("layer-") {
            return l
                .parse()
                .map(FaultTarget::Layer)
                .map_err(|_| serde::de::Error::custom(format!("bad layer in `{text}`")));
        }
        text.parse().map(FaultTarget::Server).map_err(serde::de::Error::custom)
    }
}

/// Takes the target out from `phase` onward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub target: FaultTarget,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeFrameConfig {
    #[serde(default)]
    pub seed: u64,
    pub messages: usize,
    #[serde(default)]
    pub layers: Option<u32>,
    #[serde(default = "two")]
    pub mixes_per_layer: u32,
    #[serde(default = "three")]
    pub routing_entities: u32,
    #[serde(default = "three")]
    pub auditors: u32,
    #[serde(default = "two")]
    pub threshold: u32,
    #[serde(default = "default_soundness")]
    pub soundness: u32,
    #[serde(default = "one_block")]
    pub blocks: u32,
    #[serde(default = "default_group")]
    pub group: GroupId,
    /// Require at least two mixes per layer.
    #[serde(default)]
    pub availability: bool,
    #[serde(default = "default_timeout")]
    pub timeout_steps: usize,
    #[serde(default)]
    pub mixes: Vec<MixSpec>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

fn two() -> u32 {
    2
}
fn three() -> u32 {
    3
}
fn default_soundness() -> u32 {
    crate::shuffle::DEFAULT_SOUNDNESS as u32
}
fn one_block() -> u32 {
    1
}
fn default_group() -> GroupId {
    GroupId::Ristretto255
}
fn default_timeout() -> usize {
    4
}

impl TimeFrameConfig {
    pub fn new(messages: usize) -> Self {
        Self {
            seed: 0,
            messages,
            layers: None,
            mixes_per_layer: 2,
            routing_entities: 3,
            auditors: 3,
            threshold: 2,
            soundness: default_soundness(),
            blocks: 1,
            group: GroupId::Ristretto255,
            availability: false,
            timeout_steps: default_timeout(),
            mixes: Vec::new(),
            adversary: AdversarySpec::default(),
            faults: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn layer_count(&self) -> u32 {
        self.layers.unwrap_or_else(|| layer_count(self.messages))
    }

    /// Mix list, generating `layers × mixes_per_layer` unit mixes if none given.
    pub fn mix_specs(&self) -> Vec<MixSpec> {
        if !self.mixes.is_empty() {
            return self.mixes.clone();
        }
        let l = self.layer_count();
        (0..l * self.mixes_per_layer)
            .map(|i| MixSpec {
                throughput: 1,
                org: String::new(),
                layer: Some(i / self.mixes_per_layer + 1),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.messages == 0 {
            return Err(invalid("messages", "need at least one message"));
        }
        if self.layers == Some(0) {
            return Err(invalid("layers", "need at least one layer"));
        }
        if self.mixes.is_empty() && self.mixes_per_layer == 0 {
            return Err(invalid("mixes_per_layer", "need at least one mix per layer"));
        }
        if self.routing_entities == 0 {
            return Err(invalid("routing_entities", "need at least one routing entity"));
        }
        if self.threshold == 0 || self.threshold > self.auditors {
            return Err(invalid(
                "threshold",
                format!("need 1 <= threshold <= auditors ({})", self.auditors),
            ));
        }
        if self.soundness == 0 {
            return Err(invalid("soundness", "must be positive"));
        }
        if self.blocks == 0 || max_payload(self.blocks as usize) < payload(self.messages - 1).len() {
            return Err(invalid("blocks", "too few blocks for the message payloads"));
        }
        let specs = self.mix_specs();
        let adv = &self.adversary;
        if let Some(m) = adv.mixes.iter().find(|&&m| m == 0 || m as usize > specs.len()) {
            return Err(invalid("adversary.mixes", format!("no mix-{m}")));
        }
        if let Some(r) = adv
            .routing_entities
            .iter()
            .find(|&&r| r == 0 || r > self.routing_entities)
        {
            return Err(invalid("adversary.routing_entities", format!("no re-{r}")));
        }
        if let Some(a) = adv.auditors.iter().find(|&&a| a == 0 || a > self.auditors) {
            return Err(invalid("adversary.auditors", format!("no as-{a}")));
        }
        if adv.auditors.len() as u32 >= self.threshold || adv.auditors.len() as u32 >= self.auditors {
            return Err(invalid(
                "adversary.auditors",
                "corrupt auditors must stay below the threshold and leave an honest one",
            ));
        }
        Ok(())
    }
}

/// Plaintext submitted by user `i` (0-based).
pub fn payload(i: usize) -> Vec<u8> {
    format!("rcv-{:04}|msg-{i}", i % 10_000).into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_rule() {
        assert_eq!(layer_count(1000), 3);
        assert_eq!(layer_count(100_000), 5);
        assert_eq!(layer_count(1), 1);
        assert_eq!(layer_count(10), 1);
        assert_eq!(layer_count(11), 2);
    }

    #[test]
    fn parses_full_config() {
        let cfg = TimeFrameConfig::from_toml(
            r#"
            messages = 12
            layers = 3
            soundness = 16
            [[mixes]]
            throughput = 2
            org = "a"
            [adversary]
            mixes = [1]
            behavior = "wrong-routing"
            [[faults]]
            target = "mix-1"
            phase = "mix"
            [[faults]]
            target = "layer-2"
            phase = "input"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.adversary.behavior, MixBehavior::WrongRouting);
        assert_eq!(cfg.faults[1].target, FaultTarget::Layer(2));
        assert_eq!(cfg.faults[0].target, FaultTarget::Server(ServerId::mix(1)));
        let again = TimeFrameConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn parse_errors_name_field_and_line() {
        let err = TimeFrameConfig::from_toml("messages = 4\nsoundnes = 3\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 2") && text.contains("soundnes"), "{text}");
        let err = TimeFrameConfig::from_toml("messages = 4\nthreshold = 9\n").unwrap_err();
        assert!(err.to_string().contains("threshold"));
    }
}
