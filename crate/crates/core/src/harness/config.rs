//! Run configuration: one JSON document covering every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::simulate::EvalConfig;
use crate::autodiff::AdamConfig;
use crate::dynamics::SsmConfig;
use crate::error::{Error, Result};
use crate::plant::{AmbientConfig, ComfortConfig, ExcitationConfig, RcParams};
use crate::policy::{LossWeights, PolicyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub building: RcParams,
    pub ambient: AmbientConfig,
    pub excitation: ExcitationConfig,
    pub comfort: ComfortConfig,
    /// Length of the identification dataset.
    pub sysid_days: usize,
    /// Length of the control-scenario dataset.
    pub ctrl_days: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            building: RcParams::default(),
            ambient: AmbientConfig::default(),
            excitation: ExcitationConfig::default(),
            comfort: ComfortConfig::default(),
            sysid_days: 90,
            ctrl_days: 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub ssm: AdamConfig,
    pub policy: AdamConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            ssm: AdamConfig::with_lr(3e-3),
            policy: AdamConfig::with_lr(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub eval: EvalConfig,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub ssm: SsmConfig,
    pub policy: PolicyConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub run: RunSection,
}

/// Per-stage seeds derived from `run.seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub sysid_data: u64,
    pub ctrl_data: u64,
    pub ssm_init: u64,
    pub ssm_train: u64,
    pub policy_init: u64,
    pub policy_train: u64,
    pub scenarios: u64,
    pub eval: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::config(json_key(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.plant;
        p.building.validate("plant.building")?;
        p.ambient.validate("plant.ambient")?;
        p.excitation.validate("plant.excitation")?;
        p.comfort.validate("plant.comfort")?;
        let spd = p.building.steps_per_day();
        let past = self.ssm.past;
        let horizon = self.policy.horizon.max(self.ssm.training.horizon);
        for (key, days) in [
            ("plant.sysid_days", p.sysid_days),
            ("plant.ctrl_days", p.ctrl_days),
        ] {
            // every third must hold at least one full window
            if days == 0 || days * spd / 3 < past + horizon {
                return Err(Error::config(
                    key,
                    format!("{days} days leave no complete window of {past} past and {horizon} future samples per split"),
                ));
            }
        }
        self.ssm.validate("ssm")?;
        self.policy.validate("policy")?;
        self.loss.validate("loss")?;
        self.optimizer.ssm.validate("optimizer.ssm")?;
        self.optimizer.policy.validate("optimizer.policy")?;
        self.run.eval.validate("run.eval")?;
        if self.run.eval.warmup_days * spd < past {
            return Err(Error::config(
                "run.eval.warmup_days",
                format!("warm-up is shorter than the observer window of {past} samples"),
            ));
        }
        Ok(())
    }

    /// Canonical JSON; the hash below is taken over exactly this text.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.run.seed;
        Seeds {
            sysid_data: s,
            ctrl_data: s.wrapping_add(1),
            ssm_init: s.wrapping_add(2),
            ssm_train: s.wrapping_add(3),
            policy_init: s.wrapping_add(4),
            policy_train: s.wrapping_add(5),
            scenarios: s.wrapping_add(6),
            eval: s.wrapping_add(7),
        }
    }
}

/// Best-effort field name from a serde error message, e.g. "unknown field `foo`".
fn json_key(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<root>".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"run": {"seed": 7}}"#).unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.policy.horizon, PolicyConfig::default().horizon);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = RunConfig::from_json(r#"{"policy": {"hiden": [3]}}"#).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("hiden"), "{err}");
    }

    #[test]
    fn invalid_value_names_its_key() {
        let err = RunConfig::from_json(r#"{"loss": {"q_y": -1}}"#).unwrap_err();
        assert!(err.to_string().contains("loss.q_y"), "{err}");
        let err = RunConfig::from_json(r#"{"plant": {"sysid_days": 0}}"#).unwrap_err();
        assert!(err.to_string().contains("plant.sysid_days"), "{err}");
    }
}
