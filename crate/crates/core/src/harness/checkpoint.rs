//! JSON checkpoints for the identified model and the control law.
//!
//! A checkpoint stores the weight-free architecture plus every parameter
//! block by name. Loading rebuilds a zero model from the architecture and
//! fills it block by block, so a missing, extra or misshapen block is an
//! error rather than a silent partial load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::blocks::Parameters;
use crate::dynamics::{NeuralSsm, SignalScaling, SsmArchitecture};
use crate::error::{Error, Result};
use crate::policy::{PolicyArchitecture, PolicyNet};

pub const SSM_FORMAT: &str = "dpc.ssm.v1";
pub const POLICY_FORMAT: &str = "dpc.policy.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsmCheckpoint {
    pub format: String,
    pub config_hash: String,
    pub architecture: SsmArchitecture,
    pub scaling: SignalScaling,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub config_hash: String,
    pub architecture: PolicyArchitecture,
    pub blocks: Vec<Block>,
}

fn blocks_of<P: Parameters>(p: &P) -> Vec<Block> {
    p.params()
        .into_iter()
        .map(|(name, t)| Block {
            name,
            shape: [t.rows(), t.cols()],
            data: t.data().to_vec(),
        })
        .collect()
}

fn fill<P: Parameters>(target: &mut P, blocks: Vec<Block>, path: &Path) -> Result<()> {
    let mut by_name: BTreeMap<String, Block> = BTreeMap::new();
    for b in blocks {
        if by_name.contains_key(&b.name) {
            return Err(Error::format(path, format!("duplicate block `{}`", b.name)));
        }
        by_name.insert(b.name.clone(), b);
    }
    for (name, t) in target.params_mut() {
        let b = by_name
            .remove(&name)
            .ok_or_else(|| Error::format(path, format!("missing block `{name}`")))?;
        if b.shape != [t.rows(), t.cols()] {
            return Err(Error::Dimension(format!(
                "block `{name}` is {}x{}, architecture expects {}x{}",
                b.shape[0],
                b.shape[1],
                t.rows(),
                t.cols()
            )));
        }
        *t = Tensor::new(b.shape[0], b.shape[1], b.data)
            .map_err(|e| Error::format(path, format!("block `{name}`: {e}")))?;
        if !t.is_finite() {
            return Err(Error::format(
                path,
                format!("block `{name}` holds non-finite values"),
            ));
        }
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::format(path, format!("unexpected block `{extra}`")));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("checkpoint serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn check_format(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::format(
            path,
            format!("format `{found}`, expected `{expected}`"),
        ));
    }
    Ok(())
}

pub fn save_ssm(path: &Path, model: &NeuralSsm, config_hash: &str) -> Result<()> {
    write_json(
        path,
        &SsmCheckpoint {
            format: SSM_FORMAT.into(),
            config_hash: config_hash.into(),
            architecture: model.architecture(),
            scaling: model.scaling.clone(),
            blocks: blocks_of(model),
        },
    )
}

/// Returns the model and the config hash it was trained under.
pub fn load_ssm(path: &Path) -> Result<(NeuralSsm, String)> {
    let ck: SsmCheckpoint = read_json(path)?;
    check_format(path, &ck.format, SSM_FORMAT)?;
    let mut model = NeuralSsm::zeros(&ck.architecture, ck.scaling)?;
    fill(&mut model, ck.blocks, path)?;
    Ok((model, ck.config_hash))
}

pub fn save_policy(path: &Path, policy: &PolicyNet, config_hash: &str) -> Result<()> {
    write_json(
        path,
        &PolicyCheckpoint {
            format: POLICY_FORMAT.into(),
            config_hash: config_hash.into(),
            architecture: policy.architecture(),
            blocks: blocks_of(policy),
        },
    )
}

pub fn load_policy(path: &Path) -> Result<(PolicyNet, String)> {
    let ck: PolicyCheckpoint = read_json(path)?;
    check_format(path, &ck.format, POLICY_FORMAT)?;
    let mut policy = PolicyNet::from_architecture(&ck.architecture)?;
    fill(&mut policy, ck.blocks, path)?;
    Ok((policy, ck.config_hash))
}
