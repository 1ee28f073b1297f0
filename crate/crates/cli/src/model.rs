//! Weight files and their JSON sidecars.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use nucprune::autonet::{toy_layers, Architecture, Head, Network};
use nucprune::experiment::Branch;
use nucprune::io::{load_network, save_network};
use nucprune::pruner::PruneMethod;
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json};
use crate::error::invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BranchArg {
    Seg,
    Reg,
}

impl BranchArg {
    pub fn head(self) -> Head {
        match self {
            BranchArg::Seg => Head::Sigmoid,
            BranchArg::Reg => Head::Linear,
        }
    }

    pub fn branch(self) -> Branch {
        match self {
            BranchArg::Seg => Branch::Segmentation,
            BranchArg::Reg => Branch::Regression,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.branch().as_str()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "layerwise")]
    LayerWise,
    #[value(name = "networkwide")]
    NetworkWide,
}

impl From<MethodArg> for PruneMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::LayerWise => PruneMethod::LayerWise,
            MethodArg::NetworkWide => PruneMethod::NetworkWide,
        }
    }
}

/// Everything about a weight file that the binary format does not hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub branch: BranchArg,
    pub architecture: Architecture,
    pub compression_ratio: u64,
    pub method: Option<PruneMethod>,
    pub seed: u64,
}

pub fn meta_path(model: &Path) -> PathBuf {
    model.with_extension("meta.json")
}

pub fn save_model(path: &Path, net: &Network, meta: &ModelMeta) -> Result<()> {
    save_network(path, net).with_context(|| format!("writing {}", path.display()))?;
    write_json(&meta_path(path), meta)
}

/// Loads a model using its sidecar; without one, `branch` selects the toy
/// architecture. A `branch` that contradicts the sidecar is rejected.
pub fn load_model(path: &Path, branch: Option<BranchArg>) -> Result<(Network, ModelMeta)> {
    if !path.is_file() {
        return Err(invalid(format!("model {} does not exist", path.display())));
    }
    let sidecar = meta_path(path);
    let meta = if sidecar.is_file() {
        let meta: ModelMeta = read_json(&sidecar)?;
        if let Some(b) = branch.filter(|&b| b != meta.branch) {
            return Err(invalid(format!(
                "--branch {} contradicts {} (branch {})",
                b.as_str(),
                sidecar.display(),
                meta.branch.as_str()
            )));
        }
        meta
    } else {
        let branch = branch.ok_or_else(|| {
            invalid(format!(
                "{} is missing; pass --branch to pick the architecture",
                sidecar.display()
            ))
        })?;
        ModelMeta {
            branch,
            architecture: Architecture {
                head: branch.head(),
                layers: toy_layers(),
            },
            compression_ratio: 1,
            method: None,
            seed: 0,
        }
    };
    let net = load_network(path, &meta.architecture)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok((net, meta))
}
