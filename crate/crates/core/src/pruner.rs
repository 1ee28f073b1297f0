//! Iterative magnitude pruning (network-wide and layer-wise), sparsity
//! accounting and the FLOPs-based theoretical speedup model.
//!
//! Iteration `k` of the prune/retrain loop targets a cumulative sparsity of
//! `1 - 2^-k` over the prunable kernels, so `log2(CR)` iterations reach
//! compression ratio `CR`. Already masked weights count toward each quota and
//! stay masked; weights never come back.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonet::{train, AutonetError, Layer, Network, Sample, TrainConfig};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("target sparsity {0} outside [0, 1)")]
    InvalidSparsity(f64),
    #[error("compression ratio {0} is not a power of two")]
    InvalidCompressionRatio(u64),
    #[error("connectivity loss: pruning layer `{layer}` to sparsity {target_sparsity} removes every weight")]
    ConnectivityLoss { layer: String, target_sparsity: f64 },
    #[error("every weight of the network is pruned; sparse FLOPs are zero")]
    Disconnected,
    #[error("invalid input shape for this network: {0}")]
    Shape(String),
    #[error(transparent)]
    Network(#[from] AutonetError),
}

/// Keep/drop flags for one parameter tensor (`true` = keep).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    owner: String,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn new(owner: impl Into<String>, bits: Vec<bool>) -> Self {
        Self {
            owner: owner.into(),
            bits,
        }
    }

    pub fn all_keep(owner: impl Into<String>, len: usize) -> Self {
        Self::new(owner, vec![true; len])
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pruned(&self) -> usize {
        self.len() - self.kept()
    }

    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.pruned() as f64 / self.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    #[serde(rename = "layerwise")]
    LayerWise,
    #[serde(rename = "networkwide")]
    NetworkWide,
}

impl PruneMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneMethod::LayerWise => "layerwise",
            PruneMethod::NetworkWide => "networkwide",
        }
    }
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruneMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "layerwise" | "layer-wise" => Ok(PruneMethod::LayerWise),
            "networkwide" | "network-wide" => Ok(PruneMethod::NetworkWide),
            other => Err(format!("unknown pruning method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub method: PruneMethod,
    pub compression_ratio: u64,
    /// Retraining after every masking step; `None` skips retraining.
    pub retrain: Option<TrainConfig>,
}

/// Number of halving iterations needed to reach `cr`.
pub fn iteration_count(cr: u64) -> Result<u32, PruneError> {
    if cr == 0 || !cr.is_power_of_two() {
        return Err(PruneError::InvalidCompressionRatio(cr));
    }
    Ok(cr.trailing_zeros())
}

/// Cumulative sparsity after `k` halvings.
pub fn iteration_sparsity(k: u32) -> f64 {
    1.0 - 0.5f64.powi(k as i32)
}

/// `ceil(target * n)`, tolerant to the last-ulp noise of products like `0.3 * 10`.
fn quota(target: f64, n: usize) -> usize {
    let raw = target * n as f64;
    let q = (raw - 1e-9 * raw.max(1.0)).ceil();
    (q.max(0.0) as usize).min(n)
}

fn check_target(target: f64) -> Result<(), PruneError> {
    if !(0.0..1.0).contains(&target) {
        return Err(PruneError::InvalidSparsity(target));
    }
    Ok(())
}

fn current_bits(net: &Network, name: &str, n: usize) -> Vec<bool> {
    net.masks()
        .get(name)
        .map(|m| m.bits().to_vec())
        .unwrap_or_else(|| vec![true; n])
}

/// Per-layer magnitude masks: in every prunable kernel exactly
/// `ceil(target * n)` entries are dropped, smallest `|w|` first, ties by flat
/// index.
pub fn prune_layerwise(
    net: &Network,
    target_sparsity: f64,
) -> Result<BTreeMap<String, PruneMask>, PruneError> {
    check_target(target_sparsity)?;
    let mut out = BTreeMap::new();
    for name in net.prunable_names() {
        let w = net
            .param(&name)
            .expect("prunable names are parameters")
            .data();
        let n = w.len();
        let q = quota(target_sparsity, n);
        if q >= n {
            return Err(PruneError::ConnectivityLoss {
                layer: name,
                target_sparsity,
            });
        }
        let mut bits = current_bits(net, &name, n);
        let already = bits.iter().filter(|&&b| !b).count();
        if q > already {
            let mut candidates: Vec<usize> = (0..n).filter(|&i| bits[i]).collect();
            candidates.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
            for &i in &candidates[..q - already] {
                bits[i] = false;
            }
        }
        out.insert(name.clone(), PruneMask::new(name, bits));
    }
    Ok(out)
}

/// Global magnitude masks: one threshold over all prunable kernels, dropping
/// exactly `ceil(target * N)` entries; ties by (layer order, flat index).
/// A layer may end up completely empty.
pub fn prune_networkwide(
    net: &Network,
    target_sparsity: f64,
) -> Result<BTreeMap<String, PruneMask>, PruneError> {
    check_target(target_sparsity)?;
    let names = net.prunable_names();
    let weights: Vec<&[f32]> = names
        .iter()
        .map(|n| net.param(n).expect("prunable names are parameters").data())
        .collect();
    let mut bits: Vec<Vec<bool>> = names
        .iter()
        .zip(&weights)
        .map(|(n, w)| current_bits(net, n, w.len()))
        .collect();
    let total: usize = weights.iter().map(|w| w.len()).sum();
    let q = quota(target_sparsity, total);
    let already: usize = bits.iter().flatten().filter(|&&b| !b).count();
    if q > already {
        let mut candidates: Vec<(usize, usize)> = Vec::with_capacity(total - already);
        for (l, b) in bits.iter().enumerate() {
            candidates.extend(
                b.iter()
                    .enumerate()
                    .filter(|(_, &k)| k)
                    .map(|(i, _)| (l, i)),
            );
        }
        candidates.sort_by(|&(la, ia), &(lb, ib)| {
            weights[la][ia]
                .abs()
                .total_cmp(&weights[lb][ib].abs())
                .then((la, ia).cmp(&(lb, ib)))
        });
        for &(l, i) in &candidates[..q - already] {
            bits[l][i] = false;
        }
    }
    Ok(names
        .into_iter()
        .zip(bits)
        .map(|(n, b)| (n.clone(), PruneMask::new(n, b)))
        .collect())
}

pub fn prune(
    net: &Network,
    method: PruneMethod,
    target_sparsity: f64,
) -> Result<BTreeMap<String, PruneMask>, PruneError> {
    match method {
        PruneMethod::LayerWise => prune_layerwise(net, target_sparsity),
        PruneMethod::NetworkWide => prune_networkwide(net, target_sparsity),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub total: usize,
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    pub global_sparsity: f64,
}

impl SparsityReport {
    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn nonzero(&self) -> usize {
        self.layers.iter().map(|l| l.nonzero).sum()
    }
}

/// Exact zero counts over the prunable kernels.
pub fn sparsity_report(net: &Network) -> SparsityReport {
    let layers: Vec<LayerSparsity> = net
        .prunable_names()
        .into_iter()
        .map(|name| {
            let t = net.param(&name).expect("prunable names are parameters");
            LayerSparsity {
                nonzero: t.data().iter().filter(|&&v| v != 0.0).count(),
                total: t.len(),
                name,
            }
        })
        .collect();
    let total: usize = layers.iter().map(|l| l.total).sum();
    let nonzero: usize = layers.iter().map(|l| l.nonzero).sum();
    let global_sparsity = if total == 0 {
        0.0
    } else {
        1.0 - nonzero as f64 / total as f64
    };
    SparsityReport {
        layers,
        global_sparsity,
    }
}

/// One prune-and-retrain iteration's result.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub compression_ratio: u64,
    pub network: Network,
    pub sparsity: SparsityReport,
    pub loss_history: Vec<f64>,
}

/// Runs the prune/retrain loop and collects a checkpoint per iteration.
/// `net` is expected to be trained already.
pub fn iter_mag_prune(
    net: &Network,
    cfg: &PruneConfig,
    data: &[Sample],
) -> Result<Vec<Checkpoint>, PruneError> {
    let mut out = Vec::new();
    iter_mag_prune_with(net, cfg, data, |c| out.push(c.clone()))?;
    Ok(out)
}

/// Like [`iter_mag_prune`] but hands every checkpoint to `on_checkpoint` as
/// soon as it exists, so earlier results survive a later failure.
pub fn iter_mag_prune_with(
    net: &Network,
    cfg: &PruneConfig,
    data: &[Sample],
    mut on_checkpoint: impl FnMut(&Checkpoint),
) -> Result<(), PruneError> {
    let iterations = iteration_count(cfg.compression_ratio)?;
    let mut current = net.clone();
    for k in 1..=iterations {
        let masks = prune(&current, cfg.method, iteration_sparsity(k))?;
        current.install_masks(masks)?;
        let loss_history = match &cfg.retrain {
            Some(tc) => {
                let tc = TrainConfig {
                    seed: tc.seed.wrapping_add(k as u64),
                    ..tc.clone()
                };
                train(&mut current, data, &tc)?
            }
            None => Vec::new(),
        };
        on_checkpoint(&Checkpoint {
            compression_ratio: 1u64 << k,
            sparsity: sparsity_report(&current),
            network: current.clone(),
            loss_history,
        });
    }
    Ok(())
}

/// Dense multiply-accumulate count of one convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub weight: String,
    /// Output pixels `H_out * W_out`.
    pub positions: u64,
    pub weights: u64,
    pub macs: u64,
}

/// Per-conv dense MACs `H_out * W_out * C_out * C_in * k^2` for a `[C, H, W]`
/// input. Pooling, upsampling and activations are free.
pub fn flops_count(net: &Network, input_shape: [usize; 3]) -> Result<Vec<LayerFlops>, PruneError> {
    let [mut c, mut h, mut w] = input_shape;
    let mut skips = Vec::new();
    let mut out = Vec::new();
    for layer in net.layers() {
        match layer {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                if c != *in_channels {
                    return Err(PruneError::Shape(format!(
                        "layer `{name}` expects {in_channels} channels, got {c}"
                    )));
                }
                let positions = (h * w) as u64;
                let weights = (in_channels * out_channels * kernel * kernel) as u64;
                out.push(LayerFlops {
                    weight: crate::autonet::weight_name(name),
                    positions,
                    weights,
                    macs: positions * weights,
                });
                c = *out_channels;
            }
            Layer::MaxPool => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(PruneError::Shape(format!("cannot pool a {h}x{w} map")));
                }
                h /= 2;
                w /= 2;
            }
            Layer::Upsample => {
                h *= 2;
                w *= 2;
            }
            Layer::SaveSkip => skips.push((c, h, w)),
            Layer::ConcatSkip => {
                let (sc, sh, sw) = skips
                    .pop()
                    .ok_or_else(|| PruneError::Shape("unbalanced skips".into()))?;
                if (sh, sw) != (h, w) {
                    return Err(PruneError::Shape(format!(
                        "skip of {sh}x{sw} cannot join a {h}x{w} map"
                    )));
                }
                c += sc;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    /// Prunable weights over kept prunable weights.
    pub compression: f64,
    pub dense_flops: u64,
    pub sparse_flops: u64,
    pub speedup: f64,
}

/// Dense over sparse MACs when hardware skips every masked weight.
///
/// A masked layer costs `F_l * kept_l / n_l = H_out * W_out * kept_l`, so the
/// sparse count stays an exact integer. Layers without a mask run dense.
pub fn theoretical_speedup(
    net: &Network,
    masks: &BTreeMap<String, PruneMask>,
    input_shape: [usize; 3],
) -> Result<SpeedupReport, PruneError> {
    let flops = flops_count(net, input_shape)?;
    let dense: u64 = flops.iter().map(|f| f.macs).sum();
    let sparse: u64 = flops
        .iter()
        .map(|f| match masks.get(&f.weight) {
            Some(m) => f.positions * m.kept() as u64,
            None => f.macs,
        })
        .sum();
    if sparse == 0 {
        return Err(PruneError::Disconnected);
    }
    let prunable = net.prunable_names();
    let total: usize = prunable
        .iter()
        .map(|n| net.param(n).map_or(0, |t| t.len()))
        .sum();
    let kept: usize = prunable
        .iter()
        .map(|n| match masks.get(n) {
            Some(m) => m.kept(),
            None => net.param(n).map_or(0, |t| t.len()),
        })
        .sum();
    Ok(SpeedupReport {
        compression: if kept == 0 {
            f64::INFINITY
        } else {
            total as f64 / kept as f64
        },
        dense_flops: dense,
        sparse_flops: sparse,
        speedup: dense as f64 / sparse as f64,
    })
}
