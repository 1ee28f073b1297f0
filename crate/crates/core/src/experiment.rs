//! Training and evaluation glue shared by the command-line tool and the
//! sweep experiments: branch training on generated scenes and per-scene
//! scoring of segmentation, regression and merged instance outputs.

use thiserror::Error;

use crate::autonet::{build_toy_network, train, AutonetError, Head, Network, Sample, TrainConfig};
use crate::labels::Mask;
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::pipeline::{merge, MergeConfig, PipelineError};
use crate::pruner::{sparsity_report, theoretical_speedup, PruneError};
use crate::synth::Scene;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Network(#[from] AutonetError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no scenes to evaluate")]
    NoScenes,
}

/// Which model a results row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Segmentation,
    Regression,
    Instance,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Segmentation => "seg",
            Branch::Regression => "reg",
            Branch::Instance => "inst",
        }
    }

    /// Output head of a trainable branch.
    pub fn head(self) -> Option<Head> {
        match self {
            Branch::Segmentation => Some(Head::Sigmoid),
            Branch::Regression => Some(Head::Linear),
            Branch::Instance => None,
        }
    }
}

/// Training pairs for the branch with the given head.
pub fn samples(scenes: &[Scene], head: Head) -> Vec<Sample> {
    scenes
        .iter()
        .map(|s| match head {
            Head::Sigmoid => s.segmentation_sample(),
            Head::Linear => s.regression_sample(),
        })
        .collect()
}

/// Builds a toy network seeded with `cfg.seed` and trains it on `scenes`.
pub fn train_branch(
    head: Head,
    scenes: &[Scene],
    cfg: &TrainConfig,
) -> Result<(Network, Vec<f64>), ExperimentError> {
    let mut net = build_toy_network(head, cfg.seed);
    let history = train(&mut net, &samples(scenes, head), cfg)?;
    Ok((net, history))
}

/// Mean Dice between `prob > 0.5` and the ground-truth foreground.
pub fn segmentation_dice(net: &Network, scenes: &[Scene]) -> Result<f64, ExperimentError> {
    let mut scores = Vec::with_capacity(scenes.len());
    for s in scenes {
        let prob = net.forward(&s.image)?;
        let pred = Mask::threshold(&prob, 0.5).map_err(AutonetError::from)?;
        scores.push(metrics::dice(&pred, &s.instances.foreground())?);
    }
    metrics::mean(&scores).ok_or(ExperimentError::NoScenes)
}

/// Mean MSE between predicted and target distance maps.
pub fn regression_mse(net: &Network, scenes: &[Scene]) -> Result<f64, ExperimentError> {
    let mut scores = Vec::with_capacity(scenes.len());
    for s in scenes {
        scores.push(metrics::mse(&net.forward(&s.image)?, &s.distance)?);
    }
    metrics::mean(&scores).ok_or(ExperimentError::NoScenes)
}

/// Mean AJI and PQ of the merged outputs of a segmentation/regression pair.
pub fn instance_scores(
    seg: &Network,
    reg: &Network,
    scenes: &[Scene],
    merge_cfg: &MergeConfig,
) -> Result<(f64, f64), ExperimentError> {
    let mut ajis = Vec::with_capacity(scenes.len());
    let mut pqs = Vec::with_capacity(scenes.len());
    for s in scenes {
        let labels = merge(&seg.forward(&s.image)?, &reg.forward(&s.image)?, merge_cfg)?;
        ajis.push(metrics::aji(&s.instances, &labels)?);
        pqs.push(metrics::pq(&s.instances, &labels, 0.5)?.pq);
    }
    match (metrics::mean(&ajis), metrics::mean(&pqs)) {
        (Some(a), Some(p)) => Ok((a, p)),
        _ => Err(ExperimentError::NoScenes),
    }
}

/// Global sparsity and theoretical speedup of `net` for its installed masks.
pub fn compression_stats(
    net: &Network,
    input_shape: [usize; 3],
) -> Result<(f64, f64), ExperimentError> {
    let sparsity = sparsity_report(net).global_sparsity;
    let speedup = theoretical_speedup(net, net.masks(), input_shape)?.speedup;
    Ok((sparsity, speedup))
}

/// The three results rows (seg, reg, inst) for one method and compression
/// ratio: Dice, MSE, and merged AJI/PQ averaged over `scenes`.
pub fn evaluate_pair(
    run_id: &str,
    method: &str,
    cr: u64,
    seg: &Network,
    reg: &Network,
    scenes: &[Scene],
    merge_cfg: &MergeConfig,
) -> Result<Vec<MetricsReport>, ExperimentError> {
    let first = scenes.first().ok_or(ExperimentError::NoScenes)?;
    let input_shape: [usize; 3] = first.image.shape().try_into().map_err(|_| {
        PruneError::Shape(format!(
            "image shape {:?} is not [C, H, W]",
            first.image.shape()
        ))
    })?;

    let mut seg_row = MetricsReport::new(run_id, Branch::Segmentation.as_str(), method, cr);
    let (sparsity, speedup) = compression_stats(seg, input_shape)?;
    seg_row.sparsity = Some(sparsity);
    seg_row.speedup = Some(speedup);
    seg_row.dice = Some(segmentation_dice(seg, scenes)?);

    let mut reg_row = MetricsReport::new(run_id, Branch::Regression.as_str(), method, cr);
    let (sparsity, speedup) = compression_stats(reg, input_shape)?;
    reg_row.sparsity = Some(sparsity);
    reg_row.speedup = Some(speedup);
    reg_row.mse = Some(regression_mse(reg, scenes)?);

    let mut inst_row = MetricsReport::new(run_id, Branch::Instance.as_str(), method, cr);
    let (aji, pq) = instance_scores(seg, reg, scenes, merge_cfg)?;
    inst_row.aji = Some(aji);
    inst_row.pq = Some(pq);

    Ok(vec![seg_row, reg_row, inst_row])
}
