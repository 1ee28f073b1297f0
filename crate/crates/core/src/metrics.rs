//! Dice, MSE, AJI and PQ.
//!
//! Instance metrics are invariant under relabelling: wherever an order over
//! instances matters, instances are ranked by their first pixel in raster
//! order rather than by label value.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelMap, Mask, ShapeMismatch};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error("tensor shapes differ: {0:?} vs {1:?}")]
    TensorShape(Vec<usize>, Vec<usize>),
    #[error("IoU threshold {0} must lie in [0.5, 1)")]
    Threshold(f64),
}

/// `2|a∩b| / (|a|+|b|)`, or 1 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64, MetricsError> {
    if a.dims() != b.dims() {
        return Err(ShapeMismatch {
            expected: a.dims(),
            actual: b.dims(),
        }
        .into());
    }
    let both = a
        .bits()
        .iter()
        .zip(b.bits())
        .filter(|(x, y)| **x && **y)
        .count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Mean squared difference, accumulated in f64.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64, MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::TensorShape(
            a.shape().to_vec(),
            b.shape().to_vec(),
        ));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Instances of one map: labels ascending, with area and first raster pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instances {
    pub labels: Vec<u32>,
    pub areas: Vec<usize>,
    pub first_pixel: Vec<usize>,
}

fn instances(lm: &LabelMap) -> (Instances, Vec<usize>) {
    let max = lm.max_label() as usize;
    let mut area = vec![0usize; max + 1];
    let mut first = vec![usize::MAX; max + 1];
    for (p, &l) in lm.labels().iter().enumerate() {
        area[l as usize] += 1;
        if first[l as usize] == usize::MAX {
            first[l as usize] = p;
        }
    }
    let mut index = vec![usize::MAX; max + 1];
    let mut inst = Instances {
        labels: Vec::new(),
        areas: Vec::new(),
        first_pixel: Vec::new(),
    };
    for l in 1..=max {
        if area[l] > 0 {
            index[l] = inst.labels.len();
            inst.labels.push(l as u32);
            inst.areas.push(area[l]);
            inst.first_pixel.push(first[l]);
        }
    }
    (inst, index)
}

/// Pairwise overlap counts between ground-truth and predicted instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IouMatrix {
    pub gt: Instances,
    pub pred: Instances,
    /// Row-major `gt.len() x pred.len()` intersection pixel counts.
    pub intersection: Vec<usize>,
}

impl IouMatrix {
    pub fn intersection(&self, g: usize, p: usize) -> usize {
        self.intersection[g * self.pred.labels.len() + p]
    }

    pub fn union(&self, g: usize, p: usize) -> usize {
        self.gt.areas[g] + self.pred.areas[p] - self.intersection(g, p)
    }

    pub fn iou(&self, g: usize, p: usize) -> f64 {
        self.intersection(g, p) as f64 / self.union(g, p) as f64
    }

    /// The full IoU matrix, rows indexed by ascending ground-truth label.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.gt.labels.len())
            .map(|g| {
                (0..self.pred.labels.len())
                    .map(|p| self.iou(g, p))
                    .collect()
            })
            .collect()
    }

    /// Exact comparison of `IoU(g, a)` against `IoU(g, b)`.
    fn cmp_iou(&self, g: usize, a: usize, b: usize) -> Ordering {
        let lhs = self.intersection(g, a) as u128 * self.union(g, b) as u128;
        let rhs = self.intersection(g, b) as u128 * self.union(g, a) as u128;
        lhs.cmp(&rhs)
    }
}

/// Joint pixel counts of every (ground truth, prediction) pair in one pass.
pub fn iou_matrix(gt: &LabelMap, pred: &LabelMap) -> Result<IouMatrix, MetricsError> {
    gt.check_same_shape(pred)?;
    let (gi, gidx) = instances(gt);
    let (pi, pidx) = instances(pred);
    let np = pi.labels.len();
    let mut inter = vec![0usize; gi.labels.len() * np];
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g != 0 && p != 0 {
            inter[gidx[g as usize] * np + pidx[p as usize]] += 1;
        }
    }
    Ok(IouMatrix {
        gt: gi,
        pred: pi,
        intersection: inter,
    })
}

fn raster_order(inst: &Instances) -> Vec<usize> {
    let mut order: Vec<usize> = (0..inst.labels.len()).collect();
    order.sort_by_key(|&i| inst.first_pixel[i]);
    order
}

/// Aggregated Jaccard Index.
///
/// Ground-truth instances are visited by first raster pixel. Each takes the
/// unused prediction of highest IoU among those it overlaps (ties go to the
/// prediction whose first pixel comes first) and adds the pair's intersection
/// and union to C and U; without an overlapping unused prediction it adds its
/// own area to U. Unused predictions are then added to U. Two empty maps
/// score 1.
pub fn aji(gt: &LabelMap, pred: &LabelMap) -> Result<f64, MetricsError> {
    let m = iou_matrix(gt, pred)?;
    let mut used = vec![false; m.pred.labels.len()];
    let pred_order = raster_order(&m.pred);
    let (mut c, mut u) = (0usize, 0usize);
    for g in raster_order(&m.gt) {
        let mut best: Option<usize> = None;
        for &p in &pred_order {
            if used[p] || m.intersection(g, p) == 0 {
                continue;
            }
            if best.is_none_or(|b| m.cmp_iou(g, p, b) == Ordering::Greater) {
                best = Some(p);
            }
        }
        match best {
            Some(p) => {
                used[p] = true;
                c += m.intersection(g, p);
                u += m.union(g, p);
            }
            None => u += m.gt.areas[g],
        }
    }
    u += used
        .iter()
        .zip(&m.pred.areas)
        .filter(|(used, _)| !**used)
        .map(|(_, a)| a)
        .sum::<usize>();
    if u == 0 {
        return Ok(1.0);
    }
    Ok(c as f64 / u as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanopticQuality {
    pub pq: f64,
    pub dq: f64,
    pub sq: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Panoptic quality with matches at IoU strictly above `iou_threshold`.
/// Thresholds below 0.5 are rejected because matches would not be unique.
pub fn pq(
    gt: &LabelMap,
    pred: &LabelMap,
    iou_threshold: f64,
) -> Result<PanopticQuality, MetricsError> {
    if !(0.5..1.0).contains(&iou_threshold) {
        return Err(MetricsError::Threshold(iou_threshold));
    }
    let m = iou_matrix(gt, pred)?;
    let (ng, np) = (m.gt.labels.len(), m.pred.labels.len());
    if ng == 0 && np == 0 {
        return Ok(PanopticQuality {
            pq: 1.0,
            dq: 1.0,
            sq: 1.0,
            true_positives: 0,
            false_positives: 0,
            false_negatives: 0,
        });
    }
    let mut tp = 0usize;
    let mut iou_sum = 0.0f64;
    for g in raster_order(&m.gt) {
        for p in 0..np {
            if m.intersection(g, p) > 0 && m.iou(g, p) > iou_threshold {
                tp += 1;
                iou_sum += m.iou(g, p);
            }
        }
    }
    let (fp, fn_) = (np - tp, ng - tp);
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    let sq = if tp == 0 { 0.0 } else { iou_sum / tp as f64 };
    Ok(PanopticQuality {
        pq: iou_sum / denom,
        dq: tp as f64 / denom,
        sq,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// One results row. Metrics that do not apply to a branch are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub branch: String,
    pub method: String,
    pub cr: u64,
    pub sparsity: Option<f64>,
    pub dice: Option<f64>,
    pub mse: Option<f64>,
    pub aji: Option<f64>,
    pub pq: Option<f64>,
    pub speedup: Option<f64>,
}

impl MetricsReport {
    pub fn new(run_id: &str, branch: &str, method: &str, cr: u64) -> Self {
        Self {
            run_id: run_id.to_string(),
            branch: branch.to_string(),
            method: method.to_string(),
            cr,
            sparsity: None,
            dice: None,
            mse: None,
            aji: None,
            pq: None,
            speedup: None,
        }
    }

    /// All present metric values.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [
            self.sparsity,
            self.dice,
            self.mse,
            self.aji,
            self.pq,
            self.speedup,
        ]
        .into_iter()
        .flatten()
    }
}

/// Unweighted mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
