//! Instance segmentation by merging a foreground probability map with a
//! predicted distance map: Gaussian smoothing sized from the average nucleus
//! area, local-maxima seeds, marker-controlled watershed inside the
//! foreground, small-object removal and hole filling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::labels::{label_components, neighbors, Connectivity, LabelMap, Mask, ShapeMismatch};
use crate::tensor::{Tensor, TensorError};

/// Returned by [`estimate_avg_nucleus_area`] when no component qualifies.
pub const FALLBACK_NUCLEUS_AREA: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error("invalid merge configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    pub seg_threshold: f32,
    pub min_area: usize,
    pub maxima_rel_threshold: f32,
    pub sigma_scale: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            seg_threshold: 0.5,
            min_area: 30,
            maxima_rel_threshold: 0.1,
            sigma_scale: 0.5,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.seg_threshold > 0.0 && self.seg_threshold < 1.0) {
            return Err(PipelineError::Config(format!(
                "seg threshold {} must lie in (0, 1)",
                self.seg_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.maxima_rel_threshold) {
            return Err(PipelineError::Config(format!(
                "maxima threshold {} must lie in [0, 1)",
                self.maxima_rel_threshold
            )));
        }
        if !(self.sigma_scale.is_finite() && self.sigma_scale > 0.0) {
            return Err(PipelineError::Config(format!(
                "sigma scale {} must be positive",
                self.sigma_scale
            )));
        }
        Ok(())
    }
}

/// Mean area of the 4-connected components of `seg_prob > threshold` whose
/// area is at least `min_area`, or [`FALLBACK_NUCLEUS_AREA`] if there are none.
pub fn estimate_avg_nucleus_area(
    seg_prob: &Tensor,
    threshold: f32,
    min_area: usize,
) -> Result<f64, PipelineError> {
    let mask = Mask::threshold(seg_prob, threshold)?;
    let comps = label_components(&mask, Connectivity::Four);
    let kept: Vec<usize> = comps
        .areas()
        .into_iter()
        .skip(1)
        .filter(|&a| a >= min_area)
        .collect();
    if kept.is_empty() {
        return Ok(FALLBACK_NUCLEUS_AREA);
    }
    Ok(kept.iter().sum::<usize>() as f64 / kept.len() as f64)
}

/// Normalized discrete Gaussian of radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Symmetric reflection including the edge sample: `-1 -> 0`, `n -> n-1`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn convolve_1d(src: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let r = (kernel.len() / 2) as isize;
    for (x, d) in dst.iter_mut().enumerate() {
        *d = kernel
            .iter()
            .enumerate()
            .map(|(j, &k)| k * src[reflect(x as isize + j as isize - r, n)])
            .sum();
    }
}

/// Separable Gaussian blur with `σ = sigma_scale · sqrt(avg_area / π)` and
/// symmetric reflection at the borders. Output has the input's shape.
pub fn gaussian_smooth(
    dist: &Tensor,
    avg_area: f64,
    sigma_scale: f64,
) -> Result<Tensor, PipelineError> {
    if !(avg_area.is_finite() && avg_area > 0.0) {
        return Err(PipelineError::Config(format!(
            "average area {avg_area} must be positive"
        )));
    }
    if !(sigma_scale.is_finite() && sigma_scale > 0.0) {
        return Err(PipelineError::Config(format!(
            "sigma scale {sigma_scale} must be positive"
        )));
    }
    let (h, w) = dist.plane_dims()?;
    let kernel = gaussian_kernel(sigma_scale * (avg_area / std::f64::consts::PI).sqrt());
    let mut rows: Vec<f64> = vec![0.0; h * w];
    let src: Vec<f64> = dist.data().iter().map(|&v| v as f64).collect();
    for y in 0..h {
        convolve_1d(
            &src[y * w..(y + 1) * w],
            &kernel,
            &mut rows[y * w..(y + 1) * w],
        );
    }
    let mut out = vec![0.0f32; h * w];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        convolve_1d(&col, &kernel, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y] as f32;
        }
    }
    Ok(Tensor::new(dist.shape().to_vec(), out)?)
}

/// Seeds at pixels that are `>=` all 8 neighbours and `>` `rel_threshold`
/// times the global maximum. 8-adjacent candidates collapse into one seed at
/// their first pixel in raster order. Seeds are returned in raster order.
pub fn find_local_maxima(
    smoothed: &Tensor,
    rel_threshold: f32,
) -> Result<Vec<(usize, usize)>, PipelineError> {
    let (h, w) = smoothed.plane_dims()?;
    let v = smoothed.data();
    let peak = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if peak.is_nan() || peak <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = rel_threshold * peak;
    let candidate: Vec<bool> = (0..h * w)
        .map(|p| {
            v[p] > floor
                && neighbors(p / w, p % w, h, w, Connectivity::Eight)
                    .all(|(y, x)| v[p] >= v[y * w + x])
        })
        .collect();
    let groups = label_components(
        &Mask::new(h, w, candidate).expect("dims match"),
        Connectivity::Eight,
    );
    // components are numbered by their first raster pixel
    let mut seeds = Vec::new();
    let mut next = 1;
    for (p, &l) in groups.labels().iter().enumerate() {
        if l == next {
            seeds.push((p / w, p % w));
            next += 1;
        }
    }
    Ok(seeds)
}

/// Result of [`watershed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Watershed {
    pub labels: LabelMap,
    /// Seeds ignored because they were outside the foreground or repeated.
    pub dropped_seeds: usize,
}

#[derive(Debug, PartialEq)]
struct FloodEntry {
    priority: f32,
    label: u32,
    index: usize,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    // reversed so that the max-heap pops the smallest (priority, label, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then(other.label.cmp(&self.label))
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marker-controlled watershed: a priority flood over the 4-neighbourhood
/// in ascending order of `-smoothed`, restricted to `foreground`. Retained
/// seeds are labelled `1..=K` in the order given. A pixel claimed by several
/// fronts at once goes to the smaller label, and equal entries pop in raster
/// order. Foreground not reachable from any seed stays 0.
pub fn watershed(
    smoothed: &Tensor,
    seeds: &[(usize, usize)],
    foreground: &Mask,
) -> Result<Watershed, PipelineError> {
    let (h, w) = smoothed.plane_dims()?;
    if foreground.dims() != (h, w) {
        return Err(ShapeMismatch {
            expected: (h, w),
            actual: foreground.dims(),
        }
        .into());
    }
    let v = smoothed.data();
    let fg = foreground.bits();
    let mut labels = LabelMap::empty(h, w);
    let mut dropped = 0;
    let mut next = 0u32;
    for &(y, x) in seeds {
        if y >= h || x >= w || !fg[y * w + x] || labels.get(y, x) != 0 {
            dropped += 1;
            continue;
        }
        next += 1;
        labels.set(y, x, next);
    }

    let mut heap = BinaryHeap::new();
    let push_neighbors =
        |heap: &mut BinaryHeap<FloodEntry>, labels: &LabelMap, p: usize, label: u32| {
            for (ny, nx) in neighbors(p / w, p % w, h, w, Connectivity::Four) {
                let q = ny * w + nx;
                if fg[q] && labels.labels()[q] == 0 {
                    heap.push(FloodEntry {
                        priority: -v[q],
                        label,
                        index: q,
                    });
                }
            }
        };
    for p in 0..h * w {
        let l = labels.labels()[p];
        if l != 0 {
            push_neighbors(&mut heap, &labels, p, l);
        }
    }
    while let Some(FloodEntry { label, index, .. }) = heap.pop() {
        if labels.labels()[index] != 0 {
            continue;
        }
        labels.labels_mut()[index] = label;
        push_neighbors(&mut heap, &labels, index, label);
    }
    Ok(Watershed {
        labels,
        dropped_seeds: dropped,
    })
}

/// Clears instances with area `< min_area` and renumbers the rest `1..=K`
/// in their original order.
pub fn remove_small_objects(lm: &LabelMap, min_area: usize) -> LabelMap {
    let areas = lm.areas();
    let mut out = lm.clone();
    for l in out.labels_mut() {
        if *l != 0 && areas[*l as usize] < min_area {
            *l = 0;
        }
    }
    out.compacted()
}

/// Absorbs every 4-connected background region that does not reach the
/// image border and is bordered by a single instance into that instance.
pub fn fill_holes(lm: &LabelMap) -> LabelMap {
    let (h, w) = lm.dims();
    let background =
        Mask::new(h, w, lm.labels().iter().map(|&l| l == 0).collect()).expect("dims match");
    let regions = label_components(&background, Connectivity::Four);
    let n = regions.max_label() as usize;
    // per background region: None = not yet seen, Some(0) = disqualified
    let mut owner: Vec<Option<u32>> = vec![None; n + 1];
    for y in 0..h {
        for x in 0..w {
            let r = regions.get(y, x) as usize;
            if r == 0 || owner[r] == Some(0) {
                continue;
            }
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                owner[r] = Some(0);
                continue;
            }
            for (ny, nx) in neighbors(y, x, h, w, Connectivity::Four) {
                let l = lm.get(ny, nx);
                if l == 0 {
                    continue;
                }
                owner[r] = match owner[r] {
                    None => Some(l),
                    Some(o) if o == l => Some(o),
                    _ => Some(0),
                };
            }
        }
    }
    let mut out = lm.clone();
    for (p, &r) in regions.labels().iter().enumerate() {
        match owner[r as usize] {
            Some(l) if r != 0 && l != 0 => out.labels_mut()[p] = l,
            _ => {}
        }
    }
    out
}

/// Full merge: area estimate, smoothing, seeds, watershed over the
/// thresholded foreground, small-object removal, hole filling.
pub fn merge(
    seg_prob: &Tensor,
    dist_pred: &Tensor,
    cfg: &MergeConfig,
) -> Result<LabelMap, PipelineError> {
    cfg.validate()?;
    let seg_dims = seg_prob.plane_dims()?;
    let dist_dims = dist_pred.plane_dims()?;
    if seg_dims != dist_dims {
        return Err(ShapeMismatch {
            expected: seg_dims,
            actual: dist_dims,
        }
        .into());
    }
    let area = estimate_avg_nucleus_area(seg_prob, cfg.seg_threshold, cfg.min_area)?;
    let smoothed = gaussian_smooth(dist_pred, area, cfg.sigma_scale)?;
    let seeds = find_local_maxima(&smoothed, cfg.maxima_rel_threshold)?;
    let foreground = Mask::threshold(seg_prob, cfg.seg_threshold)?;
    let ws = watershed(&smoothed, &seeds, &foreground)?;
    Ok(fill_holes(&remove_small_objects(&ws.labels, cfg.min_area)))
}
