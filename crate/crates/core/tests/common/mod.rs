//! Independent reference implementations shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

pub mod gradients;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nucprune::autonet::{weight_name, Activation, Head, Layer, Network, Sample, TrainConfig};
use nucprune::labels::LabelMap;
use nucprune::pruner::{iter_mag_prune, sparsity_report, PruneConfig, PruneMethod};
use nucprune::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// finite differences

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from turning rounding noise into large relative errors.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f32 = 1e-3;
/// Entries smaller than this fraction of the largest gradient entry are
/// compared against that level instead of their own magnitude.
pub const FD_RELATIVE_FLOOR: f64 = 1e-2;

/// `Σ r_i · out_i` in f64.
pub fn weighted_sum(out: &Tensor, r: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(r)
        .map(|(&o, &w)| o as f64 * w as f64)
        .sum()
}

/// Central difference of `f` with respect to element `i` of `x`, using the
/// exact step that survives f32 rounding. Affine and quadratic functions are
/// differentiated exactly for any step, so those use large steps that keep
/// f32 rounding in the forward pass negligible.
pub fn central_difference(
    x: &Tensor,
    i: usize,
    step: f32,
    mut f: impl FnMut(&Tensor) -> f64,
) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += step;
    let mut minus = x.clone();
    minus.data_mut()[i] -= step;
    let step = plus.data()[i] as f64 - minus.data()[i] as f64;
    (f(&plus) - f(&minus)) / step
}

/// Largest relative error between `analytic` and central differences of `f`
/// over every element of `x`.
pub fn max_fd_error(
    x: &Tensor,
    analytic: &Tensor,
    step: f32,
    mut f: impl FnMut(&Tensor) -> f64,
) -> f64 {
    let scale = analytic
        .data()
        .iter()
        .fold(0.0f64, |m, &g| m.max(g.abs() as f64));
    let floor = (FD_RELATIVE_FLOOR * scale).max(1e-12);
    (0..x.len())
        .map(|i| {
            rel_error(
                analytic.data()[i] as f64,
                central_difference(x, i, step, &mut f),
                floor,
            )
        })
        .fold(0.0, f64::max)
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so a ±step perturbation never crosses a ReLU kink.
pub fn kink_free_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Shuffled distinct values on a 0.01 grid, so no pooling window has a near-tie.
pub fn distinct_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| i as f32 * 0.01 - n as f32 * 0.005).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ---------------------------------------------------------------------------
// pruning oracles

/// A chain of 1x1 convolutions whose kernels hold exactly `layers[i]`
/// (layer `i` maps `c_i` to `c_{i+1}` channels).
pub fn chain_network(channels: &[usize], layers: &[Vec<f32>]) -> Network {
    let defs: Vec<Layer> = channels
        .windows(2)
        .enumerate()
        .map(|(i, c)| Layer::conv(&format!("l{i}"), c[0], c[1], 1, Activation::Identity))
        .collect();
    let mut net = Network::new(Head::Linear, defs, 0).unwrap();
    for (i, w) in layers.iter().enumerate() {
        let shape = vec![channels[i + 1], channels[i], 1, 1];
        net.set_param(
            &weight_name(&format!("l{i}")),
            Tensor::new(shape, w.clone()).unwrap(),
        )
        .unwrap();
    }
    net
}

/// Random chain of up to three layers with at most 128 weights each. Weights
/// come from a small set of magnitudes so ties are common.
pub fn random_chain(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<f32>>) {
    let depth = rng.random_range(1..=3);
    let mut channels = vec![rng.random_range(1..=8usize)];
    for _ in 0..depth {
        let prev = *channels.last().unwrap();
        channels.push(rng.random_range(1..=(128 / prev).min(16)));
    }
    let levels = rng.random_range(2..=12);
    let weights = channels
        .windows(2)
        .map(|c| {
            (0..c[0] * c[1])
                .map(|_| {
                    let m = rng.random_range(1..=levels) as f32 * 0.25;
                    if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect()
        })
        .collect();
    (channels, weights)
}

/// Exact `⌈num · n / den⌉`.
pub fn exact_quota(num: u64, den: u64, n: usize) -> usize {
    (num * n as u64).div_ceil(den) as usize
}

/// Positions (flat indices) a fresh layer loses to layer-wise pruning:
/// sort by (|w|, index), take the first `quota`.
pub fn oracle_layerwise(weights: &[f32], quota: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .partial_cmp(&weights[b].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.into_iter().take(quota).collect()
}

/// Positions `(layer, index)` lost to network-wide pruning.
pub fn oracle_networkwide(layers: &[Vec<f32>], quota: usize) -> BTreeSet<(usize, usize)> {
    let mut all: Vec<(f32, usize, usize)> = layers
        .iter()
        .enumerate()
        .flat_map(|(l, w)| w.iter().enumerate().map(move |(i, v)| (v.abs(), l, i)))
        .collect();
    all.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    all.into_iter()
        .take(quota)
        .map(|(_, l, i)| (l, i))
        .collect()
}

pub fn pruned_positions(
    masks: &BTreeMap<String, nucprune::pruner::PruneMask>,
    layer: usize,
) -> BTreeSet<usize> {
    masks[&weight_name(&format!("l{layer}"))]
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &k)| !k)
        .map(|(i, _)| i)
        .collect()
}

/// Zero positions of every prunable kernel, keyed by parameter name.
pub fn zero_sets(net: &Network) -> BTreeMap<String, BTreeSet<usize>> {
    net.prunable_names()
        .into_iter()
        .map(|n| {
            let zeros = net
                .param(&n)
                .unwrap()
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 0.0);
            let set = zeros.map(|(i, _)| i).collect();
            (n, set)
        })
        .collect()
}

/// Runs the prune/retrain schedule to `cr` and checks every checkpoint:
/// exact ceil quotas, no resurrected weights, masked positions hold zeros.
pub fn check_schedule(net: &Network, method: PruneMethod, cr: u64, data: &[Sample], epochs: usize) {
    let cfg = PruneConfig {
        method,
        compression_ratio: cr,
        retrain: (epochs > 0).then(|| TrainConfig {
            epochs,
            seed: 3,
            ..Default::default()
        }),
    };
    let cps = iter_mag_prune(net, &cfg, data).unwrap();
    assert_eq!(cps.len() as u32, cr.trailing_zeros());
    let mut previous = zero_sets(net);
    for (k, cp) in cps.iter().enumerate() {
        let k = k as u32 + 1;
        assert_eq!(cp.compression_ratio, 1 << k);
        let num = (1u64 << k) - 1;
        let den = 1u64 << k;
        let report = sparsity_report(&cp.network);
        match method {
            PruneMethod::LayerWise => {
                for l in &report.layers {
                    assert_eq!(
                        l.total - l.nonzero,
                        exact_quota(num, den, l.total),
                        "{}",
                        l.name
                    );
                }
            }
            PruneMethod::NetworkWide => {
                assert_eq!(
                    report.total() - report.nonzero(),
                    exact_quota(num, den, report.total())
                );
            }
        }
        let zeros = zero_sets(&cp.network);
        for (name, before) in &previous {
            assert!(
                before.is_subset(&zeros[name]),
                "{name} resurrected at iteration {k}"
            );
        }
        for (name, mask) in cp.network.masks() {
            let w = cp.network.param(name).unwrap().data();
            assert!(mask
                .bits()
                .iter()
                .zip(w)
                .all(|(&keep, &v)| keep || v == 0.0));
        }
        previous = zeros;
    }
}

// ---------------------------------------------------------------------------
// instance metric oracles built on pixel sets

pub type PixelSet = HashSet<(usize, usize)>;

/// Instances as (first raster pixel, pixel set), ordered by first pixel.
pub fn pixel_sets(lm: &LabelMap) -> Vec<PixelSet> {
    let (h, w) = lm.dims();
    let mut by_label: BTreeMap<u32, ((usize, usize), PixelSet)> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let l = lm.get(y, x);
            if l != 0 {
                by_label
                    .entry(l)
                    .or_insert(((y, x), PixelSet::new()))
                    .1
                    .insert((y, x));
            }
        }
    }
    let mut v: Vec<((usize, usize), PixelSet)> = by_label.into_values().collect();
    v.sort_by_key(|(first, _)| *first);
    v.into_iter().map(|(_, s)| s).collect()
}

fn inter_union(a: &PixelSet, b: &PixelSet) -> (usize, usize) {
    let i = a.intersection(b).count();
    (i, a.union(b).count())
}

pub fn oracle_aji(gt: &LabelMap, pred: &LabelMap) -> f64 {
    let g = pixel_sets(gt);
    let p = pixel_sets(pred);
    let mut used = vec![false; p.len()];
    let (mut c, mut u) = (0usize, 0usize);
    for gi in &g {
        let mut best: Option<(usize, usize, usize)> = None;
        for (j, pj) in p.iter().enumerate() {
            if used[j] {
                continue;
            }
            let (i, un) = inter_union(gi, pj);
            if i == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bi, bu)) => (i as u128) * (bu as u128) > (bi as u128) * (un as u128),
            };
            if better {
                best = Some((j, i, un));
            }
        }
        match best {
            Some((j, i, un)) => {
                used[j] = true;
                c += i;
                u += un;
            }
            None => u += gi.len(),
        }
    }
    for (j, pj) in p.iter().enumerate() {
        if !used[j] {
            u += pj.len();
        }
    }
    if u == 0 {
        1.0
    } else {
        c as f64 / u as f64
    }
}

/// (pq, dq, sq, matches as (gt index, pred index) in first-pixel order).
pub fn oracle_pq(gt: &LabelMap, pred: &LabelMap) -> (f64, f64, f64, Vec<(usize, usize)>) {
    let g = pixel_sets(gt);
    let p = pixel_sets(pred);
    if g.is_empty() && p.is_empty() {
        return (1.0, 1.0, 1.0, Vec::new());
    }
    let mut matches = Vec::new();
    let mut sum = 0.0;
    for (a, ga) in g.iter().enumerate() {
        for (b, pb) in p.iter().enumerate() {
            let (i, un) = inter_union(ga, pb);
            // IoU > 0.5 exactly when 2i > u
            if 2 * i > un {
                matches.push((a, b));
                sum += i as f64 / un as f64;
            }
        }
    }
    let tp = matches.len() as f64;
    let denom = tp + 0.5 * (p.len() as f64 - tp) + 0.5 * (g.len() as f64 - tp);
    let sq = if matches.is_empty() { 0.0 } else { sum / tp };
    (sum / denom, tp / denom, sq, matches)
}

/// Random label map of up to `max_instances` painted rectangles and discs,
/// later shapes overwriting earlier ones, with arbitrary label values.
pub fn random_label_map(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    max_instances: usize,
) -> LabelMap {
    let mut lm = LabelMap::empty(h, w);
    let n = rng.random_range(0..=max_instances);
    let mut labels: Vec<u32> = (1..=9).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(rng);
    for &label in labels.iter().take(n) {
        let cy = rng.random_range(0..h as i64) as isize;
        let cx = rng.random_range(0..w as i64) as isize;
        let ry = rng.random_range(0..=h.max(2) as i64 / 2) as isize;
        let rx = rng.random_range(0..=w.max(2) as i64 / 2) as isize;
        let disc = rng.random_bool(0.5);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (dy, dx) = (y - cy, x - cx);
                let inside = if disc {
                    (dy * dy) as f64 / ((ry * ry).max(1) as f64)
                        + (dx * dx) as f64 / ((rx * rx).max(1) as f64)
                        <= 1.0
                } else {
                    dy.abs() <= ry && dx.abs() <= rx
                };
                if inside {
                    lm.set(y as usize, x as usize, label);
                }
            }
        }
    }
    lm
}

/// Same partition with labels renamed by a random injective map.
pub fn relabel(rng: &mut ChaCha8Rng, lm: &LabelMap) -> LabelMap {
    use rand::seq::SliceRandom;
    let max = lm.max_label() as usize;
    let mut targets: Vec<u32> = (1..=(max as u32 + 20)).collect();
    targets.shuffle(rng);
    let (h, w) = lm.dims();
    let v = lm
        .labels()
        .iter()
        .map(|&l| if l == 0 { 0 } else { targets[l as usize - 1] })
        .collect();
    LabelMap::new(h, w, v).unwrap()
}

/// Partition of the foreground as a set of pixel sets, ignoring label values.
pub fn partition(lm: &LabelMap) -> BTreeSet<Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (p, &l) in lm.labels().iter().enumerate() {
        if l != 0 {
            groups.entry(l).or_default().push(p);
        }
    }
    groups.into_values().collect()
}

// ---------------------------------------------------------------------------
// distance target and connected component oracles

/// Nearest pixel with a different label, by exhaustive search, normalized per instance.
pub fn brute_distance(l: &LabelMap) -> Vec<f32> {
    let (h, w) = l.dims();
    let lab = l.labels();
    let mut raw = vec![0.0f64; h * w];
    for p in 0..h * w {
        if lab[p] == 0 {
            continue;
        }
        let mut best = f64::INFINITY;
        for q in 0..h * w {
            if lab[q] != lab[p] {
                let dy = (p / w) as f64 - (q / w) as f64;
                let dx = (p % w) as f64 - (q % w) as f64;
                best = best.min((dy * dy + dx * dx).sqrt());
            }
        }
        raw[p] = best;
    }
    let mut peak: BTreeMap<u32, f64> = BTreeMap::new();
    for p in 0..h * w {
        if lab[p] != 0 {
            let e = peak.entry(lab[p]).or_insert(0.0);
            *e = e.max(raw[p]);
        }
    }
    (0..h * w)
        .map(|p| match lab[p] {
            0 => 0.0,
            l if peak[&l].is_infinite() => 1.0,
            l => (raw[p] / peak[&l]) as f32,
        })
        .collect()
}

/// Areas of the 4-connected components of `bits`, by breadth-first search.
pub fn flood_fill_areas(bits: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; h * w];
    let mut areas = Vec::new();
    for start in 0..h * w {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut area = 0;
        while let Some(p) = queue.pop_front() {
            area += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if bits[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        areas.push(area);
    }
    areas
}
