//! Seeded synthetic "nuclei" scenes: dark elliptical blobs on a bright noisy
//! background, with instance labels, binary masks and per-instance normalized
//! distance targets.
//!
//! Two distributions exist. `Base` keeps blobs separated by at least one
//! background pixel; `Shifted` is denser, uses smaller blobs, a different
//! intensity profile, and places some blobs in touching pairs.

use std::collections::HashSet;
use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonet::Sample;
use crate::labels::{neighbors, Connectivity, LabelMap};
use crate::tensor::Tensor;

/// Every generated instance has at least this many pixels.
pub const MIN_BLOB_AREA: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error("placed only {placed} of {requested} blobs")]
    CannotPlace { requested: usize, placed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneDistribution {
    Base,
    Shifted,
}

impl fmt::Display for SceneDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneDistribution::Base => "base",
            SceneDistribution::Shifted => "shifted",
        })
    }
}

impl FromStr for SceneDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(SceneDistribution::Base),
            "shifted" => Ok(SceneDistribution::Shifted),
            other => Err(format!("unknown distribution `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of the number of blobs.
    pub blob_count: (usize, usize),
    /// Range of the major semi-axis in pixels.
    pub radius: (f32, f32),
    pub noise_sigma: f32,
    pub distribution: SceneDistribution,
    pub seed: u64,
}

impl SceneConfig {
    /// Default parameters of `distribution` for an `height x width` canvas;
    /// blob counts scale with the canvas area (reference 64x64).
    pub fn preset(distribution: SceneDistribution, height: usize, width: usize, seed: u64) -> Self {
        let scale = (height * width) as f64 / 4096.0;
        let count = |n: f64| ((n * scale).round() as usize).max(1);
        let (blob_count, radius) = match distribution {
            SceneDistribution::Base => ((count(4.0), count(7.0)), (4.0, 6.5)),
            SceneDistribution::Shifted => ((count(8.0), count(12.0)), (4.5, 5.5)),
        };
        Self {
            height,
            width,
            blob_count,
            radius,
            noise_sigma: 0.05,
            distribution,
            seed,
        }
    }

    pub fn base(size: usize, seed: u64) -> Self {
        Self::preset(SceneDistribution::Base, size, size, seed)
    }

    pub fn shifted(size: usize, seed: u64) -> Self {
        Self::preset(SceneDistribution::Shifted, size, size, seed)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let (r0, r1) = self.radius;
        if !(r0 > 1.0 && r1 >= r0) {
            return Err(SynthError::Config(format!(
                "radius range {r0}..{r1} must satisfy 1 < min <= max"
            )));
        }
        if self.blob_count.0 > self.blob_count.1 {
            return Err(SynthError::Config("blob count range is inverted".into()));
        }
        let need = 2 * (r1.ceil() as usize + 2) + 1;
        if self.height < need || self.width < need {
            return Err(SynthError::Config(format!(
                "canvas {}x{} cannot hold blobs of radius {r1}",
                self.height, self.width
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::Config(
                "noise sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

struct Style {
    background: f32,
    nucleus: (f32, f32),
    /// Chance that a new blob is placed against an unpaired existing one.
    touch_probability: f64,
}

fn style(d: SceneDistribution) -> Style {
    match d {
        SceneDistribution::Base => Style {
            background: 0.85,
            nucleus: (0.2, 0.4),
            touch_probability: 0.0,
        },
        SceneDistribution::Shifted => Style {
            background: 0.75,
            nucleus: (0.3, 0.5),
            touch_probability: 0.3,
        },
    }
}

/// A generated scene; every map is `[1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub image: Tensor,
    pub instances: LabelMap,
    pub binary: Tensor,
    pub distance: Tensor,
}

impl Scene {
    /// Assembles a scene from an image and its ground-truth instances,
    /// deriving the binary mask and distance target.
    pub fn from_instances(seed: u64, image: Tensor, instances: LabelMap) -> Self {
        Self {
            seed,
            binary: instances.foreground().to_tensor(),
            distance: make_distance_target(&instances),
            image,
            instances,
        }
    }

    pub fn segmentation_sample(&self) -> Sample {
        Sample {
            image: self.image.clone(),
            target: self.binary.clone(),
        }
    }

    pub fn regression_sample(&self) -> Sample {
        Sample {
            image: self.image.clone(),
            target: self.distance.clone(),
        }
    }
}

struct Blob {
    cy: f32,
    cx: f32,
    major: f32,
    minor: f32,
    pixels: Vec<usize>,
    paired: bool,
}

fn rasterize(cy: f32, cx: f32, a: f32, b: f32, theta: f32, h: usize, w: usize) -> Vec<usize> {
    let (s, c) = theta.sin_cos();
    let reach = a.ceil() as isize + 1;
    let mut px = Vec::new();
    for y in (cy.round() as isize - reach)..=(cy.round() as isize + reach) {
        for x in (cx.round() as isize - reach)..=(cx.round() as isize + reach) {
            if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                continue;
            }
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let u = (dx * c + dy * s) / a;
            let v = (-dx * s + dy * c) / b;
            if u * u + v * v <= 1.0 {
                px.push(y as usize * w + x as usize);
            }
        }
    }
    px
}

/// Renders one scene from `cfg`. Blobs are labelled `1..=K` in placement order.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let st = style(cfg.distribution);
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let requested = rng.random_range(cfg.blob_count.0..=cfg.blob_count.1);
    let mut labels = LabelMap::empty(h, w);
    let mut blobs: Vec<Blob> = Vec::with_capacity(requested);
    let max_attempts = 2000 * requested.max(1);
    let mut attempts = 0;

    while blobs.len() < requested {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::CannotPlace {
                requested,
                placed: blobs.len(),
            });
        }
        let free: Vec<usize> = (0..blobs.len()).filter(|&i| !blobs[i].paired).collect();
        let anchor = (!free.is_empty() && rng.random_bool(st.touch_probability))
            .then(|| free[rng.random_range(0..free.len())]);
        // a touching partner matches its anchor's axes
        let (major, minor) = match anchor {
            Some(a) => (blobs[a].major, blobs[a].minor),
            None => {
                let major = rng.random_range(cfg.radius.0..=cfg.radius.1);
                (major, major * rng.random_range(0.75..=1.0f32))
            }
        };
        let theta = rng.random_range(0.0..PI);
        let lo = major + 1.0;
        let (hi_y, hi_x) = (h as f32 - 2.0 - major, w as f32 - 2.0 - major);

        let (cy, cx) = match anchor {
            Some(a) => {
                let phi = rng.random_range(0.0..2.0 * PI);
                let dist = blobs[a].major + minor;
                (
                    blobs[a].cy + dist * phi.sin(),
                    blobs[a].cx + dist * phi.cos(),
                )
            }
            None => (rng.random_range(lo..=hi_y), rng.random_range(lo..=hi_x)),
        };
        if cy < lo || cy > hi_y || cx < lo || cx > hi_x {
            continue;
        }
        if blobs.iter().any(|b| (b.cy - cy).hypot(b.cx - cx) < 2.0) {
            continue;
        }
        let pixels = rasterize(cy, cx, major, minor, theta, h, w);
        if pixels.len() < MIN_BLOB_AREA {
            continue;
        }
        // only the anchor may be adjacent, so touching clusters stay pairs
        let partner = anchor.map_or(0, |a| a as u32 + 1);
        let clash = pixels.iter().any(|&p| {
            labels.labels()[p] != 0
                || neighbors(p / w, p % w, h, w, Connectivity::Eight).any(|(y, x)| {
                    let l = labels.get(y, x);
                    l != 0 && l != partner
                })
        });
        if clash {
            continue;
        }
        if let Some(a) = anchor {
            blobs[a].paired = true;
        }
        let id = blobs.len() as u32 + 1;
        for &p in &pixels {
            labels.labels_mut()[p] = id;
        }
        blobs.push(Blob {
            cy,
            cx,
            major,
            minor,
            pixels,
            paired: anchor.is_some(),
        });
    }

    let mut image = vec![st.background; h * w];
    for b in &blobs {
        let level = rng.random_range(st.nucleus.0..=st.nucleus.1);
        for &p in &b.pixels {
            image[p] = level;
        }
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, cfg.noise_sigma).expect("sigma validated");
        for v in image.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let image = Tensor::new(vec![1, h, w], image).expect("canvas dims are positive");
    Ok(Scene::from_instances(cfg.seed, image, labels))
}

/// Squared distance of every index to the nearest finite entry of `f`, where
/// `f` holds squared base costs (lower envelope of parabolas).
fn squared_distance_1d(f: &[f64], out: &mut [f64]) {
    let mut sites: Vec<usize> = Vec::with_capacity(f.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(f.len());
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        while let Some(&p) = sites.last() {
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= *bounds.last().expect("bounds track sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
        if sites.is_empty() {
            sites.push(q);
            bounds.push(f64::NEG_INFINITY);
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < x as f64 {
            k += 1;
        }
        let d = x as f64 - sites[k] as f64;
        *o = d * d + f[sites[k]];
    }
}

/// Exact squared Euclidean distance transform on a `h x w` grid to the
/// pixels where `feature` is true.
fn squared_edt(feature: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = feature
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        squared_distance_1d(&col, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        squared_distance_1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

/// Per-instance Euclidean distance to the nearest in-image pixel carrying a
/// different label, divided by that instance's maximum. Background is 0.
/// An instance with no other pixel in the image gets 1 everywhere.
pub fn make_distance_target(instances: &LabelMap) -> Tensor {
    let (h, w) = instances.dims();
    let labels = instances.labels();
    let mut out = vec![0.0f32; h * w];
    let max_label = instances.max_label() as usize;
    // bounding boxes: (y0, y1, x0, x1) inclusive
    let mut boxes = vec![(usize::MAX, 0usize, usize::MAX, 0usize); max_label + 1];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x] as usize;
            if l > 0 {
                let b = &mut boxes[l];
                b.0 = b.0.min(y);
                b.1 = b.1.max(y);
                b.2 = b.2.min(x);
                b.3 = b.3.max(x);
            }
        }
    }
    for (label, &(y0, y1, x0, x1)) in boxes.iter().enumerate().skip(1) {
        if y0 == usize::MAX {
            continue;
        }
        // the nearest foreign pixel always lies within the box grown by one
        let (wy0, wy1) = (y0.saturating_sub(1), (y1 + 1).min(h - 1));
        let (wx0, wx1) = (x0.saturating_sub(1), (x1 + 1).min(w - 1));
        let (wh, ww) = (wy1 - wy0 + 1, wx1 - wx0 + 1);
        let mut feature = Vec::with_capacity(wh * ww);
        for y in wy0..=wy1 {
            for x in wx0..=wx1 {
                feature.push(labels[y * w + x] as usize != label);
            }
        }
        let owned: Vec<usize> = (0..wh * ww).filter(|&i| !feature[i]).collect();
        if owned.len() == wh * ww && wh == h && ww == w {
            for &i in &owned {
                out[(wy0 + i / ww) * w + wx0 + i % ww] = 1.0;
            }
            continue;
        }
        let d2 = squared_edt(&feature, wh, ww);
        let peak = owned.iter().map(|&i| d2[i]).fold(0.0f64, f64::max).sqrt();
        for &i in &owned {
            out[(wy0 + i / ww) * w + wx0 + i % ww] = (d2[i].sqrt() / peak) as f32;
        }
    }
    Tensor::new(vec![1, h, w], out).expect("label map dims are positive")
}

/// Train/test split of generated scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Per-scene seeds drawn from `master`, all distinct.
pub fn scene_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    let mut seen = HashSet::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    while seeds.len() < count {
        let s: u64 = rng.random();
        if seen.insert(s) {
            seeds.push(s);
        }
    }
    seeds
}

/// Number of training scenes for a `split` fraction; both parts stay non-empty.
pub fn train_count(count: usize, split: f64) -> usize {
    ((count as f64 * split).round() as usize).clamp(1, count.saturating_sub(1).max(1))
}

/// Generates `count` scenes from `template` (its `seed` is the master seed)
/// and splits the first `round(count * split)` into the training set.
pub fn make_dataset(
    template: &SceneConfig,
    count: usize,
    split: f64,
) -> Result<Dataset, SynthError> {
    if count < 2 {
        return Err(SynthError::Config(
            "a dataset needs at least two scenes".into(),
        ));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(SynthError::Config(format!(
            "split {split} must lie in (0, 1)"
        )));
    }
    let n_train = train_count(count, split);
    let mut scenes = scene_seeds(template.seed, count)
        .into_iter()
        .map(|seed| {
            generate_scene(&SceneConfig {
                seed,
                ..template.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let test = scenes.split_off(n_train);
    Ok(Dataset {
        train: scenes,
        test,
    })
}
