//! Scene directories written by `synth` and read by the other subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use nucprune::io::{load_floatmap, load_labelmap, save_floatmap, save_labelmap};
use nucprune::synth::{Scene, SceneDistribution};
use serde::{Deserialize, Serialize};

use crate::error::invalid;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub dir: String,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub distribution: SceneDistribution,
    pub size: usize,
    pub master_seed: u64,
    pub train_fraction: f64,
    pub scenes: Vec<SceneEntry>,
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_floatmap(&dir.join("image.pfm"), &scene.image)?;
    save_labelmap(&dir.join("instances.pgm"), &scene.instances)?;
    save_floatmap(&dir.join("binary.pfm"), &scene.binary)?;
    save_floatmap(&dir.join("distance.pfm"), &scene.distance)?;
    Ok(())
}

/// Loads the scenes of `split`; targets are rebuilt from `instances.pgm`.
pub fn load_scenes(data: &Path, split: Split) -> Result<Vec<Scene>> {
    let manifest_path = data.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(invalid(format!(
            "{} is not a scene directory (no {MANIFEST})",
            data.display()
        )));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let mut scenes = Vec::new();
    for entry in manifest
        .scenes
        .iter()
        .filter(|e| split == Split::All || e.split == split)
    {
        let dir = data.join(&entry.dir);
        let image = load_floatmap(&dir.join("image.pfm"))
            .with_context(|| format!("scene {}", entry.dir))?;
        let instances = load_labelmap(&dir.join("instances.pgm"))
            .with_context(|| format!("scene {}", entry.dir))?;
        if image.shape()[1..] != [instances.height(), instances.width()] {
            return Err(invalid(format!(
                "scene {}: image and instances differ in size",
                entry.dir
            )));
        }
        scenes.push(Scene::from_instances(entry.seed, image, instances));
    }
    if scenes.is_empty() {
        return Err(invalid(format!(
            "{} has no {split:?} scenes",
            data.display()
        )));
    }
    Ok(scenes)
}

/// Fails unless `path` is absent, an empty directory, or `force` is set.
pub fn ensure_fresh_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        let empty = path.is_dir() && fs::read_dir(path)?.next().is_none();
        if !empty {
            return Err(invalid(format!(
                "{} exists and is not empty; pass --force",
                path.display()
            )));
        }
    }
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Fails if any of `paths` exists and `force` is not set.
pub fn ensure_fresh_files(paths: &[PathBuf], force: bool) -> Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(invalid(format!("{} exists; pass --force", p.display())));
        }
    }
    for p in paths {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}
