use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nucprune::autonet::{build_toy_network, train, TrainConfig};
use nucprune::experiment::{evaluate_pair, regression_mse, samples, segmentation_dice, Branch};
use nucprune::io::{load_floatmap, load_labelmap, save_floatmap, save_labelmap, write_results_csv};
use nucprune::metrics::{self, MetricsReport};
use nucprune::pipeline::{merge, MergeConfig};
use nucprune::pruner::{
    iter_mag_prune_with, iteration_count, theoretical_speedup, PruneConfig, PruneError, PruneMethod,
};
use nucprune::synth::{generate_scene, scene_seeds, train_count, SceneConfig, SceneDistribution};
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, MergeArgs, PredictArgs, ReportArgs, SweepArgs, SynthArgs, TrainArgs};
use crate::data::{
    ensure_fresh_dir, ensure_fresh_files, load_scenes, read_json, scene_dir_name, write_json,
    write_scene, Manifest, SceneEntry, Split, MANIFEST,
};
use crate::error::{invalid, PartialSweep};
use crate::model::{load_model, meta_path, save_model, BranchArg, ModelMeta};

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    if args.size < 8 || !args.size.is_multiple_of(4) {
        return Err(invalid(format!(
            "--size {} must be a multiple of 4 and at least 8",
            args.size
        )));
    }
    if !(0.0..=1.0).contains(&args.split) {
        return Err(invalid(format!(
            "--split {} must lie in [0, 1]",
            args.split
        )));
    }
    ensure_fresh_dir(&args.out, args.force)?;
    if args.force {
        remove_stale_scenes(&args.out)?;
    }
    let n_train = match args.split {
        s if s <= 0.0 => 0,
        s if s >= 1.0 => args.count,
        s => train_count(args.count, s),
    };
    let distribution: SceneDistribution = args.dist.into();
    let mut entries = Vec::with_capacity(args.count);
    for (i, seed) in scene_seeds(args.seed, args.count).into_iter().enumerate() {
        let cfg = SceneConfig::preset(distribution, args.size, args.size, seed);
        let scene = generate_scene(&cfg).with_context(|| format!("scene {i} (seed {seed})"))?;
        let dir = scene_dir_name(i);
        write_scene(&args.out.join(&dir), &scene)?;
        entries.push(SceneEntry {
            dir,
            seed,
            split: if i < n_train {
                Split::Train
            } else {
                Split::Test
            },
        });
    }
    let manifest = Manifest {
        distribution,
        size: args.size,
        master_seed: args.seed,
        train_fraction: args.split,
        scenes: entries,
    };
    write_json(&args.out.join(MANIFEST), &manifest)?;
    println!(
        "wrote {} {distribution} scenes ({n_train} train) to {}",
        args.count,
        args.out.display()
    );
    Ok(())
}

/// Removes scene directories and the manifest left by an earlier run.
fn remove_stale_scenes(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("scene_") && entry.file_type()?.is_dir() {
            fs::remove_dir_all(entry.path())?;
        } else if name == MANIFEST {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

fn train_config(
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
    no_augment: bool,
) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        initial_lr: lr,
        batch_size: batch,
        epochs,
        seed,
        augment_flips: !no_augment,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("writing to a string");
    }
    out
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = train_config(args.epochs, args.lr, args.batch, args.seed, args.no_augment)?;
    let loss_path = args.out.with_extension("loss.csv");
    ensure_fresh_files(
        &[args.out.clone(), meta_path(&args.out), loss_path.clone()],
        args.force,
    )?;
    let scenes = load_scenes(&args.data, args.split)?;
    let head = args.branch.head();
    let mut net = build_toy_network(head, args.seed);
    let history = train(&mut net, &samples(&scenes, head), &cfg)?;
    let meta = ModelMeta {
        branch: args.branch,
        architecture: net.architecture(),
        compression_ratio: 1,
        method: None,
        seed: args.seed,
    };
    save_model(&args.out, &net, &meta)?;
    fs::write(&loss_path, loss_csv(&history))
        .with_context(|| format!("writing {}", loss_path.display()))?;
    let quality = match args.branch {
        BranchArg::Seg => format!("training Dice {:.4}", segmentation_dice(&net, &scenes)?),
        BranchArg::Reg => format!("training MSE {:.6}", regression_mse(&net, &scenes)?),
    };
    println!(
        "trained {} branch on {} scenes for {} epochs: final loss {:.6}, {quality}",
        args.branch.as_str(),
        scenes.len(),
        history.len(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Progress record of one (branch, method) sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub branch: BranchArg,
    pub method: PruneMethod,
    pub max_cr: u64,
    pub retrain_epochs: usize,
    pub completed: Vec<u64>,
    pub stopped: Option<String>,
}

pub const SWEEP_RECORD: &str = "sweep.json";
pub const BASELINE: &str = "baseline.prnw";

pub fn checkpoint_name(cr: u64) -> String {
    format!("cr_{cr:04}.prnw")
}

pub fn prune_sweep(args: &SweepArgs) -> Result<()> {
    if args.max_cr < 2 {
        return Err(invalid(format!(
            "--max-cr {} must be at least 2",
            args.max_cr
        )));
    }
    iteration_count(args.max_cr)?;
    let retrain = (args.retrain_epochs > 0)
        .then(|| {
            train_config(
                args.retrain_epochs,
                args.lr,
                args.batch,
                args.seed,
                args.no_augment,
            )
        })
        .transpose()?;
    let (net, meta) = load_model(&args.model, args.branch)?;
    if meta.compression_ratio != 1 {
        return Err(invalid(format!(
            "{} is already pruned (CR {}); sweeps start from a dense model",
            args.model.display(),
            meta.compression_ratio
        )));
    }
    let method: PruneMethod = args.method.into();
    let branch_dir = args.out.join(meta.branch.as_str());
    let dir = branch_dir.join(method.as_str());
    ensure_fresh_dir(&dir, args.force)?;
    if args.force {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_file() {
                fs::remove_file(path)?;
            }
        }
    }
    let scenes = load_scenes(&args.data, args.split)?;
    let input_shape: [usize; 3] = scenes[0]
        .image
        .shape()
        .try_into()
        .expect("scene images are [C, H, W]");
    save_model(&branch_dir.join(BASELINE), &net, &meta)?;

    let cfg = PruneConfig {
        method,
        compression_ratio: args.max_cr,
        retrain,
    };
    let mut record = SweepRecord {
        branch: meta.branch,
        method,
        max_cr: args.max_cr,
        retrain_epochs: args.retrain_epochs,
        completed: Vec::new(),
        stopped: None,
    };
    let mut write_error = None;
    let result = iter_mag_prune_with(&net, &cfg, &samples(&scenes, meta.branch.head()), |cp| {
        if write_error.is_some() {
            return;
        }
        let written = (|| -> Result<()> {
            let path = dir.join(checkpoint_name(cp.compression_ratio));
            let cp_meta = ModelMeta {
                compression_ratio: cp.compression_ratio,
                method: Some(method),
                ..meta.clone()
            };
            save_model(&path, &cp.network, &cp_meta)?;
            write_json(&path.with_extension("sparsity.json"), &cp.sparsity)?;
            let speedup = theoretical_speedup(&cp.network, cp.network.masks(), input_shape)?;
            write_json(&path.with_extension("speedup.json"), &speedup)?;
            println!(
                "CR {:>3}: sparsity {:.4}, theoretical speedup {:.4}",
                cp.compression_ratio, cp.sparsity.global_sparsity, speedup.speedup
            );
            Ok(())
        })();
        match written {
            Ok(()) => record.completed.push(cp.compression_ratio),
            Err(e) => write_error = Some(e),
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    match result {
        Ok(()) => {
            write_json(&dir.join(SWEEP_RECORD), &record)?;
            Ok(())
        }
        Err(e @ PruneError::ConnectivityLoss { .. }) => {
            let failed_cr = record.completed.last().map_or(2, |c| c * 2);
            record.stopped = Some(e.to_string());
            write_json(&dir.join(SWEEP_RECORD), &record)?;
            Err(anyhow::Error::new(e).context(PartialSweep {
                completed: record.completed,
                failed_cr,
            }))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    ensure_fresh_files(std::slice::from_ref(&args.out), args.force)?;
    let (net, _) = load_model(&args.model, args.branch)?;
    let image =
        load_floatmap(&args.image).with_context(|| format!("loading {}", args.image.display()))?;
    let out = net.forward(&image)?;
    save_floatmap(&args.out, &out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

pub fn merge_cmd(args: &MergeArgs) -> Result<()> {
    ensure_fresh_files(std::slice::from_ref(&args.out), args.force)?;
    let seg =
        load_floatmap(&args.seg).with_context(|| format!("loading {}", args.seg.display()))?;
    let dist =
        load_floatmap(&args.dist).with_context(|| format!("loading {}", args.dist.display()))?;
    if seg.shape() != dist.shape() {
        return Err(invalid(format!(
            "segmentation map {:?} and distance map {:?} differ in shape",
            seg.shape(),
            dist.shape()
        )));
    }
    let cfg = MergeConfig {
        seg_threshold: args.threshold,
        min_area: args.min_area,
        sigma_scale: args.sigma_scale,
        ..Default::default()
    };
    let labels = merge(&seg, &dist, &cfg)?;
    save_labelmap(&args.out, &labels).with_context(|| format!("writing {}", args.out.display()))?;
    println!("{} instances", labels.instance_count());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    ensure_fresh_files(std::slice::from_ref(&args.out), args.force)?;
    let pred =
        load_labelmap(&args.pred).with_context(|| format!("loading {}", args.pred.display()))?;
    let gt = load_labelmap(&args.gt).with_context(|| format!("loading {}", args.gt.display()))?;
    if pred.dims() != gt.dims() {
        return Err(invalid(format!(
            "prediction {:?} and ground truth {:?} differ in size",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut row = MetricsReport::new(&args.run_id, Branch::Instance.as_str(), "none", 1);
    row.dice = Some(metrics::dice(&pred.foreground(), &gt.foreground())?);
    row.aji = Some(metrics::aji(&gt, &pred)?);
    row.pq = Some(metrics::pq(&gt, &pred, 0.5)?.pq);
    write_results_csv(&args.out, std::slice::from_ref(&row))?;
    println!(
        "dice {:.4}, aji {:.4}, pq {:.4}",
        row.dice.unwrap_or_default(),
        row.aji.unwrap_or_default(),
        row.pq.unwrap_or_default()
    );
    Ok(())
}

/// Completed CRs of one (branch, method) sweep; `None` if it never ran.
fn sweep_crs(dir: &Path) -> Result<Option<Vec<u64>>> {
    let path = dir.join(SWEEP_RECORD);
    if !path.is_file() {
        return Ok(None);
    }
    let record: SweepRecord = read_json(&path)?;
    Ok(Some(record.completed))
}

fn require(path: PathBuf, missing: &mut Vec<String>) -> PathBuf {
    if !path.is_file() {
        missing.push(path.display().to_string());
    }
    path
}

pub fn report(args: &ReportArgs) -> Result<()> {
    ensure_fresh_files(std::slice::from_ref(&args.out), args.force)?;
    let run_id = match &args.run_id {
        Some(id) => id.clone(),
        None => args
            .sweep
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
    };
    let seg_dir = args.sweep.join(BranchArg::Seg.as_str());
    let reg_dir = args.sweep.join(BranchArg::Reg.as_str());

    let mut missing = Vec::new();
    let seg_base = require(seg_dir.join(BASELINE), &mut missing);
    let reg_base = require(reg_dir.join(BASELINE), &mut missing);
    let mut pairs: Vec<(PruneMethod, u64, PathBuf, PathBuf)> = Vec::new();
    for method in [PruneMethod::LayerWise, PruneMethod::NetworkWide] {
        let seg_crs = sweep_crs(&seg_dir.join(method.as_str()))?;
        let reg_crs = sweep_crs(&reg_dir.join(method.as_str()))?;
        if seg_crs.is_none() && reg_crs.is_none() {
            continue;
        }
        let mut crs: Vec<u64> = seg_crs.iter().chain(&reg_crs).flatten().copied().collect();
        crs.sort_unstable();
        crs.dedup();
        for cr in crs {
            let seg = require(
                seg_dir.join(method.as_str()).join(checkpoint_name(cr)),
                &mut missing,
            );
            let reg = require(
                reg_dir.join(method.as_str()).join(checkpoint_name(cr)),
                &mut missing,
            );
            let in_both = [&seg_crs, &reg_crs]
                .iter()
                .all(|c| c.as_ref().is_some_and(|c| c.contains(&cr)));
            if !in_both {
                missing.push(format!(
                    "{method} CR {cr} is missing from one branch's sweep"
                ));
            }
            pairs.push((method, cr, seg, reg));
        }
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(invalid(format!(
            "missing checkpoints:\n  {}",
            missing.join("\n  ")
        )));
    }

    let scenes = load_scenes(&args.data, args.split)?;
    let merge_cfg = MergeConfig::default();
    let (seg, _) = load_model(&seg_base, Some(BranchArg::Seg))?;
    let (reg, _) = load_model(&reg_base, Some(BranchArg::Reg))?;
    let mut rows = evaluate_pair(&run_id, "none", 1, &seg, &reg, &scenes, &merge_cfg)?;
    for (method, cr, seg_path, reg_path) in &pairs {
        let (seg, _) = load_model(seg_path, Some(BranchArg::Seg))?;
        let (reg, _) = load_model(reg_path, Some(BranchArg::Reg))?;
        rows.extend(evaluate_pair(
            &run_id,
            method.as_str(),
            *cr,
            &seg,
            &reg,
            &scenes,
            &merge_cfg,
        )?);
    }
    write_results_csv(&args.out, &rows)?;
    println!(
        "wrote {} rows over {} scenes to {}",
        rows.len(),
        scenes.len(),
        args.out.display()
    );
    Ok(())
}
