use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use spnet_core::data::{
    block_split, extract_all, find_partner, list_images, load_dataset, overlap_tile_predict,
    read_gray, read_mask, read_probability_map, save_dataset, synth_generate, write_mask,
    write_probability_map, FULL_SCALE_PATCHES_PER_IMAGE,
};
use spnet_core::eval::{evaluate_all, write_reports, EvalItem};
use spnet_core::loss::{CeMode, LossWeights};
use spnet_core::model::{load_checkpoint, save_checkpoint};
use spnet_core::train::{train, write_log_csv, TrainConfig};
use spnet_core::verify::{end_to_end_gradcheck, GradcheckOptions};
use spnet_core::{build_residual_pyramid, BinaryMask, SpnetConfig};

use crate::manifest::{hash_file, manifest_path, RunManifest};
use crate::{EvalArgs, Failure, GradcheckArgs, PredictArgs, PyramidArgs, SynthArgs, TrainArgs};

const DEFAULT_PATCHES_PER_IMAGE: usize = 1000;

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn require_exists(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

pub(crate) fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let samples = synth_generate(args.seed, args.size, args.count)?;
    save_dataset(&args.out, &samples)?;
    info!(
        "wrote {} synthetic samples to {}",
        samples.len(),
        args.out.display()
    );
    let mut m = RunManifest::new("synth", args);
    m.outputs.push(args.out.clone());
    m.write(&manifest_path(&args.out))
}

/// Training settings after applying the preset and every explicit flag.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedTrain {
    pub config: TrainConfig,
    pub patches_per_image: usize,
    pub val_fraction: f64,
    pub block_size: usize,
}

/// Resolves `train` flags against the default or full-scale preset.
pub fn resolve_train(args: &TrainArgs) -> Result<ResolvedTrain, Failure> {
    let (mut config, preset_patches) = if args.full_scale {
        (TrainConfig::full_scale(), FULL_SCALE_PATCHES_PER_IMAGE)
    } else {
        (TrainConfig::default(), DEFAULT_PATCHES_PER_IMAGE)
    };
    let model = &mut config.model;
    if let Some(c) = args.base_channels {
        model.base_channels = c;
    }
    model.share_decoder = !args.no_share;
    model.side_output = args.side_output.into();
    model.use_batchnorm = !args.no_batchnorm;
    model.validate()?;
    let levels = model.pyramid_levels;

    let mut loss = LossWeights::pyramid(levels);
    if let Some(l) = &args.lambdas {
        if l.len() != levels + 1 {
            return Err(Failure::Usage(format!(
                "--lambda takes {} values (l0..l{levels}), got {}",
                levels + 1,
                l.len()
            )));
        }
        loss.lambdas = l.clone();
    }
    if let Some(terms) = &args.loss_terms {
        loss.global = false;
        loss.local = vec![false; levels + 1];
        for t in terms {
            match t.trim() {
                "g" => loss.global = true,
                s => {
                    let k = s
                        .strip_prefix('l')
                        .and_then(|k| k.parse::<usize>().ok())
                        .filter(|k| *k <= levels)
                        .ok_or_else(|| {
                            Failure::Usage(format!(
                                "unknown loss term {s:?}; expected g or l0..l{levels}"
                            ))
                        })?;
                    loss.local[k] = true;
                }
            }
        }
        if !loss.global && !loss.local.iter().any(|b| *b) {
            return Err(Failure::Usage("--loss-terms selects no terms".into()));
        }
    }
    if args.positive_only_ce {
        loss.ce_mode = CeMode::PositiveOnly;
    }
    loss.validate()?;
    config.loss = loss;

    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.iterations = args.iterations;
    config.eta0 = args.lr;
    config.val_every = args.val_every;
    config.val_batches = args.val_batches;
    config.seed = args.seed;
    Ok(ResolvedTrain {
        config,
        patches_per_image: args.patches_per_image.unwrap_or(preset_patches),
        val_fraction: args.val_fraction,
        block_size: args.block_size,
    })
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    data: &'a Path,
    out: &'a Path,
    color: crate::ColorArg,
    resolved: &'a ResolvedTrain,
}

pub(crate) fn train_cmd(args: &TrainArgs) -> Result<(), Failure> {
    let plan = resolve_train(args)?;
    require_exists(&args.data)?;
    let samples = load_dataset(&args.data, args.color.into())?;
    if samples.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no images under images/",
            args.data.display()
        )));
    }
    let set = extract_all(&samples, plan.patches_per_image, plan.config.seed);
    let (train_set, val_set) =
        block_split(set, plan.val_fraction, plan.block_size, plan.config.seed)?;
    info!(
        "{} training and {} validation patches",
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&train_set, &val_set, &plan.config)?;

    create_dir(&args.out)?;
    let best = args.out.join("best.spnt");
    let last = args.out.join("last.spnt");
    let log_path = args.out.join("train_log.csv");
    save_checkpoint(&outcome.best, &best)?;
    save_checkpoint(&outcome.last, &last)?;
    let f = File::create(&log_path)
        .map_err(|e| Failure::Data(format!("{}: {e}", log_path.display())))?;
    write_log_csv(&outcome.log, BufWriter::new(f))?;

    let settings = TrainSettings {
        data: &args.data,
        out: &args.out,
        color: args.color,
        resolved: &plan,
    };
    let mut m = RunManifest::new("train", settings);
    m.inputs.push(args.data.clone());
    m.outputs = vec![best.clone(), last, log_path];
    m.checkpoint_hash = Some(hash_file(&best)?);
    m.write(&manifest_path(&args.out))?;

    if let Some(d) = outcome.diverged {
        return Err(Failure::Numeric(format!(
            "training diverged at iteration {}: {}; checkpoints written",
            d.iteration, d.reason
        )));
    }
    println!(
        "best validation loss {:.6} at iteration {}",
        outcome.best_val_loss, outcome.best_iteration
    );
    Ok(())
}

/// Images to process: a single file, a directory of images, or a dataset
/// root whose `images/` holds them. Keys are image stems.
fn image_inputs(path: &Path) -> Result<Option<BTreeMap<String, PathBuf>>, Failure> {
    require_exists(path)?;
    if path.is_file() {
        return Ok(None);
    }
    let nested = path.join("images");
    let dir = if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    };
    let files = list_images(&dir)?;
    if files.is_empty() {
        return Err(Failure::Data(format!("{}: no images found", dir.display())));
    }
    Ok(Some(files))
}

pub(crate) fn predict(args: &PredictArgs) -> Result<(), Failure> {
    require_exists(&args.ckpt)?;
    let params = load_checkpoint(&args.ckpt)?;
    if params.config().in_channels != 1 {
        return Err(Failure::Data(format!(
            "{}: checkpoint expects {} input channels, images are single-channel",
            args.ckpt.display(),
            params.config().in_channels
        )));
    }
    let jobs: Vec<(PathBuf, PathBuf)> = match image_inputs(&args.image)? {
        None => vec![(args.image.clone(), args.out.clone())],
        Some(files) => {
            create_dir(&args.out)?;
            files
                .into_iter()
                .map(|(stem, p)| (p, args.out.join(format!("{stem}.pgm"))))
                .collect()
        }
    };
    let mut m = RunManifest::new("predict", args);
    for (input, output) in jobs {
        let image = read_gray(&input, args.color.into())?;
        let probs = overlap_tile_predict(&params, &image)?;
        let s = probs.shape();
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_probability_map(probs.data(), s.h, s.w, &output)?;
        info!("{} -> {}", input.display(), output.display());
        m.inputs.push(input);
        m.outputs.push(output);
    }
    m.checkpoint_hash = Some(hash_file(&args.ckpt)?);
    m.write(&manifest_path(&args.out))
}

/// Masks by stem from a file, a directory of masks or a dataset-root
/// subdirectory.
fn mask_inputs(path: &Path, sub: &str) -> Result<BTreeMap<String, PathBuf>, Failure> {
    if path.is_file() {
        let stem = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        return Ok(BTreeMap::from([(stem, path.to_path_buf())]));
    }
    let nested = path.join(sub);
    Ok(list_images(if nested.is_dir() { &nested } else { path })?)
}

struct Loaded {
    id: String,
    probs: Vec<f32>,
    gt: BinaryMask,
    fov: Option<BinaryMask>,
}

pub(crate) fn eval(args: &EvalArgs) -> Result<(), Failure> {
    require_exists(&args.pred)?;
    require_exists(&args.gt)?;
    let preds = mask_inputs(&args.pred, "")?;
    if preds.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no probability maps found",
            args.pred.display()
        )));
    }
    let single = args.pred.is_file();
    let gts = mask_inputs(&args.gt, "labels")?;
    let fovs = match &args.fov {
        Some(f) => {
            require_exists(f)?;
            mask_inputs(f, "masks")?
        }
        None if args.gt.is_dir() && args.gt.join("masks").is_dir() => {
            list_images(&args.gt.join("masks"))?
        }
        None => BTreeMap::new(),
    };
    let partner =
        |files: &BTreeMap<String, PathBuf>, stem: &str| -> Result<Option<PathBuf>, Failure> {
            if single && files.len() == 1 {
                return Ok(files.values().next().cloned());
            }
            Ok(find_partner(files, stem)?.cloned())
        };

    let mut loaded = Vec::with_capacity(preds.len());
    let mut m = RunManifest::new("eval", args);
    for (stem, path) in &preds {
        let (probs, h, w) = read_probability_map(path)?;
        let gt_path = partner(&gts, stem)?.ok_or_else(|| {
            Failure::Data(format!(
                "{stem}: no ground truth under {}",
                args.gt.display()
            ))
        })?;
        let gt = read_mask(&gt_path)?;
        if gt.dims() != (h, w) {
            return Err(Failure::Data(format!(
                "{stem}: prediction is {h}x{w} but ground truth is {}x{}",
                gt.height(),
                gt.width()
            )));
        }
        let fov = match partner(&fovs, stem)? {
            Some(p) => {
                let f = read_mask(&p)?;
                m.inputs.push(p);
                Some(f)
            }
            None => None,
        };
        m.inputs.push(path.clone());
        m.inputs.push(gt_path);
        loaded.push(Loaded {
            id: stem.clone(),
            probs,
            gt,
            fov,
        });
    }
    let items: Vec<EvalItem<'_>> = loaded
        .iter()
        .map(|l| EvalItem {
            id: &l.id,
            probs: &l.probs,
            gt: &l.gt,
            fov: l.fov.as_ref(),
        })
        .collect();
    let (summary, curves) = evaluate_all(&items, args.threshold, &args.regions)?;
    create_dir(&args.out)?;
    write_reports(&summary, &curves, &args.out)?;
    for name in ["metrics.json", "roc.csv", "pr.csv"] {
        m.outputs.push(args.out.join(name));
    }
    m.write(&manifest_path(&args.out))?;
    for r in &summary.mean {
        println!(
            "{:<7} sen {} spe {} acc {} auc {}",
            r.region.to_string(),
            fmt_opt(r.sen),
            fmt_opt(r.spe),
            fmt_opt(r.acc),
            fmt_opt(r.auc)
        );
    }
    println!("pooled auc {}", fmt_opt(summary.pooled_auc));
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub(crate) fn pyramid(args: &PyramidArgs) -> Result<(), Failure> {
    require_exists(&args.gt)?;
    let gt = read_mask(&args.gt)?;
    let pyr = build_residual_pyramid(&gt, args.levels)?;
    create_dir(&args.out)?;
    let mut m = RunManifest::new("pyramid", args);
    m.inputs.push(args.gt.clone());
    for (k, level) in pyr.levels().iter().enumerate() {
        for (prefix, mask) in [
            ("g", &level.label),
            ("a", &level.coverage),
            ("r", &level.residual),
        ] {
            let path = args.out.join(format!("{prefix}{k}.pgm"));
            write_mask(mask, &path)?;
            m.outputs.push(path);
        }
    }
    m.write(&manifest_path(&args.out))
}

pub(crate) fn gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let opts = GradcheckOptions {
        seed: args.seed,
        eps: args.eps,
        max_per_tensor: (args.per_tensor > 0).then_some(args.per_tensor),
        ..GradcheckOptions::default()
    };
    let report = end_to_end_gradcheck(&SpnetConfig::toy(), &opts)?;
    println!(
        "max relative error {:.3e} in {} ({} coordinates checked, {} skipped)",
        report.max_rel_error, report.worst, report.checked, report.skipped
    );
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let path = dir.join("report.json");
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| Failure::Data(e.to_string()))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let mut m = RunManifest::new("gradcheck", args);
        m.outputs.push(path);
        m.write(&manifest_path(dir))?;
    }
    if report.max_rel_error < args.tolerance {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "max relative error {:.3e} exceeds {:.0e}",
            report.max_rel_error, args.tolerance
        )))
    }
}
