use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::info;

use fcnt_core::data::{
    build_dataset, ingest_real_dataset, DatasetConfig, DatasetFiles, IngestOptions,
};
use fcnt_core::experiment::{run_experiment, ExperimentId, ExperimentPreset};
use fcnt_core::imageio::{read_image, read_labels, write_labels, write_overlay};
use fcnt_core::manifest::Manifest;
use fcnt_core::metrics::{evaluate_suite, Matching, DEFAULT_THRESHOLD};
use fcnt_core::model::NetworkSpec;
use fcnt_core::pipeline::{segment, segment_unsupervised, PresegSource, UnsupConfig};
use fcnt_core::preseg::{load_external_preseg, Features, PresegConfig};
use fcnt_core::train::{train_supervised, write_loss_csv, TrainConfig, TrainSample};
use fcnt_core::{build_fcnt, LabelMap, NetworkState};

use crate::runlog::{differing, finish, out_dir, recorded_argv, RUN_MANIFEST};
use crate::{parse_experiment, Command, Mismatch, OutArg, Usage};

pub fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    let name = command.name();
    match command {
        Command::Generate(a) => generate(a, name, &argv),
        Command::Ingest(a) => ingest(a, name, &argv),
        Command::Train(a) => train(a, name, &argv),
        Command::Segment(a) => segment_cmd(a, name, &argv),
        Command::Unsup(a) => unsup(a, name, &argv),
        Command::Eval(a) => eval(a, name, &argv),
        Command::Run(a) => run(a, name, &argv),
        Command::Rerun(a) => rerun(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn prepare_out(out: OutArg, command: &str) -> Result<PathBuf> {
    let dir = out_dir(out.out, command);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// `A..B`, `A-B` or a single number.
fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = if s.contains("..") {
        s.splitn(2, "..").collect()
    } else {
        s.splitn(2, '-').collect()
    };
    let num = |t: &str| {
        t.trim()
            .trim_start_matches('=')
            .parse::<usize>()
            .map_err(|e| format!("{t:?}: {e}"))
    };
    match parts.as_slice() {
        [one] => num(one).map(|v| (v, v)),
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(format!("expected a range like 2..5, got {s:?}")),
    }
}

fn parse_network(s: &str) -> Result<fn(usize) -> NetworkSpec, String> {
    match s {
        "compact" => Ok(NetworkSpec::compact),
        "desk" => Ok(NetworkSpec::desk),
        "reduced" => Ok(NetworkSpec::reduced),
        _ => Err(format!(
            "unknown network {s:?}; expected compact, desk or reduced"
        )),
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of texture classes.
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Single-texture training images per class.
    #[arg(long, default_value_t = 8)]
    train_per_class: usize,
    /// Number of test mosaics.
    #[arg(long, default_value_t = 20)]
    test_mosaics: usize,
    /// Regions per mosaic, e.g. `2..5`.
    #[arg(long, default_value = "2..5", value_parser = parse_range)]
    regions: (usize, usize),
    /// Side of the training images.
    #[arg(long, default_value_t = 128)]
    train_size: usize,
    /// Side of the test mosaics.
    #[arg(long, default_value_t = 256)]
    test_size: usize,
    /// Dataset seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Permit region counts outside 2 to 5.
    #[arg(long)]
    allow_nonpaper: bool,
    #[command(flatten)]
    out: OutArg,
}

fn generate(a: GenerateArgs, name: &str, argv: &[String]) -> Result<()> {
    let config = DatasetConfig {
        classes: a.classes,
        train_per_class: a.train_per_class,
        test_mosaics: a.test_mosaics,
        min_regions: a.regions.0,
        max_regions: a.regions.1,
        train_size: a.train_size,
        test_size: a.test_size,
        seed: a.seed,
        allow_nonpaper: a.allow_nonpaper,
    };
    config.validate()?;
    let dir = prepare_out(a.out, name)?;
    let m = build_dataset(&config, &dir)?;
    info!(
        "wrote {} training images and {} mosaics to {}",
        m.get("train.count").unwrap_or("0"),
        m.get("test.count").unwrap_or("0"),
        dir.display()
    );
    finish(&dir, argv, Manifest::new())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory holding one subdirectory of images per class.
    #[arg(long)]
    root: PathBuf,
    /// Centre crop side; 0 keeps whole images.
    #[arg(long, default_value_t = 288)]
    crop: usize,
    #[command(flatten)]
    out: OutArg,
}

fn ingest(a: IngestArgs, name: &str, argv: &[String]) -> Result<()> {
    if !a.root.is_dir() {
        return Err(usage(format!("{} is not a directory", a.root.display())));
    }
    let dir = prepare_out(a.out, name)?;
    let opts = IngestOptions {
        center_crop: (a.crop > 0).then_some(a.crop),
        ..IngestOptions::default()
    };
    let r = ingest_real_dataset(&a.root, &opts, &dir)?;
    for (p, why) in &r.skipped {
        log::warn!("skipped {}: {why}", p.display());
    }
    info!(
        "ingested {} images",
        r.manifest.get("train.count").unwrap_or("0")
    );
    finish(&dir, argv, Manifest::new())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (holding dataset.txt).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Take the training schedule of an experiment preset (A or B).
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<ExperimentId>,
    /// Training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Side of the square training crops.
    #[arg(long)]
    crop: Option<usize>,
    /// Seed of crop sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of weight initialization.
    #[arg(long)]
    net_seed: Option<u64>,
    /// Network width preset: compact, desk or reduced.
    #[arg(long, default_value = "compact", value_parser = parse_network)]
    network: fn(usize) -> NetworkSpec,
    #[command(flatten)]
    out: OutArg,
}

fn train(a: TrainArgs, name: &str, argv: &[String]) -> Result<()> {
    let data = a.data.ok_or_else(|| usage("--data is required"))?;
    if !data.join(fcnt_core::data::MANIFEST_NAME).is_file() {
        return Err(usage(format!(
            "{} holds no dataset manifest",
            data.display()
        )));
    }
    let preset = ExperimentPreset::new(a.experiment.unwrap_or(ExperimentId::A));
    if a.experiment == Some(ExperimentId::C) {
        return Err(usage(
            "experiment C trains on the test image; use `fcnt unsup` or `fcnt run`",
        ));
    }
    let config = TrainConfig {
        max_iters: a.iters.unwrap_or(preset.train.max_iters),
        lr: a.lr.unwrap_or(preset.train.lr),
        crop_size: a.crop.unwrap_or(preset.train.crop_size),
        seed: a.seed.unwrap_or(preset.train.seed),
        ..preset.train
    };
    config.validate()?;
    let files = DatasetFiles::open(&data)?;
    let samples = files
        .load_train()?
        .into_iter()
        .map(|(img, c)| TrainSample::uniform(img, c))
        .collect::<fcnt_core::Result<Vec<_>>>()?;
    let spec = (a.network)(files.classes);
    let net_seed = a.net_seed.unwrap_or(preset.net_seed);
    let dir = prepare_out(a.out, name)?;
    info!(
        "training {spec} on {} images for {} iterations",
        samples.len(),
        config.max_iters
    );
    let (state, losses) = train_supervised(build_fcnt(&spec, net_seed)?, &samples, &config)?;
    state.save(dir.join("model.ckpt"))?;
    write_loss_csv(dir.join("loss.csv"), &losses)?;
    let mut m = Manifest::new();
    config.write_to(&mut m, "train.");
    m.set("network", spec);
    m.set("net_seed", net_seed);
    finish(&dir, argv, m)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Trained network checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grayscale image to segment.
    #[arg(long)]
    image: PathBuf,
    /// Refine to one region for each of `--classes` classes.
    #[arg(long, requires = "classes")]
    refine: bool,
    /// Number of regions for refinement.
    #[arg(long)]
    classes: Option<usize>,
    /// Also write the score volume as little-endian f64 (classes, rows, columns).
    #[arg(long)]
    scores: bool,
    #[command(flatten)]
    out: OutArg,
}

fn load_net(path: &Path) -> Result<NetworkState> {
    Ok(NetworkState::load(path)?)
}

fn segment_cmd(a: SegmentArgs, name: &str, argv: &[String]) -> Result<()> {
    let state = load_net(&a.checkpoint)?;
    let image = read_image(&a.image, state.spec().input_channels)?;
    let s = segment(&state, &image, a.refine.then_some(a.classes.unwrap_or(0)))?;
    let dir = prepare_out(a.out, name)?;
    write_labels(dir.join("raw.pgm"), &s.raw)?;
    write_labels(dir.join("labels.pgm"), s.labels())?;
    write_overlay(dir.join("overlay.png"), &image, s.labels())?;
    let mut m = Manifest::new();
    if let Some(r) = &s.refined {
        m.set(
            "refine.outcome",
            if r.forced() { "forced" } else { "converged" },
        );
        m.set("refine.iterations", r.iterations);
        m.set("refine.max_rank", r.max_rank);
    }
    if a.scores {
        let t = s.scores.tensor();
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join("scores.f64");
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        m.set(
            "scores.shape",
            format!(
                "{} {} {}",
                s.scores.classes(),
                s.scores.height(),
                s.scores.width()
            ),
        );
    }
    finish(&dir, argv, m)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct UnsupArgs {
    /// Grayscale image to segment.
    #[arg(long)]
    image: PathBuf,
    /// `kmeans` or `file:PATH` (an external label image).
    #[arg(long, default_value = "kmeans")]
    preseg: String,
    /// Pre-trained network; required for k-means and reused as the
    /// fine-tuning trunk unless `--fresh` is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of k-means clusters.
    #[arg(long)]
    classes: Option<usize>,
    /// Fine-tune a freshly initialized network.
    #[arg(long)]
    fresh: bool,
    /// Fine-tuning learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Iterations to keep training after every class is detected.
    #[arg(long, default_value_t = 60)]
    grace: usize,
    /// Hard cap on fine-tuning iterations.
    #[arg(long, default_value_t = 400)]
    cap: usize,
    /// Train on crops of this side instead of the whole image.
    #[arg(long)]
    crop: Option<usize>,
    /// Downsampling before k-means features are computed.
    #[arg(long)]
    downsample: Option<usize>,
    /// Ignore band radius along pre-segmentation borders.
    #[arg(long, default_value_t = 3)]
    radius: usize,
    /// Cluster softmax probabilities instead of raw scores.
    #[arg(long)]
    softmax: bool,
    /// Seed of the new layers.
    #[arg(long)]
    net_seed: Option<u64>,
    /// Seed of the k-means initialization.
    #[arg(long)]
    kmeans_seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

fn unsup(a: UnsupArgs, name: &str, argv: &[String]) -> Result<()> {
    let preset = ExperimentPreset::new(ExperimentId::C);
    let (pc0, uc0) = (
        preset.preseg.expect("C preset"),
        preset.unsup.expect("C preset"),
    );
    let pretrained = a.checkpoint.as_deref().map(load_net).transpose()?;
    let channels = pretrained.as_ref().map_or(1, |s| s.spec().input_channels);
    let image = read_image(&a.image, channels)?;
    let shape = image.shape();
    let source = if a.preseg == "kmeans" {
        if pretrained.is_none() {
            return Err(usage("--preseg kmeans needs --checkpoint"));
        }
        let k = a
            .classes
            .ok_or_else(|| usage("--preseg kmeans needs --classes"))?;
        PresegSource::KMeans(PresegConfig {
            k,
            downsample_factor: a.downsample.unwrap_or(pc0.downsample_factor),
            border_dilation_radius: a.radius,
            features: if a.softmax {
                Features::Softmax
            } else {
                Features::Raw
            },
            seed: a.kmeans_seed.unwrap_or(pc0.seed),
            ..pc0
        })
    } else if let Some(path) = a.preseg.strip_prefix("file:") {
        PresegSource::Labels(load_external_preseg(path, shape.h, shape.w)?)
    } else {
        return Err(usage(format!(
            "--preseg must be kmeans or file:PATH, got {:?}",
            a.preseg
        )));
    };
    let config = UnsupConfig {
        border_radius: a.radius,
        finetune: TrainConfig {
            lr: a.lr.unwrap_or(uc0.finetune.lr),
            crop_size: a.crop.unwrap_or(uc0.finetune.crop_size),
            ..uc0.finetune
        },
        early: fcnt_core::train::EarlyStopConfig {
            grace_iters: a.grace,
            hard_cap: a.cap,
            ..uc0.early
        },
        full_image: a.crop.is_none(),
        reuse_trunk: !a.fresh,
        net_seed: a.net_seed.unwrap_or(uc0.net_seed),
        ..uc0
    };
    config.early.validate()?;
    let o = segment_unsupervised(pretrained.as_ref(), &image, &source, &config)?;
    let dir = prepare_out(a.out, name)?;
    write_labels(dir.join("preseg.pgm"), &o.preseg)?;
    write_labels(dir.join("cleaned.pgm"), &o.cleaned.labels)?;
    write_labels(dir.join("raw.pgm"), &o.raw)?;
    write_labels(dir.join("labels.pgm"), &o.refined.labels)?;
    write_overlay(dir.join("overlay.png"), &image, &o.refined.labels)?;
    write_loss_csv(dir.join("loss.csv"), &o.stop.losses)?;
    let mut m = Manifest::new();
    o.stop.write_to(&mut m, "stop.");
    m.set(
        "refine.outcome",
        if o.refined.forced() {
            "forced"
        } else {
            "converged"
        },
    );
    if !o.cleaned.dropped.is_empty() {
        let d: Vec<String> = o.cleaned.dropped.iter().map(u8::to_string).collect();
        m.set("preseg.dropped", d.join(","));
    }
    config.write_to(&mut m, "unsup.");
    info!(
        "stopped at iteration {} ({}), trigger {:?}",
        o.stop.stopped_at, o.stop.cause, o.stop.trigger
    );
    finish(&dir, argv, m)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted label images.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth label images (`X.pgm` or `X_gt.pgm`).
    #[arg(long)]
    gt: PathBuf,
    /// `hungarian` or `identity`.
    #[arg(long, default_value = "hungarian")]
    matching: Matching,
    /// Overlap threshold of the region measures.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    out: OutArg,
}

/// Label images of a directory keyed by stem, with a `_gt` suffix removed.
/// `X_gt` wins over `X`, so a dataset's test directory can serve as ground
/// truth next to its images.
fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let mut marked = BTreeSet::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for e in entries {
        let p = e?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !p.is_file() || !["pgm", "png"].contains(&ext) {
            continue;
        }
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("")
            .to_string();
        match stem.strip_suffix("_gt") {
            Some(key) => {
                marked.insert(key.to_string());
                out.insert(key.to_string(), p);
            }
            None if !marked.contains(&stem) => {
                out.insert(stem, p);
            }
            None => {}
        }
    }
    Ok(out)
}

fn eval(a: EvalArgs, name: &str, argv: &[String]) -> Result<()> {
    if !(0.5..=1.0).contains(&a.threshold) {
        return Err(usage(format!(
            "threshold must be in [0.5, 1], got {}",
            a.threshold
        )));
    }
    let preds = label_files(&a.pred)?;
    let gts = label_files(&a.gt)?;
    let only_pred: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).collect();
    let only_gt: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        for k in &only_pred {
            eprintln!("no ground truth for prediction {k}");
        }
        for k in &only_gt {
            eprintln!("no prediction for ground truth {k}");
        }
        return Err(usage("prediction and ground-truth sets differ"));
    }
    if gts.is_empty() {
        return Err(usage(format!("no label images in {}", a.gt.display())));
    }
    let names: Vec<String> = gts.keys().cloned().collect();
    let load = |m: &BTreeMap<String, PathBuf>| -> Result<Vec<LabelMap>> {
        names.iter().map(|n| Ok(read_labels(&m[n])?)).collect()
    };
    let report = evaluate_suite(
        &names,
        &load(&preds)?,
        &load(&gts)?,
        a.matching,
        a.threshold,
    )?;
    print!("{report}");
    let dir = prepare_out(a.out, name)?;
    let path = dir.join("report.txt");
    std::fs::write(&path, report.to_string())
        .with_context(|| format!("writing {}", path.display()))?;
    report.to_manifest().write(dir.join("eval.txt"))?;
    finish(&dir, argv, Manifest::new())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment preset: A, B or C.
    #[arg(long, value_parser = parse_experiment)]
    experiment: ExperimentId,
    /// Override the supervised iteration count.
    #[arg(long)]
    iters: Option<usize>,
    /// Override the number of test mosaics.
    #[arg(long)]
    test_mosaics: Option<usize>,
    /// Override the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

fn run(a: RunArgs, name: &str, argv: &[String]) -> Result<()> {
    let mut preset = ExperimentPreset::new(a.experiment);
    if let Some(n) = a.iters {
        preset.train.max_iters = n;
    }
    if let Some(n) = a.test_mosaics {
        preset.dataset.test_mosaics = n;
    }
    if let Some(s) = a.seed {
        preset.dataset.seed = s;
    }
    let dir = prepare_out(a.out, name)?;
    let report = run_experiment(&preset, Some(&dir))?;
    println!(
        "experiment {}: mean CO raw {:.2}",
        report.id, report.raw.mean.co
    );
    if let Some(r) = &report.refined {
        println!("experiment {}: mean CO refined {:.2}", report.id, r.mean.co);
    }
    if let Some(p) = &report.preseg {
        println!(
            "experiment {}: mean CO pre-segmentation {:.2}",
            report.id, p.mean.co
        );
    }
    // The experiment writes its own manifest; the run manifest wraps it.
    let inner = dir.join(RUN_MANIFEST);
    let moved = dir.join("experiment.txt");
    std::fs::rename(&inner, &moved).with_context(|| format!("renaming {}", inner.display()))?;
    finish(&dir, argv, Manifest::new())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    /// A run manifest (`run.txt`) written by any command.
    manifest: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

fn rerun(a: RerunArgs) -> Result<()> {
    let old = Manifest::read(&a.manifest)?;
    let args = recorded_argv(&old)?;
    let Some(first) = args.first() else {
        bail!(Usage("manifest records no command".into()));
    };
    if first == "rerun" {
        return Err(usage("a rerun manifest cannot be rerun"));
    }
    let changed_inputs: Vec<String> = old
        .with_prefix("input.")
        .filter(|(k, v)| {
            let path = &k["input.".len()..];
            fcnt_core::manifest::sha256_file(path).map_or(true, |h| h != *v)
        })
        .map(|(k, _)| k["input.".len()..].to_string())
        .collect();
    if !changed_inputs.is_empty() {
        return Err(usage(format!(
            "inputs changed since the run: {}",
            changed_inputs.join(", ")
        )));
    }
    let dir = out_dir(a.out.out, "rerun");
    if dir.join(RUN_MANIFEST).exists() {
        return Err(usage(format!(
            "{} already holds a run; pick an empty directory",
            dir.display()
        )));
    }
    let exe = std::env::current_exe().context("locating the fcnt executable")?;
    info!("re-running {}", args.join(" "));
    let status = std::process::Command::new(exe)
        .args(&args)
        .arg("--out")
        .arg(&dir)
        .status()
        .context("starting the rerun")?;
    if !status.success() {
        bail!(Usage(format!("rerun failed with {status}")));
    }
    let new = Manifest::read(dir.join(RUN_MANIFEST))?;
    let diff = differing(&old, &new, "output.");
    if !diff.is_empty() {
        return Err(Mismatch(diff).into());
    }
    println!(
        "{} output files reproduced byte for byte",
        new.with_prefix("output.").count()
    );
    Ok(())
}
