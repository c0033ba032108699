//! Pinned desk-scale experiments on synthetic texture mosaics.
//!
//! * **A**: train on single-texture images with uniform labels, evaluate the
//!   raw argmax on held-out mosaics of two or three regions.
//! * **B**: one training image per class and a longer schedule; evaluate
//!   before and after refinement to the known number of regions.
//! * **C**: no training labels for the test image. A network trained as in
//!   A pre-segments each mosaic by k-means over its scores, a network
//!   sharing its feature layers is fine-tuned on the image itself with
//!   early stopping, and its output is refined.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{generate, write_dataset, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::imageio::{write_labels, write_overlay};
use crate::label::LabelMap;
use crate::manifest::{sha256_file, Manifest};
use crate::metrics::{evaluate_suite, EvalReport, Matching, DEFAULT_THRESHOLD};
use crate::model::{build_fcnt, NetworkSpec, NetworkState};
use crate::patches::connected_components;
use crate::pipeline::{segment, segment_unsupervised, PresegSource, UnsupConfig};
use crate::preseg::PresegConfig;
use crate::train::{train_supervised, write_loss_csv, StopCause, TrainConfig, TrainSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    A,
    B,
    C,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::A => "A",
            ExperimentId::B => "B",
            ExperimentId::C => "C",
        })
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(ExperimentId::A),
            "B" => Ok(ExperimentId::B),
            "C" => Ok(ExperimentId::C),
            _ => Err(Error::InvalidArgument(format!(
                "unknown experiment {s:?}; expected A, B or C"
            ))),
        }
    }
}

/// Everything that defines an experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPreset {
    pub id: ExperimentId,
    pub dataset: DatasetConfig,
    /// Network trained on the labeled images; its class count equals the
    /// dataset's.
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub net_seed: u64,
    /// Refine supervised outputs to the number of ground-truth regions.
    pub refine: bool,
    /// Unsupervised settings (experiment C only). `k` of the
    /// pre-segmentation is set per image to its number of regions.
    pub preseg: Option<PresegConfig>,
    pub unsup: Option<UnsupConfig>,
}

impl ExperimentPreset {
    pub fn new(id: ExperimentId) -> Self {
        let classes = 5;
        let base = DatasetConfig {
            classes,
            train_per_class: 8,
            test_mosaics: 20,
            min_regions: 2,
            max_regions: 5,
            train_size: 128,
            test_size: 256,
            seed: 11,
            allow_nonpaper: false,
        };
        let train = TrainConfig {
            lr: 1e-3,
            max_iters: 2000,
            crop_size: 64,
            seed: 3,
            ..TrainConfig::default()
        };
        let preset = ExperimentPreset {
            id,
            dataset: base.clone(),
            spec: NetworkSpec::compact(classes),
            train,
            net_seed: 7,
            refine: false,
            preseg: None,
            unsup: None,
        };
        match id {
            ExperimentId::A => ExperimentPreset {
                dataset: DatasetConfig {
                    max_regions: 3,
                    seed: 1,
                    ..base
                },
                ..preset
            },
            ExperimentId::B => ExperimentPreset {
                dataset: DatasetConfig {
                    train_per_class: 1,
                    ..base
                },
                train: TrainConfig {
                    max_iters: 5000,
                    ..train
                },
                refine: true,
                ..preset
            },
            ExperimentId::C => ExperimentPreset {
                dataset: DatasetConfig {
                    test_mosaics: 10,
                    test_size: 128,
                    ..base
                },
                preseg: Some(PresegConfig {
                    downsample_factor: 1,
                    ..PresegConfig::new(2, 5)
                }),
                unsup: Some(UnsupConfig {
                    finetune: TrainConfig {
                        lr: 3e-3,
                        seed: 4,
                        ..train
                    },
                    net_seed: 9,
                    spec: NetworkSpec::compact(2),
                    ..UnsupConfig::default()
                }),
                ..preset
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.spec.num_classes != self.dataset.classes {
            return Err(Error::ClassCountMismatch {
                expected: self.dataset.classes,
                found: self.spec.num_classes,
            });
        }
        if self.id == ExperimentId::C && (self.preseg.is_none() || self.unsup.is_none()) {
            return Err(Error::InvalidArgument(
                "experiment C needs pre-segmentation settings".into(),
            ));
        }
        Ok(())
    }

    pub fn write_to(&self, m: &mut Manifest) {
        m.set("experiment", self.id);
        m.set("network", self.spec);
        m.set("net_seed", self.net_seed);
        m.set("refine", self.refine);
        for (k, v) in DatasetManifest(&self.dataset).entries() {
            m.set(format!("dataset.{k}"), v);
        }
        self.train.write_to(m, "train.");
        if let Some(p) = &self.preseg {
            m.set("preseg.downsample_factor", p.downsample_factor);
            m.set("preseg.kmeans_restarts", p.kmeans_restarts);
            m.set("preseg.kmeans_max_iters", p.kmeans_max_iters);
            m.set(
                "preseg.features",
                format!("{:?}", p.features).to_lowercase(),
            );
            m.set("preseg.seed", p.seed);
        }
        if let Some(u) = &self.unsup {
            u.write_to(m, "unsup.");
        }
    }
}

struct DatasetManifest<'a>(&'a DatasetConfig);

impl DatasetManifest<'_> {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let d = self.0;
        vec![
            ("seed", d.seed.to_string()),
            ("classes", d.classes.to_string()),
            ("train_per_class", d.train_per_class.to_string()),
            ("test_mosaics", d.test_mosaics.to_string()),
            ("min_regions", d.min_regions.to_string()),
            ("max_regions", d.max_regions.to_string()),
            ("train_size", d.train_size.to_string()),
            ("test_size", d.test_size.to_string()),
        ]
    }
}

/// Per-image outcome; CO values are after Hungarian label matching.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub name: String,
    pub regions: usize,
    pub co_raw: f64,
    pub co_refined: Option<f64>,
    pub co_preseg: Option<f64>,
    /// Refinement fell back to geodesic assignment.
    pub forced: Option<bool>,
    /// Number of 4-connected patches of the refined map.
    pub refined_patches: Option<usize>,
    /// Distinct classes of the refined map.
    pub refined_classes: Option<usize>,
    pub trigger: Option<usize>,
    pub stopped_at: Option<usize>,
    pub cause: Option<StopCause>,
    /// Early-stop hard cap in force for this image.
    pub hard_cap: Option<usize>,
    pub grace: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    /// Loss of every supervised iteration.
    pub losses: Vec<f64>,
    pub images: Vec<ImageResult>,
    pub raw: EvalReport,
    pub refined: Option<EvalReport>,
    pub preseg: Option<EvalReport>,
}

impl ExperimentReport {
    pub fn mean_co_raw(&self) -> f64 {
        self.raw.mean.co
    }

    /// Key-value summary of every per-image outcome.
    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("experiment", self.id);
        m.set("mean.co_raw", self.raw.mean.co);
        if let Some(r) = &self.refined {
            m.set("mean.co_refined", r.mean.co);
        }
        if let Some(p) = &self.preseg {
            m.set("mean.co_preseg", p.mean.co);
        }
        for i in &self.images {
            let k = |s: &str| format!("image.{}.{s}", i.name);
            m.set(k("regions"), i.regions);
            m.set(k("co_raw"), i.co_raw);
            let opt = |m: &mut Manifest, key: &str, v: Option<String>| {
                if let Some(v) = v {
                    m.set(k(key), v);
                }
            };
            opt(&mut m, "co_refined", i.co_refined.map(|v| v.to_string()));
            opt(&mut m, "co_preseg", i.co_preseg.map(|v| v.to_string()));
            opt(&mut m, "forced", i.forced.map(|v| v.to_string()));
            opt(
                &mut m,
                "refined_patches",
                i.refined_patches.map(|v| v.to_string()),
            );
            opt(&mut m, "trigger", i.trigger.map(|v| v.to_string()));
            opt(&mut m, "stopped_at", i.stopped_at.map(|v| v.to_string()));
            opt(&mut m, "cause", i.cause.map(|v| v.to_string()));
        }
        m
    }
}

fn co_of(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    let r = evaluate_suite(
        &[String::new()],
        std::slice::from_ref(pred),
        std::slice::from_ref(gt),
        Matching::Hungarian,
        DEFAULT_THRESHOLD,
    )?;
    Ok(r.mean.co)
}

fn suite(names: &[String], preds: &[LabelMap], data: &Dataset) -> Result<EvalReport> {
    let gts: Vec<LabelMap> = data.test.iter().map(|t| t.gt.clone()).collect();
    evaluate_suite(names, preds, &gts, Matching::Hungarian, DEFAULT_THRESHOLD)
}

/// Trains the supervised network of a preset on its generated dataset.
pub fn train_preset(preset: &ExperimentPreset, data: &Dataset) -> Result<(NetworkState, Vec<f64>)> {
    let samples = data
        .train
        .iter()
        .map(|t| TrainSample::uniform(t.image.clone(), t.class))
        .collect::<Result<Vec<_>>>()?;
    let state = build_fcnt(&preset.spec, preset.net_seed)?;
    train_supervised(state, &samples, &preset.train)
}

/// Runs an experiment end to end. With `out`, the dataset, checkpoint,
/// loss curve, every label map, overlays, evaluation tables and a manifest
/// of output checksums are written there.
pub fn run_experiment(preset: &ExperimentPreset, out: Option<&Path>) -> Result<ExperimentReport> {
    preset.validate()?;
    let data = generate(&preset.dataset)?;
    if let Some(dir) = out {
        write_dataset(&data, dir.join("dataset"))?;
    }
    log::info!(
        "experiment {}: training on {} images",
        preset.id,
        data.train.len()
    );
    let (state, losses) = train_preset(preset, &data)?;
    if let Some(dir) = out {
        state.save(dir.join("model.ckpt"))?;
        write_loss_csv(dir.join("loss.csv"), &losses)?;
    }
    let names: Vec<String> = (0..data.test.len()).map(|j| format!("m{j:03}")).collect();
    let mut images = Vec::new();
    let (mut raws, mut refs, mut pres) = (Vec::new(), Vec::new(), Vec::new());
    for (name, m) in names.iter().zip(&data.test) {
        let regions = m.spec.region_count();
        let mut r = ImageResult {
            name: name.clone(),
            regions,
            co_raw: 0.0,
            co_refined: None,
            co_preseg: None,
            forced: None,
            refined_patches: None,
            refined_classes: None,
            trigger: None,
            stopped_at: None,
            cause: None,
            hard_cap: None,
            grace: None,
        };
        let (raw, refined) = match (&preset.preseg, &preset.unsup) {
            (Some(pc), Some(uc)) => {
                let src = PresegSource::KMeans(PresegConfig { k: regions, ..*pc });
                let o = segment_unsupervised(Some(&state), &m.image, &src, uc)?;
                r.co_preseg = Some(co_of(&o.preseg, &m.gt)?);
                r.trigger = o.stop.trigger;
                r.stopped_at = Some(o.stop.stopped_at);
                r.cause = Some(o.stop.cause);
                r.hard_cap = Some(uc.early.hard_cap);
                r.grace = Some(uc.early.grace_iters);
                pres.push(o.preseg);
                (o.raw, Some(o.refined))
            }
            _ => {
                let s = segment(&state, &m.image, preset.refine.then_some(regions))?;
                (s.raw, s.refined)
            }
        };
        r.co_raw = co_of(&raw, &m.gt)?;
        if let Some(rf) = &refined {
            r.co_refined = Some(co_of(&rf.labels, &m.gt)?);
            r.forced = Some(rf.forced());
            r.refined_patches = Some(connected_components(&rf.labels).patch_count());
            r.refined_classes = Some(rf.labels.classes().len());
        }
        log::info!(
            "{name}: {regions} regions, CO raw {:.2}{}",
            r.co_raw,
            r.co_refined
                .map_or(String::new(), |c| format!(", refined {c:.2}"))
        );
        if let Some(dir) = out {
            write_labels(dir.join("raw").join(format!("{name}.pgm")), &raw)?;
            let shown = refined.as_ref().map_or(&raw, |rf| &rf.labels);
            write_overlay(
                dir.join("overlay").join(format!("{name}.png")),
                &m.image,
                shown,
            )?;
            if let Some(rf) = &refined {
                write_labels(dir.join("refined").join(format!("{name}.pgm")), &rf.labels)?;
            }
            if let Some(p) = pres.last().filter(|_| preset.preseg.is_some()) {
                write_labels(dir.join("preseg").join(format!("{name}.pgm")), p)?;
            }
        }
        raws.push(raw);
        if let Some(rf) = refined {
            refs.push(rf.labels);
        }
        images.push(r);
    }
    let report = ExperimentReport {
        id: preset.id,
        losses,
        raw: suite(&names, &raws, &data)?,
        refined: (!refs.is_empty())
            .then(|| suite(&names, &refs, &data))
            .transpose()?,
        preseg: (!pres.is_empty())
            .then(|| suite(&names, &pres, &data))
            .transpose()?,
        images,
    };
    if let Some(dir) = out {
        write_outputs(preset, &report, dir)?;
    }
    Ok(report)
}

fn write_outputs(preset: &ExperimentPreset, report: &ExperimentReport, dir: &Path) -> Result<()> {
    let mut tables = format!("raw argmax\n{}\n", report.raw);
    if let Some(r) = &report.refined {
        tables.push_str(&format!("\nrefined\n{r}\n"));
    }
    if let Some(p) = &report.preseg {
        tables.push_str(&format!("\npre-segmentation\n{p}\n"));
    }
    let path = dir.join("report.txt");
    std::fs::write(&path, tables).map_err(|e| Error::io(&path, e))?;
    report.raw.to_manifest().write(dir.join("eval_raw.txt"))?;
    if let Some(r) = &report.refined {
        r.to_manifest().write(dir.join("eval_refined.txt"))?;
    }
    if let Some(p) = &report.preseg {
        p.to_manifest().write(dir.join("eval_preseg.txt"))?;
    }
    report.to_manifest().write(dir.join("results.txt"))?;
    let mut m = Manifest::new();
    preset.write_to(&mut m);
    for file in output_files(dir)? {
        let rel = file
            .strip_prefix(dir)
            .unwrap_or(&file)
            .to_string_lossy()
            .replace('\\', "/");
        if rel != "run.txt" {
            m.set(format!("output.{rel}"), sha256_file(&file)?);
        }
    }
    m.write(dir.join("run.txt"))
}

/// Every regular file under `dir`, sorted.
pub fn output_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
