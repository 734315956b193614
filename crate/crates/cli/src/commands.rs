use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::RangedU64ValueParser;
use clap::{Args, ValueEnum};
use serde::Serialize;

use panorad_core::bips::{
    generator_inputs, infer, moving_average, train, BipsModel, TrainConfig, TrainingSample, Variant, EVAL_DEPRESSION_DEG,
    EVAL_RAYS,
};
use panorad_core::corruption::{corrupt as corrupt_scene, Corruption, CorruptionKind, Target};
use panorad_core::faed::{frechet_distance, train_autoencoder, AeTrainConfig, FaedModel};
use panorad_core::geometry::weighted_coverage;
use panorad_core::io::{
    manifest_dir, read_manifest, read_stats, read_weights, write_depth, write_manifest, write_mask, write_rgb,
    write_signed_depth, write_stats, write_toml, write_weights, Manifest, ManifestEntry,
};
use panorad_core::metrics::{absrel, corner_error, extract_floor_polygon, layout_iou2d, psnr, rmse, ssim, MetricReport};
use panorad_core::scene::{generate_empty_room, generate_scene, layout_depth, RgbdScene, SceneAnnotation};
use panorad_core::sensor::{masks_for, sample_config};
use panorad_core::sweep::{run_sweep, SweepConfig, SweepRow};
use panorad_core::tensor::AdamConfig;
use panorad_core::{Error, Result, Scene, Seed};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_scenes(path: &Path) -> Result<(Manifest, Vec<Scene>)> {
    let manifest = read_manifest(path)?;
    let scenes = manifest
        .load_all::<f32>(&manifest_dir(path))?
        .into_iter()
        .map(|e| RgbdScene {
            rgb: e.rgb,
            depth: e.depth,
            validity: e.validity,
            layout: e.layout,
            furniture: Vec::new(),
        })
        .collect();
    Ok((manifest, scenes))
}

/// Writes `{id}_rgb.png` and `{id}_depth.png`; returns the entry and the
/// number of clamped depths.
fn write_scene(dir: &Path, id: &str, scene: &Scene) -> Result<(ManifestEntry, usize)> {
    let rgb_path = PathBuf::from(format!("{id}_rgb.png"));
    let depth_path = PathBuf::from(format!("{id}_depth.png"));
    write_rgb(&dir.join(&rgb_path), &scene.rgb)?;
    let clamped = write_depth(&dir.join(&depth_path), &scene.depth, Some(&scene.validity))?;
    Ok((
        ManifestEntry {
            id: id.to_string(),
            rgb_path,
            depth_path,
            mask_rgb_path: None,
            mask_depth_path: None,
            layout: scene.layout.clone(),
            sensor_config: None,
        },
        clamped,
    ))
}

#[derive(Debug, Serialize)]
pub struct DatasetResult {
    pub entries: usize,
    pub manifest: PathBuf,
    pub clamped_depths: usize,
}

fn positive() -> RangedU64ValueParser<usize> {
    RangedU64ValueParser::new().range(1..)
}

#[derive(Debug, Args, Serialize)]
pub struct ScenegenArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Panorama height; width is twice this.
    #[arg(long, default_value_t = 64, value_parser = positive())]
    pub height: usize,
    /// Rooms without furniture.
    #[arg(long)]
    pub empty: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn scenegen(a: &ScenegenArgs) -> Result<DatasetResult> {
    create_dir(&a.out)?;
    let mut manifest = Manifest::default();
    let mut clamped = 0;
    for i in 0..a.count {
        let seed = Seed(a.seed).derive(i as u64);
        let scene: Scene = if a.empty {
            generate_empty_room(seed, a.height, 2 * a.height)?
        } else {
            generate_scene(seed, a.height, 2 * a.height)?
        };
        let (entry, c) = write_scene(&a.out, &format!("scene_{i:04}"), &scene)?;
        manifest.entries.push(entry);
        clamped += c;
    }
    let path = a.out.join("manifest.toml");
    write_manifest(&path, &manifest)?;
    Ok(DatasetResult {
        entries: a.count,
        manifest: path,
        clamped_depths: clamped,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct MaskgenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64, value_parser = positive())]
    pub height: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct MaskgenResult {
    pub rgb_mask: PathBuf,
    pub depth_mask: PathBuf,
    pub sensor_config: PathBuf,
    /// Solid-angle-weighted fraction of the sphere each mask covers.
    pub rgb_coverage: f64,
    pub depth_coverage: f64,
}

pub fn maskgen(a: &MaskgenArgs) -> Result<MaskgenResult> {
    create_dir(&a.out)?;
    let cfg = sample_config(Seed(a.seed));
    let (rgb, depth) = masks_for::<f32>(&cfg, a.height, 2 * a.height)?;
    let result = MaskgenResult {
        rgb_mask: a.out.join("mask_rgb.png"),
        depth_mask: a.out.join("mask_depth.png"),
        sensor_config: a.out.join("sensor_config.toml"),
        rgb_coverage: weighted_coverage(&rgb),
        depth_coverage: weighted_coverage(&depth),
    };
    write_mask(&result.rgb_mask, &rgb)?;
    write_mask(&result.depth_mask, &depth)?;
    write_toml(&result.sensor_config, &cfg)?;
    Ok(result)
}

#[derive(Debug, Args, Serialize)]
pub struct LayoutdepthArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct LayoutdepthResult {
    pub entries: usize,
    /// Largest `depth - layout` over valid pixels, meters. Positive values
    /// mean the depth reaches beyond the annotated shell.
    pub max_residual: f64,
    pub clamped_depths: usize,
}

pub fn layoutdepth(a: &LayoutdepthArgs) -> Result<LayoutdepthResult> {
    let (manifest, scenes) = load_scenes(&a.manifest)?;
    create_dir(&a.out)?;
    let mut max_residual = f64::NEG_INFINITY;
    let mut clamped = 0;
    for (entry, scene) in manifest.entries.iter().zip(&scenes) {
        let layout = layout_depth::<f32>(&scene.layout, scene.height(), 2 * scene.height())?;
        for ((d, l), v) in scene.depth.data().iter().zip(layout.data()).zip(scene.validity.data()) {
            if *v != 0.0 {
                max_residual = max_residual.max(f64::from(d - l));
            }
        }
        clamped += write_depth(&a.out.join(format!("{}_layout.png", entry.id)), &layout, None)?;
    }
    Ok(LayoutdepthResult {
        entries: scenes.len(),
        max_residual,
        clamped_depths: clamped,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct CorruptArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub kind: CorruptionKind,
    #[arg(long)]
    pub level: u8,
    #[arg(long)]
    pub target: Target,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn corrupt(a: &CorruptArgs) -> Result<DatasetResult> {
    let (manifest, scenes) = load_scenes(&a.manifest)?;
    create_dir(&a.out)?;
    let mut out = Manifest::default();
    let mut clamped = 0;
    for (i, (entry, scene)) in manifest.entries.iter().zip(&scenes).enumerate() {
        let c = Corruption {
            kind: a.kind,
            level: a.level,
            target: a.target,
            seed: Seed(a.seed).derive(i as u64),
        };
        let corrupted = corrupt_scene(scene, &c)?;
        let (e, n) = write_scene(&a.out, &entry.id, &corrupted)?;
        out.entries.push(e);
        clamped += n;
    }
    let path = a.out.join("manifest.toml");
    write_manifest(&path, &out)?;
    Ok(DatasetResult {
        entries: out.entries.len(),
        manifest: path,
        clamped_depths: clamped,
    })
}

fn corpus(manifest: &Path) -> Result<Vec<panorad_core::Grid>> {
    let (_, scenes) = load_scenes(manifest)?;
    scenes.iter().map(|s| s.rgbd()).collect()
}

#[derive(Debug, Args, Serialize)]
pub struct FaedTrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output weights file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct FaedTrainResult {
    pub scenes: usize,
    pub loss_first: f64,
    pub loss_last: f64,
}

pub fn faed_train(a: &FaedTrainArgs) -> Result<FaedTrainResult> {
    let data = corpus(&a.manifest)?;
    let defaults = AeTrainConfig::default();
    let cfg = AeTrainConfig {
        steps: a.steps,
        batch: a.batch,
        seed: Seed(a.seed),
        adam: AdamConfig { lr: a.lr, ..defaults.adam },
    };
    let (model, losses) = train_autoencoder(&data, &cfg)?;
    write_weights(&a.out, &model.weights())?;
    Ok(FaedTrainResult {
        scenes: data.len(),
        loss_first: losses.first().map_or(f64::NAN, |&l| f64::from(l)),
        loss_last: losses.last().map_or(f64::NAN, |&l| f64::from(l)),
    })
}

#[derive(Debug, Args, Serialize)]
pub struct FaedStatsArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output statistics file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct FaedStatsResult {
    pub count: usize,
    pub dim: usize,
}

pub fn faed_stats(a: &FaedStatsArgs) -> Result<FaedStatsResult> {
    let model = FaedModel::from_weights(&read_weights(&a.weights)?)?;
    let stats = model.corpus_stats(&corpus(&a.manifest)?)?;
    write_stats(&a.out, &stats)?;
    Ok(FaedStatsResult {
        count: stats.count,
        dim: stats.dim,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct FaedArgs {
    #[arg(long)]
    pub stats_a: PathBuf,
    #[arg(long)]
    pub stats_b: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct FaedResult {
    pub distance: f64,
}

pub fn faed(a: &FaedArgs) -> Result<FaedResult> {
    let sa = read_stats(&a.stats_a)?;
    let sb = read_stats(&a.stats_b)?;
    Ok(FaedResult {
        distance: frechet_distance(&sa, &sb)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Psnr,
    Ssim,
    Absrel,
    Rmse,
    Iou2d,
    CornerErr,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    /// Manifest of predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// Manifest of ground truth; entries are matched by id.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "psnr,ssim,absrel,rmse,iou2d,corner-err")]
    pub which: Vec<Metric>,
}

#[derive(Debug, Serialize)]
pub struct MetricsResult {
    pub entries: usize,
    /// Entries whose predicted and true corner counts differ.
    pub corner_count_mismatches: usize,
    /// Means over entries.
    pub mean: MetricReport,
}

pub fn metrics(a: &MetricsArgs) -> Result<MetricsResult> {
    let (pm, preds) = load_scenes(&a.pred)?;
    let (gm, gts) = load_scenes(&a.gt)?;
    let want = |m| a.which.contains(&m);
    let mut sums = [0.0f64; 6];
    let mut mismatches = 0;
    for (entry, pred) in pm.entries.iter().zip(&preds) {
        let k = gm
            .entries
            .iter()
            .position(|e| e.id == entry.id)
            .ok_or_else(|| Error::Data(format!("prediction {:?} has no ground truth", entry.id)))?;
        let gt = &gts[k];
        let valid = pred.validity.zip_map(&gt.validity, |a, b| a * b)?;
        if want(Metric::Psnr) {
            sums[0] += psnr(&pred.rgb, &gt.rgb)?;
        }
        if want(Metric::Ssim) {
            sums[1] += ssim(&pred.rgb, &gt.rgb)?;
        }
        if want(Metric::Absrel) {
            sums[2] += absrel(&pred.depth, &gt.depth, Some(&valid))?;
        }
        if want(Metric::Rmse) {
            sums[3] += rmse(&pred.depth, &gt.depth, Some(&valid))?;
        }
        if want(Metric::Iou2d) {
            sums[4] += layout_iou2d(&pred.layout.corners_xz, &gt.layout.corners_xz)?;
        }
        if want(Metric::CornerErr) {
            let c = corner_error(&pred.layout.corners_xz, &gt.layout.corners_xz)?;
            sums[5] += c.value;
            mismatches += usize::from(c.count_mismatch);
        }
    }
    let n = preds.len();
    if n == 0 {
        return Err(Error::InsufficientData("prediction manifest is empty".into()));
    }
    let mean = |m, i: usize| want(m).then(|| sums[i] / n as f64);
    Ok(MetricsResult {
        entries: n,
        corner_count_mismatches: mismatches,
        mean: MetricReport {
            psnr: mean(Metric::Psnr, 0),
            ssim: mean(Metric::Ssim, 1),
            absrel: mean(Metric::Absrel, 2),
            rmse: mean(Metric::Rmse, 3),
            iou2d: mean(Metric::Iou2d, 4),
            corner_err: mean(Metric::CornerErr, 5),
        },
    })
}

#[derive(Debug, Args, Serialize)]
pub struct BipsTrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    pub lr: f64,
    /// Pixel-loss weight.
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output weights file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-step loss log.
    #[arg(long)]
    pub losses: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct BipsTrainResult {
    pub scenes: usize,
    pub steps: usize,
    /// 100-step moving average of the invisible-region depth error (m)
    /// at the end of the first window and at the last step.
    pub invisible_l1_start: f64,
    pub invisible_l1_end: f64,
    pub generator_loss_last: f64,
    pub discriminator_loss_last: f64,
}

#[derive(Serialize)]
struct LossLog<'a> {
    records: &'a [panorad_core::bips::LossRecord],
}

pub fn bips_train(a: &BipsTrainArgs) -> Result<BipsTrainResult> {
    let (_, scenes) = load_scenes(&a.manifest)?;
    let samples: Vec<TrainingSample> = scenes.iter().map(TrainingSample::from_scene).collect::<Result<_>>()?;
    let cfg = TrainConfig {
        variant: a.variant,
        lambda: a.lambda,
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        seed: Seed(a.seed),
    };
    let (model, records) = train(&samples, &cfg)?;
    write_weights(&a.out, &model.weights())?;
    if let Some(path) = &a.losses {
        write_toml(path, &LossLog { records: &records })?;
    }
    let inv: Vec<f64> = records.iter().map(|r| r.invisible_depth_l1).collect();
    let ma = moving_average(&inv, 100);
    let last = records.last();
    Ok(BipsTrainResult {
        scenes: samples.len(),
        steps: records.len(),
        invisible_l1_start: ma.get(99.min(ma.len().saturating_sub(1))).copied().unwrap_or(f64::NAN),
        invisible_l1_end: ma.last().copied().unwrap_or(f64::NAN),
        generator_loss_last: last.map_or(f64::NAN, |r| r.generator),
        discriminator_loss_last: last.map_or(f64::NAN, |r| r.discriminator),
    })
}

#[derive(Debug, Args, Serialize)]
pub struct BipsInferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Seed of the sensor rigs drawn per entry.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct BipsInferResult {
    pub entries: usize,
    pub manifest: PathBuf,
    /// Entries where no floor plan could be recovered from the predicted
    /// depth; they carry a 10 cm square around the camera instead.
    pub layout_failures: Vec<String>,
}

const FALLBACK_HALF_SIDE: f64 = 0.05;

pub fn bips_infer(a: &BipsInferArgs) -> Result<BipsInferResult> {
    let model = BipsModel::from_weights(&read_weights(&a.weights)?)?;
    let (manifest, scenes) = load_scenes(&a.manifest)?;
    create_dir(&a.out)?;
    let mut out = Manifest::default();
    let mut failures = Vec::new();
    for (i, (entry, scene)) in manifest.entries.iter().zip(&scenes).enumerate() {
        let sensors = sample_config(Seed(a.seed).derive(i as u64));
        let sample = TrainingSample::from_scene(scene)?;
        let (x, d, depth_mask) = generator_inputs(&sample, &sensors)?;
        let (rgb_mask, _) = masks_for::<f32>(&sensors, scene.height(), 2 * scene.height())?;
        let pred = infer(&model, &x, &d)?;
        let id = &entry.id;
        let file = |suffix: &str| PathBuf::from(format!("{id}_{suffix}.png"));
        write_rgb(&a.out.join(file("rgb")), &pred.rgb)?;
        write_depth(&a.out.join(file("depth")), &pred.total, None)?;
        if let Some(layout) = &pred.layout {
            write_depth(&a.out.join(file("layout")), layout, None)?;
        }
        if let Some(residual) = &pred.residual {
            write_signed_depth(&a.out.join(file("residual")), residual)?;
        }
        write_mask(&a.out.join(file("mask_rgb")), &rgb_mask)?;
        write_mask(&a.out.join(file("mask_depth")), &depth_mask)?;
        let shell = pred.layout.as_ref().unwrap_or(&pred.total);
        let hc = scene.layout.camera_height;
        let corners = match extract_floor_polygon(shell, hc, EVAL_RAYS, EVAL_DEPRESSION_DEG.to_radians()) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("{id}: no floor plan recovered: {e}");
                failures.push(id.clone());
                let s = FALLBACK_HALF_SIDE;
                vec![[-s, -s], [s, -s], [s, s], [-s, s]]
            }
        };
        out.entries.push(ManifestEntry {
            id: id.clone(),
            rgb_path: file("rgb"),
            depth_path: file("depth"),
            mask_rgb_path: Some(file("mask_rgb")),
            mask_depth_path: Some(file("mask_depth")),
            layout: SceneAnnotation {
                corners_xz: corners,
                camera_height: hc,
                ceiling_height: scene.layout.ceiling_height,
            },
            sensor_config: Some(sensors),
        });
    }
    let path = a.out.join("manifest.toml");
    write_manifest(&path, &out)?;
    Ok(BipsInferResult {
        entries: out.entries.len(),
        manifest: path,
        layout_failures: failures,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyFaedArgs {
    #[arg(long, default_value_t = 64)]
    pub scenes: usize,
    #[arg(long, default_value_t = 64, value_parser = positive())]
    pub height: usize,
    /// Auto-encoder training steps.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optionally save the trained auto-encoder.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct VerifyFaedResult {
    pub all_monotone: bool,
    pub ae_loss_first: f64,
    pub ae_loss_last: f64,
    pub rows: Vec<VerifyRow>,
}

#[derive(Debug, Serialize)]
pub struct VerifyRow {
    pub target: Target,
    pub kind: CorruptionKind,
    pub monotone: bool,
    /// Distance at levels 0 to 4.
    pub distances: Vec<f64>,
}

pub fn verify_faed(a: &VerifyFaedArgs) -> Result<VerifyFaedResult> {
    let cfg = SweepConfig {
        scenes: a.scenes,
        height: a.height,
        seed: Seed(a.seed),
        autoencoder: AeTrainConfig {
            steps: a.steps,
            batch: a.batch,
            seed: Seed(a.seed).derive(7),
            ..AeTrainConfig::default()
        },
    };
    let (model, report) = run_sweep(&cfg)?;
    if let Some(path) = &a.weights {
        write_weights(path, &model.weights())?;
    }
    Ok(VerifyFaedResult {
        all_monotone: report.all_monotone(),
        ae_loss_first: report.ae_loss_first,
        ae_loss_last: report.ae_loss_last,
        rows: report
            .rows
            .iter()
            .map(|r: &SweepRow| VerifyRow {
                target: r.target,
                kind: r.kind,
                monotone: r.is_monotone(),
                distances: r.distances.clone(),
            })
            .collect(),
    })
}
