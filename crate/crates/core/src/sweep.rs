//! FAED response to controlled corruption.
//!
//! Trains an auto-encoder on a clean synthetic corpus, then measures the
//! distance from the clean corpus to corrupted copies of it for every
//! corruption kind, target and level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, Corruption, CorruptionKind, Target, MAX_LEVEL};
use crate::error::Result;
use crate::faed::{frechet_distance, train_autoencoder, AeTrainConfig, FaedModel};
use crate::scene::{generate_scene, RgbdScene};
use crate::sensor::Seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub scenes: usize,
    pub height: usize,
    pub seed: Seed,
    pub autoencoder: AeTrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenes: 64,
            height: 64,
            seed: Seed(0),
            autoencoder: AeTrainConfig::default(),
        }
    }
}

/// Distances for one kind and target, indexed by level `0..=MAX_LEVEL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: CorruptionKind,
    pub target: Target,
    pub distances: Vec<f64>,
}

impl SweepRow {
    /// Strictly increasing over levels 1 and up.
    pub fn is_monotone(&self) -> bool {
        self.distances[1..].windows(2).all(|w| w[1] > w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Auto-encoder reconstruction loss at the first and last step.
    pub ae_loss_first: f64,
    pub ae_loss_last: f64,
}

impl SweepReport {
    pub fn all_monotone(&self) -> bool {
        self.rows.iter().all(SweepRow::is_monotone)
    }
}

pub fn synthetic_corpus(count: usize, height: usize, seed: Seed) -> Result<Vec<RgbdScene<f32>>> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_scene(seed.derive(i as u64), height, 2 * height))
        .collect()
}

/// Runs the sweep with a freshly trained auto-encoder.
pub fn run_sweep(cfg: &SweepConfig) -> Result<(FaedModel, SweepReport)> {
    let scenes = synthetic_corpus(cfg.scenes, cfg.height, cfg.seed.derive(1))?;
    let clean: Vec<_> = scenes.iter().map(|s| s.rgbd()).collect::<Result<_>>()?;
    let (model, losses) = train_autoencoder(&clean, &cfg.autoencoder)?;
    let rows = sweep_rows(&model, &scenes, cfg.seed.derive(2))?;
    Ok((
        model,
        SweepReport {
            rows,
            ae_loss_first: losses.first().map_or(f64::NAN, |&l| f64::from(l)),
            ae_loss_last: losses.last().map_or(f64::NAN, |&l| f64::from(l)),
        },
    ))
}

/// Distances from `scenes` to corrupted copies of themselves with a given
/// model. Each scene keeps one corruption seed per kind and target across
/// levels.
pub fn sweep_rows(model: &FaedModel, scenes: &[RgbdScene<f32>], seed: Seed) -> Result<Vec<SweepRow>> {
    let clean: Vec<_> = scenes.iter().map(|s| s.rgbd()).collect::<Result<_>>()?;
    let reference = model.corpus_stats(&clean)?;
    let mut rows = Vec::new();
    for target in [Target::Rgb, Target::Depth] {
        for (k, kind) in CorruptionKind::ALL.into_iter().enumerate() {
            let mut distances = Vec::with_capacity(MAX_LEVEL as usize + 1);
            for level in 0..=MAX_LEVEL {
                let corpus: Vec<_> = scenes
                    .par_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let c = Corruption {
                            kind,
                            level,
                            target,
                            seed: seed.derive((((target as u64) * 16 + k as u64) << 32) | i as u64),
                        };
                        corrupt(s, &c)?.rgbd()
                    })
                    .collect::<Result<_>>()?;
                let stats = model.corpus_stats(&corpus)?;
                distances.push(frechet_distance(&reference, &stats)?);
            }
            log::info!("{} {}: {:?}", target.name(), kind.name(), distances);
            rows.push(SweepRow {
                kind,
                target,
                distances,
            });
        }
    }
    Ok(rows)
}
