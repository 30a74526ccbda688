//! End-to-end training of the parameter predictor against a frozen task.
//!
//! Per sample: random-crop the dark image → predict the raw parameter
//! vector → forward-mode pipeline pass on the full dark image → task loss
//! and its derivative along the eight tangents → reverse through the
//! predictor. Gradients are averaged over each batch in manifest order and
//! applied with Adam; batch-norm running statistics fold in one sample at
//! a time. Everything derives from the run seed, so two runs with the same
//! configuration produce bit-identical models.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lle_core::adam::{adam_step, AdamConfig, AdamState};
use lle_core::image::random_crop;
use lle_core::predictor::{fold_running_stats, init_predictor, Mode, PredictorArch, PredictorModel};
use lle_core::rng::SplitMix64;
use lle_core::tasks::{render_combined_blob_heatmap, TaskContext, TaskKind, TaskReference};
use lle_core::{pipeline_jvp, PipelineSpec};

use crate::config::TrainConfigFile;
use crate::dataset::{LoadedDataset, LoadedPair};

/// Stream labels for per-sample randomness.
pub const CROP_LABEL: u64 = 0xC207;
pub const DROPOUT_LABEL: u64 = 0xD207;

/// Rendered ground-truth amplitude for the blob task (roughly the
/// difference-of-Gaussians response of a bright blob).
pub const BLOB_GT_AMPLITUDE: f64 = 0.1;
pub const BLOB_GT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub samples: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub history: Vec<EpochStats>,
    pub task: TaskContext,
}

/// Build the per-pair frozen reference for a task kind.
pub fn task_reference(kind: TaskKind, pair: &LoadedPair) -> Result<TaskReference> {
    match kind {
        TaskKind::RefMse | TaskKind::FeatureMse { .. } => {
            Ok(TaskReference::Image(pair.bright.clone()))
        }
        TaskKind::BlobHeatmap => {
            let centers = pair.keypoints.as_ref().with_context(|| {
                format!(
                    "pair '{}' has no keypoints; the blob_heatmap task needs them in the manifest",
                    pair.name
                )
            })?;
            Ok(TaskReference::Heatmap(render_combined_blob_heatmap(
                pair.bright.height(),
                pair.bright.width(),
                centers,
                BLOB_GT_SIGMA,
                BLOB_GT_AMPLITUDE,
            )?))
        }
    }
}

/// Train a fresh predictor per the configuration. An empty dataset returns
/// the untouched initialized model and empty history.
pub fn train(cfg: &TrainConfigFile, data: &LoadedDataset) -> Result<TrainOutcome> {
    let spec: PipelineSpec = cfg.pipeline.to_spec()?;
    let task = TaskContext::new(cfg.task.kind()?);
    let arch = PredictorArch::canonical(cfg.crop_size);
    let mut model = init_predictor(arch, cfg.seed)?;
    model.set_mode(Mode::Train);
    let mut adam = AdamState::new(
        &model,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    if data.pairs.is_empty() {
        return Ok(TrainOutcome {
            model,
            history,
            task,
        });
    }
    if cfg.batch_size == 0 {
        bail!("batch size must be positive");
    }
    let references: Vec<TaskReference> = data
        .pairs
        .iter()
        .map(|p| task_reference(task.kind, p))
        .collect::<Result<_>>()?;
    let n = data.pairs.len();
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch_start in (0..n).step_by(cfg.batch_size) {
            let batch = &data.pairs[batch_start..(batch_start + cfg.batch_size).min(n)];
            let mut batch_grads: Option<lle_core::predictor::Gradients> = None;
            for (j, pair) in batch.iter().enumerate() {
                let idx = batch_start + j;
                let sample_tag = (epoch * n + idx) as u64;
                let crop_seed = SplitMix64::derive(cfg.seed, CROP_LABEL, sample_tag).next_u64();
                let dropout_seed =
                    SplitMix64::derive(cfg.seed, DROPOUT_LABEL, sample_tag).next_u64();
                let crop = random_crop(&pair.dark, cfg.crop_size, crop_seed)?;
                let (raw, cache) = model.predict(&crop, dropout_seed)?;
                let bundle = pipeline_jvp(&pair.dark, &raw, &spec)?;
                let (loss, grad_raw) =
                    task.loss_and_grad(&bundle.value, &references[idx], &bundle.tangents)?;
                if !loss.is_finite() {
                    bail!(
                        "non-finite loss at epoch {epoch}, image '{}', raw params {:?}",
                        pair.name,
                        raw
                    );
                }
                epoch_loss += loss;
                let grads = model.backward(&cache, &grad_raw)?;
                fold_running_stats(&mut model, &cache)?;
                match &mut batch_grads {
                    None => batch_grads = Some(grads),
                    Some(acc) => acc.accumulate(&grads),
                }
            }
            let mut grads = batch_grads.expect("nonempty batch");
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model, &mut adam, &grads)?;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / n as f64,
            samples: n,
        });
    }
    task.verify_frozen()?;
    Ok(TrainOutcome {
        model,
        history,
        task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, synthesize, Attenuation, SynthSettings};
    use crate::scenes::write_corpus;

    fn small_cfg(data: &str) -> TrainConfigFile {
        TrainConfigFile {
            epochs: 1,
            batch_size: 2,
            crop_size: 16,
            seed: 9,
            data: data.into(),
            ..TrainConfigFile::default()
        }
    }

    fn tiny_dataset(n: usize, seed: u64) -> (tempfile::TempDir, LoadedDataset) {
        let bright = tempfile::tempdir().unwrap();
        write_corpus(bright.path(), n, 24, seed).unwrap();
        let out = tempfile::tempdir().unwrap();
        synthesize(
            bright.path(),
            out.path(),
            &SynthSettings {
                attenuation: Attenuation::Fixed(0.02),
                read_noise_sigma: 0.0,
                quantize_bits: 8,
                seed,
            },
        )
        .unwrap();
        let data = load_dataset(out.path()).unwrap();
        (out, data)
    }

    #[test]
    fn empty_dataset_returns_untouched_model() {
        let cfg = small_cfg("unused");
        let empty = LoadedDataset {
            manifest: crate::dataset::Manifest {
                tier: None,
                target_mean_255: None,
                achieved_mean_255: 0.0,
                degrade: lle_core::degrade::DegradeConfig::new(0.5, 0.0, 8, 0).into(),
                pairs: vec![],
            },
            pairs: vec![],
        };
        let out = train(&cfg, &empty).unwrap();
        assert!(out.history.is_empty());
        let fresh = init_predictor(PredictorArch::canonical(cfg.crop_size), cfg.seed).unwrap();
        assert_eq!(out.model.layers, fresh.layers);
    }

    #[test]
    fn training_replays_bit_identically() {
        let (_dir, data) = tiny_dataset(4, 21);
        let cfg = small_cfg("x");
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(
            serde_json::to_string(&a.history).unwrap(),
            serde_json::to_string(&b.history).unwrap()
        );
    }

    #[test]
    fn training_changes_weights_and_steps() {
        let (_dir, data) = tiny_dataset(4, 22);
        let cfg = small_cfg("x");
        let out = train(&cfg, &data).unwrap();
        let fresh = init_predictor(PredictorArch::canonical(cfg.crop_size), cfg.seed).unwrap();
        assert_ne!(out.model.layers, fresh.layers);
        assert_eq!(out.model.step, 2, "4 samples / batch 2 = 2 adam steps");
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].mean_loss.is_finite());
    }

    #[test]
    fn blob_task_requires_keypoints() {
        let (_dir, mut data) = tiny_dataset(2, 23);
        for p in data.pairs.iter_mut() {
            p.keypoints = None;
        }
        let mut cfg = small_cfg("x");
        cfg.task = crate::config::TaskConfig {
            task: "blob_heatmap".into(),
            seed: 0,
        };
        assert!(train(&cfg, &data).is_err());
    }
}
