//! Model evaluation over a paired dataset.
//!
//! For every image the report carries the trained predictor's loss (both a
//! deterministic center-crop prediction and the mean over seeded
//! random-crop repeats), the identity-parameter baseline, PSNR against the
//! bright reference, and optionally the grid-search oracle. Repeat
//! averages are computed over a sorted copy of the per-repeat values, so
//! the result is exactly invariant under permutation of the repeat seeds.

use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use lle_core::grid::{grid_search, GridSpec};
use lle_core::image::{center_crop, psnr, random_crop};
use lle_core::predictor::{Mode, PredictorModel};
use lle_core::rng::SplitMix64;
use lle_core::tasks::{TaskContext, TaskReference};
use lle_core::{pipeline_apply, squash, Image, LLEParams, PipelineSpec};

use crate::dataset::LoadedDataset;
use crate::parallel::map_indexed;
use crate::report::{aligned_table, sig6};
use crate::train::task_reference;

pub const EVAL_CROP_LABEL: u64 = 0xE7A1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSettings {
    pub repeats: usize,
    pub crop_size: usize,
    pub seed: u64,
    pub include_oracle: bool,
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            repeats: 3,
            crop_size: 256,
            seed: 0,
            include_oracle: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    /// Deterministic center-crop prediction.
    pub predictor_loss: f64,
    pub predictor_psnr: f64,
    /// Squashed parameters chosen via the center crop.
    pub params: [f64; 8],
    /// Mean loss/PSNR over seeded random-crop repeats.
    pub repeat_mean_loss: f64,
    pub repeat_mean_psnr: f64,
    pub identity_loss: f64,
    pub identity_psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_params: Option<[f64; 8]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_predictor_loss: f64,
    pub mean_repeat_loss: f64,
    pub mean_identity_loss: f64,
    pub mean_predictor_psnr: f64,
    pub mean_identity_psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_oracle_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_oracle_psnr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub repeats: usize,
    pub config_digest: String,
    pub wall_time_s: f64,
    pub images: Vec<ImageReport>,
    pub aggregates: Aggregates,
}

impl RunReport {
    /// The structural invariant: the oracle can never lose to the identity
    /// baseline (it minimizes over a superset containing it).
    pub fn check_invariants(&self) -> Result<()> {
        for img in &self.images {
            if let Some(oracle) = img.oracle_loss {
                if oracle > img.identity_loss {
                    anyhow::bail!(
                        "oracle loss {} exceeds identity loss {} on image '{}'",
                        oracle,
                        img.identity_loss,
                        img.name
                    );
                }
            }
        }
        Ok(())
    }

    pub fn to_text_table(&self) -> String {
        let mut header = vec!["image", "pred_loss", "identity", "pred_psnr", "id_psnr"];
        let with_oracle = self.images.iter().any(|i| i.oracle_loss.is_some());
        if with_oracle {
            header.push("oracle");
        }
        let rows: Vec<Vec<String>> = self
            .images
            .iter()
            .map(|i| {
                let mut row = vec![
                    i.name.clone(),
                    sig6(i.predictor_loss),
                    sig6(i.identity_loss),
                    sig6(i.predictor_psnr),
                    sig6(i.identity_psnr),
                ];
                if with_oracle {
                    row.push(i.oracle_loss.map(sig6).unwrap_or_default());
                }
                row
            })
            .collect();
        aligned_table(&header, &rows)
    }
}

fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn enhance_with_model(
    model: &PredictorModel,
    dark: &Image,
    crop: &Image,
    spec: &PipelineSpec,
) -> Result<(LLEParams, Image)> {
    let (raw, _) = model.predict(crop, 0)?;
    let (params, _) = squash(&raw);
    let out = pipeline_apply(dark, &params, spec)?;
    Ok((params, out))
}

/// Evaluate a model on a dataset; `config_digest` is echoed into the
/// report for provenance.
pub fn evaluate(
    model: &PredictorModel,
    data: &LoadedDataset,
    task: &TaskContext,
    spec: &PipelineSpec,
    grid: &GridSpec,
    settings: &EvalSettings,
    config_digest: u64,
) -> Result<RunReport> {
    let start = Instant::now();
    let mut eval_model = model.clone();
    eval_model.set_mode(Mode::Eval);
    let identity = LLEParams::identity();
    let n = data.pairs.len();
    let images: Vec<ImageReport> = map_indexed(n, settings.threads, |idx| -> ImageReport {
        let pair = &data.pairs[idx];
        let reference = task_reference(task.kind, pair).expect("reference assets");
        let run = |img: &Image| -> (f64, f64) {
            let loss = task.loss(img, &reference).expect("task loss");
            let p = psnr(img, &pair.bright).expect("psnr shapes");
            (loss, p)
        };
        let center = center_crop(&pair.dark, settings.crop_size).expect("center crop");
        let (params, enhanced) =
            enhance_with_model(&eval_model, &pair.dark, &center, spec).expect("predictor path");
        let (predictor_loss, predictor_psnr) = run(&enhanced);
        let mut rep_losses = Vec::with_capacity(settings.repeats);
        let mut rep_psnrs = Vec::with_capacity(settings.repeats);
        for r in 0..settings.repeats {
            let crop_seed = SplitMix64::derive(
                settings.seed,
                EVAL_CROP_LABEL,
                (r * n + idx) as u64,
            )
            .next_u64();
            let crop =
                random_crop(&pair.dark, settings.crop_size, crop_seed).expect("random crop");
            let (_, out) =
                enhance_with_model(&eval_model, &pair.dark, &crop, spec).expect("predictor path");
            let (l, p) = run(&out);
            rep_losses.push(l);
            rep_psnrs.push(p);
        }
        let id_out = pipeline_apply(&pair.dark, &identity, spec).expect("identity pipeline");
        let (identity_loss, identity_psnr) = run(&id_out);
        let (oracle_loss, oracle_psnr, oracle_params) = if settings.include_oracle {
            let (op, ol) =
                grid_search(&pair.dark, task, &reference, grid, spec).expect("grid search");
            let oout = pipeline_apply(&pair.dark, &op, spec).expect("oracle pipeline");
            (
                Some(ol),
                Some(psnr(&oout, &pair.bright).expect("psnr shapes")),
                Some(op.to_array()),
            )
        } else {
            (None, None, None)
        };
        ImageReport {
            name: pair.name.clone(),
            predictor_loss,
            predictor_psnr,
            params: params.to_array(),
            repeat_mean_loss: sorted_mean(&rep_losses),
            repeat_mean_psnr: sorted_mean(&rep_psnrs),
            identity_loss,
            identity_psnr,
            oracle_loss,
            oracle_psnr,
            oracle_params,
        }
    });
    let mean = |f: &dyn Fn(&ImageReport) -> f64| -> f64 {
        images.iter().map(|i| f(i)).sum::<f64>() / n.max(1) as f64
    };
    let aggregates = Aggregates {
        mean_predictor_loss: mean(&|i| i.predictor_loss),
        mean_repeat_loss: mean(&|i| i.repeat_mean_loss),
        mean_identity_loss: mean(&|i| i.identity_loss),
        mean_predictor_psnr: mean(&|i| i.predictor_psnr),
        mean_identity_psnr: mean(&|i| i.identity_psnr),
        mean_oracle_loss: settings
            .include_oracle
            .then(|| mean(&|i| i.oracle_loss.unwrap_or(f64::NAN))),
        mean_oracle_psnr: settings
            .include_oracle
            .then(|| mean(&|i| i.oracle_psnr.unwrap_or(f64::NAN))),
    };
    let report = RunReport {
        seed: settings.seed,
        repeats: settings.repeats,
        config_digest: format!("{config_digest:016x}"),
        wall_time_s: start.elapsed().as_secs_f64(),
        images,
        aggregates,
    };
    report.check_invariants()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfigFile;
    use crate::dataset::{load_dataset, synthesize, Attenuation, SynthSettings};
    use crate::scenes::write_corpus;
    use crate::train::train;

    fn dataset(n: usize, seed: u64) -> (tempfile::TempDir, LoadedDataset) {
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
        let d = load_dataset(out.path()).unwrap();
        (out, d)
    }

    #[test]
    fn report_structure_and_oracle_dominance() {
        let (_dir, data) = dataset(3, 31);
        let cfg = TrainConfigFile {
            epochs: 1,
            batch_size: 2,
            crop_size: 16,
            seed: 4,
            ..TrainConfigFile::default()
        };
        let outcome = train(&cfg, &data).unwrap();
        let spec = cfg.pipeline.to_spec().unwrap();
        // a small grid keeps the test fast
        let grid = GridSpec {
            a: vec![1.0, 16.0, 64.0],
            gamma: vec![1.0],
            sigma1: vec![0.1],
            sigma2: vec![0.01],
        };
        let settings = EvalSettings {
            repeats: 2,
            crop_size: 16,
            include_oracle: true,
            ..EvalSettings::default()
        };
        let report = evaluate(
            &outcome.model,
            &data,
            &outcome.task,
            &spec,
            &grid,
            &settings,
            0xABC,
        )
        .unwrap();
        assert_eq!(report.images.len(), 3);
        for img in &report.images {
            assert!(img.oracle_loss.unwrap() <= img.identity_loss);
        }
        let table = report.to_text_table();
        assert!(table.contains("oracle"));
        // deterministic rerun
        let again = evaluate(
            &outcome.model,
            &data,
            &outcome.task,
            &spec,
            &grid,
            &settings,
            0xABC,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&report.images).unwrap(),
            serde_json::to_string(&again.images).unwrap()
        );
    }

    #[test]
    fn repeat_mean_is_permutation_invariant() {
        // sorted_mean must not depend on value order
        let a = sorted_mean(&[0.3, 0.1, 0.2]);
        let b = sorted_mean(&[0.2, 0.3, 0.1]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn threaded_eval_matches_single() {
        let (_dir, data) = dataset(4, 33);
        let cfg = TrainConfigFile {
            epochs: 1,
            batch_size: 2,
            crop_size: 16,
            seed: 5,
            ..TrainConfigFile::default()
        };
        let outcome = train(&cfg, &data).unwrap();
        let spec = cfg.pipeline.to_spec().unwrap();
        let grid = GridSpec::default();
        let mk = |threads| EvalSettings {
            repeats: 1,
            crop_size: 16,
            threads,
            ..EvalSettings::default()
        };
        let a = evaluate(&outcome.model, &data, &outcome.task, &spec, &grid, &mk(1), 1).unwrap();
        let b = evaluate(&outcome.model, &data, &outcome.task, &spec, &grid, &mk(4), 1).unwrap();
        assert_eq!(
            serde_json::to_string(&a.images).unwrap(),
            serde_json::to_string(&b.images).unwrap()
        );
    }
}
