//! Dataset-wide grid-search runner: the per-image oracle, parallel across
//! images with a deterministic argmin per image.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use lle_core::grid::{grid_search, GridSpec};
use lle_core::image::psnr;
use lle_core::tasks::TaskContext;
use lle_core::{pipeline_apply, LLEParams, PipelineSpec};

use crate::dataset::LoadedDataset;
use crate::parallel::map_indexed;
use crate::report::{aligned_table, sig6};
use crate::train::task_reference;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridImageResult {
    pub name: String,
    pub params: [f64; 8],
    pub loss: f64,
    pub identity_loss: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub grid_points: usize,
    pub images: Vec<GridImageResult>,
    pub mean_loss: f64,
    pub mean_identity_loss: f64,
}

pub fn run_grid_search(
    data: &LoadedDataset,
    task: &TaskContext,
    grid: &GridSpec,
    spec: &PipelineSpec,
    threads: usize,
) -> Result<GridReport> {
    grid.validate()?;
    let identity = LLEParams::identity();
    let images: Vec<GridImageResult> = map_indexed(data.pairs.len(), threads, |idx| {
        let pair = &data.pairs[idx];
        let reference = task_reference(task.kind, pair).expect("reference assets");
        let (params, loss) =
            grid_search(&pair.dark, task, &reference, grid, spec).expect("grid search");
        let id_out = pipeline_apply(&pair.dark, &identity, spec).expect("identity pipeline");
        let identity_loss = task.loss(&id_out, &reference).expect("identity loss");
        let best_out = pipeline_apply(&pair.dark, &params, spec).expect("best pipeline");
        GridImageResult {
            name: pair.name.clone(),
            params: params.to_array(),
            loss,
            identity_loss,
            psnr: psnr(&best_out, &pair.bright).expect("psnr"),
        }
    });
    let n = images.len().max(1) as f64;
    Ok(GridReport {
        grid_points: grid.len(),
        mean_loss: images.iter().map(|i| i.loss).sum::<f64>() / n,
        mean_identity_loss: images.iter().map(|i| i.identity_loss).sum::<f64>() / n,
        images,
    })
}

impl GridReport {
    pub fn to_text_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .images
            .iter()
            .map(|i| {
                vec![
                    i.name.clone(),
                    sig6(i.loss),
                    sig6(i.identity_loss),
                    sig6(i.params[0]),
                    sig6(i.params[1]),
                    sig6(i.psnr),
                ]
            })
            .collect();
        aligned_table(
            &["image", "oracle_loss", "identity", "a", "gamma", "psnr"],
            &rows,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, synthesize, Attenuation, SynthSettings};
    use crate::scenes::write_corpus;
    use lle_core::tasks::TaskKind;

    #[test]
    fn oracle_never_loses_to_identity_and_parallel_matches() {
        let bright = tempfile::tempdir().unwrap();
        write_corpus(bright.path(), 3, 20, 55).unwrap();
        let out = tempfile::tempdir().unwrap();
        synthesize(
            bright.path(),
            out.path(),
            &SynthSettings {
                attenuation: Attenuation::Fixed(0.01),
                read_noise_sigma: 0.0,
                quantize_bits: 8,
                seed: 1,
            },
        )
        .unwrap();
        let data = load_dataset(out.path()).unwrap();
        let task = TaskContext::new(TaskKind::RefMse);
        let grid = GridSpec {
            a: vec![1.0, 32.0, 128.0],
            gamma: vec![0.585, 1.0],
            sigma1: vec![0.1, 1.0],
            sigma2: vec![0.01, 0.3],
        };
        let spec = PipelineSpec::default();
        let single = run_grid_search(&data, &task, &grid, &spec, 1).unwrap();
        for img in &single.images {
            assert!(img.loss <= img.identity_loss, "image {}", img.name);
        }
        let multi = run_grid_search(&data, &task, &grid, &spec, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&single.images).unwrap(),
            serde_json::to_string(&multi.images).unwrap()
        );
        assert!(single.to_text_table().contains("oracle_loss"));
    }
}
