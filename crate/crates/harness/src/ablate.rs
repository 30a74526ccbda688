//! Operator subset and ordering ablations: train one predictor per
//! pipeline variant with identical seeds and settings, evaluate each on
//! the test split of every dataset, and emit a table of test losses.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use lle_core::grid::GridSpec;
use lle_core::PipelineSpec;

use crate::config::{PipelineSpecConfig, TrainConfigFile};
use crate::dataset::LoadedDataset;
use crate::evaluate::{evaluate, EvalSettings};
use crate::report::{aligned_table, sig6};
use crate::train::train;

/// Which pipeline variants to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantSet {
    /// All six orderings of the full chain.
    Orders,
    /// The two-operator subsets plus the full chain.
    Subsets,
}

impl VariantSet {
    pub fn specs(self, window_half_width: usize) -> Vec<PipelineSpec> {
        match self {
            VariantSet::Orders => PipelineSpec::all_orderings(window_half_width),
            VariantSet::Subsets => PipelineSpec::subset_variants(window_half_width),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Mean center-crop test loss per dataset, in dataset order.
    pub test_loss: Vec<f64>,
    pub test_psnr: Vec<f64>,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset_names: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text_table(&self) -> String {
        let mut header: Vec<String> = vec!["variant".into()];
        for n in &self.dataset_names {
            header.push(format!("loss[{n}]"));
        }
        header.push("train_loss".into());
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.variant.clone()];
                row.extend(r.test_loss.iter().map(|v| sig6(*v)));
                row.push(sig6(r.final_train_loss));
                row
            })
            .collect();
        aligned_table(&header_refs, &rows)
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Train and evaluate every variant from the same seed and settings.
///
/// `train_sets` and `test_sets` pair up by index; the table gets one loss
/// column per pair (named by tier when the manifest records one).
pub fn ablate(
    train_sets: &[LoadedDataset],
    test_sets: &[LoadedDataset],
    names: &[String],
    base_cfg: &TrainConfigFile,
    variants: &[PipelineSpec],
    eval_settings: &EvalSettings,
) -> Result<AblationTable> {
    anyhow::ensure!(
        train_sets.len() == test_sets.len() && train_sets.len() == names.len(),
        "train/test/name counts differ"
    );
    anyhow::ensure!(!variants.is_empty(), "no pipeline variants requested");
    let grid = GridSpec::default();
    let mut rows = Vec::with_capacity(variants.len());
    for spec in variants {
        let mut cfg = base_cfg.clone();
        cfg.pipeline = PipelineSpecConfig::from_spec(spec);
        let mut losses = Vec::with_capacity(train_sets.len());
        let mut psnrs = Vec::with_capacity(train_sets.len());
        let mut final_train_loss = f64::NAN;
        for (train_data, test_data) in train_sets.iter().zip(test_sets) {
            let outcome = train(&cfg, train_data)?;
            if let Some(last) = outcome.history.last() {
                final_train_loss = last.mean_loss;
            }
            let report = evaluate(
                &outcome.model,
                test_data,
                &outcome.task,
                spec,
                &grid,
                eval_settings,
                0,
            )?;
            losses.push(report.aggregates.mean_predictor_loss);
            psnrs.push(report.aggregates.mean_predictor_psnr);
        }
        rows.push(AblationRow {
            variant: spec.letters(),
            test_loss: losses,
            test_psnr: psnrs,
            final_train_loss,
        });
    }
    Ok(AblationTable {
        dataset_names: names.to_vec(),
        rows,
    })
}
