//! Exhaustive per-image parameter search.
//!
//! The grid is an upper-bound probe: it evaluates the pipeline at every
//! point of a geometric lattice over the parameter ranges and returns the
//! argmin by task loss. Sigma values are tied across channels to keep the
//! default search at 9·7·5·5 = 1575 points; ties break toward the earliest
//! point in the documented iteration order (gain outermost, then gamma,
//! then σ₁, then σ₂).

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::math;
use crate::params::{LLEParams, PARAM_RANGES};
use crate::pipeline::{Operator, PipelineSpec};
use crate::tasks::{TaskContext, TaskReference};

/// Per-parameter search values. Defaults: 9 log-spaced gains over
/// [1, 256], 7 log-spaced gammas over [0.2, 5], 5 log-spaced sigmas over
/// each filter range; σ values are shared by the three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub a: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            a: log_spaced(PARAM_RANGES[0].min, PARAM_RANGES[0].max, 9),
            gamma: log_spaced(PARAM_RANGES[1].min, PARAM_RANGES[1].max, 7),
            sigma1: log_spaced(PARAM_RANGES[2].min, PARAM_RANGES[2].max, 5),
            sigma2: log_spaced(PARAM_RANGES[5].min, PARAM_RANGES[5].max, 5),
        }
    }
}

impl GridSpec {
    /// Every value must sit inside its parameter range, and the identity
    /// point (a = 1, γ = 1, minimal σ₁) must be present so the search
    /// result can never lose to the unenhanced baseline.
    pub fn validate(&self) -> Result<()> {
        let axes: [(&[f64], usize, &str); 4] = [
            (&self.a, 0, "a"),
            (&self.gamma, 1, "gamma"),
            (&self.sigma1, 2, "sigma1"),
            (&self.sigma2, 5, "sigma2"),
        ];
        for (values, range_idx, name) in axes {
            if values.is_empty() {
                return Err(CoreError::InvalidConfig {
                    message: alloc::format!("grid axis {name} is empty"),
                });
            }
            let range = PARAM_RANGES[range_idx];
            for &v in values {
                if !v.is_finite() || v < range.min || v > range.max {
                    return Err(CoreError::InvalidConfig {
                        message: alloc::format!(
                            "grid value {v} for {name} outside [{}, {}]",
                            range.min,
                            range.max
                        ),
                    });
                }
            }
        }
        let identity = LLEParams::identity();
        let has = |vals: &[f64], x: f64| vals.iter().any(|&v| v == x);
        if !has(&self.a, identity.a)
            || !has(&self.gamma, identity.gamma)
            || !has(&self.sigma1, identity.sigma1[0])
        {
            return Err(CoreError::InvalidConfig {
                message: alloc::string::String::from(
                    "grid must contain the identity point (a=1, gamma=1, minimal sigma1)",
                ),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.a.len() * self.gamma.len() * self.sigma1.len() * self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters at lattice coordinates, σ tied across channels.
    pub fn params_at(&self, ia: usize, ig: usize, is1: usize, is2: usize) -> LLEParams {
        LLEParams {
            a: self.a[ia],
            gamma: self.gamma[ig],
            sigma1: [self.sigma1[is1]; 3],
            sigma2: [self.sigma2[is2]; 3],
        }
    }

    /// Flattened lattice coordinates in iteration order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let (ng, ns1, ns2) = (self.gamma.len(), self.sigma1.len(), self.sigma2.len());
        (0..self.len()).map(move |i| {
            let is2 = i % ns2;
            let is1 = (i / ns2) % ns1;
            let ig = (i / (ns2 * ns1)) % ng;
            let ia = i / (ns2 * ns1 * ng);
            (ia, ig, is1, is2)
        })
    }
}

/// Geometric ladder with exact endpoints; interior points within 1e-9 of
/// 1.0 are snapped to exactly 1.0 so identity checks are exact.
pub fn log_spaced(min: f64, max: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 2 && min > 0.0 && max > min);
    let lo = math::ln(min);
    let hi = math::ln(max);
    (0..n)
        .map(|i| {
            if i == 0 {
                min
            } else if i == n - 1 {
                max
            } else {
                let t = i as f64 / (n - 1) as f64;
                let v = math::exp(lo + t * (hi - lo));
                if math::abs(v - 1.0) < 1e-9 {
                    1.0
                } else {
                    v
                }
            }
        })
        .collect()
}

/// Exhaustively evaluate the pipeline over the grid and return the
/// loss-minimizing parameters. Stage outputs are memoized across
/// consecutive lattice points: a pipeline stage is recomputed only when a
/// parameter it consumes (or an earlier stage) changed, which preserves
/// the documented iteration order while skipping redundant work.
pub fn grid_search(
    img: &Image,
    task: &TaskContext,
    reference: &TaskReference,
    grid: &GridSpec,
    spec: &PipelineSpec,
) -> Result<(LLEParams, f64)> {
    grid.validate()?;
    let n_stages = spec.order().len();
    let mut stage_cache: Vec<Option<(StageKey, Image)>> = alloc::vec![None; n_stages];
    let mut best: Option<(LLEParams, f64)> = None;
    for (ia, ig, is1, is2) in grid.indices() {
        let params = grid.params_at(ia, ig, is1, is2);
        let keys: Vec<StageKey> = spec
            .order()
            .iter()
            .map(|op| StageKey::for_op(*op, ia, ig, is1, is2))
            .collect();
        let first_dirty = (0..n_stages)
            .find(|&si| !matches!(&stage_cache[si], Some((k, _)) if *k == keys[si]))
            .unwrap_or(n_stages);
        for si in first_dirty..n_stages {
            let (head, tail) = stage_cache.split_at_mut(si);
            let input: &Image = if si == 0 {
                img
            } else {
                &head[si - 1].as_ref().expect("earlier stage cached").1
            };
            let out = match spec.order()[si] {
                Operator::Exposure => crate::pipeline::exposure(input, params.a)?,
                Operator::Gamma => crate::pipeline::gamma(input, params.gamma)?,
                Operator::Smoothing => crate::bilateral::bilateral(
                    input,
                    &params.sigma1,
                    &params.sigma2,
                    spec.window_half_width(),
                )?,
            };
            tail[0] = Some((keys[si], out));
        }
        let current = &stage_cache[n_stages - 1].as_ref().expect("final stage").1;
        let loss = task.loss(current, reference)?;
        let better = match &best {
            None => true,
            Some((_, best_loss)) => loss < *best_loss,
        };
        if better {
            best = Some((params, loss));
        }
    }
    Ok(best.expect("grid validated nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StageKey {
    op: u8,
    idx: (usize, usize, usize, usize),
}

impl StageKey {
    fn for_op(op: Operator, ia: usize, ig: usize, is1: usize, is2: usize) -> Self {
        // each stage's key only includes the lattice coordinates it reads
        let idx = match op {
            Operator::Exposure => (ia, 0, 0, 0),
            Operator::Gamma => (0, ig, 0, 0),
            Operator::Smoothing => (0, 0, is1, is2),
        };
        StageKey {
            op: op.letter() as u8,
            idx,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::pipeline_apply;
    use crate::rng::SplitMix64;
    use crate::tasks::TaskKind;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        Image::from_fn(h, w, |_, _| {
            [rng.next_f64(), rng.next_f64(), rng.next_f64()]
        })
    }

    #[test]
    fn default_grid_is_valid_and_sized() {
        let g = GridSpec::default();
        g.validate().unwrap();
        assert_eq!(g.len(), 9 * 7 * 5 * 5);
        assert_eq!(g.a[0], 1.0);
        assert_eq!(g.a[8], 256.0);
        assert_eq!(g.gamma[3], 1.0, "gamma ladder must pass through 1");
        assert_eq!(g.sigma1[0], 0.1);
        assert_eq!(g.sigma2[0], 0.01);
    }

    #[test]
    fn identity_only_grid_returns_identity() {
        let id = LLEParams::identity();
        let grid = GridSpec {
            a: alloc::vec![id.a],
            gamma: alloc::vec![id.gamma],
            sigma1: alloc::vec![id.sigma1[0]],
            sigma2: alloc::vec![id.sigma2[0]],
        };
        let img = random_image(8, 8, 3);
        let reference = TaskReference::Image(random_image(8, 8, 4));
        let task = TaskContext::new(TaskKind::RefMse);
        let spec = PipelineSpec::default();
        let (params, loss) = grid_search(&img, &task, &reference, &grid, &spec).unwrap();
        assert_eq!(params, id);
        let direct = pipeline_apply(&img, &id, &spec).unwrap();
        let expect = task
            .loss(&direct, &reference)
            .unwrap();
        assert_eq!(loss, expect);
    }

    #[test]
    fn never_worse_than_identity() {
        let grid = GridSpec::default();
        let spec = PipelineSpec::default();
        let task = TaskContext::new(TaskKind::RefMse);
        for seed in 0..4 {
            let bright = random_image(10, 10, 100 + seed);
            let dark = bright.map(|v| (v * 0.02 * 255.0).round() / 255.0);
            let reference = TaskReference::Image(bright.clone());
            let (_, loss) = grid_search(&dark, &task, &reference, &grid, &spec).unwrap();
            let id_out = pipeline_apply(&dark, &LLEParams::identity(), &spec).unwrap();
            let id_loss = task.loss(&id_out, &reference).unwrap();
            assert!(loss <= id_loss, "seed {seed}: {loss} > {id_loss}");
        }
    }

    #[test]
    fn memoized_search_matches_naive_search() {
        let grid = GridSpec {
            a: alloc::vec![1.0, 8.0, 64.0],
            gamma: alloc::vec![0.5, 1.0],
            sigma1: alloc::vec![0.1, 1.0],
            sigma2: alloc::vec![0.01, 0.3],
        };
        let img = random_image(7, 7, 9).map(|v| v * 0.05);
        let bright = random_image(7, 7, 10);
        let reference = TaskReference::Image(bright);
        let task = TaskContext::new(TaskKind::RefMse);
        for letters in ["EGS", "SGE", "GE"] {
            let spec = PipelineSpec::parse(letters, 1).unwrap();
            let (params, loss) = grid_search(&img, &task, &reference, &grid, &spec).unwrap();
            // naive re-evaluation
            let mut best_loss = f64::INFINITY;
            let mut best_params = LLEParams::identity();
            for (ia, ig, is1, is2) in grid.indices() {
                let p = grid.params_at(ia, ig, is1, is2);
                let out = pipeline_apply(&img, &p, &spec).unwrap();
                let l = task.loss(&out, &reference).unwrap();
                if l < best_loss {
                    best_loss = l;
                    best_params = p;
                }
            }
            assert_eq!(loss, best_loss, "order {letters}");
            assert_eq!(params, best_params, "order {letters}");
        }
    }
}
