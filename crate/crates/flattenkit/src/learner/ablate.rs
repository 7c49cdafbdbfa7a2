//! The transform ablation: row-major vs nested vs per-sample random,
//! trained under identical budgets and seeds, reported side by side.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FlattenPlan, GridSpec};
use crate::ingest::{load_manifest, read_clip_tensor, resolve_clip_path};
use crate::learner::train::{train, TrainOutcome};
use crate::learner::TrainConfig;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    RowMajor,
    Nested,
    Random,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 3] {
        [
            AblationVariant::RowMajor,
            AblationVariant::Nested,
            AblationVariant::Random,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::RowMajor => "row-major",
            AblationVariant::Nested => "nested",
            AblationVariant::Random => "random",
        }
    }
}

/// Shared budget for the three variants.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Training recipe; its `seed` field is replaced by each entry of
    /// `seeds` in turn.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Sub-sequence count for the nested variant; `None` uses the default
    /// split (`sqrt(t)` for fourth-power frame counts).
    pub nested_n: Option<usize>,
}

impl AblationConfig {
    pub fn new(train: TrainConfig, seeds: Vec<u64>) -> Self {
        AblationConfig {
            train,
            seeds,
            nested_n: None,
        }
    }
}

/// One (variant, seed) training run.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: AblationVariant,
    pub seed: u64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub final_train_loss: f32,
    pub best_epoch: usize,
}

/// Per-variant means over seeds.
#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub top1: f64,
    pub top5: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    /// Exactly three rows: row-major, nested, random.
    pub summaries: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn summary(&self, variant: AblationVariant) -> &VariantSummary {
        self.summaries
            .iter()
            .find(|s| s.variant == variant)
            .unwrap()
    }

    /// `variant,top1,top5` rows for the three variants.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,top1,top5\n");
        for s in &self.summaries {
            out.push_str(&format!("{},{},{}\n", s.variant.name(), s.top1, s.top5));
        }
        out
    }

    /// Pairwise top-1 gaps, in points of accuracy.
    pub fn gaps_csv(&self) -> String {
        let row = self.summary(AblationVariant::RowMajor).top1;
        let nested = self.summary(AblationVariant::Nested).top1;
        let random = self.summary(AblationVariant::Random).top1;
        let mut out = String::from("pair,top1_gap\n");
        out.push_str(&format!("row-major_vs_nested,{}\n", row - nested));
        out.push_str(&format!("row-major_vs_random,{}\n", row - random));
        out.push_str(&format!("nested_vs_random,{}\n", nested - random));
        out
    }

    /// How many seeds put row-major strictly above random on val top-1.
    pub fn ordering_wins(&self) -> usize {
        let mut wins = 0;
        for seed in self.seeds() {
            let top1 = |v: AblationVariant| {
                self.runs
                    .iter()
                    .find(|r| r.variant == v && r.seed == seed)
                    .map(|r| r.val_top1)
                    .unwrap()
            };
            if top1(AblationVariant::RowMajor) > top1(AblationVariant::Random) {
                wins += 1;
            }
        }
        wins
    }

    fn seeds(&self) -> Vec<u64> {
        let mut seeds = Vec::new();
        for r in &self.runs {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        seeds
    }
}

/// Plan for a variant over `grid`. Random plans get a per-run sub-seed so
/// different training seeds shuffle differently, and are resampled per
/// access during training.
pub fn variant_plan(
    variant: AblationVariant,
    grid: GridSpec,
    nested_n: Option<usize>,
    seed: u64,
) -> Result<FlattenPlan> {
    match variant {
        AblationVariant::RowMajor => Ok(FlattenPlan::row_major(grid)),
        AblationVariant::Nested => match nested_n {
            Some(n) => FlattenPlan::nested(grid, n),
            None => FlattenPlan::nested_default(grid),
        },
        AblationVariant::Random => Ok(FlattenPlan::random_seeded(grid, derive_seed(seed, 7))),
    }
}

/// Grid matching the clips behind a manifest (square layout).
pub fn grid_for_manifest(manifest: &Path) -> Result<GridSpec> {
    let entries = load_manifest(manifest)?;
    let first = entries.first().ok_or(Error::EmptyDataset)?;
    let clip = read_clip_tensor(&resolve_clip_path(manifest, first))?;
    GridSpec::square_for_sequence(&clip)
}

/// Trains every (variant, seed) pair under the shared budget and returns
/// the per-run numbers plus per-variant means. Accuracy is the best val
/// top-1 of each run; the loss column is the final-epoch training loss.
pub fn run_ablation(
    train_manifest: &Path,
    val_manifest: &Path,
    config: &AblationConfig,
) -> Result<AblationReport> {
    if config.seeds.is_empty() {
        return Err(Error::Unconfigured("ablation needs at least one seed"));
    }
    let grid = grid_for_manifest(train_manifest)?;
    let mut runs = Vec::new();
    for variant in AblationVariant::all() {
        for &seed in &config.seeds {
            let plan = variant_plan(variant, grid, config.nested_n, seed)?;
            let train_cfg = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let outcome: TrainOutcome = train(&train_cfg, train_manifest, val_manifest, &plan)?;
            runs.push(AblationRun {
                variant,
                seed,
                val_top1: outcome.best_val_top1,
                val_top5: outcome
                    .history
                    .iter()
                    .map(|h| h.val_top5)
                    .fold(f64::NEG_INFINITY, f64::max),
                final_train_loss: outcome.final_train_loss(),
                best_epoch: outcome.best_epoch,
            });
        }
    }

    let summaries = AblationVariant::all()
        .iter()
        .map(|&variant| {
            let of_variant: Vec<&AblationRun> =
                runs.iter().filter(|r| r.variant == variant).collect();
            let n = of_variant.len() as f64;
            VariantSummary {
                variant,
                top1: of_variant.iter().map(|r| r.val_top1).sum::<f64>() / n,
                top5: of_variant.iter().map(|r| r.val_top5).sum::<f64>() / n,
                final_train_loss: of_variant
                    .iter()
                    .map(|r| r.final_train_loss as f64)
                    .sum::<f64>()
                    / n,
            }
        })
        .collect();

    Ok(AblationReport { runs, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthDatasetSpec};
    use tempfile::tempdir;

    #[test]
    fn variant_plans_have_expected_kinds() {
        let grid = GridSpec::new(4, 4, 32, 32).unwrap();
        let row = variant_plan(AblationVariant::RowMajor, grid, None, 1).unwrap();
        assert_eq!(row.kind.name(), "row-major");
        let nested = variant_plan(AblationVariant::Nested, grid, None, 1).unwrap();
        assert_eq!(nested.kind.name(), "nested");
        let random = variant_plan(AblationVariant::Random, grid, None, 1).unwrap();
        assert_eq!(random.kind.name(), "random");
        // Different seeds shuffle differently.
        let random2 = variant_plan(AblationVariant::Random, grid, None, 2).unwrap();
        assert_ne!(random, random2);
    }

    #[test]
    fn report_schema_has_three_variant_rows() {
        let dir = tempdir().unwrap();
        let spec = SynthDatasetSpec::new(1, 1, 11);
        let out = generate_dataset(&spec, dir.path()).unwrap();
        let cfg = AblationConfig::new(
            TrainConfig {
                epochs: 1,
                warmup_epochs: 0,
                batch: 8,
                ..TrainConfig::new(0)
            },
            vec![1],
        );
        let report = run_ablation(&out.train_manifest, &out.val_manifest, &cfg).unwrap();
        assert_eq!(report.runs.len(), 3);
        let csv = report.summary_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "variant,top1,top5");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("row-major,"));
        assert!(lines[2].starts_with("nested,"));
        assert!(lines[3].starts_with("random,"));
        assert_eq!(report.gaps_csv().lines().count(), 4);
        assert!(report.ordering_wins() <= 1);
    }
}
