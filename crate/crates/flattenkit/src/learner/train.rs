//! The training loop, per-epoch validation, multi-view evaluation, and
//! history/checkpoint output.
//!
//! Seed streams: parameter initialization draws from
//! `derive_seed(seed, 101)`, the epoch shuffle from
//! `derive_seed(derive_seed(seed, 102), epoch)`.
//!
//! A seeded random plan is resampled per access during training: clip `i`
//! in epoch `e` is flattened under
//! `derive_seed(derive_seed(plan_seed, 1 + e), i)`. Evaluation instead
//! derives one fixed permutation per clip from
//! `derive_seed(derive_seed(plan_seed, 0), i)`, so eval is reproducible
//! and never shares a stream with training. Plans with an explicit
//! permutation are used verbatim everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FlattenPlan, FrameSequence, PlanKind, RandomOrder};
use crate::ingest::{load_manifest, read_clip_tensor, resolve_clip_path};
use crate::learner::net;
use crate::learner::optim::{lr_at_epoch, AdamW};
use crate::learner::params::ParamStore;
use crate::learner::{ConvNetSpec, TrainConfig};
use crate::rng::{derive_seed, shuffle};
use crate::sampler::{make_views, ViewSpec};

const INIT_STREAM: u64 = 101;
const SHUFFLE_STREAM: u64 = 102;
const EVAL_STREAM: u64 = 0;

/// One history row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f32,
    pub val_top1: f64,
    pub val_top5: f64,
}

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: ConvNetSpec,
    pub history: Vec<EpochStats>,
    pub best_params: ParamStore<f32>,
    pub final_params: ParamStore<f32>,
    pub best_val_top1: f64,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn final_train_loss(&self) -> f32 {
        self.history
            .last()
            .map(|h| h.train_loss)
            .unwrap_or(f32::NAN)
    }
}

pub struct LoadedClips {
    pub clips: Vec<FrameSequence>,
    pub labels: Vec<usize>,
}

/// Loads every clip a manifest references, checking that all clips share
/// one shape.
pub fn load_clips(manifest: &Path) -> Result<LoadedClips> {
    let entries = load_manifest(manifest)?;
    let mut clips = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for entry in &entries {
        let clip = read_clip_tensor(&resolve_clip_path(manifest, entry))?;
        if let Some(first) = clips.first() {
            let a: &FrameSequence = first;
            if a.data().dim() != clip.data().dim() {
                return Err(Error::ShapeMismatch(format!(
                    "clip {} has shape {:?}, expected {:?}",
                    entry.clip_path.display(),
                    clip.data().dim(),
                    a.data().dim()
                )));
            }
        }
        clips.push(clip);
        labels.push(entry.label);
    }
    Ok(LoadedClips { clips, labels })
}

/// Plan used when evaluating clip `clip_id`: seeded random plans get their
/// fixed per-clip permutation, everything else is untouched.
fn eval_plan(plan: &FlattenPlan, clip_id: usize) -> FlattenPlan {
    reseeded(plan, derive_seed_for(plan, EVAL_STREAM, clip_id))
}

/// Plan used when clip `clip_id` is accessed in training epoch `epoch`.
fn train_access_plan(plan: &FlattenPlan, epoch: usize, clip_id: usize) -> FlattenPlan {
    reseeded(plan, derive_seed_for(plan, 1 + epoch as u64, clip_id))
}

fn derive_seed_for(plan: &FlattenPlan, stream: u64, clip_id: usize) -> Option<u64> {
    match &plan.kind {
        PlanKind::Random(RandomOrder::Seeded(s)) => {
            Some(derive_seed(derive_seed(*s, stream), clip_id as u64))
        }
        _ => None,
    }
}

fn reseeded(plan: &FlattenPlan, seed: Option<u64>) -> FlattenPlan {
    match seed {
        Some(seed) => FlattenPlan {
            kind: PlanKind::Random(RandomOrder::Seeded(seed)),
            grid: plan.grid,
            transpose: plan.transpose,
        },
        None => plan.clone(),
    }
}

fn check_plan_fits(plan: &FlattenPlan, clip: &FrameSequence) -> Result<()> {
    if plan.grid.tiles() != clip.len() {
        return Err(Error::GridFrameCountMismatch {
            rows: plan.grid.rows,
            cols: plan.grid.cols,
            frames: clip.len(),
        });
    }
    if plan.grid.block_h != clip.height() || plan.grid.block_w != clip.width() {
        return Err(Error::BlockSizeMismatch {
            block_h: plan.grid.block_h,
            block_w: plan.grid.block_w,
            frame_h: clip.height(),
            frame_w: clip.width(),
        });
    }
    Ok(())
}

fn flatten_pixels(clip: &FrameSequence, plan: &FlattenPlan) -> Result<Array3<f32>> {
    Ok(plan.flatten(clip)?.pixels)
}

fn assemble_batch(composites: &[Array3<f32>]) -> Array4<f32> {
    let (c, h, w) = composites[0].dim();
    let mut batch = Array4::zeros((composites.len(), c, h, w));
    for (s, comp) in composites.iter().enumerate() {
        batch.index_axis_mut(Axis(0), s).assign(comp);
    }
    batch
}

/// Class indices ranked by descending score, ties broken toward the lower
/// index.
fn ranked_classes(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

fn top1_top5(
    spec: &ConvNetSpec,
    params: &ParamStore<f32>,
    composites: &[Array3<f32>],
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut hit1 = 0usize;
    let mut hit5 = 0usize;
    let k = spec.n_classes.min(5);
    for (chunk, chunk_labels) in composites.chunks(batch_size).zip(labels.chunks(batch_size)) {
        let batch = assemble_batch(chunk);
        let logits = net::forward(spec, params, &batch.view())?;
        for (row, &label) in logits.rows().into_iter().zip(chunk_labels) {
            let scores: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let ranked = ranked_classes(&scores);
            if ranked[0] == label {
                hit1 += 1;
            }
            if ranked[..k].contains(&label) {
                hit5 += 1;
            }
        }
    }
    let n = labels.len() as f64;
    Ok((hit1 as f64 / n, hit5 as f64 / n))
}

/// Trains the default net on flattened composites.
///
/// Deterministic in the config seed: identical invocations produce
/// identical histories and parameters, byte for byte. Aborts with
/// [`Error::Divergence`] if the loss ever goes non-finite.
pub fn train(
    config: &TrainConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    plan: &FlattenPlan,
) -> Result<TrainOutcome> {
    train_with_stages(config, train_manifest, val_manifest, plan, None)
}

/// [`train`] with an explicit stage-width override (None = default stages).
pub fn train_with_stages(
    config: &TrainConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    plan: &FlattenPlan,
    stages: Option<Vec<usize>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_ds = load_clips(train_manifest)?;
    let val_ds = load_clips(val_manifest)?;
    if train_ds.clips.is_empty() || val_ds.clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_plan_fits(plan, &train_ds.clips[0])?;
    check_plan_fits(plan, &val_ds.clips[0])?;

    let n_classes = train_ds
        .labels
        .iter()
        .chain(val_ds.labels.iter())
        .max()
        .copied()
        .unwrap()
        + 1;
    let channels = train_ds.clips[0].channels();
    let input = (channels, plan.grid.composite_h(), plan.grid.composite_w());
    let mut spec = ConvNetSpec::with_default_stages(input, n_classes);
    if let Some(stages) = stages {
        spec.stages = stages;
    }
    spec.validate()?;

    let mut params: ParamStore<f32> =
        ParamStore::init(&spec, derive_seed(config.seed, INIT_STREAM))?;
    let mut optimizer = AdamW::new(&params, config);

    let per_access = matches!(plan.kind, PlanKind::Random(RandomOrder::Seeded(_)));
    let fixed_train: Option<Vec<Array3<f32>>> = if per_access {
        None
    } else {
        Some(
            train_ds
                .clips
                .iter()
                .map(|c| flatten_pixels(c, plan))
                .collect::<Result<_>>()?,
        )
    };
    let val_composites: Vec<Array3<f32>> = val_ds
        .clips
        .iter()
        .enumerate()
        .map(|(i, c)| flatten_pixels(c, &eval_plan(plan, i)))
        .collect::<Result<_>>()?;

    let n = train_ds.clips.len();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_params = params.clone();
    let mut best_val_top1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(epoch, config);
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(
            &mut order,
            derive_seed(derive_seed(config.seed, SHUFFLE_STREAM), epoch as u64),
        );

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch) {
            let composites: Vec<Array3<f32>> = match &fixed_train {
                Some(cache) => chunk.iter().map(|&i| cache[i].clone()).collect(),
                None => chunk
                    .par_iter()
                    .map(|&i| {
                        flatten_pixels(&train_ds.clips[i], &train_access_plan(plan, epoch, i))
                    })
                    .collect::<Result<_>>()?,
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| train_ds.labels[i]).collect();
            let batch = assemble_batch(&composites);
            let step = net::loss_and_grad(&spec, &params, &batch.view(), &labels).and_then(
                |(loss, grads)| {
                    optimizer.step(&mut params, &grads, lr as f32)?;
                    Ok(loss)
                },
            );
            let loss = step.map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch },
                other => other,
            })?;
            loss_sum += loss as f64 * chunk.len() as f64;
        }

        let train_loss = (loss_sum / n as f64) as f32;
        let (val_top1, val_top5) = top1_top5(
            &spec,
            &params,
            &val_composites,
            &val_ds.labels,
            config.batch,
        )?;
        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_top1,
            val_top5,
        });
        if val_top1 > best_val_top1 {
            best_val_top1 = val_top1;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainOutcome {
        spec,
        history,
        best_params,
        final_params: params,
        best_val_top1,
        best_epoch,
    })
}

/// History CSV: `epoch,lr,train_loss,val_top1,val_top5`, one row per epoch.
pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,val_top1,val_top5\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.lr, row.train_loss, row.val_top1, row.val_top5
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs [`train`] and writes `history.csv` plus the best-val checkpoint
/// under `out_dir/checkpoint_best/`.
pub fn train_to_dir(
    config: &TrainConfig,
    train_manifest: &Path,
    val_manifest: &Path,
    plan: &FlattenPlan,
    out_dir: &Path,
) -> Result<(TrainOutcome, PathBuf)> {
    let outcome = train(config, train_manifest, val_manifest, plan)?;
    fs::create_dir_all(out_dir)?;
    write_history(&out_dir.join("history.csv"), &outcome.history)?;
    let ckpt = out_dir.join("checkpoint_best");
    outcome.best_params.save(&ckpt)?;
    Ok((outcome, ckpt))
}

/// Multi-view evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    /// `confusion[true_label][predicted]`.
    pub confusion: Array2<u64>,
    pub clips: usize,
}

/// Evaluates a trained net over the `C x D` views of every clip in a
/// manifest: per-view softmax probabilities are averaged, then the
/// prediction is the top class (ties toward the lower index).
pub fn evaluate(
    spec: &ConvNetSpec,
    params: &ParamStore<f32>,
    manifest: &Path,
    view_spec: &ViewSpec,
    plan: &FlattenPlan,
) -> Result<EvalReport> {
    let entries = load_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = spec.n_classes.min(5);
    let per_clip: Vec<(usize, usize, bool, bool)> = entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| -> Result<(usize, usize, bool, bool)> {
            if entry.label >= spec.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: entry.label,
                    n_classes: spec.n_classes,
                });
            }
            let clip = read_clip_tensor(&resolve_clip_path(manifest, entry))?;
            let views = make_views(&clip, view_spec)?;
            let plan_i = eval_plan(plan, i);
            let composites: Vec<Array3<f32>> = views
                .iter()
                .map(|v| flatten_pixels(&v.seq, &plan_i))
                .collect::<Result<_>>()?;
            let batch = assemble_batch(&composites);
            let logits = net::forward(spec, params, &batch.view())?;
            let probs = net::softmax_rows(&logits);
            let mut mean = vec![0.0f64; spec.n_classes];
            for row in probs.rows() {
                for (slot, &p) in mean.iter_mut().zip(row.iter()) {
                    *slot += p as f64;
                }
            }
            let inv = 1.0 / probs.nrows() as f64;
            for slot in &mut mean {
                *slot *= inv;
            }
            let ranked = ranked_classes(&mean);
            Ok((
                entry.label,
                ranked[0],
                ranked[0] == entry.label,
                ranked[..k].contains(&entry.label),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = Array2::zeros((spec.n_classes, spec.n_classes));
    let mut hit1 = 0usize;
    let mut hit5 = 0usize;
    for &(label, pred, h1, h5) in &per_clip {
        confusion[[label, pred]] += 1;
        hit1 += h1 as usize;
        hit5 += h5 as usize;
    }
    let n = per_clip.len() as f64;
    Ok(EvalReport {
        top1: hit1 as f64 / n,
        top5: hit5 as f64 / n,
        confusion,
        clips: per_clip.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::synth::{generate_dataset, SynthDatasetSpec};
    use tempfile::tempdir;

    fn tiny_dataset(dir: &Path) -> (PathBuf, PathBuf) {
        let spec = SynthDatasetSpec::new(2, 1, 42);
        let out = generate_dataset(&spec, dir).unwrap();
        (out.train_manifest, out.val_manifest)
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: 1,
            batch: 8,
            ..TrainConfig::new(1)
        }
    }

    fn default_plan() -> FlattenPlan {
        FlattenPlan::row_major(GridSpec::new(4, 4, 32, 32).unwrap())
    }

    #[test]
    fn train_emits_one_history_row_per_epoch() {
        let dir = tempdir().unwrap();
        let (train_m, val_m) = tiny_dataset(dir.path());
        let outcome = train(&tiny_config(3), &train_m, &val_m, &default_plan()).unwrap();
        assert_eq!(outcome.history.len(), 3);
        for (e, row) in outcome.history.iter().enumerate() {
            assert_eq!(row.epoch, e);
            assert!(row.train_loss.is_finite());
            assert!(row.val_top5 >= row.val_top1);
        }
        assert_eq!(outcome.spec.input, (1, 128, 128));
        assert_eq!(outcome.spec.n_classes, 8);
    }

    #[test]
    fn zero_epochs_is_unconfigured() {
        let dir = tempdir().unwrap();
        let (train_m, val_m) = tiny_dataset(dir.path());
        assert!(matches!(
            train(&tiny_config(0), &train_m, &val_m, &default_plan()),
            Err(Error::Unconfigured(_))
        ));
    }

    #[test]
    fn seeded_runs_are_byte_identical() {
        let dir = tempdir().unwrap();
        let (train_m, val_m) = tiny_dataset(dir.path());
        let out_a = dir.path().join("run_a");
        let out_b = dir.path().join("run_b");
        let cfg = tiny_config(2);
        let plan = default_plan();
        train_to_dir(&cfg, &train_m, &val_m, &plan, &out_a).unwrap();
        train_to_dir(&cfg, &train_m, &val_m, &plan, &out_b).unwrap();
        let bytes = |p: &Path| fs::read(p).unwrap();
        assert_eq!(
            bytes(&out_a.join("history.csv")),
            bytes(&out_b.join("history.csv"))
        );
        for name in ["manifest.json", "conv0.weight.fltn", "head.weight.fltn"] {
            assert_eq!(
                bytes(&out_a.join("checkpoint_best").join(name)),
                bytes(&out_b.join("checkpoint_best").join(name)),
                "{name}"
            );
        }
    }

    #[test]
    fn huge_lr_diverges_with_epoch_number() {
        let dir = tempdir().unwrap();
        let (train_m, val_m) = tiny_dataset(dir.path());
        let cfg = TrainConfig {
            base_lr: 1e30,
            ..tiny_config(4)
        };
        match train(&cfg, &train_m, &val_m, &default_plan()) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn per_access_random_still_trains_deterministically() {
        let dir = tempdir().unwrap();
        let (train_m, val_m) = tiny_dataset(dir.path());
        let plan = FlattenPlan::random_seeded(GridSpec::new(4, 4, 32, 32).unwrap(), 9);
        let cfg = tiny_config(2);
        let a = train(&cfg, &train_m, &val_m, &plan).unwrap();
        let b = train(&cfg, &train_m, &val_m, &plan).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn evaluate_single_view_reports_and_confuses() {
        let dir = tempdir().unwrap();
        let (train_m, val_m) = tiny_dataset(dir.path());
        let plan = default_plan();
        let outcome = train(&tiny_config(2), &train_m, &val_m, &plan).unwrap();
        let report = evaluate(
            &outcome.spec,
            &outcome.best_params,
            &val_m,
            &ViewSpec::new(32, 16, 1, 1).unwrap(),
            &plan,
        )
        .unwrap();
        assert_eq!(report.clips, 8);
        assert!(report.top5 >= report.top1);
        assert_eq!(report.confusion.sum(), 8);
        // Multi-view (2 overlapping temporal crops) aggregates per clip.
        let multi = evaluate(
            &outcome.spec,
            &outcome.best_params,
            &val_m,
            &ViewSpec::new(32, 16, 1, 2).unwrap(),
            &plan,
        )
        .unwrap();
        assert_eq!(multi.clips, 8);
        assert_eq!(multi.confusion.sum(), 8);
    }

    #[test]
    fn history_csv_format_is_stable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let rows = vec![EpochStats {
            epoch: 0,
            lr: 0.0002,
            train_loss: 2.25,
            val_top1: 0.125,
            val_top5: 0.625,
        }];
        write_history(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "epoch,lr,train_loss,val_top1,val_top5\n0,0.0002,2.25,0.125,0.625\n"
        );
    }
}
