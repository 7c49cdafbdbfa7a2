//! Subcommand implementations: thin, validated delegation into the
//! library, plus the file outputs each run leaves behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use flattenkit::grid::{
    square_grid_for, FlattenPlan, FrameSequence, GridSpec, PlanKind, RandomOrder,
};
use flattenkit::ingest::{
    load_manifest, read_clip_tensor, read_flat_tensor, read_frame_dir, write_clip_tensor,
    write_composite_png, write_flat_tensor, write_frame_dir, Normalization,
};
use flattenkit::learner::ablate::{run_ablation, AblationConfig};
use flattenkit::learner::params::ParamStore;
use flattenkit::learner::train::{evaluate, train_to_dir};
use flattenkit::learner::{ConvNetSpec, TrainConfig};
use flattenkit::sampler::{make_views, uniform_sample_indices, ViewSpec};
use flattenkit::synth::{default_classes, generate_dataset, SynthDatasetSpec};

use crate::config::{resolve_seed, RunConfig};
use crate::{
    AblateArgs, CliError, EvalArgs, FlattenArgs, KindArg, NormalizeArg, PlanArgs, SampleArgs,
    SynthArgs, TrainArgs, UnflattenArgs,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl NormalizeArg {
    fn to_lib(self) -> Normalization {
        match self {
            NormalizeArg::Clip01 => Normalization::Clip01,
            NormalizeArg::Minmax => Normalization::MinMax,
        }
    }
}

fn parse_grid_text(text: &str) -> Result<(usize, usize), CliError> {
    let (r, c) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("invalid grid {text:?}: expected RxC")))?;
    let rows = r
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid grid rows {r:?}")))?;
    let cols = c
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid grid cols {c:?}")))?;
    if rows == 0 || cols == 0 {
        return Err(usage(format!("invalid grid {text:?}: zero dimension")));
    }
    Ok((rows, cols))
}

/// Grid from flags/config, or the square grid for `t`.
fn resolve_grid(
    plan: &PlanArgs,
    config: &RunConfig,
    t: usize,
    block_h: usize,
    block_w: usize,
) -> Result<GridSpec, CliError> {
    let text = plan.grid.clone().or_else(|| config.flatten.grid.clone());
    let (rows, cols) = match text {
        Some(text) => parse_grid_text(&text)?,
        None => square_grid_for(t)?,
    };
    Ok(GridSpec::new(rows, cols, block_h, block_w)?)
}

/// Plan from flags + config for a `t`-frame clip of `block_h x block_w`
/// frames.
fn resolve_plan(
    plan: &PlanArgs,
    config: &RunConfig,
    t: usize,
    block_h: usize,
    block_w: usize,
) -> Result<FlattenPlan, CliError> {
    let grid = resolve_grid(plan, config, t, block_h, block_w)?;
    let kind = plan.kind.or(match config.flatten.kind.as_deref() {
        Some("row-major") => Some(KindArg::RowMajor),
        Some("nested") => Some(KindArg::Nested),
        Some("random") => Some(KindArg::Random),
        _ => None,
    });
    let built = match kind.unwrap_or(KindArg::RowMajor) {
        KindArg::RowMajor => FlattenPlan::row_major(grid),
        KindArg::Nested => match plan.nested_n.or(config.flatten.nested_n) {
            Some(n) => FlattenPlan::nested(grid, n)?,
            None => FlattenPlan::nested_default(grid)?,
        },
        KindArg::Random => {
            let seed = resolve_seed(plan.seed, config.flatten.seed.or(config.seed));
            FlattenPlan::random_seeded(grid, seed)
        }
    };
    let transpose = plan.transpose || config.flatten.transpose.unwrap_or(false);
    Ok(built.with_transpose(transpose))
}

fn plan_summary(plan: &FlattenPlan) -> String {
    let extra = match &plan.kind {
        PlanKind::Nested { n_sub, .. } => format!(" nested_n={n_sub}"),
        PlanKind::Random(RandomOrder::Seeded(s)) => format!(" seed={s}"),
        PlanKind::Random(RandomOrder::Explicit(_)) => " permutation=explicit".to_string(),
        PlanKind::RowMajor => String::new(),
    };
    format!(
        "kind={}{} grid={}x{} block={}x{} composite={}x{} transpose={}",
        plan.kind.name(),
        extra,
        plan.grid.rows,
        plan.grid.cols,
        plan.grid.block_h,
        plan.grid.block_w,
        plan.grid.composite_h(),
        plan.grid.composite_w(),
        plan.transpose,
    )
}

fn load_source(input: &Path, pattern: &str) -> Result<FrameSequence, CliError> {
    if input.is_dir() {
        Ok(read_frame_dir(input, pattern)?)
    } else {
        Ok(read_clip_tensor(input)?)
    }
}

fn write_resolved_config(out_dir: &Path, value: serde_json::Value) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(out_dir.join("resolved_config.json"), text + "\n")?;
    Ok(())
}

pub fn flatten(args: FlattenArgs, config: &RunConfig) -> Result<(), CliError> {
    if args.output.is_none() && args.png.is_none() {
        return Err(usage("nothing to do: pass --output and/or --png"));
    }
    let mut seq = load_source(&args.input, &args.pattern)?;
    if let Some(frames) = args.frames {
        if frames == 0 {
            return Err(usage("--frames must be positive"));
        }
        let indices = uniform_sample_indices(seq.len(), frames, 0, 1);
        seq = seq.select(&indices)?;
    }
    let plan = resolve_plan(&args.plan, config, seq.len(), seq.height(), seq.width())?;
    let img = plan.flatten(&seq)?;
    println!("{}", plan_summary(&plan));
    if let Some(path) = &args.output {
        write_flat_tensor(path, &img)?;
        println!("wrote composite tensor {}", path.display());
    }
    if let Some(path) = &args.png {
        write_composite_png(&img, path, args.normalize.to_lib())?;
        println!("wrote composite png {}", path.display());
    }
    Ok(())
}

pub fn unflatten(args: UnflattenArgs, config: &RunConfig) -> Result<(), CliError> {
    let img = read_flat_tensor(&args.input)?;
    let (rows, cols) = match (&args.plan.grid, args.frames) {
        (Some(text), _) => parse_grid_text(text)?,
        (None, Some(frames)) => square_grid_for(frames)?,
        (None, None) => {
            return Err(usage(
                "pass --grid RxC or --frames N to recover the block layout",
            ))
        }
    };
    if img.height() % rows != 0 || img.width() % cols != 0 {
        return Err(usage(format!(
            "composite {}x{} is not divisible by a {rows}x{cols} grid",
            img.height(),
            img.width()
        )));
    }
    let (block_h, block_w) = (img.height() / rows, img.width() / cols);
    let mut plan_args = args.plan;
    plan_args.grid = Some(format!("{rows}x{cols}"));
    let plan = resolve_plan(&plan_args, config, rows * cols, block_h, block_w)?;
    let seq = plan.unflatten(&img)?;
    println!("{}", plan_summary(&plan));
    if args.output.extension().is_some_and(|e| e == "fltn") {
        write_clip_tensor(&args.output, &seq)?;
        println!("wrote clip tensor {}", args.output.display());
    } else {
        write_frame_dir(&args.output, &seq, &args.pattern, args.normalize.to_lib())?;
        println!(
            "wrote {} png frames under {}",
            seq.len(),
            args.output.display()
        );
    }
    Ok(())
}

pub fn sample(args: SampleArgs, config: &RunConfig) -> Result<(), CliError> {
    let source = load_source(&args.input, &args.pattern)?;
    let views_text = args
        .views
        .clone()
        .or_else(|| config.views.clone())
        .ok_or_else(|| usage("pass --views AxBxCxD"))?;
    let spec: ViewSpec = views_text.parse()?;
    let views = make_views(&source, &spec)?;
    fs::create_dir_all(&args.output)?;
    for view in &views {
        let name = format!("view_t{}_s{}.fltn", view.temporal_index, view.crop_index);
        write_clip_tensor(&args.output.join(&name), &view.seq)?;
    }
    println!(
        "wrote {} views ({spec}) to {}",
        views.len(),
        args.output.display()
    );
    Ok(())
}

pub fn synth(args: SynthArgs, config: &RunConfig) -> Result<(), CliError> {
    let table = default_classes();
    if args.classes == 0 || args.classes > table.len() {
        return Err(usage(format!(
            "--classes must be between 1 and {}",
            table.len()
        )));
    }
    if args.canvas == 0 || args.frames == 0 {
        return Err(usage("--canvas and --frames must be positive"));
    }
    let spec = SynthDatasetSpec {
        classes: table[..args.classes].to_vec(),
        train_per_class: args.train,
        val_per_class: args.val,
        seed: resolve_seed(args.seed, config.seed),
        canvas: args.canvas,
        frames: args.frames,
        noise_sigma: args.sigma,
    };
    let out = generate_dataset(&spec, &args.out)?;
    write_resolved_config(
        &args.out,
        json!({ "command": "synth", "dataset": spec, "out": args.out }),
    )?;
    println!(
        "wrote {} train / {} val clips; manifests {} and {}",
        out.train_count,
        out.val_count,
        out.train_manifest.display(),
        out.val_manifest.display()
    );
    Ok(())
}

fn resolve_manifests(
    data: &Option<PathBuf>,
    train_manifest: &Option<PathBuf>,
    val_manifest: &Option<PathBuf>,
    config: &RunConfig,
) -> Result<(PathBuf, PathBuf), CliError> {
    let train = train_manifest
        .clone()
        .or_else(|| data.as_ref().map(|d| d.join("train.csv")))
        .or_else(|| config.data.train_manifest.clone());
    let val = val_manifest
        .clone()
        .or_else(|| data.as_ref().map(|d| d.join("val.csv")))
        .or_else(|| config.data.val_manifest.clone());
    match (train, val) {
        (Some(t), Some(v)) => Ok((t, v)),
        _ => Err(usage(
            "pass --data DIR or both --train-manifest and --val-manifest",
        )),
    }
}

fn peek_clip(manifest: &Path) -> Result<FrameSequence, CliError> {
    let entries = load_manifest(manifest)?;
    let first = entries
        .first()
        .ok_or_else(|| usage(format!("manifest {} lists no clips", manifest.display())))?;
    Ok(read_clip_tensor(&flattenkit::ingest::resolve_clip_path(
        manifest, first,
    ))?)
}

fn train_config_from(args: &TrainArgs, config: &RunConfig, seed: u64) -> TrainConfig {
    let defaults = TrainConfig::new(seed);
    let epochs = args
        .epochs
        .or(config.train.epochs)
        .unwrap_or(defaults.epochs);
    // The default warmup shrinks with short runs; an explicit value is
    // validated as-is.
    let warmup_epochs = args
        .warmup
        .or(config.train.warmup_epochs)
        .unwrap_or(defaults.warmup_epochs.min(epochs.saturating_sub(1)));
    TrainConfig {
        epochs,
        batch: args.batch.or(config.train.batch).unwrap_or(defaults.batch),
        base_lr: args.lr.or(config.train.base_lr).unwrap_or(defaults.base_lr),
        warmup_epochs,
        weight_decay: args
            .weight_decay
            .or(config.train.weight_decay)
            .unwrap_or(defaults.weight_decay),
        ..defaults
    }
}

pub fn train(args: TrainArgs, config: &RunConfig) -> Result<(), CliError> {
    let (train_manifest, val_manifest) =
        resolve_manifests(&args.data, &args.train_manifest, &args.val_manifest, config)?;
    let clip = peek_clip(&train_manifest)?;
    let plan = resolve_plan(&args.plan, config, clip.len(), clip.height(), clip.width())?;
    let seed = resolve_seed(args.plan.seed, config.seed);
    let train_config = train_config_from(&args, config, seed);

    write_resolved_config(
        &args.out,
        json!({
            "command": "train",
            "train": train_config,
            "plan": plan,
            "train_manifest": train_manifest,
            "val_manifest": val_manifest,
            "out": args.out,
        }),
    )?;
    let (outcome, ckpt) = train_to_dir(
        &train_config,
        &train_manifest,
        &val_manifest,
        &plan,
        &args.out,
    )?;
    let last = outcome.history.last().unwrap();
    println!("{}", plan_summary(&plan));
    println!(
        "trained {} epochs: final train loss {:.4}, best val top1 {:.4} (epoch {})",
        train_config.epochs, last.train_loss, outcome.best_val_top1, outcome.best_epoch
    );
    println!("history {}", args.out.join("history.csv").display());
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

/// Rebuilds the net architecture from checkpoint tensor shapes plus the
/// composite dimensions.
fn spec_from_checkpoint(
    params: &ParamStore<f32>,
    composite: (usize, usize, usize),
) -> Result<ConvNetSpec, CliError> {
    let mut stages = Vec::new();
    let mut input_c = None;
    let mut i = 0;
    while let Some(w) = params.by_name(&format!("conv{i}.weight")) {
        if i == 0 {
            input_c = Some(w.shape()[1]);
        }
        stages.push(w.shape()[0]);
        i += 1;
    }
    let head = params
        .by_name("head.weight")
        .ok_or_else(|| usage("checkpoint lacks head.weight"))?;
    let n_classes = head.shape()[0];
    let c = input_c.unwrap_or_else(|| head.shape()[1]);
    if c != composite.0 {
        return Err(usage(format!(
            "checkpoint expects {c}-channel input, clips have {}",
            composite.0
        )));
    }
    Ok(ConvNetSpec {
        input: composite,
        stages,
        n_classes,
    })
}

pub fn eval(args: EvalArgs, config: &RunConfig) -> Result<(), CliError> {
    let views_text = args
        .views
        .clone()
        .or_else(|| config.views.clone())
        .ok_or_else(|| usage("pass --views AxBxCxD"))?;
    let view_spec: ViewSpec = views_text.parse()?;
    let plan = resolve_plan(
        &args.plan,
        config,
        view_spec.frames,
        view_spec.resolution,
        view_spec.resolution,
    )?;
    let params = ParamStore::load(&args.checkpoint)?;
    let entries = load_manifest(&args.manifest)?;
    let clip_channels = entries
        .first()
        .map(|e| read_clip_tensor(&flattenkit::ingest::resolve_clip_path(&args.manifest, e)))
        .transpose()?
        .map(|c| c.channels())
        .ok_or_else(|| {
            usage(format!(
                "manifest {} lists no clips",
                args.manifest.display()
            ))
        })?;
    let spec = spec_from_checkpoint(
        &params,
        (
            clip_channels,
            plan.grid.composite_h(),
            plan.grid.composite_w(),
        ),
    )?;
    let report = evaluate(&spec, &params, &args.manifest, &view_spec, &plan)?;
    println!("views,top1,top5,clips");
    println!(
        "{view_spec},{},{},{}",
        report.top1, report.top5, report.clips
    );
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(
            out.join("metrics.csv"),
            format!(
                "views,top1,top5,clips\n{view_spec},{},{},{}\n",
                report.top1, report.top5, report.clips
            ),
        )?;
        let mut confusion = String::new();
        for row in report.confusion.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            confusion.push_str(&cells.join(","));
            confusion.push('\n');
        }
        fs::write(out.join("confusion.csv"), confusion)?;
        write_resolved_config(
            out,
            json!({
                "command": "eval",
                "checkpoint": args.checkpoint,
                "manifest": args.manifest,
                "views": views_text,
                "plan": plan,
            }),
        )?;
        println!("metrics under {}", out.display());
    }
    Ok(())
}

pub fn ablate(args: AblateArgs, config: &RunConfig) -> Result<(), CliError> {
    let (train_manifest, val_manifest) =
        resolve_manifests(&args.data, &args.train_manifest, &args.val_manifest, config)?;
    if args.seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    let defaults = TrainConfig::new(0);
    let budget = TrainConfig {
        epochs: args.epochs,
        warmup_epochs: args.warmup,
        batch: args.batch.or(config.train.batch).unwrap_or(defaults.batch),
        base_lr: args.lr.or(config.train.base_lr).unwrap_or(defaults.base_lr),
        ..defaults
    };
    let ablation_config = AblationConfig {
        train: budget.clone(),
        seeds: args.seeds.clone(),
        nested_n: args.nested_n,
    };
    write_resolved_config(
        &args.out,
        json!({
            "command": "ablate",
            "budget": budget,
            "seeds": args.seeds,
            "nested_n": args.nested_n,
            "train_manifest": train_manifest,
            "val_manifest": val_manifest,
            "out": args.out,
        }),
    )?;
    let report = run_ablation(&train_manifest, &val_manifest, &ablation_config)?;

    let summary = report.summary_csv();
    let gaps = report.gaps_csv();
    fs::write(args.out.join("ablation.csv"), &summary)?;
    fs::write(args.out.join("gaps.csv"), &gaps)?;
    let mut runs = String::from("variant,seed,top1,top5,final_train_loss,best_epoch\n");
    for r in &report.runs {
        runs.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant.name(),
            r.seed,
            r.val_top1,
            r.val_top5,
            r.final_train_loss,
            r.best_epoch
        ));
    }
    fs::write(args.out.join("runs.csv"), runs)?;

    print!("{summary}");
    print!("{gaps}");
    println!(
        "row-major beat random in {}/{} seeds; reports under {}",
        report.ordering_wins(),
        args.seeds.len(),
        args.out.display()
    );
    Ok(())
}
