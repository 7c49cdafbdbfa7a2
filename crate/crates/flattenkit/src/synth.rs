//! Synthetic motion clips: a single sprite translating across a blank
//! canvas, labeled by its (direction, speed) motion class.
//!
//! The class design splits information between what survives frame
//! reordering and what does not. Speed and motion axis are recoverable
//! from the unordered set of frames (extent and spacing of the visited
//! positions), but the *sign* of the direction is not: a clip moving right
//! and a clip moving left over the same positions contain exactly the same
//! frames in reverse order. Any classifier that ignores frame order is
//! capped at 50% on such pairs, which is what the transform ablation
//! measures.
//!
//! Everything is deterministic: clip `i` of a dataset draws its start
//! position and noise from the sub-seed `derive_seed(dataset_seed, i)`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FrameSequence;
use crate::ingest::{write_clip_tensor, write_manifest, ManifestEntry};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpriteShape {
    Square,
    Cross,
}

/// Velocity in pixels/frame for a direction in degrees. The y axis is the
/// row index, so 90 degrees moves up (rows decrease).
pub fn velocity(direction_deg: u32, speed: u32) -> Result<(i64, i64)> {
    let s = speed as i64;
    match direction_deg {
        0 => Ok((s, 0)),
        90 => Ok((0, -s)),
        180 => Ok((-s, 0)),
        270 => Ok((0, s)),
        other => Err(Error::InvalidDirection(other)),
    }
}

/// One motion class: a direction/speed pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionClass {
    pub direction_deg: u32,
    pub speed: u32,
}

/// The default 8-class table: directions 0/90/180/270 crossed with speeds
/// 1 and 2, direction-major. `label = dir_index * 2 + speed_index`.
pub fn default_classes() -> Vec<MotionClass> {
    let mut classes = Vec::with_capacity(8);
    for &direction_deg in &[0u32, 90, 180, 270] {
        for &speed in &[1u32, 2] {
            classes.push(MotionClass {
                direction_deg,
                speed,
            });
        }
    }
    classes
}

/// Index of a (direction, speed) pair in the default class table.
pub fn class_label(direction_deg: u32, speed: u32) -> Option<usize> {
    default_classes()
        .iter()
        .position(|c| c.direction_deg == direction_deg && c.speed == speed)
}

/// Default sprite size for a speed. Speed-2 trajectories span 30 px over
/// 16 frames, which on a 32 px canvas leaves room for at most a 2 px
/// sprite; slower classes use a larger odd-sized sprite whose center is
/// unambiguous.
pub fn sprite_size_for_speed(speed: u32) -> usize {
    if speed >= 2 {
        2
    } else {
        5
    }
}

/// Full specification of one rendered clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteClipSpec {
    /// Square canvas side in pixels; clips are single-channel.
    pub canvas: usize,
    pub frames: usize,
    pub shape: SpriteShape,
    pub size: usize,
    pub direction_deg: u32,
    /// Pixels per frame; 0 is allowed only for a static control clip.
    pub speed: u32,
    /// Sprite center at frame 0, `(x, y)`.
    pub start: (i64, i64),
    pub noise_sigma: f32,
    /// Seed for the noise stream.
    pub seed: u64,
}

impl SpriteClipSpec {
    pub fn center_at(&self, frame: usize) -> Result<(i64, i64)> {
        let (vx, vy) = velocity(self.direction_deg, self.speed)?;
        Ok((
            self.start.0 + frame as i64 * vx,
            self.start.1 + frame as i64 * vy,
        ))
    }
}

/// Inclusive start-position bounds keeping a `size`-px sprite inside a
/// `canvas`-px axis for `frames` steps at per-frame velocity `v`.
fn axis_bounds(canvas: usize, frames: usize, size: usize, v: i64) -> Option<(i64, i64)> {
    let half = ((size - 1) / 2) as i64;
    let travel = v * (frames as i64 - 1);
    // The bounding box is [c - half, c - half + size - 1].
    let static_lo = half;
    let static_hi = canvas as i64 - size as i64 + half;
    let (lo, hi) = if v >= 0 {
        (static_lo, static_hi - travel)
    } else {
        (static_lo - travel, static_hi)
    };
    (lo <= hi).then_some((lo, hi))
}

/// Valid start ranges `((x_lo, x_hi), (y_lo, y_hi))` for a motion class.
pub fn start_bounds(
    canvas: usize,
    frames: usize,
    size: usize,
    direction_deg: u32,
    speed: u32,
) -> Result<((i64, i64), (i64, i64))> {
    let (vx, vy) = velocity(direction_deg, speed)?;
    let x = axis_bounds(canvas, frames, size, vx);
    let y = axis_bounds(canvas, frames, size, vy);
    match (x, y) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(Error::NoValidStart {
            dir_deg: direction_deg,
            speed,
            frames,
            canvas,
        }),
    }
}

fn paint_sprite(
    frame: &mut ndarray::ArrayViewMut2<'_, f32>,
    spec: &SpriteClipSpec,
    cx: i64,
    cy: i64,
) {
    let half = ((spec.size - 1) / 2) as i64;
    let x0 = cx - half;
    let y0 = cy - half;
    let s = spec.size as i64;
    for dy in 0..s {
        for dx in 0..s {
            let on = match spec.shape {
                SpriteShape::Square => true,
                SpriteShape::Cross => y0 + dy == cy || x0 + dx == cx,
            };
            if on {
                frame[[(y0 + dy) as usize, (x0 + dx) as usize]] = 1.0;
            }
        }
    }
}

/// Renders a clip: frame `k` shows the sprite at
/// `start + k * speed * (cos theta, -sin theta)` on integer pixels, plus
/// per-pixel Gaussian noise of scale `noise_sigma` drawn frame-major,
/// row-major from the spec's seed.
///
/// The returned label is the class index in the default table, or `None`
/// for combinations outside it (e.g. the static control, speed 0).
pub fn render_clip(spec: &SpriteClipSpec) -> Result<(FrameSequence, Option<usize>)> {
    if spec.canvas == 0 || spec.frames == 0 || spec.size == 0 || spec.size > spec.canvas {
        return Err(Error::ShapeMismatch(format!(
            "invalid sprite clip: canvas {}, frames {}, size {}",
            spec.canvas, spec.frames, spec.size
        )));
    }
    velocity(spec.direction_deg, spec.speed)?;
    let half = ((spec.size - 1) / 2) as i64;
    let mut data = Array4::zeros((spec.frames, 1, spec.canvas, spec.canvas));
    for k in 0..spec.frames {
        let (cx, cy) = spec.center_at(k)?;
        let x0 = cx - half;
        let y0 = cy - half;
        let x1 = x0 + spec.size as i64 - 1;
        let y1 = y0 + spec.size as i64 - 1;
        if x0 < 0 || y0 < 0 || x1 >= spec.canvas as i64 || y1 >= spec.canvas as i64 {
            return Err(Error::SpriteOutOfBounds {
                frame: k,
                x0,
                x1,
                y0,
                y1,
                canvas: spec.canvas,
            });
        }
        let mut frame = data.index_axis_mut(ndarray::Axis(0), k);
        let mut plane = frame.index_axis_mut(ndarray::Axis(0), 0);
        paint_sprite(&mut plane, spec, cx, cy);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = SplitMix64::new(spec.seed);
        for v in data.iter_mut() {
            *v += spec.noise_sigma * rng.normal() as f32;
        }
    }
    let label = class_label(spec.direction_deg, spec.speed);
    Ok((FrameSequence::new(data)?, label))
}

/// Dataset recipe: which classes, how many clips per class and split, and
/// the rendering defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetSpec {
    pub classes: Vec<MotionClass>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
    pub canvas: usize,
    pub frames: usize,
    pub noise_sigma: f32,
}

impl SynthDatasetSpec {
    /// The defaults: 8 classes on a 32 px canvas, 16 frames, sigma 0.05.
    pub fn new(train_per_class: usize, val_per_class: usize, seed: u64) -> Self {
        SynthDatasetSpec {
            classes: default_classes(),
            train_per_class,
            val_per_class,
            seed,
            canvas: 32,
            frames: 16,
            noise_sigma: 0.05,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Sidecar recorded next to the generated corpus. Field order is the
/// stable key order of `dataset.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub classes: Vec<SidecarClass>,
    pub canvas: usize,
    pub frames: usize,
    pub noise_sigma: f32,
    pub seed: u64,
    pub train_per_class: usize,
    pub val_per_class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarClass {
    pub label: usize,
    pub direction_deg: u32,
    pub speed: u32,
    pub shape: SpriteShape,
    pub size: usize,
}

/// Paths produced by [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub sidecar: PathBuf,
    pub train_count: usize,
    pub val_count: usize,
}

fn render_indexed_clip(
    spec: &SynthDatasetSpec,
    class_idx: usize,
    global_index: u64,
) -> Result<FrameSequence> {
    let class = spec.classes[class_idx];
    let size = sprite_size_for_speed(class.speed);
    let ((x_lo, x_hi), (y_lo, y_hi)) = start_bounds(
        spec.canvas,
        spec.frames,
        size,
        class.direction_deg,
        class.speed,
    )?;
    let mut rng = SplitMix64::new(derive_seed(spec.seed, global_index));
    let start = (
        rng.range_inclusive(x_lo, x_hi),
        rng.range_inclusive(y_lo, y_hi),
    );
    let noise_seed = rng.next_u64();
    let clip_spec = SpriteClipSpec {
        canvas: spec.canvas,
        frames: spec.frames,
        shape: SpriteShape::Square,
        size,
        direction_deg: class.direction_deg,
        speed: class.speed,
        start,
        noise_sigma: spec.noise_sigma,
        seed: noise_seed,
    };
    Ok(render_clip(&clip_spec)?.0)
}

/// Generates the corpus under `out_dir`: one tensor file per clip,
/// `train.csv` / `val.csv` manifests, and a `dataset.json` sidecar.
/// Byte-identical for identical specs. Train clips take global indices
/// `0..train_total` and val clips continue after them, so the two splits
/// draw from disjoint sub-seed streams.
pub fn generate_dataset(spec: &SynthDatasetSpec, out_dir: &Path) -> Result<GeneratedDataset> {
    if spec.classes.is_empty() || spec.train_per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    let clips_dir = out_dir.join("clips");
    fs::create_dir_all(&clips_dir)?;

    let n = spec.n_classes();
    let train_total = n * spec.train_per_class;
    let splits: [(&str, usize, usize); 2] = [
        ("train", spec.train_per_class, 0),
        ("val", spec.val_per_class, train_total),
    ];

    let mut manifests = Vec::new();
    for (split, per_class, index_base) in splits {
        let mut entries = Vec::with_capacity(n * per_class);
        let mut running = 0usize;
        for class_idx in 0..n {
            for _ in 0..per_class {
                let global_index = (index_base + running) as u64;
                let seq = render_indexed_clip(spec, class_idx, global_index)?;
                let file = format!("clips/{split}_{running:05}.fltn");
                write_clip_tensor(&out_dir.join(&file), &seq)?;
                entries.push(ManifestEntry::new(file, class_idx));
                running += 1;
            }
        }
        let manifest = out_dir.join(format!("{split}.csv"));
        write_manifest(&manifest, &entries)?;
        manifests.push((manifest, entries.len()));
    }

    let sidecar = DatasetSidecar {
        classes: spec
            .classes
            .iter()
            .enumerate()
            .map(|(label, c)| SidecarClass {
                label,
                direction_deg: c.direction_deg,
                speed: c.speed,
                shape: SpriteShape::Square,
                size: sprite_size_for_speed(c.speed),
            })
            .collect(),
        canvas: spec.canvas,
        frames: spec.frames,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        train_per_class: spec.train_per_class,
        val_per_class: spec.val_per_class,
    };
    let sidecar_path = out_dir.join("dataset.json");
    fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;

    let (val_manifest, val_count) = manifests.pop().unwrap();
    let (train_manifest, train_count) = manifests.pop().unwrap();
    Ok(GeneratedDataset {
        train_manifest,
        val_manifest,
        sidecar: sidecar_path,
        train_count,
        val_count,
    })
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{file_bytes, load_manifest, read_clip_tensor, resolve_clip_path};
    use std::collections::HashSet;
    use tempfile::tempdir;

    fn base_spec() -> SpriteClipSpec {
        SpriteClipSpec {
            canvas: 32,
            frames: 16,
            shape: SpriteShape::Square,
            size: 5,
            direction_deg: 0,
            speed: 1,
            start: (4, 16),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    fn centroid_x(seq: &FrameSequence, k: usize) -> f32 {
        let frame = seq.frame(k);
        let mut sum = 0.0f32;
        let mut count = 0.0f32;
        for ((_, _, x), &v) in frame.indexed_iter() {
            if v > 0.5 {
                sum += x as f32;
                count += 1.0;
            }
        }
        sum / count
    }

    #[test]
    fn rightward_kinematics_example() {
        let (seq, label) = render_clip(&base_spec()).unwrap();
        assert_eq!(label, Some(0));
        for k in 0..16 {
            assert_eq!(centroid_x(&seq, k), (4 + k) as f32);
        }
    }

    #[test]
    fn static_control_clip_has_identical_frames() {
        let spec = SpriteClipSpec {
            speed: 0,
            ..base_spec()
        };
        let (seq, label) = render_clip(&spec).unwrap();
        assert_eq!(label, None); // not part of the default 8 classes
        for k in 1..seq.len() {
            assert_eq!(seq.frame(k), seq.frame(0));
        }
    }

    #[test]
    fn render_is_seed_deterministic() {
        let spec = SpriteClipSpec {
            noise_sigma: 0.1,
            seed: 77,
            ..base_spec()
        };
        let (a, _) = render_clip(&spec).unwrap();
        let (b, _) = render_clip(&spec).unwrap();
        assert_eq!(a.data(), b.data());
        let (c, _) = render_clip(&SpriteClipSpec { seed: 78, ..spec }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn sprite_exit_is_rejected_with_frame_index() {
        // Start close to the right edge: center 27 + 15 frames = 42.
        let spec = SpriteClipSpec {
            start: (27, 16),
            ..base_spec()
        };
        match render_clip(&spec) {
            Err(Error::SpriteOutOfBounds { frame, .. }) => assert!(frame > 0),
            other => panic!("expected out-of-bounds, got {other:?}"),
        }
    }

    #[test]
    fn cross_sprite_paints_arms_only() {
        let spec = SpriteClipSpec {
            shape: SpriteShape::Cross,
            speed: 0,
            ..base_spec()
        };
        let (seq, _) = render_clip(&spec).unwrap();
        let frame = seq.frame(0);
        assert_eq!(frame[[0, 16, 4]], 1.0); // center
        assert_eq!(frame[[0, 16, 2]], 1.0); // horizontal arm
        assert_eq!(frame[[0, 14, 4]], 1.0); // vertical arm
        assert_eq!(frame[[0, 14, 2]], 0.0); // corner stays empty
    }

    #[test]
    fn start_bounds_match_containment() {
        // Speed 1, size 5: moving axis has 13 starts, static axis 28.
        let ((x_lo, x_hi), (y_lo, y_hi)) = start_bounds(32, 16, 5, 0, 1).unwrap();
        assert_eq!((x_lo, x_hi), (2, 14));
        assert_eq!((y_lo, y_hi), (2, 29));
        // Speed 2, size 2: exactly one valid start on the moving axis.
        let ((x_lo, x_hi), _) = start_bounds(32, 16, 2, 0, 2).unwrap();
        assert_eq!((x_lo, x_hi), (0, 0));
        // Speed 2 with a 5 px sprite cannot stay inside.
        assert!(matches!(
            start_bounds(32, 16, 5, 0, 2),
            Err(Error::NoValidStart { .. })
        ));
    }

    #[test]
    fn direction_pairs_share_frame_multisets() {
        // A right-mover and the left-mover over the same positions contain
        // the same frames in reverse order.
        for speed in [1u32, 2] {
            let size = sprite_size_for_speed(speed);
            let ((x_lo, _), (y_lo, y_hi)) = start_bounds(32, 16, size, 0, speed).unwrap();
            let y = (y_lo + y_hi) / 2;
            let travel = (16 - 1) * speed as i64;
            let right = SpriteClipSpec {
                size,
                speed,
                direction_deg: 0,
                start: (x_lo, y),
                ..base_spec()
            };
            let left = SpriteClipSpec {
                size,
                speed,
                direction_deg: 180,
                start: (x_lo + travel, y),
                ..base_spec()
            };
            let (r, _) = render_clip(&right).unwrap();
            let (l, _) = render_clip(&left).unwrap();
            for k in 0..16 {
                assert_eq!(r.frame(k), l.frame(15 - k), "speed {speed}, frame {k}");
            }
        }
    }

    #[test]
    fn different_classes_differ_somewhere() {
        // Same start, different direction or speed: at least one frame
        // differs with sigma = 0.
        let start = (4, 20);
        let right = SpriteClipSpec {
            start,
            ..base_spec()
        };
        let up = SpriteClipSpec {
            direction_deg: 90,
            start,
            ..base_spec()
        };
        let fast = SpriteClipSpec {
            speed: 2,
            size: 2,
            start: (0, 20),
            ..base_spec()
        };
        let (a, _) = render_clip(&right).unwrap();
        let (b, _) = render_clip(&up).unwrap();
        assert_ne!(a.data(), b.data());
        let (c, _) = render_clip(&fast).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn dataset_counts_and_balance() {
        let dir = tempdir().unwrap();
        let spec = SynthDatasetSpec::new(4, 2, 1);
        let out = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(out.train_count, 32);
        assert_eq!(out.val_count, 16);
        let train = load_manifest(&out.train_manifest).unwrap();
        assert_eq!(train.len(), 32);
        for label in 0..8 {
            assert_eq!(train.iter().filter(|e| e.label == label).count(), 4);
        }
        // Every referenced clip decodes with the right shape.
        let entry = &train[0];
        let clip = read_clip_tensor(&resolve_clip_path(&out.train_manifest, entry)).unwrap();
        assert_eq!(
            (clip.len(), clip.channels(), clip.height(), clip.width()),
            (16, 1, 32, 32)
        );
    }

    #[test]
    fn dataset_is_byte_identical_for_same_seed() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let spec = SynthDatasetSpec::new(2, 1, 5);
        let a = generate_dataset(&spec, dir_a.path()).unwrap();
        let b = generate_dataset(&spec, dir_b.path()).unwrap();
        let train_a = load_manifest(&a.train_manifest).unwrap();
        for entry in &train_a {
            let pa = resolve_clip_path(&a.train_manifest, entry);
            let pb = resolve_clip_path(&b.train_manifest, entry);
            assert_eq!(file_bytes(&pa).unwrap(), file_bytes(&pb).unwrap());
        }
        assert_eq!(
            file_bytes(&a.sidecar).unwrap(),
            file_bytes(&b.sidecar).unwrap()
        );
    }

    #[test]
    fn train_and_val_share_no_clip_content() {
        let dir = tempdir().unwrap();
        let spec = SynthDatasetSpec::new(8, 4, 3);
        let out = generate_dataset(&spec, dir.path()).unwrap();
        let hash = |manifest: &Path| -> HashSet<Vec<u8>> {
            load_manifest(manifest)
                .unwrap()
                .iter()
                .map(|e| file_bytes(&resolve_clip_path(manifest, e)).unwrap())
                .collect()
        };
        let train = hash(&out.train_manifest);
        let val = hash(&out.val_manifest);
        assert_eq!(train.len(), 64); // no internal collisions either
        assert_eq!(val.len(), 32);
        assert!(train.is_disjoint(&val));
    }
}
