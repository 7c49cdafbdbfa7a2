//! View sampling: turning an arbitrarily long frame source into the
//! fixed-length, fixed-resolution clips used for training and evaluation.
//!
//! A view recipe is written `AxBxCxD`: `A` output resolution, `B` frames,
//! `C` spatial crops (1 = center, 3 = left/center/right, or
//! top/middle/bottom for portrait inputs), `D` temporal crops. Evaluation
//! sampling is fully deterministic; the training-time augmentation is
//! driven solely by an explicit seed.

use std::str::FromStr;

use ndarray::{Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FrameSequence;
use crate::rng::SplitMix64;

/// Parsed `AxBxCxD` sampling recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub resolution: usize,
    pub frames: usize,
    pub spatial_crops: usize,
    pub temporal_crops: usize,
}

impl ViewSpec {
    pub fn new(
        resolution: usize,
        frames: usize,
        spatial_crops: usize,
        temporal_crops: usize,
    ) -> Result<Self> {
        if resolution == 0 || frames == 0 || temporal_crops == 0 {
            return Err(Error::ViewSpecParse {
                text: format!("{resolution}x{frames}x{spatial_crops}x{temporal_crops}"),
                reason: "all fields must be positive".into(),
            });
        }
        if spatial_crops != 1 && spatial_crops != 3 {
            return Err(Error::UnsupportedCropCount(spatial_crops));
        }
        Ok(ViewSpec {
            resolution,
            frames,
            spatial_crops,
            temporal_crops,
        })
    }

    /// Total views per clip.
    pub fn view_count(&self) -> usize {
        self.spatial_crops * self.temporal_crops
    }
}

impl FromStr for ViewSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(['x', 'X']).collect();
        if parts.len() != 4 {
            return Err(Error::ViewSpecParse {
                text: text.into(),
                reason: "expected four integers separated by 'x'".into(),
            });
        }
        let mut vals = [0usize; 4];
        for (slot, part) in vals.iter_mut().zip(&parts) {
            *slot = part.trim().parse().map_err(|_| Error::ViewSpecParse {
                text: text.into(),
                reason: format!("invalid integer {part:?}"),
            })?;
        }
        ViewSpec::new(vals[0], vals[1], vals[2], vals[3])
    }
}

impl std::fmt::Display for ViewSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.resolution, self.frames, self.spatial_crops, self.temporal_crops
        )
    }
}

/// One sampled view: `B` frames at `A x A`, tagged with which of the
/// `C x D` views it is.
#[derive(Debug, Clone)]
pub struct ClipView {
    pub seq: FrameSequence,
    pub crop_index: usize,
    pub temporal_index: usize,
}

/// Frame indices for temporal crop `d_index` of `d_total`: `b` evenly
/// spaced, monotonically non-decreasing indices inside a window of the
/// source.
///
/// The window is `min(total, max(b, round(total / d_total)))` frames long
/// and its start is `round(d_index * (total - window) / max(d_total - 1, 1))`,
/// so a single crop spans the whole source and multiple crops are evenly
/// spaced across it. Within the window, index `i` is
/// `start + round(i * (window - 1) / (b - 1))`; short sources repeat frames.
pub fn uniform_sample_indices(
    total: usize,
    b: usize,
    d_index: usize,
    d_total: usize,
) -> Vec<usize> {
    assert!(total >= 1 && b >= 1 && d_total >= 1 && d_index < d_total);
    let window = ((total as f64 / d_total as f64).round() as usize)
        .clamp(1, total)
        .max(b.min(total));
    let start = if d_total == 1 {
        0
    } else {
        ((d_index as f64) * ((total - window) as f64) / ((d_total - 1) as f64)).round() as usize
    };
    (0..b)
        .map(|i| {
            let offset = if b == 1 {
                0
            } else {
                ((i as f64) * ((window - 1) as f64) / ((b - 1) as f64)).round() as usize
            };
            start + offset
        })
        .collect()
}

/// Training-time temporal sampling: the source is divided into `b`
/// segments and one frame is drawn uniformly from each, so every clip
/// sees a randomly jittered but still monotone frame selection.
/// Deterministic in `seed`; short sources repeat frames.
pub fn random_sample_indices(total: usize, b: usize, seed: u64) -> Vec<usize> {
    assert!(total >= 1 && b >= 1);
    let mut rng = SplitMix64::new(seed);
    (0..b)
        .map(|i| {
            let lo = i * total / b;
            let hi = ((i + 1) * total / b).clamp(lo + 1, total.max(lo + 1));
            (lo + rng.below((hi - lo) as u64) as usize).min(total - 1)
        })
        .collect()
}

fn bilinear_sample(frame: &ArrayView3<'_, f32>, ch: usize, sy: f64, sx: f64) -> f32 {
    let (_, h, w) = frame.dim();
    let clamp = |v: f64, hi: usize| v.max(0.0).min((hi - 1) as f64);
    let sy = clamp(sy, h);
    let sx = clamp(sx, w);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = (sy - y0 as f64) as f32;
    let fx = (sx - x0 as f64) as f32;
    let v00 = frame[[ch, y0, x0]];
    let v01 = frame[[ch, y0, x1]];
    let v10 = frame[[ch, y1, x0]];
    let v11 = frame[[ch, y1, x1]];
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resize with half-pixel sample centers.
fn resize_frame(frame: &ArrayView3<'_, f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    Array3::from_shape_fn((c, out_h, out_w), |(ch, y, x)| {
        let sy = (y as f64 + 0.5) * scale_y - 0.5;
        let sx = (x as f64 + 0.5) * scale_x - 0.5;
        bilinear_sample(frame, ch, sy, sx)
    })
}

/// Dimensions after scaling the shorter side to `resolution`; the longer
/// side is truncated (`floor`), matching the usual short-side-resize.
fn short_side_resize_dims(h: usize, w: usize, resolution: usize) -> (usize, usize) {
    if h <= w {
        let out_w = ((w * resolution) / h).max(resolution);
        (resolution, out_w)
    } else {
        let out_h = ((h * resolution) / w).max(resolution);
        (out_h, resolution)
    }
}

/// Crop offsets (top, left) for crop `crop_index` of `crop_total` on a
/// resized `rh x rw` frame.
fn crop_offsets(
    rh: usize,
    rw: usize,
    resolution: usize,
    crop_index: usize,
    crop_total: usize,
) -> Result<(usize, usize)> {
    let max_y = rh - resolution;
    let max_x = rw - resolution;
    match (crop_total, crop_index) {
        (1, 0) => Ok((max_y / 2, max_x / 2)),
        (3, i) if i < 3 => {
            // Landscape: sweep horizontally; portrait: vertically.
            if rw >= rh {
                let x = match i {
                    0 => 0,
                    1 => max_x / 2,
                    _ => max_x,
                };
                Ok((max_y / 2, x))
            } else {
                let y = match i {
                    0 => 0,
                    1 => max_y / 2,
                    _ => max_y,
                };
                Ok((y, max_x / 2))
            }
        }
        _ => Err(Error::UnsupportedCropCount(crop_total)),
    }
}

/// Short-side resize to `resolution` followed by a `resolution x resolution`
/// crop: center for `crop_total = 1`, left/center/right (or
/// top/middle/bottom) for `crop_total = 3`.
pub fn spatial_crop_resize(
    frame: &ArrayView3<'_, f32>,
    resolution: usize,
    crop_index: usize,
    crop_total: usize,
) -> Result<Array3<f32>> {
    let (_, h, w) = frame.dim();
    let (rh, rw) = short_side_resize_dims(h, w, resolution);
    let resized = resize_frame(frame, rh, rw);
    let (top, left) = crop_offsets(rh, rw, resolution, crop_index, crop_total)?;
    Ok(resized
        .slice(ndarray::s![
            ..,
            top..top + resolution,
            left..left + resolution
        ])
        .to_owned())
}

/// All `C x D` views of a source clip, temporal index outermost.
pub fn make_views(source: &FrameSequence, spec: &ViewSpec) -> Result<Vec<ClipView>> {
    let mut views = Vec::with_capacity(spec.view_count());
    for d in 0..spec.temporal_crops {
        let indices = uniform_sample_indices(source.len(), spec.frames, d, spec.temporal_crops);
        for c in 0..spec.spatial_crops {
            let mut data = Array4::zeros((
                spec.frames,
                source.channels(),
                spec.resolution,
                spec.resolution,
            ));
            for (slot, &idx) in indices.iter().enumerate() {
                let frame = source.frame(idx);
                let cropped = spatial_crop_resize(&frame, spec.resolution, c, spec.spatial_crops)?;
                data.index_axis_mut(ndarray::Axis(0), slot).assign(&cropped);
            }
            views.push(ClipView {
                seq: FrameSequence::new(data)?,
                crop_index: c,
                temporal_index: d,
            });
        }
    }
    Ok(views)
}

/// Training-time augmentation: one random short-side scale in
/// `[resolution, 1.15 * resolution]`, one random crop position, and one
/// coin-flip horizontal mirror, shared by every frame of the clip so the
/// temporal mapping stays coherent. Deterministic in `seed`.
pub fn augment_clip(source: &FrameSequence, resolution: usize, seed: u64) -> Result<FrameSequence> {
    let mut rng = SplitMix64::new(seed);
    let max_scale = ((resolution as f64) * 1.15).floor() as i64;
    let scale = rng.range_inclusive(resolution as i64, max_scale) as usize;
    let (rh, rw) = short_side_resize_dims(source.height(), source.width(), scale);
    let top = rng.range_inclusive(0, (rh - resolution) as i64) as usize;
    let left = rng.range_inclusive(0, (rw - resolution) as i64) as usize;
    let flip = rng.next_u64() & 1 == 1;

    let mut data = Array4::zeros((source.len(), source.channels(), resolution, resolution));
    for k in 0..source.len() {
        let resized = resize_frame(&source.frame(k), rh, rw);
        let mut crop = resized
            .slice(ndarray::s![
                ..,
                top..top + resolution,
                left..left + resolution
            ])
            .to_owned();
        if flip {
            crop.invert_axis(ndarray::Axis(2));
        }
        data.index_axis_mut(ndarray::Axis(0), k).assign(&crop);
    }
    FrameSequence::new(data)
}
