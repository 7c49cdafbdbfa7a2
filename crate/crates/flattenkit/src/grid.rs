//! The flatten transforms: invertible rearrangements of a frame sequence
//! into a single tiled composite image.
//!
//! A composite is laid out as a `rows x cols` grid of frame-sized blocks.
//! In the default orientation, frame `k` occupies block
//! `(k / cols, k % cols)`, so consecutive frames run left-to-right and
//! rows top-to-bottom, and pixel `(ch, y, x)` of frame `k` is copied verbatim to
//! composite pixel `(ch, block_row * h + y, block_col * w + x)`. The
//! transposed orientation fills columns first: frame `k` occupies block
//! `(k % rows, k / rows)`.
//!
//! Three transform kinds share this block arithmetic:
//!
//! * row-major: frames in temporal order;
//! * nested: the sequence is split into `n_sub` contiguous sub-sequences,
//!   each tiled with an inner grid, and the resulting sub-composites tiled
//!   again with an outer grid;
//! * random: frames are reordered by a permutation `pi` (block position
//!   `p` shows frame `pi[p]`) before row-major tiling.
//!
//! Every transform is a pure copy: no interpolation, no normalization, and
//! each output pixel is read from exactly one input pixel, so flatten and
//! unflatten with the same [`FlattenPlan`] are bit-exact inverses.

use ndarray::{s, Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::permutation_from_seed;

/// An ordered stack of equally-sized frames, stored `(t, c, h, w)` in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    data: Array4<f32>,
}

impl FrameSequence {
    /// Wraps a dense `(t, c, h, w)` array. Needs `t >= 1` and `c >= 1`.
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let (t, c, _h, _w) = data.dim();
        if t == 0 || c == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(FrameSequence { data })
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        false // t >= 1 by construction
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn frame(&self, k: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), k)
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    /// Sub-sequence `[start, start + len)` as an owned copy.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() || len == 0 {
            return Err(Error::FrameIndexOutOfRange {
                index: start + len,
                count: self.len(),
            });
        }
        FrameSequence::new(
            self.data
                .slice(s![start..start + len, .., .., ..])
                .to_owned(),
        )
    }

    /// New sequence gathering the given frames in order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::FrameIndexOutOfRange {
                index: bad,
                count: self.len(),
            });
        }
        let (_, c, h, w) = self.data.dim();
        let mut out = Array4::zeros((indices.len(), c, h, w));
        for (p, &src) in indices.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), p)
                .assign(&self.frame(src));
        }
        FrameSequence::new(out)
    }

    /// New sequence whose frame `p` is `self`'s frame `perm[p]`.
    pub fn reordered(&self, perm: &[usize]) -> Result<Self> {
        validate_permutation(perm, self.len())?;
        let (t, c, h, w) = self.data.dim();
        let mut out = Array4::zeros((t, c, h, w));
        for (p, &src) in perm.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), p)
                .assign(&self.frame(src));
        }
        FrameSequence::new(out)
    }
}

/// Block layout of a composite: `rows x cols` tiles of `block_h x block_w`
/// pixels each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub block_h: usize,
    pub block_w: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, block_h: usize, block_w: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || block_h == 0 || block_w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid dimensions must be positive, got {rows}x{cols} blocks of {block_h}x{block_w}"
            )));
        }
        Ok(GridSpec {
            rows,
            cols,
            block_h,
            block_w,
        })
    }

    /// Square grid for a perfect-square frame count.
    pub fn square_for(t: usize, block_h: usize, block_w: usize) -> Result<Self> {
        let (rows, cols) = square_grid_for(t)?;
        GridSpec::new(rows, cols, block_h, block_w)
    }

    /// Grid matching a sequence: square when `t` is a perfect square.
    pub fn square_for_sequence(seq: &FrameSequence) -> Result<Self> {
        GridSpec::square_for(seq.len(), seq.height(), seq.width())
    }

    pub fn tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn composite_h(&self) -> usize {
        self.rows * self.block_h
    }

    pub fn composite_w(&self) -> usize {
        self.cols * self.block_w
    }

    /// Block coordinates of frame `k`, with range checking.
    pub fn block_of(&self, k: usize) -> Result<(usize, usize)> {
        if k >= self.tiles() {
            return Err(Error::FrameIndexOutOfRange {
                index: k,
                count: self.tiles(),
            });
        }
        Ok(frame_to_block(k, self.cols))
    }

    fn check_sequence(&self, seq: &FrameSequence) -> Result<()> {
        if self.tiles() != seq.len() {
            return Err(Error::GridFrameCountMismatch {
                rows: self.rows,
                cols: self.cols,
                frames: seq.len(),
            });
        }
        if self.block_h != seq.height() || self.block_w != seq.width() {
            return Err(Error::BlockSizeMismatch {
                block_h: self.block_h,
                block_w: self.block_w,
                frame_h: seq.height(),
                frame_w: seq.width(),
            });
        }
        Ok(())
    }
}

/// Square grid dimensions `(m, m)` with `m * m == t`.
///
/// Errors on non-squares rather than guessing a rectangle; callers that want
/// a rectangular layout must construct an explicit [`GridSpec`].
pub fn square_grid_for(t: usize) -> Result<(usize, usize)> {
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let m = t.isqrt();
    if m * m == t {
        Ok((m, m))
    } else {
        Err(Error::NotPerfectSquare(t))
    }
}

/// Block coordinates `(k / cols, k % cols)` of frame `k` in the default
/// orientation. Callers keep `k < rows * cols`; see [`GridSpec::block_of`]
/// for the checked form.
pub fn frame_to_block(k: usize, cols: usize) -> (usize, usize) {
    (k / cols, k % cols)
}

fn oriented_block(k: usize, grid: &GridSpec, transpose: bool) -> (usize, usize) {
    if transpose {
        (k % grid.rows, k / grid.rows)
    } else {
        frame_to_block(k, grid.cols)
    }
}

fn validate_permutation(perm: &[usize], t: usize) -> Result<()> {
    if perm.len() != t {
        return Err(Error::InvalidPermutation { expected: t });
    }
    let mut seen = vec![false; t];
    for &p in perm {
        if p >= t || seen[p] {
            return Err(Error::InvalidPermutation { expected: t });
        }
        seen[p] = true;
    }
    Ok(())
}

/// Frame order of a random transform: either materialized up front or
/// derived on demand from a seed (Fisher-Yates over the splitmix64 stream,
/// see [`crate::rng`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomOrder {
    Seeded(u64),
    Explicit(Vec<usize>),
}

impl RandomOrder {
    /// The permutation for a `t`-frame sequence.
    pub fn permutation(&self, t: usize) -> Result<Vec<usize>> {
        match self {
            RandomOrder::Seeded(seed) => Ok(permutation_from_seed(t, *seed)),
            RandomOrder::Explicit(perm) => {
                validate_permutation(perm, t)?;
                Ok(perm.clone())
            }
        }
    }
}

/// Per-kind payload of a [`FlattenPlan`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    RowMajor,
    Nested {
        n_sub: usize,
        inner: GridSpec,
        outer: GridSpec,
    },
    Random(RandomOrder),
}

impl PlanKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlanKind::RowMajor => "row-major",
            PlanKind::Nested { .. } => "nested",
            PlanKind::Random(_) => "random",
        }
    }
}

/// A fully-specified flatten transform: kind, grid, and orientation.
/// The plan alone determines both directions of the mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenPlan {
    pub kind: PlanKind,
    pub grid: GridSpec,
    /// Fill blocks column-first instead of row-first. Off by default; the
    /// row-first orientation is the canonical one.
    pub transpose: bool,
}

impl FlattenPlan {
    pub fn row_major(grid: GridSpec) -> Self {
        FlattenPlan {
            kind: PlanKind::RowMajor,
            grid,
            transpose: false,
        }
    }

    /// Nested plan over `grid` with `n_sub` contiguous sub-sequences.
    ///
    /// Both levels must tile as squares: `n_sub` and `q = t / n_sub` must be
    /// perfect squares whose composition reproduces `grid`. Rectangular
    /// nesting is available through [`nested_flatten`] with explicit grids.
    pub fn nested(grid: GridSpec, n_sub: usize) -> Result<Self> {
        let t = grid.tiles();
        if n_sub == 0 || !t.is_multiple_of(n_sub) {
            return Err(Error::NonDivisibleSubSequences { n_sub, frames: t });
        }
        let q = t / n_sub;
        let (outer_m, _) = square_grid_for(n_sub)?;
        let (inner_m, _) = square_grid_for(q)?;
        let outer = GridSpec::new(
            outer_m,
            outer_m,
            inner_m * grid.block_h,
            inner_m * grid.block_w,
        )?;
        let inner = GridSpec::new(inner_m, inner_m, grid.block_h, grid.block_w)?;
        if outer.rows * inner.rows != grid.rows || outer.cols * inner.cols != grid.cols {
            return Err(Error::NestedGridMismatch {
                inner_rows: inner.rows,
                inner_cols: inner.cols,
                outer_rows: outer.rows,
                outer_cols: outer.cols,
            });
        }
        Ok(FlattenPlan {
            kind: PlanKind::Nested {
                n_sub,
                inner,
                outer,
            },
            grid,
            transpose: false,
        })
    }

    /// Nested plan with the default sub-sequence count `n_sub = sqrt(t)`,
    /// defined only when `t` is a fourth power (the one self-consistent
    /// all-square split). Other frame counts need an explicit `n_sub`.
    pub fn nested_default(grid: GridSpec) -> Result<Self> {
        let t = grid.tiles();
        let m = t.isqrt();
        let r = m.isqrt();
        if m * m != t || r * r != m {
            return Err(Error::NotPerfectSquare(t));
        }
        FlattenPlan::nested(grid, m)
    }

    pub fn random_seeded(grid: GridSpec, seed: u64) -> Self {
        FlattenPlan {
            kind: PlanKind::Random(RandomOrder::Seeded(seed)),
            grid,
            transpose: false,
        }
    }

    pub fn random_explicit(grid: GridSpec, perm: Vec<usize>) -> Result<Self> {
        validate_permutation(&perm, grid.tiles())?;
        Ok(FlattenPlan {
            kind: PlanKind::Random(RandomOrder::Explicit(perm)),
            grid,
            transpose: false,
        })
    }

    pub fn with_transpose(mut self, transpose: bool) -> Self {
        self.transpose = transpose;
        self
    }

    /// Source frame shown at block position `p` (positions enumerate blocks
    /// in fill order).
    fn source_frame(&self, p: usize, perm: Option<&[usize]>) -> usize {
        match (&self.kind, perm) {
            (PlanKind::Random(_), Some(perm)) => perm[p],
            _ => p,
        }
    }

    /// Block coordinates shown at position `p`.
    fn position_block(&self, p: usize) -> (usize, usize) {
        match &self.kind {
            PlanKind::RowMajor | PlanKind::Random(_) => {
                oriented_block(p, &self.grid, self.transpose)
            }
            PlanKind::Nested {
                n_sub: _,
                inner,
                outer,
            } => {
                let q = inner.tiles();
                let sub = p / q;
                let within = p % q;
                let (or, oc) = oriented_block(sub, outer, self.transpose);
                let (ir, ic) = oriented_block(within, inner, self.transpose);
                (or * inner.rows + ir, oc * inner.cols + ic)
            }
        }
    }

    fn materialize_permutation(&self) -> Result<Option<Vec<usize>>> {
        match &self.kind {
            PlanKind::Random(order) => Ok(Some(order.permutation(self.grid.tiles())?)),
            _ => Ok(None),
        }
    }

    /// Applies the transform. A pure copy pass; see the module docs for the
    /// exact pixel mapping.
    pub fn flatten(&self, seq: &FrameSequence) -> Result<FlatImage> {
        self.grid.check_sequence(seq)?;
        let perm = self.materialize_permutation()?;
        let (c, bh, bw) = (seq.channels(), self.grid.block_h, self.grid.block_w);
        let mut pixels = Array3::zeros((c, self.grid.composite_h(), self.grid.composite_w()));
        for p in 0..self.grid.tiles() {
            let (r, col) = self.position_block(p);
            let k = self.source_frame(p, perm.as_deref());
            pixels
                .slice_mut(s![.., r * bh..(r + 1) * bh, col * bw..(col + 1) * bw])
                .assign(&seq.frame(k));
        }
        Ok(FlatImage {
            pixels,
            plan: Some(self.clone()),
        })
    }

    /// Exact inverse of [`FlattenPlan::flatten`].
    pub fn unflatten(&self, img: &FlatImage) -> Result<FrameSequence> {
        let (c, h, w) = img.pixels.dim();
        if h != self.grid.composite_h() || w != self.grid.composite_w() {
            return Err(Error::CompositeDimsMismatch { h, w });
        }
        let perm = self.materialize_permutation()?;
        let (bh, bw) = (self.grid.block_h, self.grid.block_w);
        let t = self.grid.tiles();
        let mut data = Array4::zeros((t, c, bh, bw));
        for p in 0..t {
            let (r, col) = self.position_block(p);
            let k = self.source_frame(p, perm.as_deref());
            data.index_axis_mut(ndarray::Axis(0), k)
                .assign(
                    &img.pixels
                        .slice(s![.., r * bh..(r + 1) * bh, col * bw..(col + 1) * bw]),
                );
        }
        FrameSequence::new(data)
    }
}

/// A single composite image `(c, H, W)`, optionally carrying the plan that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatImage {
    pub pixels: Array3<f32>,
    pub plan: Option<FlattenPlan>,
}

impl FlatImage {
    pub fn new(pixels: Array3<f32>) -> Self {
        FlatImage { pixels, plan: None }
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }
}

/// Row-major flatten of `seq` over `grid`.
pub fn row_major_flatten(seq: &FrameSequence, grid: GridSpec) -> Result<FlatImage> {
    FlattenPlan::row_major(grid).flatten(seq)
}

/// Nested flatten with explicit inner and outer grids. This is the general
/// (possibly rectangular) form; [`FlattenPlan::nested`] covers the all-square
/// case and carries enough information to invert.
pub fn nested_flatten(
    seq: &FrameSequence,
    n_sub: usize,
    inner_grid: GridSpec,
    outer_grid: GridSpec,
) -> Result<FlatImage> {
    let t = seq.len();
    if n_sub == 0 || !t.is_multiple_of(n_sub) {
        return Err(Error::NonDivisibleSubSequences { n_sub, frames: t });
    }
    let q = t / n_sub;
    if inner_grid.tiles() != q
        || outer_grid.tiles() != n_sub
        || outer_grid.block_h != inner_grid.composite_h()
        || outer_grid.block_w != inner_grid.composite_w()
    {
        return Err(Error::NestedGridMismatch {
            inner_rows: inner_grid.rows,
            inner_cols: inner_grid.cols,
            outer_rows: outer_grid.rows,
            outer_cols: outer_grid.cols,
        });
    }
    if inner_grid.block_h != seq.height() || inner_grid.block_w != seq.width() {
        return Err(Error::BlockSizeMismatch {
            block_h: inner_grid.block_h,
            block_w: inner_grid.block_w,
            frame_h: seq.height(),
            frame_w: seq.width(),
        });
    }

    let grid = GridSpec::new(
        outer_grid.rows * inner_grid.rows,
        outer_grid.cols * inner_grid.cols,
        inner_grid.block_h,
        inner_grid.block_w,
    )?;
    let plan = FlattenPlan {
        kind: PlanKind::Nested {
            n_sub,
            inner: inner_grid,
            outer: outer_grid,
        },
        grid,
        transpose: false,
    };
    plan.flatten(seq)
}

/// Random flatten: row-major tiling of `seq` reordered by the permutation.
/// Returns the composite together with the permutation actually used
/// (block position `p` shows frame `perm[p]`).
pub fn random_flatten(
    seq: &FrameSequence,
    grid: GridSpec,
    order: RandomOrder,
) -> Result<(FlatImage, Vec<usize>)> {
    let plan = FlattenPlan {
        kind: PlanKind::Random(order),
        grid,
        transpose: false,
    };
    let perm = match plan.materialize_permutation()? {
        Some(p) => p,
        None => unreachable!("random plan always has an order"),
    };
    let img = plan.flatten(seq)?;
    Ok((img, perm))
}

/// Inverts a composite back into its frame sequence under `plan`.
pub fn unflatten(img: &FlatImage, plan: &FlattenPlan) -> Result<FrameSequence> {
    plan.unflatten(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    /// t constant-valued frames, frame k filled with `values[k]`.
    fn const_frames(values: &[f32], c: usize, h: usize, w: usize) -> FrameSequence {
        let t = values.len();
        let mut data = Array4::zeros((t, c, h, w));
        for (k, &v) in values.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), k).fill(v);
        }
        FrameSequence::new(data).unwrap()
    }

    fn ramp_frames(t: usize, c: usize, h: usize, w: usize) -> FrameSequence {
        let data = Array4::from_shape_fn((t, c, h, w), |(k, ch, y, x)| {
            (k * 10_000 + ch * 1_000 + y * w + x) as f32
        });
        FrameSequence::new(data).unwrap()
    }

    fn block_value(img: &FlatImage, grid: &GridSpec, r: usize, c: usize) -> f32 {
        img.pixels[[0, r * grid.block_h, c * grid.block_w]]
    }

    #[test]
    fn square_grid_examples() {
        assert_eq!(square_grid_for(16).unwrap(), (4, 4));
        assert_eq!(square_grid_for(1).unwrap(), (1, 1));
        assert_eq!(square_grid_for(9).unwrap(), (3, 3));
        assert!(matches!(
            square_grid_for(12),
            Err(Error::NotPerfectSquare(12))
        ));
    }

    #[test]
    fn frame_to_block_examples() {
        assert_eq!(frame_to_block(5, 4), (1, 1));
        assert_eq!(frame_to_block(0, 4), (0, 0));
        assert_eq!(frame_to_block(15, 4), (3, 3));
    }

    #[test]
    fn block_of_rejects_out_of_range() {
        let grid = GridSpec::new(2, 2, 3, 3).unwrap();
        assert!(grid.block_of(3).is_ok());
        assert!(matches!(
            grid.block_of(4),
            Err(Error::FrameIndexOutOfRange { index: 4, count: 4 })
        ));
    }

    #[test]
    fn row_major_quadrants() {
        let seq = const_frames(&[0.0, 1.0, 2.0, 3.0], 1, 2, 2);
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let img = row_major_flatten(&seq, grid).unwrap();
        assert_eq!(block_value(&img, &grid, 0, 0), 0.0);
        assert_eq!(block_value(&img, &grid, 0, 1), 1.0);
        assert_eq!(block_value(&img, &grid, 1, 0), 2.0);
        assert_eq!(block_value(&img, &grid, 1, 1), 3.0);
    }

    #[test]
    fn row_major_single_frame_is_identity() {
        let seq = ramp_frames(1, 3, 5, 7);
        let grid = GridSpec::new(1, 1, 5, 7).unwrap();
        let img = row_major_flatten(&seq, grid).unwrap();
        assert_eq!(img.pixels, seq.frame(0).to_owned());
    }

    #[test]
    fn row_major_composite_dims() {
        let seq = ramp_frames(16, 1, 224, 224);
        let grid = GridSpec::square_for_sequence(&seq).unwrap();
        let img = row_major_flatten(&seq, grid).unwrap();
        assert_eq!((img.height(), img.width()), (896, 896));
    }

    #[test]
    fn row_major_rejects_shape_mismatch() {
        let seq = ramp_frames(4, 1, 2, 2);
        let bad_count = GridSpec::new(3, 2, 2, 2).unwrap();
        assert!(matches!(
            row_major_flatten(&seq, bad_count),
            Err(Error::GridFrameCountMismatch { .. })
        ));
        let bad_block = GridSpec::new(2, 2, 3, 2).unwrap();
        assert!(matches!(
            row_major_flatten(&seq, bad_block),
            Err(Error::BlockSizeMismatch { .. })
        ));
    }

    #[test]
    fn transpose_fills_columns_first() {
        let seq = const_frames(&[0.0, 1.0, 2.0, 3.0], 1, 2, 2);
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let img = FlattenPlan::row_major(grid)
            .with_transpose(true)
            .flatten(&seq)
            .unwrap();
        assert_eq!(block_value(&img, &grid, 0, 0), 0.0);
        assert_eq!(block_value(&img, &grid, 1, 0), 1.0);
        assert_eq!(block_value(&img, &grid, 0, 1), 2.0);
        assert_eq!(block_value(&img, &grid, 1, 1), 3.0);
    }

    // Reference nested transform evaluated the long way: split into
    // contiguous sub-sequences, tile each, then tile the tiles.
    fn nested_by_composition(seq: &FrameSequence, n_sub: usize) -> FlatImage {
        let t = seq.len();
        let q = t / n_sub;
        let (im, _) = square_grid_for(q).unwrap();
        let (om, _) = square_grid_for(n_sub).unwrap();
        let inner = GridSpec::new(im, im, seq.height(), seq.width()).unwrap();
        let mut subs = Vec::new();
        for n in 0..n_sub {
            let sub = seq.slice_frames(n * q, q).unwrap();
            subs.push(row_major_flatten(&sub, inner).unwrap());
        }
        let mut stacked = Array4::zeros((
            n_sub,
            seq.channels(),
            inner.composite_h(),
            inner.composite_w(),
        ));
        for (n, sub_img) in subs.iter().enumerate() {
            stacked
                .index_axis_mut(ndarray::Axis(0), n)
                .assign(&sub_img.pixels);
        }
        let outer = GridSpec::new(om, om, inner.composite_h(), inner.composite_w()).unwrap();
        row_major_flatten(&FrameSequence::new(stacked).unwrap(), outer).unwrap()
    }

    #[test]
    fn nested_matches_composed_reference() {
        let seq = ramp_frames(16, 2, 3, 4);
        let grid = GridSpec::new(4, 4, 3, 4).unwrap();
        let plan = FlattenPlan::nested(grid, 4).unwrap();
        let img = plan.flatten(&seq).unwrap();
        let reference = nested_by_composition(&seq, 4);
        assert_eq!(img.pixels, reference.pixels);
    }

    #[test]
    fn nested_frame_five_lands_at_row0_col3() {
        let values: Vec<f32> = (0..16).map(|k| k as f32).collect();
        let seq = const_frames(&values, 1, 2, 2);
        let grid = GridSpec::new(4, 4, 2, 2).unwrap();
        let img = FlattenPlan::nested(grid, 4).unwrap().flatten(&seq).unwrap();
        assert_eq!(block_value(&img, &grid, 0, 3), 5.0);
    }

    #[test]
    fn nested_degenerates_to_row_major() {
        let seq = ramp_frames(16, 1, 2, 3);
        let grid = GridSpec::new(4, 4, 2, 3).unwrap();
        let row = row_major_flatten(&seq, grid).unwrap();
        for n_sub in [1, 16] {
            let img = FlattenPlan::nested(grid, n_sub)
                .unwrap()
                .flatten(&seq)
                .unwrap();
            assert_eq!(img.pixels, row.pixels, "n_sub={n_sub}");
        }
    }

    #[test]
    fn nested_rejects_bad_splits() {
        let grid = GridSpec::new(4, 4, 2, 2).unwrap();
        assert!(matches!(
            FlattenPlan::nested(grid, 3),
            Err(Error::NonDivisibleSubSequences {
                n_sub: 3,
                frames: 16
            })
        ));
        // 16 / 8 = 2 sub-sequences of q=2: neither level is square.
        assert!(FlattenPlan::nested(grid, 8).is_err());
    }

    #[test]
    fn nested_default_requires_fourth_power() {
        let grid16 = GridSpec::new(4, 4, 2, 2).unwrap();
        let plan = FlattenPlan::nested_default(grid16).unwrap();
        assert!(matches!(plan.kind, PlanKind::Nested { n_sub: 4, .. }));
        let grid9 = GridSpec::new(3, 3, 2, 2).unwrap();
        assert!(FlattenPlan::nested_default(grid9).is_err());
    }

    #[test]
    fn explicit_nested_rectangular_grids() {
        // 8 frames: inner 1x2, outer 2x2 -> global 2x4 grid.
        let seq = ramp_frames(8, 1, 2, 2);
        let inner = GridSpec::new(1, 2, 2, 2).unwrap();
        let outer = GridSpec::new(2, 2, 2, 4).unwrap();
        let img = nested_flatten(&seq, 4, inner, outer).unwrap();
        assert_eq!((img.height(), img.width()), (4, 8));
        // Frame 5 is in sub-sequence 2 (outer block (1, 0)), inner slot 1.
        assert_eq!(img.pixels[[0, 2, 2]], seq.frame(5)[[0, 0, 0]]);
    }

    #[test]
    fn random_reversed_quadrants() {
        let seq = const_frames(&[0.0, 1.0, 2.0, 3.0], 1, 2, 2);
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let (img, perm) =
            random_flatten(&seq, grid, RandomOrder::Explicit(vec![3, 2, 1, 0])).unwrap();
        assert_eq!(perm, vec![3, 2, 1, 0]);
        assert_eq!(block_value(&img, &grid, 0, 0), 3.0);
        assert_eq!(block_value(&img, &grid, 0, 1), 2.0);
        assert_eq!(block_value(&img, &grid, 1, 0), 1.0);
        assert_eq!(block_value(&img, &grid, 1, 1), 0.0);
    }

    #[test]
    fn random_identity_equals_row_major() {
        let seq = ramp_frames(9, 3, 2, 2);
        let grid = GridSpec::new(3, 3, 2, 2).unwrap();
        let row = row_major_flatten(&seq, grid).unwrap();
        let (img, _) = random_flatten(&seq, grid, RandomOrder::Explicit((0..9).collect())).unwrap();
        assert_eq!(img.pixels, row.pixels);
    }

    #[test]
    fn random_seeded_is_deterministic() {
        let seq = ramp_frames(4, 1, 2, 2);
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let (a, pa) = random_flatten(&seq, grid, RandomOrder::Seeded(7)).unwrap();
        let (b, pb) = random_flatten(&seq, grid, RandomOrder::Seeded(7)).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a.pixels, b.pixels);
        // Frozen from the documented shuffle of 0..4 under seed 7.
        assert_eq!(pa, vec![1, 2, 0, 3]);
    }

    #[test]
    fn random_rejects_non_bijections() {
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        assert!(FlattenPlan::random_explicit(grid, vec![0, 1, 2, 2]).is_err());
        assert!(FlattenPlan::random_explicit(grid, vec![0, 1, 2]).is_err());
        assert!(FlattenPlan::random_explicit(grid, vec![0, 1, 2, 4]).is_err());
    }

    #[test]
    fn unflatten_round_trips_every_kind() {
        let seq = ramp_frames(16, 2, 3, 3);
        let grid = GridSpec::new(4, 4, 3, 3).unwrap();
        let plans = [
            FlattenPlan::row_major(grid),
            FlattenPlan::row_major(grid).with_transpose(true),
            FlattenPlan::nested(grid, 4).unwrap(),
            FlattenPlan::random_seeded(grid, 123),
            FlattenPlan::random_explicit(grid, permutation_from_seed(16, 5)).unwrap(),
        ];
        for plan in plans {
            let img = plan.flatten(&seq).unwrap();
            let back = plan.unflatten(&img).unwrap();
            assert_eq!(back.data(), seq.data(), "{:?}", plan.kind.name());
        }
    }

    #[test]
    fn unflatten_recovers_reversed_permutation_order() {
        let seq = const_frames(&[0.0, 1.0, 2.0, 3.0], 1, 2, 2);
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let plan = FlattenPlan::random_explicit(grid, vec![3, 2, 1, 0]).unwrap();
        let img = plan.flatten(&seq).unwrap();
        let back = plan.unflatten(&img).unwrap();
        for k in 0..4 {
            assert_eq!(back.frame(k)[[0, 0, 0]], k as f32);
        }
    }

    #[test]
    fn unflatten_single_frame_is_identity() {
        let seq = ramp_frames(1, 1, 4, 4);
        let grid = GridSpec::new(1, 1, 4, 4).unwrap();
        let plan = FlattenPlan::row_major(grid);
        let img = plan.flatten(&seq).unwrap();
        assert_eq!(plan.unflatten(&img).unwrap().data(), seq.data());
    }

    #[test]
    fn unflatten_rejects_wrong_dims() {
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let plan = FlattenPlan::row_major(grid);
        let img = FlatImage::new(Array3::zeros((1, 4, 6)));
        assert!(matches!(
            plan.unflatten(&img),
            Err(Error::CompositeDimsMismatch { h: 4, w: 6 })
        ));
    }

    #[test]
    fn conservation_pixel_multiset_is_preserved() {
        let seq = ramp_frames(9, 2, 3, 4);
        let grid = GridSpec::new(3, 3, 3, 4).unwrap();
        let img = FlattenPlan::random_seeded(grid, 99).flatten(&seq).unwrap();
        let mut before: Vec<u32> = seq.data().iter().map(|v| v.to_bits()).collect();
        let mut after: Vec<u32> = img.pixels.iter().map(|v| v.to_bits()).collect();
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after);
    }

    #[test]
    fn block_locality_constant_frames_stay_whole() {
        let values: Vec<f32> = (0..16).map(|k| k as f32).collect();
        let seq = const_frames(&values, 1, 3, 3);
        let grid = GridSpec::new(4, 4, 3, 3).unwrap();
        for plan in [
            FlattenPlan::row_major(grid),
            FlattenPlan::nested(grid, 4).unwrap(),
            FlattenPlan::random_seeded(grid, 3),
        ] {
            let img = plan.flatten(&seq).unwrap();
            for r in 0..4 {
                for c in 0..4 {
                    let block = img
                        .pixels
                        .slice(s![.., r * 3..(r + 1) * 3, c * 3..(c + 1) * 3]);
                    let first = block[[0, 0, 0]];
                    assert!(block.iter().all(|&v| v == first));
                }
            }
        }
    }
}
