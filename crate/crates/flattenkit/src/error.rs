use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a perfect square; supply an explicit rows x cols grid")]
    NotPerfectSquare(usize),

    #[error("frame index {index} out of range for {count} frames")]
    FrameIndexOutOfRange { index: usize, count: usize },

    #[error("grid {rows}x{cols} does not tile {frames} frames")]
    GridFrameCountMismatch {
        rows: usize,
        cols: usize,
        frames: usize,
    },

    #[error("block size {block_h}x{block_w} does not match frame size {frame_h}x{frame_w}")]
    BlockSizeMismatch {
        block_h: usize,
        block_w: usize,
        frame_h: usize,
        frame_w: usize,
    },

    #[error("sub-sequence count {n_sub} does not divide frame count {frames}")]
    NonDivisibleSubSequences { n_sub: usize, frames: usize },

    #[error("inner grid {inner_rows}x{inner_cols} and outer grid {outer_rows}x{outer_cols} are inconsistent with the requested layout")]
    NestedGridMismatch {
        inner_rows: usize,
        inner_cols: usize,
        outer_rows: usize,
        outer_cols: usize,
    },

    #[error("permutation is not a bijection on 0..{expected}")]
    InvalidPermutation { expected: usize },

    #[error("composite dimensions {h}x{w} are inconsistent with the plan grid")]
    CompositeDimsMismatch { h: usize, w: usize },

    #[error("frame sequence must contain at least one frame")]
    EmptySequence,

    #[error("invalid view spec {text:?}: {reason}")]
    ViewSpecParse { text: String, reason: String },

    #[error("unsupported spatial crop count {0} (must be 1 or 3)")]
    UnsupportedCropCount(usize),

    #[error("manifest {path}: line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing frame index {0} in frame directory")]
    MissingFrame(usize),

    #[error("no frames matching {pattern:?} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },

    #[error(
        "frame {index} has dimensions {got_c}x{got_h}x{got_w}, expected {want_c}x{want_h}x{want_w}"
    )]
    FrameDimsMismatch {
        index: usize,
        want_c: usize,
        want_h: usize,
        want_w: usize,
        got_c: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("bad magic: not a tensor file")]
    BadMagic,

    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported tensor dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated tensor payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("tensor dimensions overflow")]
    DimOverflow,

    #[error("unsupported channel count {0} for image output (must be 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("sprite leaves the canvas: frame {frame}, bounding box {x0}..{x1} x {y0}..{y1} on a {canvas}px canvas")]
    SpriteOutOfBounds {
        frame: usize,
        x0: i64,
        x1: i64,
        y0: i64,
        y1: i64,
        canvas: usize,
    },

    #[error("no valid start positions for sprite motion (direction {dir_deg} deg, speed {speed}, {frames} frames on a {canvas}px canvas)")]
    NoValidStart {
        dir_deg: u32,
        speed: u32,
        frames: usize,
        canvas: usize,
    },

    #[error("unsupported direction {0} degrees (must be 0, 90, 180, or 270)")]
    InvalidDirection(u32),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("unconfigured: {0}")]
    Unconfigured(&'static str),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for filesystem / decoding failures, false for contract violations.
    /// The CLI maps IO errors to exit code 3 and everything else to 2.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Image(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
