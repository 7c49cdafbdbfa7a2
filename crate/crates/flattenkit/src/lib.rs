//! flattenkit models video time in the image plane: a clip of frames is
//! rearranged into a single tiled composite image, an ordinary 2D
//! classifier learns from the composites, and the rearrangement is exactly
//! invertible.
//!
//! Modules:
//!
//! * [`grid`]: the flatten transforms (row-major, nested, random) and
//!   their block arithmetic;
//! * [`sampler`]: `AxBxCxD` view sampling (resolution, frame count,
//!   spatial crops, temporal crops);
//! * [`ingest`]: manifests, frame directories, tensor files, PNG export;
//! * [`synth`]: synthetic moving-sprite clips whose labels live in the
//!   frame order;
//! * [`learner`]: a small CPU convnet, AdamW training loop, evaluation,
//!   and the transform ablation harness;
//! * [`rng`]: the splitmix64 stream every seeded behaviour is defined in
//!   terms of.

pub mod error;
pub mod grid;
pub mod ingest;
pub mod learner;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    frame_to_block, nested_flatten, random_flatten, row_major_flatten, square_grid_for, unflatten,
    FlatImage, FlattenPlan, FrameSequence, GridSpec, PlanKind, RandomOrder,
};
pub use sampler::{ClipView, ViewSpec};
