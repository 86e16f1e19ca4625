// negated float comparisons are used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod camera;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod labeling;
pub mod pattern;
pub mod plane;
pub mod residuals;
pub mod sidecar;
pub mod tree;
pub mod synth;
