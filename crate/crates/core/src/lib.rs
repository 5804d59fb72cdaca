//! Temporal error concealment for video frames with lost macroblocks.
//!
//! The pipeline estimates dense motion on the pixels that arrived intact,
//! refines and in-fills the whole displacement field with a regularized
//! functional built on the q-discrepancy Bregman divergence, and finally
//! motion-compensates the lost macroblocks from the previous frame.
//!
//! * [`imaging`]: frames, displacement fields, sampling and warping.
//! * [`motion`]: windowed least-squares motion estimation.
//! * [`regularizer`]: the Bregman-regularized functional and its Newton /
//!   Gauss-Seidel solver.
//! * [`concealment`]: loss simulation, baselines and the concealment pipeline.
//! * [`metrics_io`]: PSNR, PGM / raw YUV 4:2:0 readers and CSV reports.
//! * [`pipeline`]: the `simulate` / `conceal` / `evaluate` commands.

pub mod concealment;
pub mod error;
pub mod imaging;
pub mod metrics_io;
pub mod motion;
pub mod pipeline;
pub mod regularizer;
pub mod synthetic;

pub use error::{Error, Result};
pub use imaging::{DisplacementVector, Frame, MotionField, PixelMask, PixelPos};
