//! Converts synchronized point-cloud and multi-camera streams into a
//! persistent, queryable 4D scene graph of tokenized objects.

pub mod clustering;
pub mod config;
pub mod geometry;
pub mod graph4d;
mod http;
pub mod lidarseg;
pub mod mask;
pub mod pipeline;
pub mod refinement;
pub mod scene_io;
pub mod seg;
pub mod step;
pub mod synth;
pub mod temporal;
pub mod transform;
pub mod vlm;
