//! Post-processing core for congenital-heart CT segmentation.
//!
//! The crate turns a cardiac CT volume and chamber masks into a labeled
//! seven-substructure map: blood-pool thresholding with a boundary class,
//! chamber refinement, vessel skeletonization, an attributed vessel graph,
//! exact graph matching against anatomy templates, Dice evaluation and
//! printable STL meshes. [`phantom`] generates synthetic anatomy variants
//! with ground truth for every stage.

pub mod components;
pub mod error;
pub mod graph;
pub mod matching;
pub mod mesh;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod segment;
pub mod skeleton;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{
    crop, paste, resample, BoundingBox, Connectivity, Dims, IntensityVolume, Label, LabelVolume,
    Mask, Volume, VoxelSpacing,
};
