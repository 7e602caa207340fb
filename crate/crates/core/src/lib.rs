//! Multi-camera volumetric motion capture.
//!
//! The pipeline turns calibrated color frames into a probabilistic voxel
//! reconstruction and then tracks a 31-DOF cylinder body model against the
//! reprojected voxel cloud with an annealed particle filter:
//!
//! 1. [`silhouette`]: per-pixel foreground posterior against a Gaussian
//!    background model, plus edge maps of binary silhouettes.
//! 2. [`voxelgrid`]: Bayesian occupancy fusion across views with an
//!    occlusion latent, smoothing, thresholding, surface extraction and
//!    coloring.
//! 3. [`bodymodel`]: forward kinematics of the 10-cylinder body and its
//!    projection into each camera.
//! 4. [`tracker`]: the annealed particle filter and the edge/silhouette
//!    weight function.
//!
//! Every data-parallel stage runs through [`parallel`], whose outputs are
//! bit-identical at any worker count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bodymodel;
pub mod geometry;
pub mod image;
pub mod parallel;
pub mod rng;
pub mod silhouette;
pub mod synth;
pub mod tracker;
pub mod voxelgrid;

pub use bodymodel::{
    forward_kinematics, project_cylinders, BodyModel, CylinderSpec, PartName, PlacedCylinder,
    PoseVector, ProjectedCylinder, POSE_DOF,
};
pub use geometry::{load_rig, project_point, CameraModel, CameraRig, Projection};
pub use image::{Plane, RgbImage};
pub use parallel::{par_map, par_reduce, try_par_map, ParallelConfig};
pub use silhouette::{
    compute_edge_map, compute_slm, train_background, BackgroundModel, EdgeMap,
    SilhouetteLikelihoodMap,
};
pub use tracker::{
    apf_frame, build_measurement, diffuse, estimate, reproject_voxels, resample, ssd_weight,
    AnnealSchedule, Measurement, Particle, ParticleSet,
};
pub use voxelgrid::{
    color_voxels, extract_surface, fuse_occupancy, per_view_likelihood, smooth_and_threshold,
    voxel_centers, BinaryVolume, FusionParams, OccupancyGrid, VolumeOfInterest, VoxelCloud,
};

use thiserror::Error;

/// Any error produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Silhouette(#[from] silhouette::SilhouetteError),
    #[error(transparent)]
    Voxel(#[from] voxelgrid::VoxelError),
    #[error(transparent)]
    Body(#[from] bodymodel::BodyError),
    #[error(transparent)]
    Track(#[from] tracker::TrackError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
