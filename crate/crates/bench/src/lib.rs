//! Shared fixtures for the benchmarks.

use voxelcap::synth::{build_ring_rig, default_standing_pose, render_silhouette, RingSpec, Solid};
use voxelcap::*;

/// Everything one pipeline frame needs, built from the standing body.
pub struct Fixture {
    pub rig: CameraRig,
    pub body: BodyModel,
    pub pose: PoseVector,
    pub voi: VolumeOfInterest,
    pub slms: Vec<SilhouetteLikelihoodMap>,
    pub grid: OccupancyGrid,
    pub measurement: Measurement,
}

pub fn ring(cameras: usize) -> RingSpec {
    RingSpec {
        n_cameras: cameras,
        radius: 3500.0,
        height: 1200.0,
        look_at: [0.0, 0.0, 900.0],
        focal: 420.0,
        image_width: 320,
        image_height: 240,
    }
}

impl Fixture {
    /// `spacing` sets the voxel size in mm over a 1.8 x 0.8 x 1.76 m box.
    pub fn new(cameras: usize, spacing: f64) -> Self {
        let cfg = ParallelConfig::default();
        let rig = build_ring_rig(&ring(cameras)).expect("valid ring");
        let body = BodyModel::default();
        let pose = default_standing_pose();
        let solids: Vec<Solid> = forward_kinematics(&pose, &body).iter().map(Solid::from).collect();
        let masks: Vec<Plane<u8>> = rig.iter().map(|c| render_silhouette(c, &solids, &cfg)).collect();
        let slms = rig
            .iter()
            .zip(&masks)
            .map(|(c, m)| SilhouetteLikelihoodMap {
                camera_id: c.id(),
                values: m.map(|&v| if v != 0 { 0.95 } else { 0.05 }),
            })
            .collect::<Vec<_>>();
        let dims = |mm: f64| (mm / spacing).round().max(1.0) as usize;
        let voi = VolumeOfInterest::new([-900.0, -400.0, 0.0], spacing, [dims(1800.0), dims(800.0), dims(1760.0)])
            .expect("valid volume");
        let grid = fuse_occupancy(&voi, &rig, &slms, &FusionParams::default(), &cfg).expect("matching views");
        let measurement = build_measurement(&masks, &cfg);
        Self {
            rig,
            body,
            pose,
            voi,
            slms,
            grid,
            measurement,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_sees_the_body() {
        let fx = Fixture::new(2, 80.0);
        assert_eq!(fx.slms.len(), 2);
        assert_eq!(fx.measurement.cameras.len(), 2);
        assert!(fx.grid.prob.iter().any(|&p| p > 0.5));
    }
}
