//! Synthetic stereo detections of one container lifted to world-frame
//! measurements, compared against the first-order depth noise.
//!
//! cargo run --example stereo_lift

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seatrack::geom::{FrameTree, RigidTransform};
use seatrack::linalg::{Mat3, Vec3};
use seatrack::percept::{lift, synth_detect, CameraIntrinsics, DetectorModel, RangeNoiseModel};

fn main() -> seatrack::Result<()> {
    let intr = CameraIntrinsics::default();
    let model = DetectorModel {
        disparity_std: 0.25,
        lambda_fp: 0.0,
        ..Default::default()
    };
    let noise = RangeNoiseModel::default();
    let target = Vec3::new(3.0, -2.0, 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for alt in [6.0, 15.0, 25.0, 40.0] {
        let body = RigidTransform::from_translation(Vec3::new(0.0, 0.0, alt));
        let cam = RigidTransform::from_ypr_deg([0.0, 0.0, 180.0], Vec3::zeros());
        let mut tree = FrameTree::with_agents([1]);
        tree.set_agent_chain(1, RigidTransform::identity(), body, cam);
        let w_c = tree.world_from_camera(1)?;

        let mut errs = Vec::new();
        let mut z_sigma = 0.0;
        for _ in 0..500 {
            for d in synth_detect(&[(1, target)], &w_c, &intr, &model, &mut rng) {
                if let Some(m) = lift(&d, &intr, &tree, 1, &noise, &Mat3::zeros(), 0.0)? {
                    errs.push((m.position - target).norm());
                    z_sigma = m.cov[(0, 0)].sqrt();
                }
            }
        }
        errs.sort_by(f64::total_cmp);
        println!(
            "altitude {alt:>4.0} m: {} lifts, median error {:.3} m, depth std {:.3} m, model sigma {:.3} m",
            errs.len(),
            errs[errs.len() / 2],
            intr.depth_std(alt, model.disparity_std),
            z_sigma,
        );
    }
    Ok(())
}
