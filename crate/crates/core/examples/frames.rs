//! Walk the transform tree: a point seen by UAV 1's camera, expressed in the
//! world and in the vessel frame.
//!
//! cargo run --example frames

use seatrack::geom::{FrameId, FrameTree, RigidTransform};
use seatrack::linalg::Vec3;

fn main() -> seatrack::Result<()> {
    let mut tree = FrameTree::with_agents([1]);
    // UAV hovering 20 m up, camera pointing straight down.
    tree.set_agent_chain(
        1,
        RigidTransform::identity(),
        RigidTransform::from_translation(Vec3::new(10.0, 5.0, 20.0)),
        RigidTransform::from_ypr_deg([0.0, 0.0, 180.0], Vec3::zeros()),
    );
    // Vessel 60 m south, bow pointing north.
    tree.set(
        FrameId::World,
        FrameId::VesselOdom,
        RigidTransform::new(
            *RigidTransform::rot_z(90f64.to_radians()).rotation(),
            Vec3::new(0.0, -60.0, 0.0),
        )?,
    );

    let p_cam = Vec3::new(1.0, -2.0, 20.0);
    let p_world = tree.camera_to_world(1, &p_cam)?;
    let p_vessel = tree.world_to_vessel(&p_world)?;
    println!("camera  {:>8.3?}", p_cam.as_slice());
    println!("world   {:>8.3?}", p_world.as_slice());
    println!("vessel  {:>8.3?}", p_vessel.as_slice());

    let back = tree.world_from_camera(1)?.inverse().apply(&p_world);
    println!("round trip error {:.2e} m", (back - p_cam).norm());
    for f in tree.frames() {
        println!("frame {f}");
    }
    Ok(())
}
