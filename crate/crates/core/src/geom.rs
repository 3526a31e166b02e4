//! Rigid transforms and the static/dynamic frame tree shared by every agent.
//!
//! Frames follow the usual robotics naming. The world frame `w` parents the
//! vessel's odometry frame `so`, which parents its base `s`. Each UAV `j` has
//! a chain `o_j` → `b_j` → `c_j` (odometry to body to camera). A transform
//! stored under `(parent, child)` maps `child` coordinates into `parent`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix4, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Builds a transform, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).amax();
        if !(ortho <= ORTHO_TOL) || (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Z-Y-X Euler angles in radians: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_ypr(yaw: f64, pitch: f64, roll: f64, translation: Vec3) -> Self {
        let rotation = Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
        Self { rotation, translation }
    }

    pub fn from_ypr_deg(ypr_deg: [f64; 3], translation: Vec3) -> Self {
        let [y, p, r] = ypr_deg.map(f64::to_radians);
        Self::from_ypr(y, p, r, translation)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_ypr(angle, 0.0, 0.0, Vec3::zeros())
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// `self * other`: maps through `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        (self.rotation - other.rotation).amax() <= tol && (self.translation - other.translation).amax() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameId {
    World,
    VesselOdom,
    Vessel,
    Odom(u32),
    Body(u32),
    Camera(u32),
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameId::World => write!(f, "w"),
            FrameId::VesselOdom => write!(f, "so"),
            FrameId::Vessel => write!(f, "s"),
            FrameId::Odom(j) => write!(f, "o{j}"),
            FrameId::Body(j) => write!(f, "b{j}"),
            FrameId::Camera(j) => write!(f, "c{j}"),
        }
    }
}

/// Tree of transforms rooted at the world frame. Every child has exactly one
/// parent; writing a child again replaces its link.
#[derive(Debug, Clone, Default)]
pub struct FrameTree {
    links: BTreeMap<FrameId, (FrameId, RigidTransform)>,
}

impl FrameTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Frame tree with complete identity chains for the given agents and the vessel.
    pub fn with_agents(agents: impl IntoIterator<Item = u32>) -> Self {
        let mut tree = Self::new();
        tree.set(FrameId::World, FrameId::VesselOdom, RigidTransform::identity());
        tree.set(FrameId::VesselOdom, FrameId::Vessel, RigidTransform::identity());
        for j in agents {
            tree.set_agent_chain(
                j,
                RigidTransform::identity(),
                RigidTransform::identity(),
                RigidTransform::identity(),
            );
        }
        tree
    }

    pub fn set(&mut self, parent: FrameId, child: FrameId, t: RigidTransform) {
        self.links.insert(child, (parent, t));
    }

    pub fn set_agent_chain(
        &mut self,
        agent: u32,
        world_odom: RigidTransform,
        odom_body: RigidTransform,
        body_camera: RigidTransform,
    ) {
        self.set(FrameId::World, FrameId::Odom(agent), world_odom);
        self.set(FrameId::Odom(agent), FrameId::Body(agent), odom_body);
        self.set(FrameId::Body(agent), FrameId::Camera(agent), body_camera);
    }

    /// The transform mapping `child` coordinates into `parent`.
    pub fn get(&self, parent: FrameId, child: FrameId) -> Result<&RigidTransform> {
        match self.links.get(&child) {
            Some((p, t)) if *p == parent => Ok(t),
            _ => Err(Error::MissingFrame {
                parent: parent.to_string(),
                child: child.to_string(),
            }),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameId> + '_ {
        std::iter::once(FrameId::World).chain(self.links.keys().copied())
    }

    /// `wT_frame` obtained by walking parents up to the world frame.
    pub fn world_from(&self, frame: FrameId) -> Result<RigidTransform> {
        let mut acc = RigidTransform::identity();
        let mut cur = frame;
        let mut hops = 0;
        while cur != FrameId::World {
            let (parent, t) = self.links.get(&cur).ok_or_else(|| Error::MissingFrame {
                parent: "?".into(),
                child: cur.to_string(),
            })?;
            acc = t.compose(&acc);
            cur = *parent;
            hops += 1;
            if hops > self.links.len() {
                return Err(Error::InvalidArgument("frame tree contains a cycle".into()));
            }
        }
        Ok(acc)
    }

    /// `wT_{o_j} * {o_j}T_{b_j} * {b_j}T_{c_j}` for one UAV.
    pub fn world_from_camera(&self, agent: u32) -> Result<RigidTransform> {
        let wo = self.get(FrameId::World, FrameId::Odom(agent))?;
        let ob = self.get(FrameId::Odom(agent), FrameId::Body(agent))?;
        let bc = self.get(FrameId::Body(agent), FrameId::Camera(agent))?;
        Ok(wo.compose(ob).compose(bc))
    }

    pub fn camera_to_world(&self, agent: u32, p_cam: &Vec3) -> Result<Vec3> {
        Ok(self.world_from_camera(agent)?.apply(p_cam))
    }

    pub fn world_to_frame(&self, frame: FrameId, p_world: &Vec3) -> Result<Vec3> {
        Ok(self.world_from(frame)?.inverse().apply(p_world))
    }

    /// `wT_s = wT_so * soT_s`.
    pub fn world_from_vessel(&self) -> Result<RigidTransform> {
        let wso = self.get(FrameId::World, FrameId::VesselOdom)?;
        let sos = self.get(FrameId::VesselOdom, FrameId::Vessel)?;
        Ok(wso.compose(sos))
    }

    pub fn world_to_vessel(&self, p_world: &Vec3) -> Result<Vec3> {
        Ok(self.world_from_vessel()?.inverse().apply(p_world))
    }
}
