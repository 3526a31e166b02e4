//! Synthetic stereo detections and their lifting to world-frame 3D
//! measurements.
//!
//! The learned detector is replaced by [`synth_detect`], which projects the
//! true targets into the camera and encodes their disparity in a small patch
//! of samples. Everything downstream of the detection (median disparity,
//! pinhole back-projection, range-dependent covariance) is the same math a
//! real stereo front-end would run.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{FrameTree, RigidTransform};
use crate::linalg::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
    pub width: u32,
    pub height: u32,
    pub d_min: f64,
    pub d_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Minimum number of in-range disparity samples for a usable detection.
    pub min_support: usize,
    /// Tolerated excursion (m) of the raw depth outside `[z_min, z_max]`
    /// before the detection is rejected instead of clamped.
    pub depth_slack: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            f: 320.0,
            cx: 320.0,
            cy: 240.0,
            baseline: 0.3,
            width: 640,
            height: 480,
            d_min: 0.5,
            d_max: 64.0,
            z_min: 0.5,
            z_max: 60.0,
            min_support: 9,
            depth_slack: 5.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.f > 0.0) {
            return Err(("f", "must be > 0".into()));
        }
        if !(self.baseline > 0.0) {
            return Err(("baseline", "must be > 0".into()));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(("d_min", "need 0 < d_min < d_max".into()));
        }
        if !(self.z_min > 0.0 && self.z_min < self.z_max) {
            return Err(("z_min", "need 0 < z_min < z_max".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(("width", "image size must be non-zero".into()));
        }
        if !(self.depth_slack >= 0.0) {
            return Err(("depth_slack", "must be >= 0".into()));
        }
        Ok(())
    }

    pub fn fb(&self) -> f64 {
        self.f * self.baseline
    }

    /// Pixel center and depth of a camera-frame point, if it lies in front
    /// of the camera and inside the image.
    pub fn project(&self, p_cam: &Vec3) -> Option<(f64, f64, f64)> {
        let z = p_cam.z;
        if !(z > 0.0) {
            return None;
        }
        let u = self.cx + self.f * p_cam.x / z;
        let v = self.cy + self.f * p_cam.y / z;
        let inside = (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v);
        inside.then_some((u, v, z))
    }

    /// First-order depth standard deviation at depth `z` for disparity noise `sigma_d`.
    pub fn depth_std(&self, z: f64, sigma_d: f64) -> f64 {
        z * z * sigma_d / self.fb()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub disparity_patch: Vec<f64>,
    pub class_id: u32,
    /// Ground-truth target behind the detection (`None` for clutter).
    /// Simulation bookkeeping only; the tracking pipeline never reads it.
    pub source: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement3D {
    pub position: Vec3,
    pub cov: Mat3,
    pub agent: u32,
    pub timestamp: f64,
    /// Slant range camera → target used for the covariance model.
    pub range: f64,
}

/// Median of the patch samples inside `[d_min, d_max]`; `None` when fewer than
/// `min_support` samples survive.
pub fn median_disparity(det: &Detection, intr: &CameraIntrinsics) -> Option<f64> {
    let mut valid: Vec<f64> = det
        .disparity_patch
        .iter()
        .copied()
        .filter(|d| d.is_finite() && *d >= intr.d_min && *d <= intr.d_max)
        .collect();
    if valid.is_empty() || valid.len() < intr.min_support {
        return None;
    }
    valid.sort_by(f64::total_cmp);
    let n = valid.len();
    Some(if n % 2 == 1 {
        valid[n / 2]
    } else {
        0.5 * (valid[n / 2 - 1] + valid[n / 2])
    })
}

/// Pinhole stereo back-projection with depth clamping.
pub fn back_project(center: (f64, f64), d: f64, intr: &CameraIntrinsics) -> Option<Vec3> {
    if !(d >= intr.d_min && d <= intr.d_max) {
        return None;
    }
    let raw = intr.fb() / d;
    if raw < intr.z_min - intr.depth_slack || raw > intr.z_max + intr.depth_slack {
        return None;
    }
    let z = raw.clamp(intr.z_min, intr.z_max);
    let (u, v) = center;
    Some(Vec3::new((u - intr.cx) * z / intr.f, (v - intr.cy) * z / intr.f, z))
}

/// Linear range model `sigma(d) = sigma0 + k * d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeNoiseModel {
    pub sigma0: f64,
    pub k: f64,
}

impl Default for RangeNoiseModel {
    fn default() -> Self {
        Self { sigma0: 0.1, k: 0.08 }
    }
}

impl RangeNoiseModel {
    pub fn sigma(&self, range: f64) -> f64 {
        self.sigma0 + self.k * range
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.sigma0 > 0.0) {
            return Err(("sigma0", "must be > 0".into()));
        }
        if !(self.k >= 0.0) {
            return Err(("k", "must be >= 0".into()));
        }
        Ok(())
    }
}

/// `R(d) = sigma(d)^2 * I3`.
pub fn range_noise(range: f64, model: &RangeNoiseModel) -> Result<Mat3> {
    if !(range >= 0.0) {
        return Err(Error::InvalidArgument(format!("range must be >= 0, got {range}")));
    }
    let s = model.sigma(range);
    Ok(Mat3::identity() * (s * s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub p_det: f64,
    /// Disparity noise std (px), shared by all samples of one detection.
    pub disparity_std: f64,
    /// Per-sample disparity jitter (px) on top of the shared error.
    pub sample_jitter: f64,
    /// Bounding-box center noise std (px).
    pub pixel_std: f64,
    /// Mean number of clutter detections per frame.
    pub lambda_fp: f64,
    pub confidence: [f64; 2],
    pub fp_confidence: [f64; 2],
    /// Detections below this confidence are discarded before lifting.
    pub min_confidence: f64,
    pub patch_size: usize,
    /// Fraction of patch samples replaced by invalid (zero) disparities.
    pub invalid_fraction: f64,
    /// Physical target extent (m) used for the bounding-box size.
    pub target_size: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            p_det: 0.9,
            disparity_std: 0.1,
            sample_jitter: 0.0,
            pixel_std: 0.5,
            lambda_fp: 0.1,
            confidence: [0.90, 0.97],
            fp_confidence: [0.30, 0.70],
            min_confidence: 0.5,
            patch_size: 25,
            invalid_fraction: 0.1,
            target_size: 2.5,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.p_det) {
            return Err(("p_det", "must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(("min_confidence", "must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.invalid_fraction) {
            return Err(("invalid_fraction", "must be in [0,1]".into()));
        }
        for (name, v) in [
            ("disparity_std", self.disparity_std),
            ("sample_jitter", self.sample_jitter),
            ("pixel_std", self.pixel_std),
            ("lambda_fp", self.lambda_fp),
        ] {
            if !(v >= 0.0) {
                return Err((name, "must be >= 0".into()));
            }
        }
        for (name, [lo, hi]) in [("confidence", self.confidence), ("fp_confidence", self.fp_confidence)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err((name, "need 0 <= lo <= hi <= 1".into()));
            }
        }
        if self.patch_size == 0 {
            return Err(("patch_size", "must be >= 1".into()));
        }
        if !(self.target_size > 0.0) {
            return Err(("target_size", "must be > 0".into()));
        }
        Ok(())
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn patch<R: Rng + ?Sized>(rng: &mut R, d: f64, model: &DetectorModel) -> Vec<f64> {
    (0..model.patch_size)
        .map(|_| {
            if rng.random::<f64>() < model.invalid_fraction {
                0.0
            } else {
                d + gauss(rng, model.sample_jitter)
            }
        })
        .collect()
}

/// Synthetic detector: projects visible targets with probability `p_det` and
/// adds Poisson clutter. Clutter sits on the sea surface (`z = 0` in the
/// world) when the pixel ray hits it, otherwise at a uniform valid disparity.
pub fn synth_detect<R: Rng + ?Sized>(
    truth: &[(u32, Vec3)],
    world_from_camera: &RigidTransform,
    intr: &CameraIntrinsics,
    model: &DetectorModel,
    rng: &mut R,
) -> Vec<Detection> {
    let cam_from_world = world_from_camera.inverse();
    let mut out = Vec::new();
    for (id, p) in truth {
        let p_cam = cam_from_world.apply(p);
        let Some((u, v, z)) = intr.project(&p_cam) else {
            continue;
        };
        if z > intr.z_max {
            continue;
        }
        if rng.random::<f64>() >= model.p_det {
            continue;
        }
        let d = intr.fb() / z + gauss(rng, model.disparity_std);
        let u = u + gauss(rng, model.pixel_std);
        let v = v + gauss(rng, model.pixel_std);
        let size = intr.f * model.target_size / z;
        out.push(Detection {
            bbox: BBox { u, v, w: size, h: size },
            confidence: uniform_in(rng, model.confidence),
            disparity_patch: patch(rng, d, model),
            class_id: 0,
            source: Some(*id),
        });
    }

    let n_fp = if model.lambda_fp > 0.0 {
        Poisson::new(model.lambda_fp)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    for _ in 0..n_fp {
        let u = rng.random_range(0.0..intr.width as f64);
        let v = rng.random_range(0.0..intr.height as f64);
        let ray = world_from_camera.rotation() * Vec3::new((u - intr.cx) / intr.f, (v - intr.cy) / intr.f, 1.0);
        let origin = world_from_camera.translation();
        // Depth along the optical axis at which the ray meets z = 0.
        let z_hit = if ray.z < -1e-6 { -origin.z / ray.z } else { f64::NAN };
        let d = if z_hit.is_finite() && z_hit > 0.0 {
            intr.fb() / z_hit + gauss(rng, model.disparity_std)
        } else {
            rng.random_range(intr.d_min..intr.d_max)
        };
        let size = intr.f * model.target_size * 0.5 / (intr.fb() / d.max(intr.d_min));
        out.push(Detection {
            bbox: BBox { u, v, w: size, h: size },
            confidence: uniform_in(rng, model.fp_confidence),
            disparity_patch: patch(rng, d, model),
            class_id: 0,
            source: None,
        });
    }
    out
}

/// Lifts a detection into a world-frame measurement for `agent`.
///
/// The covariance is the range model evaluated at the camera range plus the
/// agent's own position uncertainty.
pub fn lift(
    det: &Detection,
    intr: &CameraIntrinsics,
    tree: &FrameTree,
    agent: u32,
    noise: &RangeNoiseModel,
    nav_pos_cov: &Mat3,
    timestamp: f64,
) -> Result<Option<Measurement3D>> {
    let Some(d) = median_disparity(det, intr) else {
        return Ok(None);
    };
    let Some(p_cam) = back_project((det.bbox.u, det.bbox.v), d, intr) else {
        return Ok(None);
    };
    let range = p_cam.norm();
    let position = tree.camera_to_world(agent, &p_cam)?;
    let cov = crate::linalg::symmetrize(&(range_noise(range, noise)? + nav_pos_cov));
    Ok(Some(Measurement3D {
        position,
        cov,
        agent,
        timestamp,
        range,
    }))
}
