//! Constant-acceleration localization filter fusing GPS position and
//! gravity-compensated IMU acceleration.
//!
//! State layout is `[p; v; a]` (9 states). The filter output provides the
//! world-from-odometry transform of each agent.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{finite3, min_eigenvalue, spd_inverse, symmetrize, Mat3, Vec3};

pub type Vec9 = SVector<f64, 9>;
pub type Mat9 = SMatrix<f64, 9, 9>;
type Mat3x9 = SMatrix<f64, 3, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavNoiseConfig {
    /// White-jerk power spectral density per axis (m²/s⁵).
    pub process_psd: [f64; 3],
    pub gps_std: f64,
    pub imu_std: f64,
    /// Process-noise multiplier applied on ticks flagged as aggressive.
    pub inflation: f64,
    /// Commanded speed change (m/s) within one tick above which a tick is aggressive.
    pub aggressive_speed_change: f64,
    pub init_pos_var: f64,
    pub init_vel_var: f64,
    pub init_acc_var: f64,
    /// Run the GPS update every `gps_divisor` ticks.
    pub gps_divisor: u32,
    pub imu_divisor: u32,
}

impl Default for NavNoiseConfig {
    fn default() -> Self {
        Self {
            process_psd: [0.5, 0.5, 0.5],
            gps_std: 0.3,
            imu_std: 0.05,
            inflation: 4.0,
            aggressive_speed_change: 0.5,
            init_pos_var: 100.0,
            init_vel_var: 10.0,
            init_acc_var: 10.0,
            gps_divisor: 1,
            imu_divisor: 1,
        }
    }
}

impl NavNoiseConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.process_psd.iter().any(|q| !(*q >= 0.0)) {
            return Err(("process_psd", "must be non-negative".into()));
        }
        for (name, v) in [
            ("gps_std", self.gps_std),
            ("imu_std", self.imu_std),
            ("init_pos_var", self.init_pos_var),
            ("init_vel_var", self.init_vel_var),
            ("init_acc_var", self.init_acc_var),
        ] {
            if !(v > 0.0) {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.inflation >= 1.0) {
            return Err(("inflation", "must be >= 1".into()));
        }
        if self.gps_divisor == 0 || self.imu_divisor == 0 {
            return Err(("gps_divisor", "sensor divisors must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub mean: Vec9,
    pub cov: Mat9,
    pub timestamp: f64,
}

impl NavState {
    pub fn position(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(3).into_owned()
    }

    pub fn acceleration(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(6).into_owned()
    }

    pub fn position_cov(&self) -> Mat3 {
        self.cov.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Symmetric within 1e-9 and no eigenvalue below -1e-9.
    pub fn covariance_ok(&self) -> bool {
        crate::linalg::symmetric(&self.cov, 1e-9) && min_eigenvalue(&self.cov) >= -1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NavMeasurement {
    Gps(Vec3),
    Imu(Vec3),
}

pub fn nav_init(z_gps: &Vec3, noise: &NavNoiseConfig, timestamp: f64) -> Result<NavState> {
    if !finite3(z_gps) {
        return Err(Error::NonFinite("GPS fix"));
    }
    let mut mean = Vec9::zeros();
    mean.fixed_rows_mut::<3>(0).copy_from(z_gps);
    let mut diag = Vec9::zeros();
    for i in 0..3 {
        diag[i] = noise.init_pos_var;
        diag[i + 3] = noise.init_vel_var;
        diag[i + 6] = noise.init_acc_var;
    }
    Ok(NavState {
        mean,
        cov: Mat9::from_diagonal(&diag),
        timestamp,
    })
}

pub fn transition(dt: f64) -> Mat9 {
    let mut f = Mat9::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
        f[(i, i + 6)] = 0.5 * dt * dt;
        f[(i + 3, i + 6)] = dt;
    }
    f
}

/// Discretised white-jerk process noise.
pub fn process_noise(dt: f64, psd: &[f64; 3]) -> Mat9 {
    let (d2, d3, d4, d5) = (dt.powi(2), dt.powi(3), dt.powi(4), dt.powi(5));
    let block = [
        [d5 / 20.0, d4 / 8.0, d3 / 6.0],
        [d4 / 8.0, d3 / 3.0, d2 / 2.0],
        [d3 / 6.0, d2 / 2.0, dt],
    ];
    let mut q = Mat9::zeros();
    for (axis, &s) in psd.iter().enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                q[(axis + 3 * r, axis + 3 * c)] = s * block[r][c];
            }
        }
    }
    q
}

pub fn nav_predict(s: &NavState, dt: f64, noise: &NavNoiseConfig, aggressive: bool) -> Result<NavState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    let f = transition(dt);
    let scale = if aggressive { noise.inflation } else { 1.0 };
    let q = process_noise(dt, &noise.process_psd) * scale;
    Ok(NavState {
        mean: f * s.mean,
        cov: symmetrize(&(f * s.cov * f.transpose() + q)),
        timestamp: s.timestamp + dt,
    })
}

fn selector(offset: usize) -> Mat3x9 {
    let mut h = Mat3x9::zeros();
    for i in 0..3 {
        h[(i, offset + i)] = 1.0;
    }
    h
}

/// Linear Kalman update in Joseph form.
pub fn nav_update(s: &NavState, z: &NavMeasurement, noise: &NavNoiseConfig) -> Result<NavState> {
    let (h, z, std) = match z {
        NavMeasurement::Gps(p) => (selector(0), p, noise.gps_std),
        NavMeasurement::Imu(a) => (selector(6), a, noise.imu_std),
    };
    if !finite3(z) {
        return Err(Error::NonFinite("navigation measurement"));
    }
    let r = Mat3::identity() * (std * std);
    let innov = z - h * s.mean;
    let ph = s.cov * h.transpose();
    let s_mat = symmetrize(&(h * ph + r));
    let k = ph * spd_inverse(&s_mat, "innovation covariance")?;
    let ikh = Mat9::identity() - k * h;
    let cov = symmetrize(&(ikh * s.cov * ikh.transpose() + k * r * k.transpose()));
    Ok(NavState {
        mean: s.mean + k * innov,
        cov,
        timestamp: s.timestamp,
    })
}
