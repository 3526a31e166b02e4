//! UAV navigation filter fusing GPS and IMU while the vehicle speeds up,
//! with the aggressive-maneuver inflation on the step change.
//!
//! cargo run --example nav_filter

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seatrack::linalg::{logdet, Vec3};
use seatrack::nav::{nav_init, nav_predict, nav_update, NavMeasurement, NavNoiseConfig};

fn main() -> seatrack::Result<()> {
    let cfg = NavNoiseConfig::default();
    let dt = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gps = Normal::new(0.0, cfg.gps_std).unwrap();
    let imu = Normal::new(0.0, cfg.imu_std).unwrap();
    let noisy =
        |v: Vec3, n: &Normal<f64>, rng: &mut ChaCha8Rng| v + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));

    let mut pos = Vec3::new(0.0, 0.0, 20.0);
    let mut vel = Vec3::zeros();
    let mut s = nav_init(&noisy(pos, &gps, &mut rng), &cfg, 0.0)?;
    for k in 1..=200 {
        let new_vel = if k >= 100 {
            Vec3::new(2.0, 0.0, 0.0)
        } else {
            Vec3::zeros()
        };
        let aggressive = (new_vel - vel).norm() > cfg.aggressive_speed_change;
        let acc = (new_vel - vel) / dt;
        vel = new_vel;
        pos += vel * dt;

        s = nav_predict(&s, dt, &cfg, aggressive)?;
        s = nav_update(&s, &NavMeasurement::Gps(noisy(pos, &gps, &mut rng)), &cfg)?;
        s = nav_update(&s, &NavMeasurement::Imu(noisy(acc, &imu, &mut rng)), &cfg)?;
        if k % 20 == 0 || aggressive {
            println!(
                "t={:>5.1} s  pos err {:.3} m  vel err {:.3} m/s  logdet(P_pos) {:>7.3}{}",
                k as f64 * dt,
                (s.position() - pos).norm(),
                (s.velocity() - vel).norm(),
                logdet(&s.position_cov())?,
                if aggressive { "  (aggressive)" } else { "" },
            );
        }
    }
    Ok(())
}
