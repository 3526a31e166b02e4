//! One agent's tracker on two drifting targets plus sea clutter, showing
//! track identities over time and the pruning counters.
//!
//! The 99% gate still rejects about one true detection in a hundred. Each
//! rejected one seeds a tentative track, and with plain `d²` association a
//! young diffuse track can win enough hits to be confirmed next to the
//! original. The vessel-side fusion merges such pairs.
//!
//! cargo run --example local_tracking

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seatrack::eval::pruning_efficiency;
use seatrack::linalg::{Mat3, Vec3};
use seatrack::mot::{MotConfig, TrackStatus, Tracker};
use seatrack::percept::Measurement3D;

fn main() -> seatrack::Result<()> {
    let sigma = 0.4;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tracker = Tracker::new(
        1,
        MotConfig {
            n_confirm: 5,
            ..Default::default()
        },
    );

    let targets = [
        (Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.3, 0.0, 0.0)),
        (Vec3::new(10.0, 4.0, 0.0), Vec3::new(0.0, -0.2, 0.0)),
    ];
    for k in 0..300 {
        let t = k as f64 * 0.1;
        let mut meas = Vec::new();
        for (p0, v) in &targets {
            if rng.random::<f64>() < 0.9 {
                let p = p0 + v * t;
                let z = p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                meas.push(measurement(z, sigma, t));
            }
        }
        if rng.random::<f64>() < 0.2 {
            let z = Vec3::new(rng.random_range(-20.0..30.0), rng.random_range(-15.0..15.0), 0.0);
            meas.push(measurement(z, sigma, t));
        }
        tracker.step(&meas, t)?;
        if k % 50 == 49 {
            let live: Vec<String> = tracker
                .tracks()
                .iter()
                .filter(|tr| tr.status == TrackStatus::Confirmed)
                .map(|tr| {
                    let p = tr.position();
                    format!("#{} ({:.2}, {:.2})", tr.id, p.x, p.y)
                })
                .collect();
            println!("t={t:>4.1} s  confirmed: {}", live.join("  "));
        }
    }
    let c = tracker.counters();
    println!(
        "raw {}  pruned {}  used {}  efficiency {:.3}",
        c.raw,
        c.pruned,
        c.used,
        pruning_efficiency(&c)
    );
    println!("update contraction violations: {}", tracker.audit().violations);
    Ok(())
}

fn measurement(position: Vec3, sigma: f64, timestamp: f64) -> Measurement3D {
    Measurement3D {
        position,
        cov: Mat3::identity() * (sigma * sigma),
        agent: 1,
        timestamp,
        range: 20.0,
    }
}
