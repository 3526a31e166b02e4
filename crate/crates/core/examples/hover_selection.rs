//! Active perception around one target. Scores the hover ring against a
//! keep-out zone, then repeats close-range looks until the termination test
//! fires.
//!
//! cargo run --example hover_selection

use seatrack::linalg::{logdet, Mat3, Vec3};
use seatrack::percept::RangeNoiseModel;
use seatrack::view::{check_termination, evaluate_ring, select_hover, HoverConstraints, RingParams};

fn main() -> seatrack::Result<()> {
    let ring = RingParams::default();
    let noise = RangeNoiseModel::default();
    let p_hat = Vec3::new(10.0, 0.0, 0.0);
    let uav = Vec3::new(0.0, 0.0, 25.0);
    let constraints = HoverConstraints {
        keep_out: vec![Vec3::new(14.0, 0.0, 6.0)],
        r_safe: 3.0,
    };
    let mut p = Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 4.0));

    for c in evaluate_ring(&uav, &p_hat, &p, &constraints, &ring, &noise)? {
        println!(
            "psi {:>5.1} deg  pose ({:>6.2}, {:>6.2}, {:>4.1})  gain {:.3}  travel {:>5.2}  {}",
            c.psi.to_degrees(),
            c.pose.x,
            c.pose.y,
            c.pose.z,
            c.gain,
            c.travel,
            if c.feasible { "ok" } else { "blocked" }
        );
    }
    let best = select_hover(&uav, &p_hat, &p, &constraints, &ring, &noise)?.expect("some candidate is feasible");
    println!("selected psi {:.1} deg", best.psi.to_degrees());

    let (tau_logdet, tau_gain) = (-8.0, 0.05);
    let sigma = noise.sigma((best.pose - p_hat).norm());
    for look in 1.. {
        let r_inv = Mat3::identity() / (sigma * sigma);
        p = (p.try_inverse().unwrap() + r_inv).try_inverse().unwrap();
        let gains: Vec<f64> = evaluate_ring(&best.pose, &p_hat, &p, &constraints, &ring, &noise)?
            .iter()
            .filter(|c| c.feasible)
            .map(|c| c.gain)
            .collect();
        let best_gain = gains.iter().copied().fold(0.0, f64::max);
        let done = check_termination(&p, &gains, tau_logdet, tau_gain)?;
        println!(
            "look {look:>2}: logdet {:>7.3}  best gain {best_gain:.3}  done {done}",
            logdet(&p)?
        );
        if done {
            break;
        }
    }
    Ok(())
}
