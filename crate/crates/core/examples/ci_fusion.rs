//! Covariance Intersection versus naive independent fusion when two agents
//! share a correlated error component.
//!
//! cargo run --release --example ci_fusion

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seatrack::fuse::{ci_fuse, naive_fuse, optimize_omega};
use seatrack::linalg::{Mat3, Vec3};

fn main() -> seatrack::Result<()> {
    let p1 = Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 0.5));
    let p2 = Mat3::from_diagonal(&Vec3::new(3.0, 0.5, 1.0));
    println!("optimal omega for the example pair: {:.4}", optimize_omega(&p1, &p2)?);

    let l1 = p1.cholesky().unwrap().l();
    let l2 = p2.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let trials = 5000;
    for rho in [0.0f64, 0.5, 0.9] {
        let (mut ci_in, mut naive_in) = (0, 0);
        for _ in 0..trials {
            let shared = gauss3(&mut rng);
            let (a, b) = (gauss3(&mut rng), gauss3(&mut rng));
            // Unit-variance noise with correlation rho between the two agents.
            let e1 = l1 * (shared * rho.sqrt() + a * (1.0 - rho).sqrt());
            let e2 = l2 * (shared * rho.sqrt() + b * (1.0 - rho).sqrt());
            let ci = ci_fuse(&e1, &p1, &e2, &p2)?;
            let (nm, nc) = naive_fuse(&e1, &p1, &e2, &p2)?;
            ci_in += (nees(&ci.mean, &ci.cov) <= 11.345) as usize;
            naive_in += (nees(&nm, &nc) <= 11.345) as usize;
        }
        println!(
            "rho {rho:.1}: CI inside 99% bound {:.2}%, naive {:.2}%",
            100.0 * ci_in as f64 / trials as f64,
            100.0 * naive_in as f64 / trials as f64
        );
    }
    Ok(())
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from_fn(|_, _| StandardNormal.sample(rng))
}

fn nees(err: &Vec3, cov: &Mat3) -> f64 {
    (err.transpose() * cov.try_inverse().unwrap() * err)[0]
}
