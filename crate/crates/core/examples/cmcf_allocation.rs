//! Vessel-side allocation of three UAVs over five fused targets by
//! capacitated min-cost flow. The second round feeds back the first round's
//! primaries to show the stickiness bonus.
//!
//! cargo run --example cmcf_allocation

use seatrack::alloc::{solve_cmcf, AllocConfig, CostMatrix, TargetInput, UavInput};
use seatrack::linalg::{Mat3, Vec3};

fn main() -> seatrack::Result<()> {
    let cfg = AllocConfig::default();
    let targets: Vec<TargetInput> = [
        (1, [-40.0, 8.0], 4.0),
        (2, [-22.0, -10.0], 1.0),
        (3, [3.0, 12.0], 9.0),
        (4, [20.0, -6.0], 0.5),
        (5, [42.0, 5.0], 2.0),
    ]
    .into_iter()
    .map(|(id, [x, y], var)| TargetInput {
        id,
        mean: Vec3::new(x, y, 0.0),
        cov: Mat3::identity() * var,
    })
    .collect();
    let mut uavs: Vec<UavInput> = [(1, -35.0), (2, 0.0), (3, 35.0)]
        .into_iter()
        .map(|(id, x)| UavInput {
            id,
            position: Vec3::new(x, 0.0, 25.0),
            prev_target: None,
        })
        .collect();

    for round in 0..2 {
        let costs = CostMatrix::build(&uavs, &targets, &cfg)?;
        println!("round {round} costs:");
        for (u, row) in costs.uav_ids.iter().zip(&costs.cost) {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map_or("   --  ".into(), |c| format!("{c:>7.2}")))
                .collect();
            println!("  uav {u}: {}", cells.join(" "));
        }
        let a = solve_cmcf(&costs, cfg.capacity);
        println!("  flow {} total cost {:.3}", a.flow, a.total_cost);
        for ua in &a.per_uav {
            println!("  uav {} -> {:?} primary {:?}", ua.uav, ua.targets, ua.primary);
        }
        for u in &mut uavs {
            u.prev_target = a.primary_of(u.id);
        }
    }
    Ok(())
}
