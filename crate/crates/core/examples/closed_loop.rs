//! Full mission from a scenario file, followed by the metrics report.
//!
//! cargo run --release --example closed_loop -- scenarios/paper_like.toml

use std::time::Instant;

use seatrack::config::parse_config;
use seatrack::eval::compute_report;
use seatrack::sim::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "scenarios/paper_like.toml".into());
    let cfg = parse_config(&path)?;
    let start = Instant::now();
    let log = run_scenario(&cfg)?;
    let elapsed = start.elapsed();
    let report = compute_report(&log)?;
    let summary = log.summary().expect("run logs end with a summary");

    println!("simulated {:.0} s in {:.2?}", summary.duration, elapsed);
    println!(
        "IDF1 {:.4}  IDSW {}  Frag {}",
        report.identity.idf1, report.identity.idsw, report.identity.frag
    );
    if let Some(e) = report.errors {
        println!("MedErr {:.3} m  RMSE {:.3} m  P95 {:.3} m", e.median, e.rmse, e.p95);
    }
    if let (Some(z), Some(s)) = (summary.typical_depth, summary.injected_sigma) {
        println!("typical depth {z:.1} m, injected sigma {s:.3} m");
    }
    for c in &report.containers {
        println!(
            "container {} -> track {:?}, done at {:?}",
            c.container, c.track, c.done_at
        );
    }
    println!("fused tracks {}, handoffs {}", summary.fused_tracks, summary.handoffs);
    println!("bus {:.0} B/s", report.bytes_per_second);
    println!(
        "contraction violations: tracking {}, fusion {}",
        summary.track_audit.violations, summary.fusion_audit.violations
    );
    Ok(())
}
