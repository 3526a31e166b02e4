//! Simulate a scenario and round-trip its run log through disk. Prints the
//! metrics report and writes the CSV series used for plotting.
//!
//! cargo run --release --example metrics_report -- scenarios/minimal.toml /tmp/seatrack-report

use std::path::PathBuf;

use seatrack::config::parse_config;
use seatrack::eval::{compute_report, write_csv_series};
use seatrack::sim::{run_scenario, RunLog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scenario = args.next().unwrap_or_else(|| "scenarios/minimal.toml".into());
    let out = PathBuf::from(
        args.next()
            .unwrap_or_else(|| std::env::temp_dir().join("seatrack-report").display().to_string()),
    );
    std::fs::create_dir_all(&out)?;

    let log = run_scenario(&parse_config(&scenario)?)?;
    let path = out.join("runlog.jsonl");
    log.write(&path)?;
    let log = RunLog::read(&path)?;
    let report = compute_report(&log)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for f in write_csv_series(&log, &out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
