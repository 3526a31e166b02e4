//! Orchestration behind the `seatrack` subcommands.
//!
//! Outputs are staged in a hidden directory under `--out` and renamed into
//! place only after everything has been written.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, ScenarioConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_report, write_csv_series, MetricsReport};
use crate::sim::{run_scenario, RunLog};

pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "metrics.json";

/// Writes into a staging directory, then moves each file into `out`.
fn staged<T>(out: &Path, names: &[&str], write: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stage = out.join(format!(".staging-{}", std::process::id()));
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    }
    fs::create_dir(&stage).map_err(|e| Error::io(&stage, e))?;
    let result = write(&stage).and_then(|v| {
        for n in names {
            let (from, to) = (stage.join(n), out.join(n));
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(v)
    });
    let _ = fs::remove_dir_all(&stage);
    result
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads and validates a scenario, applying an optional seed override.
pub fn load(config: &Path, seed_override: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = parse_config(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn cmd_validate(config: &Path) -> Result<ScenarioConfig> {
    parse_config(config)
}

/// Runs a scenario and writes its outputs to `out`.
pub fn cmd_run(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<Vec<PathBuf>> {
    let cfg = load(config, seed_override)?;
    log::info!("running {} s with {} agents", cfg.duration, cfg.agents.len());
    let names = [RUNLOG_FILE, SUMMARY_FILE, CONFIG_ECHO_FILE];
    staged(out, &names, |stage| {
        let log = run_scenario(&cfg)?;
        log.write(stage.join(RUNLOG_FILE))?;
        write_json(&stage.join(SUMMARY_FILE), &log.summary())?;
        let echo = stage.join(CONFIG_ECHO_FILE);
        fs::write(&echo, cfg.to_toml_string()?).map_err(|e| Error::io(&echo, e))?;
        Ok(())
    })?;
    Ok(names.iter().map(|n| out.join(n)).collect())
}

/// Reads a run log and writes the metrics report plus CSV series next to it
/// (or into `out` when given).
pub fn cmd_report(runlog: &Path, out: Option<&Path>) -> Result<MetricsReport> {
    let log = RunLog::read(runlog)?;
    let report = compute_report(&log)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => runlog.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let names = [REPORT_FILE, "logdet.csv", "assignment_fractions.csv", "pruning.csv"];
    staged(&dir, &names, |stage| {
        write_json(&stage.join(REPORT_FILE), &report)?;
        write_csv_series(&log, stage)?;
        Ok(())
    })?;
    Ok(report)
}
