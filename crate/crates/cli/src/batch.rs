//! Margin search over a directory of ballot files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::report::margin;
use crate::{is_preflib_path, load_election, AppError, RunConfig};

#[derive(Debug, Serialize)]
struct Row {
    election: String,
    candidates: usize,
    seats: usize,
    ballots: u64,
    quota: u64,
    lower: u64,
    upper: u64,
    exact: bool,
    conditional: bool,
    timed_out: bool,
    models: u64,
    wall_s: f64,
    error: String,
}

fn ballot_files(dir: &Path, with_preflib: bool) -> Result<Vec<PathBuf>, AppError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()) == Some("stv") || (with_preflib && is_preflib_path(p))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Writes one JSON report per election and `summary.csv`; returns the CSV.
/// A file that fails to load is recorded in the summary, not fatal.
pub fn run(config: &RunConfig, dir: &Path, out_dir: &Path) -> Result<String, AppError> {
    let settings = config.search.as_ref().expect("batch runs carry search settings");
    let search = settings.search_config();
    let files = ballot_files(dir, config.seats.is_some())?;
    if files.is_empty() {
        return Err(AppError::Usage(format!("no ballot files in {}", dir.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    for path in files {
        let stem = path.file_stem().map_or("election".into(), |s| s.to_string_lossy().into_owned());
        let mut row = Row {
            election: stem.clone(),
            candidates: 0,
            seats: 0,
            ballots: 0,
            quota: 0,
            lower: 0,
            upper: 0,
            exact: false,
            conditional: false,
            timed_out: false,
            models: 0,
            wall_s: 0.0,
            error: String::new(),
        };
        let outcome = load_election(&path, config.seats, None, false).and_then(|e| {
            let mut own = config.clone();
            own.subcommand = "margin".into();
            own.inputs = vec![path.clone()];
            let report = margin(own, &e, &search)?;
            Ok((e, report))
        });
        match outcome {
            Ok((e, report)) => {
                let target = out_dir.join(format!("{stem}.json"));
                fs::write(&target, report.to_json() + "\n").map_err(|err| AppError::io(&target, err))?;
                let r = &report.result;
                let num = |k: &str| r[k].as_u64().unwrap_or(0);
                let flag = |k: &str| r[k].as_bool().unwrap_or(false);
                row.candidates = e.num_candidates();
                row.seats = e.seats;
                row.ballots = e.total();
                row.quota = e.quota;
                row.lower = num("lower");
                row.upper = num("upper");
                row.exact = flag("exact");
                row.conditional = flag("conditional");
                row.timed_out = flag("timed_out");
                row.models = r["stats"]["models_solved"].as_u64().unwrap_or(0);
                row.wall_s = r["stats"]["wall_ms"].as_f64().unwrap_or(0.0) / 1000.0;
            }
            Err(err) => {
                log::warn!("{}: {err}", path.display());
                row.error = err.to_string();
            }
        }
        csv.serialize(&row).map_err(|e| AppError::Analysis(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| AppError::Analysis(e.to_string()))?;
    let summary = String::from_utf8(bytes).expect("csv output is UTF-8");
    let target = out_dir.join("summary.csv");
    fs::write(&target, &summary).map_err(|e| AppError::io(&target, e))?;
    Ok(summary)
}
