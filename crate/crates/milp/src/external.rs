//! Delegating a model to an external solver executable.
//!
//! The executable is called as `<path> <model.lp> <solution.txt>` and must
//! write the solution file: one `name value` line per variable, plus
//! optional `status <optimal|infeasible|stalled|timelimit>` and
//! `bound <value>` lines. Missing variables are read as zero.

use std::path::Path;
use std::process::Command;

use crate::bnb::{SolveResult, Status};
use crate::lp_format::write_lp;
use crate::model::LinearModel;

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("cannot run external solver: {0}")]
    Io(#[from] std::io::Error),
    #[error("external solver exited with {0}")]
    Failed(std::process::ExitStatus),
    #[error("solution line {0}: {1}")]
    Solution(usize, String),
}

pub fn solve_external(model: &LinearModel, program: &Path) -> Result<SolveResult, ExternalError> {
    let dir = tempfile::tempdir()?;
    let lp = dir.path().join("model.lp");
    let sol = dir.path().join("solution.txt");
    std::fs::write(&lp, write_lp(model))?;
    let status = Command::new(program).arg(&lp).arg(&sol).status()?;
    if !status.success() {
        return Err(ExternalError::Failed(status));
    }
    read_solution(model, &std::fs::read_to_string(&sol)?)
}

pub fn read_solution(model: &LinearModel, text: &str) -> Result<SolveResult, ExternalError> {
    let mut x = vec![0.0; model.num_vars()];
    let mut status = None;
    let mut bound = None;
    let mut any = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| ExternalError::Solution(i + 1, m.to_string());
        let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected 'name value'"))?;
        let value = value.trim();
        match key {
            "status" => {
                status = Some(match value.to_ascii_lowercase().as_str() {
                    "optimal" => Status::Optimal,
                    "infeasible" => Status::Infeasible,
                    "stalled" => Status::StalledWithBound,
                    "timelimit" | "time_limit" => Status::TimeLimit,
                    _ => return Err(bad("unknown status")),
                })
            }
            "bound" => bound = Some(value.parse::<f64>().map_err(|_| bad("bad bound"))?),
            name => {
                let v = model.var_by_name(name).ok_or_else(|| bad("unknown variable"))?;
                x[v.0] = value.parse().map_err(|_| bad("bad value"))?;
                any = true;
            }
        }
    }
    let status = status.unwrap_or(if any { Status::Optimal } else { Status::Infeasible });
    if status == Status::Infeasible || !any {
        let mut r = SolveResult::infeasible(bound.unwrap_or(f64::INFINITY));
        r.status = status;
        return Ok(r);
    }
    let value = model.objective.eval(&x);
    Ok(SolveResult {
        status,
        incumbent: Some(value),
        bound: bound.unwrap_or(if status == Status::Optimal { value } else { f64::NEG_INFINITY }),
        assignment: Some(x),
        nodes: 0,
        lp_iterations: 0,
    })
}
