//! `stv-margin`: count STV elections, bound and search their margins.

mod batch;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use stv_margin::election::{parse_preflib, parse_profile, CandidateOrder, Election, Step};
use stv_margin::model::{build_distance_model, Mode, ModelOptions};
use stv_margin::oracle::OracleLimits;
use stv_margin::search::SearchConfig;

use report::Report;

pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Parser, Debug)]
#[command(name = "stv-margin", version, about = "STV counts, margin bounds and margin search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the count and print the round-by-round tallies.
    Count {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = Ties::LowestIndex)]
        ties: Ties,
    },
    /// Closed-form upper bounds on the margin.
    Bounds {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Search for the margin of victory.
    Margin {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Brute-force margin for tiny elections.
    Oracle {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 3)]
        kmax: u64,
        /// Run even above the size limits.
        #[arg(long)]
        force: bool,
    },
    /// Write the distance model for one order in LP format.
    ExportModel {
        #[command(flatten)]
        input: InputArgs,
        /// Steps such as `c1:1,c2:0`; 1 elects and 0 eliminates.
        #[arg(long)]
        order: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        #[arg(long = "K", default_value_t = 5)]
        segments: usize,
        #[arg(long)]
        grouped: bool,
        /// Cap on manipulation size; defaults to the number of ballots.
        #[arg(long)]
        ub: Option<u64>,
        /// Solve the exported model with `external:<path>` and report it.
        #[arg(long)]
        solver: Option<String>,
    },
    /// Margin search over every ballot file in a directory.
    Batch {
        dir: PathBuf,
        /// Per-election reports and `summary.csv` go here.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seats: Option<usize>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Print the JSON schema of reports.
    Schema,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    file: PathBuf,
    /// Seats; required for PrefLib files, overrides the file otherwise.
    #[arg(long)]
    seats: Option<usize>,
    /// Replaces the Droop quota.
    #[arg(long)]
    quota: Option<u64>,
    /// Read PrefLib even without a PrefLib extension.
    #[arg(long)]
    preflib: bool,
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
    /// Segments per transfer value in piecewise mode.
    #[arg(long = "K", default_value_t = 5)]
    segments: usize,
    /// Frontier entries expanded in parallel.
    #[arg(long, default_value_t = 1)]
    nf: usize,
    /// Keep the first rounds of the original count; bounds become conditional.
    #[arg(long, default_value_t = 0)]
    fix_rounds: usize,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    rule_lb: Switch,
    /// Model runs of eliminations as single rounds.
    #[arg(long)]
    grouped: bool,
    /// Seconds for the whole search.
    #[arg(long)]
    wall_limit: Option<f64>,
    /// Seconds a single model may go without a better solution.
    #[arg(long, env = "STV_MARGIN_STALL_LIMIT", default_value_t = 30.0)]
    stall_limit: f64,
    /// Also write the full JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `internal`, or `external:<path>` for relaxed models.
    #[arg(long, default_value = "internal")]
    solver: String,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Text,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Exact,
    Mccormick,
    Piecewise,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Switch {
    On,
    Off,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Ties {
    LowestIndex,
    HighestIndex,
}

/// Everything a run was configured with, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub seats: Option<usize>,
    pub quota: Option<u64>,
    pub preflib: bool,
    pub format: Format,
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ties: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub search: Option<SearchSettings>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleSettings>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub export: Option<ExportSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub mode: Mode,
    pub nf: usize,
    pub fix_rounds: usize,
    pub rule_lb: bool,
    pub grouped: bool,
    pub wall_limit_s: Option<f64>,
    pub stall_limit_s: f64,
    pub solver: String,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub kmax: u64,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSettings {
    pub order: String,
    pub mode: Mode,
    pub grouped: bool,
    pub ub: Option<u64>,
    pub solver: Option<String>,
}

impl SearchSettings {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            mode: self.mode,
            grouped: self.grouped,
            use_rule_lb: self.rule_lb,
            parallel: self.nf,
            fix_rounds: self.fix_rounds,
            wall_limit: self.wall_limit_s.map(Duration::from_secs_f64),
            stall_limit: Some(Duration::from_secs_f64(self.stall_limit_s)),
            external_solver: external_path(&self.solver),
            ..SearchConfig::default()
        }
    }
}

/// Failures, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Analysis(String),
    #[error("solver: {0}")]
    Solver(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Io { .. } => 3,
            AppError::Parse { .. } => 4,
            AppError::Analysis(_) => 5,
            AppError::Solver(_) => 6,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn mode_of(mode: ModeArg, segments: usize) -> Mode {
    match mode {
        ModeArg::Exact => Mode::Exact,
        ModeArg::Mccormick => Mode::McCormick,
        ModeArg::Piecewise => Mode::Piecewise(segments),
    }
}

fn external_path(solver: &str) -> Option<PathBuf> {
    solver.strip_prefix("external:").map(PathBuf::from)
}

fn check_solver(solver: &str, mode: Mode) -> Result<(), AppError> {
    if solver == "internal" {
        return Ok(());
    }
    let Some(path) = external_path(solver) else {
        return Err(AppError::Usage(format!("--solver must be 'internal' or 'external:<path>', got '{solver}'")));
    };
    if path.as_os_str().is_empty() {
        return Err(AppError::Usage("--solver external: needs a path".into()));
    }
    if mode.is_exact() {
        return Err(AppError::Usage("external solvers take linear models only; use --mode mccormick or piecewise".into()));
    }
    Ok(())
}

fn search_settings(a: &SearchArgs) -> Result<SearchSettings, AppError> {
    if a.mode == ModeArg::Piecewise && a.segments == 0 {
        return Err(AppError::Usage("--K must be at least 1".into()));
    }
    if a.nf == 0 {
        return Err(AppError::Usage("--nf must be at least 1".into()));
    }
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if a.wall_limit.is_some_and(|w| !positive(w)) || !positive(a.stall_limit) {
        return Err(AppError::Usage("time limits must be positive numbers of seconds".into()));
    }
    let mode = mode_of(a.mode, a.segments);
    check_solver(&a.solver, mode)?;
    Ok(SearchSettings {
        mode,
        nf: a.nf,
        fix_rounds: a.fix_rounds,
        rule_lb: a.rule_lb == Switch::On,
        grouped: a.grouped,
        wall_limit_s: a.wall_limit,
        stall_limit_s: a.stall_limit,
        solver: a.solver.clone(),
        report: a.report.clone(),
    })
}

pub fn is_preflib_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("soc" | "soi" | "toc" | "toi")
    )
}

/// Reads and parses a ballot file, applying seat and quota overrides.
pub fn load_election(path: &Path, seats: Option<usize>, quota: Option<u64>, preflib: bool) -> Result<Election, AppError> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let parse_err = |message: String| AppError::Parse {
        path: path.to_path_buf(),
        message,
    };
    if preflib || is_preflib_path(path) {
        let seats = seats.ok_or_else(|| AppError::Usage("PrefLib files need --seats".into()))?;
        return parse_preflib(&text, seats, quota).map_err(|e| parse_err(e.to_string()));
    }
    let e = parse_profile(&text).map_err(|e| parse_err(e.to_string()))?;
    if seats.is_none() && quota.is_none() {
        return Ok(e);
    }
    let names: Vec<String> = e.candidates.iter().map(|c| c.name.clone()).collect();
    let quota = quota.or(e.quota_overridden.then_some(e.quota));
    Election::new(names, e.profile, seats.unwrap_or(e.seats), quota).map_err(|err| parse_err(err.to_string()))
}

/// Parses `c1:1,c2:0` against the election's candidate names.
pub fn parse_order(text: &str, e: &Election) -> Result<CandidateOrder, AppError> {
    let mut steps = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, bit) = part
            .rsplit_once(':')
            .ok_or_else(|| AppError::Usage(format!("order step '{part}' is not name:0 or name:1")))?;
        let c = e
            .index_of(name.trim())
            .ok_or_else(|| AppError::Usage(format!("unknown candidate '{name}' in --order")))?;
        let step = match bit.trim() {
            "1" => Step::elect(c),
            "0" => Step::eliminate(c),
            _ => return Err(AppError::Usage(format!("order step '{part}' must end in :0 or :1"))),
        };
        steps.push(step);
    }
    let order = CandidateOrder::new(steps);
    order
        .validate(e.num_candidates(), e.seats)
        .map_err(|err| AppError::Usage(format!("--order: {err}")))?;
    Ok(order)
}

fn base_config(sub: &str, input: &InputArgs, cli: &Cli) -> RunConfig {
    RunConfig {
        subcommand: sub.to_string(),
        inputs: vec![input.file.clone()],
        seats: input.seats,
        quota: input.quota,
        preflib: input.preflib,
        format: cli.format,
        out: cli.out.clone(),
        ties: None,
        search: None,
        oracle: None,
        export: None,
    }
}

fn emit(cli: &Cli, text: &str) -> Result<(), AppError> {
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| AppError::io(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| AppError::io(Path::new("<stdout>"), e))
        }
    }
}

fn render(cli: &Cli, report: &Report) -> Result<(), AppError> {
    let text = match cli.format {
        Format::Json => report.to_json() + "\n",
        Format::Text => report.to_text(),
    };
    emit(cli, &text)
}

fn run(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Count { input, ties } => {
            let mut config = base_config("count", input, cli);
            config.ties = Some(format!("{ties:?}"));
            let e = load_election(&input.file, input.seats, input.quota, input.preflib)?;
            let policy = match ties {
                Ties::LowestIndex => stv_margin::TiePolicy::LowestIndex,
                Ties::HighestIndex => stv_margin::TiePolicy::HighestIndex,
            };
            render(cli, &report::count(config, &e, policy))
        }
        Command::Bounds { input } => {
            let config = base_config("bounds", input, cli);
            let e = load_election(&input.file, input.seats, input.quota, input.preflib)?;
            render(cli, &report::bounds(config, &e))
        }
        Command::Margin { input, search } => {
            let mut config = base_config("margin", input, cli);
            let settings = search_settings(search)?;
            config.search = Some(settings.clone());
            let e = load_election(&input.file, input.seats, input.quota, input.preflib)?;
            let r = report::margin(config, &e, &settings.search_config())?;
            if let Some(path) = &settings.report {
                fs::write(path, r.to_json() + "\n").map_err(|err| AppError::io(path, err))?;
            }
            render(cli, &r)
        }
        Command::Oracle { input, kmax, force } => {
            let mut config = base_config("oracle", input, cli);
            config.oracle = Some(OracleSettings {
                kmax: *kmax,
                force: *force,
            });
            let e = load_election(&input.file, input.seats, input.quota, input.preflib)?;
            if !force {
                OracleLimits::default()
                    .check(&e, *kmax)
                    .map_err(|err| AppError::Analysis(format!("{err}; pass --force to run anyway")))?;
            }
            render(cli, &report::oracle(config, &e, *kmax))
        }
        Command::ExportModel {
            input,
            order,
            mode,
            segments,
            grouped,
            ub,
            solver,
        } => {
            let mode = mode_of(*mode, *segments);
            if let Some(s) = solver {
                check_solver(s, mode)?;
                if s == "internal" {
                    return Err(AppError::Usage("export-model --solver takes external:<path>".into()));
                }
            }
            let mut config = base_config("export-model", input, cli);
            config.export = Some(ExportSettings {
                order: order.clone(),
                mode,
                grouped: *grouped,
                ub: *ub,
                solver: solver.clone(),
            });
            let e = load_election(&input.file, input.seats, input.quota, input.preflib)?;
            let order = parse_order(order, &e)?;
            let options = ModelOptions {
                mode,
                grouped: *grouped,
                ..ModelOptions::default()
            };
            let dm = build_distance_model(&e, &order, ub.unwrap_or(e.total()), options)
                .map_err(|err| AppError::Analysis(err.to_string()))?;
            let lp = milp::write_lp(dm.solver_model());
            match solver.as_deref().and_then(external_path) {
                None => emit(cli, &lp),
                Some(program) => {
                    let ev = dm.solve_external(&program).map_err(|err| AppError::Solver(err.to_string()))?;
                    render(cli, &report::external(config, &e, &order, &ev))
                }
            }
        }
        Command::Batch {
            dir,
            out_dir,
            seats,
            search,
        } => {
            let settings = search_settings(search)?;
            let config = RunConfig {
                subcommand: "batch".into(),
                inputs: vec![dir.clone()],
                seats: *seats,
                quota: None,
                preflib: false,
                format: cli.format,
                out: Some(out_dir.clone()),
                ties: None,
                search: Some(settings),
                oracle: None,
                export: None,
            };
            let summary = batch::run(&config, dir, out_dir)?;
            emit(cli, &summary)
        }
        Command::Schema => emit(cli, SCHEMA),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stv-margin: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stv_margin::election::parse_profile;

    fn example1() -> Election {
        parse_profile("seats: 2\ncandidates: c1,c2,c3,c4\n20: c1\n10: c2\n9: c3\n15: c4\n").unwrap()
    }

    #[test]
    fn orders_parse_by_name() {
        let e = example1();
        let o = parse_order("c1:1, c2:0", &e).unwrap();
        assert_eq!(o, CandidateOrder::from_pairs(&[(0, 1), (1, 0)]));
        assert!(matches!(parse_order("c9:1", &e), Err(AppError::Usage(_))));
        assert!(matches!(parse_order("c1:2", &e), Err(AppError::Usage(_))));
        assert!(matches!(parse_order("c1:1,c1:0", &e), Err(AppError::Usage(_))));
    }

    #[test]
    fn solver_flag_rules() {
        assert!(check_solver("internal", Mode::Exact).is_ok());
        assert!(check_solver("external:/bin/true", Mode::McCormick).is_ok());
        assert!(check_solver("external:/bin/true", Mode::Exact).is_err());
        assert!(check_solver("cplex", Mode::McCormick).is_err());
    }

    #[test]
    fn error_families_have_distinct_codes() {
        let codes = [
            AppError::Usage(String::new()).exit_code(),
            AppError::io(Path::new("x"), std::io::Error::other("x")).exit_code(),
            AppError::Parse {
                path: "x".into(),
                message: String::new(),
            }
            .exit_code(),
            AppError::Analysis(String::new()).exit_code(),
            AppError::Solver(String::new()).exit_code(),
        ];
        let distinct: std::collections::BTreeSet<_> = codes.iter().collect();
        assert_eq!(distinct.len(), codes.len());
        assert!(!codes.contains(&0) && !codes.contains(&1));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
