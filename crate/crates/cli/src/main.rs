use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use solar_uav::harness::{
    aggregate, dbm_to_watts, run_campaign, run_scheme, write_csv, CampaignConfig, Scheme,
};
use solar_uav::oracle::grid_search_oracle;
use solar_uav::validate::{check_constraints, ConstraintReport, DEFAULT_REL_TOL};
use solar_uav::{sca_solve, Error, Instance, Solution};

mod report;

#[derive(Parser)]
#[command(
    name = "solar-uav",
    version,
    about = "Placement, power and subcarrier allocation for a solar-powered UAV downlink"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one instance and solve it with one scheme.
    Solve(SolveArgs),
    /// Run a Monte Carlo campaign described by a TOML file.
    Campaign(CampaignArgs),
    /// Compare the SCA solver with the grid-search oracle over many seeds.
    OracleCompare(OracleArgs),
    /// Check a solution file against every constraint.
    Validate(ValidateArgs),
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Campaign-style TOML file supplying [system], [solar], [solver] and
    /// [oracle] tables; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for user positions and fading.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of users.
    #[arg(long)]
    k: Option<usize>,
    /// Number of subcarriers.
    #[arg(long)]
    n_f: Option<usize>,
    /// Transmit power cap, dBm.
    #[arg(long)]
    p_max_dbm: Option<f64>,
    /// Solar panel area, m².
    #[arg(long)]
    s_area: Option<f64>,
    /// proposed, baseline1, baseline2 or oracle.
    #[arg(long, default_value = "proposed")]
    scheme: Scheme,
    /// Write the instance and solution as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CampaignArgs {
    /// Campaign TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the file's base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; overrides the file's output. Without either, the CSV
    /// goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct OracleArgs {
    /// TOML file supplying [system], [solar], [solver] and [oracle] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; seeds run from here upward.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds.
    #[arg(long, default_value_t = 30)]
    seeds: u64,
    /// Number of users.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Number of subcarriers.
    #[arg(long, default_value_t = 4)]
    n_f: usize,
    /// Horizontal grid pitch, m.
    #[arg(long)]
    pitch: Option<f64>,
    /// Vertical grid pitch, m.
    #[arg(long)]
    z_pitch: Option<f64>,
    /// Write the per-seed table as CSV to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ValidateArgs {
    /// Solution file written by `solve --out`.
    file: PathBuf,
}

/// Instance and solution as written by `solve --out`.
#[derive(Serialize, Deserialize)]
struct SolutionFile {
    scheme: Scheme,
    seed: u64,
    instance: Instance,
    solution: Solution,
}

enum Failure {
    Domain(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Domain(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Campaign(args) => cmd_campaign(args),
        Command::OracleCompare(args) => cmd_oracle_compare(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_base(path: Option<&Path>) -> Result<CampaignConfig, Failure> {
    match path {
        Some(p) => Ok(CampaignConfig::load(p)?),
        None => Ok(CampaignConfig::default()),
    }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, Failure> {
    let base = load_base(args.config.as_deref())?;
    let mut sys = base.system;
    let mut solar = base.solar;
    if let Some(n_f) = args.n_f {
        sys.n_subcarriers = n_f;
    }
    if let Some(dbm) = args.p_max_dbm {
        sys.p_max = dbm_to_watts(dbm);
    }
    if let Some(s) = args.s_area {
        solar.s_area = s;
    }
    let k = args.k.unwrap_or(base.users);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let instance = Instance::sample(sys, solar, k, &mut rng)?;
    let solution = run_scheme(args.scheme, &instance, &base.solver, &base.oracle, args.seed)?;
    let checks = check_constraints(
        &instance,
        &solution.s,
        &solution.p,
        &solution.r,
        DEFAULT_REL_TOL,
    );
    print!("{}", report::solution_text(args.scheme, &instance, &solution, &checks));
    if let Some(path) = args.out {
        let file = SolutionFile {
            scheme: args.scheme,
            seed: args.seed,
            instance,
            solution,
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Failure::Domain(format!("cannot serialize solution: {e}")))?;
        std::fs::write(&path, json)
            .map_err(|e| Failure::Domain(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_campaign(args: CampaignArgs) -> Result<ExitCode, Failure> {
    let mut cfg = CampaignConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if args.out.is_some() {
        cfg.output = args.out;
    }
    let rows = run_campaign(&cfg)?;
    if cfg.output.is_none() {
        write_csv(std::io::stdout().lock(), &rows)?;
    }
    eprint!("{}", report::summary_text(&aggregate(&rows)?));
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle_compare(args: OracleArgs) -> Result<ExitCode, Failure> {
    let base = load_base(args.config.as_deref())?;
    let mut sys = base.system;
    sys.n_subcarriers = args.n_f;
    let mut grid = base.oracle;
    if let Some(p) = args.pitch {
        grid.pitch = p;
    }
    if let Some(p) = args.z_pitch {
        grid.z_pitch = p;
    }
    let mut rows = Vec::new();
    for seed in args.seed..args.seed + args.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let instance = Instance::sample(sys, base.solar, args.k, &mut rng)?;
        let sca = sca_solve(&instance, &base.solver)?;
        let oracle = grid_search_oracle(&instance, &grid)?;
        rows.push(report::GapRow {
            seed,
            sca: sca.objective_relaxed,
            oracle: oracle.objective_original,
        });
    }
    print!("{}", report::gap_table(&rows));
    if let Some(path) = args.out {
        let mut w = std::fs::File::create(&path)
            .map_err(|e| Failure::Domain(format!("cannot write {}: {e}", path.display())))?;
        report::write_gap_csv(&mut w, &rows)
            .map_err(|e| Failure::Domain(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode, Failure> {
    let text = std::fs::read_to_string(&args.file)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.file.display())))?;
    let file: SolutionFile = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{} is not a solution file: {e}", args.file.display())))?;
    file.instance.validate()?;
    let sol = &file.solution;
    let checks: ConstraintReport =
        check_constraints(&file.instance, &sol.s, &sol.p, &sol.r, DEFAULT_REL_TOL);
    print!("{checks}");
    if checks.is_feasible() {
        println!("feasible");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("violated: {}", checks.violated_names().join(", "));
        Ok(ExitCode::from(1))
    }
}
