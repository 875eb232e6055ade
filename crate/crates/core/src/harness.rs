//! Monte Carlo campaigns: TOML configuration, per-trial seeding, CSV
//! records and per-point summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines::{baseline1_fixed_xy, baseline2_random_assignment};
use crate::channel::{Instance, SystemParams};
use crate::error::{Error, Result};
use crate::oracle::{grid_search_oracle, GridSpec};
use crate::sca::{sca_solve, Solution, SolverOptions};
use crate::solar::SolarParams;

/// `10^((dBm − 30)/10)` watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    Baseline1,
    Baseline2,
    Oracle,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Baseline1 => "baseline1",
            Scheme::Baseline2 => "baseline2",
            Scheme::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "baseline1" => Ok(Scheme::Baseline1),
            "baseline2" => Ok(Scheme::Baseline2),
            "oracle" => Ok(Scheme::Oracle),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Sweep axes; the campaign runs their Cartesian product. An absent axis
/// stays at the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub p_max_dbm: Option<Vec<f64>>,
    pub s_area: Option<Vec<f64>>,
    pub users: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub scenario: String,
    pub trials: usize,
    pub base_seed: u64,
    pub users: usize,
    pub schemes: Vec<Scheme>,
    pub system: SystemParams,
    pub solar: SolarParams,
    pub solver: SolverOptions,
    pub oracle: GridSpec,
    pub sweep: Sweep,
    /// Written by `run_campaign` when set.
    pub output: Option<PathBuf>,
    /// Wall times make the CSV differ between runs, so they are opt-in.
    pub record_wall_time: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            trials: 1,
            base_seed: 0,
            users: 3,
            schemes: vec![Scheme::Proposed],
            system: SystemParams::default(),
            solar: SolarParams::default(),
            solver: SolverOptions::default(),
            oracle: GridSpec::default(),
            sweep: Sweep::default(),
            output: None,
            record_wall_time: false,
        }
    }
}

/// One resolved sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub p_max_dbm: f64,
    pub s_area: f64,
    pub users: usize,
}

impl CampaignConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.users == 0 {
            return Err(Error::Config("users must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        let sw = &self.sweep;
        let empty = [
            ("p_max_dbm", sw.p_max_dbm.as_ref().map(Vec::len)),
            ("s_area", sw.s_area.as_ref().map(Vec::len)),
            ("users", sw.users.as_ref().map(Vec::len)),
        ];
        for (name, len) in empty {
            if len == Some(0) {
                return Err(Error::Config(format!("sweep.{name} must not be empty")));
            }
        }
        if sw.users.as_ref().is_some_and(|u| u.contains(&0)) {
            return Err(Error::Config("sweep.users entries must be >= 1".into()));
        }
        if sw
            .p_max_dbm
            .as_ref()
            .is_some_and(|v| v.iter().any(|d| !d.is_finite()))
        {
            return Err(Error::Config("sweep.p_max_dbm entries must be finite".into()));
        }
        self.system
            .validate()
            .map_err(|e| Error::Config(format!("system: {e}")))?;
        self.solar
            .validate()
            .map_err(|e| Error::Config(format!("solar: {e}")))?;
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        if sw.s_area.as_ref().is_some_and(|v| v.iter().any(|&s| !(s > 0.0))) {
            return Err(Error::Config("sweep.s_area entries must be positive".into()));
        }
        Ok(())
    }

    /// Sweep points in row-major order: `p_max_dbm`, then `s_area`, then
    /// `users`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let p_list = self
            .sweep
            .p_max_dbm
            .clone()
            .unwrap_or_else(|| vec![watts_to_dbm(self.system.p_max)]);
        let s_list = self.sweep.s_area.clone().unwrap_or_else(|| vec![self.solar.s_area]);
        let k_list = self.sweep.users.clone().unwrap_or_else(|| vec![self.users]);
        let mut out = Vec::new();
        for &p_max_dbm in &p_list {
            for &s_area in &s_list {
                for &users in &k_list {
                    out.push(SweepPoint {
                        p_max_dbm,
                        s_area,
                        users,
                    });
                }
            }
        }
        out
    }

    fn params_at(&self, point: &SweepPoint) -> (SystemParams, SolarParams) {
        let mut sys = self.system;
        if self.sweep.p_max_dbm.is_some() {
            sys.p_max = dbm_to_watts(point.p_max_dbm);
        }
        let mut solar = self.solar;
        solar.s_area = point.s_area;
        (sys, solar)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial: splitmix64 folded over the base seed, the bit
/// patterns of the sweep values and the trial index.
pub fn trial_seed(base_seed: u64, point: &SweepPoint, trial: usize) -> u64 {
    [
        point.p_max_dbm.to_bits(),
        point.s_area.to_bits(),
        point.users as u64,
        trial as u64,
    ]
    .iter()
    .fold(splitmix64(base_seed), |h, &v| splitmix64(h ^ v))
}

/// Seed of the random assignment drawn by the second baseline.
pub fn assignment_seed(trial_seed: u64) -> u64 {
    splitmix64(trial_seed ^ 0xA55A_5AA5_0F0F_F0F0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub scenario: String,
    pub scheme: String,
    pub p_max_dbm: f64,
    pub s_area: f64,
    pub users: usize,
    pub trial: usize,
    pub seed: u64,
    /// Sum rate, bits/s/Hz; absent when the trial failed.
    pub objective: Option<f64>,
    pub objective_per_subcarrier: Option<f64>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_time_ms: Option<f64>,
    /// `converged`, `max_iter`, `ascent_guard`, `infeasible` or `error`.
    pub status: String,
}

impl RecordRow {
    pub fn is_success(&self) -> bool {
        self.objective.is_some()
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "scenario",
    "scheme",
    "p_max_dbm",
    "s_area",
    "users",
    "trial",
    "seed",
    "objective",
    "objective_per_subcarrier",
    "x",
    "y",
    "z",
    "iterations",
    "wall_time_ms",
    "status",
];

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Runs one scheme on one instance.
pub fn run_scheme(
    scheme: Scheme,
    instance: &Instance,
    solver: &SolverOptions,
    oracle: &GridSpec,
    trial_seed: u64,
) -> Result<Solution> {
    match scheme {
        Scheme::Proposed => sca_solve(instance, solver),
        Scheme::Baseline1 => baseline1_fixed_xy(instance, solver),
        Scheme::Baseline2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(assignment_seed(trial_seed));
            baseline2_random_assignment(instance, solver, &mut rng)
        }
        Scheme::Oracle => grid_search_oracle(instance, oracle),
    }
}

fn run_trial(cfg: &CampaignConfig, point: &SweepPoint, trial: usize) -> Vec<RecordRow> {
    let seed = trial_seed(cfg.base_seed, point, trial);
    let (sys, solar) = cfg.params_at(point);
    let blank = |scheme: Scheme, status: &str| RecordRow {
        scenario: cfg.scenario.clone(),
        scheme: scheme.as_str().into(),
        p_max_dbm: point.p_max_dbm,
        s_area: point.s_area,
        users: point.users,
        trial,
        seed,
        objective: None,
        objective_per_subcarrier: None,
        x: None,
        y: None,
        z: None,
        iterations: None,
        wall_time_ms: None,
        status: status.into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instance = match Instance::sample(sys, solar, point.users, &mut rng) {
        Ok(inst) => inst,
        Err(_) => return cfg.schemes.iter().map(|&s| blank(s, "error")).collect(),
    };
    let n_f = instance.n_f() as f64;
    cfg.schemes
        .iter()
        .map(|&scheme| {
            let started = Instant::now();
            let outcome = run_scheme(scheme, &instance, &cfg.solver, &cfg.oracle, seed);
            let elapsed = started.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok(sol) => RecordRow {
                    objective: Some(sol.objective_original),
                    objective_per_subcarrier: Some(sol.objective_original / n_f),
                    x: Some(sol.r.x),
                    y: Some(sol.r.y),
                    z: Some(sol.r.z),
                    iterations: Some(sol.iterations),
                    wall_time_ms: cfg.record_wall_time.then_some(elapsed),
                    ..blank(scheme, sol.status.as_str())
                },
                Err(Error::Infeasible { .. }) => blank(scheme, "infeasible"),
                Err(_) => blank(scheme, "error"),
            }
        })
        .collect()
}

/// Runs every (sweep point, trial, scheme) combination. Rows come back in
/// that nesting order whatever the thread count. When `cfg.output` is set
/// the CSV is written there; an unwritable path fails before any work.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Vec<RecordRow>> {
    cfg.validate()?;
    let sink = match &cfg.output {
        Some(path) => Some(fs::File::create(path)?),
        None => None,
    };
    let jobs: Vec<(SweepPoint, usize)> = cfg
        .points()
        .into_iter()
        .flat_map(|pt| (0..cfg.trials).map(move |t| (pt, t)))
        .collect();
    let rows: Vec<RecordRow> = jobs
        .par_iter()
        .map(|(pt, t)| run_trial(cfg, pt, *t))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if let Some(file) = sink {
        write_csv(file, &rows)?;
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(sink: W, rows: &[RecordRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.scheme.clone(),
            fmt_float(r.p_max_dbm),
            fmt_float(r.s_area),
            r.users.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            fmt_opt(r.objective),
            fmt_opt(r.objective_per_subcarrier),
            fmt_opt(r.x),
            fmt_opt(r.y),
            fmt_opt(r.z),
            r.iterations.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt(r.wall_time_ms),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[RecordRow]) -> Result<()> {
    write_csv(fs::File::create(path)?, rows)
}

/// Parses a file written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<RecordRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!(
            "{} does not have the campaign header",
            path.display()
        )));
    }
    let parse_f = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad number '{s}'")))
        }
    };
    let parse_u = |s: &str| -> Result<u64> {
        s.parse()
            .map_err(|_| Error::Config(format!("bad integer '{s}'")))
    };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(RecordRow {
            scenario: f(0).into(),
            scheme: f(1).into(),
            p_max_dbm: parse_f(f(2))?.unwrap_or(f64::NAN),
            s_area: parse_f(f(3))?.unwrap_or(f64::NAN),
            users: parse_u(f(4))? as usize,
            trial: parse_u(f(5))? as usize,
            seed: parse_u(f(6))?,
            objective: parse_f(f(7))?,
            objective_per_subcarrier: parse_f(f(8))?,
            x: parse_f(f(9))?,
            y: parse_f(f(10))?,
            z: parse_f(f(11))?,
            iterations: if f(12).is_empty() {
                None
            } else {
                Some(parse_u(f(12))? as usize)
            },
            wall_time_ms: parse_f(f(13))?,
            status: f(14).into(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub p_max_dbm: f64,
    pub s_area: f64,
    pub users: usize,
    /// Rows that produced a solution.
    pub n: usize,
    pub n_failed: usize,
    /// Mean sum rate over successful rows, bits/s/Hz.
    pub mean: f64,
    /// Sample standard error of the mean (`n − 1` denominator); zero for a
    /// single row.
    pub stderr: f64,
}

/// Groups rows by scheme and sweep point, in order of first appearance.
pub fn aggregate(rows: &[RecordRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Config("no records to aggregate".into()));
    }
    let mut groups: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    for r in rows {
        let key_matches = |s: &SummaryRow| {
            s.scheme == r.scheme
                && s.p_max_dbm.to_bits() == r.p_max_dbm.to_bits()
                && s.s_area.to_bits() == r.s_area.to_bits()
                && s.users == r.users
        };
        let idx = match groups.iter().position(|(s, _)| key_matches(s)) {
            Some(i) => i,
            None => {
                groups.push((
                    SummaryRow {
                        scheme: r.scheme.clone(),
                        p_max_dbm: r.p_max_dbm,
                        s_area: r.s_area,
                        users: r.users,
                        n: 0,
                        n_failed: 0,
                        mean: f64::NAN,
                        stderr: f64::NAN,
                    },
                    Vec::new(),
                ));
                groups.len() - 1
            }
        };
        match r.objective {
            Some(v) => groups[idx].1.push(v),
            None => groups[idx].0.n_failed += 1,
        }
    }
    Ok(groups
        .into_iter()
        .map(|(mut s, values)| {
            let (mean, stderr) = mean_stderr(&values);
            s.n = values.len();
            s.mean = mean;
            s.stderr = stderr;
            s
        })
        .collect())
}

/// Mean and standard error of the mean with the `n − 1` variance.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
