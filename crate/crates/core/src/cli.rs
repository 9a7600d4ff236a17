//! The `gapdiff` command line.
//!
//! Configuration comes from an optional JSON file (`--config`) with flags
//! overriding its values. Every CSV artifact starts with a
//! `# seed=<seed>, config_hash=<sha256>` line, and each run writes
//! `manifest.json` with the resolved configuration, a summary and the
//! outcome of every check. Exit status: 0 when all checks pass, 1 when a
//! check fails or the pipeline errors, 2 on configuration errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{build_chain, law_csv, simulate_chain};
use crate::finance::{
    implied_measure, price_at_maturity, repricing_csv, simulate_price_paths, GammaClock,
    OptionChain, PriceModel,
};
use crate::measure::{presets, validate_measure, Measure, PotentialProfile};
use crate::pathsim::{
    default_grid_step, simulate_poisson_stops, simulate_sde, simulate_time_change, stops_csv,
    SdeModel,
};
use crate::resolvent::{check_main_identity, default_grid};
use crate::speed::{build_speed_measure, classify_boundary, Side, SpeedMeasure};
use crate::stats::{ks_distance, ks_distance_binned, max_atom_z, ContinuousCdf, EmpiricalLaw};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GAPDIFF_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Potential `u` and excess `U` on a grid.
    Potential,
    /// Speed measure pieces and boundary classes.
    Speed,
    /// Exact law of the chain at an exponential time (atomic μ).
    ChainLaw,
    /// Monte Carlo of the chain at an exponential time (atomic μ).
    SimulateChain,
    /// Euler–Maruyama for `dX = σ(X) dW` (density μ).
    SimulateSde,
    /// Time-changed random walk stopped at an exponential time.
    SimulateTimechange,
    /// Poisson-mark stopping of the local-time region.
    EmbedPoisson,
    /// Green function against half the excess potential.
    ResolventCheck,
    /// Every applicable check.
    VerifyAll,
    /// Implied law from call quotes and gamma-clock repricing.
    Price,
}

/// Pass/fail thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub tv: f64,
    pub ks: f64,
    pub identity: f64,
    pub std_errors: f64,
    pub reprice: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tv: 1e-8,
            ks: 0.01,
            identity: 1e-10,
            std_errors: 3.0,
            reprice: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub measure_path: Option<PathBuf>,
    pub preset: Option<String>,
    pub option_chain: Option<PathBuf>,
    pub paths: u64,
    pub grid_step: Option<f64>,
    pub dt: f64,
    pub seed: u64,
    pub rate: f64,
    pub step_cap: u64,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            measure_path: None,
            preset: None,
            option_chain: None,
            paths: 100_000,
            grid_step: None,
            dt: 1e-4,
            seed: 1,
            rate: 1.0,
            step_cap: 1_000_000_000,
            out_dir: None,
            thresholds: Thresholds::default(),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        if self.paths < 1 {
            return Err(config_err("paths must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config_err(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(h) = self.grid_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(config_err(format!("grid step must be positive, got {h}")));
            }
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(config_err(format!("rate must be positive, got {}", self.rate)));
        }
        if self.command.is_none() {
            return Err(config_err("no command given"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (the output directory excluded).
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Parser)]
#[command(name = "gapdiff", version, about = "Diffusions embedding a law at an exponential time")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Measure as JSON: {"atoms":[{"x":..,"p":..}],"segments":[{"l":..,"r":..,"density":..}]}.
    #[arg(long, global = true)]
    measure: Option<PathBuf>,
    /// three-point, two-point, uniform, laplace or endpoint-atom.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Option quotes CSV for `price`.
    #[arg(long = "option-chain", global = true)]
    option_chain: Option<PathBuf>,
    #[arg(long, global = true)]
    paths: Option<u64>,
    #[arg(long = "grid-step", global = true)]
    grid_step: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rate `q` of the exponential time.
    #[arg(long, global = true)]
    rate: Option<f64>,
    #[arg(long = "step-cap", global = true)]
    step_cap: Option<u64>,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long = "tv-threshold", global = true)]
    tv_threshold: Option<f64>,
    #[arg(long = "ks-threshold", global = true)]
    ks_threshold: Option<f64>,
    #[arg(long = "identity-threshold", global = true)]
    identity_threshold: Option<f64>,
    #[arg(long = "std-errors", global = true)]
    std_errors: Option<f64>,
}

impl Cli {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v.into(); })*
            };
        }
        over!(
            command => command,
            measure => measure_path,
            preset => preset,
            option_chain => option_chain,
            paths => paths,
            grid_step => grid_step,
            dt => dt,
            seed => seed,
            rate => rate,
            step_cap => step_cap,
            out_dir => out_dir,
            tv_threshold => thresholds.tv,
            ks_threshold => thresholds.ks,
            identity_threshold => thresholds.identity,
            std_errors => thresholds.std_errors,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value < threshold,
        }
    }
}

/// Collects artifacts and checks of one run.
struct Run {
    cfg: RunConfig,
    hash: String,
    files: BTreeMap<String, String>,
    summary: serde_json::Map<String, Value>,
    checks: Vec<Check>,
}

impl Run {
    fn csv(&mut self, name: &str, body: String) {
        let text = format!("# seed={}, config_hash={}\n{body}", self.cfg.seed, self.hash);
        self.files.insert(name.to_string(), text);
    }

    fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    fn manifest(&self) -> String {
        let m = json!({
            "tool": "gapdiff",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.cfg.seed,
            "config_hash": self.hash,
            "config": self.cfg,
            "artifacts": self.files.keys().collect::<Vec<_>>(),
            "summary": self.summary,
            "checks": self.checks,
            "pass": self.checks.iter().all(|c| c.pass),
        });
        serde_json::to_string_pretty(&m).expect("manifest serialises") + "\n"
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| run_err(format!("{}: {e}", dir.display())))?;
        for (name, text) in &self.files {
            fs::write(dir.join(name), text).map_err(|e| run_err(format!("{name}: {e}")))?;
        }
        fs::write(dir.join("manifest.json"), self.manifest())
            .map_err(|e| run_err(format!("manifest.json: {e}")))
    }
}

pub fn preset(name: &str) -> Option<Measure> {
    Some(match name {
        "three-point" => presets::three_point(),
        "two-point" => presets::two_point(),
        "uniform" => presets::uniform(-1.0, 1.0),
        "laplace" => presets::laplace(40.0, 8000),
        "endpoint-atom" => presets::density_with_endpoint_atom(),
        _ => return None,
    })
}

fn load_measure(cfg: &RunConfig) -> Result<Measure, CliError> {
    match (&cfg.measure_path, &cfg.preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let raw: Measure = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            validate_measure(raw).map_err(config_err)
        }
        (None, Some(name)) => {
            preset(name).ok_or_else(|| config_err(format!("unknown preset `{name}`")))
        }
        (Some(_), Some(_)) => Err(config_err("give either a measure file or a preset, not both")),
        (None, None) => Err(config_err("no measure given (use --measure or --preset)")),
    }
}

struct Model {
    mu: Measure,
    profile: PotentialProfile,
    sm: SpeedMeasure,
}

impl Model {
    fn new(mu: Measure) -> Result<Self, CliError> {
        let profile = PotentialProfile::new(mu.clone()).map_err(config_err)?;
        let sm = build_speed_measure(&profile).map_err(config_err)?;
        Ok(Self { mu, profile, sm })
    }

    fn grid_step(&self, cfg: &RunConfig) -> f64 {
        cfg.grid_step.unwrap_or_else(|| default_grid_step(&self.sm))
    }
}

fn samples_csv(header: &str, values: &[f64]) -> String {
    let mut out = format!("path_id,{header}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v:.17e}\n"));
    }
    out
}

/// Law check for samples of `X_T`: per-atom z-scores for atomic μ, KS
/// distance otherwise (at lattice resolution when `lattice` gives a step).
fn law_check(
    run: &mut Run,
    name: &str,
    samples: Vec<f64>,
    model: &Model,
    lattice: Option<f64>,
) -> Result<(), CliError> {
    let emp = EmpiricalLaw::new(samples).map_err(run_err)?;
    let t = run.cfg.thresholds;
    if model.mu.is_atomic() {
        let z = max_atom_z(&emp, &model.mu);
        run.checks.push(Check {
            name: format!("{name}_atom_z"),
            value: z,
            threshold: t.std_errors,
            pass: z <= t.std_errors,
        });
    } else {
        let (d, label) = match lattice {
            Some(h) => (ks_distance_binned(&emp, &model.profile, h), format!("{name}_ks_grid")),
            None => (ks_distance(&emp, &model.profile), format!("{name}_ks")),
        };
        run.checks.push(Check::below(&label, d, t.ks));
    }
    Ok(())
}

fn do_potential(run: &mut Run, model: &Model) {
    let (lo, hi) = model.sm.bounds();
    let pad = 0.1 * (hi - lo);
    let grid = default_grid(lo - pad, hi + pad, 201, &model.profile.breakpoints);
    let mut out = String::from("x,u,U\n");
    for x in grid {
        out.push_str(&format!(
            "{x:.17e},{:.17e},{:.17e}\n",
            model.profile.potential(x),
            model.profile.excess_potential(x)
        ));
    }
    run.csv("potential.csv", out);
    run.note("mean", model.profile.mean);
    run.note("U_at_mean", model.profile.excess_potential(model.profile.mean));
}

fn do_speed(run: &mut Run, model: &Model) -> Result<(), CliError> {
    run.csv("speed.csv", model.sm.to_csv());
    for (key, side) in [("left", Side::Left), ("right", Side::Right)] {
        let class = classify_boundary(&model.sm, &model.profile, side).map_err(run_err)?;
        run.note(&format!("boundary_{key}"), format!("{class:?}"));
        let sigma = model.sm.sigma_integral(side);
        run.note(
            &format!("sigma_{key}"),
            if sigma.is_finite() { json!(sigma) } else { json!("inf") },
        );
    }
    Ok(())
}

fn do_chain_law(run: &mut Run, model: &Model) -> Result<(), CliError> {
    let q = run.cfg.rate;
    let sm = model.sm.scale_for_rate(q).map_err(run_err)?;
    let chain = build_chain(&sm, &model.mu).map_err(run_err)?;
    let exact = chain.exact_law(sm.start, q).map_err(run_err)?;
    let tv = crate::stats::tv_atomic(&exact, &model.mu).map_err(run_err)?;
    let mut out = String::from("state,target_mass,exact_mass,abs_error\n");
    for &x in &chain.states {
        let (t, e) = (model.mu.atom_mass(x), exact.atom_mass(x));
        out.push_str(&format!("{x:.17e},{t:.17e},{e:.17e},{:.6e}\n", (t - e).abs()));
    }
    run.csv("chain_law.csv", out);
    run.checks.push(Check::below("chain_oracle_tv", tv, run.cfg.thresholds.tv));
    Ok(())
}

fn do_simulate_chain(run: &mut Run, model: &Model) -> Result<(), CliError> {
    let chain = build_chain(&model.sm, &model.mu).map_err(run_err)?;
    let counts = simulate_chain(
        &chain,
        model.sm.start,
        run.cfg.paths,
        run.cfg.seed,
        run.cfg.step_cap,
    )
    .map_err(run_err)?;
    let n = run.cfg.paths;
    let z = chain
        .states
        .iter()
        .zip(&counts)
        .map(|(&x, &c)| crate::stats::binomial_z(c as f64 / n as f64, model.mu.atom_mass(x), n))
        .fold(0.0, f64::max);
    run.csv("simulate_chain.csv", law_csv(&chain, &model.mu, &counts));
    let t = run.cfg.thresholds.std_errors;
    run.checks.push(Check {
        name: "chain_mc_atom_z".into(),
        value: z,
        threshold: t,
        pass: z <= t,
    });
    Ok(())
}

fn do_sde(run: &mut Run, model: &Model) -> Result<(), CliError> {
    let xs = simulate_sde(
        &model.profile,
        run.cfg.dt,
        run.cfg.paths,
        run.cfg.seed,
        run.cfg.step_cap,
    )
    .map_err(run_err)?;
    run.csv("simulate_sde.csv", samples_csv("x_T", &xs));
    law_check(run, "sde", xs, model, None)
}

fn do_timechange(run: &mut Run, model: &Model) -> Result<(), CliError> {
    let h = model.grid_step(&run.cfg);
    run.note("grid_step", h);
    let xs = simulate_time_change(&model.sm, h, run.cfg.paths, run.cfg.seed, run.cfg.step_cap)
        .map_err(run_err)?;
    run.csv("simulate_timechange.csv", samples_csv("x_T", &xs));
    law_check(run, "timechange", xs, model, Some(h))
}

fn do_poisson(run: &mut Run, model: &Model) -> Result<(), CliError> {
    let h = model.grid_step(&run.cfg);
    run.note("grid_step", h);
    let stops = simulate_poisson_stops(&model.sm, h, run.cfg.paths, run.cfg.seed, run.cfg.step_cap)
        .map_err(run_err)?;
    run.csv("embed_poisson.csv", stops_csv(&stops));
    let phi = EmpiricalLaw::new(stops.iter().map(|s| s.phi).collect()).map_err(run_err)?;
    let d = ks_distance(&phi, &ContinuousCdf(|x: f64| if x > 0.0 { -(-x).exp_m1() } else { 0.0 }));
    run.checks.push(Check::below("poisson_clock_ks", d, run.cfg.thresholds.ks));
    law_check(run, "poisson", stops.iter().map(|s| s.position).collect(), model, Some(h))
}

fn do_resolvent(run: &mut Run, model: &Model) -> Result<(), CliError> {
    let (lo, hi) = model.sm.bounds();
    let grid = default_grid(lo, hi, 401, &model.profile.breakpoints);
    let report = if model.mu.is_atomic() {
        check_main_identity(&model.profile, &model.sm, &grid).map_err(run_err)?
    } else {
        // compare an atomised version against the exact potential
        let segs = model.mu.segments.len();
        let atoms = if segs >= 400 {
            model.mu.coarsened(segs.div_ceil(400))
        } else {
            model.mu.atomized(400 / segs.max(1))
        }
        .map_err(run_err)?;
        let sm = build_speed_measure(&PotentialProfile::new(atoms).map_err(run_err)?)
            .map_err(run_err)?;
        check_main_identity(&model.profile, &sm, &grid).map_err(run_err)?
    };
    run.csv("resolvent_check.csv", report.to_csv());
    run.note("resolvent_max_error", report.max_error);
    run.note("h_cross_check", report.h_cross_check);
    if let Some(j) = report.derivative_jump {
        run.note("derivative_jump", j);
    }
    if model.mu.is_atomic() {
        run.checks.push(Check::below(
            "resolvent_identity",
            report.max_error,
            run.cfg.thresholds.identity,
        ));
        if let Some(j) = report.derivative_jump {
            run.checks.push(Check::below(
                "resolvent_derivative_jump",
                (j - 1.0).abs(),
                run.cfg.thresholds.identity,
            ));
        }
    }
    Ok(())
}

fn do_price(run: &mut Run) -> Result<(), CliError> {
    let path = run
        .cfg
        .option_chain
        .clone()
        .ok_or_else(|| config_err("price needs --option-chain"))?;
    let text =
        fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let chain = OptionChain::parse_csv(&text).map_err(config_err)?;
    let mu = implied_measure(&chain).map_err(run_err)?;
    run.csv("repricing.csv", repricing_csv(&chain, &mu));
    let worst = chain
        .quotes
        .iter()
        .map(|&(k, c)| (price_at_maturity(&mu, k) - c).abs())
        .fold(0.0, f64::max);
    run.checks.push(Check::below("reprice_exact", worst, run.cfg.thresholds.reprice));
    run.note("implied_atoms", serde_json::to_value(&mu.atoms).map_err(run_err)?);

    let model = PriceModel::new(&mu).map_err(run_err)?;
    let clock = GammaClock::new(chain.t_star).map_err(run_err)?;
    let paths = simulate_price_paths(&model, &clock, &[chain.t_star], run.cfg.paths, run.cfg.seed)
        .map_err(run_err)?;
    let n = paths.len() as f64;
    let mut out = String::from("strike,exact_price,mc_price,std_error,z\n");
    let mut worst_z: f64 = 0.0;
    for &(k, _) in &chain.quotes {
        let pay: Vec<f64> = paths.iter().map(|p| (p[0] - k).max(0.0)).collect();
        let mean = pay.iter().sum::<f64>() / n;
        let var = pay.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        let exact = price_at_maturity(&mu, k);
        let z = if se > 0.0 { (mean - exact).abs() / se } else if mean == exact { 0.0 } else { f64::INFINITY };
        worst_z = worst_z.max(z);
        out.push_str(&format!("{k:.17e},{exact:.17e},{mean:.17e},{se:.6e},{z:.4}\n"));
    }
    run.csv("price_mc.csv", out);
    let t = run.cfg.thresholds.std_errors;
    run.checks.push(Check {
        name: "mc_reprice_z".into(),
        value: worst_z,
        threshold: t,
        pass: worst_z <= t,
    });
    Ok(())
}

fn execute(run: &mut Run) -> Result<(), CliError> {
    let command = run.cfg.command.expect("validated");
    if command == Command::Price {
        return do_price(run);
    }
    let model = Model::new(load_measure(&run.cfg)?)?;
    run.note("measure_atoms", model.mu.atoms.len());
    run.note("measure_segments", model.mu.segments.len());
    match command {
        Command::Potential => do_potential(run, &model),
        Command::Speed => do_speed(run, &model)?,
        Command::ChainLaw => do_chain_law(run, &model)?,
        Command::SimulateChain => do_simulate_chain(run, &model)?,
        Command::SimulateSde => do_sde(run, &model)?,
        Command::SimulateTimechange => do_timechange(run, &model)?,
        Command::EmbedPoisson => do_poisson(run, &model)?,
        Command::ResolventCheck => do_resolvent(run, &model)?,
        Command::VerifyAll => {
            do_potential(run, &model);
            do_speed(run, &model)?;
            if model.mu.is_atomic() {
                do_chain_law(run, &model)?;
                do_simulate_chain(run, &model)?;
            }
            if SdeModel::new(&model.profile).is_ok() {
                do_sde(run, &model)?;
            }
            do_timechange(run, &model)?;
            do_poisson(run, &model)?;
            do_resolvent(run, &model)?;
        }
        Command::Price => unreachable!(),
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gapdiff: {e}");
            return 2;
        }
    };
    let out_dir = cfg
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gapdiff-out"));
    let mut run = Run {
        hash: cfg.hash(),
        cfg,
        files: BTreeMap::new(),
        summary: serde_json::Map::new(),
        checks: Vec::new(),
    };
    let outcome = execute(&mut run);
    if let Err(e) = &outcome {
        eprintln!("gapdiff: {e}");
        if matches!(e, CliError::Config(_)) {
            return 2;
        }
        run.checks.push(Check {
            name: "pipeline".into(),
            value: f64::NAN,
            threshold: f64::NAN,
            pass: false,
        });
    }
    if let Err(e) = run.write(&out_dir) {
        eprintln!("gapdiff: {e}");
        return 1;
    }
    for c in &run.checks {
        eprintln!(
            "{} {}: {:.3e} (threshold {:.3e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    if run.checks.iter().all(|c| c.pass) {
        0
    } else {
        1
    }
}
