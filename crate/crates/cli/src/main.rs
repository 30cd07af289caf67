//! Command line driver for two-wing spin-pair runs.
//!
//! Exit codes: 0 on success, 1 for configuration problems (bad flags,
//! malformed config files, missing backend parameters), 2 for scenario
//! validation or computation failures, and for a locality battery that
//! ends in a conclusive violation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Deserialize;

use equibell::{
    chsh, condition_battery, convergence_sweep, correlation_sweep, photon_pair, sample_microstates,
    singlet, spin_projector, sweep_csv, Backend, Choice, Direction, EPRBScenario, ProductProjector,
    ProjectorLike as _, Sign, StateVector, Verdict, Wing,
};

#[derive(Parser)]
#[command(
    name = "equibell",
    version,
    about = "Equiamplitude slot counting and Bell-pair diagnostics",
    arg_required_else_help = true
)]
struct Cli {
    /// JSON run configuration; command line flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Probability backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendName>,

    /// Slot count for the counting backend and slot-based commands.
    #[arg(long, global = true, value_name = "COUNT")]
    n: Option<usize>,

    /// Trial count for Monte Carlo runs and sampling.
    #[arg(long, global = true, value_name = "COUNT")]
    trials: Option<u64>,

    /// RNG seed for Monte Carlo runs and sampling.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Write output to FILE atomically instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Output format; each command has a natural one (json or csv).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Tolerance for locality verdicts.
    #[arg(long, global = true, value_name = "TOL")]
    tolerance: Option<f64>,

    /// Alice's primary analyzer angle in the x-z plane, degrees.
    #[arg(long, global = true, value_name = "DEG")]
    alice_deg: Option<f64>,

    /// Alice's alternate analyzer angle, degrees.
    #[arg(long, global = true, value_name = "DEG")]
    alice_alt_deg: Option<f64>,

    /// Bob's primary analyzer angle, degrees.
    #[arg(long, global = true, value_name = "DEG")]
    bob_deg: Option<f64>,

    /// Bob's alternate analyzer angle, degrees.
    #[arg(long, global = true, value_name = "DEG")]
    bob_alt_deg: Option<f64>,

    /// Spin state by name: singlet or photon-pair.
    #[arg(long, global = true, value_name = "NAME")]
    state: Option<String>,

    /// Ancilla dimension on Alice's wing.
    #[arg(long, global = true, value_name = "DIM")]
    ancilla_alice: Option<usize>,

    /// Ancilla dimension on Bob's wing.
    #[arg(long, global = true, value_name = "DIM")]
    ancilla_bob: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the CHSH statistic over the four setting pairs.
    Chsh,
    /// Run the locality condition battery at the scenario's settings.
    Locality,
    /// Sweep slot counts or analyzer angles and emit CSV.
    Converge {
        /// Sweep axis: interval width against slot count, or correlation
        /// against Bob's angle.
        #[arg(long, value_enum, default_value_t = SweepKind::Slots)]
        by: SweepKind,
        /// Comma-separated slot counts (slots mode). Defaults to a
        /// doubling schedule from 8 to 256.
        #[arg(long, value_name = "N1,N2,..")]
        schedule: Option<String>,
        /// Comma-separated angles in degrees (angle mode). Defaults to
        /// 0 through 180 in steps of 15.
        #[arg(long, value_name = "D1,D2,..")]
        thetas: Option<String>,
    },
    /// Draw seeded uniform-slot samples and tally the outcome pairs.
    Sample {
        /// Use Alice's alternate analyzer direction.
        #[arg(long)]
        alt_alice: bool,
        /// Use Bob's alternate analyzer direction.
        #[arg(long)]
        alt_bob: bool,
    },
    /// Build the product expansion at one setting pair and dump its
    /// microstates as JSON.
    DumpExpansion {
        /// Use Alice's alternate analyzer direction.
        #[arg(long)]
        alt_alice: bool,
        /// Use Bob's alternate analyzer direction.
        #[arg(long)]
        alt_bob: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendName {
    Born,
    Counting,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Slots,
    Angle,
}

/// Run configuration file. Every field is optional; flags override.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    scenario: Option<ScenarioConfig>,
    backend: Option<BackendSpec>,
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    alice_deg: Option<f64>,
    alice_alt_deg: Option<f64>,
    bob_deg: Option<f64>,
    bob_alt_deg: Option<f64>,
    state: Option<StateSpec>,
    ancilla_alice: Option<usize>,
    ancilla_bob: Option<usize>,
}

/// Spin state selector: a name, a two-wing product preparation, or raw
/// amplitudes as [re, im] pairs.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StateSpec {
    Named(String),
    Product { product: ProductState },
    Amplitudes { amplitudes: Vec<[f64; 2]> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductState {
    alice_angle_deg: f64,
    bob_angle_deg: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BackendSpec {
    Named(String),
    Counting {
        counting: CountingSpec,
    },
    MonteCarlo {
        #[serde(rename = "monte-carlo")]
        monte_carlo: McSpec,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountingSpec {
    n: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct McSpec {
    trials: Option<u64>,
    seed: Option<u64>,
}

enum CliError {
    /// Bad flags or config contents; exit code 1.
    Config(String),
    /// Scenario validation or computation failure; exit code 2.
    Run(String),
}

impl From<equibell::Error> for CliError {
    fn from(err: equibell::Error) -> Self {
        CliError::Run(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let tolerance = cli.tolerance.or(cfg.tolerance).unwrap_or(1e-9);
    let backend = resolve_backend(cli, &cfg)?;
    let scenario = build_scenario(cli, &cfg, backend)?;

    match &cli.command {
        Command::Chsh => {
            require_format(cli, Format::Json)?;
            let report = chsh(&scenario)?;
            emit(cli, &pretty(&report.to_dto())?)
        }
        Command::Locality => {
            require_format(cli, Format::Json)?;
            let battery = condition_battery(&scenario, tolerance)?;
            let dto = battery.to_dto();
            emit(cli, &pretty(&dto)?)?;
            let violated: Vec<&str> = dto
                .conditions
                .iter()
                .filter(|c| c.verdict == Verdict::Violated)
                .map(|c| c.name.as_str())
                .collect();
            if violated.is_empty() {
                Ok(())
            } else {
                Err(CliError::Run(format!(
                    "conclusively violated: {}",
                    violated.join(", ")
                )))
            }
        }
        Command::Converge {
            by,
            schedule,
            thetas,
        } => {
            require_format(cli, Format::Csv)?;
            let csv = match by {
                SweepKind::Slots => {
                    let schedule = parse_schedule(schedule.as_deref())?;
                    // Track the joint plus-plus cell at the primary settings.
                    let target = ProductProjector::new(
                        scenario.wing_projector(Wing::Alice, Choice::Primary, Sign::Plus),
                        scenario.wing_projector(Wing::Bob, Choice::Primary, Sign::Plus),
                    );
                    let points = convergence_sweep(&scenario.full_state(), &target, &schedule)?;
                    sweep_csv(&points)
                }
                SweepKind::Angle => {
                    let thetas = parse_thetas(thetas.as_deref())?;
                    let n = validated_n(cli.n.unwrap_or(16))?;
                    let mc = match (cli.trials, cli.seed) {
                        (None, None) => None,
                        (Some(trials), Some(seed)) => Some((validated_trials(trials)?, seed)),
                        (None, Some(seed)) => Some((100_000, seed)),
                        (Some(_), None) => {
                            return Err(CliError::Config(
                                "--trials in angle mode needs --seed".into(),
                            ))
                        }
                    };
                    correlation_sweep(&scenario, &thetas, n, mc)?
                }
            };
            emit(cli, &csv)
        }
        Command::Sample { alt_alice, alt_bob } => {
            require_format(cli, Format::Json)?;
            let n = validated_n(
                cli.n
                    .ok_or_else(|| CliError::Config("sample needs --n (slot count)".into()))?,
            )?;
            let trials = validated_trials(cli.trials.unwrap_or(100_000))?;
            let seed = cli
                .seed
                .ok_or_else(|| CliError::Config("sample needs --seed".into()))?;
            let tally = sample_microstates(
                &scenario,
                choice(*alt_alice),
                choice(*alt_bob),
                n,
                trials,
                seed,
            )?;
            emit(cli, &pretty(&tally)?)
        }
        Command::DumpExpansion { alt_alice, alt_bob } => {
            require_format(cli, Format::Json)?;
            let n = validated_n(cli.n.ok_or_else(|| {
                CliError::Config("dump-expansion needs --n (slot count)".into())
            })?)?;
            let product = scenario.product_expansion(choice(*alt_alice), choice(*alt_bob), n)?;
            emit(cli, &pretty(&product.expansion.to_dump())?)
        }
    }
}

fn choice(alternate: bool) -> Choice {
    if alternate {
        Choice::Alternate
    } else {
        Choice::Primary
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let Some(path) = &cli.config else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn resolve_backend(cli: &Cli, cfg: &RunConfig) -> Result<Backend, CliError> {
    let kind = match (cli.backend, &cfg.backend) {
        (Some(kind), _) => kind,
        (None, Some(BackendSpec::Named(name))) => match name.as_str() {
            "born" => BackendName::Born,
            "counting" => BackendName::Counting,
            "monte-carlo" => BackendName::MonteCarlo,
            other => return Err(CliError::Config(format!("unknown backend {other:?}"))),
        },
        (None, Some(BackendSpec::Counting { .. })) => BackendName::Counting,
        (None, Some(BackendSpec::MonteCarlo { .. })) => BackendName::MonteCarlo,
        (None, None) => BackendName::Born,
    };
    match kind {
        BackendName::Born => Ok(Backend::Born),
        BackendName::Counting => {
            let cfg_n = match &cfg.backend {
                Some(BackendSpec::Counting { counting }) => Some(counting.n),
                _ => None,
            };
            let n = cli.n.or(cfg_n).ok_or_else(|| {
                CliError::Config("counting backend needs --n (slot count)".into())
            })?;
            Ok(Backend::Counting { n: validated_n(n)? })
        }
        BackendName::MonteCarlo => {
            let (cfg_trials, cfg_seed) = match &cfg.backend {
                Some(BackendSpec::MonteCarlo { monte_carlo }) => {
                    (monte_carlo.trials, monte_carlo.seed)
                }
                _ => (None, None),
            };
            let trials = validated_trials(cli.trials.or(cfg_trials).unwrap_or(100_000))?;
            let seed = cli
                .seed
                .or(cfg_seed)
                .ok_or_else(|| CliError::Config("monte-carlo backend needs --seed".into()))?;
            Ok(Backend::MonteCarlo { trials, seed })
        }
    }
}

fn build_scenario(cli: &Cli, cfg: &RunConfig, backend: Backend) -> Result<EPRBScenario, CliError> {
    let sc = cfg.scenario.as_ref();
    let pick = |flag: Option<f64>, from_cfg: Option<f64>, fallback: f64| {
        flag.or(from_cfg).unwrap_or(fallback)
    };
    let alice = pick(cli.alice_deg, sc.and_then(|s| s.alice_deg), 0.0);
    let alice_alt = pick(cli.alice_alt_deg, sc.and_then(|s| s.alice_alt_deg), 90.0);
    let bob = pick(cli.bob_deg, sc.and_then(|s| s.bob_deg), 45.0);
    let bob_alt = pick(cli.bob_alt_deg, sc.and_then(|s| s.bob_alt_deg), 135.0);
    let ancilla_alice = cli
        .ancilla_alice
        .or(sc.and_then(|s| s.ancilla_alice))
        .unwrap_or(64);
    let ancilla_bob = cli
        .ancilla_bob
        .or(sc.and_then(|s| s.ancilla_bob))
        .unwrap_or(64);

    for (name, value) in [
        ("alice", alice),
        ("alice-alt", alice_alt),
        ("bob", bob),
        ("bob-alt", bob_alt),
    ] {
        if !value.is_finite() {
            return Err(CliError::Config(format!(
                "{name} angle must be finite, got {value}"
            )));
        }
    }

    let state = match &cli.state {
        Some(name) => named_state(name)?,
        None => match sc.and_then(|s| s.state.as_ref()) {
            Some(spec) => build_state(spec)?,
            None => singlet(),
        },
    };

    Ok(EPRBScenario::new(
        Direction::from_plane_degrees(alice),
        Direction::from_plane_degrees(alice_alt),
        Direction::from_plane_degrees(bob),
        Direction::from_plane_degrees(bob_alt),
        state,
        ancilla_alice,
        ancilla_bob,
        backend,
    )?)
}

fn named_state(name: &str) -> Result<StateVector, CliError> {
    match name {
        "singlet" => Ok(singlet()),
        "photon-pair" | "photon-box" => Ok(photon_pair()),
        other => Err(CliError::Config(format!(
            "unknown state {other:?} (expected singlet or photon-pair)"
        ))),
    }
}

fn build_state(spec: &StateSpec) -> Result<StateVector, CliError> {
    match spec {
        StateSpec::Named(name) => named_state(name),
        StateSpec::Product { product } => {
            if !product.alice_angle_deg.is_finite() || !product.bob_angle_deg.is_finite() {
                return Err(CliError::Config(
                    "product state angles must be finite".into(),
                ));
            }
            let a = plus_eigenvector(product.alice_angle_deg)?;
            let b = plus_eigenvector(product.bob_angle_deg)?;
            Ok(a.tensor(&b))
        }
        StateSpec::Amplitudes { amplitudes } => {
            if amplitudes.len() != 4 {
                return Err(CliError::Config(format!(
                    "state amplitudes must list four [re, im] pairs, got {}",
                    amplitudes.len()
                )));
            }
            if amplitudes.iter().flatten().any(|x| !x.is_finite()) {
                return Err(CliError::Config("state amplitudes must be finite".into()));
            }
            let amps = amplitudes
                .iter()
                .map(|[re, im]| Complex64::new(*re, *im))
                .collect();
            Ok(StateVector::new(amps)?)
        }
    }
}

/// Unit eigenvector of the spin observable along an x-z plane axis, plus
/// outcome. Extracted from the projector itself so the phase convention
/// matches the analyzers.
fn plus_eigenvector(angle_deg: f64) -> Result<StateVector, CliError> {
    let proj = spin_projector(Direction::from_plane_degrees(angle_deg), Sign::Plus);
    let e0 = StateVector::from_reals(&[1.0, 0.0])?;
    let e1 = StateVector::from_reals(&[0.0, 1.0])?;
    let i0 = proj.apply(&e0)?;
    let i1 = proj.apply(&e1)?;
    // A rank-one projector's columns have total squared norm 1, so the
    // larger one is safely normalizable.
    let best = if i0.norm_sq() >= i1.norm_sq() { i0 } else { i1 };
    Ok(best.normalized()?)
}

fn parse_schedule(raw: Option<&str>) -> Result<Vec<usize>, CliError> {
    let Some(raw) = raw else {
        return Ok(vec![8, 16, 32, 64, 128, 256]);
    };
    let parsed: Result<Vec<usize>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
    let schedule = parsed.map_err(|e| CliError::Config(format!("bad --schedule entry: {e}")))?;
    if schedule.is_empty() {
        return Err(CliError::Config("--schedule lists no slot counts".into()));
    }
    for &n in &schedule {
        validated_n(n)?;
    }
    Ok(schedule)
}

fn validated_n(n: usize) -> Result<usize, CliError> {
    if n < 2 {
        return Err(CliError::Config(format!(
            "slot count must be at least 2, got {n}"
        )));
    }
    Ok(n)
}

fn validated_trials(trials: u64) -> Result<u64, CliError> {
    if trials == 0 {
        return Err(CliError::Config("trial count must be at least 1".into()));
    }
    Ok(trials)
}

fn parse_thetas(raw: Option<&str>) -> Result<Vec<f64>, CliError> {
    let Some(raw) = raw else {
        return Ok((0..=12).map(|k| 15.0 * k as f64).collect());
    };
    let parsed: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
    let thetas = parsed.map_err(|e| CliError::Config(format!("bad --thetas entry: {e}")))?;
    if thetas.is_empty() {
        return Err(CliError::Config("--thetas lists no angles".into()));
    }
    Ok(thetas)
}

fn require_format(cli: &Cli, natural: Format) -> Result<(), CliError> {
    match cli.format {
        None => Ok(()),
        Some(given) if given == natural => Ok(()),
        Some(given) => Err(CliError::Config(format!(
            "this command emits {} output, not {}",
            natural.name(),
            given.name()
        ))),
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Run(format!("cannot serialize output: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn emit(cli: &Cli, content: &str) -> Result<(), CliError> {
    match &cli.out {
        None => {
            print!("{content}");
            std::io::stdout()
                .flush()
                .map_err(|e| CliError::Run(format!("cannot write output: {e}")))
        }
        Some(path) => atomic_write(path, content),
    }
}

/// Writes through a temporary file in the destination directory and
/// renames it into place, so readers never observe a partial file.
fn atomic_write(path: &Path, content: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{stem}.tmp-{}", std::process::id()));
    let result = fs::write(&tmp, content).and_then(|()| fs::rename(&tmp, path));
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Run(format!("cannot write {}: {e}", path.display()))
    })
}
