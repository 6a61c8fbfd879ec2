//! `belllab`: simulate local hidden-variable models, audit them, and check the
//! CHSH bound and the singlet correlation.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use belllab_core::audit::{conspiracy_audit, AuditConditioning, Verdict};
use belllab_core::engine::{parse_angle, parse_grid, run_experiment, Geometry, RunConfig, SettingsMode};
use belllab_core::models::{model_by_name, PearleModel, Threshold};
use belllab_core::netharness::{run_conspiratorial, run_strict, validate_log, HarnessOptions, StationSettings};
use belllab_core::oracle::{
    enumerate_quadruples, solve_threshold, verify_threshold, OutcomeDomain, SolverOptions, UniformDensity, Verification,
};
use belllab_core::stats::{chsh_all, detection_stats, CorrelationTable, Which, DEFAULT_K_SIGMA};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use report::{results_csv, write_json, write_text};

const THREADS_VAR: &str = "BELLLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "belllab",
    version,
    about = "Time-slot simulations of local hidden-variable models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the engine on an angle grid or a CHSH setting and write per-cell correlations.
    Simulate(SimulateArgs),
    /// Evaluate all eight CHSH statistics, full-ensemble and post-selected.
    Chsh(ChshArgs),
    /// Test whether the hidden-variable law depends on the settings.
    Audit(AuditArgs),
    /// Enumerate the exact CHSH bound and certify the Pearle threshold by quadrature.
    Oracle(OracleArgs),
    /// Run the message-passing protocol harness.
    Net(NetArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Hidden-variable model: pearle or socks.
    #[arg(long, default_value = "pearle")]
    model: String,
    /// Slots per setting pair or grid angle.
    #[arg(long, default_value_t = belllab_core::engine::DEFAULT_SLOTS)]
    slots: u64,
    /// Master seed; every random draw derives from it.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "belllab-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct AngleArgs {
    /// Angle grid `start:end:count` in radians, e.g. `0:pi:13`.
    #[arg(long)]
    grid: Option<String>,
    /// CHSH directions `a,a',b,b'` in radians.
    #[arg(long)]
    angles: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SettingsArg {
    /// A fixed block of slots for each setting pair.
    Fixed,
    /// Per-slot coin tosses at both stations.
    Random,
}

impl From<SettingsArg> for SettingsMode {
    fn from(m: SettingsArg) -> Self {
        match m {
            SettingsArg::Fixed => SettingsMode::FixedPairs,
            SettingsArg::Random => SettingsMode::RandomSettings,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    angles: AngleArgs,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: SettingsArg,
    /// Also write every trial, with its hidden variable, to trials.ndjson.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct ChshArgs {
    #[command(flatten)]
    common: Common,
    /// CHSH directions `a,a',b,b'`; defaults to `0,pi/2,pi/4,3pi/4`.
    #[arg(long)]
    angles: Option<String>,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: SettingsArg,
    /// Standard errors a statistic must clear above 2 to count as a violation.
    #[arg(long, default_value_t = DEFAULT_K_SIGMA)]
    ksigma: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConditioningArg {
    All,
    DetectedOnly,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    angles: AngleArgs,
    #[arg(long, value_enum, default_value = "detected-only")]
    conditioning: ConditioningArg,
    /// Family-wise significance level.
    #[arg(long, default_value_t = belllab_core::audit::DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Verification grid `start:end:count`; must cover `[0, pi]`.
    #[arg(long, default_value = "0:pi:61")]
    grid: String,
    /// Largest allowed `|c(θ) + cos θ|`.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// `closed-form`, `solve`, or `constant:VALUE`.
    #[arg(long, default_value = "closed-form")]
    threshold: String,
    #[arg(long, default_value = "belllab-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NetMode {
    Strict,
    Conspiratorial,
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Hidden-variable model: pearle or socks.
    #[arg(long, default_value = "pearle")]
    model: String,
    /// Total number of time slots.
    #[arg(long, default_value_t = 100_000)]
    slots: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "belllab-out")]
    out: PathBuf,
    /// CHSH directions `a,a',b,b'`; defaults to `0,pi/2,pi/4,3pi/4`.
    #[arg(long)]
    angles: Option<String>,
    #[arg(long, value_enum, default_value = "strict")]
    mode: NetMode,
    #[arg(long, default_value_t = DEFAULT_K_SIGMA)]
    ksigma: f64,
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_VAR}=`{v}` is not a count"))?;
            if n == 0 {
                bail!("{THREADS_VAR} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn parse_four(text: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        bail!("--angles needs four comma-separated values a,a',b,b'");
    }
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = parse_angle(p)?;
    }
    Ok(out)
}

fn chsh_geometry(angles: Option<&str>) -> Result<Geometry> {
    Ok(match angles {
        Some(a) => Geometry::chsh_planar(parse_four(a)?),
        None => Geometry::optimal_chsh(),
    })
}

fn geometry(args: &AngleArgs) -> Result<Geometry> {
    match (&args.grid, &args.angles) {
        (Some(g), None) => Ok(Geometry::Grid { angles: parse_grid(g)? }),
        (None, a) => chsh_geometry(a.as_deref()),
        (Some(_), Some(_)) => bail!("--grid and --angles are exclusive"),
    }
}

fn station_settings(angles: Option<&str>) -> Result<StationSettings> {
    Ok(match angles {
        Some(a) => StationSettings::planar(parse_four(a)?),
        None => StationSettings::optimal(),
    })
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn config(common: &Common, geometry: Geometry, mode: SettingsMode, trace: bool) -> Result<RunConfig> {
    model_by_name(&common.model)?;
    let mut config = RunConfig::new(&common.model, geometry, common.seed);
    config.slots = common.slots;
    config.mode = mode;
    config.audit_trace = trace;
    config.threads = threads_from_env()?;
    config.validate()?;
    Ok(config)
}

fn seeds(seed: u64) -> serde_json::Value {
    json!({
        "master": seed,
        "substreams": "ChaCha8 keyed by SplitMix64 expansion of the master seed; stream id = slot << 2 | role",
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = config(&args.common, geometry(&args.angles)?, args.mode.into(), args.trace)?;
    let out = run_experiment(&config)?;
    let dir = &args.common.out;
    prepare(dir)?;
    let csv = results_csv(&config.geometry, &out.tally);
    write_text(dir, "results.csv", &csv)?;
    if let Some(records) = &out.records {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_text(dir, "trials.ndjson", &text)?;
    }
    write_json(
        dir,
        "summary.json",
        &json!({
            "command": "simulate",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seeds": seeds(config.seed),
            "detection": detection_stats(&out.tally),
        }),
    )?;
    print!("{csv}");
    Ok(())
}

fn chsh(args: ChshArgs) -> Result<()> {
    let config = config(
        &args.common,
        chsh_geometry(args.angles.as_deref())?,
        args.mode.into(),
        false,
    )?;
    let out = run_experiment(&config)?;
    let table = CorrelationTable::from_tally(&out.tally);
    let full = chsh_all(&table, Which::Full, args.ksigma)?;
    let post = chsh_all(&table, Which::Postselected, args.ksigma)?;
    let dir = &args.common.out;
    prepare(dir)?;
    write_text(dir, "results.csv", &results_csv(&config.geometry, &out.tally))?;
    write_json(dir, "chsh.json", &json!({ "full": full, "postselected": post }))?;
    write_json(
        dir,
        "summary.json",
        &json!({
            "command": "chsh",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seeds": seeds(config.seed),
            "k_sigma": args.ksigma,
            "detection": detection_stats(&out.tally),
        }),
    )?;
    for (name, r) in [("full", &full), ("post-selected", &post)] {
        let best = r.max_entry();
        println!(
            "{name:>13}: max S = {:.6} ± {:.6} for {} ({})",
            best.statistic,
            best.se,
            best.pattern,
            if r.any_violation() { "violation" } else { "no violation" }
        );
    }
    Ok(())
}

fn audit(args: AuditArgs) -> Result<()> {
    let config = config(&args.common, geometry(&args.angles)?, SettingsMode::FixedPairs, true)?;
    let out = run_experiment(&config)?;
    let records = out.records.expect("trace requested");
    let conditioning = match args.conditioning {
        ConditioningArg::All => AuditConditioning::All,
        ConditioningArg::DetectedOnly => AuditConditioning::DetectedOnly,
    };
    let report = conspiracy_audit(&records, conditioning, args.alpha)?;
    let dir = &args.common.out;
    prepare(dir)?;
    write_json(dir, "audit.json", &report)?;
    write_json(
        dir,
        "summary.json",
        &json!({
            "command": "audit",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seeds": seeds(config.seed),
            "verdict": report.verdict,
        }),
    )?;
    let label = match report.verdict {
        Verdict::ConspiracyFree => "CONSPIRACY-FREE",
        Verdict::ConspiracyDetected => "CONSPIRACY DETECTED",
    };
    println!(
        "{label} (adjusted p = {:.3e}, {} tests)",
        report.adjusted_p_value, report.n_tests
    );
    Ok(())
}

fn parse_threshold(text: &str, grid: &[f64], tol: f64) -> Result<(Threshold, Option<serde_json::Value>)> {
    if text == "closed-form" {
        return Ok((Threshold::ClosedForm, None));
    }
    if text == "solve" {
        let options = SolverOptions::default();
        let solved = solve_threshold(grid, tol, &options)?;
        let info = json!({ "options": options, "solved": &solved });
        return Ok((solved.as_threshold(), Some(info)));
    }
    if let Some(v) = text.strip_prefix("constant:") {
        let value: f64 = v.parse().with_context(|| format!("bad constant threshold `{v}`"))?;
        if !(0.0..=1.0).contains(&value) {
            bail!("constant threshold {value} outside [0, 1]");
        }
        return Ok((Threshold::Constant { value }, None));
    }
    bail!("unknown threshold `{text}`; use closed-form, solve or constant:VALUE")
}

/// Returns whether the threshold was certified.
fn oracle(args: OracleArgs) -> Result<bool> {
    let grid = parse_grid(&args.grid)?;
    let (threshold, solved) = parse_threshold(&args.threshold, &grid, args.tol)?;
    let binary = enumerate_quadruples(OutcomeDomain::Binary);
    let ternary = enumerate_quadruples(OutcomeDomain::Ternary);
    let verification = verify_threshold(&threshold, &UniformDensity, &grid, args.tol)?;
    prepare(&args.out)?;
    write_json(
        &args.out,
        "enumeration.json",
        &json!({ "binary": binary, "ternary": ternary }),
    )?;
    if let Some(info) = solved {
        write_json(&args.out, "solved-threshold.json", &info)?;
    }
    println!(
        "CHSH bound by enumeration: {} over {} binary and {} over {} ternary assignments",
        binary.overall_maximum(),
        binary.assignments,
        ternary.overall_maximum(),
        ternary.assignments
    );
    let certified = match &verification {
        Verification::Certified(cert) => {
            write_json(&args.out, "certificate.json", cert)?;
            println!(
                "certified {}: max |c + cos| = {:e} at θ = {:.6}",
                cert.body.threshold, cert.body.max_deviation, cert.body.worst_angle
            );
            true
        }
        Verification::Counterexample(cx) => {
            write_json(&args.out, "counterexample.json", cx)?;
            eprintln!("threshold not certified: counterexample at θ = {:.6}", cx.theta());
            false
        }
    };
    Ok(certified)
}

fn net(args: NetArgs) -> Result<()> {
    let settings = station_settings(args.angles.as_deref())?;
    if args.slots == 0 {
        bail!("--slots must be at least 1");
    }
    let options = HarnessOptions::default();
    let run = match args.mode {
        NetMode::Strict => {
            let model = model_by_name(&args.model)?;
            run_strict(model.as_ref(), &settings, args.slots, args.seed, &options)?
        }
        NetMode::Conspiratorial => {
            if args.model != "pearle" {
                bail!("conspiratorial mode runs the pearle model only");
            }
            run_conspiratorial(
                &PearleModel::new(Threshold::ClosedForm),
                &settings,
                args.slots,
                args.seed,
                &options,
            )?
        }
    };
    let verdict = validate_log(&run.log)?;
    let geometry = Geometry::Chsh {
        alice: settings.alice,
        bob: settings.bob,
    };
    let table = CorrelationTable::from_tally(&run.tally);
    // Short runs can leave a setting pair without slots; the CHSH report is
    // then omitted rather than treated as a fault.
    let full = chsh_all(&table, Which::Full, args.ksigma).ok();
    let post = chsh_all(&table, Which::Postselected, args.ksigma).ok();
    prepare(&args.out)?;
    write_text(&args.out, "results.csv", &results_csv(&geometry, &run.tally))?;
    run.log
        .write_ndjson(std::io::BufWriter::new(
            fs::File::create(args.out.join("events.ndjson")).context("creating events.ndjson")?,
        ))
        .context("writing events.ndjson")?;
    write_json(&args.out, "chsh.json", &json!({ "full": full, "postselected": post }))?;
    write_json(
        &args.out,
        "summary.json",
        &json!({
            "command": "net",
            "version": env!("CARGO_PKG_VERSION"),
            "mode": run.mode,
            "model": args.model,
            "slots": args.slots,
            "settings": settings,
            "seeds": seeds(args.seed),
            "records": run.records,
            "source_attempts": run.source_attempts,
            "detection": detection_stats(&run.tally),
            "schedule": verdict,
        }),
    )?;
    println!("{}", verdict.label());
    if let Some(v) = verdict.first_violation() {
        println!(
            "first violation in slot {}: {} via {}",
            v.slot,
            serde_json::to_string(&v.rule)?,
            serde_json::to_string(&v.cited)?
        );
    }
    if let Some(full) = &full {
        println!("full-ensemble max S = {:.6}", full.max_statistic());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Chsh(a) => chsh(a).map(|_| true),
        Command::Audit(a) => audit(a).map(|_| true),
        Command::Oracle(a) => oracle(a),
        Command::Net(a) => net(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
