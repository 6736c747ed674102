//! `isolator`: coil extraction, transient runs and link measurements from the
//! command line.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error,
//! 3 numeric failure.

mod commands;
mod config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isolator_core::par;
use serde_json::{json, Value};
use toml::Table;

use commands::Outcome;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Io(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<isolator_core::Error> for CliError {
    fn from(e: isolator_core::Error) -> Self {
        match e {
            isolator_core::Error::InvalidParameter { .. } => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "isolator", version, about = "PCB-transformer isolator models: extraction, simulation, link checks")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `coil.turns=6`; `none` clears an optional key.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    /// Repeat the command for each listed value of one config key.
    #[arg(long, global = true, value_name = "SECTION.KEY=A,B,...")]
    sweep: Option<String>,

    /// Write the JSON document to stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Write the JSON document to a file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract the transformer model from the coil and board.
    Extract,
    /// Run a transient and report its metrics.
    Simulate(SimulateArgs),
    /// Fold the receiver output of a PRBS7 link run into an eye diagram.
    Eye(LinkArgs),
    /// Summary table of the isolator characteristics with pass flags.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Circuit {
    /// Transmitter oscillator (loaded by its receiver).
    Tx,
    Isolator,
    Halfbridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StimulusKind {
    /// Input held at logic 1 (tx, isolator).
    High,
    /// Input held at logic 0 (tx, isolator).
    Low,
    /// PRBS7 NRZ data (isolator).
    Prbs7,
    /// Complementary A/B square wave (halfbridge).
    Square,
    /// All four steady A/B combinations (halfbridge).
    Truth,
}

impl StimulusKind {
    pub fn name(self) -> &'static str {
        match self {
            StimulusKind::High => "high",
            StimulusKind::Low => "low",
            StimulusKind::Prbs7 => "prbs7",
            StimulusKind::Square => "square",
            StimulusKind::Truth => "truth",
        }
    }
}

#[derive(Debug, Clone, Args)]
struct LinkArgs {
    /// Number of PRBS7 bits (overrides link.bits).
    #[arg(long)]
    bits: Option<usize>,

    /// Bit rate in Mbps (overrides link.bit_rate_mbps).
    #[arg(long, value_parser = positive_f64)]
    bit_rate: Option<f64>,

    /// PRBS7 seed (overrides link.seed).
    #[arg(long)]
    seed: Option<u8>,

    /// Write the trace (or folded eye) as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    circuit: Circuit,

    /// Defaults: high for tx, prbs7 for isolator, square for halfbridge.
    #[arg(long, value_enum)]
    stimulus: Option<StimulusKind>,

    #[command(flatten)]
    link: LinkArgs,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {s}"))
    }
}

/// What to run once the configuration is settled.
#[derive(Debug, Clone, Copy)]
pub enum Job {
    Extract,
    Simulate(Circuit, StimulusKind),
    Eye,
    Report,
}

impl Job {
    fn name(self) -> &'static str {
        match self {
            Job::Extract => "extract",
            Job::Simulate(..) => "simulate",
            Job::Eye => "eye",
            Job::Report => "report",
        }
    }
}

fn default_stimulus(c: Circuit) -> StimulusKind {
    match c {
        Circuit::Tx => StimulusKind::High,
        Circuit::Isolator => StimulusKind::Prbs7,
        Circuit::Halfbridge => StimulusKind::Square,
    }
}

fn allowed(c: Circuit, s: StimulusKind) -> bool {
    use StimulusKind::*;
    match c {
        Circuit::Tx => matches!(s, High | Low),
        Circuit::Isolator => matches!(s, High | Low | Prbs7),
        Circuit::Halfbridge => matches!(s, Square | Truth),
    }
}

/// Link flags as `link.*` overrides, applied after `--set` and `--sweep`.
fn link_overrides(a: &LinkArgs) -> Vec<(&'static str, String)> {
    let mut v = Vec::new();
    if let Some(b) = a.bits {
        v.push(("bits", b.to_string()));
    }
    if let Some(r) = a.bit_rate {
        v.push(("bit_rate_mbps", format!("{r:?}")));
    }
    if let Some(s) = a.seed {
        v.push(("seed", s.to_string()));
    }
    v
}

struct Plan {
    job: Job,
    csv: Option<PathBuf>,
    flags: Vec<(&'static str, String)>,
}

fn plan(cmd: &Command) -> Result<Plan, CliError> {
    Ok(match cmd {
        Command::Extract => Plan {
            job: Job::Extract,
            csv: None,
            flags: Vec::new(),
        },
        Command::Report => Plan {
            job: Job::Report,
            csv: None,
            flags: Vec::new(),
        },
        Command::Eye(a) => Plan {
            job: Job::Eye,
            csv: a.csv.clone(),
            flags: link_overrides(a),
        },
        Command::Simulate(a) => {
            let stim = a.stimulus.unwrap_or_else(|| default_stimulus(a.circuit));
            if !allowed(a.circuit, stim) {
                return Err(CliError::Usage(format!(
                    "--stimulus {} does not apply to --circuit {}",
                    stim.name(),
                    a.circuit.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
                )));
            }
            let flags = link_overrides(&a.link);
            if stim != StimulusKind::Prbs7 && !flags.is_empty() {
                return Err(CliError::Usage(format!(
                    "--bits, --bit-rate and --seed need --stimulus prbs7, not {}",
                    stim.name()
                )));
            }
            if stim == StimulusKind::Truth && a.link.csv.is_some() {
                return Err(CliError::Usage("--csv is not available with --stimulus truth".into()));
            }
            Plan {
                job: Job::Simulate(a.circuit, stim),
                csv: a.link.csv.clone(),
                flags,
            }
        }
    })
}

fn apply_sets(table: &mut Table, sets: &[String]) -> Result<(), CliError> {
    for s in sets {
        let (section, key, value) = config::split_assignment(s)?;
        config::apply_override(table, &section, &key, &value)?;
    }
    Ok(())
}

fn apply_flags(table: &mut Table, flags: &[(&'static str, String)]) -> Result<(), CliError> {
    for (key, value) in flags {
        config::apply_override(table, "link", key, value)?;
    }
    Ok(())
}

fn write_json(doc: &Value, cli: &Cli) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    if let Some(path) = &cli.out {
        std::fs::write(path, &text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    if cli.json {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn print_summary(label: &str, doc: &Value) {
    if !label.is_empty() {
        println!("{label}");
    }
    if let Some(checks) = doc.get("checks").and_then(Value::as_array) {
        for c in checks {
            let pass = c.get("pass").and_then(Value::as_bool).unwrap_or(false);
            println!(
                "  {} {:<26} {}  [{}]",
                if pass { "PASS" } else { "FAIL" },
                c.get("name").and_then(Value::as_str).unwrap_or("?"),
                c.get("value").map(Value::to_string).unwrap_or_default(),
                c.get("bound").and_then(Value::as_str).unwrap_or("")
            );
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let plan = plan(&cli.command)?;
    let mut base = config::load_table(cli.config.as_deref())?;
    apply_sets(&mut base, &cli.set)?;

    let Some(sweep) = &cli.sweep else {
        apply_flags(&mut base, &plan.flags)?;
        let cfg = config::from_table(base)?;
        let outcome = commands::run(plan.job, &cfg)?;
        if let (Some(path), Some(artifact)) = (&plan.csv, &outcome.artifact) {
            artifact.write(path)?;
        }
        let mut doc = outcome.doc;
        doc["schema_version"] = json!(SCHEMA_VERSION);
        doc["command"] = json!(plan.job.name());
        write_json(&doc, cli)?;
        if !cli.json && cli.out.is_none() {
            print_summary("", &doc);
        }
        return Ok(outcome.pass);
    };

    if plan.csv.is_some() {
        return Err(CliError::Usage("--csv cannot be combined with --sweep".into()));
    }
    let (section, key, values) = config::split_assignment(sweep)?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("empty value in --sweep {sweep}")));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in &values {
        let mut t = base.clone();
        config::apply_override(&mut t, &section, &key, v)?;
        apply_flags(&mut t, &plan.flags)?;
        configs.push(config::from_table(t)?);
    }
    let exec = configs[0].execution();
    let outcomes: Vec<Result<Outcome, CliError>> = par::map(exec, &configs, |cfg| commands::run(plan.job, cfg));
    let mut results = Vec::with_capacity(outcomes.len());
    let mut pass = true;
    for (value, outcome) in values.iter().zip(outcomes) {
        let o = outcome?;
        pass &= o.pass;
        let mut doc = o.doc;
        doc["sweep_value"] = json!(value);
        results.push(doc);
    }
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": plan.job.name(),
        "sweep": { "key": format!("{section}.{key}"), "values": values },
        "results": results,
        "pass": pass,
    });
    write_json(&doc, cli)?;
    if !cli.json && cli.out.is_none() {
        for r in &results_of(&doc) {
            let label = format!("{section}.{key} = {}", r["sweep_value"].as_str().unwrap_or("?"));
            print_summary(&label, r);
        }
    }
    Ok(pass)
}

fn results_of(doc: &Value) -> Vec<Value> {
    doc["results"].as_array().cloned().unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
