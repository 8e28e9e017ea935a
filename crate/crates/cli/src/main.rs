use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use b92sim::analytics::write_rate_csv;
use b92sim::config::{read_config, OutputFormat};
use b92sim::experiment::{
    json_report, run_attack, run_histogram, run_optimize, run_simulation, run_sweep, run_table, write_table_csv,
    AttackReport, TABLE_CSV_HEADER,
};
use b92sim::protocol::{sift, write_record, RunOptions};
use b92sim::reference::{table_100mhz, table_1ghz};
use b92sim::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(
    name = "b92sim",
    version,
    about = "Monte Carlo simulator for polarization-encoded B92 quantum key distribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Simulate this fraction of the collection time; rates are unchanged.
    #[arg(long, global = true, value_name = "F")]
    duration_scale: Option<f64>,
    /// Run on one thread.
    #[arg(long, global = true)]
    serial: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TableChoice {
    #[value(name = "100mhz")]
    Mhz100,
    #[value(name = "1ghz")]
    Ghz1,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one session; CSV output is the session record (configuration plus events).
    Simulate {
        /// Also write the sifted key at the first configured window.
        #[arg(long, value_name = "PATH")]
        key: Option<PathBuf>,
    },
    /// Rate report for every configured distance and window.
    Sweep,
    /// Per-channel timing histogram folded on the sync period.
    Histogram,
    /// Intercept-resend attack against an unattacked baseline.
    Attack,
    /// Scan the window fraction and report the best net rate.
    OptimizeWindow,
    /// Simulate the built-in reference measurements next to their printed values.
    Tables {
        #[arg(long, value_enum, default_value = "all")]
        table: TableChoice,
    },
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_output(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match f(&mut lock).and_then(|_| lock.flush()) {
                // A closed pipe (`| head`) is not a failure.
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                r => r.map_err(|e| io_error(Path::new("<stdout>"), e)),
            }
        }
    }
}

fn write_json(out: Option<&Path>, value: &Value) -> Result<()> {
    write_output(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn attack_csv(w: &mut dyn Write, r: &AttackReport) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(w, "quantity,value")?;
    let rows: [(&str, String); 15] = [
        ("window_fraction", r.window_fraction.to_string()),
        ("baseline_rate", r.baseline_rate.to_string()),
        ("attacked_rate", r.attacked_rate.to_string()),
        ("rate_ratio", r.rate_ratio.to_string()),
        ("expected_rate_ratio", r.expected_rate_ratio.to_string()),
        ("baseline_qber", r.baseline_qber.to_string()),
        ("attacked_qber", r.attacked_qber.to_string()),
        ("induced_qber_delta", r.induced_qber_delta.to_string()),
        ("qber_delta_sigma", r.qber_delta_sigma.to_string()),
        ("eve_information_fraction", opt(r.eve_information_fraction)),
        ("intercepted", r.outcome.intercepted.to_string()),
        ("unambiguous", r.outcome.unambiguous.to_string()),
        ("resent", r.outcome.resent.to_string()),
        ("tolerance", r.tolerance.to_string()),
        ("verdict", format!("{:?}", r.verdict).to_lowercase()),
    ];
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut spec = match &c.config {
        Some(path) => read_config(path)?,
        None => Default::default(),
    };
    if let Some(seed) = c.seed {
        spec.session.seed = seed;
    }
    if let Some(f) = c.duration_scale {
        spec.session.duration_scale = f;
    }
    if let Some(f) = c.format {
        spec.output_format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    if c.out.is_some() {
        spec.output_path = c.out.clone();
    }
    spec.validate()?;
    let out = spec.output_path.clone();
    let out = out.as_deref();
    let json = spec.output_format == OutputFormat::Json;
    let options = RunOptions {
        parallel: !c.serial && RunOptions::default().parallel,
    };

    match &cli.command {
        Command::Simulate { key } => {
            let sim = run_simulation(&spec, options)?;
            for r in &sim.reports {
                eprintln!(
                    "window {}: r_raw {:.0}/s r_sift {:.0}/s QBER {:.2}% r_net {}",
                    r.window_fraction,
                    r.r_raw,
                    r.r_sift,
                    r.qber * 100.0,
                    if r.insecure {
                        "insecure".to_string()
                    } else {
                        format!("{:.0}/s", r.r_net)
                    }
                );
            }
            if let Some(path) = key {
                let k = sift(&sim.record, spec.windows[0])?;
                write_output(Some(path), |w| k.write_text(w))?;
            }
            if json {
                let results = json!({
                    "events": sim.record.events.len(),
                    "duration_s": sim.record.duration,
                    "reports": to_value(&sim.reports),
                    "error_budgets": to_value(&sim.budgets),
                    "attack": sim.record.attack.as_ref().map(to_value),
                });
                write_json(out, &json_report("simulate", &spec, results))
            } else {
                write_output(out, |w| write_record(&sim.record, w))
            }
        }
        Command::Sweep => {
            let rows = run_sweep(&spec, options)?;
            if json {
                write_json(out, &json_report("sweep", &spec, to_value(&rows)))
            } else {
                write_output(out, |w| write_rate_csv(w, &rows))
            }
        }
        Command::Histogram => {
            let h = run_histogram(&spec, options)?;
            if json {
                write_json(out, &json_report("histogram", &spec, to_value(&h)))
            } else {
                write_output(out, |w| h.write_csv(w))
            }
        }
        Command::Attack => {
            let r = run_attack(&spec, options)?;
            eprintln!(
                "rate ratio {:.4} (expected {:.4}), QBER delta {:+.3}% +- {:.3}%, verdict {:?}",
                r.rate_ratio,
                r.expected_rate_ratio,
                r.induced_qber_delta * 100.0,
                r.qber_delta_sigma * 100.0,
                r.verdict
            );
            if json {
                write_json(out, &json_report("attack", &spec, to_value(&r)))
            } else {
                write_output(out, |w| attack_csv(w, &r))
            }
        }
        Command::OptimizeWindow => {
            let (best, rows) = run_optimize(&spec, options)?;
            eprintln!("best window fraction {best}");
            if json {
                let results = json!({ "best_window_fraction": best, "reports": to_value(&rows) });
                write_json(out, &json_report("optimize-window", &spec, results))
            } else {
                write_output(out, |w| write_rate_csv(w, &rows))
            }
        }
        Command::Tables { table } => {
            let tables = match table {
                TableChoice::Mhz100 => vec![table_100mhz()],
                TableChoice::Ghz1 => vec![table_1ghz()],
                TableChoice::All => vec![table_100mhz(), table_1ghz()],
            };
            let mut results = Vec::new();
            for t in &tables {
                let rows = run_table(t, &spec.session, c.duration_scale, spec.privacy_theta, options)?;
                results.push((t, rows));
            }
            if json {
                let value: Vec<Value> = results
                    .iter()
                    .map(|(t, rows)| {
                        let rows: Vec<Value> = rows
                            .iter()
                            .map(|r| {
                                json!({
                                    "simulated": to_value(r),
                                    "reference": {
                                        "r_raw": r.reference.r_raw,
                                        "r_sift": r.reference.r_sift,
                                        "r_net": r.reference.r_net,
                                        "qber_percent": r.reference.qber_percent,
                                    },
                                })
                            })
                            .collect();
                        json!({ "table": t.name, "clock_hz": t.clock_hz, "windows": t.windows, "rows": rows })
                    })
                    .collect();
                write_json(out, &json_report("tables", &spec, Value::Array(value)))
            } else {
                write_output(out, |w| {
                    writeln!(w, "{TABLE_CSV_HEADER}")?;
                    for (t, rows) in &results {
                        write_table_csv(&mut *w, t, rows)?;
                    }
                    Ok(())
                })
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::UndefinedStatistic(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
