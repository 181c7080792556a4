use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use admit_core::config::{to_matrix, AuditToggles, ConfigError, Mat2};
use admit_core::cqlf::{search_cqlf, verify_cqlf, SEARCH_EPS};
use admit_core::export::{write_figures, write_trace_csv};
use admit_core::sim::{run_scenario, SimTrace};
use admit_core::ScenarioConfig;
use admit_live::ServeOptions;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "admit-switch", version, about = "Switched model-reference admittance control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write trace.csv, metrics.json, metrics.txt and certificate.txt.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key.path=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum)]
        audit: Option<Audit>,
        /// Scenario files run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Verify or search for a common quadratic Lyapunov function.
    Certify {
        config: PathBuf,
        /// File holding `p = [[a, b], [c, d]]` (TOML) or `[[a, b], [c, d]]` (JSON).
        #[arg(long)]
        check_p: Option<PathBuf>,
    },
    /// Run a scenario and write figure data plus gnuplot scripts.
    Figures {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Host an interactive session over WebSocket.
    Serve {
        config: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 20)]
        decimation: usize,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Write the full-rate trace here on shutdown.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Audit {
    All,
    None,
}

/// A failure with the class printed as `error[class]`.
struct Failure {
    class: &'static str,
    message: String,
}

impl Failure {
    fn new(class: &'static str, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::new("config", e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new("io", format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADMIT_SWITCH_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            configs,
            out,
            overrides,
            audit,
            jobs,
        } => cmd_run(&configs, &out, &overrides, audit, jobs),
        Command::Certify { config, check_p } => cmd_certify(&config, check_p.as_deref()),
        Command::Figures { config, out, overrides } => cmd_figures(&config, &out, &overrides),
        Command::Serve {
            config,
            port,
            host,
            decimation,
            speed,
            trace_out,
        } => cmd_serve(&config, SocketAddr::new(host, port), decimation, speed, trace_out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.class, f.message.trim_end());
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, Failure> {
    let cfg = ScenarioConfig::load(path)?;
    Ok(if overrides.is_empty() {
        cfg
    } else {
        cfg.with_overrides(overrides)?
    })
}

fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
    write_trace_csv(trace, std::io::BufWriter::new(file)).map_err(|e| io_failure(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn cmd_run(
    configs: &[PathBuf],
    out: &Path,
    overrides: &[String],
    audit: Option<Audit>,
    jobs: usize,
) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(Failure::new("config", "--jobs must be at least 1"));
    }
    // one config writes straight into `out`, several get a subdirectory each
    let dirs: Vec<PathBuf> = if configs.len() == 1 {
        vec![out.to_path_buf()]
    } else {
        configs
            .iter()
            .map(|c| out.join(c.file_stem().unwrap_or_default()))
            .collect()
    };
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                if let Err(f) = run_one(config, &dirs[i], overrides, audit) {
                    failures.lock().expect("failure list").push((config.clone(), f));
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("failure list");
    match failures.len() {
        0 => Ok(()),
        1 => Err(failures.pop().expect("one failure").1),
        n => {
            for (config, f) in &failures {
                eprintln!("error[{}]: {}: {}", f.class, config.display(), f.message);
            }
            Err(Failure::new("batch", format!("{n} of {} scenarios failed", configs.len())))
        }
    }
}

fn run_one(config_path: &Path, dir: &Path, overrides: &[String], audit: Option<Audit>) -> Result<(), Failure> {
    let mut cfg = load(config_path, overrides)?;
    match audit {
        Some(Audit::All) => cfg.run.audits = AuditToggles::all(),
        Some(Audit::None) => cfg.run.audits = AuditToggles::none(),
        None => {}
    }
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let names = &cfg.output;
    match run_scenario(&cfg) {
        Ok(out) => {
            write_trace(&dir.join(&names.trace_csv), &out.trace)?;
            let json = serde_json::to_string_pretty(&out.metrics).expect("metrics serialize");
            write_text(&dir.join(&names.metrics_json), &(json + "\n"))?;
            write_text(&dir.join(&names.metrics_txt), &out.metrics.to_text())?;
            write_text(&dir.join(&names.certificate_txt), &out.certificate.to_report_text())?;
            println!("{}: ok ({} steps) -> {}", cfg.name, out.metrics.steps, dir.display());
            print!("{}", out.metrics.to_text());
            Ok(())
        }
        Err(abort) => {
            // keep the partial trace for diagnosis
            if !abort.trace.records.is_empty() {
                write_trace(&dir.join(&names.trace_csv), &abort.trace)?;
            }
            Err(Failure::new(
                abort.error.class(),
                format!("{}: {abort}", cfg.name),
            ))
        }
    }
}

fn read_p(path: &Path) -> Result<Mat2, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    if let Ok(m) = serde_json::from_str::<Mat2>(&text) {
        return Ok(m);
    }
    let table: toml::Table = text
        .parse()
        .map_err(|e| Failure::new("config", format!("{}: {e}", path.display())))?;
    let value = table
        .get("p")
        .or_else(|| table.get("cqlf_certificate").and_then(|c| c.get("p")))
        .ok_or_else(|| Failure::new("config", format!("{}: no `p` matrix", path.display())))?;
    value
        .clone()
        .try_into()
        .map_err(|e| Failure::new("config", format!("{}: `p`: {e}", path.display())))
}

fn cmd_certify(config_path: &Path, check_p: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(config_path, &[])?;
    let family = cfg.subsystem_matrices();
    let supplied = match check_p {
        Some(path) => Some(read_p(path)?),
        None => cfg.admittance.lyapunov_p,
    };
    let (cert, origin) = match supplied {
        Some(p) => {
            let cert = verify_cqlf(&family, &to_matrix(&p))
                .map_err(|e| Failure::new("no_cqlf", format!("CQLF rejected: {e}")))?;
            (cert, "supplied P verified".to_string())
        }
        None => {
            let found = search_cqlf(&family, cfg.admittance.cqlf_max_iter, SEARCH_EPS).map_err(|report| {
                Failure::new(
                    "no_cqlf",
                    format!(
                        "{report}\ninfeasible_report = {}",
                        serde_json::to_string(&report).expect("report serializes")
                    ),
                )
            })?;
            (found.certificate, format!("found by search in {} iterations", found.iterations))
        }
    };
    println!("# {}: {origin}", cfg.name);
    print!("{}", cert.to_report_text());
    Ok(())
}

fn cmd_figures(config_path: &Path, out: &Path, overrides: &[String]) -> Result<(), Failure> {
    let cfg = load(config_path, overrides)?;
    let run = run_scenario(&cfg).map_err(|abort| Failure::new(abort.error.class(), format!("{}: {abort}", cfg.name)))?;
    let files = write_figures(&run.trace, out).map_err(|e| io_failure(out, e))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_serve(
    config_path: &Path,
    addr: SocketAddr,
    decimation: usize,
    speed: f64,
    trace_out: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load(config_path, &[])?;
    let options = ServeOptions {
        decimation,
        speed: Some(speed),
        ..Default::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new("io", e.to_string()))?;
    let trace = runtime
        .block_on(admit_live::serve(cfg, addr, options))
        .map_err(|e| Failure::new(e.class(), e.to_string()))?;
    if let Some(path) = trace_out {
        write_trace(path, &trace)?;
        println!("wrote {} records to {}", trace.records.len(), path.display());
    }
    Ok(())
}
