//! Launcher: master/worker roles and the bundled example programs.
//!
//! Results go to standard output; structured log lines (timestamp, role,
//! rank, event) go to standard error. Flags override environment variables
//! (prefix `MPIGNITE_`), which override defaults.

use std::io::Write;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use mpignite::examples;
use mpignite::{LocalRuntime, Master, RoutingMode, RuntimeError, Value, Worker};

const WORKER_WAIT: Duration = Duration::from_secs(30);

#[derive(Parser)]
#[command(
    name = "mpignite",
    version,
    about = "Ranked parallel closures over an MPI-like communicator API"
)]
struct Cli {
    /// Log level for diagnostics on stderr.
    #[arg(long, global = true, env = "MPIGNITE_LOG", default_value = "info",
          value_parser = ["error", "warn", "info", "debug", "trace"])]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Run every rank as a thread of this process.
    Local,
    /// Self-host a loopback cluster: an in-process master plus TCP workers.
    Cluster,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoutingArg {
    /// Worker-to-worker connections, established lazily.
    P2p,
    /// Every user message is forwarded by the master.
    Relay,
}

impl From<RoutingArg> for RoutingMode {
    fn from(r: RoutingArg) -> RoutingMode {
        match r {
            RoutingArg::P2p => RoutingMode::PeerToPeer,
            RoutingArg::Relay => RoutingMode::MasterRelay,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a bundled example and print its result array.
    Run {
        /// Example name.
        #[arg(value_parser = examples::ALL)]
        example: String,
        /// Number of ranked logical processes.
        #[arg(short = 'n', long = "ranks", value_parser = clap::value_parser!(u32).range(1..))]
        n: u32,
        /// Deployment mode.
        #[arg(long, env = "MPIGNITE_MODE", default_value = "local", value_enum)]
        mode: ModeArg,
        /// Message routing in cluster mode.
        #[arg(long, env = "MPIGNITE_ROUTING", default_value = "p2p", value_enum)]
        routing: RoutingArg,
        /// Worker count for the self-hosted cluster.
        #[arg(long, env = "MPIGNITE_WORKERS", default_value_t = 3,
              value_parser = clap::value_parser!(u32).range(1..))]
        workers: u32,
    },
    /// Start a master, wait for workers, run one example, then shut down.
    Master {
        #[arg(long, env = "MPIGNITE_LISTEN", default_value = "127.0.0.1:7077")]
        listen: String,
        /// Number of workers to wait for before launching.
        #[arg(long, env = "MPIGNITE_WORKERS", default_value_t = 3,
              value_parser = clap::value_parser!(u32).range(1..))]
        workers: u32,
        #[arg(value_parser = examples::ALL)]
        example: String,
        #[arg(short = 'n', long = "ranks", value_parser = clap::value_parser!(u32).range(1..))]
        n: u32,
        #[arg(long, env = "MPIGNITE_ROUTING", default_value = "p2p", value_enum)]
        routing: RoutingArg,
    },
    /// Serve as a worker until the master shuts the cluster down.
    Worker {
        /// Master address to register with.
        #[arg(long, env = "MPIGNITE_MASTER")]
        master: String,
        /// Listen address for peer connections (port 0 picks one).
        #[arg(long, env = "MPIGNITE_LISTEN", default_value = "0.0.0.0:0")]
        listen: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);

    match cli.command {
        Command::Run {
            example,
            n,
            mode,
            routing,
            workers,
        } => {
            if let Err(msg) = examples::validate_process_count(&example, n) {
                eprintln!("usage error: {msg}");
                return ExitCode::from(2);
            }
            let routing = RoutingMode::from(routing);
            let mode_name = match mode {
                ModeArg::Local => "local",
                ModeArg::Cluster => "cluster",
            };
            log::info!("run example={example} n={n} mode={mode_name} routing={routing}");
            let outcome = match mode {
                ModeArg::Local => run_local(&example, n, routing),
                ModeArg::Cluster => run_loopback_cluster(&example, n, routing, workers),
            };
            report(&example, n, outcome)
        }
        Command::Master {
            listen,
            workers,
            example,
            n,
            routing,
        } => {
            if let Err(msg) = examples::validate_process_count(&example, n) {
                eprintln!("usage error: {msg}");
                return ExitCode::from(2);
            }
            let outcome = run_as_master(&listen, workers, &example, n, routing.into());
            report(&example, n, outcome)
        }
        Command::Worker { master, listen } => {
            let registry = Arc::new(examples::registry());
            match Worker::connect(&master, &listen, registry).and_then(Worker::run) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("worker failed: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}

fn init_logging(level: &str) {
    let mut builder = env_logger::Builder::new();
    builder
        .parse_filters(level)
        .format(|buf, record| {
            let ts = buf.timestamp_millis();
            let thread = std::thread::current();
            writeln!(
                buf,
                "{ts} {:5} [{}] {}",
                record.level(),
                thread.name().unwrap_or("main"),
                record.args()
            )
        })
        .format_timestamp_millis();
    let _ = builder.try_init();
}

fn run_local(example: &str, n: u32, _routing: RoutingMode) -> Result<Vec<Value>, RuntimeError> {
    // Local mode has a single in-memory message path; the routing flag is
    // accepted for interface parity and changes nothing.
    let rt = LocalRuntime::new(Arc::new(examples::registry()));
    rt.parallelize_func(example)?.execute(n)
}

fn run_loopback_cluster(
    example: &str,
    n: u32,
    routing: RoutingMode,
    workers: u32,
) -> Result<Vec<Value>, RuntimeError> {
    let registry = Arc::new(examples::registry());
    let master = Master::bind("127.0.0.1:0", registry.clone())?;
    let addr = master.addr().to_string();
    let mut handles = Vec::with_capacity(workers as usize);
    for _ in 0..workers {
        handles.push(Worker::spawn(&addr, "127.0.0.1:0", registry.clone())?);
    }
    master.wait_for_workers(workers as usize, WORKER_WAIT)?;

    let results = master
        .parallelize_func(example)?
        .with_routing(routing)
        .execute(n);

    master.shutdown()?;
    for handle in handles {
        handle.join()?;
    }
    results
}

fn run_as_master(
    listen: &str,
    workers: u32,
    example: &str,
    n: u32,
    routing: RoutingMode,
) -> Result<Vec<Value>, RuntimeError> {
    let registry = Arc::new(examples::registry());
    let master = Master::bind(listen, registry)?;
    log::info!("master: waiting for {workers} workers");
    master.wait_for_workers(workers as usize, WORKER_WAIT)?;
    let results = master
        .parallelize_func(example)?
        .with_routing(routing)
        .execute(n);
    master.shutdown()?;
    results
}

fn report(example: &str, n: u32, outcome: Result<Vec<Value>, RuntimeError>) -> ExitCode {
    match outcome {
        Ok(results) => {
            let rendered: Vec<String> = results.iter().map(|v| v.to_string()).collect();
            println!("{example} n={n} results [{}]", rendered.join(", "));
            println!("{}", examples::summarize(example, &results));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("job failed: {e}");
            if let RuntimeError::JobFailed { failures } = &e {
                for f in failures {
                    eprintln!("  {f}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
