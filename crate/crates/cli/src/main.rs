//! Command-line driver: run a scenario file, generate and run the scaling
//! topology, or reproduce the upgrade and chain-order experiments. Every
//! run writes `metrics.csv` and `events.log` under the output directory.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand};

use iotgw_core::sim::{
    ScenarioConfig, ScenarioRun, compare_chain_orders, gen_scale_topology, parse_scenario,
    render_scenario, run_scenario, run_upgrade_scenario,
};
use iotgw_core::vnf::VnfFamily;

#[derive(Parser)]
#[command(name = "iotgw", version, about = "Distributed IoT gateway simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        /// Scenario file in the sectioned key=value grammar.
        #[arg(long)]
        scenario: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// After the run, serve the orchestration-plan API on this port.
        #[arg(long = "serve-plans")]
        serve_plans: Option<u16>,
        /// Output directory for metrics.csv and events.log.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate the k-instances-per-function topology and run it.
    Scale {
        #[arg(long)]
        k: u32,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run both orderings of the scenario's chain and compare.
    CompareOrders {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario on a fresh domain and against its pre-deployments.
    Upgrade {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {}", path.display(), e))?;
    let mut cfg = parse_scenario(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_outputs(run: &ScenarioRun, dir: &Path, suffix: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let metrics = dir.join(format!("metrics{}.csv", suffix));
    let events = dir.join(format!("events{}.log", suffix));
    iotgw_core::sim::emit_report(&run.report, &metrics).map_err(|e| e.to_string())?;
    fs::write(&events, run.world.log.render()).map_err(|e| e.to_string())?;
    println!("wrote {} and {}", metrics.display(), events.display());
    Ok(())
}

fn print_summary(run: &ScenarioRun) {
    let r = &run.report;
    println!(
        "provisioning {} ticks | orchestration {} (deploy {}, chain {}, overlay {}) | e2e {} | messages {}",
        r.provisioning_time,
        r.orchestration_time,
        r.phase_times.deploy,
        r.phase_times.chain,
        r.phase_times.overlay,
        r.e2e_delay,
        r.message_count,
    );
    for (overlay, size) in &r.overlay_sizes {
        println!("overlay {}: {} nodes", overlay, size);
    }
    if !run.world.failures.is_empty() {
        for (tick, e) in &run.world.failures {
            println!("failure at tick {}: {}", tick, e);
        }
    }
}

fn main() -> ExitCode {
    match run_cli(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}

fn run_cli(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { scenario, seed, serve_plans, out } => {
            let cfg = load_scenario(&scenario, seed)?;
            let mut run = run_scenario(cfg).map_err(|e| e.to_string())?;
            print_summary(&run);
            write_outputs(&run, &out, "")?;
            if let Some(port) = serve_plans {
                let listener = TcpListener::bind(("127.0.0.1", port))
                    .map_err(|e| format!("bind port {}: {}", port, e))?;
                println!(
                    "serving plan API on http://127.0.0.1:{} (Ctrl-C to stop)",
                    listener.local_addr().map(|a| a.port()).unwrap_or(port)
                );
                iotgw_cli::serve::serve(&mut run.world, listener, Arc::new(AtomicBool::new(false)));
            }
            Ok(())
        }
        Command::Scale { k, out } => {
            if k < 1 {
                return Err("k must be at least 1".into());
            }
            let cfg = gen_scale_topology(k);
            fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let scenario_path = out.join("scenario.cfg");
            fs::write(&scenario_path, render_scenario(&cfg)).map_err(|e| e.to_string())?;
            println!("generated {}", scenario_path.display());
            let run = run_scenario(cfg).map_err(|e| e.to_string())?;
            print_summary(&run);
            write_outputs(&run, &out, "")
        }
        Command::CompareOrders { scenario, seed, out } => {
            let cfg = load_scenario(&scenario, seed)?;
            let (first, second) = compare_chain_orders(cfg).map_err(|e| e.to_string())?;
            let order = |run: &ScenarioRun| -> String {
                run.world
                    .controller
                    .registrations()
                    .next()
                    .map(|r| {
                        r.chain
                            .functions
                            .iter()
                            .map(|k| k.to_string())
                            .collect::<Vec<_>>()
                            .join("-")
                    })
                    .unwrap_or_default()
            };
            println!(
                "{}: e2e {} ticks, model conversions {}",
                order(&first),
                first.report.e2e_delay,
                first.report.invocations_of(VnfFamily::Imc)
            );
            println!(
                "{}: e2e {} ticks, model conversions {}",
                order(&second),
                second.report.e2e_delay,
                second.report.invocations_of(VnfFamily::Imc)
            );
            println!(
                "final application records identical: {}",
                first.report.delivered == second.report.delivered
            );
            if let Some(dir) = out {
                write_outputs(&first, &dir, "_first_order")?;
                write_outputs(&second, &dir, "_second_order")?;
            }
            Ok(())
        }
        Command::Upgrade { scenario, seed, out } => {
            let cfg = load_scenario(&scenario, seed)?;
            if cfg.predeploys.is_empty() {
                return Err("scenario has no predeploy lines; nothing to upgrade against".into());
            }
            let (fresh, upgrade) = run_upgrade_scenario(cfg).map_err(|e| e.to_string())?;
            println!(
                "fresh:   {} instantiations, orchestration {} ticks",
                fresh.report.instantiation_count, fresh.report.orchestration_time
            );
            println!(
                "upgrade: {} instantiations, orchestration {} ticks",
                upgrade.report.instantiation_count, upgrade.report.orchestration_time
            );
            let saved = fresh.report.orchestration_time - upgrade.report.orchestration_time;
            println!(
                "upgrade saves {} ticks ({:.2}%)",
                saved,
                100.0 * saved as f64 / fresh.report.orchestration_time as f64
            );
            if let Some(dir) = out {
                write_outputs(&fresh, &dir, "_fresh")?;
                write_outputs(&upgrade, &dir, "_upgrade")?;
            }
            Ok(())
        }
    }
}
