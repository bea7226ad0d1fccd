//! edgeserve command-line interface.
//!
//! `serve` runs the runtime against the wall clock with the REST API bound
//! to a port; `deploy` posts a deployment archive to a running instance;
//! `bench` replays a workload under one or all scheduling policies on the
//! virtual clock; `pipeline-plan` prints the shared transformation graph a
//! bundle would produce.

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use edgeserve_core::api;
use edgeserve_core::config::RuntimeConfig;
use edgeserve_core::coordinator::derive_common_config;
use edgeserve_core::graph::TransformGraph;
use edgeserve_core::harness::{self, WorkloadSpec};
use edgeserve_core::manifest::parse_bundle;
use edgeserve_core::runtime::{Policy, Runtime};

#[derive(Parser)]
#[command(name = "edgeserve", version, about = "Multi-tenant sensor-model serving runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the runtime in real time and serve the REST API.
    Serve {
        /// Runtime configuration file (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Port to bind; EDGESERVE_PORT overrides the default.
        #[arg(long)]
        port: Option<u16>,
        /// Deploy this archive at startup.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Post a deployment archive to a running instance.
    Deploy {
        /// Path to the tar archive with manifest, codelet and functions.
        archive: PathBuf,
        /// Base URL of the running instance.
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        host: String,
    },
    /// Run a workload on the virtual clock and report metrics.
    Bench {
        /// Workload file (TOML) or a preset name (w1..w8).
        workload: String,
        #[arg(long, value_enum, default_value_t = PolicyArg::All)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the canonical machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the shared transformation graph for a deployment bundle.
    PipelinePlan {
        /// Path to the deployment archive.
        bundle: PathBuf,
        /// Runtime configuration providing the sensor topology.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    All,
    Vanilla,
    Static,
    Adaptive,
}

fn load_config(path: &Option<PathBuf>) -> Result<RuntimeConfig, String> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            RuntimeConfig::from_toml(&text).map_err(|e| e.to_string())
        }
        None => Ok(RuntimeConfig::default()),
    }
}

fn load_workload(name_or_path: &str) -> Result<WorkloadSpec, String> {
    if let Some(spec) = harness::preset(name_or_path) {
        return Ok(spec);
    }
    let text = std::fs::read_to_string(name_or_path)
        .map_err(|e| format!("`{name_or_path}` is neither a preset ({}) nor a readable file: {e}", harness::preset_names().join(", ")))?;
    WorkloadSpec::from_toml(&text).map_err(|e| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve {
            config,
            port,
            bundle,
        } => cmd_serve(config, port, bundle),
        Command::Deploy { archive, host } => cmd_deploy(archive, host),
        Command::Bench {
            workload,
            policy,
            seed,
            out,
        } => cmd_bench(workload, policy, seed, out),
        Command::PipelinePlan { bundle, config } => cmd_plan(bundle, config),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn cmd_serve(
    config: Option<PathBuf>,
    port: Option<u16>,
    bundle: Option<PathBuf>,
) -> Result<(), String> {
    let mut cfg = load_config(&config)?;
    if let Ok(dir) = std::env::var("EDGESERVE_DATA_DIR") {
        cfg.store.data_dir = Some(dir);
    }
    let port = port
        .or_else(|| {
            std::env::var("EDGESERVE_PORT")
                .ok()
                .and_then(|p| p.parse().ok())
        })
        .unwrap_or(8080);

    let mut runtime = Runtime::new(cfg, Policy::Adaptive, 42);
    if let Some(path) = bundle {
        let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let bundle = parse_bundle(&bytes[..]).map_err(|e| e.to_string())?;
        let report = runtime.deploy(&bundle).map_err(|e| e.to_string())?;
        for p in &report.placements {
            println!("deployed {} -> {}", p.model_id, p.processor);
        }
    }
    runtime.start_sensors();
    let state = api::shared(runtime);

    let driver_state = state.clone();
    let shutdown = Arc::new(AtomicBool::new(false));
    let driver_shutdown = shutdown.clone();
    std::thread::spawn(move || api::run_realtime(driver_state, driver_shutdown));

    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], port));
    println!("serving on http://{addr}");
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(api::serve(state, addr)).map_err(|e| e.to_string())
}

fn cmd_deploy(archive: PathBuf, host: String) -> Result<(), String> {
    let bytes = std::fs::read(&archive).map_err(|e| format!("{}: {e}", archive.display()))?;
    let url = format!("{}/deploy", host.trim_end_matches('/'));
    let client = reqwest::blocking::Client::new();
    let response = client
        .post(&url)
        .body(bytes)
        .send()
        .map_err(|e| e.to_string())?;
    let status = response.status();
    let body: serde_json::Value = response.json().unwrap_or(serde_json::Value::Null);
    println!("{}", serde_json::to_string_pretty(&body).unwrap_or_default());
    if status.is_success() {
        Ok(())
    } else {
        Err(format!("deploy failed with status {status}"))
    }
}

fn cmd_bench(
    workload: String,
    policy: PolicyArg,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), String> {
    let spec = load_workload(&workload)?;
    let mut canonical = String::new();
    match policy {
        PolicyArg::All => {
            let reports = harness::compare_policies(&spec, seed).map_err(|e| e.to_string())?;
            print!("{}", harness::comparison_table(&reports));
            for report in reports.values() {
                canonical.push_str(&report.canonical());
            }
        }
        single => {
            let policy = match single {
                PolicyArg::Vanilla => Policy::Vanilla,
                PolicyArg::Static => Policy::StaticBatch,
                PolicyArg::Adaptive => Policy::Adaptive,
                PolicyArg::All => unreachable!(),
            };
            let report = harness::run_workload(&spec, policy, seed).map_err(|e| e.to_string())?;
            print!("{}", report.table());
            canonical = report.canonical();
        }
    }
    if let Some(path) = out {
        std::fs::write(&path, canonical).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_plan(bundle_path: PathBuf, config: Option<PathBuf>) -> Result<(), String> {
    let cfg = load_config(&config)?;
    let bytes =
        std::fs::read(&bundle_path).map_err(|e| format!("{}: {e}", bundle_path.display()))?;
    let bundle = parse_bundle(&bytes[..]).map_err(|e| e.to_string())?;

    // Group requirements per sensor modality, derive the Stage-1 config and
    // print the shared DAG next to the unshared operation count.
    for sensor in &cfg.sensors {
        let caps = sensor.capabilities();
        let requirements: std::collections::BTreeMap<String, edgeserve_core::InputSpec> = bundle
            .manifests
            .iter()
            .filter(|m| m.input.modality() == sensor.modality)
            .map(|m| (m.model_id.clone(), m.input.clone()))
            .collect();
        if requirements.is_empty() {
            continue;
        }
        let specs: Vec<edgeserve_core::InputSpec> = requirements.values().cloned().collect();
        let config = derive_common_config(&specs, &caps).map_err(|e| e.to_string())?;
        let graph = TransformGraph::build_shared(&requirements, &config).map_err(|e| e.to_string())?;
        let unshared =
            TransformGraph::unshared_node_count(&requirements, &config).map_err(|e| e.to_string())?;
        println!("sensor {}:", sensor.id);
        print!("{}", graph.render());
        println!(
            "nodes: {} shared vs {} individual ({} models)",
            graph.node_count(),
            unshared,
            requirements.len()
        );
        println!();
    }
    Ok(())
}
