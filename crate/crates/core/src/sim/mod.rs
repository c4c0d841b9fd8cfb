pub mod config;
pub mod metrics;
pub mod scenario;
pub mod world;

pub use config::{ScenarioConfig, gen_scale_topology, parse_scenario, render_scenario, scale_overlay_nodes};
pub use metrics::{EventLog, MetricsReport, emit_report};
pub use scenario::{ScenarioRun, compare_chain_orders, earthquake_config, fire_config, run_scenario, run_upgrade_scenario, upgrade_config};
pub use world::{SimError, World};
