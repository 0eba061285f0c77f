//! The bundled sales demo: goal, workflow, scripted model replies and the
//! fixture database. Runs fully offline.

use std::sync::Arc;

use crate::agents::{default_profiles, AgentError, AgentRuntime, Archive};
use crate::awel::{parse_dag_dsl, DagSpec};
use crate::datachat::Database;
use crate::smmf::{Gateway, MockBackend, MockScript, Registry, SystemClock, WorkerSpec, MOCK_ENDPOINT};

pub const DEMO_GOAL: &str = "Build sales reports and analyze user orders from at least three distinct dimensions";
pub const SALES_DAG: &str = include_str!("../assets/sales.dag");
pub const DEMO_SCRIPT: &str = include_str!("../assets/demo_script.json");
pub const DEMO_MODEL: &str = "mock";

pub fn demo_script() -> MockScript {
    MockScript::from_json(DEMO_SCRIPT).expect("bundled demo script")
}

pub fn sales_dag() -> DagSpec {
    parse_dag_dsl(SALES_DAG).expect("bundled sales dag")
}

/// Gateway with one mock worker serving [`DEMO_MODEL`] from `script`.
pub fn mock_gateway(script: MockScript) -> Arc<Gateway> {
    let gw = Gateway::new(Arc::new(Registry::new(Arc::new(SystemClock))));
    gw.register(WorkerSpec::new(DEMO_MODEL, MOCK_ENDPOINT), Arc::new(MockBackend::new(script)))
        .expect("mock worker registers");
    Arc::new(gw)
}

/// Default agents on the demo script and the fixture database.
pub fn demo_runtime(gateway: Arc<Gateway>, archive: Arc<dyn Archive>) -> Result<AgentRuntime, AgentError> {
    let db = Database::demo().map_err(|e| AgentError::InvalidProfile(format!("demo database: {e}")))?;
    Ok(AgentRuntime::new(default_profiles(), gateway, archive)?.with_database(Arc::new(db)))
}
