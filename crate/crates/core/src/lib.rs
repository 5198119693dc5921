pub mod analysis;
pub mod bundled;
pub mod hex;
pub mod item_model;
pub mod scenario_dsl;
pub mod sut_sim;
pub mod planner;
pub mod script_registry;
pub mod tcg;
pub mod vuln_scanner;
pub mod fuzz_engine;
pub mod executor;
pub mod reporter;
pub mod cli;
