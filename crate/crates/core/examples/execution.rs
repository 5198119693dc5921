// Execute generated test cases against the simulator, with pre-attack
// snapshots and restoration after every case.

use vecuforge::executor::{execute_all, ExecContext, ExecTarget};
use vecuforge::scenario_dsl::parse_scenario;
use vecuforge::script_registry::Registry;
use vecuforge::sut_sim::SimConfig;
use vecuforge::tcg::{generate_cases, SutDatabase};

pub fn run() {
    let scenario = parse_scenario(include_str!("../tests/corpus/valid/SC-FUNC-NEG-REQ-002.scn")).unwrap();
    let cases = generate_cases(&scenario, &SutDatabase::bundled(), &Registry::bundled(), 2).unwrap();
    let ctx = ExecContext::bundled();
    for (label, cfg) in [("vulnerable", SimConfig::default()), ("hardened", SimConfig::hardened())] {
        println!("{label}:");
        for r in execute_all(&cases, &ExecTarget::Spawn(cfg), &ctx, None) {
            let restored = r.cleanup.as_ref().is_some_and(|c| c.restored);
            println!("  {} {} (restored {restored})", r.case_ref, r.verdict.as_str());
            for s in &r.step_log {
                println!("    {} -> {:?}", s.command, s.rx.iter().map(|f| f.to_wire()).collect::<Vec<_>>());
            }
        }
    }
}

#[allow(dead_code)]
fn main() {
    run();
}
