// Match steps to test scripts, render commands and validate an exploit
// script against vulnerable and patched simulators.

use vecuforge::executor::ExecContext;
use vecuforge::scenario_dsl::{Step, Value};
use vecuforge::script_registry::{validate_script, Registry, ValidationStatus, ValidationTarget};
use vecuforge::sut_sim::SimConfig;
use vecuforge::tcg::SutDatabase;

pub fn run() {
    let registry = Registry::bundled();
    let step = Step::pattern("SECURITY_ACCESS", [("algorithm", Value::str("xor-a5a5"))]);
    let script = registry.match_script(&step).unwrap();
    let command = script.render(step.args(), &SutDatabase::bundled().slots).unwrap();
    println!("{} implements {} as `{command}`", script.id, script.implements);

    let mut patched = SimConfig::default();
    patched.v1_weak_key = false;
    let record = validate_script(
        script,
        step.args(),
        &ValidationTarget::Sim(SimConfig::default()),
        &ValidationTarget::Sim(patched),
        &[],
        &ExecContext::bundled(),
    );
    println!("{:?}", record.outcomes);
    assert_eq!(record.status, ValidationStatus::Valid);
}

#[allow(dead_code)]
fn main() {
    run();
}
