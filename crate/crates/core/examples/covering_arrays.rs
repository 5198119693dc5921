// Pairwise covering arrays and test-case generation from a scenario.

use vecuforge::scenario_dsl::{parse_scenario, Value};
use vecuforge::script_registry::Registry;
use vecuforge::tcg::{covering_array, generate_cases, SutDatabase};

pub fn run() {
    let ints = |xs: &[u64]| xs.iter().map(|&x| Value::Int(x)).collect::<Vec<_>>();
    let params = vec![
        ("A".to_string(), ints(&[0, 1, 2])),
        ("B".to_string(), ints(&[0, 1])),
        ("C".to_string(), ints(&[0, 1])),
    ];
    let ca = covering_array(&params, 2).unwrap();
    println!("3x2x2 pairwise: {} rows instead of 12", ca.rows.len());
    for row in &ca.rows {
        println!("  {}", row.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
    }

    let scenario = parse_scenario(include_str!("../tests/corpus/valid/SC-FUNC-NEG-REQ-002.scn")).unwrap();
    let cases = generate_cases(&scenario, &SutDatabase::bundled(), &Registry::bundled(), 2).unwrap();
    for c in &cases {
        println!("{} {:?}", c.id, c.variability);
    }
}

#[allow(dead_code)]
fn main() {
    run();
}
