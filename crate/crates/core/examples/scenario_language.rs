// Parse, validate and canonically serialize a test scenario.

use vecuforge::scenario_dsl::{parse_scenario, serialize, validate, Vocabulary};

const SOURCE: &str = r#"
# functional check of the speed read
scenario "SC-DEMO" {
  meta { method: "functional" requirement_ref: "REQ-010" domain: $REQ_ID }
  env { interface I_OBD canlike bus="can0" precondition sut_alive }
  steps {
    pattern SEND_CAN_MSG(id=$REQ_ID, data=0x02010d)
    expect RESPONSE_SID(sid=0x41) within 200ms
  }
  oracle { pass: expect.all fail: expect.any_unmet }
}
"#;

pub fn run() {
    let scenario = parse_scenario(SOURCE).unwrap();
    println!("placeholders: {:?}", scenario.placeholders());
    assert!(validate(&scenario, &Vocabulary::standard()).is_empty());
    let canonical = serialize(&scenario);
    print!("{canonical}");
    assert_eq!(serialize(&parse_scenario(&canonical).unwrap()), canonical);

    let broken = SOURCE.replace("within 200ms", "within ms");
    println!("broken: {}", parse_scenario(&broken).unwrap_err());
}

#[allow(dead_code)]
fn main() {
    run();
}
