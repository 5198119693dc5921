// Threat enumeration, risk assessment and requirement derivation for the
// bundled item.

use vecuforge::analysis::{self, DEFAULT_THRESHOLD};
use vecuforge::bundled;
use vecuforge::item_model::Item;

pub fn run() {
    let item = Item::from_json(bundled::ITEM).unwrap();
    let catalog = analysis::parse_catalog(bundled::CATALOG).unwrap();
    let threats = analysis::enumerate_threats(&item, &catalog);
    let risks = analysis::assess_with_defaults(&threats, &catalog, DEFAULT_THRESHOLD).unwrap();
    for (t, r) in threats.iter().zip(&risks) {
        println!(
            "{:<40} level {} x probability {} = {:>2} {}",
            t.id,
            r.impact.level,
            r.probability,
            r.value,
            if r.acceptable { "acceptable" } else { "treat" }
        );
    }
    let library = analysis::parse_concept_library(bundled::COUNTERMEASURES).unwrap();
    let pairs: Vec<_> = threats.into_iter().zip(risks).collect();
    let reqs = analysis::derive_requirements(&pairs, &library.countermeasures, &library.config);
    for r in &reqs {
        println!("{} [{:?}, verify by {}] {}", r.id, r.kind, r.verification_hint.as_str(), r.text);
    }
    let consistency = analysis::check_consistency(&reqs, &item.security_goals, &item);
    println!("goals without requirements: {:?}", consistency.uncovered_goals);
}

#[allow(dead_code)]
fn main() {
    run();
}
