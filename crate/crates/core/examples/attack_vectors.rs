// Enumerate attack vectors from an attack tree and build the test plan.

use vecuforge::analysis::{self, DEFAULT_THRESHOLD};
use vecuforge::bundled;
use vecuforge::item_model::Item;
use vecuforge::planner::{self, enumerate_attack_vectors, PlanContext, Policy};

pub fn run() {
    let trees = planner::parse_attack_trees(bundled::ATTACK_TREES).unwrap();
    for (class, tree) in &trees {
        println!("{class}: {}", tree.title);
        for (i, v) in enumerate_attack_vectors(tree).iter().enumerate() {
            let steps: Vec<&str> = v.iter().map(|s| s.pattern.as_str()).collect();
            println!("  V{}: {}", i + 1, steps.join(" -> "));
        }
    }

    let item = Item::from_json(bundled::ITEM).unwrap();
    let catalog = analysis::parse_catalog(bundled::CATALOG).unwrap();
    let threats = analysis::enumerate_threats(&item, &catalog);
    let risks = analysis::assess_with_defaults(&threats, &catalog, DEFAULT_THRESHOLD).unwrap();
    let library = analysis::parse_concept_library(bundled::COUNTERMEASURES).unwrap();
    let pairs: Vec<_> = threats.iter().cloned().zip(risks.iter().cloned()).collect();
    let reqs = analysis::derive_requirements(&pairs, &library.countermeasures, &library.config);
    let policy = Policy::default();
    let ctx = PlanContext {
        policy: &policy,
        attack_trees: &trees,
        fuzz: Default::default(),
    };
    let planned = planner::build_plan(&item, &threats, &risks, &reqs, &ctx).unwrap();
    println!("plan {}: {:?}", planned.plan.risk_ref, planned.plan.case_specs);
    assert!(planned.plan.missing_elements().is_empty());
}

#[allow(dead_code)]
fn main() {
    run();
}
