// Seeded fuzz campaign against the simulator, with crash localization and
// minimization.

use vecuforge::bundled;
use vecuforge::fuzz_engine::{corpus_from_wire, run_campaign, FuzzConfig};
use vecuforge::sut_sim::{SimConfig, SimLink, SimServer};
use vecuforge::tcg::SutDatabase;

pub fn run() {
    let db = SutDatabase::from_json(bundled::SUTDB).unwrap();
    let corpus = corpus_from_wire(&db.dictionaries["diag_corpus"]).unwrap();
    let server = SimServer::spawn(SimConfig::default()).unwrap();
    let mut link = SimLink::connect(server.endpoint()).unwrap();
    let result = run_campaign(&FuzzConfig::new(1, 2_000, corpus), &mut link).unwrap();
    println!(
        "{} frames, {} probes, {} distinct crashes",
        result.stats.frames_sent,
        result.stats.probes,
        result.findings.len()
    );
    for f in &result.findings {
        let min = f.minimized_input.as_ref().unwrap_or(&f.trigger_input);
        println!("  #{} {} minimized to {}", f.position, f.trigger_input.to_wire(), min.to_wire());
    }
    server.shutdown();
}

#[allow(dead_code)]
fn main() {
    run();
}
