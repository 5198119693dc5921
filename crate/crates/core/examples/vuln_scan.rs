// Scan fingerprints of a vulnerable and a hardened ECU against the
// vulnerability database.

use vecuforge::bundled;
use vecuforge::item_model::{fingerprint_endpoint, Item, ProbeConfig};
use vecuforge::sut_sim::{SimConfig, SimServer};
use vecuforge::vuln_scanner::{parse_vulndb, scan};

pub fn run() {
    let item = Item::from_json(bundled::ITEM).unwrap();
    let db = parse_vulndb(bundled::VULNDB).unwrap();
    for (label, cfg) in [("vulnerable", SimConfig::default()), ("hardened", SimConfig::hardened())] {
        let server = SimServer::spawn(cfg).unwrap();
        let fp = fingerprint_endpoint(item.interface("I_DIAG").unwrap(), server.endpoint(), &ProbeConfig::default()).unwrap();
        let report = scan(&fp, &db);
        println!("{label}: {} findings, followups {:?}", report.findings.len(), report.followups);
        for f in &report.findings {
            println!("  {} severity {}: {}", f.entry_id, f.severity, f.title);
        }
        server.shutdown();
    }
}

#[allow(dead_code)]
fn main() {
    run();
}
