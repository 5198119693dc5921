// Fingerprint the simulator and reconcile the result with the item definition.

use vecuforge::bundled;
use vecuforge::item_model::{fingerprint_endpoint, reconcile, Item, ProbeConfig};
use vecuforge::sut_sim::{SimConfig, SimServer};

pub fn run() {
    let item = Item::from_json(bundled::ITEM).unwrap();
    let server = SimServer::spawn(SimConfig::default()).unwrap();
    let iface = item.interface("I_DIAG").unwrap();
    let fp = fingerprint_endpoint(iface, server.endpoint(), &ProbeConfig::default()).unwrap();
    println!("responding ids: {:?}", fp.responding_request_ids);
    println!("services: {:?}", fp.supported_services);
    for d in reconcile(&item, &fp).unwrap() {
        println!("{:?} {}: {}", d.kind, d.service, d.detail);
    }
    server.shutdown();
}

#[allow(dead_code)]
fn main() {
    run();
}
