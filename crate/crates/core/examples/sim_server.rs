// Start the virtual ECU and talk to it over its wire protocol.

use vecuforge::sut_sim::{Frame, SimConfig, SimLink, SimServer};

pub fn run() {
    let server = SimServer::spawn(SimConfig::default()).expect("simulator starts");
    println!("simulator at {}", server.endpoint());
    let mut link = SimLink::connect(server.endpoint()).expect("connects");

    let (rx, latency) = link.exchange(&Frame::parse_wire("7df#02010d").unwrap()).unwrap();
    println!("speed request -> {:?} in {latency:?}", rx.iter().map(Frame::to_wire).collect::<Vec<_>>());

    // the management channel snapshots and restores the full ECU state
    let snapshot = link.dump().unwrap();
    link.exchange(&Frame::parse_wire("7e0#021003").unwrap()).unwrap();
    assert_ne!(link.dump().unwrap(), snapshot);
    link.load(&snapshot).unwrap();
    assert_eq!(link.dump().unwrap(), snapshot);
    println!("alive: {}", link.probe_alive().unwrap());
    server.shutdown();
}

#[allow(dead_code)]
fn main() {
    run();
}
