//! Virtual ECU: frame codec, deterministic UDS-like state machine, socket
//! server with a management channel, and the harness-side link.

mod client;
mod ecu;
mod frame;
mod server;

pub use client::{LinkError, SimLink};
pub use ecu::{
    handle_frame, is_positive, negative_parts, vendor_key, weak_key, EcuState, SimConfig, StateError,
    FUNCTIONAL_ID, PHYSICAL_ID, RESPONSE_ID, SVC_CURRENT_DATA, SVC_SECURITY_ACCESS, SVC_SESSION,
    SVC_TESTER_PRESENT, SVC_UNDOCUMENTED, SVC_WRITE_DID, WEAK_KEY_MASK, PID_SPEED,
};
pub use frame::{hex_lower, parse_hex, Frame, FrameError, MAX_DATA, MAX_ID};
pub use server::{serve, SimEndpoint, SimServer};
