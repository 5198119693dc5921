//! Deterministic ECU state machine.
//!
//! Data layout of every request: `data[0]` is the number of bytes that follow
//! (service id plus parameters). Bytes beyond that count are padding and are
//! ignored. All responses leave from [`RESPONSE_ID`].
//!
//! Four vulnerabilities can be toggled:
//!
//! * V1: the security-access key `seed ^ 0xA5A5` is accepted next to the vendor key.
//! * V2: in session 0x02 write-data-by-id skips the session and lock check.
//! * V3: a length byte that overruns the frame crashes the ECU.
//! * V4: the undocumented service 0x42 answers.

use std::collections::{BTreeMap, BTreeSet};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::Frame;

pub const FUNCTIONAL_ID: u16 = 0x7DF;
pub const PHYSICAL_ID: u16 = 0x7E0;
pub const RESPONSE_ID: u16 = 0x7E8;

pub const SVC_CURRENT_DATA: u8 = 0x01;
pub const SVC_SESSION: u8 = 0x10;
pub const SVC_SECURITY_ACCESS: u8 = 0x27;
pub const SVC_WRITE_DID: u8 = 0x2E;
pub const SVC_TESTER_PRESENT: u8 = 0x3E;
pub const SVC_UNDOCUMENTED: u8 = 0x42;

pub const PID_SPEED: u8 = 0x0D;
pub const WEAK_KEY_MASK: u16 = 0xA5A5;

const NRC_SUBFUNCTION: u8 = 0x12;
const NRC_LENGTH: u8 = 0x13;
const NRC_SEQUENCE: u8 = 0x24;
const NRC_SECURITY_DENIED: u8 = 0x33;
const NRC_INVALID_KEY: u8 = 0x35;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("state blob is not valid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("state blob does not decode: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for config key `{key}`")]
    BadValue { key: String, value: String },
}

/// Static configuration of one simulator instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub speed: u8,
    pub v1_weak_key: bool,
    pub v2_session_bypass: bool,
    pub v3_length_crash: bool,
    pub v4_undocumented_service: bool,
    pub key_constant: u16,
    /// Documented services that answer. 0x42 is governed by V4 alone.
    pub services: BTreeSet<u8>,
    pub seed_base: u16,
}

impl Default for SimConfig {
    /// The vulnerable demo ECU: all four toggles on.
    fn default() -> Self {
        Self {
            speed: 0x32,
            v1_weak_key: true,
            v2_session_bypass: true,
            v3_length_crash: true,
            v4_undocumented_service: true,
            key_constant: 0x5A3C,
            services: [
                SVC_CURRENT_DATA,
                SVC_SESSION,
                SVC_SECURITY_ACCESS,
                SVC_WRITE_DID,
                SVC_TESTER_PRESENT,
            ]
            .into_iter()
            .collect(),
            seed_base: 0x1234,
        }
    }
}

impl SimConfig {
    /// Same ECU with every vulnerability toggle off.
    pub fn hardened() -> Self {
        let mut cfg = Self::default();
        cfg.set_all_vulns(false);
        cfg
    }

    pub fn set_all_vulns(&mut self, on: bool) {
        self.v1_weak_key = on;
        self.v2_session_bypass = on;
        self.v3_length_crash = on;
        self.v4_undocumented_service = on;
    }

    /// Applies one `key=value` setting as accepted by the management `CONFIG` command.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), StateError> {
        let bad = || StateError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let flag = || match value {
            "on" | "1" | "true" => Ok(true),
            "off" | "0" | "false" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "speed" => self.speed = parse_num(value).and_then(|v| u8::try_from(v).ok()).ok_or_else(bad)?,
            "v1" => self.v1_weak_key = flag()?,
            "v2" => self.v2_session_bypass = flag()?,
            "v3" => self.v3_length_crash = flag()?,
            "v4" => self.v4_undocumented_service = flag()?,
            "vulns" => self.set_all_vulns(flag()?),
            "key" => self.key_constant = parse_num(value).and_then(|v| u16::try_from(v).ok()).ok_or_else(bad)?,
            "seed_base" => self.seed_base = parse_num(value).and_then(|v| u16::try_from(v).ok()).ok_or_else(bad)?,
            "services" => {
                self.services = if value.is_empty() || value == "none" {
                    BTreeSet::new()
                } else {
                    value
                        .split(',')
                        .map(|s| parse_num(s.trim()).and_then(|v| u8::try_from(v).ok()))
                        .collect::<Option<_>>()
                        .ok_or_else(bad)?
                };
            }
            _ => return Err(StateError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a comma separated list of `key=value` settings on top of `self`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, StateError> {
        for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| StateError::BadValue {
                key: pair.to_string(),
                value: String::new(),
            })?;
            if k == "services" {
                // services takes a `;`-separated list inside a comma separated spec
                self.apply(k, &v.replace(';', ","))?;
            } else {
                self.apply(k, v)?;
            }
        }
        Ok(self)
    }

    /// Services that elicit a response when probed.
    pub fn effective_services(&self) -> BTreeSet<u8> {
        let mut set = self.services.clone();
        set.remove(&SVC_UNDOCUMENTED);
        if self.v4_undocumented_service {
            set.insert(SVC_UNDOCUMENTED);
        }
        set
    }
}

fn parse_num(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// The vendor ("strong") seed-key algorithm. The tester knows `key_constant`
/// from the SUT database; an attacker does not.
pub fn vendor_key(seed: u16, key_constant: u16) -> u16 {
    let x = (seed ^ key_constant).rotate_left(7);
    x.wrapping_mul(0x9E37) ^ 0x5BD1
}

/// The weak algorithm accepted under V1.
pub fn weak_key(seed: u16) -> u16 {
    seed ^ WEAK_KEY_MASK
}

/// Complete dynamic state. A dump of this value reconstructs behaviour exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcuState {
    pub session: u8,
    pub locked: bool,
    pub last_seed: Option<[u8; 2]>,
    pub alive: bool,
    pub seed_counter: u16,
    pub data_ids: BTreeMap<u16, Vec<u8>>,
    pub config: SimConfig,
}

impl EcuState {
    pub fn new(config: SimConfig) -> Self {
        let mut data_ids = BTreeMap::new();
        data_ids.insert(0xF190, b"VECU0001".to_vec());
        Self {
            session: 0x01,
            locked: true,
            last_seed: None,
            alive: true,
            seed_counter: config.seed_base,
            data_ids,
            config,
        }
    }

    /// Back to power-on defaults, keeping the configuration.
    pub fn reset(&mut self) {
        *self = Self::new(self.config.clone());
    }

    pub fn dump(&self) -> String {
        let json = serde_json::to_vec(self).expect("state serializes");
        base64::engine::general_purpose::STANDARD.encode(json)
    }

    pub fn load(blob: &str) -> Result<Self, StateError> {
        let bytes = base64::engine::general_purpose::STANDARD.decode(blob.trim())?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Processes one frame in place and returns the response frames.
    pub fn handle(&mut self, frame: &Frame) -> Vec<Frame> {
        self.respond(frame)
            .map(|data| vec![Frame::new(RESPONSE_ID, data).expect("responses fit in a frame")])
            .unwrap_or_default()
    }

    fn respond(&mut self, frame: &Frame) -> Option<Vec<u8>> {
        if !self.alive {
            return None;
        }
        if frame.id() != FUNCTIONAL_ID && frame.id() != PHYSICAL_ID {
            return None;
        }
        let (&len, rest) = frame.data().split_first()?;
        let len = len as usize;
        if len > rest.len() {
            if self.config.v3_length_crash {
                self.alive = false;
                return None;
            }
            return Some(negative(0x00, NRC_LENGTH));
        }
        if len == 0 {
            return Some(negative(0x00, NRC_LENGTH));
        }
        let payload = &rest[..len];
        let service = payload[0];
        if service == SVC_UNDOCUMENTED {
            return self.config.v4_undocumented_service.then(|| vec![0x02, 0x62, 0x42]);
        }
        if !self.config.services.contains(&service) {
            return None;
        }
        match service {
            SVC_CURRENT_DATA => Some(self.current_data(payload)),
            SVC_SESSION => Some(self.session_control(payload)),
            SVC_SECURITY_ACCESS => Some(self.security_access(payload)),
            SVC_WRITE_DID => Some(self.write_did(payload)),
            SVC_TESTER_PRESENT => Some(match payload {
                [_] => vec![0x01, 0x7E],
                [_, sub, ..] => vec![0x02, 0x7E, *sub],
                [] => unreachable!(),
            }),
            _ => None,
        }
    }

    fn current_data(&self, payload: &[u8]) -> Vec<u8> {
        match payload {
            [_, PID_SPEED] => vec![0x03, 0x41, PID_SPEED, self.config.speed],
            [_] => negative(SVC_CURRENT_DATA, NRC_LENGTH),
            _ => negative(SVC_CURRENT_DATA, NRC_SUBFUNCTION),
        }
    }

    fn session_control(&mut self, payload: &[u8]) -> Vec<u8> {
        match payload {
            [_, ss @ 0x01..=0x03] => {
                self.session = *ss;
                self.locked = true;
                self.last_seed = None;
                vec![0x02, 0x50, *ss]
            }
            _ => negative(SVC_SESSION, NRC_SUBFUNCTION),
        }
    }

    fn security_access(&mut self, payload: &[u8]) -> Vec<u8> {
        match payload {
            [_, 0x01] => {
                if !self.locked {
                    return vec![0x04, 0x67, 0x01, 0x00, 0x00];
                }
                self.seed_counter = self.seed_counter.wrapping_add(1);
                let seed = self.seed_counter.wrapping_mul(0x4E6D).wrapping_add(0x3039);
                let [s1, s2] = seed.to_be_bytes();
                self.last_seed = Some([s1, s2]);
                vec![0x04, 0x67, 0x01, s1, s2]
            }
            [_, 0x02, k1, k2] => {
                let Some(seed) = self.last_seed.take() else {
                    return negative(SVC_SECURITY_ACCESS, NRC_SEQUENCE);
                };
                let seed = u16::from_be_bytes(seed);
                let key = u16::from_be_bytes([*k1, *k2]);
                let accepted = key == vendor_key(seed, self.config.key_constant)
                    || (self.config.v1_weak_key && key == weak_key(seed));
                if accepted {
                    self.locked = false;
                    vec![0x02, 0x67, 0x02]
                } else {
                    negative(SVC_SECURITY_ACCESS, NRC_INVALID_KEY)
                }
            }
            _ => negative(SVC_SECURITY_ACCESS, NRC_SUBFUNCTION),
        }
    }

    fn write_did(&mut self, payload: &[u8]) -> Vec<u8> {
        let [_, hi, lo, value @ ..] = payload else {
            return negative(SVC_WRITE_DID, NRC_LENGTH);
        };
        if value.is_empty() {
            return negative(SVC_WRITE_DID, NRC_LENGTH);
        }
        let authorized = (self.session == 0x03 && !self.locked)
            || (self.config.v2_session_bypass && self.session == 0x02);
        if !authorized {
            return negative(SVC_WRITE_DID, NRC_SECURITY_DENIED);
        }
        self.data_ids.insert(u16::from_be_bytes([*hi, *lo]), value.to_vec());
        vec![0x03, 0x6E, *hi, *lo]
    }
}

fn negative(service: u8, nrc: u8) -> Vec<u8> {
    vec![0x03, 0x7F, service, nrc]
}

/// Pure transition function: `(state, frame) -> (state', responses)`.
pub fn handle_frame(state: &EcuState, frame: &Frame) -> (EcuState, Vec<Frame>) {
    let mut next = state.clone();
    let responses = next.handle(frame);
    (next, responses)
}

/// True when `data` is a positive response (not `7f ..`).
pub fn is_positive(data: &[u8]) -> bool {
    matches!(data, [_, sid, ..] if *sid != 0x7F)
}

/// Extracts `(service, nrc)` from a negative response.
pub fn negative_parts(data: &[u8]) -> Option<(u8, u8)> {
    match data {
        [_, 0x7F, svc, nrc, ..] => Some((*svc, *nrc)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> Frame {
        Frame::parse_wire(s).unwrap()
    }

    fn send(state: &mut EcuState, s: &str) -> Vec<String> {
        state.handle(&f(s)).iter().map(Frame::to_wire).collect()
    }

    #[test]
    fn speed_request() {
        let mut st = EcuState::new(SimConfig::default());
        assert_eq!(send(&mut st, "7df#02010d"), ["7e8#03410d32"]);
    }

    #[test]
    fn tester_present() {
        let mut st = EcuState::new(SimConfig::default());
        assert_eq!(send(&mut st, "7df#013e"), ["7e8#017e"]);
        assert_eq!(send(&mut st, "7e0#013e"), ["7e8#017e"]);
    }

    #[test]
    fn other_ids_are_silent() {
        let mut st = EcuState::new(SimConfig::default());
        assert!(send(&mut st, "7e1#013e").is_empty());
        assert!(send(&mut st, "123#02010d").is_empty());
    }

    #[test]
    fn session_control() {
        let mut st = EcuState::new(SimConfig::default());
        assert_eq!(send(&mut st, "7e0#021003"), ["7e8#025003"]);
        assert_eq!(st.session, 0x03);
        assert_eq!(send(&mut st, "7e0#021004"), ["7e8#037f1012"]);
        assert_eq!(st.session, 0x03);
    }

    #[test]
    fn length_overrun_crashes_with_v3() {
        let mut st = EcuState::new(SimConfig::default());
        assert!(send(&mut st, "7df#070102").is_empty());
        assert!(!st.alive);
        // absorbing
        assert!(send(&mut st, "7df#013e").is_empty());
        assert!(send(&mut st, "7df#02010d").is_empty());
        st.reset();
        assert_eq!(send(&mut st, "7df#013e"), ["7e8#017e"]);
    }

    #[test]
    fn length_overrun_is_refused_without_v3() {
        let mut st = EcuState::new(SimConfig::hardened());
        assert_eq!(send(&mut st, "7df#070102"), ["7e8#037f0013"]);
        assert!(st.alive);
    }

    fn request_seed(st: &mut EcuState) -> u16 {
        let resp = st.handle(&f("7e0#022701"));
        let d = resp[0].data();
        assert_eq!(&d[..3], &[0x04, 0x67, 0x01]);
        u16::from_be_bytes([d[3], d[4]])
    }

    fn send_key(st: &mut EcuState, key: u16) -> Vec<String> {
        let [k1, k2] = key.to_be_bytes();
        send(st, &format!("7e0#042702{k1:02x}{k2:02x}"))
    }

    #[test]
    fn weak_key_unlocks_with_v1() {
        let mut st = EcuState::new(SimConfig::default());
        let seed = request_seed(&mut st);
        let [s1, s2] = seed.to_be_bytes();
        let key = u16::from_be_bytes([s1 ^ 0xA5, s2 ^ 0xA5]);
        assert_eq!(send_key(&mut st, key), ["7e8#026702"]);
        assert!(!st.locked);
    }

    #[test]
    fn weak_key_refused_without_v1_but_vendor_key_works() {
        let mut st = EcuState::new(SimConfig::hardened());
        let seed = request_seed(&mut st);
        assert_eq!(send_key(&mut st, weak_key(seed)), ["7e8#037f2735"]);
        assert!(st.locked);
        let seed = request_seed(&mut st);
        assert_eq!(send_key(&mut st, vendor_key(seed, 0x5A3C)), ["7e8#026702"]);
        assert!(!st.locked);
    }

    #[test]
    fn key_without_seed_is_a_sequence_error() {
        let mut st = EcuState::new(SimConfig::default());
        assert_eq!(send_key(&mut st, 0), ["7e8#037f2724"]);
    }

    #[test]
    fn seeds_are_deterministic() {
        let mut a = EcuState::new(SimConfig::default());
        let mut b = EcuState::new(SimConfig::default());
        let sa: Vec<_> = (0..5).map(|_| request_seed(&mut a)).collect();
        let sb: Vec<_> = (0..5).map(|_| request_seed(&mut b)).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn write_requires_programming_session_and_unlock() {
        let mut st = EcuState::new(SimConfig::hardened());
        assert_eq!(send(&mut st, "7e0#042ef19001"), ["7e8#037f2e33"]);
        send(&mut st, "7e0#021003");
        assert_eq!(send(&mut st, "7e0#042ef19001"), ["7e8#037f2e33"]);
        let seed = request_seed(&mut st);
        send_key(&mut st, vendor_key(seed, 0x5A3C));
        assert_eq!(send(&mut st, "7e0#042ef19001"), ["7e8#036ef190"]);
        assert_eq!(st.data_ids[&0xF190], vec![0x01]);
    }

    #[test]
    fn session_two_bypasses_lock_with_v2() {
        let mut st = EcuState::new(SimConfig::default());
        send(&mut st, "7e0#021002");
        assert_eq!(send(&mut st, "7e0#042ef19001"), ["7e8#036ef190"]);
        let mut hardened = EcuState::new(SimConfig::hardened());
        send(&mut hardened, "7e0#021002");
        assert_eq!(send(&mut hardened, "7e0#042ef19001"), ["7e8#037f2e33"]);
    }

    #[test]
    fn undocumented_service_gated_by_v4() {
        let mut st = EcuState::new(SimConfig::default());
        assert_eq!(send(&mut st, "7df#0142"), ["7e8#026242"]);
        let mut hardened = EcuState::new(SimConfig::hardened());
        assert!(send(&mut hardened, "7df#0142").is_empty());
    }

    #[test]
    fn disabled_services_are_silent() {
        let mut cfg = SimConfig::default();
        cfg.services.clear();
        cfg.v4_undocumented_service = false;
        let mut st = EcuState::new(cfg);
        assert!(send(&mut st, "7df#013e").is_empty());
        assert!(send(&mut st, "7df#02010d").is_empty());
    }

    #[test]
    fn padding_after_declared_length_is_ignored() {
        let mut st = EcuState::new(SimConfig::default());
        assert_eq!(send(&mut st, "7df#02010d5555555555"), ["7e8#03410d32"]);
    }

    #[test]
    fn dump_load_round_trip() {
        let mut st = EcuState::new(SimConfig::default());
        send(&mut st, "7e0#021003");
        request_seed(&mut st);
        let blob = st.dump();
        assert_eq!(EcuState::load(&blob).unwrap(), st);
    }

    #[test]
    fn config_overrides() {
        let cfg = SimConfig::default().with_overrides("vulns=off,v4=on,speed=0x10").unwrap();
        assert!(!cfg.v1_weak_key && !cfg.v3_length_crash && cfg.v4_undocumented_service);
        assert_eq!(cfg.speed, 0x10);
        let cfg = SimConfig::default().with_overrides("services=0x01;0x3e").unwrap();
        assert_eq!(cfg.services, [0x01, 0x3e].into_iter().collect());
        assert!(SimConfig::default().with_overrides("bogus=1").is_err());
    }

    proptest::proptest! {
        #[test]
        fn transition_is_pure(frames in proptest::collection::vec(
            (proptest::sample::select(vec![0x7dfu16, 0x7e0, 0x7e1]),
             proptest::collection::vec(proptest::num::u8::ANY, 0..=8)), 0..40)) {
            let start = EcuState::new(SimConfig::default());
            let run = |mut st: EcuState| {
                let mut out = Vec::new();
                for (id, data) in &frames {
                    out.extend(st.handle(&Frame::new(*id, data.clone()).unwrap()));
                }
                (st, out)
            };
            let (a, ra) = run(start.clone());
            let (b, rb) = run(EcuState::load(&start.dump()).unwrap());
            proptest::prop_assert_eq!(a, b);
            proptest::prop_assert_eq!(ra, rb);
        }

        #[test]
        fn hardened_ecu_never_crashes(frames in proptest::collection::vec(
            (proptest::sample::select(vec![0x7dfu16, 0x7e0]),
             proptest::collection::vec(proptest::num::u8::ANY, 0..=8)), 0..200)) {
            let mut st = EcuState::new(SimConfig::hardened());
            for (id, data) in &frames {
                st.handle(&Frame::new(*id, data.clone()).unwrap());
                proptest::prop_assert!(st.alive);
            }
        }
    }
}
