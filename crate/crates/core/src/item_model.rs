//! Item definition: loading and validation, active fingerprinting of a
//! connected SUT, and reconciliation of what was found against what was
//! declared.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hex::{CanId, HexBytes, ServiceId};
use crate::sut_sim::{Frame, LinkError, SimEndpoint, SimLink, PID_SPEED, SVC_CURRENT_DATA, SVC_TESTER_PRESENT};

/// Config key holding the comma separated list of documented services.
pub const DECLARED_SERVICES_KEY: &str = "declared_services";

#[derive(Debug, Error)]
pub enum ItemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invariant violated ({rule}) by `{id}`")]
    Invariant { rule: &'static str, id: String },
    #[error("interface `{0}` is not part of the item")]
    UnknownInterface(String),
    #[error("bad `{DECLARED_SERVICES_KEY}` entry: {0}")]
    DeclaredServices(String),
}

impl From<serde_json::Error> for ItemError {
    fn from(e: serde_json::Error) -> Self {
        ItemError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceKind {
    Canlike,
    Diag,
    Debug,
}

impl InterfaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Canlike => "canlike",
            Self::Diag => "diag",
            Self::Debug => "debug",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "canlike" => Some(Self::Canlike),
            "diag" => Some(Self::Diag),
            "debug" => Some(Self::Debug),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exposure {
    External,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityProperty {
    Confidentiality,
    Integrity,
    Authentication,
    Availability,
    Authorization,
    NonRepudiation,
}

impl SecurityProperty {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Confidentiality => "confidentiality",
            Self::Integrity => "integrity",
            Self::Authentication => "authentication",
            Self::Availability => "availability",
            Self::Authorization => "authorization",
            Self::NonRepudiation => "non_repudiation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub id: String,
    pub name: String,
    pub component_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface_ref: Option<String>,
    #[serde(default)]
    pub services: Vec<ServiceId>,
}

/// Transport parameters. `bus` names the logical bus; host and ports are
/// only set for SUTs with a fixed network location.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Address {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub bus: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mgmt_port: Option<u16>,
}

impl Address {
    pub fn is_empty(&self) -> bool {
        self.bus.is_empty() && self.host.is_none()
    }

    /// Fixed endpoint, when host and both ports are given.
    pub fn endpoint(&self) -> Option<SimEndpoint> {
        let host = self.host.as_deref()?;
        SimEndpoint::parse(&format!("{host}:{},{host}:{}", self.data_port?, self.mgmt_port?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub id: String,
    pub component_ref: String,
    pub kind: InterfaceKind,
    pub exposure: Exposure,
    #[serde(default)]
    pub address: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityGoal {
    pub id: String,
    pub property: SecurityProperty,
    pub target_ref: String,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub boundary: String,
    #[serde(default)]
    pub functions: Vec<Function>,
    #[serde(default)]
    pub components: Vec<Component>,
    #[serde(default)]
    pub interfaces: Vec<Interface>,
    #[serde(default)]
    pub security_goals: Vec<SecurityGoal>,
    #[serde(default)]
    pub config_params: BTreeMap<String, String>,
}

/// Something a threat or goal can point at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementRef<'a> {
    Component(&'a Component),
    Function(&'a Function),
    Interface(&'a Interface),
}

impl Item {
    pub fn from_json(text: &str) -> Result<Self, ItemError> {
        let item: Item = serde_json::from_str(text)?;
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        let violation = |rule, id: &str| Err(ItemError::Invariant { rule, id: id.to_string() });
        if self.id.trim().is_empty() {
            return violation("item id is non-empty", &self.id);
        }
        if self.boundary.trim().is_empty() {
            return violation("boundary is non-empty", &self.id);
        }
        if self.interfaces.is_empty() {
            return violation("at least one interface exists", &self.id);
        }
        let mut seen = HashSet::new();
        let ids = self
            .components
            .iter()
            .map(|c| &c.id)
            .chain(self.interfaces.iter().map(|i| &i.id))
            .chain(self.functions.iter().map(|f| &f.id))
            .chain(self.security_goals.iter().map(|g| &g.id));
        for id in ids {
            if id.trim().is_empty() {
                return violation("ids are non-empty", id);
            }
            if !seen.insert(id.as_str()) {
                return violation("ids are unique within the item", id);
            }
        }
        for iface in &self.interfaces {
            if self.component(&iface.component_ref).is_none() {
                return violation("interface references an existing component", &iface.id);
            }
            if iface.exposure == Exposure::External && iface.address.is_empty() {
                return violation("external interfaces carry an address", &iface.id);
            }
        }
        for f in &self.functions {
            if self.component(&f.component_ref).is_none() {
                return violation("function references an existing component", &f.id);
            }
            if let Some(i) = &f.interface_ref {
                if self.interface(i).is_none() {
                    return violation("function references an existing interface", &f.id);
                }
            }
        }
        for g in &self.security_goals {
            if self.element(&g.target_ref).is_none() {
                return violation("goal target resolves", &g.id);
            }
        }
        self.declared_services()?;
        Ok(())
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn interface(&self, id: &str) -> Option<&Interface> {
        self.interfaces.iter().find(|i| i.id == id)
    }

    pub fn function(&self, id: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.id == id)
    }

    pub fn goal(&self, id: &str) -> Option<&SecurityGoal> {
        self.security_goals.iter().find(|g| g.id == id)
    }

    pub fn element(&self, id: &str) -> Option<ElementRef<'_>> {
        self.component(id)
            .map(ElementRef::Component)
            .or_else(|| self.interface(id).map(ElementRef::Interface))
            .or_else(|| self.function(id).map(ElementRef::Function))
    }

    pub fn external_interfaces(&self) -> impl Iterator<Item = &Interface> {
        self.interfaces.iter().filter(|i| i.exposure == Exposure::External)
    }

    /// Services listed under `declared_services`; empty when the key is absent.
    pub fn declared_services(&self) -> Result<BTreeSet<ServiceId>, ItemError> {
        let Some(raw) = self.config_params.get(DECLARED_SERVICES_KEY) else {
            return Ok(BTreeSet::new());
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(ItemError::DeclaredServices))
            .collect()
    }
}

pub fn load_item(path: impl AsRef<Path>) -> Result<Item, ItemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ItemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Item::from_json(&text)
}

pub fn serialize_item(item: &Item) -> String {
    let mut s = serde_json::to_string_pretty(item).expect("item serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// fingerprinting

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintReport {
    pub probed_interface: String,
    /// Session the sweep ran in. The sweep never changes sessions.
    pub probed_session: ServiceId,
    pub responding_request_ids: BTreeSet<CanId>,
    pub supported_services: BTreeSet<ServiceId>,
    pub banners: BTreeMap<ServiceId, HexBytes>,
    pub timestamp: DateTime<Utc>,
}

impl FingerprintReport {
    /// Equality ignoring the timestamp.
    pub fn same_findings(&self, other: &Self) -> bool {
        Self { timestamp: other.timestamp, ..self.clone() } == *other
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeConfig {
    pub ids: std::ops::RangeInclusive<u16>,
    pub services: std::ops::RangeInclusive<u8>,
    pub per_probe_timeout: Duration,
    pub total_budget: Duration,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            ids: 0x700..=0x7FF,
            services: 0x00..=0x7F,
            per_probe_timeout: Duration::from_millis(500),
            total_budget: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("SUT unreachable: {0}")]
    Unreachable(#[source] LinkError),
    #[error("probe timed out: {0}")]
    ProbeTimeout(#[source] LinkError),
    #[error("fingerprint budget of {0:?} exceeded")]
    BudgetExceeded(Duration),
    #[error("transport fault during fingerprinting: {0}")]
    Transport(#[source] LinkError),
    #[error("interface `{0}` has no fixed endpoint")]
    NoEndpoint(String),
}

impl From<LinkError> for FingerprintError {
    fn from(e: LinkError) -> Self {
        match e {
            LinkError::Unreachable { .. } => Self::Unreachable(e),
            LinkError::Timeout(_) => Self::ProbeTimeout(e),
            _ => Self::Transport(e),
        }
    }
}

/// Sweeps request ids, then service bytes on every responding id. Only
/// tester-present, a current-data read and bare one-byte service requests are
/// sent, none of which changes ECU state.
pub fn fingerprint_sut(
    interface: &Interface,
    link: &mut SimLink,
    cfg: &ProbeConfig,
) -> Result<FingerprintReport, FingerprintError> {
    let start = Instant::now();
    let previous = link.timeout();
    link.set_timeout(cfg.per_probe_timeout)?;
    let result = sweep(interface, link, cfg, start);
    link.set_timeout(previous)?;
    result
}

fn sweep(
    interface: &Interface,
    link: &mut SimLink,
    cfg: &ProbeConfig,
    start: Instant,
) -> Result<FingerprintReport, FingerprintError> {
    let check_budget = || {
        if start.elapsed() > cfg.total_budget {
            Err(FingerprintError::BudgetExceeded(cfg.total_budget))
        } else {
            Ok(())
        }
    };
    let mut responding = BTreeSet::new();
    for id in cfg.ids.clone() {
        check_budget()?;
        let probes = [vec![0x01, SVC_TESTER_PRESENT], vec![0x02, SVC_CURRENT_DATA, PID_SPEED]];
        for data in probes {
            let frame = Frame::new(id, data).expect("probe fits");
            if !link.exchange(&frame)?.0.is_empty() {
                responding.insert(CanId(id));
                break;
            }
        }
    }
    let mut supported = BTreeSet::new();
    let mut banners = BTreeMap::new();
    for svc in cfg.services.clone() {
        for id in &responding {
            check_budget()?;
            let frame = Frame::new(id.0, vec![0x01, svc]).expect("probe fits");
            let (rx, _) = link.exchange(&frame)?;
            if let Some(first) = rx.first() {
                supported.insert(ServiceId(svc));
                banners
                    .entry(ServiceId(svc))
                    .or_insert_with(|| HexBytes(first.data().to_vec()));
            }
        }
    }
    Ok(FingerprintReport {
        probed_interface: interface.id.clone(),
        probed_session: ServiceId(0x01),
        responding_request_ids: responding,
        supported_services: supported,
        banners,
        timestamp: Utc::now(),
    })
}

/// Connects to `endpoint` and fingerprints it.
pub fn fingerprint_endpoint(
    interface: &Interface,
    endpoint: SimEndpoint,
    cfg: &ProbeConfig,
) -> Result<FingerprintReport, FingerprintError> {
    let mut link = SimLink::connect_with_timeout(endpoint, cfg.per_probe_timeout)?;
    fingerprint_sut(interface, &mut link, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    UndeclaredService,
    DeclaredButSilent,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Discrepancy {
    pub kind: DiscrepancyKind,
    pub service: ServiceId,
    pub detail: String,
}

/// Symmetric difference between declared and observed services.
pub fn reconcile(item: &Item, fp: &FingerprintReport) -> Result<Vec<Discrepancy>, ItemError> {
    if item.interface(&fp.probed_interface).is_none() {
        return Err(ItemError::UnknownInterface(fp.probed_interface.clone()));
    }
    let declared = item.declared_services()?;
    let observed = &fp.supported_services;
    let mut out: Vec<_> = observed
        .difference(&declared)
        .map(|s| Discrepancy {
            kind: DiscrepancyKind::UndeclaredService,
            service: *s,
            detail: format!("service {s} answered on {} but is not declared", fp.probed_interface),
        })
        .chain(declared.difference(observed).map(|s| Discrepancy {
            kind: DiscrepancyKind::DeclaredButSilent,
            service: *s,
            detail: format!("service {s} is declared but stayed silent on {}", fp.probed_interface),
        }))
        .collect();
    out.sort_by_key(|d| (d.service, d.kind));
    Ok(out)
}
