//! Test execution: environment preparation with a pre-attack snapshot, MVA
//! dispatch to tool handlers, expectation and oracle evaluation, restoration
//! and the on-disk result store.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Method;
use crate::fuzz_engine::{self, CampaignResult, FuzzConfig, FuzzError, MutationOp};
use crate::item_model::{fingerprint_sut, FingerprintError, FingerprintReport, InterfaceKind, Item, ProbeConfig};
use crate::scenario_dsl::{Condition, EnvSpec, Value};
use crate::script_registry::{TestScript, ValidationTarget};
use crate::sut_sim::{
    is_positive, negative_parts, parse_hex, vendor_key, weak_key, Frame, LinkError, SimConfig, SimEndpoint, SimLink,
    SimServer, FUNCTIONAL_ID, SVC_SECURITY_ACCESS, SVC_SESSION, SVC_WRITE_DID, MAX_DATA,
};
use crate::tcg::{Activity, SutDatabase, TestCase};
use crate::vuln_scanner::{scan, ScanReport, VulnDbEntry};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("precondition `{0}` does not hold")]
    Precondition(String),
    #[error("precondition `{0}` cannot be evaluated")]
    UnknownPrecondition(String),
    #[error("SUT does not support snapshots: {0}")]
    Snapshot(String),
    #[error("bad SUT endpoint `{0}`")]
    Endpoint(String),
    #[error("cannot start simulator: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("no interface module for `{0}`")]
    MissingTool(String),
    #[error("malformed command `{command}`: {reason}")]
    BadCommand { command: String, reason: String },
    #[error("fuzz campaign aborted: {0}")]
    Fuzz(#[from] FuzzError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error("unknown matcher `{0}`")]
    UnknownMatcher(String),
    #[error("unknown oracle condition `{0}`")]
    UnknownCondition(String),
    #[error("result store: {path}: {message}")]
    Store { path: PathBuf, message: String },
}

// ---------------------------------------------------------------------------
// environment

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfiguration {
    pub sut_endpoint: String,
    pub categories: Vec<Method>,
    pub preconditions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceDescription {
    pub logical_name: String,
    pub kind: InterfaceKind,
    pub stimulation: BTreeMap<String, Value>,
    pub verification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvTemplate {
    pub id: String,
    pub configuration: EnvConfiguration,
    pub interface_descriptions: Vec<InterfaceDescription>,
}

impl EnvTemplate {
    pub fn from_env(id: &str, env: &EnvSpec, categories: Vec<Method>, endpoint: SimEndpoint) -> Self {
        Self {
            id: id.to_string(),
            configuration: EnvConfiguration {
                sut_endpoint: endpoint.to_string(),
                categories,
                preconditions: env.preconditions.clone(),
            },
            interface_descriptions: env
                .interfaces
                .iter()
                .map(|(name, b)| InterfaceDescription {
                    logical_name: name.clone(),
                    kind: b.kind,
                    stimulation: b.params.clone(),
                    verification: match b.kind {
                        InterfaceKind::Canlike => "frame_response",
                        InterfaceKind::Diag => "diagnostic_response",
                        InterfaceKind::Debug => "none",
                    }
                    .to_string(),
                })
                .collect(),
        }
    }
}

pub struct Session {
    pub template_ref: String,
    pub sut_id: String,
    /// Logical interface name to the endpoint serving it.
    pub connections: BTreeMap<String, String>,
    pub pre_attack_snapshot: String,
    pub started_at: DateTime<Utc>,
    link: SimLink,
}

impl Session {
    pub fn link(&mut self) -> &mut SimLink {
        &mut self.link
    }
}

fn check_precondition(name: &str, link: &mut SimLink) -> Result<(), ExecError> {
    match name {
        "sut_alive" | "sut.alive" => {
            if link.probe_alive()? {
                Ok(())
            } else {
                Err(ExecError::Precondition(name.to_string()))
            }
        }
        _ => Err(ExecError::UnknownPrecondition(name.to_string())),
    }
}

/// Connects, snapshots the SUT before any traffic, then checks preconditions.
pub fn prepare_env(template: &EnvTemplate, sutdb: &SutDatabase) -> Result<Session, ExecError> {
    let ep_text = &template.configuration.sut_endpoint;
    let endpoint = SimEndpoint::parse(ep_text).ok_or_else(|| ExecError::Endpoint(ep_text.clone()))?;
    let mut link = SimLink::connect(endpoint)?;
    let snapshot = link.dump().map_err(|e| match e {
        LinkError::Management { reply, .. } => ExecError::Snapshot(reply),
        other => ExecError::Link(other),
    })?;
    for p in &template.configuration.preconditions {
        check_precondition(p, &mut link)?;
    }
    Ok(Session {
        template_ref: template.id.clone(),
        sut_id: sutdb.sut_id.clone(),
        connections: template
            .interface_descriptions
            .iter()
            .map(|d| (d.logical_name.clone(), ep_text.clone()))
            .collect(),
        pre_attack_snapshot: snapshot,
        started_at: Utc::now(),
        link,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanupReport {
    pub restored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Loads the pre-attack snapshot and byte-compares a fresh dump against it.
pub fn restore(session: &mut Session) -> CleanupReport {
    let attempt = (|| -> Result<bool, LinkError> {
        session.link.load(&session.pre_attack_snapshot)?;
        Ok(session.link.dump()? == session.pre_attack_snapshot)
    })();
    match attempt {
        Ok(true) => CleanupReport {
            restored: true,
            detail: None,
        },
        Ok(false) => CleanupReport {
            restored: false,
            detail: Some("post-restore dump differs from the pre-attack snapshot".into()),
        },
        Err(e) => CleanupReport {
            restored: false,
            detail: Some(format!("restore failed: {e}")),
        },
    }
}

// ---------------------------------------------------------------------------
// results

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Error => "error",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    /// Oracle outcome: the fail condition wins.
    pub fn from_oracle(pass_holds: bool, fail_holds: bool) -> Self {
        if fail_holds {
            Verdict::Fail
        } else if pass_holds {
            Verdict::Pass
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLogEntry {
    pub step: usize,
    pub script_ref: String,
    pub command: String,
    pub tx: Vec<Frame>,
    pub rx: Vec<Frame>,
    pub latency_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationOutcome {
    pub step: usize,
    pub matcher: String,
    pub met: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEvaluation {
    pub pass_condition: String,
    pub pass_holds: bool,
    pub fail_condition: String,
    pub fail_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub sut_id: String,
    pub tool_versions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prng: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEvidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuzz: Option<CampaignResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fingerprints: Vec<FingerprintReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scans: Vec<ScanReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub followups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub case_ref: String,
    pub scenario_ref: String,
    pub verdict: Verdict,
    pub started_at: DateTime<Utc>,
    pub duration_ms: u64,
    pub step_log: Vec<StepLogEntry>,
    pub expectations: Vec<ExpectationOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_evaluation: Option<OracleEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleanup: Option<CleanupReport>,
    pub evidence: CaseEvidence,
    pub metadata: ResultMetadata,
}

impl TestResult {
    /// Raw tx frames in order, for replay comparison.
    pub fn tx_log(&self) -> Vec<&Frame> {
        self.step_log.iter().flat_map(|s| &s.tx).collect()
    }
}

/// Directory of `<case_id>.result.json` files. Appends are per-file atomic
/// and never overwrite.
#[derive(Debug, Clone)]
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, ExecError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| ExecError::Store {
            path: root.clone(),
            message: e.to_string(),
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, case_id: &str) -> PathBuf {
        self.root.join(format!("{case_id}.result.json"))
    }

    pub fn append(&self, result: &TestResult) -> Result<PathBuf, ExecError> {
        let path = self.path_for(&result.case_ref);
        let err = |m: String| ExecError::Store {
            path: path.clone(),
            message: m,
        };
        let mut text = serde_json::to_string_pretty(result).map_err(|e| err(e.to_string()))?;
        text.push('\n');
        let tmp = self.root.join(format!(".{}.tmp", result.case_ref));
        fs::write(&tmp, text).map_err(|e| err(e.to_string()))?;
        // hard_link fails if the target exists, which keeps the store append-only
        let linked = fs::hard_link(&tmp, &path);
        let _ = fs::remove_file(&tmp);
        linked.map_err(|e| err(e.to_string()))?;
        Ok(path)
    }

    pub fn get(&self, case_id: &str) -> Result<Option<TestResult>, ExecError> {
        let path = self.path_for(case_id);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| ExecError::Store {
                path,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ExecError::Store {
                path,
                message: e.to_string(),
            }),
        }
    }

    /// Every stored result, ordered by case id.
    pub fn all(&self) -> Result<Vec<TestResult>, ExecError> {
        let rd = fs::read_dir(&self.root).map_err(|e| ExecError::Store {
            path: self.root.clone(),
            message: e.to_string(),
        })?;
        let mut ids: Vec<String> = rd
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter_map(|n| n.strip_suffix(".result.json").map(str::to_string))
            .collect();
        ids.sort();
        ids.iter().filter_map(|id| self.get(id).transpose()).collect()
    }
}

// ---------------------------------------------------------------------------
// execution

/// Data the tool handlers draw on.
#[derive(Debug, Clone)]
pub struct ExecContext {
    pub item: Item,
    pub sutdb: SutDatabase,
    pub vulndb: Vec<VulnDbEntry>,
    pub probe: ProbeConfig,
    pub mutation_ops: BTreeSet<MutationOp>,
    pub probe_every: u64,
}

impl ExecContext {
    pub fn new(item: Item, sutdb: SutDatabase, vulndb: Vec<VulnDbEntry>) -> Self {
        Self {
            item,
            sutdb,
            vulndb,
            probe: ProbeConfig::default(),
            mutation_ops: MutationOp::ALL.into_iter().collect(),
            probe_every: 16,
        }
    }

    pub fn bundled() -> Self {
        Self::new(
            Item::from_json(crate::bundled::ITEM).expect("bundled item parses"),
            SutDatabase::bundled(),
            crate::vuln_scanner::parse_vulndb(crate::bundled::VULNDB).expect("bundled vulndb parses"),
        )
    }
}

/// What the case has observed so far.
#[derive(Debug, Default)]
struct Observation {
    last_rx: Vec<Frame>,
    last_latency: Duration,
    expectations: Vec<ExpectationOutcome>,
    crash_seen: bool,
    fuzz: Option<CampaignResult>,
    scan_targets: Vec<String>,
    scan_tool: Option<String>,
    fingerprints: Vec<FingerprintReport>,
    scans: Option<Vec<ScanReport>>,
    followups: Vec<String>,
    seed: Option<u64>,
}

fn bad(command: &str, reason: &str) -> ExecError {
    ExecError::BadCommand {
        command: command.to_string(),
        reason: reason.to_string(),
    }
}

fn hex_arg(command: &str, tok: Option<&&str>, what: &str) -> Result<Vec<u8>, ExecError> {
    tok.and_then(|t| parse_hex(t.trim_start_matches("0x")))
        .filter(|b| !b.is_empty())
        .ok_or_else(|| bad(command, &format!("{what} must be hex bytes")))
}

fn id_arg(command: &str, tok: Option<&&str>) -> Result<u16, ExecError> {
    tok.and_then(|t| u16::from_str_radix(t.trim_start_matches("0x"), 16).ok())
        .ok_or_else(|| bad(command, "target must be a hex CAN id"))
}

fn num_arg<T: std::str::FromStr>(command: &str, tok: Option<&&str>, what: &str) -> Result<T, ExecError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| bad(command, &format!("{what} must be a number")))
}

fn request(command: &str, id: u16, payload: &[u8]) -> Result<Frame, ExecError> {
    if payload.len() >= MAX_DATA {
        return Err(bad(command, "payload does not fit a single frame"));
    }
    let mut data = vec![payload.len() as u8];
    data.extend_from_slice(payload);
    Frame::new(id, data).map_err(|e| bad(command, &e.to_string()))
}

struct Step<'a> {
    session: &'a mut Session,
    ctx: &'a ExecContext,
    obs: &'a mut Observation,
    tx: Vec<Frame>,
    note: Option<String>,
}

impl Step<'_> {
    fn exchange(&mut self, frame: Frame) -> Result<Vec<Frame>, ExecError> {
        let (rx, latency) = self.session.link.exchange(&frame)?;
        self.tx.push(frame);
        self.obs.last_rx = rx.clone();
        self.obs.last_latency = latency;
        Ok(rx)
    }

    fn run(&mut self, command: &str) -> Result<(), ExecError> {
        let toks: Vec<&str> = command.split_whitespace().collect();
        let tool = *toks.first().ok_or_else(|| bad(command, "empty command"))?;
        match tool {
            "cansend" => {
                let frame = toks.get(2).ok_or_else(|| bad(command, "missing frame"))?;
                let frame = Frame::parse_wire(frame).map_err(|e| bad(command, &e.to_string()))?;
                self.exchange(frame)?;
            }
            "uds-session" => {
                let target = id_arg(command, toks.get(2))?;
                let mut payload = vec![SVC_SESSION];
                payload.extend(hex_arg(command, toks.get(3), "session")?);
                self.exchange(request(command, target, &payload)?)?;
            }
            "uds-unlock" => self.unlock(command, &toks)?,
            "uds-write" => {
                let target = id_arg(command, toks.get(2))?;
                let mut payload = vec![SVC_WRITE_DID];
                payload.extend(hex_arg(command, toks.get(3), "did")?);
                payload.extend(hex_arg(command, toks.get(4), "data")?);
                self.exchange(request(command, target, &payload)?)?;
            }
            "probe" => {
                let rx = self.exchange(Frame::new(FUNCTIONAL_ID, vec![0x01, 0x3E]).expect("valid probe"))?;
                let alive = rx.iter().any(|r| r.data() == [0x01, 0x7E]);
                self.obs.crash_seen |= !alive;
                self.note = Some(if alive { "alive" } else { "no response to liveness probe" }.into());
            }
            "fuzz" => self.fuzz(command, &toks)?,
            "scan-target" => {
                let iface = toks.get(1).ok_or_else(|| bad(command, "missing interface"))?;
                if self.ctx.item.interface(iface).is_none() {
                    return Err(bad(command, "unknown interface"));
                }
                self.obs.scan_targets.push(iface.to_string());
            }
            "scan-tool" => match toks.get(1) {
                Some(&"internal") => self.obs.scan_tool = Some("internal".into()),
                Some(other) => return Err(ExecError::MissingTool(format!("scanner {other}"))),
                None => return Err(bad(command, "missing tool")),
            },
            "scan-run" => {
                if self.obs.scan_tool.is_none() {
                    return Err(bad(command, "no scanner selected"));
                }
                if self.obs.scan_targets.is_empty() {
                    return Err(bad(command, "no scan target selected"));
                }
                for t in self.obs.scan_targets.clone() {
                    let iface = self.ctx.item.interface(&t).expect("checked on selection");
                    let fp = fingerprint_sut(iface, &mut self.session.link, &self.ctx.probe)?;
                    self.obs.fingerprints.push(fp);
                }
                self.note = Some(format!("fingerprinted {}", self.obs.scan_targets.join(", ")));
            }
            "scan-analyze" => {
                let min: u8 = num_arg(command, toks.get(1), "min_severity")?;
                if self.obs.fingerprints.is_empty() {
                    return Err(bad(command, "no scan has run"));
                }
                let reports: Vec<ScanReport> = self
                    .obs
                    .fingerprints
                    .iter()
                    .map(|fp| scan(fp, &self.ctx.vulndb).filter_severity(min, &self.ctx.vulndb))
                    .collect();
                let n: usize = reports.iter().map(|r| r.findings.len()).sum();
                self.note = Some(format!("{n} matching entries"));
                self.obs.scans = Some(reports);
            }
            "scan-followups" => {
                let reports = self.obs.scans.as_ref().ok_or_else(|| bad(command, "no scan analyzed"))?;
                let mut all: Vec<String> = reports.iter().flat_map(|r| r.followups.clone()).collect();
                all.sort();
                all.dedup();
                self.note = Some(format!("{} follow-up tasks", all.len()));
                self.obs.followups = all;
            }
            other => return Err(ExecError::MissingTool(other.to_string())),
        }
        Ok(())
    }

    fn unlock(&mut self, command: &str, toks: &[&str]) -> Result<(), ExecError> {
        let target = id_arg(command, toks.get(2))?;
        let algorithm = *toks.get(3).ok_or_else(|| bad(command, "missing algorithm"))?;
        let rx = self.exchange(request(command, target, &[SVC_SECURITY_ACCESS, 0x01])?)?;
        let Some(seed) = rx.iter().find_map(|r| match r.data() {
            [0x04, 0x67, 0x01, a, b] => Some(u16::from_be_bytes([*a, *b])),
            _ => None,
        }) else {
            self.note = Some("seed request refused".into());
            return Ok(());
        };
        let key = match algorithm {
            "vendor" => {
                let k = hex_arg(command, toks.get(4), "key constant")?;
                let k: [u8; 2] = k.try_into().map_err(|_| bad(command, "key constant must be two bytes"))?;
                vendor_key(seed, u16::from_be_bytes(k))
            }
            "xor-a5a5" => weak_key(seed),
            "zero" => 0,
            other => return Err(ExecError::MissingTool(format!("key algorithm {other}"))),
        };
        let [k1, k2] = key.to_be_bytes();
        self.exchange(request(command, target, &[SVC_SECURITY_ACCESS, 0x02, k1, k2])?)?;
        Ok(())
    }

    fn fuzz(&mut self, command: &str, toks: &[&str]) -> Result<(), ExecError> {
        let budget: u64 = num_arg(command, toks.get(2), "budget")?;
        let seed: u64 = num_arg(command, toks.get(3), "seed")?;
        let name = toks.get(4).ok_or_else(|| bad(command, "missing corpus"))?;
        let lines = self
            .ctx
            .sutdb
            .dictionaries
            .get(*name)
            .ok_or_else(|| bad(command, "unknown corpus dictionary"))?;
        let corpus = fuzz_engine::corpus_from_wire(lines).map_err(|e| bad(command, &e.to_string()))?;
        let mut cfg = FuzzConfig::new(seed, budget, corpus);
        cfg.mutation_ops = self.ctx.mutation_ops.clone();
        cfg.probe_every = self.ctx.probe_every;
        let res = fuzz_engine::run_campaign(&cfg, &mut self.session.link).map_err(|e| e.error)?;
        self.obs.seed = Some(seed);
        self.obs.crash_seen |= !res.findings.is_empty();
        self.note = Some(format!(
            "{} frames, {} probes, {} findings",
            res.stats.frames_sent,
            res.stats.probes,
            res.findings.len()
        ));
        self.obs.last_rx.clear();
        self.obs.fuzz = Some(res);
        Ok(())
    }
}

fn arg_byte(args: &BTreeMap<String, Value>, key: &str) -> Option<u8> {
    args.get(key).and_then(Value::as_int).and_then(|v| u8::try_from(v).ok())
}

fn evaluate_matcher(
    matcher: &str,
    args: &BTreeMap<String, Value>,
    within: Duration,
    obs: &Observation,
    link: &mut SimLink,
) -> Result<(bool, String), ExecError> {
    let rx = &obs.last_rx;
    let on_time = obs.last_latency <= within;
    let describe = || rx.iter().map(Frame::to_wire).collect::<Vec<_>>().join(" ");
    let timed = |hit: bool, what: &str| {
        if hit && !on_time {
            (false, format!("{what} after {:?}, deadline {within:?}", obs.last_latency))
        } else {
            (hit, format!("rx [{}]", describe()))
        }
    };
    Ok(match matcher {
        "POSITIVE_RESPONSE" => {
            let svc = arg_byte(args, "service");
            let hit = rx
                .iter()
                .any(|r| is_positive(r.data()) && svc.is_none_or(|s| r.data()[1] == s.wrapping_add(0x40)));
            timed(hit, "positive response")
        }
        "NEGATIVE_RESPONSE" => {
            let svc = arg_byte(args, "service");
            let hit = rx
                .iter()
                .any(|r| negative_parts(r.data()).is_some_and(|(s, _)| svc.is_none_or(|x| x == s)));
            timed(hit, "negative response")
        }
        "RESPONSE_SID" => {
            let sid = arg_byte(args, "sid");
            let hit = rx.iter().any(|r| r.data().get(1).copied() == sid && sid.is_some());
            timed(hit, "response")
        }
        "RESPONSE_DATA" => {
            let want = args.get("data").and_then(Value::as_bytes).unwrap_or_default();
            let hit = rx.iter().any(|r| r.data().len() > 1 && r.data()[1..].starts_with(want));
            timed(hit, "response")
        }
        "NO_RESPONSE" => (rx.is_empty(), format!("rx [{}]", describe())),
        "REFUSED" => (!rx.iter().any(|r| is_positive(r.data())), format!("rx [{}]", describe())),
        "ALIVE" => {
            let alive = link.probe_alive()?;
            (alive, if alive { "probe answered" } else { "probe unanswered" }.into())
        }
        other => return Err(ExecError::UnknownMatcher(other.to_string())),
    })
}

fn evaluate_condition(cond: &Condition, obs: &mut Observation, link: &mut SimLink) -> Result<bool, ExecError> {
    let fuzz_findings = obs.fuzz.as_ref().map(|f| !f.findings.is_empty());
    let scan_findings = obs.scans.as_ref().map(|s| s.iter().any(|r| !r.findings.is_empty()));
    Ok(match cond.to_string().as_str() {
        "expect.all" => obs.expectations.iter().all(|e| e.met),
        "expect.any_unmet" => obs.expectations.iter().any(|e| !e.met),
        "sut.alive" => link.probe_alive()?,
        "sut.crashed" => {
            if !obs.crash_seen && !link.probe_alive()? {
                obs.crash_seen = true;
            }
            obs.crash_seen
        }
        "response.positive" => obs.last_rx.iter().any(|r| is_positive(r.data())),
        "response.negative" => obs.last_rx.iter().any(|r| negative_parts(r.data()).is_some()),
        "response.none" => obs.last_rx.is_empty(),
        "fuzz.finding" => fuzz_findings == Some(true),
        "fuzz.clean" => fuzz_findings == Some(false),
        "scan.finding" => scan_findings == Some(true),
        "scan.clean" => scan_findings == Some(false),
        other => return Err(ExecError::UnknownCondition(other.to_string())),
    })
}

fn metadata(session: &Session, case: &TestCase, obs: &Observation) -> ResultMetadata {
    let tool_versions = case
        .activities
        .iter()
        .filter_map(|a| match a {
            Activity::Mva { command, .. } => command.split_whitespace().next(),
            Activity::Expect { .. } => None,
        })
        .map(|t| (t.to_string(), TOOL_VERSION.to_string()))
        .collect();
    ResultMetadata {
        sut_id: session.sut_id.clone(),
        tool_versions,
        seed: obs.seed,
        prng: obs.seed.map(|_| fuzz_engine::PRNG.to_string()),
    }
}

/// Runs the case's MVAs in order and evaluates expectations and the oracle.
/// A SUT that is already dead fails the liveness precondition: the verdict is
/// error and nothing is sent.
pub fn execute_case(case: &TestCase, session: &mut Session, ctx: &ExecContext) -> TestResult {
    let started_at = Utc::now();
    let t0 = Instant::now();
    let mut obs = Observation::default();
    let mut log = Vec::new();
    let outcome = run_case(case, session, ctx, &mut obs, &mut log);
    let (verdict, oracle_evaluation, error) = match outcome {
        Ok(eval) => (Verdict::from_oracle(eval.pass_holds, eval.fail_holds), Some(eval), None),
        Err(e) => (Verdict::Error, None, Some(e.to_string())),
    };
    TestResult {
        case_ref: case.id.clone(),
        scenario_ref: case.scenario_ref.clone(),
        verdict,
        started_at,
        duration_ms: t0.elapsed().as_millis() as u64,
        step_log: log,
        expectations: std::mem::take(&mut obs.expectations),
        oracle_evaluation,
        error,
        cleanup: None,
        metadata: metadata(session, case, &obs),
        evidence: CaseEvidence {
            fuzz: obs.fuzz.take(),
            fingerprints: std::mem::take(&mut obs.fingerprints),
            scans: obs.scans.take().unwrap_or_default(),
            followups: std::mem::take(&mut obs.followups),
        },
    }
}

fn run_case(
    case: &TestCase,
    session: &mut Session,
    ctx: &ExecContext,
    obs: &mut Observation,
    log: &mut Vec<StepLogEntry>,
) -> Result<OracleEvaluation, ExecError> {
    if !session.link.probe_alive()? {
        return Err(ExecError::Precondition("sut_alive".into()));
    }
    for (i, activity) in case.activities.iter().enumerate() {
        match activity {
            Activity::Mva { script_ref, command, .. } => {
                let t = Instant::now();
                let mut step = Step {
                    session: &mut *session,
                    ctx,
                    obs: &mut *obs,
                    tx: Vec::new(),
                    note: None,
                };
                let r = step.run(command);
                let (tx, note) = (step.tx, step.note);
                log.push(StepLogEntry {
                    step: i,
                    script_ref: script_ref.clone(),
                    command: command.clone(),
                    tx,
                    rx: obs.last_rx.clone(),
                    latency_us: t.elapsed().as_micros() as u64,
                    note: match &r {
                        Err(e) => Some(e.to_string()),
                        Ok(()) => note,
                    },
                });
                r?;
            }
            Activity::Expect { matcher, args, within_ms } => {
                let (met, detail) =
                    evaluate_matcher(matcher, args, Duration::from_millis(*within_ms), obs, &mut session.link)?;
                obs.expectations.push(ExpectationOutcome {
                    step: i,
                    matcher: matcher.clone(),
                    met,
                    detail,
                });
            }
        }
    }
    let pass_holds = evaluate_condition(&case.oracle.pass, obs, &mut session.link)?;
    let fail_holds = evaluate_condition(&case.oracle.fail, obs, &mut session.link)?;
    Ok(OracleEvaluation {
        pass_condition: case.oracle.pass.to_string(),
        pass_holds,
        fail_condition: case.oracle.fail.to_string(),
        fail_holds,
    })
}

/// Where cases run.
#[derive(Debug, Clone)]
pub enum ExecTarget {
    /// One fresh simulator per scenario, run in parallel.
    Spawn(SimConfig),
    /// A running SUT shared by all scenarios, run one after another.
    Endpoint(SimEndpoint),
}

fn error_result(case: &TestCase, sut_id: &str, e: &ExecError) -> TestResult {
    TestResult {
        case_ref: case.id.clone(),
        scenario_ref: case.scenario_ref.clone(),
        verdict: Verdict::Error,
        started_at: Utc::now(),
        duration_ms: 0,
        step_log: vec![],
        expectations: vec![],
        oracle_evaluation: None,
        error: Some(e.to_string()),
        cleanup: None,
        evidence: CaseEvidence::default(),
        metadata: ResultMetadata {
            sut_id: sut_id.to_string(),
            tool_versions: BTreeMap::new(),
            seed: None,
            prng: None,
        },
    }
}

/// One session per scenario; cases of a scenario run in order with a restore
/// after each. Results come back in input order and, with a store, are
/// appended as they complete.
pub fn run_session(cases: &[&TestCase], endpoint: SimEndpoint, ctx: &ExecContext, store: Option<&ResultStore>) -> Vec<TestResult> {
    let first = cases[0];
    let template = EnvTemplate::from_env(
        &format!("ENV-{}", first.scenario_ref),
        &first.environmental_needs,
        vec![first.method],
        endpoint,
    );
    let mut session = match prepare_env(&template, &ctx.sutdb) {
        Ok(s) => s,
        Err(e) => return cases.iter().map(|c| error_result(c, &ctx.sutdb.sut_id, &e)).collect(),
    };
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let mut result = execute_case(case, &mut session, ctx);
        result.cleanup = Some(restore(&mut session));
        if let Some(store) = store {
            if let Err(e) = store.append(&result) {
                result.verdict = Verdict::Error;
                result.error = Some(e.to_string());
            }
        }
        out.push(result);
    }
    out
}

pub fn execute_all(
    cases: &[TestCase],
    target: &ExecTarget,
    ctx: &ExecContext,
    store: Option<&ResultStore>,
) -> Vec<TestResult> {
    let mut groups: BTreeMap<&str, Vec<&TestCase>> = BTreeMap::new();
    for c in cases {
        groups.entry(c.scenario_ref.as_str()).or_default().push(c);
    }
    let mut by_id: BTreeMap<String, TestResult> = match target {
        ExecTarget::Endpoint(ep) => groups
            .values()
            .flat_map(|g| run_session(g, *ep, ctx, store))
            .map(|r| (r.case_ref.clone(), r))
            .collect(),
        ExecTarget::Spawn(cfg) => std::thread::scope(|s| {
            let handles: Vec<_> = groups
                .values()
                .map(|g| {
                    s.spawn(move || match SimServer::spawn(cfg.clone()) {
                        Ok(server) => {
                            let out = run_session(g, server.endpoint(), ctx, store);
                            server.shutdown();
                            out
                        }
                        Err(e) => {
                            let e = ExecError::Spawn(e);
                            g.iter().map(|c| error_result(c, &ctx.sutdb.sut_id, &e)).collect()
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("session thread panicked"))
                .map(|r| (r.case_ref.clone(), r))
                .collect()
        }),
    };
    cases.iter().filter_map(|c| by_id.remove(&c.id)).collect()
}

/// Runs one script as a single-step case and reports whether any of its
/// oracle hooks holds afterwards.
pub fn attack_succeeds(
    script: &TestScript,
    args: &BTreeMap<String, Value>,
    target: &ValidationTarget,
    ctx: &ExecContext,
) -> Result<bool, ExecError> {
    let command = script.render(args, &ctx.sutdb.slots).map_err(|e| bad(&script.command_template, &e.to_string()))?;
    let hooks: Vec<Condition> = script
        .oracle_hooks
        .iter()
        .map(|h| Condition::parse(h).ok_or_else(|| ExecError::UnknownCondition(h.clone())))
        .collect::<Result<_, _>>()?;
    let run = |endpoint: SimEndpoint| -> Result<bool, ExecError> {
        let env = EnvSpec {
            interfaces: BTreeMap::new(),
            preconditions: vec!["sut_alive".into()],
        };
        let template = EnvTemplate::from_env(&format!("ENV-VALIDATE-{}", script.id), &env, vec![], endpoint);
        let mut session = prepare_env(&template, &ctx.sutdb)?;
        let mut obs = Observation::default();
        let mut step = Step {
            session: &mut session,
            ctx,
            obs: &mut obs,
            tx: Vec::new(),
            note: None,
        };
        let r = step.run(&command).and_then(|_| {
            let mut any = false;
            for h in &hooks {
                any |= evaluate_condition(h, &mut obs, &mut session.link)?;
            }
            Ok(any)
        });
        let cleanup = restore(&mut session);
        let any = r?;
        if !cleanup.restored {
            return Err(ExecError::Snapshot(cleanup.detail.unwrap_or_default()));
        }
        Ok(any)
    };
    match target {
        ValidationTarget::Endpoint(ep) => run(*ep),
        ValidationTarget::Sim(cfg) => {
            let server = SimServer::spawn(cfg.clone())?;
            let out = run(server.endpoint());
            server.shutdown();
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_dsl::parse_scenario;
    use crate::script_registry::Registry;
    use crate::tcg::generate_cases;

    fn cases(src: &str) -> Vec<TestCase> {
        let s = parse_scenario(src).unwrap();
        generate_cases(&s, &SutDatabase::bundled(), &Registry::bundled(), 2).unwrap()
    }

    fn session_for(server: &SimServer, case: &TestCase) -> Session {
        let t = EnvTemplate::from_env("ENV", &case.environmental_needs, vec![case.method], server.endpoint());
        prepare_env(&t, &SutDatabase::bundled()).unwrap()
    }

    const SPEED: &str = r#"scenario "SC-SPEED" {
  meta {
    method: "functional"
    requirement_ref: "REQ-T"
  }
  env {
    interface I_OBD canlike bus="can0"
    precondition sut_alive
  }
  steps {
    pattern SEND_CAN_MSG(data=0x02010d, id=0x07df)
    expect RESPONSE_SID(sid=0x41) within 500ms
  }
  oracle {
    pass: expect.all
    fail: expect.any_unmet
  }
}
"#;

    #[test]
    fn snapshot_equals_dump_and_speed_read_passes() {
        let server = SimServer::spawn(SimConfig::default()).unwrap();
        let cs = cases(SPEED);
        let mut session = session_for(&server, &cs[0]);
        assert_eq!(session.pre_attack_snapshot, server.state().dump());
        let ctx = ExecContext::bundled();
        let r = execute_case(&cs[0], &mut session, &ctx);
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert_eq!(r.step_log[0].tx, vec![Frame::parse_wire("7df#02010d").unwrap()]);
        assert_eq!(r.step_log[0].rx, vec![Frame::parse_wire("7e8#03410d32").unwrap()]);
        let c = restore(&mut session);
        assert!(c.restored);
        assert_eq!(server.state().dump(), session.pre_attack_snapshot);
    }

    fn write_case(session_arg: &str) -> String {
        format!(
            r#"scenario "SC-NEG" {{
  meta {{
    method: "functional"
    requirement_ref: "REQ-T"
  }}
  env {{
    precondition sut_alive
  }}
  steps {{
    pattern SESSION_CONTROL(session={session_arg})
    pattern WRITE_DATA(data=0x01, did=0xf190)
    expect NEGATIVE_RESPONSE(service=0x2e)
  }}
  oracle {{
    pass: expect.all
    fail: expect.any_unmet
  }}
}}
"#
        )
    }

    #[test]
    fn session_bypass_fails_negative_case() {
        let ctx = ExecContext::bundled();
        let server = SimServer::spawn(SimConfig::default()).unwrap();
        let cs = cases(&write_case("0x02"));
        let mut session = session_for(&server, &cs[0]);
        let r = execute_case(&cs[0], &mut session, &ctx);
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.step_log[1].rx[0].data()[1], 0x6E);
        assert!(restore(&mut session).restored);

        let hardened = SimServer::spawn(SimConfig::hardened()).unwrap();
        let mut session = session_for(&hardened, &cs[0]);
        assert_eq!(execute_case(&cs[0], &mut session, &ctx).verdict, Verdict::Pass);
    }

    #[test]
    fn dead_sut_gives_error_without_traffic() {
        let ctx = ExecContext::bundled();
        let server = SimServer::spawn(SimConfig::default()).unwrap();
        let cs = cases(SPEED);
        let mut session = session_for(&server, &cs[0]);
        session.link().exchange(&Frame::parse_wire("7df#05").unwrap()).unwrap();
        let r = execute_case(&cs[0], &mut session, &ctx);
        assert_eq!(r.verdict, Verdict::Error);
        assert!(r.step_log.is_empty());
        assert!(restore(&mut session).restored);
        assert!(session.link().probe_alive().unwrap());
        // a dead SUT fails preparation outright
        session.link().exchange(&Frame::parse_wire("7df#05").unwrap()).unwrap();
        drop(session);
        let t = EnvTemplate::from_env("ENV", &cs[0].environmental_needs, vec![], server.endpoint());
        assert!(matches!(prepare_env(&t, &ctx.sutdb), Err(ExecError::Precondition(_))));
    }

    #[test]
    fn closed_endpoint_and_dead_management() {
        let server = SimServer::spawn(SimConfig::default()).unwrap();
        let ep = server.endpoint();
        let cs = cases(SPEED);
        let mut session = session_for(&server, &cs[0]);
        server.shutdown();
        let c = restore(&mut session);
        assert!(!c.restored && c.detail.is_some());
        let t = EnvTemplate::from_env("ENV", &cs[0].environmental_needs, vec![], ep);
        assert!(matches!(prepare_env(&t, &SutDatabase::bundled()), Err(ExecError::Link(_))));
    }

    #[test]
    fn replay_is_deterministic_and_store_is_append_only() {
        let ctx = ExecContext::bundled();
        let cs = cases(&write_case("$SESSION").replace("requirement_ref: \"REQ-T\"", "requirement_ref: \"REQ-T\"\n    domain: $SESSION"));
        assert_eq!(cs.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path()).unwrap();
        let a = execute_all(&cs, &ExecTarget::Spawn(SimConfig::default()), &ctx, Some(&store));
        let b = execute_all(&cs, &ExecTarget::Spawn(SimConfig::default()), &ctx, None);
        let verdicts = |rs: &[TestResult]| rs.iter().map(|r| r.verdict).collect::<Vec<_>>();
        assert_eq!(verdicts(&a), [Verdict::Pass, Verdict::Fail, Verdict::Pass]);
        assert_eq!(verdicts(&a), verdicts(&b));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tx_log(), y.tx_log());
            assert!(x.cleanup.as_ref().unwrap().restored);
        }
        assert_eq!(store.all().unwrap().len(), 3);
        assert_eq!(store.get(&cs[1].id).unwrap().unwrap().verdict, Verdict::Fail);
        assert!(store.append(&a[0]).is_err());
    }

    #[test]
    fn unknown_tool_is_an_error_verdict() {
        let ctx = ExecContext::bundled();
        let server = SimServer::spawn(SimConfig::default()).unwrap();
        let mut cs = cases(SPEED);
        if let Activity::Mva { command, .. } = &mut cs[0].activities[0] {
            *command = "flash can0 firmware.bin".into();
        }
        let mut session = session_for(&server, &cs[0]);
        let r = execute_case(&cs[0], &mut session, &ctx);
        assert_eq!(r.verdict, Verdict::Error);
        assert_eq!(r.step_log.len(), 1);
        assert!(r.error.unwrap().contains("flash"));
    }

    #[test]
    fn oracle_partition() {
        assert_eq!(Verdict::from_oracle(true, false), Verdict::Pass);
        assert_eq!(Verdict::from_oracle(true, true), Verdict::Fail);
        assert_eq!(Verdict::from_oracle(false, true), Verdict::Fail);
        assert_eq!(Verdict::from_oracle(false, false), Verdict::Inconclusive);
    }
}
