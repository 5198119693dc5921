//! Test scripts: storage, pattern matching, command rendering and validation
//! against simulator configurations where the attack should and should not
//! succeed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{self, ExecContext, ExecError};
use crate::scenario_dsl::{Step, Value, Vocabulary};
use crate::sut_sim::{hex_lower, SimConfig, SimEndpoint};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("script `{id}` does not parse: {message}")]
    Parse { id: String, message: String },
    #[error("script id must be non-empty and filename safe, got `{0}`")]
    BadId(String),
    #[error("script `{id}` implements unknown pattern `{pattern}`")]
    UnknownPattern { id: String, pattern: String },
    #[error("script `{id}`: template slot `{{{slot}}}` is neither a parameter nor a SUT slot")]
    UnboundSlot { id: String, slot: String },
    #[error("script `{id}`: unterminated slot in command template")]
    BadTemplate { id: String },
    #[error("script `{0}` is already registered")]
    Duplicate(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("no value for slot `{0}`")]
    Missing(String),
    #[error("slot `{slot}` is still the placeholder `${placeholder}`")]
    Unresolved { slot: String, placeholder: String },
    #[error("slot `{slot}` expects {expected}, got `{got}`")]
    Type {
        slot: String,
        expected: &'static str,
        got: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Hexbytes,
    CanId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestScript {
    /// The file stem; not stored inside the file.
    #[serde(skip)]
    pub id: String,
    pub implements: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub param_schema: BTreeMap<String, ParamSpec>,
    pub command_template: String,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default)]
    pub sut_slots: Vec<String>,
    #[serde(default)]
    pub oracle_hooks: Vec<String>,
}

fn template_slots(template: &str) -> Option<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}')? + open;
        out.push(&rest[open + 1..close]);
        rest = &rest[close + 1..];
    }
    (!rest.contains('}')).then_some(out)
}

fn render_value(slot: &str, ty: Option<ParamType>, v: &Value) -> Result<String, RenderError> {
    let type_err = |expected| RenderError::Type {
        slot: slot.to_string(),
        expected,
        got: v.to_string(),
    };
    if let Value::Placeholder(p) = v {
        return Err(RenderError::Unresolved {
            slot: slot.to_string(),
            placeholder: p.clone(),
        });
    }
    match (ty, v) {
        (None | Some(ParamType::String), Value::Str(s)) => Ok(s.clone()),
        (None | Some(ParamType::String) | Some(ParamType::Integer), Value::Int(n)) => Ok(n.to_string()),
        (None | Some(ParamType::String) | Some(ParamType::Hexbytes), Value::Hex(b)) => Ok(hex_lower(b)),
        (Some(ParamType::Integer), _) => v.as_int().map(|n| n.to_string()).ok_or_else(|| type_err("an integer")),
        (Some(ParamType::CanId), _) => v
            .as_int()
            .filter(|n| *n <= u64::from(crate::sut_sim::MAX_ID))
            .map(|n| format!("{n:03x}"))
            .ok_or_else(|| type_err("an 11-bit CAN id")),
        (Some(ParamType::Hexbytes), _) => Err(type_err("hex bytes")),
        (_, Value::Placeholder(_)) => unreachable!(),
    }
}

impl TestScript {
    pub fn from_json(id: &str, text: &str) -> Result<Self, RegistryError> {
        let mut s: TestScript = serde_json::from_str(text).map_err(|e| RegistryError::Parse {
            id: id.to_string(),
            message: e.to_string(),
        })?;
        s.id = id.to_string();
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("script serializes");
        s.push('\n');
        s
    }

    /// Schema checks: known pattern, well-formed template, every slot bound.
    pub fn check(&self, vocab: &Vocabulary) -> Result<(), RegistryError> {
        let id_ok = !self.id.is_empty()
            && self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !id_ok {
            return Err(RegistryError::BadId(self.id.clone()));
        }
        if !vocab.patterns.contains(&self.implements) {
            return Err(RegistryError::UnknownPattern {
                id: self.id.clone(),
                pattern: self.implements.clone(),
            });
        }
        let slots = template_slots(&self.command_template).ok_or_else(|| RegistryError::BadTemplate { id: self.id.clone() })?;
        for slot in slots {
            if !self.param_schema.contains_key(slot) && !self.sut_slots.iter().any(|s| s == slot) {
                return Err(RegistryError::UnboundSlot {
                    id: self.id.clone(),
                    slot: slot.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Whether the pattern arguments together with the SUT slots supply every
    /// required parameter.
    pub fn accepts(&self, args: &BTreeMap<String, Value>) -> bool {
        self.param_schema
            .iter()
            .filter(|(_, spec)| spec.required)
            .all(|(name, _)| args.contains_key(name) || self.sut_slots.contains(name))
    }

    /// Fills the template from pattern arguments, parameter defaults and SUT
    /// database slots, in that order.
    pub fn render(&self, args: &BTreeMap<String, Value>, sut_slots: &BTreeMap<String, Value>) -> Result<String, RenderError> {
        let mut out = String::with_capacity(self.command_template.len());
        let mut rest = self.command_template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..].find('}').map(|c| c + open).ok_or_else(|| RenderError::Missing(rest.to_string()))?;
            let slot = &rest[open + 1..close];
            let spec = self.param_schema.get(slot);
            let value = args
                .get(slot)
                .or_else(|| spec.and_then(|s| s.default.as_ref()))
                .or_else(|| sut_slots.get(slot))
                .ok_or_else(|| RenderError::Missing(slot.to_string()))?;
            out.push_str(&render_value(slot, spec.map(|s| s.ty), value)?);
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Script store, ordered by id. When opened on a directory, registrations are
/// written there as `<id>.json`.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    scripts: BTreeMap<String, TestScript>,
    dir: Option<PathBuf>,
    vocabulary: Vocabulary,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bundled() -> Self {
        let mut r = Self::new();
        for (id, text) in crate::bundled::SCRIPTS {
            let script = TestScript::from_json(id, text).expect("bundled script parses");
            r.register(script).expect("bundled script is valid");
        }
        r
    }

    /// Loads every `*.json` file in `dir`; later registrations persist there.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let dir = dir.as_ref();
        let io = |source| RegistryError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut r = Self::new();
        for path in paths {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = fs::read_to_string(&path).map_err(|source| RegistryError::Io { path: path.clone(), source })?;
            r.register(TestScript::from_json(&id, &text)?)?;
        }
        r.dir = Some(dir.to_path_buf());
        Ok(r)
    }

    /// Writes every script into `dir` and keeps persisting there.
    pub fn persist_to(&mut self, dir: impl AsRef<Path>) -> Result<(), RegistryError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| RegistryError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        self.dir = Some(dir.to_path_buf());
        for s in self.scripts.values() {
            self.write(s)?;
        }
        Ok(())
    }

    fn write(&self, script: &TestScript) -> Result<(), RegistryError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(format!("{}.json", script.id));
        let tmp = dir.join(format!(".{}.json.tmp", script.id));
        let io = |source| RegistryError::Io {
            path: path.clone(),
            source,
        };
        fs::write(&tmp, script.to_json()).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    pub fn register(&mut self, script: TestScript) -> Result<String, RegistryError> {
        script.check(&self.vocabulary)?;
        if self.scripts.contains_key(&script.id) {
            return Err(RegistryError::Duplicate(script.id));
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("{}.json", script.id)));
        if path.is_some_and(|p| p.exists()) {
            return Err(RegistryError::Duplicate(script.id));
        }
        self.write(&script)?;
        let id = script.id.clone();
        self.scripts.insert(id.clone(), script);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<&TestScript> {
        self.scripts.get(id)
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TestScript> {
        self.scripts.values()
    }

    /// First script by id implementing the pattern step with all required
    /// parameters supplied. Expectation steps never match.
    pub fn match_script(&self, step: &Step) -> Option<&TestScript> {
        let Step::Pattern { name, args } = step else {
            return None;
        };
        self.scripts.values().find(|s| &s.implements == name && s.accepts(args))
    }
}

/// Where a validation run happens.
#[derive(Debug, Clone)]
pub enum ValidationTarget {
    /// A fresh simulator with this configuration.
    Sim(SimConfig),
    Endpoint(SimEndpoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackOutcome {
    Success,
    Failure,
    Error(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Valid,
    Invalid,
    Untested,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub script_ref: String,
    pub outcomes: Vec<(String, AttackOutcome)>,
    pub status: ValidationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

/// Status from the positive and negative outcomes.
pub fn validation_status(positive: &AttackOutcome, negative: &AttackOutcome) -> ValidationStatus {
    match (positive, negative) {
        (AttackOutcome::Error(_), _) | (_, AttackOutcome::Error(_)) => ValidationStatus::Untested,
        (AttackOutcome::Success, AttackOutcome::Failure) => ValidationStatus::Valid,
        _ => ValidationStatus::Invalid,
    }
}

fn outcome(r: Result<bool, ExecError>) -> AttackOutcome {
    match r {
        Ok(true) => AttackOutcome::Success,
        Ok(false) => AttackOutcome::Failure,
        Err(e) => AttackOutcome::Error(e.to_string()),
    }
}

/// Runs the script as a one-step case against each configuration. The attack
/// succeeds when any of the script's oracle hooks holds afterwards. Edge
/// outcomes are recorded but do not affect the status.
pub fn validate_script(
    script: &TestScript,
    args: &BTreeMap<String, Value>,
    positive: &ValidationTarget,
    negative: &ValidationTarget,
    edges: &[(String, ValidationTarget)],
    ctx: &ExecContext,
) -> ValidationRecord {
    let run = |t: &ValidationTarget| outcome(executor::attack_succeeds(script, args, t, ctx));
    let pos = run(positive);
    let neg = run(negative);
    let status = validation_status(&pos, &neg);
    let cause = [&pos, &neg].into_iter().find_map(|o| match o {
        AttackOutcome::Error(e) => Some(e.clone()),
        _ => None,
    });
    let mut outcomes = vec![("positive".to_string(), pos), ("negative".to_string(), neg)];
    outcomes.extend(edges.iter().map(|(label, t)| (label.clone(), run(t))));
    ValidationRecord {
        script_ref: script.id.clone(),
        outcomes,
        status,
        cause,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::tcg::SutDatabase;

    fn args(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn slots() -> BTreeMap<String, Value> {
        SutDatabase::bundled().slots
    }

    #[test]
    fn cansend_example_renders() {
        let r = Registry::bundled();
        let step = Step::pattern("SEND_CAN_MSG", [("id", Value::hex(&[0x07, 0xdf])), ("data", Value::hex(&[2, 1, 0x0d]))]);
        let s = r.match_script(&step).unwrap();
        assert_eq!(s.id, "S010");
        assert_eq!(s.render(step.args(), &slots()).unwrap(), "cansend can0 7df#02010d");
    }

    #[test]
    fn miss_and_tie_break() {
        assert!(Registry::new().match_script(&Step::pattern("FROB_BUS", [])).is_none());
        let r = Registry::bundled();
        // S030 needs an algorithm; without one only S031 qualifies.
        let with = Step::pattern("SECURITY_ACCESS", [("algorithm", Value::str("zero"))]);
        assert_eq!(r.match_script(&with).unwrap().id, "S030");
        assert_eq!(r.match_script(&Step::pattern("SECURITY_ACCESS", [])).unwrap().id, "S031");
        let mut dup = r.get("S031").unwrap().clone();
        dup.id = "S029".into();
        let mut r2 = r.clone();
        r2.register(dup).unwrap();
        assert_eq!(r2.match_script(&Step::pattern("SECURITY_ACCESS", [])).unwrap().id, "S029");
        assert!(r.match_script(&Step::expect("ALIVE", [], None)).is_none());
    }

    #[test]
    fn registration_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Registry::new();
        r.persist_to(dir.path()).unwrap();
        let mut s = Registry::bundled().get("S045").unwrap().clone();
        s.id = "S900".into();
        r.register(s.clone()).unwrap();
        assert!(matches!(r.register(s.clone()), Err(RegistryError::Duplicate(_))));
        let reopened = Registry::open_dir(dir.path()).unwrap();
        assert_eq!(reopened.get("S900"), Some(&s));
        assert_eq!(reopened.match_script(&Step::pattern("PROBE_ALIVE", [])).unwrap().id, "S900");

        let mut bad = s.clone();
        bad.id = "S901".into();
        bad.command_template = "probe {bus} {key}".into();
        assert!(matches!(r.register(bad.clone()), Err(RegistryError::UnboundSlot { slot, .. }) if slot == "key"));
        bad.command_template = "probe {bus".into();
        assert!(matches!(r.register(bad.clone()), Err(RegistryError::BadTemplate { .. })));
        bad.command_template = "probe".into();
        bad.implements = "FROB".into();
        assert!(matches!(r.register(bad), Err(RegistryError::UnknownPattern { .. })));
    }

    #[test]
    fn rendering_by_type() {
        let r = Registry::bundled();
        let s = r.get("S063").unwrap();
        assert_eq!(s.render(&BTreeMap::new(), &slots()).unwrap(), "scan-analyze 1");
        let s = r.get("S010").unwrap();
        let err = s.render(&args(&[("id", Value::placeholder("REQ_ID")), ("data", Value::hex(&[1]))]), &slots());
        assert!(matches!(err, Err(RenderError::Unresolved { .. })));
        let err = s.render(&args(&[("id", Value::Int(0x800)), ("data", Value::hex(&[1]))]), &slots());
        assert!(matches!(err, Err(RenderError::Type { .. })));
        let s = r.get("S030").unwrap();
        assert_eq!(
            s.render(&args(&[("algorithm", Value::str("vendor"))]), &slots()).unwrap(),
            "uds-unlock can0 07e0 vendor 5a3c"
        );
    }

    #[test]
    fn status_truth_table() {
        use AttackOutcome::*;
        let e = || Error("down".into());
        let cases = [
            (Success, Failure, ValidationStatus::Valid),
            (Success, Success, ValidationStatus::Invalid),
            (Failure, Failure, ValidationStatus::Invalid),
            (Failure, Success, ValidationStatus::Invalid),
            (e(), Failure, ValidationStatus::Untested),
            (Success, e(), ValidationStatus::Untested),
        ];
        for (p, n, want) in cases {
            assert_eq!(validation_status(&p, &n), want, "{p:?} {n:?}");
        }
    }

    #[test]
    fn weak_key_exploit_validates() {
        let r = Registry::bundled();
        let s = r.get("S031").unwrap();
        let db = ExecContext::bundled();
        let mut strong = SimConfig::default();
        strong.v1_weak_key = false;
        let rec = validate_script(
            s,
            &BTreeMap::new(),
            &ValidationTarget::Sim(SimConfig::default()),
            &ValidationTarget::Sim(strong),
            &[("edge-hardened".into(), ValidationTarget::Sim(SimConfig::hardened()))],
            &db,
        );
        assert_eq!(rec.status, ValidationStatus::Valid, "{rec:?}");
        assert_eq!(rec.outcomes[2].1, AttackOutcome::Failure);

        // The vendor unlock succeeds on both, so it is no attack check at all.
        let vendor = r.get("S030").unwrap();
        let a = args(&[("algorithm", Value::str("vendor"))]);
        let rec = validate_script(
            vendor,
            &a,
            &ValidationTarget::Sim(SimConfig::default()),
            &ValidationTarget::Sim(SimConfig::hardened()),
            &[],
            &db,
        );
        assert_eq!(rec.status, ValidationStatus::Invalid);
    }

    #[test]
    fn unreachable_target_is_untested() {
        let server = crate::sut_sim::SimServer::spawn(SimConfig::default()).unwrap();
        let ep = server.endpoint();
        server.shutdown();
        let r = Registry::bundled();
        let rec = validate_script(
            r.get("S031").unwrap(),
            &BTreeMap::new(),
            &ValidationTarget::Endpoint(ep),
            &ValidationTarget::Sim(SimConfig::hardened()),
            &[],
            &ExecContext::bundled(),
        );
        assert_eq!(rec.status, ValidationStatus::Untested);
        assert!(rec.cause.is_some());
    }

    proptest! {
        #[test]
        fn rendered_commands_have_no_slots(id in 0u64..=0x7ff, data in prop::collection::vec(any::<u8>(), 1..8), sev in 0u64..5) {
            let r = Registry::bundled();
            let a = args(&[
                ("id", Value::Int(id)),
                ("data", Value::Hex(data)),
                ("session", Value::hex(&[3])),
                ("algorithm", Value::str("zero")),
                ("did", Value::hex(&[0xf1, 0x90])),
                ("budget", Value::Int(10)),
                ("seed", Value::Int(1)),
                ("corpus", Value::str("diag_corpus")),
                ("iface", Value::str("I_DIAG")),
                ("tool", Value::str("internal")),
                ("min_severity", Value::Int(sev)),
            ]);
            for s in r.iter() {
                let cmd = s.render(&a, &slots()).unwrap();
                prop_assert!(!cmd.contains('{') && !cmd.contains('}'), "{}", cmd);
            }
        }
    }
}
