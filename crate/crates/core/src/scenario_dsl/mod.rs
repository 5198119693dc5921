//! Scenario language: abstract test descriptions made of patterns,
//! expectations and an oracle, with `$NAME` placeholders whose domains live
//! in the SUT database.
//!
//! ```text
//! scenario "SC-READ-SPEED" {
//!   meta {
//!     method: "functional"
//!     requirement_ref: "REQ-001"
//!     domain: $REQ_ID
//!   }
//!   env {
//!     interface diag diag bus="can0"
//!     precondition sut_alive
//!   }
//!   steps {
//!     pattern SEND_CAN_MSG(data=0x02010d, id=$REQ_ID)
//!     expect RESPONSE_SID(sid=0x41) within 500ms
//!   }
//!   oracle {
//!     pass: expect.all
//!     fail: expect.any_unmet
//!   }
//! }
//! ```

mod parser;
mod value;
mod vocabulary;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::analysis::Method;
use crate::item_model::InterfaceKind;

pub use parser::{parse_scenario, DslError, DslErrorKind};
pub use value::Value;
pub use vocabulary::{validate, Issue, IssueKind, Vocabulary, CONDITIONS, MATCHERS, PATTERNS};

/// Deadline applied to an expectation without `within`.
pub const DEFAULT_WITHIN_MS: u64 = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub method: Method,
    #[serde(default)]
    pub requirement_refs: Vec<String>,
    #[serde(default)]
    pub threat_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_ref: Option<String>,
    /// Placeholders whose domains come from the SUT database.
    #[serde(default)]
    pub domains: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
}

impl Meta {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            requirement_refs: Vec::new(),
            threat_refs: Vec::new(),
            risk_ref: None,
            domains: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceBinding {
    pub kind: InterfaceKind,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(default)]
    pub interfaces: BTreeMap<String, InterfaceBinding>,
    #[serde(default)]
    pub preconditions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "lowercase")]
pub enum Step {
    Pattern {
        name: String,
        args: BTreeMap<String, Value>,
    },
    Expect {
        matcher: String,
        args: BTreeMap<String, Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        within_ms: Option<u64>,
    },
}

impl Step {
    pub fn pattern(name: &str, args: impl IntoIterator<Item = (&'static str, Value)>) -> Self {
        Step::Pattern {
            name: name.to_string(),
            args: args.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn expect(matcher: &str, args: impl IntoIterator<Item = (&'static str, Value)>, within_ms: Option<u64>) -> Self {
        Step::Expect {
            matcher: matcher.to_string(),
            args: args.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            within_ms,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Step::Pattern { name, .. } => name,
            Step::Expect { matcher, .. } => matcher,
        }
    }

    pub fn args(&self) -> &BTreeMap<String, Value> {
        match self {
            Step::Pattern { args, .. } | Step::Expect { args, .. } => args,
        }
    }
}

/// Dotted condition name such as `sut.crashed`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition(pub Vec<String>);

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        let parts: Vec<String> = s.split('.').map(str::to_string).collect();
        parts.iter().all(|p| parser::is_ident(p)).then_some(Self(parts))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Condition::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad condition `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub pass: Condition,
    pub fail: Condition,
}

impl OracleSpec {
    pub fn new(pass: &str, fail: &str) -> Self {
        Self {
            pass: Condition::parse(pass).expect("valid condition"),
            fail: Condition::parse(fail).expect("valid condition"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub meta: Meta,
    pub env: EnvSpec,
    pub steps: Vec<Step>,
    pub oracle: OracleSpec,
}

impl Scenario {
    /// Sorts and deduplicates the order-insensitive lists so that equal
    /// scenarios compare and serialize equal.
    pub fn normalize(&mut self) {
        for list in [
            &mut self.meta.requirement_refs,
            &mut self.meta.threat_refs,
            &mut self.meta.domains,
            &mut self.env.preconditions,
        ] {
            list.sort();
            list.dedup();
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Placeholder names referenced by steps or interface parameters.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let step_values = self.steps.iter().flat_map(|s| s.args().values());
        let env_values = self.env.interfaces.values().flat_map(|b| b.params.values());
        step_values
            .chain(env_values)
            .filter_map(|v| match v {
                Value::Placeholder(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }
}

fn write_args(out: &mut String, args: &BTreeMap<String, Value>) {
    out.push('(');
    for (n, (k, v)) in args.iter().enumerate() {
        if n > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{k}={v}");
    }
    out.push(')');
}

/// Canonical text: fixed section order, 2-space indent, sorted keys,
/// lowercase hex.
pub fn serialize(scenario: &Scenario) -> String {
    let s = scenario.clone().normalized();
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} {{", Value::Str(s.id.clone()));
    out.push_str("  meta {\n");
    let _ = writeln!(out, "    method: {}", Value::Str(s.meta.method.as_str().into()));
    for r in &s.meta.requirement_refs {
        let _ = writeln!(out, "    requirement_ref: {}", Value::Str(r.clone()));
    }
    for t in &s.meta.threat_refs {
        let _ = writeln!(out, "    threat_ref: {}", Value::Str(t.clone()));
    }
    if let Some(r) = &s.meta.risk_ref {
        let _ = writeln!(out, "    risk_ref: {}", Value::Str(r.clone()));
    }
    for d in &s.meta.domains {
        let _ = writeln!(out, "    domain: ${d}");
    }
    for (k, v) in &s.meta.extra {
        let _ = writeln!(out, "    {k}: {v}");
    }
    out.push_str("  }\n  env {\n");
    for (name, b) in &s.env.interfaces {
        let _ = write!(out, "    interface {name} {}", b.kind.as_str());
        for (k, v) in &b.params {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
    }
    for p in &s.env.preconditions {
        let _ = writeln!(out, "    precondition {p}");
    }
    out.push_str("  }\n  steps {\n");
    for step in &s.steps {
        match step {
            Step::Pattern { name, args } => {
                let _ = write!(out, "    pattern {name}");
                write_args(&mut out, args);
            }
            Step::Expect { matcher, args, within_ms } => {
                let _ = write!(out, "    expect {matcher}");
                write_args(&mut out, args);
                if let Some(ms) = within_ms {
                    let _ = write!(out, " within {ms}ms");
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(
        out,
        "  }}\n  oracle {{\n    pass: {}\n    fail: {}\n  }}\n}}\n",
        s.oracle.pass, s.oracle.fail
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"
        # a comment
        scenario "SC-1" {
          meta { method: "functional" requirement_ref: "REQ-1" domain: $REQ_ID domain: $PAYLOAD }
          env { interface diag diag bus="can0" precondition sut_alive }
          steps {
            pattern SEND_CAN_MSG(id=$REQ_ID, data=$PAYLOAD)
            expect RESPONSE_SID(sid=0x41) within 500ms
          }
          oracle { pass: expect.all fail: expect.any_unmet }
        }
    "#;

    #[test]
    fn minimal_pattern_has_two_placeholder_args() {
        let s = parse_scenario(MINIMAL).unwrap();
        match &s.steps[0] {
            Step::Pattern { name, args } => {
                assert_eq!(name, "SEND_CAN_MSG");
                assert_eq!(args["id"], Value::Placeholder("REQ_ID".into()));
                assert_eq!(args["data"], Value::Placeholder("PAYLOAD".into()));
            }
            other => panic!("unexpected step {other:?}"),
        }
        assert_eq!(s.placeholders().len(), 2);
        assert_eq!(s.meta.domains, vec!["PAYLOAD", "REQ_ID"]);
    }

    #[test]
    fn canonical_form_is_a_fixpoint() {
        let s = parse_scenario(MINIMAL).unwrap();
        let text = serialize(&s);
        assert_eq!(parse_scenario(&text).unwrap(), s);
        assert_eq!(serialize(&parse_scenario(&text).unwrap()), text);
        assert!(text.contains("\n  meta {\n    method: \"functional\"\n"));
    }

    #[test]
    fn hex_is_serialized_lowercase() {
        let text = MINIMAL.replace("sid=0x41", "sid=0x02010D");
        let s = parse_scenario(&text).unwrap();
        assert!(serialize(&s).contains("sid=0x02010d"));
    }

    #[test]
    fn reordered_equal_scenarios_serialize_identically() {
        let a = parse_scenario(MINIMAL).unwrap();
        let b = parse_scenario(
            &MINIMAL
                .replace("domain: $REQ_ID domain: $PAYLOAD", "domain: $PAYLOAD domain: $REQ_ID")
                .replace("id=$REQ_ID, data=$PAYLOAD", "data=$PAYLOAD, id=$REQ_ID"),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize(&a), serialize(&b));
    }

    #[test]
    fn zero_deadline_is_semantic_error() {
        let err = parse_scenario(&MINIMAL.replace("within 500ms", "within 0ms")).unwrap_err();
        assert_eq!(err.kind, DslErrorKind::Semantic);
        assert!(err.line > 1);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            "[ -~]{0,12}".prop_map(Value::Str),
            any::<u32>().prop_map(|n| Value::Int(n.into())),
            prop::collection::vec(any::<u8>(), 1..6).prop_map(Value::Hex),
            "[A-Z][A-Z0-9_]{0,6}".prop_map(Value::Placeholder),
        ]
    }

    fn arb_args() -> impl Strategy<Value = BTreeMap<String, Value>> {
        prop::collection::btree_map("[a-z][a-z0-9_]{0,5}", arb_value(), 0..4)
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        let step = prop_oneof![
            ("[A-Z][A-Z_]{0,8}", arb_args()).prop_map(|(name, args)| Step::Pattern { name, args }),
            ("[A-Z][A-Z_]{0,8}", arb_args(), prop::option::of(1u64..100_000))
                .prop_map(|(matcher, args, within_ms)| Step::Expect { matcher, args, within_ms }),
        ];
        let method = prop::sample::select(Method::ALL.to_vec());
        let env = prop::collection::btree_map(
            "[a-z][a-z0-9]{0,5}",
            (
                prop::sample::select(vec![InterfaceKind::Canlike, InterfaceKind::Diag, InterfaceKind::Debug]),
                arb_args(),
            )
                .prop_map(|(kind, params)| InterfaceBinding { kind, params }),
            0..3,
        );
        (
            "[ -~]{1,16}",
            method,
            prop::collection::vec("[A-Z]{1,3}-[0-9]{1,3}", 0..3),
            prop::option::of("[a-z0-9-]{1,8}"),
            prop::collection::btree_map("x_[a-z]{1,5}", arb_value(), 0..2),
            env,
            prop::collection::vec("[a-z_]{1,8}", 0..2),
            prop::collection::vec(step, 1..5),
        )
            .prop_map(|(id, method, reqs, risk, extra, interfaces, pre, steps)| Scenario {
                id,
                meta: Meta {
                    method,
                    requirement_refs: reqs.clone(),
                    threat_refs: reqs,
                    risk_ref: risk,
                    domains: vec!["A".into()],
                    extra,
                },
                env: EnvSpec { interfaces, preconditions: pre },
                steps,
                oracle: OracleSpec::new("expect.all", "sut.crashed"),
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(s in arb_scenario()) {
            let s = s.normalized();
            let text = serialize(&s);
            let back = parse_scenario(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(serialize(&back), text);
        }
    }
}
