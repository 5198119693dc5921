use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Scenario, Step};

/// Patterns the bundled scripts implement.
pub const PATTERNS: &[&str] = &[
    "SEND_CAN_MSG",
    "SESSION_CONTROL",
    "SECURITY_ACCESS",
    "WRITE_DATA",
    "PROBE_ALIVE",
    "FUZZ_CAMPAIGN",
    "SELECT_TARGET",
    "SELECT_TOOL",
    "RUN_SCAN",
    "ANALYZE_SCAN_REPORT",
    "EMIT_FOLLOWUPS",
];

/// Expectation matchers the executor evaluates.
pub const MATCHERS: &[&str] = &[
    "POSITIVE_RESPONSE",
    "NEGATIVE_RESPONSE",
    "RESPONSE_SID",
    "RESPONSE_DATA",
    "NO_RESPONSE",
    "REFUSED",
    "ALIVE",
];

/// Oracle conditions the executor evaluates.
pub const CONDITIONS: &[&str] = &[
    "expect.all",
    "expect.any_unmet",
    "sut.alive",
    "sut.crashed",
    "response.positive",
    "response.negative",
    "response.none",
    "fuzz.finding",
    "fuzz.clean",
    "scan.finding",
    "scan.clean",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub patterns: BTreeSet<String>,
    pub matchers: BTreeSet<String>,
    pub conditions: BTreeSet<String>,
}

impl Vocabulary {
    pub fn standard() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            patterns: set(PATTERNS),
            matchers: set(MATCHERS),
            conditions: set(CONDITIONS),
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    UnknownPattern,
    UnknownMatcher,
    UnknownCondition,
    UnresolvedPlaceholder,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub subject: String,
}

pub fn validate(scenario: &Scenario, vocabulary: &Vocabulary) -> Vec<Issue> {
    let mut issues = BTreeSet::new();
    for step in &scenario.steps {
        let (known, kind) = match step {
            Step::Pattern { name, .. } => (vocabulary.patterns.contains(name), IssueKind::UnknownPattern),
            Step::Expect { matcher, .. } => (vocabulary.matchers.contains(matcher), IssueKind::UnknownMatcher),
        };
        if !known {
            issues.insert(Issue {
                kind,
                subject: step.name().to_string(),
            });
        }
    }
    for cond in [&scenario.oracle.pass, &scenario.oracle.fail] {
        if !vocabulary.conditions.contains(&cond.to_string()) {
            issues.insert(Issue {
                kind: IssueKind::UnknownCondition,
                subject: cond.to_string(),
            });
        }
    }
    for p in scenario.placeholders() {
        if !scenario.meta.domains.contains(&p) {
            issues.insert(Issue {
                kind: IssueKind::UnresolvedPlaceholder,
                subject: p,
            });
        }
    }
    issues.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_dsl::parse_scenario;

    fn scenario(steps: &str, domains: &str) -> Scenario {
        parse_scenario(&format!(
            "scenario \"V\" {{ meta {{ method: \"functional\" {domains} }} env {{ }} steps {{ {steps} }} \
             oracle {{ pass: expect.all fail: expect.any_unmet }} }}"
        ))
        .unwrap()
    }

    #[test]
    fn known_vocabulary_is_clean() {
        let s = scenario("pattern SEND_CAN_MSG(id=$ID, data=0x013e) expect ALIVE()", "domain: $ID");
        assert!(validate(&s, &Vocabulary::standard()).is_empty());
    }

    #[test]
    fn unknown_pattern_is_reported_once() {
        let s = scenario("pattern FROB_BUS() pattern FROB_BUS()", "");
        assert_eq!(
            validate(&s, &Vocabulary::standard()),
            vec![Issue {
                kind: IssueKind::UnknownPattern,
                subject: "FROB_BUS".into()
            }]
        );
    }

    #[test]
    fn undeclared_placeholder_is_reported() {
        let s = scenario("pattern SEND_CAN_MSG(id=$X, data=0x01)", "");
        let issues = validate(&s, &Vocabulary::standard());
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::UnresolvedPlaceholder);
        assert_eq!(issues[0].subject, "X");
    }

    #[test]
    fn unknown_condition_and_matcher() {
        let mut s = scenario("expect WIGGLE()", "");
        s.oracle.fail = crate::scenario_dsl::Condition::parse("sut.on_fire").unwrap();
        let kinds: Vec<_> = validate(&s, &Vocabulary::standard()).into_iter().map(|i| i.kind).collect();
        assert_eq!(kinds, vec![IssueKind::UnknownMatcher, IssueKind::UnknownCondition]);
    }
}
