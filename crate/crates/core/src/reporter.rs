//! Test report: dashboard, findings with their traceability chain, untested
//! aspects and integrity violations, rendered as canonical JSON or text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Method, Risk, SecurityRequirement, Threat, ThreatCatalogEntry};
use crate::executor::{TestResult, Verdict};
use crate::item_model::SecurityGoal;
use crate::planner::Planned;
use crate::tcg::TestCase;
use crate::vuln_scanner::VulnDbEntry;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format `{0}` (expected machine or text)")]
    UnknownFormat(String),
    #[error("malformed machine report: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Analysis artifacts a finding is traced through.
#[derive(Debug, Clone, Default)]
pub struct TraceIndex {
    pub goals: Vec<SecurityGoal>,
    pub threats: Vec<Threat>,
    pub risks: Vec<Risk>,
    pub requirements: Vec<SecurityRequirement>,
    /// Regulation notes keyed by catalog or vulnerability-entry id.
    pub regulation_notes: BTreeMap<String, Vec<String>>,
}

impl TraceIndex {
    pub fn new(
        goals: &[SecurityGoal],
        threats: &[Threat],
        risks: &[Risk],
        requirements: &[SecurityRequirement],
        catalog: &[ThreatCatalogEntry],
        vulndb: &[VulnDbEntry],
    ) -> Self {
        let mut notes = BTreeMap::new();
        for c in catalog {
            notes.insert(c.id.clone(), c.regulation_notes.clone());
        }
        for v in vulndb {
            notes.insert(v.id.clone(), v.regulation_notes.clone());
        }
        Self {
            goals: goals.to_vec(),
            threats: threats.to_vec(),
            risks: risks.to_vec(),
            requirements: requirements.to_vec(),
            regulation_notes: notes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub generated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<DateTime<Utc>>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dashboard {
    pub pass: usize,
    pub fail: usize,
    pub error: usize,
    pub inconclusive: usize,
    pub untested: usize,
}

impl Dashboard {
    pub fn total(&self) -> usize {
        self.pass + self.fail + self.error + self.inconclusive + self.untested
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingLinks {
    pub goal: Vec<String>,
    pub requirement: Vec<String>,
    pub threat: Vec<String>,
    pub raw_result: String,
    pub tools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub case_ref: String,
    pub scenario_ref: String,
    pub verdict: Verdict,
    /// Highest risk value among the linked threats.
    pub severity: u8,
    pub summary: String,
    pub links: FindingLinks,
    pub regulation_conflicts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UntestedReason {
    NotPlanned,
    TechnicalProblem,
    LackOfTime,
    LackOfFunds,
    LackOfTools,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Untested {
    /// A case id, or a scenario id when no case could be generated.
    pub case_ref: String,
    pub reason: UntestedReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub timestamps: Timestamps,
    pub management_summary: String,
    pub sut_description: String,
    pub dashboard: Dashboard,
    pub methods_used: Vec<Method>,
    pub findings: Vec<Finding>,
    pub untested: Vec<Untested>,
    pub integrity_violations: Vec<String>,
}

impl TestReport {
    pub fn failed(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.verdict == Verdict::Fail)
    }

    /// The report with its timestamp block zeroed, for comparisons.
    pub fn without_timestamps(&self) -> Self {
        Self {
            timestamps: Timestamps {
                generated_at: DateTime::<Utc>::UNIX_EPOCH,
                start_time: None,
                duration_ms: 0,
            },
            ..self.clone()
        }
    }
}

pub fn raw_result_path(case_id: &str) -> String {
    format!("results/{case_id}.result.json")
}

struct Chain {
    goals: BTreeSet<String>,
    threats: BTreeSet<String>,
    severity: u8,
    conflicts: BTreeSet<String>,
}

/// Resolves case → requirement → threat → goal, recording every broken link.
fn resolve(case: &TestCase, trace: &TraceIndex, violations: &mut Vec<String>) -> Chain {
    let mut chain = Chain {
        goals: BTreeSet::new(),
        threats: case.traceability.threat_refs.iter().cloned().collect(),
        severity: 0,
        conflicts: BTreeSet::new(),
    };
    if case.traceability.requirement_refs.is_empty() {
        violations.push(format!("{}: no requirement reference", case.id));
    }
    for r in &case.traceability.requirement_refs {
        match trace.requirements.iter().find(|q| &q.id == r) {
            Some(req) => {
                chain.threats.extend(req.derived_from.iter().cloned());
                if trace.goals.iter().any(|g| g.id == req.goal_ref) {
                    chain.goals.insert(req.goal_ref.clone());
                } else {
                    violations.push(format!("{}: requirement {r} names unknown goal {}", case.id, req.goal_ref));
                }
            }
            None => violations.push(format!("{}: unknown requirement {r}", case.id)),
        }
    }
    if chain.threats.is_empty() {
        violations.push(format!("{}: no threat reference", case.id));
    }
    for t in &chain.threats {
        match trace.threats.iter().find(|x| &x.id == t) {
            Some(th) => {
                if trace.goals.iter().any(|g| g.id == th.mapped_goal) {
                    chain.goals.insert(th.mapped_goal.clone());
                } else {
                    violations.push(format!("{}: threat {t} maps to unknown goal {}", case.id, th.mapped_goal));
                }
                if let Some(notes) = trace.regulation_notes.get(&th.catalog_ref) {
                    chain.conflicts.extend(notes.iter().cloned());
                }
            }
            None => violations.push(format!("{}: unknown threat {t}", case.id)),
        }
        match trace.risks.iter().find(|r| &r.threat_ref == t) {
            Some(r) => chain.severity = chain.severity.max(r.value),
            None => violations.push(format!("{}: no risk assessed for threat {t}", case.id)),
        }
    }
    chain
}

fn summarize(result: &TestResult) -> String {
    if let Some(e) = &result.error {
        return format!("error: {e}");
    }
    let mut parts = Vec::new();
    let unmet: Vec<&str> = result
        .expectations
        .iter()
        .filter(|e| !e.met)
        .map(|e| e.matcher.as_str())
        .collect();
    if !unmet.is_empty() {
        parts.push(format!("unmet expectations: {}", unmet.join(", ")));
    }
    if let Some(f) = &result.evidence.fuzz {
        parts.push(format!(
            "fuzzing: {} frames, {} reproduced findings",
            f.stats.frames_sent,
            f.findings.len()
        ));
    }
    for s in &result.evidence.scans {
        for f in &s.findings {
            let banner = f.evidence.banner.as_ref().map(|b| format!(" banner {b}")).unwrap_or_default();
            parts.push(format!("{} on {}: {}{banner}", f.entry_id, s.target, f.title));
        }
    }
    if let Some(o) = &result.oracle_evaluation {
        let held = if o.fail_holds {
            format!("fail condition {} holds", o.fail_condition)
        } else if o.pass_holds {
            format!("pass condition {} holds", o.pass_condition)
        } else {
            "neither oracle condition holds".to_string()
        };
        parts.push(held);
    }
    parts.join("; ")
}

/// Aggregates cases and their results. Broken traceability never drops a
/// finding; it is listed under `integrity_violations`.
pub fn build_report(planned: &Planned, cases: &[TestCase], results: &[TestResult], trace: &TraceIndex) -> TestReport {
    let mut violations = Vec::new();
    let by_case: BTreeMap<&str, &TestResult> = results.iter().map(|r| (r.case_ref.as_str(), r)).collect();
    let known: BTreeSet<&str> = cases.iter().map(|c| c.id.as_str()).collect();
    for r in results {
        if !known.contains(r.case_ref.as_str()) {
            violations.push(format!("{}: result without a planned case", r.case_ref));
        }
    }

    let mut dashboard = Dashboard::default();
    let mut findings = Vec::new();
    let mut untested = Vec::new();
    let mut methods = BTreeSet::new();
    for case in cases {
        let chain = resolve(case, trace, &mut violations);
        let Some(result) = by_case.get(case.id.as_str()) else {
            dashboard.untested += 1;
            untested.push(Untested {
                case_ref: case.id.clone(),
                reason: UntestedReason::Other,
                detail: "planned but not executed".into(),
            });
            continue;
        };
        methods.insert(case.method);
        match result.verdict {
            Verdict::Pass => dashboard.pass += 1,
            Verdict::Fail => dashboard.fail += 1,
            Verdict::Error => dashboard.error += 1,
            Verdict::Inconclusive => dashboard.inconclusive += 1,
        }
        let mut conflicts = BTreeSet::new();
        if result.verdict == Verdict::Fail {
            conflicts = chain.conflicts;
            for s in &result.evidence.scans {
                for f in &s.findings {
                    if let Some(notes) = trace.regulation_notes.get(&f.entry_id) {
                        conflicts.extend(notes.iter().cloned());
                    }
                }
            }
        }
        if result.verdict == Verdict::Fail && chain.goals.is_empty() {
            violations.push(format!("{}: failed finding does not resolve to a security goal", case.id));
        }
        findings.push(Finding {
            case_ref: case.id.clone(),
            scenario_ref: case.scenario_ref.clone(),
            verdict: result.verdict,
            severity: chain.severity,
            summary: summarize(result),
            links: FindingLinks {
                goal: chain.goals.into_iter().collect(),
                requirement: case.traceability.requirement_refs.clone(),
                threat: chain.threats.into_iter().collect(),
                raw_result: raw_result_path(&case.id),
                tools: result.metadata.tool_versions.keys().cloned().collect(),
            },
            regulation_conflicts: conflicts.into_iter().collect(),
        });
    }
    let with_cases: BTreeSet<&str> = cases.iter().map(|c| c.scenario_ref.as_str()).collect();
    for s in &planned.scenarios {
        if !with_cases.contains(s.id.as_str()) {
            untested.push(Untested {
                case_ref: s.id.clone(),
                reason: UntestedReason::LackOfTools,
                detail: "no executable case could be generated".into(),
            });
        }
    }

    let start_time = results.iter().map(|r| r.started_at).min();
    let end = results
        .iter()
        .map(|r| r.started_at + chrono::Duration::milliseconds(r.duration_ms as i64))
        .max();
    let duration_ms = match (start_time, end) {
        (Some(s), Some(e)) => (e - s).num_milliseconds().max(0) as u64,
        _ => 0,
    };
    let management_summary = management_summary(planned, &dashboard, &findings);
    TestReport {
        timestamps: Timestamps {
            generated_at: Utc::now(),
            start_time,
            duration_ms,
        },
        management_summary,
        sut_description: planned.plan.sut_overview.clone(),
        dashboard,
        methods_used: methods.into_iter().collect(),
        findings,
        untested,
        integrity_violations: violations,
    }
}

fn management_summary(planned: &Planned, d: &Dashboard, findings: &[Finding]) -> String {
    let mut s = format!(
        "{}. {} test cases planned: {} passed, {} failed, {} errors, {} inconclusive, {} untested.",
        planned.plan.purpose.trim_end_matches('.'),
        d.total(),
        d.pass,
        d.fail,
        d.error,
        d.inconclusive,
        d.untested
    );
    let mut failed: Vec<&Finding> = findings.iter().filter(|f| f.verdict == Verdict::Fail).collect();
    if failed.is_empty() {
        s.push_str(" No security requirement was found violated.");
    } else {
        failed.sort_by(|a, b| b.severity.cmp(&a.severity).then(a.case_ref.cmp(&b.case_ref)));
        let reqs: BTreeSet<&str> = failed.iter().flat_map(|f| f.links.requirement.iter().map(String::as_str)).collect();
        let _ = write!(
            s,
            " Violated requirements: {}. Highest severity {} in {}.",
            reqs.into_iter().collect::<Vec<_>>().join(", "),
            failed[0].severity,
            failed[0].case_ref
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Machine,
    Text,
}

impl std::str::FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "machine" | "json" => Ok(Format::Machine),
            "text" => Ok(Format::Text),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn render(report: &TestReport, format: Format) -> String {
    match format {
        Format::Machine => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => render_text(report),
    }
}

pub fn parse_machine(text: &str) -> Result<TestReport, ReportError> {
    Ok(serde_json::from_str(text)?)
}

fn render_text(r: &TestReport) -> String {
    let mut s = String::new();
    let d = &r.dashboard;
    let _ = writeln!(s, "MANAGEMENT SUMMARY\n{}\n", r.management_summary);
    let _ = writeln!(s, "SUT\n{}\n", r.sut_description);
    let start = r.timestamps.start_time.map(|t| t.to_rfc3339()).unwrap_or_else(|| "-".into());
    let _ = writeln!(s, "TEST PERIOD\nstart {start}, duration {} ms\n", r.timestamps.duration_ms);
    let _ = writeln!(
        s,
        "DASHBOARD\npass {}  fail {}  error {}  inconclusive {}  untested {}  total {}\n",
        d.pass,
        d.fail,
        d.error,
        d.inconclusive,
        d.untested,
        d.total()
    );
    let methods: Vec<&str> = r.methods_used.iter().map(|m| m.as_str()).collect();
    let _ = writeln!(s, "METHODS\n{}\n", if methods.is_empty() { "-".into() } else { methods.join(", ") });
    let _ = writeln!(s, "FINDINGS");
    for f in &r.findings {
        let _ = writeln!(s, "[{}] {} severity {}", f.verdict.as_str().to_uppercase(), f.case_ref, f.severity);
        let _ = writeln!(
            s,
            "  goal {} <- requirement {} <- threat {}",
            f.links.goal.join(","),
            f.links.requirement.join(","),
            f.links.threat.join(",")
        );
        if !f.summary.is_empty() {
            let _ = writeln!(s, "  {}", f.summary);
        }
        let _ = writeln!(s, "  raw data {}; tools {}", f.links.raw_result, f.links.tools.join(","));
        for c in &f.regulation_conflicts {
            let _ = writeln!(s, "  conflict: {c}");
        }
    }
    let _ = writeln!(s, "\nNOT TESTED");
    for u in &r.untested {
        let reason = serde_json::to_value(u.reason).expect("reason serializes");
        let _ = writeln!(s, "{} ({}): {}", u.case_ref, reason.as_str().unwrap_or_default(), u.detail);
    }
    if !r.integrity_violations.is_empty() {
        let _ = writeln!(s, "\nINTEGRITY VIOLATIONS");
        for v in &r.integrity_violations {
            let _ = writeln!(s, "{v}");
        }
    }
    s
}
