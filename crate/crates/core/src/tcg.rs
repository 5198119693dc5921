//! Test case generation: scenarios bound to SUT data and scripts, with t-way
//! combinatorial coverage over placeholder domains.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Method;
use crate::scenario_dsl::{self, EnvSpec, Issue, OracleSpec, Scenario, Step, Value, Vocabulary, DEFAULT_WITHIN_MS};
use crate::script_registry::{Registry, RenderError};

/// Candidate rows are scanned exhaustively up to this many.
const EXHAUSTIVE_LIMIT: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TcgError {
    #[error("strength {t} is outside 1..={k}")]
    Strength { t: usize, k: usize },
    #[error("parameter `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("scenario `{scenario}` does not validate: {issues:?}")]
    Invalid { scenario: String, issues: Vec<Issue> },
    #[error("no script implements pattern `{0}` with the given arguments")]
    ScriptMiss(String),
    #[error("placeholder `${0}` has no domain in the SUT database")]
    UnresolvedPlaceholder(String),
    #[error("scenario `{0}` has no requirement or threat references")]
    MissingTraceability(String),
    #[error("command rendering failed: {0}")]
    Render(#[from] RenderError),
    #[error("cannot read SUT database: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    /// Integer range expanded to its boundary values.
    Range { range: [u64; 2] },
    List(Vec<Value>),
}

impl DomainSpec {
    pub fn values(&self) -> Vec<Value> {
        match self {
            DomainSpec::List(v) => v.clone(),
            DomainSpec::Range { range: [lo, hi] } if lo > hi => Vec::new(),
            DomainSpec::Range { range: [lo, hi] } => {
                let set: BTreeSet<u64> = [*lo, lo.saturating_add(1).min(*hi), hi.saturating_sub(1).max(*lo), *hi].into();
                set.into_iter().map(Value::Int).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SutDatabase {
    pub sut_id: String,
    #[serde(default)]
    pub description: String,
    /// Logical interface name to `host:port,host:port`.
    #[serde(default)]
    pub endpoints: BTreeMap<String, String>,
    /// Values consumed by script templates.
    #[serde(default)]
    pub slots: BTreeMap<String, Value>,
    #[serde(default)]
    pub domains: BTreeMap<String, DomainSpec>,
    /// Named frame lists in wire form.
    #[serde(default)]
    pub dictionaries: BTreeMap<String, Vec<String>>,
}

impl SutDatabase {
    pub fn from_json(text: &str) -> Result<Self, TcgError> {
        serde_json::from_str(text).map_err(|e| TcgError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TcgError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TcgError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn bundled() -> Self {
        Self::from_json(crate::bundled::SUTDB).expect("bundled SUT database parses")
    }

    pub fn domain(&self, name: &str) -> Option<Vec<Value>> {
        self.domains.get(name).map(DomainSpec::values)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringArray {
    pub parameters: Vec<(String, Vec<Value>)>,
    pub strength: usize,
    pub rows: Vec<Vec<Value>>,
}

fn combinations(k: usize, t: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, k: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            go(i + 1, k, t, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, k, t, &mut Vec::new(), &mut out);
    out
}

struct Coverage<'a> {
    levels: &'a [usize],
    combos: Vec<Vec<usize>>,
    covered: Vec<Vec<bool>>,
    remaining: usize,
}

impl<'a> Coverage<'a> {
    fn new(levels: &'a [usize], t: usize) -> Self {
        let combos = combinations(levels.len(), t);
        let covered: Vec<Vec<bool>> = combos
            .iter()
            .map(|c| vec![false; c.iter().map(|&p| levels[p]).product()])
            .collect();
        let remaining = covered.iter().map(Vec::len).sum();
        Self {
            levels,
            combos,
            covered,
            remaining,
        }
    }

    fn code(&self, combo: &[usize], row: &[Option<usize>]) -> Option<usize> {
        combo
            .iter()
            .try_fold(0usize, |acc, &p| row[p].map(|v| acc * self.levels[p] + v))
    }

    /// New tuples `row` would cover; unassigned parameters contribute nothing.
    fn gain(&self, row: &[Option<usize>]) -> usize {
        self.combos
            .iter()
            .zip(&self.covered)
            .filter(|(c, cov)| self.code(c, row).is_some_and(|code| !cov[code]))
            .count()
    }

    fn mark(&mut self, row: &[usize]) {
        let row: Vec<Option<usize>> = row.iter().copied().map(Some).collect();
        for i in 0..self.combos.len() {
            let code = self.code(&self.combos[i], &row).expect("full row");
            if !self.covered[i][code] {
                self.covered[i][code] = true;
                self.remaining -= 1;
            }
        }
    }

    /// Lexicographically first uncovered tuple as a partial row.
    fn first_uncovered(&self) -> Vec<Option<usize>> {
        let mut best: Option<Vec<Option<usize>>> = None;
        for (combo, cov) in self.combos.iter().zip(&self.covered) {
            let Some(code) = cov.iter().position(|c| !c) else { continue };
            let mut row = vec![None; self.levels.len()];
            let mut rest = code;
            for &p in combo.iter().rev() {
                row[p] = Some(rest % self.levels[p]);
                rest /= self.levels[p];
            }
            let key = |r: &Vec<Option<usize>>| r.iter().map(|v| v.map_or(usize::MAX, |x| x)).collect::<Vec<_>>();
            if best.as_ref().is_none_or(|b| key(&row) < key(b)) {
                best = Some(row);
            }
        }
        best.expect("something uncovered")
    }
}

fn decode(mut n: usize, levels: &[usize]) -> Vec<usize> {
    let mut row = vec![0; levels.len()];
    for p in (0..levels.len()).rev() {
        row[p] = n % levels[p];
        n /= levels[p];
    }
    row
}

/// Greedy rows over index domains `0..levels[i]`.
fn greedy_rows(levels: &[usize], t: usize) -> Vec<Vec<usize>> {
    let mut cov = Coverage::new(levels, t);
    let product = levels.iter().try_fold(1usize, |acc, &l| acc.checked_mul(l));
    let mut rows = Vec::new();
    while cov.remaining > 0 {
        let row = match product.filter(|&p| p <= EXHAUSTIVE_LIMIT) {
            Some(p) => {
                let mut best = (0, Vec::new());
                for n in 0..p {
                    let cand = decode(n, levels);
                    let g = cov.gain(&cand.iter().copied().map(Some).collect::<Vec<_>>());
                    if g > best.0 {
                        best = (g, cand);
                    }
                }
                best.1
            }
            None => {
                let mut partial = cov.first_uncovered();
                for p in 0..levels.len() {
                    if partial[p].is_some() {
                        continue;
                    }
                    let mut best = (0, 0);
                    for v in 0..levels[p] {
                        partial[p] = Some(v);
                        let g = cov.gain(&partial);
                        if g > best.0 {
                            best = (g, v);
                        }
                    }
                    partial[p] = Some(best.1);
                }
                partial.into_iter().map(|v| v.expect("assigned")).collect()
            }
        };
        cov.mark(&row);
        rows.push(row);
    }
    rows
}

pub fn covering_array(parameters: &[(String, Vec<Value>)], t: usize) -> Result<CoveringArray, TcgError> {
    let k = parameters.len();
    if t == 0 || t > k {
        return Err(TcgError::Strength { t, k });
    }
    if let Some((name, _)) = parameters.iter().find(|(_, d)| d.is_empty()) {
        return Err(TcgError::EmptyDomain(name.clone()));
    }
    let levels: Vec<usize> = parameters.iter().map(|(_, d)| d.len()).collect();
    let rows = greedy_rows(&levels, t)
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(p, &v)| parameters[p].1[v].clone()).collect())
        .collect();
    Ok(CoveringArray {
        parameters: parameters.to_vec(),
        strength: t,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activity {
    Mva {
        script_ref: String,
        pattern: String,
        args: BTreeMap<String, Value>,
        command: String,
    },
    Expect {
        matcher: String,
        args: BTreeMap<String, Value>,
        within_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traceability {
    pub requirement_refs: Vec<String>,
    pub threat_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub scenario_ref: String,
    pub method: Method,
    pub purpose: String,
    pub sut_description: String,
    pub environmental_needs: EnvSpec,
    pub procedural_requirements: Vec<String>,
    pub activities: Vec<Activity>,
    /// Bound step arguments keyed `<step>.<arg>`.
    pub input_data: BTreeMap<String, Value>,
    pub expected_results: Vec<String>,
    pub oracle: OracleSpec,
    pub traceability: Traceability,
    /// The covering-array row this case was built from.
    pub variability: BTreeMap<String, Value>,
}

impl TestCase {
    pub fn mva_count(&self) -> usize {
        self.activities.iter().filter(|a| matches!(a, Activity::Mva { .. })).count()
    }
}

fn bind(args: &BTreeMap<String, Value>, row: &BTreeMap<String, Value>) -> BTreeMap<String, Value> {
    args.iter()
        .map(|(k, v)| {
            let v = match v {
                Value::Placeholder(p) => row.get(p).cloned().unwrap_or_else(|| v.clone()),
                other => other.clone(),
            };
            (k.clone(), v)
        })
        .collect()
}

fn call(name: &str, args: &BTreeMap<String, Value>) -> String {
    let inner: Vec<String> = args.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{name}({})", inner.join(", "))
}

/// One case per covering-array row over the scenario's placeholders.
pub fn generate_cases(
    scenario: &Scenario,
    sutdb: &SutDatabase,
    registry: &Registry,
    t: usize,
) -> Result<Vec<TestCase>, TcgError> {
    let issues = scenario_dsl::validate(scenario, &Vocabulary::standard());
    if !issues.is_empty() {
        return Err(TcgError::Invalid {
            scenario: scenario.id.clone(),
            issues,
        });
    }
    if scenario.meta.requirement_refs.is_empty() && scenario.meta.threat_refs.is_empty() {
        return Err(TcgError::MissingTraceability(scenario.id.clone()));
    }
    let mut params = Vec::new();
    for name in scenario.placeholders() {
        match sutdb.domain(&name) {
            Some(d) if !d.is_empty() => params.push((name, d)),
            _ => return Err(TcgError::UnresolvedPlaceholder(name)),
        }
    }
    let rows: Vec<BTreeMap<String, Value>> = if params.is_empty() {
        vec![BTreeMap::new()]
    } else {
        let array = covering_array(&params, t.clamp(1, params.len()))?;
        array
            .rows
            .into_iter()
            .map(|r| params.iter().map(|(n, _)| n.clone()).zip(r).collect())
            .collect()
    };

    let mut procedural: Vec<String> = scenario.env.preconditions.iter().map(|p| format!("precondition {p} holds")).collect();
    procedural.push("capture a pre-attack snapshot before sending traffic".into());
    procedural.push("restore the snapshot and compare a fresh dump after the case".into());
    let sut_description = if sutdb.description.is_empty() {
        sutdb.sut_id.clone()
    } else {
        format!("{} ({})", sutdb.description, sutdb.sut_id)
    };
    let refs = if scenario.meta.requirement_refs.is_empty() {
        scenario.meta.threat_refs.join(", ")
    } else {
        scenario.meta.requirement_refs.join(", ")
    };

    let mut cases = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let mut activities = Vec::new();
        let mut input_data = BTreeMap::new();
        let mut expected = Vec::new();
        for (n, step) in scenario.steps.iter().enumerate() {
            let args = bind(step.args(), &row);
            for (k, v) in &args {
                input_data.insert(format!("{n}.{k}"), v.clone());
            }
            match step {
                Step::Pattern { name, .. } => {
                    let bound = Step::Pattern {
                        name: name.clone(),
                        args: args.clone(),
                    };
                    let script = registry.match_script(&bound).ok_or_else(|| TcgError::ScriptMiss(name.clone()))?;
                    let command = script.render(&args, &sutdb.slots)?;
                    activities.push(Activity::Mva {
                        script_ref: script.id.clone(),
                        pattern: name.clone(),
                        args,
                        command,
                    });
                }
                Step::Expect { matcher, within_ms, .. } => {
                    let within = within_ms.unwrap_or(DEFAULT_WITHIN_MS);
                    expected.push(format!("{} within {within}ms", call(matcher, &args)));
                    activities.push(Activity::Expect {
                        matcher: matcher.clone(),
                        args,
                        within_ms: within,
                    });
                }
            }
        }
        expected.push(format!("pass when {}, fail when {}", scenario.oracle.pass, scenario.oracle.fail));
        let mut env = scenario.env.clone();
        for b in env.interfaces.values_mut() {
            b.params = bind(&b.params, &row);
        }
        cases.push(TestCase {
            id: format!("{}-c{i:03}", scenario.id),
            scenario_ref: scenario.id.clone(),
            method: scenario.meta.method,
            purpose: format!("{} test of {refs} ({})", scenario.meta.method, scenario.id),
            sut_description: sut_description.clone(),
            environmental_needs: env,
            procedural_requirements: procedural.clone(),
            activities,
            input_data,
            expected_results: expected,
            oracle: scenario.oracle.clone(),
            traceability: Traceability {
                requirement_refs: scenario.meta.requirement_refs.clone(),
                threat_refs: scenario.meta.threat_refs.clone(),
                risk_ref: scenario.meta.risk_ref.clone(),
            },
            variability: row,
        });
    }
    Ok(cases)
}
