//! Test planning: risk-driven method selection and scenario generation for
//! penetration (attack trees), functional, fuzz and vulnerability-scan tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{Method, Risk, SecurityRequirement, Threat};
use crate::hex::ServiceId;
use crate::item_model::{Exposure, Interface, Item};
use crate::scenario_dsl::{EnvSpec, InterfaceBinding, Meta, OracleSpec, Scenario, Step, Value, Vocabulary};
use crate::sut_sim::{SVC_SECURITY_ACCESS, SVC_WRITE_DID};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("requirement `{requirement}` (risk {value}) has no applicable method under the policy")]
    NoApplicableMethod { requirement: String, value: u8 },
    #[error("requirement `{0}` has no target function")]
    NoTargetFunction(String),
    #[error("requirement `{0}` is not verified functionally")]
    NotFunctional(String),
    #[error("requirement `{requirement}` derives from unknown threat `{threat}`")]
    UnknownThreat { requirement: String, threat: String },
    #[error("no risk was assessed for threat `{0}`")]
    MissingRisk(String),
    #[error("fuzz budget must be positive")]
    ZeroBudget,
    #[error("item `{0}` has no external interface to scan")]
    NoExternalInterface(String),
    #[error("attack tree has an empty {0} node")]
    EmptyNode(&'static str),
    #[error("attack tree leaf uses unknown pattern `{0}`")]
    UnknownLeafPattern(String),
    #[error("cannot parse attack trees: {0}")]
    Parse(String),
}

// ---------------------------------------------------------------------------
// attack trees

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    And { children: Vec<Node> },
    Or { children: Vec<Node> },
    Leaf {
        pattern: String,
        #[serde(default)]
        args: BTreeMap<String, Value>,
    },
}

impl Node {
    pub fn leaf(pattern: &str) -> Self {
        Node::Leaf {
            pattern: pattern.to_string(),
            args: BTreeMap::new(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::And { children } | Node::Or { children } => children.iter().map(Node::leaf_count).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackTree {
    #[serde(default)]
    pub title: String,
    /// Matchers appended after each vector's steps.
    #[serde(default)]
    pub expect: Vec<String>,
    pub root: Node,
}

pub type AttackTreeLibrary = BTreeMap<String, AttackTree>;

pub fn parse_attack_trees(text: &str) -> Result<AttackTreeLibrary, PlanError> {
    let lib: AttackTreeLibrary = serde_json::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?;
    let vocab = Vocabulary::standard();
    for tree in lib.values() {
        tree.validate(&vocab)?;
    }
    Ok(lib)
}

impl AttackTree {
    /// A kill chain: every stage is required, in order.
    pub fn kill_chain(title: &str, stages: Vec<Node>) -> Self {
        Self {
            title: title.to_string(),
            expect: Vec::new(),
            root: Node::And { children: stages },
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), PlanError> {
        fn walk(n: &Node, vocab: &Vocabulary) -> Result<(), PlanError> {
            match n {
                Node::Leaf { pattern, .. } if !vocab.patterns.contains(pattern) => {
                    Err(PlanError::UnknownLeafPattern(pattern.clone()))
                }
                Node::Leaf { .. } => Ok(()),
                Node::And { children } if children.is_empty() => Err(PlanError::EmptyNode("and")),
                Node::Or { children } if children.is_empty() => Err(PlanError::EmptyNode("or")),
                Node::And { children } | Node::Or { children } => children.iter().try_for_each(|c| walk(c, vocab)),
            }
        }
        walk(&self.root, vocab)
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<(&str, &BTreeMap<String, Value>)> {
        fn walk<'a>(n: &'a Node, out: &mut Vec<(&'a str, &'a BTreeMap<String, Value>)>) {
            match n {
                Node::Leaf { pattern, args } => out.push((pattern, args)),
                Node::And { children } | Node::Or { children } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorStep {
    /// Left-to-right leaf index.
    pub position: usize,
    pub pattern: String,
    pub args: BTreeMap<String, Value>,
}

/// Leaf-position sets satisfying `node`, before minimization.
fn cut_sets(node: &Node, next_leaf: &mut usize) -> BTreeSet<BTreeSet<usize>> {
    match node {
        Node::Leaf { .. } => {
            let i = *next_leaf;
            *next_leaf += 1;
            BTreeSet::from([BTreeSet::from([i])])
        }
        Node::Or { children } => children.iter().flat_map(|c| cut_sets(c, next_leaf)).collect(),
        Node::And { children } => children.iter().fold(BTreeSet::from([BTreeSet::new()]), |acc, c| {
            let sets = cut_sets(c, next_leaf);
            acc.iter()
                .flat_map(|a| sets.iter().map(move |b| a.union(b).copied().collect()))
                .collect()
        }),
    }
}

/// Minimal leaf sets satisfying the root, each in tree order, listed in
/// lexicographic order of their leaf positions.
pub fn enumerate_attack_vectors(tree: &AttackTree) -> Vec<Vec<VectorStep>> {
    let all = cut_sets(&tree.root, &mut 0);
    let minimal: Vec<&BTreeSet<usize>> = all
        .iter()
        .filter(|s| !all.iter().any(|o| o.len() < s.len() && o.is_subset(s)))
        .collect();
    let leaves = tree.leaves();
    minimal
        .into_iter()
        .map(|set| {
            set.iter()
                .map(|&i| VectorStep {
                    position: i,
                    pattern: leaves[i].0.to_string(),
                    args: leaves[i].1.clone(),
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// policy and plan

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyBand {
    pub min: u8,
    pub max: u8,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub bands: Vec<PolicyBand>,
}

impl Default for Policy {
    fn default() -> Self {
        let band = |min, max, methods: &[Method]| PolicyBand {
            min,
            max,
            methods: methods.to_vec(),
        };
        Self {
            bands: vec![
                band(12, 16, &[Method::Penetration, Method::Fuzz]),
                band(8, 11, &[Method::Penetration]),
                band(4, 7, &[Method::Functional, Method::Vulnscan]),
            ],
        }
    }
}

impl Policy {
    pub fn methods_for(&self, value: u8) -> Option<&[Method]> {
        self.bands
            .iter()
            .find(|b| (b.min..=b.max).contains(&value))
            .map(|b| b.methods.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub max_duration_ms: u64,
    pub stop_on_error: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPlan {
    pub purpose: String,
    pub sut_overview: String,
    pub scope: Vec<String>,
    pub risk_ref: String,
    pub strategy: BTreeMap<Method, String>,
    pub environment: EnvSpec,
    pub case_specs: Vec<String>,
    pub termination: Termination,
}

impl TestPlan {
    /// Names of empty plan elements; empty when the plan is complete.
    pub fn missing_elements(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.purpose.is_empty() {
            out.push("purpose");
        }
        if self.sut_overview.is_empty() {
            out.push("sut_overview");
        }
        if self.scope.is_empty() {
            out.push("scope");
        }
        if self.risk_ref.is_empty() {
            out.push("risk_ref");
        }
        if self.strategy.is_empty() {
            out.push("strategy");
        }
        if self.environment.interfaces.is_empty() {
            out.push("environment");
        }
        if self.termination.max_duration_ms == 0 {
            out.push("termination");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzSettings {
    pub budget: u64,
    pub seed: u64,
    pub corpus: String,
}

impl Default for FuzzSettings {
    fn default() -> Self {
        Self {
            budget: 10_000,
            seed: 1,
            corpus: "diag_corpus".into(),
        }
    }
}

pub struct PlanContext<'a> {
    pub policy: &'a Policy,
    pub attack_trees: &'a AttackTreeLibrary,
    pub fuzz: FuzzSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planned {
    pub plan: TestPlan,
    pub scenarios: Vec<Scenario>,
}

/// Short content hash identifying the risk snapshot a plan was built from.
pub fn risk_snapshot_id(risks: &[Risk]) -> String {
    let digest = Sha256::digest(serde_json::to_vec(risks).expect("risks serialize"));
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("risk-{hex}")
}

fn binding(iface: &Interface) -> (String, InterfaceBinding) {
    let mut params = BTreeMap::new();
    if !iface.address.bus.is_empty() {
        params.insert("bus".to_string(), Value::Str(iface.address.bus.clone()));
    }
    (iface.id.clone(), InterfaceBinding { kind: iface.kind, params })
}

fn env_for<'a>(ifaces: impl IntoIterator<Item = &'a Interface>) -> EnvSpec {
    EnvSpec {
        interfaces: ifaces.into_iter().map(binding).collect(),
        preconditions: vec!["sut_alive".into()],
    }
}

fn threat_for<'a>(req: &SecurityRequirement, threats: &'a [Threat]) -> Result<&'a Threat, PlanError> {
    let id = req.derived_from.first().ok_or_else(|| PlanError::NoTargetFunction(req.id.clone()))?;
    threats.iter().find(|t| &t.id == id).ok_or_else(|| PlanError::UnknownThreat {
        requirement: req.id.clone(),
        threat: id.clone(),
    })
}

fn traced_meta(method: Method, req: &SecurityRequirement) -> Meta {
    let mut meta = Meta::new(method);
    meta.requirement_refs = vec![req.id.clone()];
    meta.threat_refs = req.derived_from.clone();
    meta.risk_ref = req.derived_from.first().cloned();
    meta
}

fn svc(s: u8) -> Value {
    Value::hex(&[s])
}

/// The request exercising `function`, as a pattern step.
fn operation(service: u8) -> (Step, Vec<&'static str>) {
    if service == SVC_WRITE_DID {
        let step = Step::pattern(
            "WRITE_DATA",
            [("did", Value::placeholder("DID")), ("data", Value::placeholder("DATA"))],
        );
        return (step, vec!["DID", "DATA"]);
    }
    let step = Step::pattern(
        "SEND_CAN_MSG",
        [("id", Value::placeholder("REQ_ID")), ("data", Value::hex(&[0x01, service]))],
    );
    (step, vec!["REQ_ID"])
}

/// Positive and negative functional scenarios for one requirement: the
/// positive one runs the protected function with the vendor unlock in the
/// programming session and expects success, the negative one skips the unlock
/// and expects refusal.
pub fn gen_functional_scenarios(
    req: &SecurityRequirement,
    item: &Item,
    threats: &[Threat],
) -> Result<(Scenario, Scenario), PlanError> {
    if !matches!(req.verification_hint, Method::Functional | Method::Interface) {
        return Err(PlanError::NotFunctional(req.id.clone()));
    }
    let threat = threat_for(req, threats)?;
    let function = item
        .function(&threat.target)
        .filter(|f| !f.services.is_empty())
        .ok_or_else(|| PlanError::NoTargetFunction(req.id.clone()))?;
    let ServiceId(service) = function.services[0];
    let env = env_for(function.interface_ref.as_deref().and_then(|i| item.interface(i)));
    let method = req.verification_hint;
    let oracle = OracleSpec::new("expect.all", "expect.any_unmet");
    let session = |v: Value| Step::pattern("SESSION_CONTROL", [("session", v)]);
    let unlock = |alg: &str| Step::pattern("SECURITY_ACCESS", [("algorithm", Value::str(alg))]);
    let expect = |m: &str| Step::expect(m, [("service", svc(service))], Some(crate::scenario_dsl::DEFAULT_WITHIN_MS));

    let (pos_steps, pos_domains, neg_steps, neg_domains) = if service == SVC_SECURITY_ACCESS {
        (
            vec![session(svc(0x03)), unlock("vendor"), expect("POSITIVE_RESPONSE")],
            vec![],
            vec![session(svc(0x03)), unlock("zero"), expect("NEGATIVE_RESPONSE")],
            vec![],
        )
    } else {
        let (op, domains) = operation(service);
        let mut neg_domains = domains.clone();
        neg_domains.push("SESSION");
        (
            vec![session(svc(0x03)), unlock("vendor"), op.clone(), expect("POSITIVE_RESPONSE")],
            domains,
            vec![session(Value::placeholder("SESSION")), op, expect("NEGATIVE_RESPONSE")],
            neg_domains,
        )
    };
    let build = |id: String, steps: Vec<Step>, domains: Vec<&str>| {
        let mut meta = traced_meta(method, req);
        meta.domains = domains.into_iter().map(str::to_string).collect();
        Scenario {
            id,
            meta,
            env: env.clone(),
            steps,
            oracle: oracle.clone(),
        }
        .normalized()
    };
    Ok((
        build(format!("SC-FUNC-POS-{}", req.id), pos_steps, pos_domains),
        build(format!("SC-FUNC-NEG-{}", req.id), neg_steps, neg_domains),
    ))
}

pub fn gen_fuzz_scenario(interface: &Interface, budget: u64, corpus_ref: &str, seed: u64) -> Result<Scenario, PlanError> {
    if budget == 0 {
        return Err(PlanError::ZeroBudget);
    }
    Ok(Scenario {
        id: format!("SC-FUZZ-{}", interface.id),
        meta: Meta::new(Method::Fuzz),
        env: env_for([interface]),
        steps: vec![
            Step::pattern(
                "FUZZ_CAMPAIGN",
                [
                    ("budget", Value::Int(budget)),
                    ("seed", Value::Int(seed)),
                    ("corpus", Value::str(corpus_ref)),
                ],
            ),
            Step::pattern("PROBE_ALIVE", []),
            Step::expect("ALIVE", [], None),
        ],
        oracle: OracleSpec::new("sut.alive", "sut.crashed"),
    })
}

pub fn gen_vulnscan_scenario(item: &Item) -> Result<Scenario, PlanError> {
    let external: Vec<&Interface> = item.external_interfaces().collect();
    if external.is_empty() {
        return Err(PlanError::NoExternalInterface(item.id.clone()));
    }
    let mut steps: Vec<Step> = external
        .iter()
        .map(|i| Step::pattern("SELECT_TARGET", [("iface", Value::Str(i.id.clone()))]))
        .collect();
    steps.push(Step::pattern("SELECT_TOOL", [("tool", Value::str("internal"))]));
    steps.push(Step::pattern("RUN_SCAN", []));
    steps.push(Step::pattern("ANALYZE_SCAN_REPORT", [("min_severity", Value::Int(1))]));
    steps.push(Step::pattern("EMIT_FOLLOWUPS", []));
    Ok(Scenario {
        id: format!("SC-VULN-{}", item.id),
        meta: Meta::new(Method::Vulnscan),
        env: env_for(external),
        steps,
        oracle: OracleSpec::new("scan.clean", "scan.finding"),
    })
}

/// One scenario per attack vector of `tree`.
pub fn gen_penetration_scenarios(
    req: &SecurityRequirement,
    tree: &AttackTree,
    env: &EnvSpec,
) -> Vec<Scenario> {
    enumerate_attack_vectors(tree)
        .into_iter()
        .enumerate()
        .map(|(n, vector)| {
            let mut steps: Vec<Step> = vector
                .into_iter()
                .map(|v| Step::Pattern {
                    name: v.pattern,
                    args: v.args,
                })
                .collect();
            steps.extend(tree.expect.iter().map(|m| Step::expect(m, [], None)));
            Scenario {
                id: format!("SC-PEN-{}-V{}", req.id, n + 1),
                meta: traced_meta(Method::Penetration, req),
                env: env.clone(),
                steps,
                oracle: OracleSpec::new("expect.all", "expect.any_unmet"),
            }
            .normalized()
        })
        .collect()
}

/// Interface a threat target sits on.
fn target_interface<'a>(item: &'a Item, target: &str) -> Option<&'a Interface> {
    item.interface(target).or_else(|| {
        item.function(target)
            .and_then(|f| f.interface_ref.as_deref())
            .and_then(|i| item.interface(i))
    })
}

fn merge_into(scenarios: &mut Vec<Scenario>, fresh: Scenario, req: &SecurityRequirement) {
    let s = match scenarios.iter_mut().find(|s| s.id == fresh.id) {
        Some(s) => s,
        None => {
            scenarios.push(fresh);
            scenarios.last_mut().expect("just pushed")
        }
    };
    s.meta.requirement_refs.push(req.id.clone());
    s.meta.threat_refs.extend(req.derived_from.iter().cloned());
    s.meta.risk_ref.get_or_insert_with(|| req.derived_from[0].clone());
    s.normalize();
}

fn strategy_prose(policy: &Policy) -> BTreeMap<Method, String> {
    let mut out: BTreeMap<Method, String> = BTreeMap::new();
    for band in &policy.bands {
        for m in &band.methods {
            let line = format!("risk {}..{}", band.min, band.max);
            out.entry(*m)
                .and_modify(|s| {
                    s.push_str(", ");
                    s.push_str(&line);
                })
                .or_insert(line);
        }
    }
    for (m, text) in out.iter_mut() {
        let why = match m {
            Method::Penetration => "attack-tree vectors replayed against the SUT",
            Method::Fuzz => "seeded mutation campaign with liveness monitoring",
            Method::Functional => "positive and negative requirement checks",
            Method::Interface => "interface-level requirement checks",
            Method::Vulnscan => "fingerprint matched against the vulnerability database",
        };
        *text = format!("{why} for {text}");
    }
    out
}

/// Assembles the plan and its scenarios. `risks` must cover every threat a
/// requirement derives from.
pub fn build_plan(
    item: &Item,
    threats: &[Threat],
    risks: &[Risk],
    requirements: &[SecurityRequirement],
    ctx: &PlanContext<'_>,
) -> Result<Planned, PlanError> {
    let mut scenarios: Vec<Scenario> = Vec::new();
    for req in requirements {
        let mut value = None;
        for t in &req.derived_from {
            let r = risks
                .iter()
                .find(|r| &r.threat_ref == t)
                .ok_or_else(|| PlanError::MissingRisk(t.clone()))?;
            value = value.max(Some(r.value));
        }
        let value = value.ok_or_else(|| PlanError::MissingRisk(req.id.clone()))?;
        let no_method = || PlanError::NoApplicableMethod {
            requirement: req.id.clone(),
            value,
        };
        let methods = ctx.policy.methods_for(value).ok_or_else(no_method)?;
        let threat = threat_for(req, threats)?;
        let iface = target_interface(item, &threat.target);
        let mut produced = false;
        for method in methods {
            match method {
                Method::Penetration => {
                    if let Some(tree) = ctx.attack_trees.get(&threat.threat_class) {
                        let env = env_for(iface);
                        scenarios.extend(gen_penetration_scenarios(req, tree, &env));
                        produced = true;
                    }
                }
                Method::Functional | Method::Interface => {
                    if let Ok((pos, neg)) = gen_functional_scenarios(req, item, threats) {
                        scenarios.push(pos);
                        scenarios.push(neg);
                        produced = true;
                    }
                }
                Method::Vulnscan => {
                    if let Ok(s) = gen_vulnscan_scenario(item) {
                        merge_into(&mut scenarios, s, req);
                        produced = true;
                    }
                }
                Method::Fuzz => {
                    if let Some(i) = iface.filter(|i| i.exposure == Exposure::External) {
                        let s = gen_fuzz_scenario(i, ctx.fuzz.budget, &ctx.fuzz.corpus, ctx.fuzz.seed)?;
                        merge_into(&mut scenarios, s, req);
                        produced = true;
                    }
                }
            }
        }
        if !produced {
            return Err(no_method());
        }
    }
    let external: Vec<String> = item.external_interfaces().map(|i| i.id.clone()).collect();
    let scope = if external.is_empty() {
        item.interfaces.iter().map(|i| i.id.clone()).collect()
    } else {
        external
    };
    let list = |xs: Vec<&str>| xs.join(", ");
    let plan = TestPlan {
        purpose: format!(
            "Verify the security requirements of {} ({}) derived from its threat analysis",
            item.name, item.id
        ),
        sut_overview: format!(
            "{}. Components: {}. Interfaces: {}.",
            item.boundary,
            list(item.components.iter().map(|c| c.name.as_str()).collect()),
            list(item.interfaces.iter().map(|i| i.id.as_str()).collect()),
        ),
        scope,
        risk_ref: risk_snapshot_id(risks),
        strategy: strategy_prose(ctx.policy),
        environment: env_for(&item.interfaces),
        case_specs: scenarios.iter().map(|s| s.id.clone()).collect(),
        termination: Termination {
            max_duration_ms: 600_000,
            stop_on_error: false,
        },
    };
    Ok(Planned { plan, scenarios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{self, ImpactVector};
    use crate::bundled;
    use crate::scenario_dsl::{parse_scenario, serialize, validate};
    use proptest::prelude::*;

    fn leaf(p: &str) -> Node {
        Node::leaf(p)
    }

    fn tree(root: Node) -> AttackTree {
        AttackTree {
            title: String::new(),
            expect: vec![],
            root,
        }
    }

    fn names(vs: &[Vec<VectorStep>]) -> Vec<Vec<String>> {
        vs.iter().map(|v| v.iter().map(|s| s.pattern.clone()).collect()).collect()
    }

    #[test]
    fn small_trees() {
        assert_eq!(names(&enumerate_attack_vectors(&tree(leaf("A")))), vec![vec!["A"]]);
        let or = Node::Or { children: vec![leaf("A"), leaf("B")] };
        assert_eq!(names(&enumerate_attack_vectors(&tree(or))), vec![vec!["A"], vec!["B"]]);
        let and = Node::And {
            children: vec![leaf("A"), Node::Or { children: vec![leaf("B"), leaf("C")] }],
        };
        assert_eq!(
            names(&enumerate_attack_vectors(&tree(and))),
            vec![vec!["A", "B"], vec!["A", "C"]]
        );
    }

    #[test]
    fn or_of_and_expands_in_order() {
        let t = tree(Node::Or {
            children: vec![
                leaf("A"),
                Node::And {
                    children: vec![leaf("B"), Node::Or { children: vec![leaf("C"), leaf("D")] }],
                },
            ],
        });
        assert_eq!(names(&enumerate_attack_vectors(&t)), vec![vec!["A"], vec!["B", "C"], vec!["B", "D"]]);
    }

    fn satisfied(n: &Node, set: u32, next: &mut usize) -> bool {
        match n {
            Node::Leaf { .. } => {
                let i = *next;
                *next += 1;
                set & (1 << i) != 0
            }
            Node::And { children } => children.iter().fold(true, |acc, c| satisfied(c, set, next) && acc),
            Node::Or { children } => children.iter().fold(false, |acc, c| satisfied(c, set, next) || acc),
        }
    }

    /// Powerset oracle: satisfying sets with no satisfying proper subset.
    fn brute_force(t: &AttackTree) -> BTreeSet<Vec<usize>> {
        let n = t.root.leaf_count();
        let sat: Vec<u32> = (0u32..1 << n).filter(|s| satisfied(&t.root, *s, &mut 0)).collect();
        sat.iter()
            .filter(|s| !sat.iter().any(|o| *o != **s && *o & **s == *o))
            .map(|s| (0..n).filter(|i| s & (1 << i) != 0).collect())
            .collect()
    }

    pub(crate) fn arb_tree() -> impl Strategy<Value = Node> {
        let leaf = Just(()).prop_map(|_| Node::leaf("SEND_CAN_MSG"));
        leaf.prop_recursive(3, 10, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(|children| Node::And { children }),
                prop::collection::vec(inner, 1..4).prop_map(|children| Node::Or { children }),
            ]
        })
        .prop_filter("at most 10 leaves", |n| n.leaf_count() <= 10)
    }

    proptest! {
        #[test]
        fn vectors_equal_brute_force(root in arb_tree()) {
            let t = tree(root);
            let got = enumerate_attack_vectors(&t);
            let positions: Vec<Vec<usize>> = got.iter().map(|v| v.iter().map(|s| s.position).collect()).collect();
            for p in &positions {
                prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
            }
            let mut sorted = positions.clone();
            sorted.sort();
            prop_assert_eq!(&positions, &sorted);
            prop_assert_eq!(positions.into_iter().collect::<BTreeSet<_>>(), brute_force(&t));
        }
    }

    #[test]
    fn bundled_tree_yields_two_vectors() {
        let lib = parse_attack_trees(bundled::ATTACK_TREES).unwrap();
        let vs = enumerate_attack_vectors(&lib["weak_authentication"]);
        assert_eq!(vs.len(), 2);
        assert_eq!(vs[0][1].args["algorithm"], Value::str("xor-a5a5"));
        assert!(tree(Node::And { children: vec![] }).validate(&Vocabulary::standard()).is_err());
        assert!(tree(leaf("FROB")).validate(&Vocabulary::standard()).is_err());
    }

    struct Sample {
        item: Item,
        threats: Vec<Threat>,
        risks: Vec<Risk>,
        reqs: Vec<SecurityRequirement>,
    }

    fn sample() -> Sample {
        let item = Item::from_json(bundled::ITEM).unwrap();
        let catalog = analysis::parse_catalog(bundled::CATALOG).unwrap();
        let lib = analysis::parse_concept_library(bundled::COUNTERMEASURES).unwrap();
        let threats = analysis::enumerate_threats(&item, &catalog);
        let risks = analysis::assess_with_defaults(&threats, &catalog, analysis::DEFAULT_THRESHOLD).unwrap();
        let pairs: Vec<_> = threats.iter().cloned().zip(risks.iter().cloned()).collect();
        let reqs = analysis::derive_requirements(&pairs, &lib.countermeasures, &lib.config);
        Sample {
            item,
            threats,
            risks,
            reqs,
        }
    }

    fn plan(s: &Sample) -> Result<Planned, PlanError> {
        let trees = parse_attack_trees(bundled::ATTACK_TREES).unwrap();
        let ctx = PlanContext {
            policy: &Policy::default(),
            attack_trees: &trees,
            fuzz: FuzzSettings::default(),
        };
        build_plan(&s.item, &s.threats, &s.risks, &s.reqs, &ctx)
    }

    #[test]
    fn bundled_plan_covers_every_requirement() {
        let s = sample();
        let p = plan(&s).unwrap();
        assert!(p.plan.missing_elements().is_empty());
        for r in &s.reqs {
            assert!(
                p.scenarios.iter().any(|sc| sc.meta.requirement_refs.contains(&r.id)),
                "{} uncovered",
                r.id
            );
        }
        let vocab = Vocabulary::standard();
        for sc in &p.scenarios {
            assert_eq!(parse_scenario(&serialize(sc)).unwrap(), *sc);
            assert!(validate(sc, &vocab).is_empty(), "{}: {:?}", sc.id, validate(sc, &vocab));
        }
        let ids: Vec<_> = p.scenarios.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "SC-PEN-REQ-001-V1",
                "SC-PEN-REQ-001-V2",
                "SC-FUNC-POS-REQ-002",
                "SC-FUNC-NEG-REQ-002",
                "SC-VULN-ITEM-VECU",
                "SC-FUZZ-I_DIAG",
            ]
        );
        assert_eq!(p.plan.case_specs, ids);
    }

    #[test]
    fn empty_risk_set_gives_complete_empty_plan() {
        let s = sample();
        let empty = Sample {
            threats: vec![],
            risks: vec![],
            reqs: vec![],
            ..s
        };
        let p = plan(&empty).unwrap();
        assert!(p.plan.case_specs.is_empty());
        assert!(p.plan.missing_elements().is_empty());
    }

    fn single(value_level: u8, probability: u8) -> Sample {
        let mut s = sample();
        let t = s.threats.iter().find(|t| t.catalog_ref == "TC-AUTHZ-BYPASS").unwrap().clone();
        let r = analysis::assess_risk(&t, ImpactVector::with_level(value_level).unwrap(), probability, 1).unwrap();
        s.reqs.retain(|q| q.derived_from == vec![t.id.clone()]);
        s.threats = vec![t];
        s.risks = vec![r];
        s
    }

    #[test]
    fn risk_six_selects_functional_and_vulnscan() {
        let p = plan(&single(3, 2)).unwrap();
        let methods: BTreeSet<_> = p.scenarios.iter().map(|s| s.meta.method).collect();
        assert_eq!(methods, BTreeSet::from([Method::Functional, Method::Vulnscan]));
    }

    #[test]
    fn uncovered_band_is_an_error() {
        let err = plan(&single(1, 2)).unwrap_err();
        assert!(matches!(err, PlanError::NoApplicableMethod { value: 2, .. }));
    }

    #[test]
    fn functional_templates() {
        let s = sample();
        let req = s.reqs.iter().find(|r| r.goal_ref == "G_AUTHZ").unwrap();
        let (pos, neg) = gen_functional_scenarios(req, &s.item, &s.threats).unwrap();
        let names = |sc: &Scenario| sc.steps.iter().map(|x| x.name().to_string()).collect::<Vec<_>>();
        assert_eq!(names(&pos), ["SESSION_CONTROL", "SECURITY_ACCESS", "WRITE_DATA", "POSITIVE_RESPONSE"]);
        assert_eq!(names(&neg), ["SESSION_CONTROL", "WRITE_DATA", "NEGATIVE_RESPONSE"]);
        assert_eq!(pos.meta.requirement_refs, vec![req.id.clone()]);
        assert_eq!(neg.meta.requirement_refs, vec![req.id.clone()]);

        let mut bad = req.clone();
        bad.derived_from = vec!["T-TC-DOS-MALFORMED-I_DIAG".into()];
        assert_eq!(
            gen_functional_scenarios(&bad, &s.item, &s.threats).unwrap_err(),
            PlanError::NoTargetFunction(bad.id.clone())
        );
        bad.verification_hint = Method::Fuzz;
        assert!(matches!(
            gen_functional_scenarios(&bad, &s.item, &s.threats),
            Err(PlanError::NotFunctional(_))
        ));
    }

    #[test]
    fn fuzz_and_vulnscan_generators() {
        let s = sample();
        let diag = s.item.interface("I_DIAG").unwrap();
        let f = gen_fuzz_scenario(diag, 1000, "diag_corpus", 42).unwrap();
        let text = serialize(&f);
        assert!(text.contains("FUZZ_CAMPAIGN(budget=1000, corpus=\"diag_corpus\", seed=42)"), "{text}");
        assert!(validate(&f, &Vocabulary::standard()).is_empty());
        assert_eq!(f.oracle.fail.to_string(), "sut.crashed");
        assert_eq!(gen_fuzz_scenario(diag, 0, "c", 1).unwrap_err(), PlanError::ZeroBudget);

        let v = gen_vulnscan_scenario(&s.item).unwrap();
        let targets: Vec<_> = v
            .steps
            .iter()
            .filter(|st| st.name() == "SELECT_TARGET")
            .map(|st| st.args()["iface"].clone())
            .collect();
        assert_eq!(targets, vec![Value::str("I_OBD"), Value::str("I_DIAG")]);
        assert!(validate(&v, &Vocabulary::standard()).is_empty());
        let mut internal = s.item.clone();
        for i in &mut internal.interfaces {
            i.exposure = Exposure::Internal;
        }
        assert!(matches!(gen_vulnscan_scenario(&internal), Err(PlanError::NoExternalInterface(_))));
    }
}
