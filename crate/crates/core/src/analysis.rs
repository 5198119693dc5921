//! Threat enumeration, risk scoring and derivation of security requirements.
//!
//! Risk is `impact.level * probability` on 0..4 scales, so values fall in
//! 0..=16. A risk is acceptable when its value is strictly below the
//! threshold in force when it was classified.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hex::ServiceId;
use crate::item_model::{ElementRef, Exposure, InterfaceKind, Item, SecurityGoal, SecurityProperty};

pub const DEFAULT_THRESHOLD: u8 = 4;
pub const MAX_SCALE: u8 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("{field} = {value} is outside {min}..={max}")]
    OutOfRange {
        field: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("impact level {level} is not the maximum of its dimensions ({expected})")]
    InconsistentImpact { level: u8, expected: u8 },
    #[error("catalog entry `{0}` has an all-wildcard predicate")]
    WildcardPredicate(String),
    #[error("countermeasure `{0}` mitigates nothing")]
    EmptyCountermeasure(String),
    #[error("cannot parse {what}: {message}")]
    Parse { what: &'static str, message: String },
}

fn check_range(field: &'static str, value: i64, min: i64, max: i64) -> Result<(), AnalysisError> {
    if (min..=max).contains(&value) {
        Ok(())
    } else {
        Err(AnalysisError::OutOfRange { field, value, min, max })
    }
}

/// The test methods a requirement can be verified by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Functional,
    Interface,
    Penetration,
    Vulnscan,
    Fuzz,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Functional,
        Method::Interface,
        Method::Penetration,
        Method::Vulnscan,
        Method::Fuzz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Functional => "functional",
            Self::Interface => "interface",
            Self::Penetration => "penetration",
            Self::Vulnscan => "vulnscan",
            Self::Fuzz => "fuzz",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface_kind: Option<InterfaceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<Exposure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_property: Option<SecurityProperty>,
}

impl MatchPredicate {
    pub fn is_wildcard(&self) -> bool {
        *self == Self::default()
    }

    /// Structural match. Kind and exposure constrain interfaces, a service
    /// constrains functions; the goal property only steers goal mapping.
    pub fn matches(&self, element: ElementRef<'_>) -> bool {
        match element {
            ElementRef::Interface(i) => {
                self.service.is_none()
                    && self.interface_kind.is_none_or(|k| k == i.kind)
                    && self.exposure.is_none_or(|e| e == i.exposure)
            }
            ElementRef::Function(f) => {
                self.interface_kind.is_none()
                    && self.exposure.is_none()
                    && self.service.is_some_and(|s| f.services.contains(&s))
            }
            ElementRef::Component(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactVector {
    pub safety: u8,
    pub financial: u8,
    pub operational: u8,
    pub privacy: u8,
    pub level: u8,
}

impl ImpactVector {
    pub fn new(safety: u8, financial: u8, operational: u8, privacy: u8) -> Result<Self, AnalysisError> {
        for (field, v) in [
            ("safety", safety),
            ("financial", financial),
            ("operational", operational),
            ("privacy", privacy),
        ] {
            check_range(field, v.into(), 0, MAX_SCALE.into())?;
        }
        Ok(Self {
            safety,
            financial,
            operational,
            privacy,
            level: safety.max(financial).max(operational).max(privacy),
        })
    }

    /// Vector whose only non-zero dimension is `operational`.
    pub fn with_level(level: u8) -> Result<Self, AnalysisError> {
        Self::new(0, 0, level, 0)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let expected = Self::new(self.safety, self.financial, self.operational, self.privacy)?.level;
        if expected != self.level {
            return Err(AnalysisError::InconsistentImpact {
                level: self.level,
                expected,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatCatalogEntry {
    pub id: String,
    pub title: String,
    pub match_predicate: MatchPredicate,
    pub threat_class: String,
    pub default_feasibility: u8,
    /// Impact used when the analyst supplies none.
    pub default_impact: ImpactVector,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regulation_notes: Vec<String>,
}

impl ThreatCatalogEntry {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        check_range("default_feasibility", self.default_feasibility.into(), 0, MAX_SCALE.into())?;
        if self.match_predicate.is_wildcard() {
            return Err(AnalysisError::WildcardPredicate(self.id.clone()));
        }
        self.default_impact.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threat {
    pub id: String,
    pub catalog_ref: String,
    pub threat_class: String,
    pub target: String,
    pub mapped_goal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Risk {
    pub threat_ref: String,
    pub impact: ImpactVector,
    pub probability: u8,
    pub value: u8,
    pub threshold: u8,
    pub acceptable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequirementKind {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityRequirement {
    pub id: String,
    pub text: String,
    pub kind: RequirementKind,
    pub derived_from: Vec<String>,
    pub goal_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub countermeasure_ref: Option<String>,
    pub verification_hint: Method,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Countermeasure {
    pub id: String,
    pub description: String,
    pub mitigates: BTreeSet<String>,
}

/// Per-class settings for requirement derivation: which classes describe
/// prohibited behaviour, and how each class is best verified.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptConfig {
    #[serde(default)]
    pub negative_classes: BTreeSet<String>,
    #[serde(default)]
    pub verification_hints: BTreeMap<String, Method>,
}

/// Countermeasure library file: the library plus its derivation settings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptLibrary {
    pub countermeasures: Vec<Countermeasure>,
    #[serde(flatten)]
    pub config: ConceptConfig,
}

pub fn parse_catalog(text: &str) -> Result<Vec<ThreatCatalogEntry>, AnalysisError> {
    let entries: Vec<ThreatCatalogEntry> = serde_json::from_str(text).map_err(|e| AnalysisError::Parse {
        what: "threat catalog",
        message: e.to_string(),
    })?;
    for e in &entries {
        e.validate()?;
    }
    Ok(entries)
}

pub fn parse_concept_library(text: &str) -> Result<ConceptLibrary, AnalysisError> {
    let lib: ConceptLibrary = serde_json::from_str(text).map_err(|e| AnalysisError::Parse {
        what: "countermeasure library",
        message: e.to_string(),
    })?;
    for c in &lib.countermeasures {
        if c.mitigates.is_empty() {
            return Err(AnalysisError::EmptyCountermeasure(c.id.clone()));
        }
    }
    Ok(lib)
}

/// Elements a catalog entry can match: interfaces, then functions.
pub fn matchable_elements(item: &Item) -> Vec<ElementRef<'_>> {
    item.interfaces
        .iter()
        .map(ElementRef::Interface)
        .chain(item.functions.iter().map(ElementRef::Function))
        .collect()
}

fn element_id<'a>(e: ElementRef<'a>) -> &'a str {
    match e {
        ElementRef::Component(c) => &c.id,
        ElementRef::Function(f) => &f.id,
        ElementRef::Interface(i) => &i.id,
    }
}

/// Element, its interface (functions only), then its component.
fn goal_search_path<'a>(e: ElementRef<'a>) -> Vec<&'a str> {
    match e {
        ElementRef::Component(c) => vec![c.id.as_str()],
        ElementRef::Interface(i) => vec![i.id.as_str(), i.component_ref.as_str()],
        ElementRef::Function(f) => {
            let mut path = vec![f.id.as_str()];
            path.extend(f.interface_ref.as_deref());
            path.push(f.component_ref.as_str());
            path
        }
    }
}

/// Goal for a threat on `element`, searching outward from the element.
pub fn map_goal<'a>(item: &'a Item, element: ElementRef<'_>, property: Option<SecurityProperty>) -> Option<&'a SecurityGoal> {
    goal_search_path(element).into_iter().find_map(|target| {
        item.security_goals
            .iter()
            .filter(|g| g.target_ref == target)
            .find(|g| property.is_none_or(|p| g.property == p))
    })
}

/// One threat per matching (entry, element) pair that maps to a goal.
pub fn enumerate_threats(item: &Item, catalog: &[ThreatCatalogEntry]) -> Vec<Threat> {
    let elements = matchable_elements(item);
    let mut out = Vec::new();
    for entry in catalog {
        for &element in &elements {
            if !entry.match_predicate.matches(element) {
                continue;
            }
            let Some(goal) = map_goal(item, element, entry.match_predicate.goal_property) else {
                continue;
            };
            let target = element_id(element);
            out.push(Threat {
                id: format!("T-{}-{}", entry.id, target),
                catalog_ref: entry.id.clone(),
                threat_class: entry.threat_class.clone(),
                target: target.to_string(),
                mapped_goal: goal.id.clone(),
            });
        }
    }
    out.sort_by(|a, b| (&a.catalog_ref, &a.target).cmp(&(&b.catalog_ref, &b.target)));
    out
}

pub fn assess_risk(threat: &Threat, impact: ImpactVector, probability: u8, threshold: u8) -> Result<Risk, AnalysisError> {
    impact.validate()?;
    check_range("probability", probability.into(), 0, MAX_SCALE.into())?;
    check_range("threshold", threshold.into(), 1, 16)?;
    let value = impact.level * probability;
    Ok(Risk {
        threat_ref: threat.id.clone(),
        impact,
        probability,
        value,
        threshold,
        acceptable: value < threshold,
    })
}

/// Scores every threat with its catalog defaults.
pub fn assess_with_defaults(
    threats: &[Threat],
    catalog: &[ThreatCatalogEntry],
    threshold: u8,
) -> Result<Vec<Risk>, AnalysisError> {
    threats
        .iter()
        .map(|t| {
            let entry = catalog
                .iter()
                .find(|e| e.id == t.catalog_ref)
                .expect("threats come from this catalog");
            assess_risk(t, entry.default_impact, entry.default_feasibility, threshold)
        })
        .collect()
}

/// One requirement per unacceptable risk, in input order.
pub fn derive_requirements(
    threats_with_risks: &[(Threat, Risk)],
    library: &[Countermeasure],
    config: &ConceptConfig,
) -> Vec<SecurityRequirement> {
    let mut out = Vec::new();
    for (threat, risk) in threats_with_risks {
        if risk.acceptable {
            continue;
        }
        let class = &threat.threat_class;
        let cm = library.iter().find(|c| c.mitigates.contains(class));
        let kind = if config.negative_classes.contains(class) {
            RequirementKind::Negative
        } else {
            RequirementKind::Positive
        };
        let base = match kind {
            RequirementKind::Negative => format!("{} must not exhibit {}", threat.target, class.replace('_', " ")),
            RequirementKind::Positive => format!("{} must resist {}", threat.target, class.replace('_', " ")),
        };
        let text = match cm {
            Some(c) => format!("{base} ({})", c.description),
            None => format!("[UNCOVERED] {base}"),
        };
        out.push(SecurityRequirement {
            id: format!("REQ-{:03}", out.len() + 1),
            text,
            kind,
            derived_from: vec![threat.id.clone()],
            goal_ref: threat.mapped_goal.clone(),
            countermeasure_ref: cm.map(|c| c.id.clone()),
            verification_hint: config
                .verification_hints
                .get(class)
                .copied()
                .unwrap_or(Method::Functional),
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub orphan_requirements: Vec<String>,
    pub uncovered_goals: Vec<String>,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.orphan_requirements.is_empty() && self.uncovered_goals.is_empty()
    }
}

pub fn check_consistency(requirements: &[SecurityRequirement], goals: &[SecurityGoal], item: &Item) -> ConsistencyReport {
    let resolves = |id: &str| goals.iter().any(|g| g.id == id) && item.goal(id).is_some();
    let referenced: BTreeSet<&str> = requirements.iter().map(|r| r.goal_ref.as_str()).collect();
    ConsistencyReport {
        orphan_requirements: requirements
            .iter()
            .filter(|r| !resolves(&r.goal_ref))
            .map(|r| r.id.clone())
            .collect(),
        uncovered_goals: goals
            .iter()
            .filter(|g| !referenced.contains(g.id.as_str()))
            .map(|g| g.id.clone())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::item_model::{Address, Component, Function, Interface};
    use proptest::prelude::*;

    fn entry(id: &str, pred: MatchPredicate, class: &str) -> ThreatCatalogEntry {
        ThreatCatalogEntry {
            id: id.into(),
            title: id.into(),
            match_predicate: pred,
            threat_class: class.into(),
            default_feasibility: 2,
            default_impact: ImpactVector::with_level(3).unwrap(),
            regulation_notes: vec![],
        }
    }

    fn one_interface_item() -> Item {
        Item {
            id: "IT".into(),
            name: "it".into(),
            boundary: "b".into(),
            functions: vec![],
            components: vec![Component {
                id: "C".into(),
                name: "c".into(),
                description: String::new(),
            }],
            interfaces: vec![Interface {
                id: "I".into(),
                component_ref: "C".into(),
                kind: InterfaceKind::Canlike,
                exposure: Exposure::External,
                address: Address {
                    bus: "can0".into(),
                    ..Address::default()
                },
            }],
            security_goals: vec![SecurityGoal {
                id: "G".into(),
                property: SecurityProperty::Availability,
                target_ref: "I".into(),
                statement: "s".into(),
            }],
            config_params: BTreeMap::new(),
        }
    }

    #[test]
    fn single_match_and_empty_catalog() {
        let item = one_interface_item();
        let pred = MatchPredicate {
            interface_kind: Some(InterfaceKind::Canlike),
            exposure: Some(Exposure::External),
            ..MatchPredicate::default()
        };
        let threats = enumerate_threats(&item, &[entry("E1", pred, "dos")]);
        assert_eq!(threats.len(), 1);
        assert_eq!(threats[0].mapped_goal, "G");
        assert_eq!(threats[0].target, "I");
        assert!(enumerate_threats(&item, &[]).is_empty());
    }

    #[test]
    fn risk_examples() {
        let t = &enumerate_threats(&one_interface_item(), &[entry(
            "E",
            MatchPredicate {
                exposure: Some(Exposure::External),
                ..MatchPredicate::default()
            },
            "x",
        )])[0];
        let r = assess_risk(t, ImpactVector::with_level(0).unwrap(), 3, 1).unwrap();
        assert_eq!((r.value, r.acceptable), (0, true));
        let r = assess_risk(t, ImpactVector::new(4, 0, 0, 0).unwrap(), 4, 4).unwrap();
        assert_eq!((r.value, r.acceptable), (16, false));
        let r = assess_risk(t, ImpactVector::new(0, 2, 1, 0).unwrap(), 2, 4).unwrap();
        assert_eq!((r.value, r.acceptable), (4, false));
        assert!(assess_risk(t, ImpactVector::with_level(1).unwrap(), 5, 4).is_err());
        assert!(assess_risk(t, ImpactVector::with_level(1).unwrap(), 1, 0).is_err());
        assert!(assess_risk(t, ImpactVector::with_level(1).unwrap(), 1, 17).is_err());
        let bad = ImpactVector { level: 1, ..ImpactVector::new(3, 0, 0, 0).unwrap() };
        assert!(assess_risk(t, bad, 1, 4).is_err());
        assert!(ImpactVector::new(5, 0, 0, 0).is_err());
    }

    #[test]
    fn risk_math_is_exact_over_the_whole_lattice() {
        let t = Threat {
            id: "T".into(),
            catalog_ref: "E".into(),
            threat_class: "x".into(),
            target: "I".into(),
            mapped_goal: "G".into(),
        };
        for level in 0..=4u8 {
            for p in 0..=4u8 {
                for threshold in 1..=16u8 {
                    let r = assess_risk(&t, ImpactVector::with_level(level).unwrap(), p, threshold).unwrap();
                    assert_eq!(u32::from(r.value), u32::from(level) * u32::from(p));
                    assert_eq!(r.acceptable, u32::from(r.value) < u32::from(threshold));
                    assert_eq!(r.threshold, threshold);
                }
            }
        }
    }

    fn risk_for(threat: &Threat, value_level: u8, p: u8) -> Risk {
        assess_risk(threat, ImpactVector::with_level(value_level).unwrap(), p, DEFAULT_THRESHOLD).unwrap()
    }

    fn threat(id: &str, class: &str) -> Threat {
        Threat {
            id: id.into(),
            catalog_ref: "E".into(),
            threat_class: class.into(),
            target: "F_WRITE".into(),
            mapped_goal: "G".into(),
        }
    }

    #[test]
    fn requirement_chain_and_uncovered_marker() {
        let t = threat("T1", "privilege_escalation");
        let pair = vec![(t.clone(), risk_for(&t, 3, 2))];
        let lib = vec![Countermeasure {
            id: "CM1".into(),
            description: "enforce session and lock".into(),
            mitigates: ["privilege_escalation".to_string()].into(),
        }];
        let reqs = derive_requirements(&pair, &lib, &ConceptConfig::default());
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].derived_from, vec!["T1"]);
        assert_eq!(reqs[0].countermeasure_ref.as_deref(), Some("CM1"));
        assert_eq!(reqs[0].goal_ref, "G");
        let reqs = derive_requirements(&pair, &[], &ConceptConfig::default());
        assert!(reqs[0].text.starts_with("[UNCOVERED]"));
        assert!(reqs[0].countermeasure_ref.is_none());
    }

    #[test]
    fn first_matching_countermeasure_wins_and_acceptable_risks_are_dropped() {
        let a = threat("T1", "c");
        let b = threat("T2", "c");
        let pairs = vec![(a.clone(), risk_for(&a, 1, 1)), (b.clone(), risk_for(&b, 4, 4))];
        let lib: Vec<_> = ["CM2", "CM1"]
            .iter()
            .map(|id| Countermeasure {
                id: id.to_string(),
                description: "d".into(),
                mitigates: ["c".to_string()].into(),
            })
            .collect();
        let cfg = ConceptConfig {
            negative_classes: ["c".to_string()].into(),
            ..ConceptConfig::default()
        };
        let reqs = derive_requirements(&pairs, &lib, &cfg);
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].derived_from, vec!["T2"]);
        assert_eq!(reqs[0].countermeasure_ref.as_deref(), Some("CM2"));
        assert_eq!(reqs[0].kind, RequirementKind::Negative);
    }

    #[test]
    fn consistency_examples() {
        let mut item = one_interface_item();
        for id in ["G2", "G3"] {
            let mut g = item.security_goals[0].clone();
            g.id = id.into();
            item.security_goals.push(g);
        }
        let req = |id: &str, goal: &str| SecurityRequirement {
            id: id.into(),
            text: "t".into(),
            kind: RequirementKind::Positive,
            derived_from: vec!["T".into()],
            goal_ref: goal.into(),
            countermeasure_ref: None,
            verification_hint: Method::Functional,
        };
        let goals = item.security_goals.clone();
        let all = [req("R1", "G"), req("R2", "G2"), req("R3", "G3")];
        assert!(check_consistency(&all, &goals, &item).is_clean());
        let two = [req("R1", "G"), req("R2", "G2")];
        assert_eq!(check_consistency(&two, &goals, &item).uncovered_goals, vec!["G3"]);
        let orphan = [req("R1", "G"), req("R2", "G2"), req("R3", "G3"), req("R4", "GONE")];
        assert_eq!(check_consistency(&orphan, &goals, &item).orphan_requirements, vec!["R4"]);
    }

    // independent oracle: walk the cross product without the matcher helpers
    fn brute_force_threats(item: &Item, catalog: &[ThreatCatalogEntry]) -> BTreeSet<(String, String, String)> {
        let mut out = BTreeSet::new();
        for e in catalog {
            let p = &e.match_predicate;
            for i in &item.interfaces {
                let ok = p.service.is_none()
                    && p.interface_kind.is_none_or(|k| k == i.kind)
                    && p.exposure.is_none_or(|x| x == i.exposure);
                if !ok {
                    continue;
                }
                let goal = [&i.id, &i.component_ref].into_iter().find_map(|t| {
                    item.security_goals
                        .iter()
                        .find(|g| &g.target_ref == t && p.goal_property.is_none_or(|q| q == g.property))
                });
                if let Some(g) = goal {
                    out.insert((e.id.clone(), i.id.clone(), g.id.clone()));
                }
            }
            for f in &item.functions {
                let ok = p.interface_kind.is_none()
                    && p.exposure.is_none()
                    && matches!(p.service, Some(s) if f.services.contains(&s));
                if !ok {
                    continue;
                }
                let mut path = vec![&f.id];
                if let Some(i) = &f.interface_ref {
                    path.push(i);
                }
                path.push(&f.component_ref);
                let goal = path.into_iter().find_map(|t| {
                    item.security_goals
                        .iter()
                        .find(|g| &g.target_ref == t && p.goal_property.is_none_or(|q| q == g.property))
                });
                if let Some(g) = goal {
                    out.insert((e.id.clone(), f.id.clone(), g.id.clone()));
                }
            }
        }
        out
    }

    fn as_triples(threats: &[Threat]) -> BTreeSet<(String, String, String)> {
        threats
            .iter()
            .map(|t| (t.catalog_ref.clone(), t.target.clone(), t.mapped_goal.clone()))
            .collect()
    }

    #[test]
    fn bundled_threats_equal_brute_force() {
        let item = Item::from_json(bundled::ITEM).unwrap();
        let catalog = parse_catalog(bundled::CATALOG).unwrap();
        let threats = enumerate_threats(&item, &catalog);
        assert_eq!(as_triples(&threats), brute_force_threats(&item, &catalog));
        assert_eq!(threats.len(), as_triples(&threats).len());
        let ids: Vec<_> = threats.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "T-TC-AUTH-WEAK-F_SECURITY_ACCESS",
                "T-TC-AUTHZ-BYPASS-F_WRITE_CONFIG",
                "T-TC-DEBUG-ACCESS-I_JTAG",
                "T-TC-DOS-MALFORMED-I_DIAG",
                "T-TC-EAVESDROP-I_OBD",
                "T-TC-UNDOC-SERVICE-I_DIAG",
            ]
        );
    }

    #[test]
    fn bundled_requirements_cover_exactly_the_unacceptable_risks() {
        let item = Item::from_json(bundled::ITEM).unwrap();
        let catalog = parse_catalog(bundled::CATALOG).unwrap();
        let lib = parse_concept_library(bundled::COUNTERMEASURES).unwrap();
        let threats = enumerate_threats(&item, &catalog);
        let risks = assess_with_defaults(&threats, &catalog, DEFAULT_THRESHOLD).unwrap();
        let pairs: Vec<_> = threats.into_iter().zip(risks).collect();
        let reqs = derive_requirements(&pairs, &lib.countermeasures, &lib.config);
        for (t, r) in &pairs {
            let hits = reqs.iter().filter(|q| q.derived_from.contains(&t.id)).count();
            assert_eq!(hits, usize::from(!r.acceptable), "threat {}", t.id);
        }
        let values: BTreeMap<_, _> = pairs.iter().map(|(t, r)| (t.catalog_ref.as_str(), r.value)).collect();
        assert_eq!(values["TC-AUTH-WEAK"], 9);
        assert_eq!(values["TC-AUTHZ-BYPASS"], 6);
        assert_eq!(values["TC-DOS-MALFORMED"], 12);
        assert_eq!(values["TC-UNDOC-SERVICE"], 4);
        assert_eq!(reqs.len(), 4);
        assert!(reqs.iter().all(|r| r.countermeasure_ref.is_some()));
    }

    fn arb_item() -> impl Strategy<Value = (Item, Vec<ThreatCatalogEntry>)> {
        let kinds = prop_oneof![
            Just(InterfaceKind::Canlike),
            Just(InterfaceKind::Diag),
            Just(InterfaceKind::Debug)
        ];
        let exposures = prop_oneof![Just(Exposure::External), Just(Exposure::Internal)];
        let props = prop_oneof![
            Just(SecurityProperty::Authentication),
            Just(SecurityProperty::Availability),
            Just(SecurityProperty::Confidentiality)
        ];
        let iface = (kinds.clone(), exposures.clone());
        let func = (prop::collection::vec(0u8..4, 0..3), prop::option::of(0usize..5));
        let goal = (props.clone(), 0usize..10);
        let pred = (
            prop::option::of(kinds),
            prop::option::of(exposures),
            prop::option::of(0u8..4),
            prop::option::of(props),
        );
        (
            prop::collection::vec(iface, 1..5),
            prop::collection::vec(func, 0..5),
            prop::collection::vec(goal, 0..6),
            prop::collection::vec(pred, 0..10),
        )
            .prop_map(|(ifaces, funcs, goals, preds)| {
                let interfaces: Vec<Interface> = ifaces
                    .iter()
                    .enumerate()
                    .map(|(n, (kind, exposure))| Interface {
                        id: format!("I{n}"),
                        component_ref: "C".into(),
                        kind: *kind,
                        exposure: *exposure,
                        address: Address {
                            bus: "b".into(),
                            ..Address::default()
                        },
                    })
                    .collect();
                let functions: Vec<Function> = funcs
                    .iter()
                    .enumerate()
                    .map(|(n, (svcs, iref))| Function {
                        id: format!("F{n}"),
                        name: "f".into(),
                        component_ref: "C".into(),
                        interface_ref: iref.filter(|i| *i < interfaces.len()).map(|i| format!("I{i}")),
                        services: svcs.iter().map(|s| ServiceId(*s)).collect(),
                    })
                    .collect();
                let mut targets: Vec<String> = vec!["C".into()];
                targets.extend(interfaces.iter().map(|i| i.id.clone()));
                targets.extend(functions.iter().map(|f| f.id.clone()));
                let security_goals = goals
                    .iter()
                    .enumerate()
                    .map(|(n, (p, t))| SecurityGoal {
                        id: format!("G{n}"),
                        property: *p,
                        target_ref: targets[t % targets.len()].clone(),
                        statement: "s".into(),
                    })
                    .collect();
                let catalog = preds
                    .into_iter()
                    .enumerate()
                    .map(|(n, (k, e, s, g))| {
                        entry(
                            &format!("E{n}"),
                            MatchPredicate {
                                interface_kind: k,
                                exposure: e,
                                service: s.map(ServiceId),
                                goal_property: g,
                            },
                            "c",
                        )
                    })
                    .collect();
                let item = Item {
                    id: "X".into(),
                    name: "x".into(),
                    boundary: "b".into(),
                    functions,
                    components: vec![Component {
                        id: "C".into(),
                        name: "c".into(),
                        description: String::new(),
                    }],
                    interfaces,
                    security_goals,
                    config_params: BTreeMap::new(),
                };
                (item, catalog)
            })
    }

    proptest! {
        #[test]
        fn enumeration_matches_brute_force((item, catalog) in arb_item()) {
            let a = enumerate_threats(&item, &catalog);
            let b = enumerate_threats(&item, &catalog);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(as_triples(&a), brute_force_threats(&item, &catalog));
            let keys: Vec<_> = a.iter().map(|t| (t.catalog_ref.clone(), t.target.clone())).collect();
            let mut sorted = keys.clone();
            sorted.sort();
            prop_assert_eq!(keys, sorted);
        }

        #[test]
        fn every_requirement_traces_to_threat_and_one_goal((item, catalog) in arb_item()) {
            let threats = enumerate_threats(&item, &catalog);
            let risks = assess_with_defaults(&threats, &catalog, DEFAULT_THRESHOLD).unwrap();
            let pairs: Vec<_> = threats.iter().cloned().zip(risks).collect();
            let reqs = derive_requirements(&pairs, &[], &ConceptConfig::default());
            for r in &reqs {
                prop_assert!(!r.derived_from.is_empty());
                for t in &r.derived_from {
                    let threat = threats.iter().find(|x| &x.id == t).unwrap();
                    prop_assert_eq!(&threat.mapped_goal, &r.goal_ref);
                }
                prop_assert_eq!(item.security_goals.iter().filter(|g| g.id == r.goal_ref).count(), 1);
            }
        }
    }
}
