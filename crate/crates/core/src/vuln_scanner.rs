//! Vulnerability database matching over fingerprint reports.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hex::{HexBytes, ServiceId};
use crate::item_model::FingerprintReport;

#[derive(Debug, Error)]
pub enum VulnDbError {
    #[error("cannot read vulnerability database: {0}")]
    Parse(String),
    #[error("entry `{0}` has an empty predicate")]
    EmptyPredicate(String),
    #[error("entry `{id}` has a bad banner regex: {message}")]
    BadRegex { id: String, message: String },
    #[error("entry `{id}` severity {severity} exceeds 4")]
    Severity { id: String, severity: u8 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_service: Option<ServiceId>,
    /// Matched against the lowercase hex of the service banner, or of any
    /// banner when no service is required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_banner_regex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_session: Option<ServiceId>,
}

impl Predicate {
    pub fn is_empty(&self) -> bool {
        self.requires_service.is_none() && self.requires_banner_regex.is_none() && self.requires_session.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnDbEntry {
    pub id: String,
    pub title: String,
    pub predicate: Predicate,
    pub severity: u8,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regulation_notes: Vec<String>,
}

impl VulnDbEntry {
    pub fn validate(&self) -> Result<(), VulnDbError> {
        if self.predicate.is_empty() {
            return Err(VulnDbError::EmptyPredicate(self.id.clone()));
        }
        if self.severity > crate::analysis::MAX_SCALE {
            return Err(VulnDbError::Severity {
                id: self.id.clone(),
                severity: self.severity,
            });
        }
        if let Some(re) = &self.predicate.requires_banner_regex {
            Regex::new(re).map_err(|e| VulnDbError::BadRegex {
                id: self.id.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

pub fn parse_vulndb(text: &str) -> Result<Vec<VulnDbEntry>, VulnDbError> {
    let db: Vec<VulnDbEntry> = serde_json::from_str(text).map_err(|e| VulnDbError::Parse(e.to_string()))?;
    db.iter().try_for_each(VulnDbEntry::validate)?;
    Ok(db)
}

pub fn load_vulndb(path: impl AsRef<Path>) -> Result<Vec<VulnDbEntry>, VulnDbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| VulnDbError::Parse(format!("{}: {e}", path.display())))?;
    parse_vulndb(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banner: Option<HexBytes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<ServiceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanFinding {
    pub entry_id: String,
    pub title: String,
    pub severity: u8,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub target: String,
    pub fingerprint_ref: String,
    pub findings: Vec<ScanFinding>,
    pub followups: Vec<String>,
}

impl ScanReport {
    /// Keeps findings at or above `min_severity` and the followups they emit.
    pub fn filter_severity(&self, min_severity: u8, db: &[VulnDbEntry]) -> Self {
        let findings: Vec<ScanFinding> = self.findings.iter().filter(|f| f.severity >= min_severity).cloned().collect();
        Self {
            followups: followups_for(&findings, db, &self.target),
            findings,
            ..self.clone()
        }
    }
}

/// Content hash of the timestamp-free part of a fingerprint.
pub fn fingerprint_ref(fp: &FingerprintReport) -> String {
    let key = serde_json::json!({
        "interface": fp.probed_interface,
        "session": fp.probed_session,
        "ids": fp.responding_request_ids,
        "services": fp.supported_services,
        "banners": fp.banners,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("fp-{hex}")
}

/// Evidence for `entry` if its whole predicate holds on `fp`.
pub fn evaluate(entry: &VulnDbEntry, fp: &FingerprintReport) -> Option<Evidence> {
    let p = &entry.predicate;
    if p.is_empty() {
        return None;
    }
    let mut ev = Evidence {
        service: None,
        banner: None,
        session: None,
    };
    if let Some(s) = p.requires_session {
        if fp.probed_session != s {
            return None;
        }
        ev.session = Some(s);
    }
    if let Some(svc) = p.requires_service {
        if !fp.supported_services.contains(&svc) {
            return None;
        }
        ev.service = Some(svc);
    }
    if let Some(re) = &p.requires_banner_regex {
        let re = Regex::new(re).ok()?;
        let banner = match p.requires_service {
            Some(svc) => fp.banners.get(&svc).filter(|b| re.is_match(&b.to_string())).cloned(),
            None => fp.banners.values().find(|b| re.is_match(&b.to_string())).cloned(),
        }?;
        ev.banner = Some(banner);
    } else if let Some(svc) = ev.service {
        ev.banner = fp.banners.get(&svc).cloned();
    }
    Some(ev)
}

fn followups_for(findings: &[ScanFinding], db: &[VulnDbEntry], target: &str) -> Vec<String> {
    findings
        .iter()
        .filter_map(|f| db.iter().find(|e| e.id == f.entry_id)?.followup.as_ref())
        .map(|tpl| format!("{tpl}@{target}"))
        .collect()
}

/// Findings in database order; one followup per matched entry that declares one.
pub fn scan(fp: &FingerprintReport, db: &[VulnDbEntry]) -> ScanReport {
    let findings: Vec<ScanFinding> = db
        .iter()
        .filter_map(|e| {
            evaluate(e, fp).map(|evidence| ScanFinding {
                entry_id: e.id.clone(),
                title: e.title.clone(),
                severity: e.severity,
                evidence,
            })
        })
        .collect();
    ScanReport {
        target: fp.probed_interface.clone(),
        fingerprint_ref: fingerprint_ref(fp),
        followups: followups_for(&findings, db, &fp.probed_interface),
        findings,
    }
}
