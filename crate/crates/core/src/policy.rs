//! Policy description: organizations, weights, refusal probabilities and the
//! two thresholds, plus ingestion of the JSON policy document.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("malformed policy document: {0}")]
    Malformed(String),
    #[error("{path}: organization list must not be empty")]
    Empty { path: String },
    #[error("{path}: organization id must not be empty")]
    EmptyId { path: String },
    #[error("{path}: duplicate organization id {id:?}")]
    DuplicateId { path: String, id: String },
    #[error("{path}: weight of organization {id:?} must be at least 1, got {weight}")]
    InvalidWeight {
        path: String,
        id: String,
        weight: i64,
    },
    #[error("{path}: weight threshold must be non-negative, got {value}")]
    NegativeThreshold { path: String, value: i64 },
    #[error("{path}: probability {value} is outside [0, 1]{}", owner_suffix(.owner))]
    InvalidProbability {
        path: String,
        owner: Option<String>,
        value: f64,
    },
    #[error("unknown organization {0:?}")]
    UnknownOrganization(String),
    #[error("cannot remove {0:?}: it is the only organization in the policy")]
    LastOrganization(String),
}

fn owner_suffix(owner: &Option<String>) -> String {
    match owner {
        Some(id) => format!(" (organization {id:?})"),
        None => String::new(),
    }
}

/// One endorsing organization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Organization {
    id: String,
    weight: u64,
    refusal_prob: f64,
}

impl Organization {
    pub fn new(id: impl Into<String>, weight: u64, refusal_prob: f64) -> Result<Self, PolicyError> {
        let id = id.into();
        check_org(
            &id,
            i64::try_from(weight).unwrap_or(i64::MAX),
            refusal_prob,
            "organization",
        )?;
        Ok(Self {
            id,
            weight,
            refusal_prob,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn refusal_prob(&self) -> f64 {
        self.refusal_prob
    }

    /// Probability that the organization endorses, `1 - refusal_prob`.
    pub fn acceptance_prob(&self) -> f64 {
        1.0 - self.refusal_prob
    }
}

fn check_org(id: &str, weight: i64, refusal_prob: f64, path: &str) -> Result<(), PolicyError> {
    if id.is_empty() {
        return Err(PolicyError::EmptyId {
            path: format!("{path}.id"),
        });
    }
    if weight < 1 {
        return Err(PolicyError::InvalidWeight {
            path: format!("{path}.weight"),
            id: id.to_owned(),
            weight,
        });
    }
    if !is_probability(refusal_prob) {
        return Err(PolicyError::InvalidProbability {
            path: format!("{path}.refusal_prob"),
            owner: Some(id.to_owned()),
            value: refusal_prob,
        });
    }
    Ok(())
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

/// A validated endorsement policy. Organization order is significant: it
/// fixes the level order of the response tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    organizations: Vec<Organization>,
    weight_threshold: u64,
    probability_threshold: f64,
}

impl Policy {
    pub fn new(
        organizations: Vec<Organization>,
        weight_threshold: u64,
        probability_threshold: f64,
    ) -> Result<Self, PolicyError> {
        if organizations.is_empty() {
            return Err(PolicyError::Empty {
                path: "organizations".into(),
            });
        }
        let mut seen = HashSet::new();
        for (i, org) in organizations.iter().enumerate() {
            if !seen.insert(org.id.as_str()) {
                return Err(PolicyError::DuplicateId {
                    path: format!("organizations[{i}].id"),
                    id: org.id.clone(),
                });
            }
        }
        if !is_probability(probability_threshold) {
            return Err(PolicyError::InvalidProbability {
                path: "probability_threshold".into(),
                owner: None,
                value: probability_threshold,
            });
        }
        Ok(Self {
            organizations,
            weight_threshold,
            probability_threshold,
        })
    }

    pub fn organizations(&self) -> &[Organization] {
        &self.organizations
    }

    pub fn len(&self) -> usize {
        self.organizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.organizations.is_empty()
    }

    pub fn weight_threshold(&self) -> u64 {
        self.weight_threshold
    }

    pub fn probability_threshold(&self) -> f64 {
        self.probability_threshold
    }

    pub fn organization(&self, id: &str) -> Option<&Organization> {
        self.organizations.iter().find(|o| o.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.organizations.iter().position(|o| o.id == id)
    }

    pub fn with_weight_threshold(&self, weight_threshold: u64) -> Self {
        Self {
            weight_threshold,
            ..self.clone()
        }
    }

    pub fn with_probability_threshold(&self, threshold: f64) -> Result<Self, PolicyError> {
        Self::new(self.organizations.clone(), self.weight_threshold, threshold)
    }

    /// Replaces the refusal probability of every organization, in order.
    pub fn with_refusal_probs(&self, probs: &[f64]) -> Result<Self, PolicyError> {
        assert_eq!(probs.len(), self.len(), "one probability per organization");
        let orgs = self
            .organizations
            .iter()
            .zip(probs)
            .map(|(o, &p)| Organization::new(o.id.clone(), o.weight, p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(orgs, self.weight_threshold, self.probability_threshold)
    }

    /// Sets the acceptance probability (`1 - refusal_prob`) of one organization.
    pub fn with_acceptance_prob(&self, id: &str, acceptance: f64) -> Result<Self, PolicyError> {
        let idx = self
            .position(id)
            .ok_or_else(|| PolicyError::UnknownOrganization(id.to_owned()))?;
        if !is_probability(acceptance) {
            return Err(PolicyError::InvalidProbability {
                path: format!("organizations[{idx}].acceptance_prob"),
                owner: Some(id.to_owned()),
                value: acceptance,
            });
        }
        let mut orgs = self.organizations.clone();
        orgs[idx].refusal_prob = 1.0 - acceptance;
        Self::new(orgs, self.weight_threshold, self.probability_threshold)
    }

    /// The same policy with one organization removed (it leaves the channel).
    pub fn without_organization(&self, id: &str) -> Result<Self, PolicyError> {
        let idx = self
            .position(id)
            .ok_or_else(|| PolicyError::UnknownOrganization(id.to_owned()))?;
        if self.len() == 1 {
            return Err(PolicyError::LastOrganization(id.to_owned()));
        }
        let mut orgs = self.organizations.clone();
        orgs.remove(idx);
        Self::new(orgs, self.weight_threshold, self.probability_threshold)
    }

    /// Canonical JSON rendering; `parse_policy` of the result yields `self`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

/// Sum of all organization weights.
pub fn total_weight(policy: &Policy) -> u64 {
    policy.organizations.iter().map(|o| o.weight).sum()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrganization {
    id: String,
    weight: i64,
    refusal_prob: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    organizations: Vec<RawOrganization>,
    weight_threshold: i64,
    probability_threshold: f64,
}

/// Parses and validates a policy document.
///
/// ```json
/// { "organizations": [ {"id": "O1", "weight": 1, "refusal_prob": 0.07} ],
///   "weight_threshold": 1,
///   "probability_threshold": 0.95 }
/// ```
///
/// Unknown keys are rejected. Validation failures name the offending field.
pub fn parse_policy(text: &str) -> Result<Policy, PolicyError> {
    let raw: RawPolicy =
        serde_json::from_str(text).map_err(|e| PolicyError::Malformed(e.to_string()))?;
    if raw.organizations.is_empty() {
        return Err(PolicyError::Empty {
            path: "organizations".into(),
        });
    }
    let mut orgs = Vec::with_capacity(raw.organizations.len());
    for (i, o) in raw.organizations.into_iter().enumerate() {
        check_org(
            &o.id,
            o.weight,
            o.refusal_prob,
            &format!("organizations[{i}]"),
        )?;
        orgs.push(Organization {
            id: o.id,
            weight: o.weight as u64,
            refusal_prob: o.refusal_prob,
        });
    }
    if raw.weight_threshold < 0 {
        return Err(PolicyError::NegativeThreshold {
            path: "weight_threshold".into(),
            value: raw.weight_threshold,
        });
    }
    Policy::new(orgs, raw.weight_threshold as u64, raw.probability_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER: &str = r#"{
        "organizations": [
            {"id": "O1", "weight": 1, "refusal_prob": 0.07},
            {"id": "O2", "weight": 3, "refusal_prob": 0.01},
            {"id": "O3", "weight": 2, "refusal_prob": 0.02}
        ],
        "weight_threshold": 5,
        "probability_threshold": 0.95
    }"#;

    #[test]
    fn parses_three_org_document_in_order() {
        let p = parse_policy(PAPER).unwrap();
        assert_eq!(p.len(), 3);
        let ids: Vec<_> = p.organizations().iter().map(|o| o.id()).collect();
        assert_eq!(ids, ["O1", "O2", "O3"]);
        assert_eq!(p.organizations()[0].weight(), 1);
        assert_eq!(p.organizations()[0].refusal_prob(), 0.07);
        assert_eq!(p.weight_threshold(), 5);
        assert_eq!(p.probability_threshold(), 0.95);
        assert_eq!(total_weight(&p), 6);
    }

    #[test]
    fn minimal_policy() {
        let p = parse_policy(
            r#"{"organizations":[{"id":"A","weight":1,"refusal_prob":0.0}],
                "weight_threshold":1,"probability_threshold":0.5}"#,
        )
        .unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(total_weight(&p), 1);
    }

    #[test]
    fn total_weight_sums() {
        let orgs = ["a", "b", "c"]
            .iter()
            .map(|id| Organization::new(*id, 2, 0.1).unwrap())
            .collect();
        assert_eq!(total_weight(&Policy::new(orgs, 0, 0.0).unwrap()), 6);
    }

    #[test]
    fn out_of_range_probability_names_organization() {
        let doc = PAPER.replace("0.01", "1.5");
        let err = parse_policy(&doc).unwrap_err();
        assert_eq!(
            err,
            PolicyError::InvalidProbability {
                path: "organizations[1].refusal_prob".into(),
                owner: Some("O2".into()),
                value: 1.5
            }
        );
        assert!(err.to_string().contains("O2"));
    }

    #[test]
    fn rejects_each_invariant_violation() {
        let dup = PAPER.replace("\"O3\"", "\"O1\"");
        assert!(matches!(
            parse_policy(&dup),
            Err(PolicyError::DuplicateId { ref path, .. }) if path == "organizations[2].id"
        ));
        let zero_w = PAPER.replace("\"weight\": 3", "\"weight\": 0");
        assert!(matches!(
            parse_policy(&zero_w),
            Err(PolicyError::InvalidWeight { weight: 0, .. })
        ));
        let neg_w = PAPER.replace("\"weight\": 3", "\"weight\": -2");
        assert!(matches!(
            parse_policy(&neg_w),
            Err(PolicyError::InvalidWeight { .. })
        ));
        let empty = r#"{"organizations":[],"weight_threshold":1,"probability_threshold":0.5}"#;
        assert!(matches!(
            parse_policy(empty),
            Err(PolicyError::Empty { .. })
        ));
        let bad_pth = PAPER.replace("0.95", "1.01");
        assert!(matches!(
            parse_policy(&bad_pth),
            Err(PolicyError::InvalidProbability { owner: None, .. })
        ));
        let neg_th = PAPER.replace("\"weight_threshold\": 5", "\"weight_threshold\": -1");
        assert!(matches!(
            parse_policy(&neg_th),
            Err(PolicyError::NegativeThreshold { .. })
        ));
        let empty_id = PAPER.replace("\"O2\"", "\"\"");
        assert!(matches!(
            parse_policy(&empty_id),
            Err(PolicyError::EmptyId { .. })
        ));
    }

    #[test]
    fn rejects_unknown_keys_and_garbage() {
        let typo = PAPER.replace("\"weight_threshold\"", "\"weight_treshold\"");
        assert!(matches!(
            parse_policy(&typo),
            Err(PolicyError::Malformed(_))
        ));
        let extra = PAPER.replace("\"weight\": 1,", "\"weight\": 1, \"colour\": \"red\",");
        assert!(matches!(
            parse_policy(&extra),
            Err(PolicyError::Malformed(_))
        ));
        assert!(matches!(parse_policy("{"), Err(PolicyError::Malformed(_))));
        assert!(matches!(parse_policy(""), Err(PolicyError::Malformed(_))));
    }

    #[test]
    fn threshold_above_total_weight_is_legal() {
        let doc = PAPER.replace("\"weight_threshold\": 5", "\"weight_threshold\": 7");
        assert_eq!(parse_policy(&doc).unwrap().weight_threshold(), 7);
    }

    #[test]
    fn derived_policies() {
        let p = parse_policy(PAPER).unwrap();
        let dropped = p.without_organization("O1").unwrap();
        assert_eq!(dropped.len(), 2);
        assert_eq!(dropped.organizations()[0].id(), "O2");
        assert!(matches!(
            p.without_organization("O9"),
            Err(PolicyError::UnknownOrganization(_))
        ));
        let single = Policy::new(vec![Organization::new("A", 1, 0.0).unwrap()], 1, 0.5).unwrap();
        assert!(matches!(
            single.without_organization("A"),
            Err(PolicyError::LastOrganization(_))
        ));
        let q = p.with_acceptance_prob("O3", 0.5).unwrap();
        assert_eq!(q.organization("O3").unwrap().refusal_prob(), 0.5);
        assert!(p.with_acceptance_prob("O3", 1.2).is_err());
    }
}
