//! Arm assignment with rerandomization: split personas uniformly at random
//! into arms, score covariate balance (SMD for numeric attributes, TVD for
//! categorical), and redraw until the balance threshold is met.

use crate::persona::{
    categorical_demographic, numeric_demographic, AttributeKind, AttributeSpec, Persona,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub variant_id: String,
}

impl Arm {
    pub fn new(name: impl Into<String>, variant_id: impl Into<String>) -> Self {
        Arm {
            name: name.into(),
            variant_id: variant_id.into(),
        }
    }
}

/// Persona-to-arm assignment produced by one randomization draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub seed: u64,
    pub attempt: u32,
    pub assignment: BTreeMap<String, String>,
}

impl Allocation {
    pub fn arm_members<'a>(&'a self, arm: &str) -> Vec<&'a str> {
        self.assignment
            .iter()
            .filter(|(_, a)| a.as_str() == arm)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricKind {
    Smd,
    Tvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceMetric {
    pub metric_kind: MetricKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub per_attribute: BTreeMap<String, BalanceMetric>,
    pub threshold: f64,
    pub passed: bool,
}

impl BalanceReport {
    /// Worst attribute imbalance; used to pick the best failed attempt.
    pub fn worst(&self) -> f64 {
        self.per_attribute
            .values()
            .map(|m| m.value)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("need at least 2 arms, got {0}")]
    TooFewArms(usize),
    #[error("too few personas: {personas} for {arms} arms")]
    TooFewPersonas { personas: usize, arms: usize },
    #[error("balance scoring requires a two-arm allocation, got {0} arms")]
    NotTwoArms(usize),
    #[error("arm {0:?} is empty")]
    EmptyArm(String),
    #[error("persona {0:?} in allocation but not in the persona list")]
    UnknownPersona(String),
    #[error("{0}")]
    Invalid(String),
}

/// Seeded uniform equal-split assignment; arm sizes differ by at most one.
pub fn allocate(
    personas: &[Persona],
    arms: &[Arm],
    seed: u64,
) -> Result<Allocation, AllocationError> {
    if arms.len() < 2 {
        return Err(AllocationError::TooFewArms(arms.len()));
    }
    if personas.len() < arms.len() {
        return Err(AllocationError::TooFewPersonas {
            personas: personas.len(),
            arms: arms.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..personas.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut assignment = BTreeMap::new();
    for (position, &idx) in order.iter().enumerate() {
        let arm = &arms[position % arms.len()];
        assignment.insert(personas[idx].id.clone(), arm.name.clone());
    }
    Ok(Allocation {
        seed,
        attempt: 0,
        assignment,
    })
}

/// Absolute standardized mean difference with the pooled-variance denominator
/// sqrt((var_a + var_b) / 2) over sample variances.
fn smd(a: &[f64], b: &[f64]) -> f64 {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        if xs.len() < 2 {
            0.0
        } else {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        }
    };
    let (ma, mb) = (mean(a), mean(b));
    let pooled = ((var(a, ma) + var(b, mb)) / 2.0).sqrt();
    let diff = (ma - mb).abs();
    if pooled == 0.0 {
        // Zero variance on both sides: identical means are perfectly
        // balanced, different means are irreconcilable.
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / pooled
    }
}

/// Total variation distance between the two arms' label distributions.
fn tvd(a: &[&str], b: &[&str]) -> f64 {
    fn count<'a>(xs: &[&'a str]) -> BTreeMap<&'a str, f64> {
        let mut map = BTreeMap::new();
        for x in xs {
            *map.entry(*x).or_insert(0.0) += 1.0;
        }
        map
    }
    let ca = count(a);
    let cb = count(b);
    let labels: std::collections::BTreeSet<&str> = ca.keys().chain(cb.keys()).copied().collect();
    let na = a.len() as f64;
    let nb = b.len() as f64;
    0.5 * labels
        .iter()
        .map(|l| {
            let pa = ca.get(l).copied().unwrap_or(0.0) / na;
            let pb = cb.get(l).copied().unwrap_or(0.0) / nb;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

/// Scores a two-arm allocation attribute by attribute.
pub fn balance_metrics(
    alloc: &Allocation,
    personas: &[Persona],
    attributes: &[AttributeSpec],
    threshold: f64,
) -> Result<BalanceReport, AllocationError> {
    let arm_names: Vec<String> = {
        let set: std::collections::BTreeSet<&String> = alloc.assignment.values().collect();
        set.into_iter().cloned().collect()
    };
    if arm_names.len() != 2 {
        return Err(AllocationError::NotTwoArms(arm_names.len()));
    }
    let by_id: BTreeMap<&str, &Persona> = personas.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut arm_personas: Vec<Vec<&Persona>> = vec![Vec::new(), Vec::new()];
    for (id, arm) in &alloc.assignment {
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| AllocationError::UnknownPersona(id.clone()))?;
        let slot = if *arm == arm_names[0] { 0 } else { 1 };
        arm_personas[slot].push(p);
    }
    for (i, members) in arm_personas.iter().enumerate() {
        if members.is_empty() {
            return Err(AllocationError::EmptyArm(arm_names[i].clone()));
        }
    }

    fn numeric_values(ps: &[&Persona], name: &str) -> Vec<f64> {
        ps.iter()
            .filter_map(|p| numeric_demographic(p, name))
            .collect()
    }
    fn categorical_values<'a>(ps: &[&'a Persona], name: &str) -> Vec<&'a str> {
        ps.iter()
            .filter_map(|p| categorical_demographic(p, name))
            .collect()
    }

    let mut per_attribute = BTreeMap::new();
    for attr in attributes {
        let metric = match &attr.kind {
            AttributeKind::Numeric { .. } => BalanceMetric {
                metric_kind: MetricKind::Smd,
                value: smd(
                    &numeric_values(&arm_personas[0], &attr.name),
                    &numeric_values(&arm_personas[1], &attr.name),
                ),
            },
            AttributeKind::Categorical { .. } => BalanceMetric {
                metric_kind: MetricKind::Tvd,
                value: tvd(
                    &categorical_values(&arm_personas[0], &attr.name),
                    &categorical_values(&arm_personas[1], &attr.name),
                ),
            },
        };
        per_attribute.insert(attr.name.clone(), metric);
    }
    let passed = per_attribute.values().all(|m| m.value <= threshold);
    Ok(BalanceReport {
        per_attribute,
        threshold,
        passed,
    })
}

/// Draws allocations at seeds seed, seed+1, ... and returns the first one
/// whose balance report passes. If none passes within `max_attempts`, the
/// best-scoring attempt is returned with `passed == false`.
pub fn rerandomize(
    personas: &[Persona],
    arms: &[Arm],
    attributes: &[AttributeSpec],
    threshold: f64,
    max_attempts: u32,
    seed: u64,
) -> Result<(Allocation, BalanceReport), AllocationError> {
    if threshold < 0.0 {
        return Err(AllocationError::Invalid(
            "threshold must be nonnegative".into(),
        ));
    }
    if max_attempts < 1 {
        return Err(AllocationError::Invalid("max_attempts must be ≥ 1".into()));
    }
    let mut best: Option<(Allocation, BalanceReport)> = None;
    for attempt in 0..max_attempts {
        let mut alloc = allocate(personas, arms, seed + attempt as u64)?;
        alloc.attempt = attempt;
        let report = balance_metrics(&alloc, personas, attributes, threshold)?;
        if report.passed {
            return Ok((alloc, report));
        }
        let better = match &best {
            None => true,
            Some((_, best_report)) => report.worst() < best_report.worst(),
        };
        if better {
            best = Some((alloc, report));
        }
    }
    Ok(best.expect("max_attempts >= 1 produced at least one attempt"))
}
