//! Environment contract shared by the live-browser and mock-shop backends:
//! structured observations, the action grammar, the derived action space, and
//! execution results.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Marker line that precedes the serialized observation block in agent
/// prompts. The scripted model locates the observation by this marker.
pub const OBSERVATION_MARKER: &str = "Current page (JSON):";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageType {
    Home,
    SearchResults,
    ProductDetail,
    PurchaseConfirmation,
}

impl fmt::Display for PageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PageType::Home => "home",
            PageType::SearchResults => "search_results",
            PageType::ProductDetail => "product_detail",
            PageType::PurchaseConfirmation => "purchase_confirmation",
        };
        f.write_str(s)
    }
}

/// One entry in a ranked result list. Indices are 1-based in page order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSummary {
    pub index: usize,
    pub title: String,
    pub price: f64,
    pub rating: f64,
    pub review_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOption {
    pub value: String,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGroup {
    pub name: String,
    pub options: Vec<FilterOption>,
}

/// Full detail view of one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDetail {
    pub title: String,
    pub brand: String,
    pub price: f64,
    pub rating: f64,
    pub review_count: u32,
    pub department: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// Structured snapshot of the current page, serialized as canonical JSON
/// (struct field order is the wire order; map keys sort lexicographically).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub page_type: PageType,
    pub query: Option<String>,
    pub products: Vec<ProductSummary>,
    pub filter_groups: Vec<FilterGroup>,
    pub detail: Option<ProductDetail>,
    pub cart_count: u32,
    pub notices: Vec<String>,
}

impl Observation {
    pub fn home(cart_count: u32) -> Self {
        Observation {
            page_type: PageType::Home,
            query: None,
            products: Vec::new(),
            filter_groups: Vec::new(),
            detail: None,
            cart_count,
            notices: Vec::new(),
        }
    }

    /// Canonical single-line JSON used in prompts and trace digests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("observation serializes")
    }

    /// Checks the page-type structural invariants.
    pub fn validate(&self) -> Result<(), EnvError> {
        match self.page_type {
            PageType::Home => {
                if !self.products.is_empty() || !self.filter_groups.is_empty() {
                    return Err(EnvError::InvalidObservation(
                        "home page must carry no products or filter groups".into(),
                    ));
                }
            }
            PageType::SearchResults => {
                for (i, p) in self.products.iter().enumerate() {
                    if p.index != i + 1 {
                        return Err(EnvError::InvalidObservation(format!(
                            "product indices must be consecutive from 1, found {} at position {}",
                            p.index,
                            i + 1
                        )));
                    }
                }
                for g in &self.filter_groups {
                    let mut seen = std::collections::BTreeSet::new();
                    for o in &g.options {
                        if !seen.insert(o.value.as_str()) {
                            return Err(EnvError::InvalidObservation(format!(
                                "duplicate option {:?} in filter group {:?}",
                                o.value, g.name
                            )));
                        }
                    }
                }
            }
            PageType::ProductDetail => {
                if self.detail.is_none() {
                    return Err(EnvError::InvalidObservation(
                        "product_detail page must carry a detail block".into(),
                    ));
                }
            }
            PageType::PurchaseConfirmation => {}
        }
        Ok(())
    }
}

/// One move in the five-action grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Search { query: String },
    ClickProduct { index: usize },
    ClickFilter { group: String, value: String },
    Purchase,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Search,
    ClickProduct,
    ClickFilterOption,
    Purchase,
    Stop,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Search,
        ActionKind::ClickProduct,
        ActionKind::ClickFilterOption,
        ActionKind::Purchase,
        ActionKind::Stop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Search => "search",
            ActionKind::ClickProduct => "click_product",
            ActionKind::ClickFilterOption => "click_filter_option",
            ActionKind::Purchase => "purchase",
            ActionKind::Stop => "stop",
        }
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Search { .. } => ActionKind::Search,
            Action::ClickProduct { .. } => ActionKind::ClickProduct,
            Action::ClickFilter { .. } => ActionKind::ClickFilterOption,
            Action::Purchase => ActionKind::Purchase,
            Action::Stop => ActionKind::Stop,
        }
    }

    /// Canonical command form; `parse_action` on the full space inverts this.
    pub fn to_command(&self) -> String {
        match self {
            Action::Search { query } => format!("search(\"{}\")", query),
            Action::ClickProduct { index } => format!("click_product({})", index),
            Action::ClickFilter { group, value } => {
                format!("click_filter_option(\"{}: {}\")", group, value)
            }
            Action::Purchase => "purchase".to_string(),
            Action::Stop => "stop".to_string(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_command())
    }
}

/// Legal-move set derived from one observation. Stop is always allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub search: bool,
    pub product_indices: Vec<usize>,
    pub filter_options: Vec<(String, String)>,
    pub purchase: bool,
}

impl ActionSpace {
    /// Returns an error description if the action is outside this space.
    pub fn check(&self, action: &Action) -> Result<(), String> {
        match action {
            Action::Search { query } => {
                if !self.search {
                    Err("search is not available on this page".into())
                } else if query.trim().is_empty() {
                    Err("search query must be non-empty".into())
                } else {
                    Ok(())
                }
            }
            Action::ClickProduct { index } => {
                if self.product_indices.contains(index) {
                    Ok(())
                } else {
                    Err(format!(
                        "product index {} is not clickable (valid: {:?})",
                        index, self.product_indices
                    ))
                }
            }
            Action::ClickFilter { group, value } => {
                let hit = self.filter_options.iter().any(|(g, v)| {
                    g.eq_ignore_ascii_case(group.trim()) && v.eq_ignore_ascii_case(value.trim())
                });
                if hit {
                    Ok(())
                } else {
                    Err(format!(
                        "filter option {:?}: {:?} is not available",
                        group, value
                    ))
                }
            }
            Action::Purchase => {
                if self.purchase {
                    Ok(())
                } else {
                    Err("purchase is not available on this page".into())
                }
            }
            Action::Stop => Ok(()),
        }
    }

    /// Resolves a parsed filter action to the exact (group, value) casing
    /// listed in the space.
    pub fn resolve_filter(&self, group: &str, value: &str) -> Option<(String, String)> {
        self.filter_options
            .iter()
            .find(|(g, v)| {
                g.eq_ignore_ascii_case(group.trim()) && v.eq_ignore_ascii_case(value.trim())
            })
            .cloned()
    }
}

/// Derives the legal-move set from an observation via the page-type table.
pub fn action_space(obs: &Observation) -> ActionSpace {
    match obs.page_type {
        PageType::Home => ActionSpace {
            search: true,
            product_indices: Vec::new(),
            filter_options: Vec::new(),
            purchase: false,
        },
        PageType::SearchResults => ActionSpace {
            search: true,
            product_indices: obs.products.iter().map(|p| p.index).collect(),
            filter_options: obs
                .filter_groups
                .iter()
                .flat_map(|g| {
                    g.options
                        .iter()
                        .map(move |o| (g.name.clone(), o.value.clone()))
                })
                .collect(),
            purchase: false,
        },
        PageType::ProductDetail => ActionSpace {
            search: true,
            product_indices: Vec::new(),
            filter_options: Vec::new(),
            purchase: true,
        },
        PageType::PurchaseConfirmation => ActionSpace {
            search: true,
            product_indices: Vec::new(),
            filter_options: Vec::new(),
            purchase: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStrategy {
    Retry,
    Scroll,
    Reparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Recovered { strategy: RecoveryStrategy },
    Failed { reason: String },
}

/// Outcome of executing one action against the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    #[serde(flatten)]
    pub status: ExecStatus,
    pub latency_s: f64,
}

impl ExecResult {
    pub fn ok(latency_s: f64) -> Self {
        ExecResult {
            status: ExecStatus::Ok,
            latency_s,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.status, ExecStatus::Failed { .. })
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("session lost: {0}")]
    SessionLost(String),
    #[error("page unclassifiable; signature: {signature}")]
    Unclassifiable { signature: String },
    #[error("action out of space: {action}: {reason}")]
    OutOfSpace { action: String, reason: String },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("execution failed: {0}")]
    ExecutionFailed(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error {error}: {message}")]
    Protocol { error: String, message: String },
}

/// One interactive environment session, owned by exactly one worker.
pub trait EnvSession: Send {
    /// Snapshot of the current page; does not advance the environment.
    fn observe(&mut self) -> Result<Observation, EnvError>;
    /// Advances the environment. Callers must check the action against the
    /// current action space first; an out-of-space action is an error.
    fn execute(&mut self, action: &Action) -> Result<ExecResult, EnvError>;
}

/// Opens fresh environment sessions for workers, one per (persona, arm).
pub trait EnvFactory: Send + Sync {
    fn open(&self, variant_id: &str, session_seed: u64) -> Result<Box<dyn EnvSession>, EnvError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn results_obs(n_products: usize, groups: &[(&str, &[&str])]) -> Observation {
        Observation {
            page_type: PageType::SearchResults,
            query: Some("solar filter for telescope".into()),
            products: (1..=n_products)
                .map(|i| ProductSummary {
                    index: i,
                    title: format!("Product {}", i),
                    price: 10.0 * i as f64,
                    rating: 4.0,
                    review_count: 10,
                })
                .collect(),
            filter_groups: groups
                .iter()
                .map(|(name, values)| FilterGroup {
                    name: name.to_string(),
                    options: values
                        .iter()
                        .map(|v| FilterOption {
                            value: v.to_string(),
                            selected: false,
                        })
                        .collect(),
                })
                .collect(),
            detail: None,
            cart_count: 0,
            notices: Vec::new(),
        }
    }

    #[test]
    fn home_space_is_search_and_stop() {
        let space = action_space(&Observation::home(0));
        assert!(space.search);
        assert!(!space.purchase);
        assert!(space.product_indices.is_empty());
        assert!(space.filter_options.is_empty());
        assert!(space.check(&Action::Stop).is_ok());
        assert!(space
            .check(&Action::Search {
                query: "solar filter".into()
            })
            .is_ok());
        assert!(space.check(&Action::Purchase).is_err());
        assert!(space.check(&Action::ClickProduct { index: 1 }).is_err());
    }

    #[test]
    fn results_space_enumerates_products_and_filters() {
        let obs = results_obs(
            3,
            &[("Brand", &["Sony", "Bose"]), ("Rating", &[">=4", ">=3"])],
        );
        let space = action_space(&obs);
        assert_eq!(space.product_indices, vec![1, 2, 3]);
        assert_eq!(space.filter_options.len(), 4);
        assert!(space.check(&Action::ClickProduct { index: 3 }).is_ok());
        assert!(space.check(&Action::ClickProduct { index: 9 }).is_err());
        assert!(space
            .check(&Action::ClickFilter {
                group: "brand".into(),
                value: "SONY".into()
            })
            .is_ok());
        assert!(!space.purchase);
    }

    #[test]
    fn product_detail_allows_purchase() {
        let obs = Observation {
            page_type: PageType::ProductDetail,
            query: Some("q".into()),
            products: Vec::new(),
            filter_groups: Vec::new(),
            detail: Some(ProductDetail {
                title: "Thing".into(),
                brand: "Acme".into(),
                price: 60.99,
                rating: 4.5,
                review_count: 3,
                department: "Electronics".into(),
                attributes: BTreeMap::new(),
            }),
            cart_count: 0,
            notices: Vec::new(),
        };
        let space = action_space(&obs);
        assert!(space.purchase);
        assert!(space.check(&Action::Purchase).is_ok());
    }

    #[test]
    fn observation_invariants() {
        assert!(Observation::home(0).validate().is_ok());
        let mut bad_home = Observation::home(0);
        bad_home.products.push(ProductSummary {
            index: 1,
            title: "x".into(),
            price: 1.0,
            rating: 0.0,
            review_count: 0,
        });
        assert!(bad_home.validate().is_err());

        let mut obs = results_obs(2, &[("Brand", &["Sony"])]);
        assert!(obs.validate().is_ok());
        obs.products[1].index = 5;
        assert!(obs.validate().is_err());
    }

    #[test]
    fn canonical_json_field_order_is_stable() {
        let json = results_obs(1, &[("Brand", &["Sony"])]).canonical_json();
        let page = json.find("\"page_type\"").unwrap();
        let query = json.find("\"query\"").unwrap();
        let cart = json.find("\"cart_count\"").unwrap();
        assert!(page < query && query < cart);
    }
}
