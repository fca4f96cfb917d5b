//! Selector-driven extraction of structured observations from page HTML.
//! Rulesets are data (JSON files), one per target site: ordered page
//! detectors fix the page type, field rules populate the observation, and
//! everything outside the rules (ads, banners, unrelated links) is dropped.

use crate::env::{
    EnvError, FilterGroup, FilterOption, Observation, PageType, ProductDetail, ProductSummary,
};
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDetector {
    pub selector: String,
    pub page_type: PageType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostProcess {
    Trim,
    ParsePrice,
    ParseRating,
    ParseInt,
    ParseBool,
}

/// One extraction rule: where to look (CSS selector, relative to the current
/// context; absent means the context element itself), what to read (text or
/// an attribute), and how to post-process it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRule {
    #[serde(default)]
    pub selector: Option<String>,
    /// Attribute name to read; text content when absent.
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(default)]
    pub post: Option<PostProcess>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSelectors {
    pub search_box: String,
    #[serde(default)]
    pub search_submit: Option<String>,
    /// Template with an `{index}` placeholder (1-based).
    pub product_link: String,
    /// Template with `{group}` and `{value}` placeholders.
    pub filter_option_link: String,
    pub buy_button: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRuleset {
    /// Ordered most-specific first; the first match fixes the page type.
    pub page_detectors: Vec<PageDetector>,
    pub fields: BTreeMap<String, FieldRule>,
    pub actions: ActionSelectors,
}

const COMMON_ROLES: [&str; 3] = ["query", "cart_count", "notice"];
const RESULTS_ROLES: [&str; 10] = [
    "product_item",
    "product_title",
    "product_price",
    "product_rating",
    "product_reviews",
    "filter_group_item",
    "filter_group_name",
    "filter_option_item",
    "filter_option_value",
    "filter_option_selected",
];
const DETAIL_ROLES: [&str; 9] = [
    "detail_title",
    "detail_brand",
    "detail_price",
    "detail_rating",
    "detail_reviews",
    "detail_department",
    "detail_attr_item",
    "detail_attr_key",
    "detail_attr_value",
];

impl ExtractionRuleset {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Transport(format!("{}: {}", path.display(), e)))?;
        let rules: ExtractionRuleset = serde_json::from_str(&text)
            .map_err(|e| EnvError::InvalidObservation(format!("{}: {}", path.display(), e)))?;
        rules.validate()?;
        Ok(rules)
    }

    /// Checks selector syntax and that every observation field of each
    /// detectable page type has a rule.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.page_detectors.is_empty() {
            return Err(EnvError::InvalidObservation(
                "ruleset needs at least one page detector".into(),
            ));
        }
        for d in &self.page_detectors {
            compile(&d.selector)?;
        }
        for (role, rule) in &self.fields {
            if let Some(selector) = &rule.selector {
                compile(selector)
                    .map_err(|e| EnvError::InvalidObservation(format!("field {role:?}: {e}")))?;
            }
        }
        let detectable: Vec<PageType> = self.page_detectors.iter().map(|d| d.page_type).collect();
        let mut required: Vec<&str> = COMMON_ROLES.to_vec();
        if detectable.contains(&PageType::SearchResults) {
            required.extend(RESULTS_ROLES);
        }
        if detectable.contains(&PageType::ProductDetail) {
            required.extend(DETAIL_ROLES);
        }
        for role in required {
            if !self.fields.contains_key(role) {
                return Err(EnvError::InvalidObservation(format!(
                    "ruleset is missing the {:?} field rule",
                    role
                )));
            }
        }
        Ok(())
    }

    fn rule(&self, role: &str) -> &FieldRule {
        self.fields.get(role).expect("validated role")
    }
}

fn compile(selector: &str) -> Result<Selector, EnvError> {
    Selector::parse(selector)
        .map_err(|e| EnvError::InvalidObservation(format!("bad selector {:?}: {}", selector, e)))
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn element_text(el: &ElementRef) -> String {
    collapse_whitespace(&el.text().collect::<String>())
}

/// Strips currency symbols and thousands separators: "$1,299.50" -> 1299.5.
pub fn parse_price(text: &str) -> Result<f64, String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    cleaned
        .parse()
        .map_err(|_| format!("unparseable price {:?}", text))
}

/// Reads the first decimal number: "4.5 out of 5 stars" -> 4.5.
pub fn parse_rating(text: &str) -> Result<f64, String> {
    let start = text
        .find(|c: char| c.is_ascii_digit())
        .ok_or_else(|| format!("unparseable rating {:?}", text))?;
    let number: String = text[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    number
        .parse()
        .map_err(|_| format!("unparseable rating {:?}", text))
}

/// Digits with separators stripped: "(2,341)" -> 2341.
pub fn parse_int(text: &str) -> Result<u32, String> {
    let digits: String = text.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(format!("unparseable integer {:?}", text));
    }
    digits
        .parse()
        .map_err(|_| format!("unparseable integer {:?}", text))
}

fn parse_bool(text: &str) -> bool {
    matches!(
        text.trim().to_ascii_lowercase().as_str(),
        "true" | "1" | "yes"
    )
}

#[derive(Debug, Clone, PartialEq)]
enum Extracted {
    Text(String),
    Number(f64),
    Int(u32),
    Flag(bool),
}

impl Extracted {
    fn text(self) -> String {
        match self {
            Extracted::Text(t) => t,
            Extracted::Number(n) => n.to_string(),
            Extracted::Int(i) => i.to_string(),
            Extracted::Flag(b) => b.to_string(),
        }
    }

    fn number(self, role: &str) -> Result<f64, EnvError> {
        match self {
            Extracted::Number(n) => Ok(n),
            Extracted::Int(i) => Ok(i as f64),
            other => Err(EnvError::InvalidObservation(format!(
                "{role}: expected a number, got {other:?}"
            ))),
        }
    }

    fn int(self, role: &str) -> Result<u32, EnvError> {
        match self {
            Extracted::Int(i) => Ok(i),
            other => Err(EnvError::InvalidObservation(format!(
                "{role}: expected an integer, got {other:?}"
            ))),
        }
    }

    fn flag(self) -> bool {
        matches!(self, Extracted::Flag(true))
    }
}

fn apply_rule(
    rule: &FieldRule,
    el: &ElementRef,
    role: &str,
) -> Result<Option<Extracted>, EnvError> {
    let target: Option<ElementRef> = match &rule.selector {
        Some(selector) => el.select(&compile(selector)?).next(),
        None => Some(*el),
    };
    let Some(target) = target else {
        return Ok(None);
    };
    let raw = match &rule.attribute {
        Some(attr) => match target.value().attr(attr) {
            Some(v) => v.to_string(),
            None => return Ok(None),
        },
        None => element_text(&target),
    };
    let value = match rule.post {
        None | Some(PostProcess::Trim) => Extracted::Text(raw.trim().to_string()),
        Some(PostProcess::ParsePrice) => Extracted::Number(
            parse_price(&raw).map_err(|e| EnvError::InvalidObservation(format!("{role}: {e}")))?,
        ),
        Some(PostProcess::ParseRating) => Extracted::Number(
            parse_rating(&raw).map_err(|e| EnvError::InvalidObservation(format!("{role}: {e}")))?,
        ),
        Some(PostProcess::ParseInt) => Extracted::Int(
            parse_int(&raw).map_err(|e| EnvError::InvalidObservation(format!("{role}: {e}")))?,
        ),
        Some(PostProcess::ParseBool) => Extracted::Flag(parse_bool(&raw)),
    };
    Ok(Some(value))
}

fn required(
    rules: &ExtractionRuleset,
    role: &str,
    el: &ElementRef,
    context: &str,
) -> Result<Extracted, EnvError> {
    apply_rule(rules.rule(role), el, role)?
        .ok_or_else(|| EnvError::InvalidObservation(format!("{context}: no match for {role:?}")))
}

/// A short human-readable page signature for unclassifiable-page errors.
fn page_signature(doc: &Html) -> String {
    let root = doc.root_element();
    let title = doc
        .select(&Selector::parse("title").expect("static selector"))
        .next()
        .map(|t| element_text(&t))
        .unwrap_or_default();
    let body = collapse_whitespace(&root.text().collect::<String>());
    let mut signature = if title.is_empty() {
        body
    } else {
        format!("{} | {}", title, body)
    };
    signature.truncate(120);
    signature
}

/// Pure function of (html, rules): the first matching detector fixes the
/// page type, field rules populate the observation, everything else is
/// dropped.
pub fn extract(html: &str, rules: &ExtractionRuleset) -> Result<Observation, EnvError> {
    let doc = Html::parse_document(html);
    let root = doc.root_element();

    let page_type = rules
        .page_detectors
        .iter()
        .find(|d| {
            compile(&d.selector)
                .map(|sel| doc.select(&sel).next().is_some())
                .unwrap_or(false)
        })
        .map(|d| d.page_type)
        .ok_or_else(|| EnvError::Unclassifiable {
            signature: page_signature(&doc),
        })?;

    let query = apply_rule(rules.rule("query"), &root, "query")?
        .map(Extracted::text)
        .filter(|q| !q.is_empty());
    let cart_count = match apply_rule(rules.rule("cart_count"), &root, "cart_count")? {
        Some(v) => v.int("cart_count")?,
        None => 0,
    };
    let notice_rule = rules.rule("notice");
    let notices: Vec<String> = match &notice_rule.selector {
        Some(selector) => doc
            .select(&compile(selector)?)
            .map(|el| element_text(&el))
            .filter(|t| !t.is_empty())
            .collect(),
        None => Vec::new(),
    };

    let mut observation = Observation {
        page_type,
        query,
        products: Vec::new(),
        filter_groups: Vec::new(),
        detail: None,
        cart_count,
        notices,
    };

    match page_type {
        PageType::Home | PageType::PurchaseConfirmation => {}
        PageType::SearchResults => {
            let item_selector =
                rules
                    .rule("product_item")
                    .selector
                    .as_deref()
                    .ok_or_else(|| {
                        EnvError::InvalidObservation("product_item rule needs a selector".into())
                    })?;
            for (i, card) in doc.select(&compile(item_selector)?).enumerate() {
                let context = format!("product {}", i + 1);
                observation.products.push(ProductSummary {
                    index: i + 1,
                    title: required(rules, "product_title", &card, &context)?.text(),
                    price: required(rules, "product_price", &card, &context)?
                        .number("product_price")?,
                    rating: required(rules, "product_rating", &card, &context)?
                        .number("product_rating")?,
                    review_count: required(rules, "product_reviews", &card, &context)?
                        .int("product_reviews")?,
                });
            }
            let group_selector = rules
                .rule("filter_group_item")
                .selector
                .as_deref()
                .ok_or_else(|| {
                    EnvError::InvalidObservation("filter_group_item rule needs a selector".into())
                })?;
            let option_selector = rules
                .rule("filter_option_item")
                .selector
                .as_deref()
                .ok_or_else(|| {
                    EnvError::InvalidObservation("filter_option_item rule needs a selector".into())
                })?;
            for group_el in doc.select(&compile(group_selector)?) {
                let name = required(rules, "filter_group_name", &group_el, "filter group")?.text();
                let mut options = Vec::new();
                for option_el in group_el.select(&compile(option_selector)?) {
                    let value = required(
                        rules,
                        "filter_option_value",
                        &option_el,
                        &format!("filter group {:?}", name),
                    )?
                    .text();
                    let selected =
                        apply_rule(rules.rule("filter_option_selected"), &option_el, "selected")?
                            .map(Extracted::flag)
                            .unwrap_or(false);
                    options.push(FilterOption { value, selected });
                }
                observation
                    .filter_groups
                    .push(FilterGroup { name, options });
            }
        }
        PageType::ProductDetail => {
            let mut attributes = BTreeMap::new();
            if let Some(item_selector) = rules.rule("detail_attr_item").selector.as_deref() {
                for row in doc.select(&compile(item_selector)?) {
                    let key = required(rules, "detail_attr_key", &row, "detail attribute")?.text();
                    let value =
                        required(rules, "detail_attr_value", &row, "detail attribute")?.text();
                    attributes.insert(key, value);
                }
            }
            observation.detail = Some(ProductDetail {
                title: required(rules, "detail_title", &root, "detail")?.text(),
                brand: required(rules, "detail_brand", &root, "detail")?.text(),
                price: required(rules, "detail_price", &root, "detail")?.number("detail_price")?,
                rating: required(rules, "detail_rating", &root, "detail")?
                    .number("detail_rating")?,
                review_count: required(rules, "detail_reviews", &root, "detail")?
                    .int("detail_reviews")?,
                department: required(rules, "detail_department", &root, "detail")?.text(),
                attributes,
            });
        }
    }

    observation.validate()?;
    Ok(observation)
}
