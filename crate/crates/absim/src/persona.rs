//! Persona generation, validation, and sampling. Demographics are sampled
//! host-side from the agent specification and injected into the generation
//! prompt; the model writes the narrative around those fixed values, and a
//! tolerant section parser reads the document back.

use crate::model::{CallContext, Message, ModelClient, ModelError, PERSONA_REQUEST_MARKER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const DEMOGRAPHIC_KEYS: [&str; 5] = ["age", "gender", "education", "profession", "income"];

pub const NARRATIVE_SECTIONS: [&str; 5] = [
    "background",
    "financial_situation",
    "shopping_habits",
    "professional_life",
    "personal_style",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeight {
    pub value: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericDistribution {
    Uniform,
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical {
        values: Vec<CategoryWeight>,
    },
    Numeric {
        min: f64,
        max: f64,
        distribution: NumericDistribution,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
}

/// One intention template. Placeholders like `{item}` are filled from the
/// slot lists by a seeded draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionTemplate {
    pub template: String,
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub budget_limit: Option<f64>,
    #[serde(default)]
    pub category_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub count: u32,
    pub population_description: String,
    pub attributes: Vec<AttributeSpec>,
    pub intentions: Vec<IntentionTemplate>,
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("invalid agent spec: {0}")]
    InvalidSpec(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error(
        "persona {index} failed validation after {attempts} attempts; violations: {violations}"
    )]
    ValidationExhausted {
        index: u32,
        attempts: u32,
        violations: String,
    },
    #[error("sample size {n} out of range 1..={pool}")]
    SampleOutOfRange { n: usize, pool: usize },
    #[error("io error: {0}")]
    Io(String),
    #[error("malformed pool file: {0}")]
    Malformed(String),
}

impl AgentSpec {
    pub fn validate(&self) -> Result<(), PersonaError> {
        if self.count < 1 {
            return Err(PersonaError::InvalidSpec("count must be ≥ 1".into()));
        }
        if self.intentions.is_empty() {
            return Err(PersonaError::InvalidSpec(
                "at least one intention template is required".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for attr in &self.attributes {
            if !names.insert(attr.name.as_str()) {
                return Err(PersonaError::InvalidSpec(format!(
                    "duplicate attribute name {:?}",
                    attr.name
                )));
            }
            if !DEMOGRAPHIC_KEYS.contains(&attr.name.as_str()) {
                return Err(PersonaError::InvalidSpec(format!(
                    "attribute {:?} is not a persona demographic (expected one of {:?})",
                    attr.name, DEMOGRAPHIC_KEYS
                )));
            }
            match &attr.kind {
                AttributeKind::Categorical { values } => {
                    if values.is_empty() {
                        return Err(PersonaError::InvalidSpec(format!(
                            "attribute {:?} has no categorical values",
                            attr.name
                        )));
                    }
                    if values.iter().any(|v| v.weight < 0.0) {
                        return Err(PersonaError::InvalidSpec(format!(
                            "attribute {:?} has a negative weight",
                            attr.name
                        )));
                    }
                    let sum: f64 = values.iter().map(|v| v.weight).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(PersonaError::InvalidSpec(format!(
                            "attribute {:?} weights sum to {}, expected 1",
                            attr.name, sum
                        )));
                    }
                }
                AttributeKind::Numeric { min, max, .. } => {
                    if min >= max {
                        return Err(PersonaError::InvalidSpec(format!(
                            "attribute {:?} requires min < max",
                            attr.name
                        )));
                    }
                }
            }
        }
        for (i, template) in self.intentions.iter().enumerate() {
            if template.template.trim().is_empty() {
                return Err(PersonaError::InvalidSpec(format!(
                    "intention template {} is empty",
                    i
                )));
            }
            for placeholder in placeholders(&template.template) {
                if !template.slots.contains_key(&placeholder) {
                    return Err(PersonaError::InvalidSpec(format!(
                        "intention template {} uses {{{}}} with no slot values",
                        i, placeholder
                    )));
                }
            }
            for (slot, values) in &template.slots {
                if values.is_empty() {
                    return Err(PersonaError::InvalidSpec(format!(
                        "intention template {} slot {:?} has no values",
                        i, slot
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Stable hash of the canonical spec JSON.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u32,
    pub gender: String,
    pub education: String,
    pub profession: String,
    pub income: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub background: String,
    pub financial_situation: String,
    pub shopping_habits: String,
    pub professional_life: String,
    pub personal_style: String,
}

impl Narrative {
    pub fn section(&self, name: &str) -> &str {
        match name {
            "background" => &self.background,
            "financial_situation" => &self.financial_situation,
            "shopping_habits" => &self.shopping_habits,
            "professional_life" => &self.professional_life,
            "personal_style" => &self.personal_style,
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub name: String,
    pub demographics: Demographics,
    pub narrative: Narrative,
}

impl Persona {
    /// Renders the persona as the labeled-section document used in prompts.
    pub fn document(&self) -> String {
        format!(
            "Persona: {}\n\nBackground:\n{}\n\nDemographics:\n\nAge: {}\n\nGender: {}\n\n\
             Education: {}\n\nProfession: {}\n\nIncome: ${:.0}\n\nFinancial Situation:\n{}\n\n\
             Shopping Habits:\n{}\n\nProfessional Life:\n{}\n\nPersonal Style:\n{}\n",
            self.name,
            self.narrative.background,
            self.demographics.age,
            self.demographics.gender,
            self.demographics.education,
            self.demographics.profession,
            self.demographics.income,
            self.narrative.financial_situation,
            self.narrative.shopping_habits,
            self.narrative.professional_life,
            self.narrative.personal_style,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intention {
    pub goal_text: String,
    #[serde(default)]
    pub budget_limit: Option<f64>,
    #[serde(default)]
    pub category_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaPool {
    pub spec_fingerprint: String,
    pub personas: Vec<Persona>,
    pub intentions: BTreeMap<String, Intention>,
}

impl PersonaPool {
    pub fn save(&self, path: &Path) -> Result<(), PersonaError> {
        let json = serde_json::to_string_pretty(self).expect("pool serializes");
        std::fs::write(path, json).map_err(|e| PersonaError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PersonaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PersonaError::Io(format!("{}: {}", path.display(), e)))?;
        let pool: PersonaPool = serde_json::from_str(&text)
            .map_err(|e| PersonaError::Malformed(format!("{}: {}", path.display(), e)))?;
        let mut ids = std::collections::BTreeSet::new();
        for p in &pool.personas {
            if !ids.insert(p.id.as_str()) {
                return Err(PersonaError::Malformed(format!("duplicate id {:?}", p.id)));
            }
            if !pool.intentions.contains_key(&p.id) {
                return Err(PersonaError::Malformed(format!(
                    "persona {:?} has no intention",
                    p.id
                )));
            }
        }
        Ok(pool)
    }

    pub fn persona(&self, id: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Every violated constraint; an empty list means the persona is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }
}

/// Numeric view of a demographic, for range checks and balance metrics.
pub fn numeric_demographic(p: &Persona, name: &str) -> Option<f64> {
    match name {
        "age" => Some(p.demographics.age as f64),
        "income" => Some(p.demographics.income),
        _ => None,
    }
}

/// Label view of a demographic.
pub fn categorical_demographic<'a>(p: &'a Persona, name: &str) -> Option<&'a str> {
    match name {
        "gender" => Some(&p.demographics.gender),
        "education" => Some(&p.demographics.education),
        "profession" => Some(&p.demographics.profession),
        _ => None,
    }
}

/// Checks a persona against the generating spec. Never fails; all problems
/// are reported as violations.
pub fn validate_persona(p: &Persona, spec: &AgentSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if p.name.trim().is_empty() {
        report.push("name", "missing or empty");
    }
    if p.demographics.age == 0 {
        report.push("demographics.age", "missing");
    }
    if p.demographics.income <= 0.0 {
        report.push("demographics.income", "missing");
    }
    for (key, value) in [
        ("gender", &p.demographics.gender),
        ("education", &p.demographics.education),
        ("profession", &p.demographics.profession),
    ] {
        if value.trim().is_empty() {
            report.push(&format!("demographics.{}", key), "missing or empty");
        }
    }
    for section in NARRATIVE_SECTIONS {
        if p.narrative.section(section).trim().is_empty() {
            report.push(&format!("narrative.{}", section), "missing or empty");
        }
    }
    for attr in &spec.attributes {
        match &attr.kind {
            AttributeKind::Numeric { min, max, .. } => {
                if let Some(value) = numeric_demographic(p, &attr.name) {
                    if value < *min || value > *max {
                        report.push(&attr.name, format!("{} outside [{}, {}]", value, min, max));
                    }
                }
            }
            AttributeKind::Categorical { values } => {
                if let Some(label) = categorical_demographic(p, &attr.name) {
                    let known = values
                        .iter()
                        .any(|v| v.value.eq_ignore_ascii_case(label.trim()));
                    if !known {
                        report.push(
                            &attr.name,
                            format!("label {:?} not in the spec's value set", label),
                        );
                    }
                }
            }
        }
    }
    report
}

// ── Host-side demographic sampling ──────────────────────────────────────────

fn sample_numeric(min: f64, max: f64, dist: &NumericDistribution, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        NumericDistribution::Uniform => rng.gen_range(min..=max),
        NumericDistribution::Normal { mean, sd } => {
            // Rejection-sample the truncated normal, then clamp as a last
            // resort. Box-Muller keeps the dependency surface small.
            for _ in 0..100 {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                let value = mean + sd * z;
                if value >= min && value <= max {
                    return value;
                }
            }
            mean.clamp(min, max)
        }
    }
}

fn sample_categorical(values: &[CategoryWeight], rng: &mut ChaCha8Rng) -> String {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for v in values {
        cumulative += v.weight;
        if u < cumulative {
            return v.value.clone();
        }
    }
    values.last().expect("non-empty values").value.clone()
}

/// Built-in fallbacks for demographics the spec does not constrain.
fn default_demographic(key: &str, rng: &mut ChaCha8Rng) -> String {
    match key {
        "age" => rng.gen_range(18..=79).to_string(),
        "gender" => {
            let labels = ["Female", "Male", "Non-binary"];
            let weights = [0.49, 0.49, 0.02];
            let u: f64 = rng.gen();
            let mut cumulative = 0.0;
            for (label, w) in labels.iter().zip(weights) {
                cumulative += w;
                if u < cumulative {
                    return label.to_string();
                }
            }
            labels[0].to_string()
        }
        "education" => {
            let labels = [
                "High school diploma",
                "Associate degree",
                "Bachelor's degree",
                "Master's degree",
            ];
            labels[rng.gen_range(0..labels.len())].to_string()
        }
        "profession" => {
            let labels = [
                "Teacher",
                "Nurse",
                "Software Engineer",
                "Retail Associate",
                "Accountant",
                "Electrician",
            ];
            labels[rng.gen_range(0..labels.len())].to_string()
        }
        "income" => ((rng.gen_range(24_000.0..150_000.0f64) / 500.0).round() * 500.0).to_string(),
        _ => String::new(),
    }
}

fn sample_demographics(spec: &AgentSpec, rng: &mut ChaCha8Rng) -> Demographics {
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    for key in DEMOGRAPHIC_KEYS {
        let value = match spec.attribute(key).map(|a| &a.kind) {
            Some(AttributeKind::Numeric {
                min,
                max,
                distribution,
            }) => {
                let v = sample_numeric(*min, *max, distribution, rng);
                if key == "age" {
                    format!("{}", v.round() as u32)
                } else {
                    format!("{}", v.round())
                }
            }
            Some(AttributeKind::Categorical { values }) => sample_categorical(values, rng),
            None => default_demographic(key, rng),
        };
        values.insert(key, value);
    }
    Demographics {
        age: values["age"].parse().unwrap_or(0),
        gender: values["gender"].clone(),
        education: values["education"].clone(),
        profession: values["profession"].clone(),
        income: values["income"].parse().unwrap_or(0.0),
    }
}

// ── Generation ──────────────────────────────────────────────────────────────

const FIXED_DEMOGRAPHICS_HEADER: &str = "Fixed demographics (use these exact values):";

fn generation_prompt(spec: &AgentSpec, demographics: &Demographics, attempt_note: &str) -> String {
    format!(
        "{marker} for one simulated shopper.\nPopulation: {population}\n\n{header}\n\
         Age: {age}\nGender: {gender}\nEducation: {education}\nProfession: {profession}\n\
         Income: ${income:.0}\n\n{note}Format the document exactly like this, with every section present:\n\
         Persona: <first name>\n\nBackground:\n<2-4 sentences>\n\nDemographics:\n\n\
         Age: <years>\n\nGender: <label>\n\nEducation: <label>\n\nProfession: <label>\n\n\
         Income: $<amount>\n\nFinancial Situation:\n<2-4 sentences>\n\nShopping Habits:\n\
         <2-4 sentences>\n\nProfessional Life:\n<2-4 sentences>\n\nPersonal Style:\n<2-4 sentences>\n",
        marker = PERSONA_REQUEST_MARKER,
        population = spec.population_description,
        header = FIXED_DEMOGRAPHICS_HEADER,
        age = demographics.age,
        gender = demographics.gender,
        education = demographics.education,
        profession = demographics.profession,
        income = demographics.income,
        note = attempt_note,
    )
}

/// Generates exactly `spec.count` validated personas. Each persona gets up
/// to 3 generation attempts around its fixed demographics before the whole
/// call fails with the violating attributes.
pub fn generate_personas(
    spec: &AgentSpec,
    model: &dyn ModelClient,
    seed: u64,
) -> Result<PersonaPool, PersonaError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut personas = Vec::with_capacity(spec.count as usize);
    let mut intentions = BTreeMap::new();

    for i in 0..spec.count {
        let id = format!("p{:05}", i + 1);
        let demographics = sample_demographics(spec, &mut rng);
        let intention = draw_intention(spec, &mut rng);

        let mut accepted = None;
        let mut last_report = ValidationReport::default();
        const MAX_ATTEMPTS: u32 = 3;
        for attempt in 0..MAX_ATTEMPTS {
            let note = if attempt == 0 {
                String::new()
            } else {
                format!(
                    "The previous draft was rejected: {}. Fix those fields.\n\n",
                    describe(&last_report)
                )
            };
            let prompt = generation_prompt(spec, &demographics, &note);
            let ctx = CallContext::new(
                format!("persona-{}", id),
                crate::derive_seed(seed, &id),
                attempt,
                "",
            );
            let text = model.chat(&ctx, &[Message::user(prompt)])?;
            let persona = parse_persona_document(&text, &id);
            let report = validate_persona(&persona, spec);
            if report.is_valid() {
                accepted = Some(persona);
                break;
            }
            last_report = report;
        }
        match accepted {
            Some(p) => {
                intentions.insert(p.id.clone(), intention);
                personas.push(p);
            }
            None => {
                return Err(PersonaError::ValidationExhausted {
                    index: i,
                    attempts: MAX_ATTEMPTS,
                    violations: describe(&last_report),
                })
            }
        }
    }

    Ok(PersonaPool {
        spec_fingerprint: spec.fingerprint(),
        personas,
        intentions,
    })
}

fn describe(report: &ValidationReport) -> String {
    report
        .violations
        .iter()
        .map(|v| format!("{} ({})", v.field, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

fn draw_intention(spec: &AgentSpec, rng: &mut ChaCha8Rng) -> Intention {
    let template = &spec.intentions[rng.gen_range(0..spec.intentions.len())];
    let mut goal = template.template.clone();
    for placeholder in placeholders(&template.template) {
        if let Some(values) = template.slots.get(&placeholder) {
            let pick = &values[rng.gen_range(0..values.len())];
            goal = goal.replace(&format!("{{{}}}", placeholder), pick);
        }
    }
    Intention {
        goal_text: goal,
        budget_limit: template.budget_limit,
        category_hint: template.category_hint.clone(),
    }
}

/// Draws `n` distinct personas; identical (pool, n, seed) gives an identical
/// result.
pub fn sample(pool: &PersonaPool, n: usize, seed: u64) -> Result<Vec<Persona>, PersonaError> {
    if n < 1 || n > pool.personas.len() {
        return Err(PersonaError::SampleOutOfRange {
            n,
            pool: pool.personas.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..pool.personas.len()).collect();
    // Partial Fisher-Yates: the first n slots are the sample.
    for i in 0..n {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    Ok(indices[..n]
        .iter()
        .map(|&i| pool.personas[i].clone())
        .collect())
}

// ── Document parsing ────────────────────────────────────────────────────────

fn normalize_heading(line: &str) -> Option<String> {
    let cleaned = line
        .trim()
        .trim_start_matches(['#', '*', '-', ' '])
        .trim_end_matches(['*', ' '])
        .to_lowercase();
    let cleaned = cleaned
        .strip_suffix(':')
        .unwrap_or(&cleaned)
        .trim()
        .to_string();
    let key = cleaned.replace(' ', "_");
    if NARRATIVE_SECTIONS.contains(&key.as_str()) || key == "demographics" {
        Some(key)
    } else {
        None
    }
}

fn parse_money(text: &str) -> f64 {
    // "$70,000 (varies with projects)" -> 70000
    let before_paren = text.split('(').next().unwrap_or(text);
    let cleaned: String = before_paren
        .chars()
        .filter(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    cleaned.parse().unwrap_or(0.0)
}

fn parse_leading_int(text: &str) -> u32 {
    let digits: String = text
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().unwrap_or(0)
}

/// Tolerant parser for the labeled-section persona document. Headings are
/// matched case-insensitively with an optional trailing colon; anything the
/// document omits is left empty for the validator to report.
pub fn parse_persona_document(text: &str, id: &str) -> Persona {
    let mut name = String::new();
    let mut sections: BTreeMap<String, String> = BTreeMap::new();
    let mut demographics = BTreeMap::new();
    let mut current: Option<String> = None;

    for line in text.lines() {
        let trimmed = line.trim();
        if name.is_empty() {
            if let Some(rest) =
                strip_prefix_ci(trimmed.trim_start_matches(['#', '*', ' ']), "persona:")
            {
                name = rest.trim().trim_matches('*').trim().to_string();
                continue;
            }
        }
        if let Some(heading) = normalize_heading(trimmed) {
            current = Some(heading);
            continue;
        }
        match current.as_deref() {
            Some("demographics") => {
                if let Some((key, value)) = trimmed.split_once(':') {
                    let key = key
                        .trim()
                        .trim_start_matches(['*', '-', ' '])
                        .to_lowercase();
                    if DEMOGRAPHIC_KEYS.contains(&key.as_str()) {
                        demographics.insert(key, value.trim().trim_matches('*').trim().to_string());
                    }
                }
            }
            Some(section) if !trimmed.is_empty() => {
                let entry = sections.entry(section.to_string()).or_default();
                if !entry.is_empty() {
                    entry.push(' ');
                }
                entry.push_str(trimmed);
            }
            _ => {}
        }
    }

    let get = |key: &str| sections.get(key).cloned().unwrap_or_default();
    Persona {
        id: id.to_string(),
        name,
        demographics: Demographics {
            age: demographics
                .get("age")
                .map(|v| parse_leading_int(v))
                .unwrap_or(0),
            gender: demographics.get("gender").cloned().unwrap_or_default(),
            education: demographics.get("education").cloned().unwrap_or_default(),
            profession: demographics.get("profession").cloned().unwrap_or_default(),
            income: demographics
                .get("income")
                .map(|v| parse_money(v))
                .unwrap_or(0.0),
        },
        narrative: Narrative {
            background: get("background"),
            financial_situation: get("financial_situation"),
            shopping_habits: get("shopping_habits"),
            professional_life: get("professional_life"),
            personal_style: get("personal_style"),
        },
    }
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    if text.len() >= prefix.len() && text[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&text[prefix.len()..])
    } else {
        None
    }
}

// ── Scripted persona synthesis ──────────────────────────────────────────────

const FIRST_NAMES: [&str; 24] = [
    "Ava", "Ben", "Clara", "Dev", "Elena", "Farid", "Grace", "Hugo", "Imani", "Jonas", "Keiko",
    "Liam", "Mara", "Noah", "Olive", "Priya", "Quinn", "Rosa", "Sam", "Tessa", "Umar", "Vera",
    "Wes", "Yara",
];

/// Deterministic persona document used by the scripted backend: echoes the
/// fixed demographics from the prompt and writes plain narrative around them.
pub fn scripted_persona_document(ctx: &CallContext, messages: &[Message]) -> String {
    let prompt = messages
        .iter()
        .rev()
        .find(|m| m.content.contains(PERSONA_REQUEST_MARKER))
        .map(|m| m.content.as_str())
        .unwrap_or("");

    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut in_block = false;
    for line in prompt.lines() {
        if line.trim() == FIXED_DEMOGRAPHICS_HEADER {
            in_block = true;
            continue;
        }
        if in_block {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                break;
            }
            if let Some((key, value)) = trimmed.split_once(':') {
                fields.insert(key.trim().to_lowercase(), value.trim().to_string());
            }
        }
    }

    let age = fields.get("age").cloned().unwrap_or_else(|| "35".into());
    let gender = fields
        .get("gender")
        .cloned()
        .unwrap_or_else(|| "Female".into());
    let education = fields
        .get("education")
        .cloned()
        .unwrap_or_else(|| "Bachelor's degree".into());
    let profession = fields
        .get("profession")
        .cloned()
        .unwrap_or_else(|| "Teacher".into());
    let income = fields
        .get("income")
        .cloned()
        .unwrap_or_else(|| "$52000".into());

    let mut hasher = Sha256::new();
    hasher.update(ctx.session_id.as_bytes());
    hasher.update(ctx.step_index.to_le_bytes());
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let name = FIRST_NAMES[digest[0] as usize % FIRST_NAMES.len()];
    let profession_lc = profession.to_lowercase();

    format!(
        "Persona: {name}\n\nBackground:\n{name} is a {age}-year-old {profession_lc} who does \
         most shopping online and compares options before committing.\n\nDemographics:\n\n\
         Age: {age}\n\nGender: {gender}\n\nEducation: {education}\n\nProfession: {profession}\n\n\
         Income: {income}\n\nFinancial Situation:\n{name} keeps a monthly budget, saves a fixed \
         share of income, and avoids impulse purchases above a personal limit.\n\nShopping Habits:\n\
         {name} reads reviews carefully, filters by rating, and prefers mid-priced items with \
         solid return policies.\n\nProfessional Life:\nWork as a {profession_lc} fills most \
         weekdays, so orders are usually placed in the evening.\n\nPersonal Style:\n{name} leans \
         practical with occasional splurges on hobbies and gifts.\n"
    )
}
