//! Pipeline stages behind the command-line interface: persona generation,
//! allocation, experiment run, analysis, and the full chain. Each stage
//! reads its predecessor's artifact from the output directory and writes its
//! own. Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 abandoned-session warning threshold exceeded.

use crate::agent::PromptTemplate;
use crate::allocation::{rerandomize, Allocation, BalanceReport};
use crate::analysis::{
    render_report, standard_tests, stratify, summarize, BaselineSummary, StratumAnalysis,
};
use crate::config::{EnvBackendConfig, ExperimentConfig, ModelBlock};
use crate::env::EnvFactory;
use crate::extract::ExtractionRuleset;
use crate::mockshop::{Catalog, MockShopFactory};
use crate::model::{HttpModel, ModelClient, ScriptedModel};
use crate::orchestrator::{run_experiment, ExperimentPlan, RunManifest};
use crate::persona::{generate_personas, sample, PersonaPool};
use crate::trace::{export_tabular, load_traces};
use crate::webdriver::WebDriverFactory;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    AbandonedThreshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::AbandonedThreshold(_) => 3,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Command-line overrides; everything else comes from the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed_personas: Option<u64>,
    pub seed_sample: Option<u64>,
    pub seed_allocation: Option<u64>,
    pub seed_run: Option<u64>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub quiet: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed_personas {
            config.seeds.personas = seed;
        }
        if let Some(seed) = self.seed_sample {
            config.seeds.sample = seed;
        }
        if let Some(seed) = self.seed_allocation {
            config.seeds.allocation = seed;
        }
        if let Some(seed) = self.seed_run {
            config.seeds.run = seed;
        }
        if let Some(parallelism) = self.parallelism {
            config.parallelism = parallelism;
        }
        if let Some(output_dir) = &self.output_dir {
            config.output_dir = output_dir.clone();
        }
    }
}

fn personas_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("personas.json")
}

fn allocation_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("allocation.json")
}

fn manifest_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("manifest.json")
}

fn traces_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join("traces")
}

fn ensure_output_dir(config: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.output_dir).map_err(|e| {
        runtime(format!(
            "output_dir {} is not writable: {}",
            config.output_dir.display(),
            e
        ))
    })
}

fn require_artifact(path: &Path, produced_by: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "missing artifact {} (run `{}` first)",
            path.display(),
            produced_by
        )))
    }
}

pub fn build_model(config: &ExperimentConfig) -> Result<Arc<dyn ModelClient>, CliError> {
    match &config.model {
        ModelBlock::Http(model_config) => Ok(Arc::new(
            HttpModel::new(model_config.clone()).map_err(validation)?,
        )),
        ModelBlock::Scripted(policy) => Ok(Arc::new(
            ScriptedModel::new(policy.clone()).map_err(validation)?,
        )),
    }
}

pub fn build_env_factory(config: &ExperimentConfig) -> Result<Box<dyn EnvFactory>, CliError> {
    match &config.env_backend {
        EnvBackendConfig::Mockshop {
            catalog_path,
            variants,
        } => {
            let catalog = Catalog::load(catalog_path).map_err(validation)?;
            Ok(Box::new(MockShopFactory::new(
                Arc::new(catalog),
                variants.clone(),
            )))
        }
        EnvBackendConfig::Webdriver(wd_config) => {
            let rules = ExtractionRuleset::load(&wd_config.ruleset_path).map_err(validation)?;
            Ok(Box::new(WebDriverFactory::new(
                wd_config.clone(),
                Arc::new(rules),
            )))
        }
    }
}

fn load_template(config: &ExperimentConfig) -> Result<PromptTemplate, CliError> {
    match &config.prompt_template_path {
        Some(path) => PromptTemplate::from_file(path).map_err(validation),
        None => Ok(PromptTemplate::bundled()),
    }
}

/// Persisted allocation artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationFile {
    pub seed: u64,
    pub attempt: u32,
    pub assignment: BTreeMap<String, String>,
    pub balance_report: BalanceReport,
}

/// Stage 1: generate the persona pool.
pub fn cmd_personas(config: &ExperimentConfig) -> Result<(), CliError> {
    ensure_output_dir(config)?;
    let model = build_model(config)?;
    let pool = generate_personas(&config.agent_spec, model.as_ref(), config.seeds.personas)
        .map_err(runtime)?;
    let path = personas_path(config);
    pool.save(&path).map_err(runtime)?;
    eprintln!("personas: wrote {} personas", pool.personas.len());
    Ok(())
}

/// Stage 2: sample the pool and rerandomize into balanced arms.
pub fn cmd_allocate(config: &ExperimentConfig) -> Result<(), CliError> {
    ensure_output_dir(config)?;
    require_artifact(&personas_path(config), "personas")?;
    let pool = PersonaPool::load(&personas_path(config)).map_err(runtime)?;
    let sampled = sample(&pool, config.sample_n, config.seeds.sample).map_err(validation)?;
    let (allocation, report) = rerandomize(
        &sampled,
        &config.arms,
        &config.agent_spec.attributes,
        config.allocation.threshold,
        config.allocation.max_attempts,
        config.seeds.allocation,
    )
    .map_err(runtime)?;
    if !report.passed {
        eprintln!(
            "allocate: balance threshold {} not met within {} attempts (worst {:.4}); using best attempt {}",
            report.threshold,
            config.allocation.max_attempts,
            report.worst(),
            allocation.attempt
        );
    }
    let artifact = AllocationFile {
        seed: allocation.seed,
        attempt: allocation.attempt,
        assignment: allocation.assignment.clone(),
        balance_report: report,
    };
    let json = serde_json::to_string_pretty(&artifact).expect("allocation serializes");
    std::fs::write(allocation_path(config), json).map_err(runtime)?;
    eprintln!(
        "allocate: assigned {} personas across {} arms (attempt {})",
        artifact.assignment.len(),
        config.arms.len(),
        artifact.attempt
    );
    Ok(())
}

/// Stage 3: run every session and collect traces plus the manifest.
pub fn cmd_run(config: &ExperimentConfig, quiet: bool) -> Result<RunManifest, CliError> {
    ensure_output_dir(config)?;
    require_artifact(&personas_path(config), "personas")?;
    require_artifact(&allocation_path(config), "allocate")?;
    let pool = PersonaPool::load(&personas_path(config)).map_err(runtime)?;
    let artifact: AllocationFile =
        serde_json::from_str(&std::fs::read_to_string(allocation_path(config)).map_err(runtime)?)
            .map_err(|e| runtime(format!("allocation.json: {}", e)))?;

    let plan = ExperimentPlan {
        fingerprint: config.fingerprint(),
        arms: config.arms.clone(),
        allocation: Allocation {
            seed: artifact.seed,
            attempt: artifact.attempt,
            assignment: artifact.assignment,
        },
        limits: config.limits.clone(),
        parallelism: config.parallelism,
        seed: config.seeds.run,
        output_dir: config.output_dir.clone(),
    };
    let env_factory = build_env_factory(config)?;
    let model = build_model(config)?;
    let template = load_template(config)?;
    let manifest = run_experiment(
        &plan,
        &pool,
        env_factory.as_ref(),
        model.as_ref(),
        &template,
        |snapshot| {
            if !quiet {
                let line = serde_json::to_string(snapshot).expect("snapshot serializes");
                eprintln!("{}", line);
            }
        },
    )
    .map_err(runtime)?;
    eprintln!(
        "run: {} sessions done, {} abandoned",
        manifest.total_sessions(),
        manifest.abandoned()
    );
    Ok(manifest)
}

/// Stage 4: aggregate traces, run the test battery, render the report.
/// Prints the report paths on standard output.
pub fn cmd_analyze(config: &ExperimentConfig) -> Result<(), CliError> {
    ensure_output_dir(config)?;
    require_artifact(&traces_dir(config), "run")?;
    require_artifact(&manifest_path(config), "run")?;
    require_artifact(&personas_path(config), "personas")?;

    let manifest = RunManifest::load(&manifest_path(config)).map_err(runtime)?;
    let pool = PersonaPool::load(&personas_path(config)).map_err(runtime)?;
    let load = load_traces(&traces_dir(config)).map_err(runtime)?;
    for (path, reason) in &load.rejected {
        eprintln!("analyze: rejected {}: {}", path.display(), reason);
    }
    if load.traces.is_empty() {
        return Err(runtime("no valid traces to analyze"));
    }

    let summaries: Vec<_> = config
        .arms
        .iter()
        .map(|arm| summarize(&load.traces, &arm.name))
        .collect::<Result<_, _>>()
        .map_err(runtime)?;
    let tests = standard_tests(&load.traces, &config.arms[0].name, &config.arms[1].name);
    let baseline = match &config.analysis.baseline_path {
        Some(path) => Some(BaselineSummary::load(path).map_err(runtime)?),
        None => None,
    };
    let mut report = render_report(&summaries, &tests, baseline.as_ref()).map_err(runtime)?;

    if !config.analysis.stratify_by.is_empty() {
        let mut strata: BTreeMap<String, BTreeMap<String, StratumAnalysis>> = BTreeMap::new();
        for attribute in &config.analysis.stratify_by {
            let cuts = config
                .analysis
                .numeric_cuts
                .get(attribute)
                .cloned()
                .unwrap_or_default();
            let groups = stratify(&load.traces, &pool, attribute, &cuts).map_err(runtime)?;
            strata.insert(attribute.clone(), groups);
        }
        report.strata = Some(strata);
    }

    let text_path = config.output_dir.join("report.txt");
    let json_path = config.output_dir.join("report.json");
    std::fs::write(&text_path, report.to_text()).map_err(runtime)?;
    std::fs::write(&json_path, report.to_json_string()).map_err(runtime)?;
    let csv_path = config.output_dir.join("sessions.csv");
    export_tabular(&load.traces, &csv_path).map_err(runtime)?;
    println!("{}", json_path.display());
    println!("{}", text_path.display());

    let rate = manifest.abandoned_rate();
    if rate > config.analysis.abandoned_warning_rate {
        return Err(CliError::AbandonedThreshold(format!(
            "abandoned-session rate {:.4} exceeds the warning threshold {:.4} ({} of {} sessions); report written anyway",
            rate,
            config.analysis.abandoned_warning_rate,
            manifest.abandoned(),
            manifest.total_sessions()
        )));
    }
    Ok(())
}

/// Chains all four stages.
pub fn cmd_pipeline(config: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    cmd_personas(config)?;
    cmd_allocate(config)?;
    cmd_run(config, quiet)?;
    cmd_analyze(config)
}
