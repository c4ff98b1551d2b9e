//! Run configuration file and context construction.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use super::{PipelineContext, PipelineError};
use crate::compare::TolerancePolicy;
use crate::llm::{
    ChatProvider, HttpProvider, HttpProviderConfig, PromptCatalog, RecordingProvider,
    ReplayProvider, ScriptedProvider, TemperatureSchedule,
};
use crate::sim::{Ngspice, ScriptedSimulator, Simulator};
use crate::vision::{DetectorEndpoint, ExternalDetectorClient};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Http(HttpProviderConfig),
    /// Rule file for [`ScriptedProvider`].
    Scripted { path: PathBuf },
    /// Transcript recorded with `record_transcript`.
    Replay { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorKind {
    #[default]
    Ngspice,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub kind: SimulatorKind,
    /// ngspice executable; defaults to the environment override or `ngspice`.
    pub program: Option<PathBuf>,
    /// Rule file for the scripted simulator.
    pub path: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_concurrent: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            kind: SimulatorKind::Ngspice,
            program: None,
            path: None,
            timeout_secs: 60,
            max_concurrent: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub rel: Option<f64>,
    pub abs: Option<f64>,
    pub phase_abs_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    /// Append every request and reply to this JSON-lines file.
    #[serde(default)]
    pub record_transcript: Option<PathBuf>,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub detector: Option<ExternalDetectorClient>,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub temperatures: TemperatureSchedule,
    /// Directory of prompt files overriding the built-in catalog.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a TOML file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.provider {
            ProviderConfig::Scripted { path } | ProviderConfig::Replay { path } => resolve(base, path),
            ProviderConfig::Http(_) => {}
        }
        for p in [
            cfg.record_transcript.as_mut(),
            cfg.simulator.path.as_mut(),
            cfg.prompts_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        if let Some(program) = cfg.simulator.program.as_mut() {
            if program.components().count() > 1 {
                resolve(base, program);
            }
        }
        if let Some(ExternalDetectorClient {
            endpoint: DetectorEndpoint::Command { program, .. },
            ..
        }) = cfg.detector.as_mut()
        {
            if program.components().count() > 1 {
                resolve(base, program);
            }
        }
        Ok(cfg)
    }

    pub fn tolerance(&self) -> TolerancePolicy {
        let d = TolerancePolicy::default();
        TolerancePolicy {
            rel: self.comparison.rel.unwrap_or(d.rel),
            abs: self.comparison.abs.unwrap_or(d.abs),
            phase_abs_deg: self.comparison.phase_abs_deg.unwrap_or(d.phase_abs_deg),
        }
    }
}

pub fn build_context(cfg: &PipelineConfig) -> Result<PipelineContext, PipelineError> {
    let llm_err = |e: crate::llm::LlmError| PipelineError::Config(e.to_string());
    let mut provider: Arc<dyn ChatProvider> = match &cfg.provider {
        ProviderConfig::Http(c) => Arc::new(HttpProvider::new(c).map_err(llm_err)?),
        ProviderConfig::Scripted { path } => Arc::new(ScriptedProvider::from_file(path).map_err(llm_err)?),
        ProviderConfig::Replay { path } => Arc::new(ReplayProvider::from_file(path).map_err(llm_err)?),
    };
    if let Some(path) = &cfg.record_transcript {
        provider = Arc::new(RecordingProvider::new(provider, path.clone()));
    }
    let simulator: Arc<dyn Simulator> = match cfg.simulator.kind {
        SimulatorKind::Ngspice => Arc::new(match &cfg.simulator.program {
            Some(p) => Ngspice::new(p.clone()),
            None => Ngspice::default(),
        }),
        SimulatorKind::Scripted => {
            let path = cfg
                .simulator
                .path
                .as_ref()
                .ok_or_else(|| PipelineError::Config("scripted simulator needs `path`".into()))?;
            Arc::new(ScriptedSimulator::from_file(path).map_err(|e| PipelineError::Config(e.to_string()))?)
        }
    };
    let mut ctx = PipelineContext::new(provider, simulator)
        .with_max_simulations(cfg.simulator.max_concurrent)
        .with_tolerance(cfg.tolerance());
    ctx.temperatures = cfg.temperatures;
    ctx.detector = cfg.detector.clone();
    ctx.sim_timeout = Duration::from_secs(cfg.simulator.timeout_secs.max(1));
    if let Some(dir) = &cfg.prompts_dir {
        ctx.catalog = PromptCatalog::with_overrides(dir).map_err(llm_err)?;
    }
    Ok(ctx)
}
