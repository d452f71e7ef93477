//! The run configuration file.
//!
//! One TOML file drives both `pipeline` and `bench`. Every section is
//! required and unknown keys are rejected, so a typo fails loudly instead of
//! silently falling back to a default.

use std::fs;
use std::path::Path;

use osde_core::bench::{ClassicalMode, LowDepthMode, Method, SweepConfig};
use osde_core::pipeline::{self, EpsSchedule, PipelineConfig};
use osde_core::qae::{self, QaeBackend};
use osde_core::RbmKernel;
use serde::{Deserialize, Serialize};

/// The checked-in default, used when no `--config` is given.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: RbmKernel,
    pub grid: Grid,
    pub estimation: Estimation,
    pub pipeline: PipelineSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x0: f64,
    pub t0: f64,
    pub t_first: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Rqae,
    Lqae,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimation {
    #[serde(rename = "L")]
    pub degree: usize,
    pub shots: u64,
    pub quad_tol: f64,
    pub backend: BackendKind,
    /// Only for `backend = "lqae"`; derived from `N` and the accuracy when
    /// absent.
    #[serde(default)]
    pub lqae_beta: Option<f64>,
    pub schedule: EpsSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub ns: Vec<usize>,
    pub runs: usize,
    pub methods: Vec<Method>,
    pub lqae_eps: f64,
    pub low_depth_mode: LowDepthMode,
    pub classical_target_rmse: f64,
    pub classical: ClassicalMode,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Self::parse(DEFAULT_CONFIG),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
                Self::parse(&text).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }

    /// Transport configuration for `n` steps.
    pub fn pipeline_config(&self, n: usize) -> Result<PipelineConfig, String> {
        let g = &self.grid;
        let e = &self.estimation;
        let mut cfg = PipelineConfig {
            times: pipeline::demo_times(n, g.t0, g.t_first, g.t_end),
            degree: e.degree,
            d: 1,
            x0: vec![g.x0],
            kernel: self.kernel,
            backend: QaeBackend::Exact,
            quad_tol: e.quad_tol,
            eps_schedule: e.schedule,
        };
        if n == 0 {
            return Err("N must be at least 1".into());
        }
        let (eps, _) = cfg.epsilon_schedule();
        cfg.backend = match e.backend {
            BackendKind::Exact => QaeBackend::Exact,
            BackendKind::Rqae => QaeBackend::Rqae {
                eps,
                shots: e.shots,
            },
            BackendKind::Lqae => {
                let beta = match e.lqae_beta {
                    Some(b) => b,
                    None => qae::choose_beta(n as u64, eps).map_err(|e| e.to_string())?,
                };
                QaeBackend::Lqae {
                    eps,
                    beta,
                    shots: e.shots,
                }
            }
        };
        if e.backend != BackendKind::Lqae && e.lqae_beta.is_some() {
            return Err("estimation.lqae_beta is only meaningful with backend = \"lqae\"".into());
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, String> {
        let e = &self.estimation;
        let b = &self.bench;
        let exact_backend = match e.backend {
            BackendKind::Rqae => false,
            BackendKind::Exact => true,
            BackendKind::Lqae => {
                return Err(
                    "bench runs the transport with backend \"rqae\" or \"exact\"; \"lqae\" is the baseline"
                        .into(),
                )
            }
        };
        if e.schedule != EpsSchedule::Demo {
            return Err("bench uses schedule = { kind = \"demo\" }".into());
        }
        let cfg = SweepConfig {
            ns: b.ns.clone(),
            runs: b.runs,
            methods: b.methods.clone(),
            kernel: self.kernel,
            x0: self.grid.x0,
            t0: self.grid.t0,
            t_first: self.grid.t_first,
            t_end: self.grid.t_end,
            degree: e.degree,
            shots: e.shots,
            quad_tol: e.quad_tol,
            exact_backend,
            lqae_eps: b.lqae_eps,
            low_depth_mode: b.low_depth_mode,
            classical_target_rmse: b.classical_target_rmse,
            classical_mode: b.classical,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
