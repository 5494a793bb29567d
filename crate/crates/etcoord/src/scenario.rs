//! Scenario configuration: a plain-text description of topology, agents,
//! coupling, trigger parameters and run settings, cross-validated at load
//! time and resolved into a runnable [`Setup`].
//!
//! Loading normalizes the scenario: the clock scales are resolved to an
//! explicit per-edge list (whether written directly or derived from a
//! `kappa` margin), formation offsets are made explicit, and every default
//! is filled in. Normalization is idempotent, so `load -> normalize ->
//! serialize -> load` reproduces the same scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingLaw;
use crate::dynamics::{AgentModel, MonotoneNonlinearity};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::hybrid::{InitSpec, Setup, SimConfig};
use crate::triggering::{select_sigma, EdgeClockParams, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCfg {
    /// `line` or `edges`.
    pub kind: String,
    pub nodes: usize,
    /// Oriented `[tail, head]` pairs, required when `kind = "edges"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// `saturated_linear` or `monotone`.
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// `linear` or `cubic` (monotone model only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<String>,
}

impl AgentSpec {
    fn build(&self, np: usize) -> Result<AgentModel> {
        match self.model.as_str() {
            "saturated_linear" => {
                let sat = self.sat_level.ok_or_else(|| {
                    Error::Config("saturated_linear model needs sat_level".into())
                })?;
                AgentModel::saturated_linear(sat, np)
            }
            "monotone" => {
                let c = self
                    .c
                    .ok_or_else(|| Error::Config("monotone model needs c".into()))?;
                let nl = match self.nonlinearity.as_deref().unwrap_or("cubic") {
                    "linear" => MonotoneNonlinearity::Linear,
                    "cubic" => MonotoneNonlinearity::Cubic,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown nonlinearity '{other}', expected linear or cubic"
                        )))
                    }
                };
                AgentModel::monotone(c, nl, np)
            }
            other => Err(Error::Config(format!(
                "unknown agent model '{other}', expected saturated_linear or monotone"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsCfg {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<String>,
    /// Full per-node specifications for heterogeneous networks (rejected by
    /// the self-triggered scheme).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_node: Option<Vec<AgentSpec>>,
}

impl AgentsCfg {
    fn base_spec(&self) -> AgentSpec {
        AgentSpec {
            model: self.model.clone(),
            sat_level: self.sat_level,
            c: self.c,
            nonlinearity: self.nonlinearity.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingCfg {
    /// `arctan` or `quadratic`.
    pub law: String,
    /// Edge-variable dimension.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Per-edge formation offsets (quadratic law only); defaults to zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<Vec<f64>>>,
}

fn default_dim() -> usize {
    1
}

/// Clock scale: one value for all edges or an explicit per-edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaCfg {
    Scalar(f64),
    PerEdge(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerCfg {
    pub scheme: Scheme,
    pub a: f64,
    pub b: f64,
    /// Explicit clock scale(s); exactly one of `sigma` and `kappa`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaCfg>,
    /// Stability margin in (0, 1) from which per-edge scales are derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Scale for edges left unconstrained by the margin-based selection.
    #[serde(default = "default_sigma_fallback")]
    pub default_sigma: f64,
    /// `periodic` (deadline window collapses to the deadline) or
    /// `aperiodic` (next deadline sampled uniformly from the window).
    #[serde(default = "default_epsilon_mode")]
    pub epsilon_mode: String,
    /// Lower end of the deadline window as a fraction of the deadline.
    #[serde(default = "default_epsilon_frac")]
    pub epsilon_frac: f64,
}

fn default_sigma_fallback() -> f64 {
    1.0
}

fn default_epsilon_mode() -> String {
    "periodic".into()
}

fn default_epsilon_frac() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCfg {
    pub horizon: f64,
    #[serde(default = "default_flow_step")]
    pub flow_step: f64,
    #[serde(default = "default_event_tolerance")]
    pub event_tolerance: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_flow_step() -> f64 {
    1e-3
}

fn default_event_tolerance() -> f64 {
    1e-10
}

fn default_sample_every() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitCfg {
    #[serde(default)]
    pub p_min: f64,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
}

fn default_p_max() -> f64 {
    5.0
}

/// A complete scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologyCfg,
    pub agents: AgentsCfg,
    pub coupling: CouplingCfg,
    pub trigger: TriggerCfg,
    pub sim: SimCfg,
    pub init: InitCfg,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize error: {e}")))
    }

    fn build_topology(&self) -> Result<Topology> {
        match self.topology.kind.as_str() {
            "line" => Topology::line(self.topology.nodes),
            "edges" => {
                let edges = self.topology.edges.as_ref().ok_or_else(|| {
                    Error::Config("topology kind 'edges' needs an edge list".into())
                })?;
                Topology::from_edges(
                    self.topology.nodes,
                    edges.iter().map(|&[t, h]| (t, h)).collect(),
                )
            }
            other => Err(Error::Config(format!(
                "unknown topology kind '{other}', expected line or edges"
            ))),
        }
    }

    fn build_laws(&self, m: usize) -> Result<Vec<CouplingLaw>> {
        let np = self.coupling.dim;
        match self.coupling.law.as_str() {
            "arctan" => {
                if np != 1 {
                    return Err(Error::Config(
                        "the arctan law acts on scalar edge variables (dim = 1)".into(),
                    ));
                }
                if self.coupling.offsets.is_some() {
                    return Err(Error::Config(
                        "the arctan law does not take formation offsets".into(),
                    ));
                }
                Ok(vec![CouplingLaw::arctan(); m])
            }
            "quadratic" => {
                let offsets = match &self.coupling.offsets {
                    Some(offs) => {
                        if offs.len() != m {
                            return Err(Error::Config(format!(
                                "need one offset per edge ({m}), got {}",
                                offs.len()
                            )));
                        }
                        offs.clone()
                    }
                    None => vec![vec![0.0; np]; m],
                };
                offsets
                    .into_iter()
                    .enumerate()
                    .map(|(l, off)| {
                        if off.len() != np {
                            return Err(Error::Config(format!(
                                "offset of edge {} has {} components, expected {np}",
                                l + 1,
                                off.len()
                            )));
                        }
                        CouplingLaw::quadratic(off)
                    })
                    .collect()
            }
            other => Err(Error::Config(format!(
                "unknown coupling law '{other}', expected arctan or quadratic"
            ))),
        }
    }

    fn build_models(&self, n: usize) -> Result<Vec<AgentModel>> {
        let np = self.coupling.dim;
        match &self.agents.per_node {
            Some(specs) => {
                if specs.len() != n {
                    return Err(Error::Config(format!(
                        "per_node needs one agent spec per node ({n}), got {}",
                        specs.len()
                    )));
                }
                specs.iter().map(|s| s.build(np)).collect()
            }
            None => {
                let model = self.agents.base_spec().build(np)?;
                Ok(vec![model; n])
            }
        }
    }

    fn resolve_sigma(&self, topology: &Topology, models: &[AgentModel]) -> Result<Vec<f64>> {
        let m = topology.edge_count();
        match (&self.trigger.sigma, self.trigger.kappa) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give exactly one of trigger.sigma and trigger.kappa, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "give one of trigger.sigma and trigger.kappa".into(),
            )),
            (Some(SigmaCfg::Scalar(s)), None) => Ok(vec![*s; m]),
            (Some(SigmaCfg::PerEdge(v)), None) => {
                if v.len() != m {
                    return Err(Error::Config(format!(
                        "trigger.sigma lists {} entries, expected one per edge ({m})",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
            (None, Some(kappa)) => {
                let gains: Vec<f64> = models
                    .iter()
                    .enumerate()
                    .map(|(i, mo)| {
                        mo.passivity().output_gain().ok_or_else(|| {
                            Error::Config(format!(
                                "margin-based sigma selection needs an output gain on agent {}",
                                i + 1
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                select_sigma(
                    topology,
                    &vec![kappa; topology.node_count()],
                    &gains,
                    self.trigger.default_sigma,
                )
            }
        }
    }

    /// Builds the validated runtime setup. All cross-checks happen here.
    pub fn setup(&self) -> Result<Setup> {
        self.sim_config().validate()?;
        let topology = self.build_topology()?;
        let n = topology.node_count();
        let m = topology.edge_count();
        let models = self.build_models(n)?;
        let laws = self.build_laws(m)?;
        let sigma = self.resolve_sigma(&topology, &models)?;
        let params = sigma
            .iter()
            .map(|&s| EdgeClockParams::new(self.trigger.a, self.trigger.b, s))
            .collect::<Result<Vec<_>>>()?;
        let aperiodic = match self.trigger.epsilon_mode.as_str() {
            "periodic" => false,
            "aperiodic" => true,
            other => {
                return Err(Error::Config(format!(
                    "unknown epsilon_mode '{other}', expected periodic or aperiodic"
                )))
            }
        };
        if let Some(p0) = &self.init.p0 {
            if p0.len() != n * self.coupling.dim {
                return Err(Error::Config(format!(
                    "init.p0 needs {} entries, got {}",
                    n * self.coupling.dim,
                    p0.len()
                )));
            }
        }
        Setup::new(
            topology,
            self.coupling.dim,
            models,
            laws,
            params,
            self.trigger.scheme,
            self.trigger.epsilon_frac,
            aperiodic,
        )
    }

    /// Validates and rewrites the scenario into its canonical form:
    /// per-edge sigma list, explicit offsets, all defaults filled.
    pub fn normalize(&self) -> Result<Scenario> {
        let topology = self.build_topology()?;
        let models = self.build_models(topology.node_count())?;
        let sigma = self.resolve_sigma(&topology, &models)?;
        let mut out = self.clone();
        out.trigger.sigma = Some(SigmaCfg::PerEdge(sigma));
        out.trigger.kappa = None;
        if self.coupling.law == "quadratic" && self.coupling.offsets.is_none() {
            out.coupling.offsets =
                Some(vec![vec![0.0; self.coupling.dim]; topology.edge_count()]);
        }
        // full validation under the resolved values
        out.setup()?;
        Ok(out)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.sim.horizon,
            flow_step: self.sim.flow_step,
            event_tolerance: self.sim.event_tolerance,
            sample_every: self.sim.sample_every,
        }
    }

    pub fn init_spec(&self) -> InitSpec {
        InitSpec {
            p_min: self.init.p_min,
            p_max: self.init.p_max,
            p0: self.init.p0.clone(),
            v0: self.init.v0.clone(),
        }
    }

    /// The built-in five-agent line scenario: saturated double integrators,
    /// arctan coupling, margin 1/4 (hence clock scale 1/16 on every edge),
    /// thresholds `a = 0`, horizon 20 s, positions uniform in `[0, 5]`.
    pub fn section7(scheme: Scheme, b: f64, seed: u64) -> Scenario {
        Scenario {
            topology: TopologyCfg {
                kind: "line".into(),
                nodes: 5,
                edges: None,
            },
            agents: AgentsCfg {
                model: "saturated_linear".into(),
                sat_level: Some(1.0),
                c: None,
                nonlinearity: None,
                per_node: None,
            },
            coupling: CouplingCfg {
                law: "arctan".into(),
                dim: 1,
                offsets: None,
            },
            trigger: TriggerCfg {
                scheme,
                a: 0.0,
                b,
                sigma: None,
                kappa: Some(0.25),
                default_sigma: default_sigma_fallback(),
                epsilon_mode: default_epsilon_mode(),
                epsilon_frac: default_epsilon_frac(),
            },
            sim: SimCfg {
                horizon: 20.0,
                flow_step: default_flow_step(),
                event_tolerance: default_event_tolerance(),
                sample_every: default_sample_every(),
                seed,
            },
            init: InitCfg {
                p_min: 0.0,
                p_max: 5.0,
                p0: None,
                v0: None,
            },
        }
    }
}
