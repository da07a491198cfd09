//! Analysis configuration: JSON schema, defaults, validation and the
//! construction of the runtime model.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use riemstab_core::flows::{ExprField, VectorField};
use riemstab_core::zoo::{self, RegistrySystem, ZooParams};
use riemstab_core::{ChartDomain, ChartPoint, ManifoldDescriptor, Params};

use crate::error::CliError;

pub const DEFAULT_STEPS: usize = 512;
pub const DEFAULT_SEED: u64 = 42;

fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_samples() -> usize {
    32
}
fn default_safety() -> f64 {
    0.8
}
fn default_theta() -> f64 {
    riemstab_core::perturbation::DEFAULT_THETA
}
fn default_lyapunov_samples() -> usize {
    32
}
fn default_converse_steps() -> usize {
    32
}
fn default_converse_geodesic_steps() -> usize {
    64
}
fn default_converse_nodes() -> usize {
    16
}
fn default_ensemble() -> usize {
    32
}
fn default_h_samples() -> usize {
    64
}

/// Either a registry manifold (`name` plus optional `params`) or a custom
/// metric given as expression strings over a coordinate box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "is_default_params")]
    pub params: ZooParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
}

fn is_default_params(p: &ZooParams) -> bool {
    *p == ZooParams::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripleMode {
    Asymptotic,
    #[default]
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    /// Candidate `w(x, t)` as an expression; the converse construction is
    /// used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    /// Verification radius; defaults to the analysis region (clipped to the
    /// inner bump ball for converse candidates).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<f64>,
    #[serde(default = "default_lyapunov_samples")]
    pub samples: usize,
    /// Used by `lyapunov verify`; the pipeline follows the verdict.
    #[serde(default)]
    pub mode: TripleMode,
    /// Converse horizon `T`; derived from the exponential fit when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_converse_steps")]
    pub flow_steps: usize,
    #[serde(default = "default_converse_nodes")]
    pub nodes: usize,
    /// RK4 steps per geodesic shot inside the converse construction.
    #[serde(default = "default_converse_geodesic_steps")]
    pub geodesic_steps: usize,
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        Self {
            candidate: None,
            region: None,
            samples: default_lyapunov_samples(),
            mode: TripleMode::default(),
            horizon: None,
            flow_steps: default_converse_steps(),
            nodes: default_converse_nodes(),
            geodesic_steps: default_converse_geodesic_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub h: Vec<String>,
    /// Claimed bound on `‖h‖_g`; the sampled supremum is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Outer radius `r₂`; defaults to the verified region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    /// Inner radius `r₁`; defaults to `r₂ / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default = "default_h_samples")]
    pub h_samples: usize,
    /// Trajectories in the verification ensembles.
    #[serde(default = "default_ensemble")]
    pub samples: usize,
    /// Ensemble horizon; `10/γ` (exponential) or `10` (ultimate) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

/// Parsed configuration with every default filled in; serializing it gives
/// the echo recorded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub manifold: ManifoldSpec,
    /// Registry system on the manifold; supplies `field`, `equilibrium`,
    /// `region` and `window` unless they are given explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default)]
    pub field: Vec<String>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub equilibrium: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Trajectories in the classification ensemble.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Fraction of the injectivity estimate used downstream.
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Initial point for `flow`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Tangent initial point for `lift-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vec<f64>>,
    /// Base point for `geodesic`, `exp`, `log`, `distance` and `injectivity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default)]
    pub lyapunov: LyapunovSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<AnalysisConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Parses and validates configuration text; schema errors carry the JSON
/// pointer of the offending value.
pub fn parse_config(text: &str) -> Result<AnalysisConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: AnalysisConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema {
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    cfg.resolve()?;
    Ok(cfg)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl AnalysisConfig {
    /// Fills registry defaults and checks dimensions across keys.
    fn resolve(&mut self) -> Result<(), CliError> {
        if let Some(name) = &self.system {
            let manifold = self.manifold.name.as_deref().unwrap_or("");
            let sys = zoo::system(manifold, name).map_err(|e| CliError::Invalid {
                key: "system".into(),
                message: e.to_string(),
            })?;
            self.apply_system(sys);
        }
        let dim = self.manifold_dim()?;
        if self.field.is_empty() {
            return Err(CliError::Missing("field".into()));
        }
        if self.equilibrium.is_empty() {
            return Err(CliError::Missing("equilibrium".into()));
        }
        let metric_key = if self.manifold.metric.is_some() {
            "manifold.metric"
        } else {
            "manifold.name"
        };
        let mut checks: Vec<(&str, usize)> = vec![("field", self.field.len()), ("equilibrium", self.equilibrium.len())];
        for (key, v) in [
            ("x0", &self.x0),
            ("z0", &self.z0),
            ("x", &self.x),
            ("v", &self.v),
            ("y", &self.y),
        ] {
            if let Some(v) = v {
                checks.push((key, v.len()));
            }
        }
        if let Some(p) = &self.perturbation {
            checks.push(("perturbation.h", p.h.len()));
        }
        for (key, n) in checks {
            if n != dim {
                return Err(CliError::DimensionMismatch {
                    left: metric_key.into(),
                    left_dim: dim,
                    right: key.into(),
                    right_dim: n,
                });
            }
        }
        for (key, value) in [
            ("region", self.region),
            ("window", self.window),
            ("lyapunov.region", self.lyapunov.region),
        ] {
            if let Some(v) = value {
                positive(key, v)?;
            }
        }
        positive("safety", self.safety)?;
        if self.steps == 0 {
            return Err(CliError::Invalid {
                key: "steps".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn apply_system(&mut self, sys: &RegistrySystem) {
        if self.field.is_empty() {
            self.field = sys.field.iter().map(|s| s.to_string()).collect();
        }
        if self.equilibrium.is_empty() {
            self.equilibrium = sys.equilibrium.to_vec();
        }
        self.region.get_or_insert(sys.region);
        self.window.get_or_insert(sys.window);
        if sys.manifold == "euclidean" && self.manifold.params.dim.is_none() {
            self.manifold.params.dim = Some(sys.dim);
        }
    }

    fn manifold_dim(&self) -> Result<usize, CliError> {
        match (&self.manifold.name, &self.manifold.metric) {
            (Some(_), Some(_)) => Err(CliError::Invalid {
                key: "manifold".into(),
                message: "give either `name` or `metric`, not both".into(),
            }),
            (None, None) => Err(CliError::Missing("manifold.name".into())),
            (Some(name), None) => {
                if !zoo::MANIFOLD_NAMES.contains(&name.as_str()) {
                    return Err(CliError::UnknownManifold {
                        name: name.clone(),
                        available: zoo::MANIFOLD_NAMES.join(", "),
                    });
                }
                Ok(match name.as_str() {
                    "euclidean" => self.manifold.params.dim.unwrap_or(2),
                    "circle" => 1,
                    _ => 2,
                })
            }
            (None, Some(rows)) => {
                let n = rows.len();
                if let Some(i) = rows.iter().position(|r| r.len() != n) {
                    return Err(CliError::Invalid {
                        key: format!("manifold.metric[{i}]"),
                        message: format!("row has {} entries, expected {n}", rows[i].len()),
                    });
                }
                if let Some(d) = &self.manifold.domain {
                    for (key, len) in [
                        ("manifold.domain.lower", d.lower.len()),
                        ("manifold.domain.upper", d.upper.len()),
                    ] {
                        if len != n {
                            return Err(CliError::DimensionMismatch {
                                left: "manifold.metric".into(),
                                left_dim: n,
                                right: key.into(),
                                right_dim: len,
                            });
                        }
                    }
                }
                Ok(n)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.equilibrium.len()
    }

    /// Region radius, defaulting to 0.5.
    pub fn region(&self) -> f64 {
        self.region.unwrap_or(0.5)
    }

    /// Observation window, defaulting to 10.
    pub fn window(&self) -> f64 {
        self.window.unwrap_or(10.0)
    }

    pub fn build(&self) -> Result<Model, CliError> {
        let manifold = match (&self.manifold.name, &self.manifold.metric) {
            (Some(name), _) => zoo::manifold(name, &self.manifold.params)?,
            (None, Some(rows)) => {
                let n = rows.len();
                let domain = match &self.manifold.domain {
                    Some(d) => ChartDomain::new(d.lower.clone(), d.upper.clone())?,
                    None => ChartDomain::cube(n, -10.0, 10.0),
                };
                ManifoldDescriptor::from_expressions("custom", rows, domain, &self.params)?
            }
            (None, None) => return Err(CliError::Missing("manifold.name".into())),
        };
        let field: Arc<dyn VectorField> = Arc::new(expr_field("field", &self.field, &self.params)?);
        let perturbation = match &self.perturbation {
            Some(p) => Some(Arc::new(expr_field("perturbation.h", &p.h, &self.params)?) as Arc<dyn VectorField>),
            None => None,
        };
        Ok(Model {
            manifold,
            field,
            perturbation,
            xbar: ChartPoint::from_slice(&self.equilibrium),
        })
    }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Invalid {
            key: key.into(),
            message: format!("must be positive and finite, got {v}"),
        })
    }
}

fn expr_field(key: &str, src: &[String], params: &Params) -> Result<ExprField, CliError> {
    ExprField::new(src, params).map_err(|e| CliError::Invalid {
        key: key.into(),
        message: e.to_string(),
    })
}

/// Runtime objects built from a configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub manifold: ManifoldDescriptor,
    pub field: Arc<dyn VectorField>,
    pub perturbation: Option<Arc<dyn VectorField>>,
    pub xbar: ChartPoint,
}
