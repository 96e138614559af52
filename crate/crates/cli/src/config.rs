//! JSON run configurations. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use otkit::dither::DitherConfig;
use otkit::kernels::{CostKind, CostSpec, KernelSpec, KernelVariant};
use otkit::measures::{parse_measure, BoundingBox, DiscreteMeasure};
use otkit::sinkhorn::SinkhornConfig;
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxConfig {
    pub fn build(&self) -> Result<BoundingBox, CliError> {
        BoundingBox::new(self.lower.clone(), self.upper.clone()).map_err(|e| CliError::config("box", e))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "variant", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Gaussian {
        c: f64,
    },
    InverseMultiquadric {
        c: f64,
        p: f64,
    },
    WendlandPower {
        p: f64,
    },
    NegativeDistance,
    ShiftedNegativeDistance {
        /// Defaults to twice the box diameter.
        #[serde(default)]
        shift: Option<f64>,
    },
    SmoothedNegativeDistance {
        c: f64,
    },
    CpdShifted {
        base: Box<KernelConfig>,
        #[serde(default)]
        anchor: Option<Vec<f64>>,
    },
}

impl KernelConfig {
    pub fn build(&self, bbox: &BoundingBox) -> otkit::Result<KernelSpec> {
        let variant = match self {
            Self::Gaussian { c } => KernelVariant::Gaussian { c: *c },
            Self::InverseMultiquadric { c, p } => KernelVariant::InverseMultiquadric { c: *c, p: *p },
            Self::WendlandPower { p } => KernelVariant::WendlandPower { p: *p },
            Self::NegativeDistance => KernelVariant::NegativeDistance,
            Self::ShiftedNegativeDistance { shift } => match shift {
                Some(shift) => KernelVariant::ShiftedNegativeDistance { shift: *shift },
                None => return KernelSpec::shifted_negative_distance(bbox),
            },
            Self::SmoothedNegativeDistance { c } => KernelVariant::SmoothedNegativeDistance { c: *c },
            Self::CpdShifted { base, anchor } => {
                return KernelSpec::cpd_shifted(base.build(bbox)?, anchor.clone(), bbox);
            }
        };
        KernelSpec::new(variant, bbox)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    AbsDistance,
    PowerDistance { p: f64 },
    NegatedKernel { kernel: KernelConfig },
}

impl CostConfig {
    pub fn build(&self, bbox: &BoundingBox) -> Result<CostSpec, CliError> {
        let cost = match self {
            Self::AbsDistance => CostSpec::abs_distance(bbox),
            Self::PowerDistance { p } => CostSpec::new(CostKind::PowerDistance { p: *p }, bbox),
            Self::NegatedKernel { kernel } => kernel.build(bbox).map(CostSpec::negated_kernel),
        };
        cost.map_err(|e| CliError::config("cost", e))
    }
}

fn default_cost() -> CostConfig {
    CostConfig::AbsDistance
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornOptions {
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub normalize: Option<bool>,
}

impl SinkhornOptions {
    pub fn build(&self, epsilon: Option<f64>) -> Result<SinkhornConfig, CliError> {
        let eps = epsilon
            .or(self.epsilon)
            .ok_or_else(|| CliError::Config("sinkhorn.epsilon: missing".into()))?;
        let mut cfg = SinkhornConfig::new(eps);
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.normalize {
            cfg.normalize = v;
        }
        cfg.validate().map_err(|e| CliError::config("sinkhorn", e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeKind {
    OtExact,
    OtEps,
    SEps,
    Discrepancy,
    SInf,
}

impl ComputeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::OtExact => "ot_exact",
            Self::OtEps => "ot_eps",
            Self::SEps => "s_eps",
            Self::Discrepancy => "discrepancy",
            Self::SInf => "s_inf",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeConfig {
    pub kind: ComputeKind,
    pub mu: PathBuf,
    pub nu: PathBuf,
    #[serde(rename = "box")]
    pub bbox: BoxConfig,
    #[serde(default = "default_cost")]
    pub cost: CostConfig,
    /// Kernel for `discrepancy`; defaults to the kernel of the cost.
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub sinkhorn: SinkhornOptions,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mu: PathBuf,
    pub nu: PathBuf,
    #[serde(rename = "box")]
    pub bbox: BoxConfig,
    #[serde(default = "default_cost")]
    pub cost: CostConfig,
    /// Defaults to 25 log-spaced values in [1e-4, 1e3].
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub sinkhorn: SinkhornOptions,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A number or the string `"inf"`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum EpsilonValue {
    Finite(f64),
    Named(InfMarker),
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub enum InfMarker {
    #[serde(rename = "inf")]
    Inf,
}

impl EpsilonValue {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(v) => v,
            Self::Named(InfMarker::Inf) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitherRunConfig {
    pub target: PathBuf,
    #[serde(rename = "box")]
    pub bbox: BoxConfig,
    #[serde(default = "default_cost")]
    pub cost: CostConfig,
    #[serde(rename = "M")]
    pub m: usize,
    pub epsilon: EpsilonValue,
    #[serde(default)]
    pub max_outer_iter: Option<usize>,
    #[serde(default)]
    pub grad_tol: Option<f64>,
    #[serde(default)]
    pub initial_step: Option<f64>,
    #[serde(default)]
    pub backtrack: Option<f64>,
    #[serde(default)]
    pub armijo: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub smoothing: Option<f64>,
    #[serde(default)]
    pub inner_tol: Option<f64>,
    #[serde(default)]
    pub inner_max_iter: Option<usize>,
    pub output: PathBuf,
    pub trace: PathBuf,
    /// Summary JSON; printed to stdout when absent.
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

impl DitherRunConfig {
    pub fn build(&self, bbox: &BoundingBox, seed: Option<u64>) -> Result<DitherConfig, CliError> {
        let cost = self.cost.build(bbox)?;
        let mut cfg = DitherConfig::new(self.m, self.epsilon.value(), cost, bbox.clone());
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(max_outer_iter, grad_tol, initial_step, backtrack, armijo, seed, smoothing, inner_tol, inner_max_iter);
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(|e| CliError::config("dither", e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_per_axis: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialsConfig {
    pub mu: PathBuf,
    pub nu: PathBuf,
    #[serde(rename = "box")]
    pub bbox: BoxConfig,
    #[serde(default = "default_cost")]
    pub cost: CostConfig,
    pub sinkhorn: SinkhornOptions,
    pub grid: GridConfig,
    pub output_dir: PathBuf,
}

/// Applies `key.path=value` overrides; the value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_overrides(doc: &mut Value, sets: &[String]) -> Result<(), CliError> {
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set {s}: expected KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("--set {key}: `{part}` is not inside an object")))?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

/// Reads the JSON document, applies overrides and deserializes it.
pub fn load<T: serde::de::DeserializeOwned>(path: &Path, sets: &[String]) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut doc, sets)?;
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Relative paths in a config are taken relative to the config file.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_measure(base: &Path, p: &Path, key: &str, bbox: &BoundingBox) -> Result<DiscreteMeasure, CliError> {
    let path = resolve(base, p);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("{key}: cannot read {}: {e}", path.display())))?;
    let m = parse_measure(&text).map_err(|e| CliError::config(key, e))?;
    m.validate(bbox).map_err(|e| CliError::config(key, e))?;
    Ok(m)
}
