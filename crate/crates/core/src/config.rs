//! Configuration bundle: safety curves, condition policy with expectation
//! curves, and an optional arm model.
//!
//! ```json
//! {
//!   "safety_curves": "demo_safety_curves.json",
//!   "conditions": [{ "token": "attentive", "curve": "expectation_q015.json" }],
//!   "default_condition": "attentive",
//!   "arm_model": "demo_arm_7dof.json",
//!   "contact_direction": [0, 1, 0],
//!   "max_accel": 2.0
//! }
//! ```
//!
//! Every file reference may be replaced by the inline document. Relative
//! paths resolve against the bundle's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::{ArcSwap, Guard};
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::governor::{ConditionPolicy, GovernorError, DEFAULT_CONDITION, DEFAULT_MAX_ACCEL};
use crate::manipulator_dynamics::ArmModel;
use crate::risk_model::ExpectationCurve;
use crate::smu::CurveSet;

/// Environment variable naming the default bundle path.
pub const CONFIG_ENV: &str = "EMU_CONFIG";

pub const DEMO_BUNDLE: &str = include_str!("../configs/demo_bundle.json");
pub const DEMO_SAFETY_CURVES: &str = include_str!("../configs/demo_safety_curves.json");
pub const DEMO_EXPECTATION_CURVE: &str = include_str!("../configs/expectation_q015.json");
pub const DEMO_ARM: &str = include_str!("../configs/demo_arm_7dof.json");
pub const DEFAULT_SCENARIO: &str = include_str!("../configs/default_scenario.json");

const EMBEDDED: [(&str, &str); 3] = [
    ("demo_safety_curves.json", DEMO_SAFETY_CURVES),
    ("expectation_q015.json", DEMO_EXPECTATION_CURVE),
    ("demo_arm_7dof.json", DEMO_ARM),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{what}: {detail}")]
    Parse { what: String, detail: String },
    #[error(transparent)]
    Governor(#[from] GovernorError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Deserialize)]
struct ConditionDoc {
    token: String,
    curve: Source<ExpectationCurve>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleDoc {
    #[serde(default)]
    #[allow(dead_code)]
    description: Option<String>,
    safety_curves: Source<CurveSet>,
    conditions: Vec<ConditionDoc>,
    #[serde(default)]
    default_condition: Option<String>,
    #[serde(default)]
    arm_model: Option<Source<ArmModel>>,
    #[serde(default)]
    contact_direction: Option<[f64; 3]>,
    #[serde(default)]
    max_accel: Option<f64>,
}

enum Resolver<'a> {
    Dir(&'a Path),
    Embedded,
}

impl Resolver<'_> {
    fn read(&self, path: &Path) -> Result<String, ConfigError> {
        match self {
            Resolver::Dir(base) => {
                let full = if path.is_absolute() {
                    path.to_path_buf()
                } else {
                    base.join(path)
                };
                fs::read_to_string(&full).map_err(|source| ConfigError::Io { path: full, source })
            }
            Resolver::Embedded => EMBEDDED
                .iter()
                .find(|(name, _)| Path::new(name) == path)
                .map(|(_, text)| text.to_string())
                .ok_or_else(|| ConfigError::Io {
                    path: path.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "not embedded"),
                }),
        }
    }

    fn load<T: DeserializeOwned>(&self, source: Source<T>, what: &str) -> Result<T, ConfigError> {
        match source {
            Source::Inline(value) => Ok(value),
            Source::Path(path) => {
                let text = self.read(&path)?;
                parse_json(&text, &format!("{what} {}", path.display()))
            }
        }
    }
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        what: what.to_string(),
        detail: e.to_string(),
    })
}

/// Everything the governor needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct ConfigBundle {
    pub curves: CurveSet,
    pub policy: ConditionPolicy,
    pub arm: Option<ArmModel>,
    /// Unit direction used for reflected mass when computed from the arm.
    pub contact_direction: Vector3<f64>,
    pub max_accel: f64,
}

impl ConfigBundle {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::build(&text, Resolver::Dir(base))
    }

    /// Parse a bundle whose relative references resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        Self::build(text, Resolver::Dir(base))
    }

    /// The synthetic demo bundle compiled into the crate.
    pub fn demo() -> Self {
        Self::build(DEMO_BUNDLE, Resolver::Embedded).expect("embedded demo bundle is valid")
    }

    /// `path`, else `$EMU_CONFIG`, else the demo bundle.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::demo()),
            },
        }
    }

    fn build(text: &str, resolver: Resolver<'_>) -> Result<Self, ConfigError> {
        let doc: BundleDoc = parse_json(text, "config bundle")?;
        let curves = resolver.load(doc.safety_curves, "safety curves")?;
        if doc.conditions.is_empty() {
            return Err(ConfigError::Invalid("no conditions configured".into()));
        }
        let entries = doc
            .conditions
            .into_iter()
            .map(|c| {
                let curve = resolver.load(c.curve, "expectation curve")?;
                Ok((c.token, curve))
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let default = doc
            .default_condition
            .as_deref()
            .unwrap_or(DEFAULT_CONDITION);
        let policy = ConditionPolicy::new(entries, default)?;
        let arm = doc
            .arm_model
            .map(|s| resolver.load(s, "arm model"))
            .transpose()?;
        let contact_direction = Vector3::from(doc.contact_direction.unwrap_or([0.0, 1.0, 0.0]));
        if !((contact_direction.norm() - 1.0).abs() <= 1e-9) {
            return Err(ConfigError::Invalid(format!(
                "contact_direction must be a unit vector, |u| = {}",
                contact_direction.norm()
            )));
        }
        let max_accel = doc.max_accel.unwrap_or(DEFAULT_MAX_ACCEL);
        if !(max_accel.is_finite() && max_accel > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "max_accel must be > 0, got {max_accel}"
            )));
        }
        Ok(ConfigBundle {
            curves,
            policy,
            arm,
            contact_direction,
            max_accel,
        })
    }

    pub fn with_default_q_r(mut self, q_r: f64) -> Result<Self, ConfigError> {
        self.policy = self.policy.with_default_q_r(q_r)?;
        Ok(self)
    }
}

/// Single-writer, many-reader handle. Readers always see a complete bundle;
/// a reload replaces it in one atomic store.
#[derive(Debug)]
pub struct SharedConfig {
    inner: ArcSwap<ConfigBundle>,
    source: Option<PathBuf>,
}

impl SharedConfig {
    pub fn new(bundle: ConfigBundle, source: Option<PathBuf>) -> Self {
        SharedConfig {
            inner: ArcSwap::from_pointee(bundle),
            source,
        }
    }

    #[inline]
    pub fn load(&self) -> Guard<Arc<ConfigBundle>> {
        self.inner.load()
    }

    pub fn store(&self, bundle: ConfigBundle) {
        self.inner.store(Arc::new(bundle));
    }

    /// Re-read the bundle from the path it was loaded from. On error the
    /// current bundle stays in place.
    pub fn reload(&self) -> Result<(), ConfigError> {
        let path = self.source.as_ref().ok_or_else(|| {
            ConfigError::Invalid("configuration was not loaded from a file".into())
        })?;
        self.store(ConfigBundle::load(path)?);
        Ok(())
    }
}

/// Parse a standalone expectation curve document.
pub fn parse_curve(text: &str) -> Result<ExpectationCurve, ConfigError> {
    parse_json(text, "expectation curve")
}
