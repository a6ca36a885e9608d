//! Scenario files.
//!
//! JSON with a `schema_version`; every struct rejects unknown keys so a misspelt tolerance
//! is an error rather than a silent default.

use crate::action::ActionConfig;
use crate::characteristics::{IntrinsicConfig, MollifiedConfig, RunMethod};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::fourier::TrigPoly;
use crate::hamiltonian::{HamiltonianModel, ModelKind};
use crate::laxoleinik::LoConfig;
use crate::semiconcave::MinSmoothFn;
use crate::transport::{CloudMethod, Region};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub phi: Option<PhiSpec>,
    #[serde(default)]
    pub action: ActionConfig,
    pub task: Task,
    /// Checks on the results; `metric` is a dotted path into the results object.
    #[serde(default)]
    pub assert: Vec<Assertion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Fixture(String),
    Custom { kind: ModelKind, potential: TrigPoly },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhiSpec {
    Fixture(String),
    /// Smooth pieces whose pointwise minimum is `phi`.
    Pieces(Vec<TrigPoly>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    Characteristic(CharacteristicTask),
    WeakKam(WeakKamTask),
    Transport(TransportTask),
    Verify(VerifyTask),
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Characteristic(_) => "characteristic",
            Task::WeakKam(_) => "weak-kam",
            Task::Transport(_) => "transport",
            Task::Verify(_) => "verify",
        }
    }
}

fn default_h() -> f64 {
    1.0 / 1024.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicTask {
    pub method: RunMethod,
    pub x0: Vec<f64>,
    pub t_end: f64,
    /// Euler step.
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub mollified: MollifiedConfig,
    #[serde(default)]
    pub intrinsic: IntrinsicConfig,
    /// Also classify every sample as singular / cut.
    #[serde(default)]
    pub propagation: bool,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    20000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakKamTask {
    /// Nodes per axis.
    pub grid: Vec<usize>,
    pub h: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub lo: LoConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudInit {
    Uniform,
    Random,
}

fn default_snapshot() -> f64 {
    0.5
}

fn default_tests() -> usize {
    8
}

fn default_deltas() -> Vec<f64> {
    vec![0.01, 0.005]
}

fn default_resolution() -> usize {
    4096
}

fn default_region() -> Region {
    Region::SingClosure
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportTask {
    pub particles: usize,
    pub init: CloudInit,
    pub t_end: f64,
    pub h: f64,
    pub method: CloudMethod,
    #[serde(default = "default_snapshot")]
    pub snapshot_every: f64,
    /// Number of Fourier test functions.
    #[serde(default = "default_tests")]
    pub tests: usize,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_region")]
    pub region: Region,
    /// Nodes per axis used to locate the region.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Fast,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTask {
    pub suite: Suite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub metric: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn model(&self) -> Result<HamiltonianModel> {
        match &self.model {
            ModelSpec::Fixture(name) => Ok(fixture(name)?.model),
            ModelSpec::Custom { kind, potential } => HamiltonianModel::new(*kind, potential.clone()),
        }
    }

    pub fn phi(&self) -> Result<Option<MinSmoothFn>> {
        match &self.phi {
            None => Ok(None),
            Some(PhiSpec::Fixture(name)) => Ok(Some(fixture(name)?.phi)),
            Some(PhiSpec::Pieces(p)) => {
                for t in p {
                    t.validate().map_err(Error::Config)?;
                }
                Ok(Some(MinSmoothFn::from_trig(p.clone())))
            }
        }
    }

    pub fn require_phi(&self) -> Result<MinSmoothFn> {
        self.phi()?.ok_or_else(|| Error::Config(format!("task {} needs `phi`", self.task.kind())))
    }

    /// Everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config("name must be non-empty and use [A-Za-z0-9_-]".into()));
        }
        let model = self.model()?;
        let d = model.dim();
        if let Some(phi) = self.phi()? {
            if phi.pieces().is_empty() || phi.dim() != d {
                return Err(Error::Config("phi must have pieces of the model's dimension".into()));
            }
        }
        let pos = |v: f64, what: &str| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::Config(format!("{what} must be positive"))) };
        match &self.task {
            Task::Characteristic(t) => {
                self.require_phi()?;
                if t.x0.len() != d {
                    return Err(Error::Config(format!("x0 must have {d} coordinates")));
                }
                pos(t.t_end, "t_end")?;
                pos(t.h, "h")?;
            }
            Task::WeakKam(t) => {
                if t.grid.len() != d || t.grid.iter().any(|&n| n < 4) {
                    return Err(Error::Config(format!("grid must list {d} sizes of at least 4")));
                }
                pos(t.h, "h")?;
                pos(t.tol, "tol")?;
            }
            Task::Transport(t) => {
                self.require_phi()?;
                if t.particles == 0 {
                    return Err(Error::Config("particles must be positive".into()));
                }
                pos(t.t_end, "t_end")?;
                pos(t.h, "h")?;
                pos(t.snapshot_every, "snapshot_every")?;
                for &dl in &t.deltas {
                    pos(dl, "deltas")?;
                }
                if t.resolution < 4 {
                    return Err(Error::Config("resolution must be at least 4".into()));
                }
            }
            Task::Verify(_) => {
                self.require_phi()?;
            }
        }
        for a in &self.assert {
            if a.min.is_none() && a.max.is_none() {
                return Err(Error::Config(format!("assertion on {} has no bound", a.metric)));
            }
        }
        Ok(())
    }
}

fn fixture(name: &str) -> Result<fixtures::Fixture> {
    fixtures::by_name(name).ok_or_else(|| Error::Config(format!("unknown fixture {name:?}")))
}
