//! JSON run configuration.

use std::path::Path;

use pagkit::gains::BTable;
use pagkit::pll::{pll_system, PllParams};
use pagkit::{Composition, NonlinearSystem, Nonlinearity, StateSpace, Structure};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Builtin {
        builtin: String,
        #[serde(default)]
        zeta: Option<f64>,
        #[serde(default)]
        omega_c: Option<f64>,
    },
    Matrices {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        #[serde(default)]
        f: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_nonlinearity")]
        nonlinearity: String,
        #[serde(default)]
        nonlinearity_params: Vec<f64>,
        #[serde(default = "default_structure")]
        structure: String,
    },
}

fn default_nonlinearity() -> String {
    "none".into()
}

fn default_structure() -> String {
    "general".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeriodGrid {
    Log { t_min: f64, t_max: f64, count: usize },
    List(Vec<f64>),
}

impl PeriodGrid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let values = match *self {
            PeriodGrid::Log { t_min, t_max, count } => {
                if !(t_min > 0.0 && t_max >= t_min) || count < 2 {
                    return Err(CliError::Config(format!(
                        "period grid needs 0 < t_min <= t_max and count >= 2, got {t_min}, {t_max}, {count}"
                    )));
                }
                let ratio = (t_max / t_min).ln();
                (0..count).map(|i| t_min * (ratio * i as f64 / (count - 1) as f64).exp()).collect()
            }
            PeriodGrid::List(ref list) => list.clone(),
        };
        if values.is_empty() || values.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(CliError::Config("periods must be positive and finite".into()));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstantSource {
    Value(f64),
    /// Only `"estimate"` is accepted.
    Named(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BEntry {
    pub level: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSource,
    pub periods: PeriodGrid,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default = "default_compositions")]
    pub compositions: Vec<String>,
    #[serde(default)]
    pub b_table: Option<Vec<BEntry>>,
    #[serde(default)]
    pub m_f: Option<ConstantSource>,
    #[serde(default)]
    pub m_g: Option<f64>,
    #[serde(default)]
    pub u_max: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
    #[serde(default = "default_stride")]
    pub waveform_stride: usize,
    /// Periods used by `estimate-b`; defaults to `periods`.
    #[serde(default)]
    pub b_periods: Option<PeriodGrid>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_n() -> usize {
    pagkit::DEFAULT_GRID_N
}

fn default_compositions() -> Vec<String> {
    Composition::ALL.iter().map(|c| c.name().to_string()).collect()
}

fn default_trials() -> usize {
    200
}

fn default_harmonics() -> usize {
    5
}

fn default_stride() -> usize {
    64
}

/// How the quadratic constant `M_f` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MfSource {
    Fixed(f64),
    /// Per level from the PLL remainder scan over `|y| <= b`, `|u| <= level`.
    EstimatePll,
}

/// A configured system ready for the commands.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub system: NonlinearSystem,
    pub mf: MfSource,
    pub periods: Vec<f64>,
    pub levels: Vec<f64>,
    pub compositions: Vec<Composition>,
    pub b_table: Option<BTable>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical JSON of the effective configuration; hashed into output headers.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn prepare(&self) -> Result<Prepared, CliError> {
        if self.n < 16 {
            return Err(CliError::Config(format!("n = {} is too small (need at least 16)", self.n)));
        }
        let mut periods = self.periods.values()?;
        periods.sort_by(f64::total_cmp);
        periods.dedup();
        let mut levels = self.levels.clone();
        if levels.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(CliError::Config("levels must be positive and finite".into()));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let compositions =
            self.compositions.iter().map(|c| Composition::from_name(c)).collect::<Result<Vec<_>, _>>()?;
        let b_table = match &self.b_table {
            Some(entries) => Some(BTable::new(entries.iter().map(|e| (e.level, e.b)).collect())?),
            None => None,
        };
        let u_max = self.u_max.unwrap_or(f64::INFINITY);
        let m_g = self.m_g.unwrap_or(0.0);
        let (linear, nonlinearity, structure) = match &self.system {
            SystemSource::Builtin { builtin, zeta, omega_c } => {
                if builtin != "pll" {
                    return Err(CliError::Config(format!("unknown built-in system {builtin:?}")));
                }
                let d = PllParams::default();
                let params = PllParams::new(zeta.unwrap_or(d.zeta), omega_c.unwrap_or(d.omega_c))?;
                let sys = pll_system(&params, 0.0, u_max)?;
                (sys.linear, sys.nonlinearity, sys.structure)
            }
            SystemSource::Matrices { a, b, c, f, nonlinearity, nonlinearity_params, structure } => {
                let ss = StateSpace::from_rows(a, b, c, f.as_deref())?;
                let structure = match structure.as_str() {
                    "general" => Structure::General,
                    "output_lurie" => Structure::OutputLurie,
                    other => return Err(CliError::Config(format!("unknown structure {other:?}"))),
                };
                (ss, Nonlinearity::from_name(nonlinearity, nonlinearity_params)?, structure)
            }
        };
        let mf = match (&self.m_f, &nonlinearity) {
            (_, Nonlinearity::None) => MfSource::Fixed(0.0),
            (Some(ConstantSource::Value(v)), _) => MfSource::Fixed(*v),
            (Some(ConstantSource::Named(s)), Nonlinearity::Pll) if s == "estimate" => MfSource::EstimatePll,
            (Some(ConstantSource::Named(s)), Nonlinearity::Quadratic { gain }) if s == "estimate" => {
                MfSource::Fixed(gain.abs())
            }
            (Some(ConstantSource::Named(s)), _) => {
                return Err(CliError::Config(format!("M_f source {s:?} is not available for this system")))
            }
            (None, _) => {
                return Err(CliError::Config("a nonlinear system needs m_f (a number or \"estimate\")".into()))
            }
        };
        let m_f0 = match mf {
            MfSource::Fixed(v) => v,
            MfSource::EstimatePll => 0.0,
        };
        let system = NonlinearSystem::new(linear, nonlinearity, m_f0, m_g, structure, u_max)?;
        if let Some(l) = levels.iter().find(|&&l| l >= u_max) {
            return Err(CliError::Config(format!("level {l} is not below u_max = {u_max}")));
        }
        Ok(Prepared { system, mf, periods, levels, compositions, b_table })
    }
}

impl Prepared {
    /// `b` for the level, or the missing-prerequisite error. Linear systems need none.
    pub fn b_for(&self, level: f64) -> Result<f64, CliError> {
        if self.system.is_linear() {
            return Ok(f64::INFINITY);
        }
        self.b_table
            .as_ref()
            .and_then(|t| t.lookup(level))
            .ok_or_else(|| CliError::MissingB(format!("no b-table entry covers level {level}")))
    }

    /// `M_f` used at this level (with the `b` it was derived from).
    pub fn m_f_for(&self, level: f64, b: f64) -> Result<f64, CliError> {
        match self.mf {
            MfSource::Fixed(v) => Ok(v),
            MfSource::EstimatePll => Ok(pagkit::pll::estimate_mf(b, level)?),
        }
    }

    /// The system with the level's quadratic constant installed.
    pub fn system_at(&self, level: f64, b: f64) -> Result<NonlinearSystem, CliError> {
        let m_f = self.m_f_for(level, b)?;
        Ok(NonlinearSystem::new(
            self.system.linear.clone(),
            self.system.nonlinearity.clone(),
            m_f,
            self.system.m_g,
            self.system.structure,
            self.system.u_max,
        )?)
    }
}
