//! Experiment configuration: one JSON document with a section per module,
//! overridable with dotted `a.b=value` assignments.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::carleman::{CarlemanParams, RatioConfig};
use crate::counterexample::{CounterexampleConfig, HautusConfig};
use crate::domain::{Grid2D, Region, ScalarField, TimeGrid};
use crate::error::{Error, Result};
use crate::particles::ParticleConfig;
use crate::reduced::AnalyticDrift;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "pi")]
    pub lx: f64,
    #[serde(default = "pi")]
    pub ly: f64,
}

fn pi() -> f64 {
    std::f64::consts::PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub nt: usize,
}

/// Axis-aligned box `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl BoxSection {
    pub fn region(&self, name: &str, grid: Grid2D) -> Result<Region> {
        Region::from_box(name, grid, self.x, self.y)
    }
}

/// Initial or terminal datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `amplitude sin(a pi x / lx) sin(b pi y / ly)`.
    Mode { a: usize, b: usize, amplitude: f64 },
    /// `amplitude exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { center: [f64; 2], width: f64, amplitude: f64 },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Mode { a: 1, b: 1, amplitude: 1.0 }
    }
}

impl FieldSpec {
    pub fn sample(&self, grid: Grid2D) -> Result<ScalarField> {
        match *self {
            FieldSpec::Mode { a, b, amplitude } => {
                if a == 0 || b == 0 {
                    return Err(Error::invalid("mode", "wave numbers must be positive"));
                }
                let (ka, kb) = (a as f64 * pi() / grid.lx, b as f64 * pi() / grid.ly);
                Ok(ScalarField::from_fn(grid, |x, y| amplitude * (ka * x).sin() * (kb * y).sin()))
            }
            FieldSpec::Gaussian { center, width, amplitude } => {
                if !(width > 0.0) {
                    return Err(Error::invalid("width", "must be positive"));
                }
                Ok(ScalarField::from_fn(grid, |x, y| {
                    let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Columns of `B`.
    pub b: Vec<[f64; 2]>,
    pub omega: BoxSection,
    /// Defaults to `omega` eroded by one node layer.
    #[serde(default)]
    pub omega0: Option<BoxSection>,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            b: vec![[1.0, 0.0], [0.0, 1.0]],
            omega: BoxSection {
                x: [0.8, 2.4],
                y: [0.8, 2.4],
            },
            omega0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumSection {
    pub k: f64,
    pub k_carleman: f64,
    pub p: u32,
    pub cg_tol: f64,
    pub ks: Vec<f64>,
}

impl Default for HumSection {
    fn default() -> Self {
        Self {
            k: 1e4,
            k_carleman: 0.1,
            p: 2,
            cg_tol: 1e-10,
            ks: vec![1e2, 1e3, 1e4, 1e5, 1e6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearSection {
    /// Positive initial state of the reference trajectory.
    pub reference: FieldSpec,
    /// Shape of the perturbation, rescaled to `perturbation * |ybar(0)|`.
    pub shape: FieldSpec,
    pub perturbation: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Defaults to `1.5^(1 / (2p + 2))`.
    pub q: Option<f64>,
}

impl Default for NonlinearSection {
    fn default() -> Self {
        Self {
            reference: FieldSpec::default(),
            shape: FieldSpec::Mode { a: 2, b: 1, amplitude: 1.0 },
            perturbation: 1e-3,
            max_iter: 20,
            tol: 1e-10,
            alpha: 1.0,
            beta: 7.0 / 12.0,
            q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSection {
    pub q: usize,
    pub tol_sv_rel: f64,
    pub times: Vec<f64>,
    /// Defaults to the control region.
    pub region: Option<BoxSection>,
}

impl Default for RankSection {
    fn default() -> Self {
        Self {
            q: 1,
            tol_sv_rel: 1e-8,
            times: vec![0.0],
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Full gradient on `omega0`.
    #[default]
    Full,
    /// `B* grad`.
    Control,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanSection {
    /// Defaults to `CarlemanParams::defaults(T)`.
    pub params: Option<CarlemanParams>,
    /// Region carrying the critical points of `eta0`; defaults to `omega0`.
    pub omega1: Option<BoxSection>,
    pub observation: Observation,
    pub ratio: RatioConfig,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        Self {
            params: None,
            omega1: None,
            observation: Observation::Full,
            ratio: RatioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleSection {
    pub certificate: CounterexampleConfig,
    /// Run the HUM corroboration when present.
    pub hautus: Option<HautusConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParticleStart {
    #[default]
    SineMode,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleSection {
    #[serde(flatten)]
    pub config: ParticleConfig,
    pub start: ParticleStart,
}

impl Default for ParticleSection {
    fn default() -> Self {
        Self {
            config: ParticleConfig {
                n_particles: 20_000,
                ..ParticleConfig::default()
            },
            start: ParticleStart::SineMode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub tag: String,
    /// Dump every n-th snapshot to CSV; 0 keeps only the endpoints.
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            tag: "default".into(),
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default = "zero_drift")]
    pub drift: AnalyticDrift,
    #[serde(default)]
    pub initial: FieldSpec,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub hum: HumSection,
    #[serde(default)]
    pub nonlinear: NonlinearSection,
    #[serde(default)]
    pub rank: RankSection,
    #[serde(default)]
    pub carleman: CarlemanSection,
    #[serde(default)]
    pub counterexample: CounterexampleSection,
    #[serde(default)]
    pub particles: ParticleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub seed: u64,
}

fn zero_drift() -> AnalyticDrift {
    AnalyticDrift::Zero
}

/// Set `path = value` inside a JSON document, creating objects on the way.
/// The value is parsed as JSON and falls back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form a.b=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override path `{path}` has an empty segment")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("override `{path}`: `{key}` is not inside an object")));
        }
        node = node
            .as_object_mut()
            .expect("checked above")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("override `{path}`: parent is not an object"))),
    }
}

impl Config {
    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: Config = if overrides.is_empty() {
            // straight from text so errors carry line and column
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            for o in overrides {
                apply_override(&mut doc, o)?;
            }
            serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => DEFAULT_CONFIG.to_string(),
        };
        Self::from_str_with(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.time()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn time(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_final, self.time.nt)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses() {
        let c = Config::load(None, &[]).unwrap();
        assert!(c.time.t_final > 0.0);
        let back: Config = serde_json::from_value(c.to_value()).unwrap();
        assert_eq!(back.grid, c.grid);
    }

    #[test]
    fn overrides_apply() {
        let c = Config::load(None, &["time.T=0.5".into(), "output.tag=run1".into()]).unwrap();
        assert_eq!(c.time.t_final, 0.5);
        assert_eq!(c.output.tag, "run1");
    }

    #[test]
    fn missing_field_is_named() {
        let err = Config::from_str_with(r#"{"grid": {"nx": 4, "ny": 4}, "time": {"nt": 4}}"#, &[]).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("`T`"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err =
            Config::from_str_with(r#"{"grid": {"nx": 4, "ny": 4, "nz": 1}, "time": {"T": 1, "nt": 4}}"#, &[]).unwrap_err();
        assert!(err.to_string().contains("nz"));
    }

    #[test]
    fn bad_override() {
        assert!(Config::load(None, &["novalue".into()]).is_err());
    }
}
