//! Scenario files: a flat TOML document with `[grid]`, `[params]`,
//! `[schedule]`, `[picard]`, `[initial.p]`, `[initial.c]`, `[source]`,
//! `[output]` and `[tolerances]` sections. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use angio_core::grid::{boundary_mass_fraction, integrate};
use angio_core::harness::{describe, CATALOGUE};
use angio_core::{
    GridSpec, Initialization, ModelParams, MomentSet, PhaseField, PicardOptions, Positivity, Role, Schedule,
    SourceTrack, SpatialField,
};

use crate::recipe::{Recipe, Target};
use crate::Error;

/// Fraction of the mass allowed within three cells of a box face.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    Pure,
    Coupled,
}

impl Driver {
    pub fn as_str(&self) -> &'static str {
        match self {
            Driver::Pure => "pure",
            Driver::Coupled => "coupled",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim_x: usize,
    pub dim_v: usize,
    pub n_x: usize,
    pub n_v: usize,
    pub half_width_x: f64,
    pub half_width_v: f64,
}

/// Model constants; omitted keys take the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub sigma: Option<f64>,
    pub d: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    pub alpha1: Option<f64>,
    pub c_r: Option<f64>,
    pub epsilon: Option<f64>,
    pub v0: Option<Vec<f64>>,
    pub k_inf: Option<f64>,
    pub use_vector_j: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "one")]
    pub save_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Zero,
    HeatFlow,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    pub k_max: Option<usize>,
    pub tol: Option<f64>,
    pub init: Option<InitConfig>,
    pub slab_factor: Option<f64>,
    /// `false` switches off clamping and sign enforcement.
    pub strict: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub p: Recipe,
    pub c: Option<Recipe>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub snapshots: bool,
    #[serde(default = "yes")]
    pub phase_csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            snapshots: true,
            phase_csv: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub driver: Driver,
    /// Check names; all checks that apply to the driver when omitted.
    pub checks: Option<Vec<String>>,
    pub grid: GridConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    pub initial: InitialConfig,
    /// Steady source `f`; pure driver only.
    pub source: Option<Recipe>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Per-check tolerance overrides.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

/// A scenario with every derived object built and checked.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub grid: GridSpec,
    pub params: ModelParams,
    pub schedule: Schedule,
    pub options: PicardOptions,
    pub p0: PhaseField,
    pub c0: Option<SpatialField>,
    pub source: SourceTrack,
    pub checks: Vec<String>,
    pub warnings: Vec<String>,
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses TOML text; errors carry line and column.
pub fn parse(text: &str) -> Result<Scenario, Error> {
    toml::from_str(text).map_err(|e| config(format!("{e}")))
}

/// Applies `key.path=value` overrides to the raw document, then parses it.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Scenario, Error> {
    if overrides.is_empty() {
        return parse(text);
    }
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| config(format!("{e}")))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config(format!("override `{item}` is not key=value")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for p in path {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| config(format!("override `{key}`: `{p}` is not a table")))?;
        }
        table.insert(last.to_string(), value);
    }
    toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| config(format!("after overrides: {e}")))
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    parse_with_overrides(&text, overrides).map_err(|e| config(format!("{}: {e}", path.display())))
}

impl Scenario {
    pub fn model_params(&self, dim_v: usize) -> Result<ModelParams, Error> {
        let d = ModelParams::default();
        let p = &self.params;
        let v0 = match &p.v0 {
            None => d.v0,
            Some(v) if v.len() == dim_v => {
                let mut out = [0.0; 2];
                out[..dim_v].copy_from_slice(v);
                out
            }
            Some(v) => return Err(config(format!("params.v0 needs {dim_v} components, got {}", v.len()))),
        };
        let v0 = if dim_v == 1 { [v0[0], 0.0] } else { v0 };
        let out = ModelParams {
            sigma: p.sigma.unwrap_or(d.sigma),
            d: p.d.unwrap_or(d.d),
            gamma: p.gamma.unwrap_or(d.gamma),
            eta: p.eta.unwrap_or(d.eta),
            alpha1: p.alpha1.unwrap_or(d.alpha1),
            c_r: p.c_r.unwrap_or(d.c_r),
            epsilon: p.epsilon.unwrap_or(d.epsilon),
            v0,
            k_inf: p.k_inf.unwrap_or(d.k_inf),
            use_vector_j: p.use_vector_j.unwrap_or(d.use_vector_j),
        };
        out.validate().map_err(|e| config(format!("params: {e}")))?;
        Ok(out)
    }

    pub fn picard_options(&self) -> Result<PicardOptions, Error> {
        let d = PicardOptions::default();
        let p = &self.picard;
        let k_max = p.k_max.unwrap_or(d.k_max);
        let tol = p.tol.unwrap_or(d.tol);
        let slab_factor = p.slab_factor.unwrap_or(d.slab_factor);
        if k_max < 2 {
            return Err(config("picard.k_max must be >= 2"));
        }
        if !(tol.is_finite() && tol > 0.0) {
            return Err(config(format!("picard.tol must be > 0, got {tol}")));
        }
        if !(slab_factor.is_finite() && slab_factor > 0.0) {
            return Err(config(format!("picard.slab_factor must be > 0, got {slab_factor}")));
        }
        Ok(PicardOptions {
            k_max,
            tol,
            init: p.init.map(|i| match i {
                InitConfig::Zero => Initialization::Zero,
                InitConfig::HeatFlow => Initialization::HeatFlow,
            }),
            positivity: if p.strict.unwrap_or(true) {
                Positivity::Strict
            } else {
                Positivity::NonStrict
            },
            record_energy: self.driver == Driver::Pure,
            slab_factor,
        })
    }

    pub fn resolved_checks(&self) -> Result<Vec<String>, Error> {
        let coupled = self.driver == Driver::Coupled;
        match &self.checks {
            None => Ok(CATALOGUE
                .iter()
                .filter(|c| c.scope.admits(coupled))
                .map(|c| c.name.to_string())
                .collect()),
            Some(names) => {
                let mut out = Vec::new();
                for n in names {
                    let info = describe(n).ok_or_else(|| config(format!("checks: unknown check `{n}`")))?;
                    if !info.scope.admits(coupled) {
                        return Err(config(format!(
                            "checks: `{n}` applies to the {} driver only",
                            info.scope.as_str()
                        )));
                    }
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
                Ok(out)
            }
        }
    }

    /// Builds grid, data and options; every failure is a configuration error.
    pub fn prepare(self) -> Result<Prepared, Error> {
        let g = &self.grid;
        let grid = GridSpec::new(g.dim_x, g.dim_v, g.n_x, g.n_v, g.half_width_x, g.half_width_v)
            .map_err(|e| config(format!("grid: {e}")))?;
        let params = self.model_params(grid.dim_v)?;
        let schedule = Schedule::new(self.schedule.t_end, self.schedule.dt, self.schedule.save_stride)
            .map_err(|e| config(format!("schedule: {e}")))?;
        let options = self.picard_options()?;
        let checks = self.resolved_checks()?;
        for (name, tol) in &self.tolerances {
            if describe(name).is_none() {
                return Err(config(format!("tolerances: unknown check `{name}`")));
            }
            if !(tol.is_finite() && *tol >= 0.0) {
                return Err(config(format!("tolerances.{name} must be >= 0")));
            }
        }

        let mut warnings = Vec::new();
        self.initial
            .p
            .validate(&grid, Target::Phase, "initial.p")
            .map_err(config)?;
        warnings.extend(self.initial.p.resolution_warnings(&grid, "initial.p"));
        let p0 = self.initial.p.phase(grid)?;
        let c0 = match (self.driver, &self.initial.c) {
            (Driver::Coupled, Some(r)) => {
                r.validate(&grid, Target::Spatial, "initial.c").map_err(config)?;
                warnings.extend(r.resolution_warnings(&grid, "initial.c"));
                Some(r.spatial(grid, Role::C)?)
            }
            (Driver::Coupled, None) => return Err(config("initial.c is required by the coupled driver")),
            (Driver::Pure, Some(_)) => return Err(config("initial.c is only read by the coupled driver")),
            (Driver::Pure, None) => None,
        };
        let source = match (self.driver, &self.source) {
            (_, None) => SourceTrack::None,
            (Driver::Pure, Some(r)) => {
                r.validate(&grid, Target::Phase, "source").map_err(config)?;
                warnings.extend(r.resolution_warnings(&grid, "source"));
                SourceTrack::Steady(r.phase(grid)?)
            }
            (Driver::Coupled, Some(_)) => return Err(config("source is only supported by the pure driver")),
        };
        let frac = boundary_mass_fraction(&p0, 3);
        if frac > BOUNDARY_MASS_LIMIT {
            warnings.push(format!(
                "initial.p: {frac:e} of the mass lies within 3 cells of a box face (limit {BOUNDARY_MASS_LIMIT:e})"
            ));
        }
        if checks.iter().any(|c| c.starts_with("gronwall_m_")) {
            let ms = MomentSet::of(&p0)?;
            let (mass, second) = (integrate(&ms.p_tilde)?, integrate(&ms.m)?);
            if second < mass {
                warnings.push(format!(
                    "initial.p: mean-square speed {:.3} is below 1; the m envelope charges creation to m, not p̃, and may fail",
                    second / mass
                ));
            }
        }
        Ok(Prepared {
            scenario: self,
            grid,
            params,
            schedule,
            options,
            p0,
            c0,
            source,
            checks,
            warnings,
        })
    }
}
