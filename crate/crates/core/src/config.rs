//! Scenario files: TOML with dotted sections, or the same structure as JSON.
//!
//! ```toml
//! chart = "polar"
//! grid.n_r = 400
//! grid.n_theta = 32
//! grid.r_max = 8.0
//! state.kind = "eigenstate"
//! state.alpha = 1.0
//! state.n_r = 0
//! ```
//!
//! Parsing collects every unknown key and every invalid value before
//! reporting, so one run lists all problems.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::geometry::{ChartKind, Grid};
use crate::madelung::{PhysicalParams, Potential};
use crate::sde::default_dt;
use crate::states::StateSpec;

const TOP_KEYS: &[&str] = &["chart", "grid", "physics", "state", "run", "evolve", "output"];
const GRID_KEYS: &[&str] = &["n_r", "n_theta", "r_min", "r_max", "n_x", "n_y", "half_width"];
const PHYSICS_KEYS: &[&str] = &["m", "hbar", "omega", "potential"];
const RUN_KEYS: &[&str] =
    &["particles", "dt", "steps", "seed", "direction", "bins_r", "bins_theta", "trajectory_particles", "schedule_every"];
const EVOLVE_KEYS: &[&str] = &["dt", "horizon", "audit_every"];
const OUTPUT_KEYS: &[&str] = &["dir", "format", "prefix"];

fn state_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "eigenstate" => &["kind", "alpha", "n_r"],
        "theta_packet" => &["kind", "center", "width", "r0", "radial_width", "winding"],
        "gaussian" => &["kind", "x0", "y0", "sigma", "kx", "ky"],
        "superposition" => &["kind", "alpha", "n_a", "n_b", "a", "b"],
        _ => return None,
    })
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
struct RawGrid {
    n_r: Option<usize>,
    n_theta: Option<usize>,
    r_min: Option<f64>,
    r_max: Option<f64>,
    n_x: Option<usize>,
    n_y: Option<usize>,
    half_width: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    #[default]
    Harmonic,
    Free,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
struct RawPhysics {
    #[serde(default = "one")]
    m: f64,
    #[serde(default = "one")]
    hbar: f64,
    #[serde(default = "one")]
    omega: f64,
    #[serde(default)]
    potential: PotentialKind,
}

impl Default for RawPhysics {
    fn default() -> Self {
        Self { m: 1.0, hbar: 1.0, omega: 1.0, potential: PotentialKind::Harmonic }
    }
}

fn one() -> f64 {
    1.0
}

/// Which ensembles `simulate` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunDirection {
    #[default]
    Forward,
    Backward,
    Both,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
struct RawRun {
    #[serde(default)]
    particles: usize,
    dt: Option<f64>,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    direction: RunDirection,
    #[serde(default = "default_bins")]
    bins_r: usize,
    #[serde(default = "default_bins")]
    bins_theta: usize,
    #[serde(default = "default_trajectory_particles")]
    trajectory_particles: usize,
    #[serde(default = "default_schedule_every")]
    schedule_every: usize,
}

impl Default for RawRun {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Map::new())).expect("run defaults")
    }
}

fn default_steps() -> usize {
    1000
}

fn default_bins() -> usize {
    16
}

fn default_trajectory_particles() -> usize {
    16
}

fn default_schedule_every() -> usize {
    10
}

#[derive(Clone, Debug, Deserialize, Serialize)]
struct RawEvolve {
    dt: f64,
    horizon: f64,
    #[serde(default = "default_audit_every")]
    audit_every: usize,
}

fn default_audit_every() -> usize {
    100
}

/// Encoding of the report file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    /// Prepended to every file name.
    #[serde(default)]
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), format: OutputFormat::Json, prefix: String::new() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl OutputConfig {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{}{name}", self.prefix))
    }
}

struct RawConfig {
    chart: ChartKind,
    grid: RawGrid,
    physics: RawPhysics,
    /// `None` when the state table failed to parse; the problem is already recorded.
    state: Option<StateSpec>,
    run: RawRun,
    evolve: Option<RawEvolve>,
    output: OutputConfig,
}

fn default_chart() -> ChartKind {
    ChartKind::Polar
}

/// Particle-ensemble settings.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub particles: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub direction: RunDirection,
    pub bins_r: usize,
    pub bins_theta: usize,
    /// Particles whose full paths are written.
    pub trajectory_particles: usize,
    /// Propagator steps between drift-field snapshots for time-dependent states.
    pub schedule_every: usize,
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub chart: ChartKind,
    pub grid: Grid,
    /// Inner cutoff: ensemble `1/r` clipping and the default particle step.
    pub r_min: f64,
    pub params: PhysicalParams,
    pub state: StateSpec,
    pub run: RunConfig,
    pub evolve: Option<EvolutionConfig>,
    pub output: OutputConfig,
    /// The parsed document, echoed into reports.
    pub document: Value,
}

impl ScenarioConfig {
    /// Read a file; `.json` files are parsed as JSON, anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("TOML syntax: {e}")]))?;
        let value = serde_json::to_value(table).map_err(|e| Error::Config(vec![e.to_string()]))?;
        Self::from_value(value)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("JSON syntax: {e}")]))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        // unknown keys are reported and dropped so the values can still be checked
        let mut pruned = value.clone();
        let mut problems = unknown_keys(&mut pruned);
        let raw = sections(&pruned, &mut problems);
        let built = build(&raw, &mut problems);
        match built {
            Some(mut cfg) if problems.is_empty() => {
                cfg.document = value;
                Ok(cfg)
            }
            _ => Err(Error::Config(problems)),
        }
    }

    /// Command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, particles: Option<usize>, out: Option<PathBuf>, format: Option<OutputFormat>) {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        if let Some(p) = particles {
            self.run.particles = p;
        }
        if let Some(d) = out {
            self.output.dir = d;
        }
        if let Some(f) = format {
            self.output.format = f;
        }
    }
}

/// Deserialize each section on its own so a bad section does not hide the others.
fn sections(value: &Value, problems: &mut Vec<String>) -> RawConfig {
    let empty = Map::new();
    let top = value.as_object().unwrap_or(&empty);
    let state_reported = problems.iter().any(|p| p.starts_with("state"));
    let part = |name: &str| top.get(name).cloned();
    RawConfig {
        chart: parse_section("chart", part("chart"), problems).unwrap_or_else(default_chart),
        grid: parse_section("grid", part("grid"), problems).unwrap_or_default(),
        physics: parse_section("physics", part("physics"), problems).unwrap_or_default(),
        state: match part("state") {
            Some(v) => match serde_json::from_value(v) {
                Ok(s) => Some(s),
                Err(e) => {
                    if !state_reported {
                        problems.push(format!("state: {e}"));
                    }
                    None
                }
            },
            None => None,
        },
        run: parse_section("run", part("run"), problems).unwrap_or_default(),
        evolve: parse_section("evolve", part("evolve"), problems),
        output: parse_section("output", part("output"), problems).unwrap_or_default(),
    }
}

fn parse_section<T: serde::de::DeserializeOwned>(name: &str, value: Option<Value>, problems: &mut Vec<String>) -> Option<T> {
    serde_json::from_value(value?).map_err(|e| problems.push(format!("{name}: {e}"))).ok()
}

fn unknown_keys(value: &mut Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(top) = value.as_object_mut() else {
        return vec!["configuration must be a table".into()];
    };
    check_table(top, "", TOP_KEYS, &mut out);
    let sections: [(&str, &[&str]); 5] =
        [("grid", GRID_KEYS), ("physics", PHYSICS_KEYS), ("run", RUN_KEYS), ("evolve", EVOLVE_KEYS), ("output", OUTPUT_KEYS)];
    for (name, keys) in sections {
        match top.get_mut(name) {
            Some(Value::Object(t)) => check_table(t, name, keys, &mut out),
            Some(_) => out.push(format!("{name}: expected a table")),
            None => {}
        }
    }
    match top.get_mut("state") {
        Some(Value::Object(t)) => match t.get("kind").and_then(Value::as_str).map(str::to_owned) {
            Some(kind) => match state_keys(&kind) {
                Some(keys) => check_table(t, "state", keys, &mut out),
                None => out.push(format!(
                    "state.kind: unknown kind {kind:?} (expected eigenstate, theta_packet, gaussian or superposition)"
                )),
            },
            None => out.push("state.kind: missing".into()),
        },
        Some(_) => out.push("state: expected a table".into()),
        None => out.push("state: missing".into()),
    }
    out
}

fn check_table(t: &mut Map<String, Value>, section: &str, allowed: &[&str], out: &mut Vec<String>) {
    t.retain(|k, _| {
        let known = allowed.contains(&k.as_str());
        if !known {
            let full = if section.is_empty() { k.clone() } else { format!("{section}.{k}") };
            out.push(format!("{full}: unknown key"));
        }
        known
    });
}

fn build(raw: &RawConfig, problems: &mut Vec<String>) -> Option<ScenarioConfig> {
    let mut bad = |msg: String| problems.push(msg);
    let g = &raw.grid;
    let mut positive = |name: &str, v: Option<f64>| match v {
        Some(x) if x > 0.0 && x.is_finite() => Some(x),
        Some(x) => {
            bad(format!("{name}: must be positive, got {x}"));
            None
        }
        None => {
            bad(format!("{name}: missing"));
            None
        }
    };
    let (grid, r_min) = match raw.chart {
        ChartKind::Polar => {
            let r_max = positive("grid.r_max", g.r_max);
            let mut ok = r_max.is_some();
            for (name, v) in [("grid.n_x", g.n_x.is_some()), ("grid.n_y", g.n_y.is_some()), ("grid.half_width", g.half_width.is_some())] {
                if v {
                    bad(format!("{name}: not used by the polar chart"));
                    ok = false;
                }
            }
            let n_r = g.n_r.unwrap_or(400);
            let n_theta = g.n_theta.unwrap_or(32);
            if n_r < 4 {
                bad(format!("grid.n_r: need at least 4 nodes, got {n_r}"));
                ok = false;
            }
            if n_theta < 4 || !n_theta.is_multiple_of(2) {
                bad(format!("grid.n_theta: need an even count of at least 4, got {n_theta}"));
                ok = false;
            }
            let r_min = match (g.r_min, r_max) {
                (Some(x), Some(rm)) if !(x > 0.0 && x < rm) => {
                    bad(format!("grid.r_min: must lie in (0, r_max), got {x}"));
                    ok = false;
                    0.0
                }
                (Some(x), _) => x,
                (None, Some(rm)) => rm * 1e-4,
                (None, None) => 0.0,
            };
            let grid = if ok { Grid::polar_disc(n_r, n_theta, r_max.unwrap()).ok() } else { None };
            (grid, r_min)
        }
        ChartKind::Cartesian => {
            let hw = positive("grid.half_width", g.half_width);
            let mut ok = hw.is_some();
            for (name, v) in [
                ("grid.n_r", g.n_r.is_some()),
                ("grid.n_theta", g.n_theta.is_some()),
                ("grid.r_min", g.r_min.is_some()),
                ("grid.r_max", g.r_max.is_some()),
            ] {
                if v {
                    bad(format!("{name}: not used by the cartesian chart"));
                    ok = false;
                }
            }
            let (n_x, n_y) = (g.n_x.unwrap_or(256), g.n_y.unwrap_or(256));
            if n_x < 4 || n_y < 4 {
                bad(format!("grid.n_x/n_y: need at least 4 nodes, got {n_x} x {n_y}"));
                ok = false;
            }
            let grid = if ok { Grid::cartesian(n_x, n_y, hw.unwrap()).ok() } else { None };
            (grid, 0.0)
        }
    };

    let p = &raw.physics;
    let potential = match p.potential {
        PotentialKind::Harmonic => Potential::Harmonic { omega: p.omega },
        PotentialKind::Free => Potential::Free,
    };
    let params = match PhysicalParams::new(p.m, p.hbar, potential) {
        Ok(params) => Some(params),
        Err(e) => {
            bad(format!("physics: {e}"));
            None
        }
    };

    if let Some(state) = &raw.state {
        if let Err(e) = state.validate() {
            bad(format!("state: {e}"));
        }
        if !matches!(state, StateSpec::Gaussian { .. }) && raw.chart == ChartKind::Cartesian {
            bad(format!("state.kind: {} needs the polar chart", state.label()));
        }
    }

    let r = &raw.run;
    let dt = match (r.dt, params) {
        (Some(dt), _) if !(dt > 0.0 && dt.is_finite()) => {
            bad(format!("run.dt: must be positive, got {dt}"));
            f64::NAN
        }
        (Some(dt), _) => dt,
        (None, Some(params)) => default_dt(r_min.max(f64::MIN_POSITIVE), params.nu()),
        (None, None) => f64::NAN,
    };
    if r.steps == 0 {
        bad("run.steps: must be at least 1".into());
    }
    if r.bins_r == 0 || r.bins_theta == 0 {
        bad("run.bins_r/bins_theta: must be positive".into());
    }
    if r.schedule_every == 0 {
        bad("run.schedule_every: must be positive".into());
    }
    let run = RunConfig {
        particles: r.particles,
        dt,
        steps: r.steps,
        seed: r.seed,
        direction: r.direction,
        bins_r: r.bins_r,
        bins_theta: r.bins_theta,
        trajectory_particles: r.trajectory_particles,
        schedule_every: r.schedule_every,
    };

    let evolve = raw.evolve.as_ref().map(|e| EvolutionConfig { dt: e.dt, horizon: e.horizon, audit_every: e.audit_every });
    if let Some(e) = &evolve {
        if let Err(err) = e.validate() {
            bad(format!("evolve: {err}"));
        }
    }

    Some(ScenarioConfig {
        chart: raw.chart,
        grid: grid?,
        r_min,
        params: params?,
        state: raw.state.clone()?,
        run,
        evolve,
        output: raw.output.clone(),
        document: Value::Null,
    })
}
