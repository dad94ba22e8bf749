//! Strict scenario parsing.
//!
//! A scenario is a TOML document with the top-level keys `name`, `command`,
//! `seed`, `parameters`, and `output`. Every key that is not documented for
//! the chosen command is rejected by name. Physical quantities are strings
//! with an explicit unit suffix (`"1 eV"`, `"1e-7 m"`) and are converted to
//! SI on parse; dimensionless quantities are plain numbers. A handful of
//! commands operate in reduced units (`hbar = 1`, energy scale `E0 = 1`)
//! because their trajectories only resolve in that regime; their keys take
//! plain numbers and are documented as such.

use std::collections::BTreeSet;

use decolab::UnitsContext;
use toml::Value;

use crate::{CliError, Result};

fn err(msg: impl Into<String>) -> CliError {
    CliError::Scenario(msg.into())
}

// ---------------------------------------------------------------------------
// Unit suffixes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantityKind {
    Energy,
    Time,
    Length,
    Mass,
    Density,
}

impl QuantityKind {
    pub fn label(self) -> &'static str {
        match self {
            QuantityKind::Energy => "energy",
            QuantityKind::Time => "time",
            QuantityKind::Length => "length",
            QuantityKind::Mass => "mass",
            QuantityKind::Density => "density",
        }
    }

    pub fn example(self) -> &'static str {
        match self {
            QuantityKind::Energy => "\"1 eV\"",
            QuantityKind::Time => "\"1 tau_pl\"",
            QuantityKind::Length => "\"1e-7 m\"",
            QuantityKind::Mass => "\"1e-15 kg\"",
            QuantityKind::Density => "\"1 g/cm3\"",
        }
    }

    fn factor(self, unit: &str, u: &UnitsContext) -> Option<f64> {
        let f = match (self, unit) {
            (QuantityKind::Energy, "J") => 1.0,
            (QuantityKind::Energy, "eV") => u.ev,
            (QuantityKind::Energy, "keV") => 1.0e3 * u.ev,
            (QuantityKind::Energy, "MeV") => 1.0e6 * u.ev,
            (QuantityKind::Energy, "GeV") => 1.0e9 * u.ev,
            (QuantityKind::Time, "s") => 1.0,
            (QuantityKind::Time, "ms") => 1.0e-3,
            (QuantityKind::Time, "us") => 1.0e-6,
            (QuantityKind::Time, "ns") => 1.0e-9,
            (QuantityKind::Time, "fs") => 1.0e-15,
            (QuantityKind::Time, "tau_pl") => u.tau_planck,
            (QuantityKind::Length, "m") => 1.0,
            (QuantityKind::Length, "cm") => 1.0e-2,
            (QuantityKind::Length, "mm") => 1.0e-3,
            (QuantityKind::Length, "um") => 1.0e-6,
            (QuantityKind::Length, "nm") => 1.0e-9,
            (QuantityKind::Mass, "kg") => 1.0,
            (QuantityKind::Mass, "g") => 1.0e-3,
            (QuantityKind::Density, "kg/m3") => 1.0,
            (QuantityKind::Density, "g/cm3") => 1.0e3,
            _ => return None,
        };
        Some(f)
    }
}

/// Parses `"<number> <unit>"` into an SI value; errors name the key.
pub fn parse_quantity(key: &str, raw: &str, kind: QuantityKind, u: &UnitsContext) -> Result<f64> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let bad = || {
        err(format!(
            "key `{key}`: expected a {} with a unit suffix like {}, got \"{raw}\"",
            kind.label(),
            kind.example()
        ))
    };
    if parts.len() != 2 {
        return Err(bad());
    }
    let value: f64 = parts[0].parse().map_err(|_| bad())?;
    let factor = kind.factor(parts[1], u).ok_or_else(|| {
        err(format!(
            "key `{key}`: unit suffix mismatch — \"{}\" is not a {} unit (example: {})",
            parts[1],
            kind.label(),
            kind.example()
        ))
    })?;
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(value * factor)
}

// ---------------------------------------------------------------------------
// Strict table walking
// ---------------------------------------------------------------------------

struct Keyed<'a> {
    ctx: &'a str,
    table: toml::map::Map<String, Value>,
    seen: BTreeSet<String>,
}

impl<'a> Keyed<'a> {
    fn new(ctx: &'a str, table: toml::map::Map<String, Value>) -> Self {
        Keyed {
            ctx,
            table,
            seen: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&Value> {
        self.seen.insert(key.to_string());
        self.table.get(key)
    }

    fn reject(&mut self, key: &str, why: &str) -> Result<()> {
        self.seen.insert(key.to_string());
        if self.table.contains_key(key) {
            return Err(err(format!("key `{key}` {why}")));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        for key in self.table.keys() {
            if !self.seen.contains(key) {
                let mut known: Vec<&str> = self.seen.iter().map(|s| s.as_str()).collect();
                known.sort_unstable();
                return Err(err(format!(
                    "unknown key `{key}` in {}; documented keys: {}",
                    self.ctx,
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }
}

fn as_str(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| err(format!("key `{key}`: expected a string")))
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as u64),
        _ => Err(err(format!("key `{key}`: expected a non-negative integer"))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    Ok(as_u64(key, v)? as usize)
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    let x = match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        _ => return Err(err(format!("key `{key}`: expected a number"))),
    };
    if !x.is_finite() {
        return Err(err(format!("key `{key}`: number must be finite")));
    }
    Ok(x)
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| err(format!("key `{key}`: expected a boolean")))
}

fn as_f64_array(key: &str, v: &Value) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| err(format!("key `{key}`: expected an array of numbers")))?;
    arr.iter().map(|item| as_f64(key, item)).collect()
}

fn as_nested_f64_array(key: &str, v: &Value) -> Result<Vec<Vec<f64>>> {
    let arr = v
        .as_array()
        .ok_or_else(|| err(format!("key `{key}`: expected an array of arrays of numbers")))?;
    arr.iter().map(|row| as_f64_array(key, row)).collect()
}

// ---------------------------------------------------------------------------
// Scenario model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub output: OutputSpec,
    pub command: CommandSpec,
}

#[derive(Debug, Clone)]
pub struct OutputSpec {
    /// Output file path, relative to the `--out` directory.
    pub path: String,
    /// Format tag; only `csv` is supported.
    pub format: String,
}

#[derive(Debug, Clone)]
pub enum CommandSpec {
    TwoLevelDecay(TwoLevelParams),
    MilburnTable(MilburnTableParams),
    McCompare(McCompareParams),
    LocalMe(LocalMeParams),
    DpLumps(DpLumpsParams),
    CriticalRadius(CriticalRadiusParams),
    TraceDemo(TraceDemoParams),
}

impl CommandSpec {
    pub fn command_name(&self) -> &'static str {
        match self {
            CommandSpec::TwoLevelDecay(_) => "two-level-decay",
            CommandSpec::MilburnTable(_) => "milburn-table",
            CommandSpec::McCompare(_) => "mc-compare",
            CommandSpec::LocalMe(_) => "local-me",
            CommandSpec::DpLumps(_) => "dp-lumps",
            CommandSpec::CriticalRadius(_) => "critical-radius",
            CommandSpec::TraceDemo(_) => "trace-demo",
        }
    }
}

pub const COMMAND_SUMMARIES: &[(&str, &str)] = &[
    (
        "two-level-decay",
        "Integrate one dephasing model on a two-level superposition; emit the \
         off-diagonal trajectory and compare the fitted decay rate to the \
         closed form. Keys: delta_e (energy), tau (time; defaults to 0.4 \
         hbar/delta_e), model (global|milburn-exact|milburn-first-order|\
         adler), n_decay_times, n_steps, sample_every.",
    ),
    (
        "milburn-table",
        "Decoherence times over a list of superposition energy gaps, under \
         both time conventions. Keys: energies (array of energy strings), \
         tau (time).",
    ),
    (
        "mc-compare",
        "Monte-Carlo ensemble vs. master equation z-score table, in reduced \
         units (hbar = 1). Keys: noise (gaussian-global|poisson-discrete|\
         fluctuating-planck|local-field), n_traj, master_steps, delta_e \
         (number, E0), tau (number, hbar/E0), times (numbers, hbar/E0), \
         preset + kernel_taus for local-field.",
    ),
    (
        "local-me",
        "Local dephasing master equation in reduced units: trajectory plus \
         trace/Hermiticity/positivity diagnostics. Keys: dim, n_cells, \
         part_energies (nested numbers, E0), kernel (diagonal|global|\
         newtonian-shape), kernel_taus / kernel_tau / kernel_scale (numbers, \
         hbar/E0), spacing + sigma (lengths) + nx,ny,nz for newtonian-shape, \
         t_final (number, hbar/E0), n_steps, sample_every.",
    ),
    (
        "dp-lumps",
        "Gravitational pair energy of two smeared uniform balls on a grid, \
         the implied decoherence time, and the pointer-basis rate \
         cross-check. Keys: density, radius, radius2, separation, sigma, \
         spacing (all with units).",
    ),
    (
        "critical-radius",
        "Log-spaced sweep of dynamical vs. decoherence times for a ball of \
         the given density; reports the crossing radius. Keys: density.",
    ),
    (
        "trace-demo",
        "Matrix-chain trace dynamics: leapfrog run with conserved-charge, \
         energy, and invariance diagnostics (dimensionless units). Keys: n, \
         r_cells, n_steps, dt, scale, omega2, lambda, kappa, sample_every, \
         negative_control (bool).",
    ),
];

// Per-command parameter structs, fully resolved (SI or documented reduced
// units), with defaults applied.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayModelKind {
    Global,
    MilburnExact,
    MilburnFirstOrder,
    Adler,
}

impl DecayModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayModelKind::Global => "global",
            DecayModelKind::MilburnExact => "milburn-exact",
            DecayModelKind::MilburnFirstOrder => "milburn-first-order",
            DecayModelKind::Adler => "adler",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoLevelParams {
    /// Superposition energy gap (J).
    pub delta_e: f64,
    /// Time-uncertainty parameter (s). `None` means the documented default
    /// `0.4 hbar / delta_e`, resolved at run time.
    pub tau: Option<f64>,
    pub model: DecayModelKind,
    /// Horizon in units of the expected decay time.
    pub n_decay_times: f64,
    pub n_steps: usize,
    /// Emit every k-th integrator state (0 = auto, about 200 rows).
    pub sample_every: usize,
}

#[derive(Debug, Clone)]
pub struct MilburnTableParams {
    /// Superposition energy gaps (J).
    pub energies: Vec<f64>,
    /// Time-uncertainty parameter (s).
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    GaussianGlobal,
    PoissonDiscrete,
    FluctuatingPlanck,
    LocalField,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::GaussianGlobal => "gaussian-global",
            NoiseKind::PoissonDiscrete => "poisson-discrete",
            NoiseKind::FluctuatingPlanck => "fluctuating-planck",
            NoiseKind::LocalField => "local-field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalPreset {
    NoncommutingPair,
    CommutingChain,
}

impl LocalPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            LocalPreset::NoncommutingPair => "noncommuting-pair",
            LocalPreset::CommutingChain => "commuting-chain",
        }
    }
}

/// Reduced units (`hbar = 1`, energy scale `E0 = 1`) throughout: the
/// equivalence regimes decay after O(10) phase units, which no floating-point
/// trajectory reaches at laboratory SI scales.
#[derive(Debug, Clone)]
pub struct McCompareParams {
    pub noise: NoiseKind,
    pub n_traj: usize,
    pub master_steps: usize,
    /// Energy gap (E0); unused for local-field.
    pub delta_e: f64,
    /// Time-uncertainty parameter (hbar/E0); unused for local-field.
    pub tau: f64,
    /// Sample times (hbar/E0).
    pub times: Vec<f64>,
    /// local-field only.
    pub preset: LocalPreset,
    /// local-field only: diagonal kernel weights (hbar/E0).
    pub kernel_taus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalKernelKind {
    Diagonal,
    Global,
    NewtonianShape,
}

impl LocalKernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LocalKernelKind::Diagonal => "diagonal",
            LocalKernelKind::Global => "global",
            LocalKernelKind::NewtonianShape => "newtonian-shape",
        }
    }
}

/// Reduced units for the state dynamics; the newtonian-shape kernel takes
/// genuine SI lengths for its geometry and is rescaled so that its largest
/// diagonal entry equals `kernel_scale` (the raw SI amplitude is reported).
#[derive(Debug, Clone)]
pub struct LocalMeParams {
    pub dim: usize,
    pub n_cells: usize,
    /// `n_cells` rows of `dim` level energies (E0).
    pub part_energies: Vec<Vec<f64>>,
    pub kernel: LocalKernelKind,
    /// diagonal kernel weights (hbar/E0).
    pub kernel_taus: Vec<f64>,
    /// global kernel weight (hbar/E0).
    pub kernel_tau: f64,
    /// newtonian-shape target for the largest diagonal entry (hbar/E0).
    pub kernel_scale: f64,
    /// newtonian-shape grid geometry (m).
    pub spacing: f64,
    pub sigma: f64,
    pub grid_dims: [usize; 3],
    /// Horizon (hbar/E0).
    pub t_final: f64,
    pub n_steps: usize,
    pub sample_every: usize,
}

#[derive(Debug, Clone)]
pub struct DpLumpsParams {
    /// Mass density of both balls (kg/m^3).
    pub density: f64,
    /// Radii (m); `radius2` defaults to `radius`.
    pub radius: f64,
    pub radius2: f64,
    /// Center-to-center separation along x (m).
    pub separation: f64,
    /// Gaussian smearing width (m).
    pub sigma: f64,
    /// Grid spacing (m).
    pub spacing: f64,
}

#[derive(Debug, Clone)]
pub struct CriticalRadiusParams {
    /// Mass density (kg/m^3).
    pub density: f64,
}

#[derive(Debug, Clone)]
pub struct TraceDemoParams {
    pub n: usize,
    pub r_cells: usize,
    pub n_steps: usize,
    /// Leapfrog step (dimensionless model time).
    pub dt: f64,
    /// Initial-condition scale.
    pub scale: f64,
    pub omega2: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub sample_every: usize,
    /// Replace the scalar harmonic coefficient by a fixed non-degenerate
    /// matrix, which is expected to break the conservation law.
    pub negative_control: bool,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

pub const COMMAND_NAMES: &[&str] = &[
    "two-level-decay",
    "milburn-table",
    "mc-compare",
    "local-me",
    "dp-lumps",
    "critical-radius",
    "trace-demo",
];

/// Parses and fully resolves a scenario document; all defaults documented in
/// `COMMAND_SUMMARIES` are applied here.
pub fn parse_scenario(text: &str, units: &UnitsContext) -> Result<Scenario> {
    let root: Value = text
        .parse()
        .map_err(|e| err(format!("not valid TOML: {e}")))?;
    let Value::Table(table) = root else {
        return Err(err("top level must be a table"));
    };
    let mut top = Keyed::new("the scenario top level", table);

    let name = match top.get("name") {
        Some(v) => as_str("name", v)?,
        None => return Err(err("missing required key `name`")),
    };
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(err(
            "key `name`: must be non-empty and use only ASCII letters, digits, `-`, `_`, `.`",
        ));
    }
    let command_name = match top.get("command") {
        Some(v) => as_str("command", v)?,
        None => return Err(err("missing required key `command`")),
    };
    let seed = match top.get("seed") {
        Some(v) => as_u64("seed", v)?,
        None => 0,
    };
    let output = match top.get("output") {
        Some(v) => parse_output(v, &name)?,
        None => OutputSpec {
            path: format!("{name}.csv"),
            format: "csv".to_string(),
        },
    };
    let params_table = match top.get("parameters") {
        Some(Value::Table(t)) => t.clone(),
        Some(_) => return Err(err("key `parameters`: expected a table")),
        None => toml::map::Map::new(),
    };
    top.finish()?;

    let command = parse_command(&command_name, params_table, units)?;
    Ok(Scenario {
        name,
        seed,
        output,
        command,
    })
}

fn parse_output(v: &Value, name: &str) -> Result<OutputSpec> {
    let Value::Table(t) = v else {
        return Err(err("key `output`: expected a table with `path` and `format`"));
    };
    let mut k = Keyed::new("[output]", t.clone());
    let path = match k.get("path") {
        Some(v) => as_str("output.path", v)?,
        None => format!("{name}.csv"),
    };
    let format = match k.get("format") {
        Some(v) => as_str("output.format", v)?,
        None => "csv".to_string(),
    };
    k.finish()?;
    if format != "csv" {
        return Err(err(format!(
            "key `output.format`: only \"csv\" is supported, got \"{format}\""
        )));
    }
    if path.is_empty() || std::path::Path::new(&path).is_absolute() || path.contains("..") {
        return Err(err(
            "key `output.path`: must be a relative path without `..` components",
        ));
    }
    Ok(OutputSpec { path, format })
}

fn parse_command(
    command: &str,
    params: toml::map::Map<String, Value>,
    units: &UnitsContext,
) -> Result<CommandSpec> {
    let ctx = format!("[parameters] for command {command}");
    let mut k = Keyed::new(&ctx, params);
    let spec = match command {
        "two-level-decay" => CommandSpec::TwoLevelDecay(parse_two_level(&mut k, units)?),
        "milburn-table" => CommandSpec::MilburnTable(parse_milburn_table(&mut k, units)?),
        "mc-compare" => CommandSpec::McCompare(parse_mc_compare(&mut k)?),
        "local-me" => CommandSpec::LocalMe(parse_local_me(&mut k, units)?),
        "dp-lumps" => CommandSpec::DpLumps(parse_dp_lumps(&mut k, units)?),
        "critical-radius" => CommandSpec::CriticalRadius(parse_critical_radius(&mut k, units)?),
        "trace-demo" => CommandSpec::TraceDemo(parse_trace_demo(&mut k)?),
        other => {
            return Err(err(format!(
                "key `command`: unknown command \"{other}\"; expected one of {}",
                COMMAND_NAMES.join(", ")
            )))
        }
    };
    k.finish()?;
    Ok(spec)
}

fn quantity_key(
    k: &mut Keyed,
    key: &str,
    kind: QuantityKind,
    units: &UnitsContext,
    default: Option<&str>,
) -> Result<Option<f64>> {
    match k.get(key) {
        Some(v) => {
            let raw = as_str(key, v)?;
            Ok(Some(parse_quantity(key, &raw, kind, units)?))
        }
        None => match default {
            Some(d) => Ok(Some(parse_quantity(key, d, kind, units)?)),
            None => Ok(None),
        },
    }
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(err(format!("key `{key}`: must be > 0, got {x}")))
    }
}

fn nonneg(key: &str, x: f64) -> Result<f64> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(err(format!("key `{key}`: must be >= 0, got {x}")))
    }
}

fn parse_two_level(k: &mut Keyed, units: &UnitsContext) -> Result<TwoLevelParams> {
    let delta_e = positive(
        "delta_e",
        quantity_key(k, "delta_e", QuantityKind::Energy, units, Some("1 eV"))?.unwrap(),
    )?;
    let tau = match quantity_key(k, "tau", QuantityKind::Time, units, None)? {
        Some(t) => Some(nonneg("tau", t)?),
        None => None,
    };
    let model = match k.get("model") {
        Some(v) => match as_str("model", v)?.as_str() {
            "global" => DecayModelKind::Global,
            "milburn-exact" => DecayModelKind::MilburnExact,
            "milburn-first-order" => DecayModelKind::MilburnFirstOrder,
            "adler" => DecayModelKind::Adler,
            other => {
                return Err(err(format!(
                    "key `model`: unknown model \"{other}\"; expected global, milburn-exact, \
                     milburn-first-order, or adler"
                )))
            }
        },
        None => DecayModelKind::Global,
    };
    let n_decay_times = match k.get("n_decay_times") {
        Some(v) => positive("n_decay_times", as_f64("n_decay_times", v)?)?,
        None => 5.0,
    };
    let n_steps = match k.get("n_steps") {
        Some(v) => as_usize("n_steps", v)?,
        None => 8192,
    };
    if n_steps == 0 {
        return Err(err("key `n_steps`: must be >= 1"));
    }
    let sample_every = match k.get("sample_every") {
        Some(v) => as_usize("sample_every", v)?,
        None => 0,
    };
    Ok(TwoLevelParams {
        delta_e,
        tau,
        model,
        n_decay_times,
        n_steps,
        sample_every,
    })
}

fn parse_milburn_table(k: &mut Keyed, units: &UnitsContext) -> Result<MilburnTableParams> {
    let energies = match k.get("energies") {
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| err("key `energies`: expected an array of energy strings"))?
                .clone();
            arr.iter()
                .map(|item| {
                    let raw = as_str("energies", item)?;
                    positive(
                        "energies",
                        parse_quantity("energies", &raw, QuantityKind::Energy, units)?,
                    )
                })
                .collect::<Result<Vec<f64>>>()?
        }
        None => vec![units.ev, 1.0e9 * units.ev, 1.0],
    };
    if energies.is_empty() {
        return Err(err("key `energies`: must contain at least one energy"));
    }
    let tau = positive(
        "tau",
        quantity_key(k, "tau", QuantityKind::Time, units, Some("1 tau_pl"))?.unwrap(),
    )?;
    Ok(MilburnTableParams { energies, tau })
}

fn parse_mc_compare(k: &mut Keyed) -> Result<McCompareParams> {
    let noise = match k.get("noise") {
        Some(v) => match as_str("noise", v)?.as_str() {
            "gaussian-global" => NoiseKind::GaussianGlobal,
            "poisson-discrete" => NoiseKind::PoissonDiscrete,
            "fluctuating-planck" => NoiseKind::FluctuatingPlanck,
            "local-field" => NoiseKind::LocalField,
            other => {
                return Err(err(format!(
                    "key `noise`: unknown noise model \"{other}\"; expected gaussian-global, \
                     poisson-discrete, fluctuating-planck, or local-field"
                )))
            }
        },
        None => return Err(err("missing required key `noise`")),
    };
    let n_traj = match k.get("n_traj") {
        Some(v) => as_usize("n_traj", v)?,
        None => 10_000,
    };
    if n_traj < 2 {
        return Err(err("key `n_traj`: must be >= 2"));
    }
    let master_steps = match k.get("master_steps") {
        Some(v) => as_usize("master_steps", v)?,
        None => 8192,
    };
    if master_steps == 0 {
        return Err(err("key `master_steps`: must be >= 1"));
    }

    let local = noise == NoiseKind::LocalField;
    if local {
        k.reject("delta_e", "is not valid for noise=local-field")?;
        k.reject("tau", "is not valid for noise=local-field")?;
    } else {
        k.reject("preset", "is only valid for noise=local-field")?;
        k.reject("kernel_taus", "is only valid for noise=local-field")?;
    }

    let delta_e = match k.get("delta_e") {
        Some(v) => positive("delta_e", as_f64("delta_e", v)?)?,
        None => 1.0,
    };
    let tau = match k.get("tau") {
        Some(v) => nonneg("tau", as_f64("tau", v)?)?,
        None => match noise {
            NoiseKind::GaussianGlobal => 0.1,
            NoiseKind::PoissonDiscrete => 1.0,
            NoiseKind::FluctuatingPlanck => 0.04,
            NoiseKind::LocalField => 0.0,
        },
    };
    let preset = match k.get("preset") {
        Some(v) => match as_str("preset", v)?.as_str() {
            "noncommuting-pair" => LocalPreset::NoncommutingPair,
            "commuting-chain" => LocalPreset::CommutingChain,
            other => {
                return Err(err(format!(
                    "key `preset`: unknown preset \"{other}\"; expected noncommuting-pair or \
                     commuting-chain"
                )))
            }
        },
        None => LocalPreset::NoncommutingPair,
    };
    let kernel_taus = match k.get("kernel_taus") {
        Some(v) => {
            let taus = as_f64_array("kernel_taus", v)?;
            for t in &taus {
                nonneg("kernel_taus", *t)?;
            }
            taus
        }
        None => match preset {
            LocalPreset::NoncommutingPair => vec![0.3, 0.5],
            LocalPreset::CommutingChain => vec![0.3, 0.2, 0.4],
        },
    };
    let expected_cells = match preset {
        LocalPreset::NoncommutingPair => 2,
        LocalPreset::CommutingChain => 3,
    };
    if local && kernel_taus.len() != expected_cells {
        return Err(err(format!(
            "key `kernel_taus`: preset {} has {expected_cells} cells, got {} weights",
            preset.as_str(),
            kernel_taus.len()
        )));
    }
    let times = match k.get("times") {
        Some(v) => as_f64_array("times", v)?,
        None => match noise {
            NoiseKind::GaussianGlobal => vec![10.0, 20.0, 40.0],
            NoiseKind::PoissonDiscrete => vec![5.0, 10.0, 20.0],
            NoiseKind::FluctuatingPlanck => vec![25.0, 50.0, 100.0],
            NoiseKind::LocalField => vec![0.1, 0.2],
        },
    };
    if times.is_empty() {
        return Err(err("key `times`: must contain at least one time"));
    }
    let t_final = times.iter().cloned().fold(0.0f64, f64::max);
    for t in &times {
        if *t <= 0.0 {
            return Err(err(format!("key `times`: times must be > 0, got {t}")));
        }
        let steps = t / (t_final / master_steps as f64);
        if (steps - steps.round()).abs() > 1.0e-9 * steps.max(1.0) {
            return Err(err(format!(
                "key `times`: {t} does not land on the master grid (t_final = {t_final}, \
                 master_steps = {master_steps}); use times that divide the horizon evenly"
            )));
        }
    }
    Ok(McCompareParams {
        noise,
        n_traj,
        master_steps,
        delta_e,
        tau,
        times,
        preset,
        kernel_taus,
    })
}

fn parse_local_me(k: &mut Keyed, units: &UnitsContext) -> Result<LocalMeParams> {
    let dim = match k.get("dim") {
        Some(v) => as_usize("dim", v)?,
        None => 3,
    };
    if !(2..=8).contains(&dim) {
        return Err(err("key `dim`: must be between 2 and 8"));
    }
    let n_cells = match k.get("n_cells") {
        Some(v) => as_usize("n_cells", v)?,
        None => 3,
    };
    if !(1..=16).contains(&n_cells) {
        return Err(err("key `n_cells`: must be between 1 and 16"));
    }
    let part_energies = match k.get("part_energies") {
        Some(v) => as_nested_f64_array("part_energies", v)?,
        None => {
            if dim != 3 || n_cells != 3 {
                return Err(err(
                    "key `part_energies`: required when dim or n_cells differ from the default 3",
                ));
            }
            vec![
                vec![0.9, -0.3, 0.1],
                vec![-0.2, 0.6, -0.4],
                vec![0.1, 0.2, 0.5],
            ]
        }
    };
    if part_energies.len() != n_cells || part_energies.iter().any(|row| row.len() != dim) {
        return Err(err(format!(
            "key `part_energies`: expected {n_cells} rows of {dim} level energies"
        )));
    }
    let kernel = match k.get("kernel") {
        Some(v) => match as_str("kernel", v)?.as_str() {
            "diagonal" => LocalKernelKind::Diagonal,
            "global" => LocalKernelKind::Global,
            "newtonian-shape" => LocalKernelKind::NewtonianShape,
            other => {
                return Err(err(format!(
                    "key `kernel`: unknown kernel \"{other}\"; expected diagonal, global, or \
                     newtonian-shape"
                )))
            }
        },
        None => LocalKernelKind::Diagonal,
    };
    match kernel {
        LocalKernelKind::Diagonal => {
            k.reject("kernel_tau", "is only valid for kernel=global")?;
            for key in ["kernel_scale", "spacing", "sigma", "nx", "ny", "nz"] {
                k.reject(key, "is only valid for kernel=newtonian-shape")?;
            }
        }
        LocalKernelKind::Global => {
            k.reject("kernel_taus", "is only valid for kernel=diagonal")?;
            for key in ["kernel_scale", "spacing", "sigma", "nx", "ny", "nz"] {
                k.reject(key, "is only valid for kernel=newtonian-shape")?;
            }
        }
        LocalKernelKind::NewtonianShape => {
            k.reject("kernel_taus", "is only valid for kernel=diagonal")?;
            k.reject("kernel_tau", "is only valid for kernel=global")?;
        }
    }
    let kernel_taus = match k.get("kernel_taus") {
        Some(v) => {
            let taus = as_f64_array("kernel_taus", v)?;
            if taus.len() != n_cells {
                return Err(err(format!(
                    "key `kernel_taus`: expected {n_cells} weights, got {}",
                    taus.len()
                )));
            }
            for t in &taus {
                nonneg("kernel_taus", *t)?;
            }
            taus
        }
        None => {
            let base = [0.3, 0.2, 0.4, 0.25, 0.35, 0.15, 0.45, 0.2];
            (0..n_cells).map(|r| base[r % base.len()]).collect()
        }
    };
    let kernel_tau = match k.get("kernel_tau") {
        Some(v) => nonneg("kernel_tau", as_f64("kernel_tau", v)?)?,
        None => 0.25,
    };
    let kernel_scale = match k.get("kernel_scale") {
        Some(v) => positive("kernel_scale", as_f64("kernel_scale", v)?)?,
        None => 0.3,
    };
    let spacing = positive(
        "spacing",
        quantity_key(k, "spacing", QuantityKind::Length, units, Some("1e-7 m"))?.unwrap(),
    )?;
    let sigma = positive(
        "sigma",
        quantity_key(k, "sigma", QuantityKind::Length, units, Some("2e-7 m"))?.unwrap(),
    )?;
    let nx = match k.get("nx") {
        Some(v) => as_usize("nx", v)?,
        None => n_cells,
    };
    let ny = match k.get("ny") {
        Some(v) => as_usize("ny", v)?,
        None => 1,
    };
    let nz = match k.get("nz") {
        Some(v) => as_usize("nz", v)?,
        None => 1,
    };
    if kernel == LocalKernelKind::NewtonianShape && nx * ny * nz != n_cells {
        return Err(err(format!(
            "key `nx`: grid dims {nx}x{ny}x{nz} give {} cells but n_cells = {n_cells}",
            nx * ny * nz
        )));
    }
    let t_final = match k.get("t_final") {
        Some(v) => positive("t_final", as_f64("t_final", v)?)?,
        None => 40.0,
    };
    let n_steps = match k.get("n_steps") {
        Some(v) => as_usize("n_steps", v)?,
        None => 8000,
    };
    if n_steps == 0 {
        return Err(err("key `n_steps`: must be >= 1"));
    }
    let sample_every = match k.get("sample_every") {
        Some(v) => as_usize("sample_every", v)?,
        None => 0,
    };
    Ok(LocalMeParams {
        dim,
        n_cells,
        part_energies,
        kernel,
        kernel_taus,
        kernel_tau,
        kernel_scale,
        spacing,
        sigma,
        grid_dims: [nx, ny, nz],
        t_final,
        n_steps,
        sample_every,
    })
}

fn parse_dp_lumps(k: &mut Keyed, units: &UnitsContext) -> Result<DpLumpsParams> {
    let density = positive(
        "density",
        quantity_key(k, "density", QuantityKind::Density, units, Some("1 g/cm3"))?.unwrap(),
    )?;
    let radius = positive(
        "radius",
        quantity_key(k, "radius", QuantityKind::Length, units, Some("8e-7 m"))?.unwrap(),
    )?;
    let radius2 = match quantity_key(k, "radius2", QuantityKind::Length, units, None)? {
        Some(r) => positive("radius2", r)?,
        None => radius,
    };
    let separation = nonneg(
        "separation",
        quantity_key(k, "separation", QuantityKind::Length, units, Some("4e-6 m"))?.unwrap(),
    )?;
    let sigma = positive(
        "sigma",
        quantity_key(k, "sigma", QuantityKind::Length, units, Some("2e-7 m"))?.unwrap(),
    )?;
    let spacing = positive(
        "spacing",
        quantity_key(k, "spacing", QuantityKind::Length, units, Some("1e-7 m"))?.unwrap(),
    )?;
    Ok(DpLumpsParams {
        density,
        radius,
        radius2,
        separation,
        sigma,
        spacing,
    })
}

fn parse_critical_radius(k: &mut Keyed, units: &UnitsContext) -> Result<CriticalRadiusParams> {
    let density = positive(
        "density",
        quantity_key(k, "density", QuantityKind::Density, units, Some("1 g/cm3"))?.unwrap(),
    )?;
    Ok(CriticalRadiusParams { density })
}

fn parse_trace_demo(k: &mut Keyed) -> Result<TraceDemoParams> {
    let n = match k.get("n") {
        Some(v) => as_usize("n", v)?,
        None => 4,
    };
    let r_cells = match k.get("r_cells") {
        Some(v) => as_usize("r_cells", v)?,
        None => 4,
    };
    let n_steps = match k.get("n_steps") {
        Some(v) => as_usize("n_steps", v)?,
        None => 20_000,
    };
    if n_steps == 0 {
        return Err(err("key `n_steps`: must be >= 1"));
    }
    let dt = match k.get("dt") {
        Some(v) => positive("dt", as_f64("dt", v)?)?,
        None => 5.0e-4,
    };
    let scale = match k.get("scale") {
        Some(v) => positive("scale", as_f64("scale", v)?)?,
        None => 0.3,
    };
    let omega2 = match k.get("omega2") {
        Some(v) => nonneg("omega2", as_f64("omega2", v)?)?,
        None => 1.0,
    };
    let lambda = match k.get("lambda") {
        Some(v) => nonneg("lambda", as_f64("lambda", v)?)?,
        None => 0.05,
    };
    let kappa = match k.get("kappa") {
        Some(v) => as_f64("kappa", v)?,
        None => 0.1,
    };
    let sample_every = match k.get("sample_every") {
        Some(v) => as_usize("sample_every", v)?,
        None => 0,
    };
    let negative_control = match k.get("negative_control") {
        Some(v) => as_bool("negative_control", v)?,
        None => false,
    };
    Ok(TraceDemoParams {
        n,
        r_cells,
        n_steps,
        dt,
        scale,
        omega2,
        lambda,
        kappa,
        sample_every,
        negative_control,
    })
}
