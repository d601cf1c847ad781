//! Command-line front end. Every subcommand loads its inputs, calls into
//! the library and writes a report; no physics lives here.
//!
//! Settings are resolved as flags > `--config` JSON file > defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{frequency_plan, sideband_scan, DriveSpec, PlanRequest, ScanOptions};
use crate::error::{Error, Result};
use crate::lagrangian::{reduce_circuit, standard_block_transform, transform_invariance};
use crate::netlist::{builtin_circuit, parse_netlist, validate_circuit, Builtin, Circuit};
use crate::quantize::{default_truncation, derived_parameters, fock_hamiltonian, legendre_transform, DerivedParameters};
use crate::report::{export_report, Format, Report};
use crate::spectra::{classify_circuit_coupling, eigensystem, CircuitClassification, SpectrumReport, SpinBosonModel};

/// Largest Fock dimension the `spectrum` subcommand will diagonalize densely.
pub const MAX_SPECTRUM_DIM: usize = 20_000;

#[derive(Debug, Parser)]
#[command(name = "fluxlattice", version, about = "Quantize and simulate longitudinally coupled qubit circuits")]
pub struct Cli {
    /// JSON file with default settings (flags override it).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a circuit and list violations.
    Validate(CommonArgs),
    /// Dump the node, block and reduced Lagrangians.
    Reduce(CommonArgs),
    /// Closed-form circuit parameters.
    Params(CommonArgs),
    /// Lowest levels of the truncated Hamiltonian.
    Spectrum(SpectrumArgs),
    /// Longitudinal/transverse amplitudes of a qubit-resonator coupling.
    Classify(ClassifyArgs),
    /// Sideband scan of a spin-boson model (configured by JSON).
    Scan(CommonArgs),
    /// Coupler frequency plan (configured by JSON or flags).
    Plan(PlanArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct CommonArgs {
    /// Netlist JSON file.
    #[arg(long, conflicts_with = "builtin")]
    pub netlist: Option<PathBuf>,
    /// Builtin circuit name.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Builtin parameter override, `KEY=VALUE` (repeatable).
    #[arg(long = "param", value_parser = parse_key_value)]
    pub params: Vec<(String, f64)>,
    /// Coupling-junction asymmetry d.
    #[arg(long)]
    pub asymmetry: Option<f64>,
    /// Per-mode truncation, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub truncation: Option<Vec<usize>>,
    /// Output file (standard output when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Format>,
    /// Seed for randomized consistency checks.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Linearize the coupling junctions in the resonator variables.
    #[arg(long)]
    pub linearize: bool,
}

#[derive(Debug, Args, Clone)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub qubit: Option<String>,
    #[arg(long)]
    pub resonator: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct PlanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of connections (all with the same bare frequency).
    #[arg(long)]
    pub connections: Option<usize>,
    /// Bare resonator frequency.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub g_min: Option<f64>,
    #[arg(long)]
    pub g_max: Option<f64>,
    #[arg(long)]
    pub guard: Option<f64>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Frequency grid of a scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl FrequencyRange {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(Error::InvalidArgument("scan range needs step > 0 and stop >= start".into()));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|k| self.start + k as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub model: SpinBosonModel,
    pub resonator_dims: Vec<usize>,
    pub drive: DriveSpec,
    pub frequencies: FrequencyRange,
    #[serde(default)]
    pub samples: Option<usize>,
}

/// Everything a run can be configured with; all fields optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub netlist: Option<PathBuf>,
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub asymmetry: Option<f64>,
    pub truncation: Option<Vec<usize>>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub linearize: Option<bool>,
    pub qubit: Option<String>,
    pub resonator: Option<String>,
    pub scan: Option<ScanConfig>,
    pub plan: Option<PlanRequest>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    /// Overlay command-line flags.
    fn merge(mut self, a: &CommonArgs) -> Self {
        if a.netlist.is_some() {
            self.netlist = a.netlist.clone();
            self.builtin = None;
        }
        if a.builtin.is_some() {
            self.builtin = a.builtin.clone();
            self.netlist = None;
        }
        for (k, v) in &a.params {
            self.params.insert(k.clone(), *v);
        }
        if a.asymmetry.is_some() {
            self.asymmetry = a.asymmetry;
        }
        if a.truncation.is_some() {
            self.truncation = a.truncation.clone();
        }
        if a.output.is_some() {
            self.output = a.output.clone();
        }
        if a.format.is_some() {
            self.format = a.format;
        }
        if a.seed.is_some() {
            self.seed = a.seed;
        }
        self
    }

    fn circuit(&self) -> Result<Circuit> {
        match (&self.netlist, &self.builtin) {
            (Some(p), None) => {
                let mut c = parse_netlist(&std::fs::read_to_string(p)?)?;
                if !self.params.is_empty() || self.asymmetry.is_some() {
                    let t = c.topology.as_ref().ok_or_else(|| {
                        Error::InvalidArgument("parameter overrides need a builtin circuit".into())
                    })?;
                    let mut params = t.params.clone();
                    params.extend(self.params.clone());
                    if let Some(d) = self.asymmetry {
                        params.insert("asymmetry".into(), d);
                    }
                    c = builtin_circuit(t.builtin, &params)?;
                }
                Ok(c)
            }
            (None, Some(name)) => {
                let mut params = self.params.clone();
                if let Some(d) = self.asymmetry {
                    params.insert("asymmetry".into(), d);
                }
                builtin_circuit(name.parse::<Builtin>()?, &params)
            }
            (None, None) => Err(Error::InvalidArgument("give exactly one of --netlist or --builtin".into())),
            (Some(_), Some(_)) => Err(Error::InvalidArgument("--netlist and --builtin are exclusive".into())),
        }
    }

    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn write<T: Report + ?Sized>(&self, data: &T, default: Format) -> Result<()> {
        export_report(data, self.format(default), self.output.as_deref())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Report payloads

#[derive(Debug, Serialize)]
pub struct ValidationOutput {
    pub circuit: String,
    pub valid: bool,
    pub violations: Vec<String>,
}

impl Report for ValidationOutput {}

#[derive(Debug, Serialize)]
pub struct ReductionOutput {
    pub node_model: serde_json::Value,
    pub block_model: serde_json::Value,
    pub reduced_model: serde_json::Value,
    pub eliminated: Vec<String>,
    pub cross_term: Option<f64>,
    pub invariance_samples: usize,
    pub invariance_error: Option<f64>,
}

impl Report for ReductionOutput {}

#[derive(Debug, Serialize)]
pub struct ParamsOutput {
    pub topology: String,
    pub parameters: BTreeMap<String, f64>,
    pub details: DerivedParameters,
}

impl Report for ParamsOutput {}

impl Report for SpectrumReport {
    fn csv(&self) -> Option<String> {
        Some(self.to_csv())
    }
}

impl Report for CircuitClassification {}



// ---------------------------------------------------------------------------

/// Run the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() || matches!(e, Error::Io(_)) {
        1
    } else {
        2
    }
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn hamiltonian_for(cfg: &RunConfig) -> Result<(Circuit, crate::quantize::HamiltonianModel)> {
    let c = cfg.circuit()?;
    let red = reduce_circuit(&c)?;
    let h = legendre_transform(&red.reduced)?;
    Ok((c, h))
}

fn dispatch(cli: Cli) -> Result<()> {
    let base = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::Validate(a) => {
            let cfg = base.merge(&a);
            let c = cfg.circuit()?;
            let report = validate_circuit(&c);
            let out = ValidationOutput {
                circuit: c.name.clone(),
                valid: report.is_valid(),
                violations: report.messages(),
            };
            cfg.write(&out, Format::Json)?;
            if !out.valid {
                for v in &out.violations {
                    eprintln!("{v}");
                }
                return Err(Error::InvalidCircuit(out.violations.join("; ")));
            }
            Ok(())
        }
        Command::Reduce(a) => {
            let cfg = base.merge(&a);
            let c = cfg.circuit()?;
            let red = reduce_circuit(&c)?;
            let samples = 64;
            // node -> block change of variables must leave L unchanged
            let invariance_error = if c.topology.is_some() {
                let t = standard_block_transform(&c)?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
                Some(transform_invariance(&red.node_model, &red.block_model, &t, samples, &mut rng))
            } else {
                None
            };
            let out = ReductionOutput {
                node_model: red.node_model.to_json(),
                block_model: red.block_model.to_json(),
                reduced_model: red.reduced.to_json(),
                eliminated: red
                    .elimination
                    .as_ref()
                    .map(|e| e.transform.labels.iter().filter(|l| l.ends_with("_star")).cloned().collect())
                    .unwrap_or_default(),
                cross_term: red.elimination.as_ref().map(|e| e.cross_term),
                invariance_samples: samples,
                invariance_error,
            };
            cfg.write(&out, Format::Json)
        }
        Command::Params(a) => {
            let cfg = base.merge(&a);
            let (c, h) = hamiltonian_for(&cfg)?;
            let d = derived_parameters(&h, &c)?;
            let out = ParamsOutput {
                topology: d.topology.to_string(),
                parameters: d.flat_report(),
                details: d,
            };
            cfg.write(&out, Format::Json)
        }
        Command::Spectrum(a) => {
            let mut cfg = base.merge(&a.common);
            if a.levels.is_some() {
                cfg.levels = a.levels;
            }
            if a.linearize {
                cfg.linearize = Some(true);
            }
            let (_, h) = hamiltonian_for(&cfg)?;
            let dims = cfg.truncation.clone().unwrap_or_else(|| default_truncation(&h));
            let total: usize = dims.iter().product();
            if total > MAX_SPECTRUM_DIM {
                return Err(Error::InvalidArgument(format!(
                    "Fock dimension {total} exceeds {MAX_SPECTRUM_DIM}; pass a smaller --truncation"
                )));
            }
            let f = fock_hamiltonian(&h, &dims, cfg.linearize.unwrap_or(false))?;
            let mut s = eigensystem(&f.operator, cfg.levels.unwrap_or(10))?;
            s.vectors = None;
            cfg.write(&s, Format::Csv)
        }
        Command::Classify(a) => {
            let mut cfg = base.merge(&a.common);
            if a.qubit.is_some() {
                cfg.qubit = a.qubit.clone();
            }
            if a.resonator.is_some() {
                cfg.resonator = a.resonator.clone();
            }
            let (_, h) = hamiltonian_for(&cfg)?;
            let kinds = h.mode_kinds();
            let pick = |want: crate::quantize::ModeKind| {
                h.labels
                    .iter()
                    .zip(&kinds)
                    .find(|(_, k)| **k == want)
                    .map(|(l, _)| l.clone())
            };
            let q = cfg
                .qubit
                .clone()
                .or_else(|| pick(crate::quantize::ModeKind::Qubit))
                .ok_or_else(|| Error::InvalidArgument("no qubit variable".into()))?;
            let r = cfg
                .resonator
                .clone()
                .or_else(|| pick(crate::quantize::ModeKind::Resonator))
                .ok_or_else(|| Error::InvalidArgument("no resonator variable".into()))?;
            let c = classify_circuit_coupling(&h, &q, &r, 60)?;
            cfg.write(&c, Format::Json)
        }
        Command::Scan(a) => {
            let cfg = base.merge(&a);
            let sc = cfg
                .scan
                .clone()
                .ok_or_else(|| Error::InvalidArgument("scan needs a `scan` section in --config".into()))?;
            let opts = ScanOptions {
                samples: sc.samples.unwrap_or(ScanOptions::default().samples),
                ..Default::default()
            };
            let r = sideband_scan(&sc.model, &sc.resonator_dims, &sc.drive, &sc.frequencies.points()?, opts)?;
            cfg.write(&r, Format::Csv)
        }
        Command::Plan(a) => {
            let cfg = base.merge(&a.common);
            let mut req = cfg.plan.clone().unwrap_or(PlanRequest {
                omegas: vec![(1.0, 1.0); 4],
                g_c_min: 0.02,
                g_c_max: 0.3,
                guard_band: 0.01,
                grid_points: 281,
            });
            if let Some(n) = a.connections {
                let w = a.omega.unwrap_or(req.omegas[0].0);
                req.omegas = vec![(w, w); n];
            } else if let Some(w) = a.omega {
                req.omegas = vec![(w, w); req.omegas.len()];
            }
            if let Some(g) = a.g_min {
                req.g_c_min = g;
            }
            if let Some(g) = a.g_max {
                req.g_c_max = g;
            }
            if let Some(g) = a.guard {
                req.guard_band = g;
            }
            let plan = frequency_plan(&req)?;
            plan.verify()?;
            cfg.write(&plan, Format::Json)
        }
    }
}
