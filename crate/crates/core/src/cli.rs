//! Command-line front end: configuration ingestion, dispatch to the
//! library and CSV/JSON emission.
//!
//! Every command reads a flat key/value configuration. Values come from the
//! built-in defaults, then the command's `[section]` of an optional config
//! file, then command-line flags. Unknown keys and sections are rejected.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgMatches, Command};
use serde::Serialize;
use serde_json::{json, Value};

use crate::dynamics::{
    adiabatic_prepare, measure_sample, ms_csv_rows, ms_simulate_with, MsParams, RampSchedule, RampShape, StepControl, MS_CSV_HEADER,
};
use crate::eigensolver::{dense_spectrum, gap_row, ground_doublet, sector_scan, LanczosOptions, Model, ScanOptions, DEGENERACY_REL_TOL};
use crate::error::{Error, Result};
use crate::hamiltonians::{Boundary, CouplingParams};
use crate::noise::{doublet_splitting, lifetime_csv_rows, lifetime_table, reference_configs, LIFETIME_CSV_HEADER, SPLITTING_CSV_HEADER};
use crate::pauli::{apply_pauli_string, Lattice, Pauli, StateVector};
use crate::phonons::{array_spacing_sweep, chain_csv_rows, chain_gap_scaling, chain_modes, Ion, CHAIN_CSV_HEADER};
use crate::symmetries::{verify_algebra_with, SymmetrySet, ALGEBRA_TOLERANCE};

pub const THREADS_ENV: &str = "TOPOGUARD_THREADS";

#[derive(Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub flag: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [KeySpec],
    pub default_format: &'static str,
}

macro_rules! key {
    ($name:literal, $flag:literal, $default:literal, $help:literal) => {
        KeySpec { name: $name, flag: $flag, default: $default, help: $help }
    };
}

const COUPLING_KEYS: [KeySpec; 2] = [
    key!("jx", "jx", "1", "row coupling Jx"),
    key!("jy", "jy", "1", "column coupling Jy"),
];

const COMMON_KEYS: [KeySpec; 2] = [
    key!("output", "output", "-", "output path, - for stdout"),
    key!("format", "format", "", "csv or json"),
];

pub const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "gap-table",
        about: "Ground energy, degeneracy and gap for a list of lattice sizes",
        default_format: "csv",
        keys: &[
            key!("sizes", "sizes", "2,3,4", "lattice sizes N, comma list or a-b range"),
            key!("model", "model", "lri", "lri or sri"),
            COUPLING_KEYS[0],
            COUPLING_KEYS[1],
            key!("boundary", "boundary", "open", "sri boundary: open or periodic"),
            key!("normalization", "normalization", "both", "sri prefactor: a number or both (1 and 2)"),
            key!("tol", "tol", "1e-10", "Lanczos relative residual target"),
            key!("seed", "seed", "0", "Lanczos start-vector seed"),
        ],
    },
    CommandSpec {
        name: "spectrum",
        about: "Lowest levels of one lattice model",
        default_format: "csv",
        keys: &[
            key!("n", "n", "2", "lattice size N"),
            key!("model", "model", "lri", "lri or sri"),
            COUPLING_KEYS[0],
            COUPLING_KEYS[1],
            key!("boundary", "boundary", "open", "sri boundary: open or periodic"),
            key!("normalization", "normalization", "1", "sri prefactor"),
            key!("levels", "levels", "16", "number of levels to emit (full-space dense solve for N <= 3)"),
            key!("tol", "tol", "1e-10", "Lanczos relative residual target"),
            key!("seed", "seed", "0", "Lanczos start-vector seed"),
        ],
    },
    CommandSpec {
        name: "algebra-check",
        about: "Residuals of the P/Q symmetry algebra and its commutation with the Hamiltonian",
        default_format: "json",
        keys: &[
            key!("n", "n", "2", "lattice size N"),
            COUPLING_KEYS[0],
            COUPLING_KEYS[1],
            key!("seed", "seed", "0", "seed of the random test vectors used for N >= 4"),
        ],
    },
    CommandSpec {
        name: "noise-sweep",
        about: "Monte Carlo doublet splitting under random local fields",
        default_format: "csv",
        keys: &[
            key!("n", "n", "3", "lattice size N (2..4)"),
            COUPLING_KEYS[0],
            COUPLING_KEYS[1],
            key!("b_max", "b-max", "0.1", "field amplitudes in units of J, comma list"),
            key!("trials", "trials", "50", "trials per amplitude"),
            key!("seed", "seed", "1", "master seed"),
        ],
    },
    CommandSpec {
        name: "lifetime-table",
        about: "Protected decoherence rates and lifetimes for the reference arrays",
        default_format: "csv",
        keys: &[
            key!("alpha_n", "alpha-n", "1", "prefactor alpha_N"),
            key!("gamma0", "gamma0", "1", "bare rate Gamma_0 in Hz"),
            key!("b_max", "b-max", "500", "noise amplitude in Hz"),
        ],
    },
    CommandSpec {
        name: "phonons-chain",
        about: "Axial chain modes and the fixed-spacing gap scaling",
        default_format: "csv",
        keys: &[
            key!("sizes", "sizes", "4-16", "ion counts for the scaling fit"),
            key!("a_min", "a-min", "2e-6", "minimum ion spacing in m"),
        ],
    },
    CommandSpec {
        name: "phonons-array",
        about: "In-plane mode gap of a square ion array against lattice spacing",
        default_format: "csv",
        keys: &[
            key!("n", "n", "5", "array side"),
            key!("nu", "nu", "1e7", "trap frequency in Hz"),
            key!("spacing_min", "spacing-min", "1e-6", "smallest spacing in m"),
            key!("spacing_max", "spacing-max", "1e-4", "largest spacing in m"),
            key!("points", "points", "201", "logarithmic grid points"),
            key!("target", "target", "0.1", "gap/nu to locate"),
        ],
    },
    CommandSpec {
        name: "ms-verify",
        about: "Spin-phonon simulation of the two-tone gate against its effective model",
        default_format: "csv",
        keys: &[
            key!("n_ions", "n-ions", "2", "number of ions (2 or 3)"),
            key!("eta", "eta", "0.1", "Lamb-Dicke parameter"),
            key!("omega", "omega", "1e3", "Rabi frequency"),
            key!("delta", "delta", "1e3", "detuning"),
            key!("nu", "nu", "1e5", "mode frequency"),
            key!("k", "k", "1", "phonon loops K"),
            key!("n_max", "n-max", "15", "initial Fock cutoff"),
            key!("phase", "phase", "0", "laser phase"),
            key!("samples", "samples", "64", "trajectory samples"),
            key!("tol", "tol", "1e-10", "local error per step"),
        ],
    },
    CommandSpec {
        name: "prepare",
        about: "Adiabatic preparation of the ground doublet",
        default_format: "csv",
        keys: &[
            key!("n", "n", "2", "lattice size N (2 or 3)"),
            COUPLING_KEYS[0],
            COUPLING_KEYS[1],
            key!("t_gap", "t-gap", "50", "ramp time in units of 1/gap"),
            key!("shape", "shape", "cosine", "linear or cosine"),
            key!("strength", "strength", "10", "initial field in units of J"),
            key!("sign", "sign", "1", "+1 or -1"),
        ],
    },
    CommandSpec {
        name: "measure",
        about: "Projective readout samples of a lattice state",
        default_format: "csv",
        keys: &[
            key!("n", "n", "2", "lattice size N (2 or 3)"),
            COUPLING_KEYS[0],
            COUPLING_KEYS[1],
            key!("state", "state", "prepared", "plus, minus, doublet0, doublet1 or prepared"),
            key!("basis", "basis", "x", "x, y or z"),
            key!("shots", "shots", "1000", "number of samples"),
            key!("seed", "seed", "1", "sampling seed"),
            key!("t_gap", "t-gap", "50", "ramp time in units of 1/gap (prepared state)"),
            key!("shape", "shape", "cosine", "linear or cosine (prepared state)"),
            key!("strength", "strength", "10", "initial field in units of J (prepared state)"),
            key!("sign", "sign", "1", "+1 or -1 (prepared state)"),
        ],
    },
];

fn command_spec(name: &str) -> Result<&'static CommandSpec> {
    COMMANDS.iter().find(|c| c.name == name).ok_or_else(|| Error::Config(format!("unknown command `{name}`")))
}

fn all_keys(spec: &CommandSpec) -> impl Iterator<Item = &KeySpec> {
    spec.keys.iter().chain(COMMON_KEYS.iter())
}

/// Parses `key = value` lines grouped under `[command]` headers. `#` and
/// `;` start comments.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, Vec<(String, String)>>> {
    let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| at(format!("malformed section header `{line}`")))?.trim();
            command_spec(name).map_err(|_| at(format!("unknown section `{name}`")))?;
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got `{line}`")))?;
        let section = current.as_ref().ok_or_else(|| at("key outside of a [command] section".into()))?;
        let spec = command_spec(section)?;
        let key = k.trim().replace('-', "_");
        if !all_keys(spec).any(|s| s.name == key) {
            return Err(at(format!("unknown key `{key}` for [{section}]")));
        }
        sections.get_mut(section).expect("section registered").push((key, v.trim().to_string()));
    }
    Ok(sections)
}

/// Effective key/value configuration of one command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults of `command`.
    pub fn new(command: &str) -> Result<Self> {
        let spec = command_spec(command)?;
        let mut values: BTreeMap<String, String> = all_keys(spec).map(|k| (k.name.to_string(), k.default.to_string())).collect();
        values.insert("format".into(), spec.default_format.into());
        Ok(Self { command: command.to_string(), values })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        match self.values.get_mut(&key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}` for {}", self.command))),
        }
    }

    /// Applies this command's section of a config file (other sections are
    /// still validated).
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        let sections = parse_config_text(text)?;
        if let Some(entries) = sections.get(&self.command) {
            for (k, v) in entries {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key `{key}` not in schema of {}", self.command))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::Config(format!("{key} = `{v}` is not a valid {}", std::any::type_name::<T>())))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn i32(&self, key: &str) -> Result<i32> {
        self.parse(key)
    }

    /// Comma-separated integers; `a-b` expands to an inclusive range.
    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let bad = || Error::Config(format!("{key} = `{}` is not a list of sizes", self.get(key)));
        let mut out = Vec::new();
        for part in self.get(key).split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                    if a > b {
                        return Err(bad());
                    }
                    out.extend(a..=b);
                }
                None => out.push(part.parse().map_err(|_| bad())?),
            }
        }
        if out.is_empty() {
            return Err(bad());
        }
        Ok(out)
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.get(key);
        let out: std::result::Result<Vec<f64>, _> = v.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match out {
            Ok(list) if !list.is_empty() => Ok(list),
            _ => Err(Error::Config(format!("{key} = `{v}` is not a list of numbers"))),
        }
    }

    fn couplings(&self) -> Result<CouplingParams> {
        CouplingParams::new(self.f64("jx")?, self.f64("jy")?)
    }

    fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.usize("n")?)
    }

    fn boundary(&self) -> Result<Boundary> {
        match self.get("boundary") {
            "open" => Ok(Boundary::Open),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Config(format!("boundary = `{other}` (expected open or periodic)"))),
        }
    }

    fn shape(&self) -> Result<RampShape> {
        match self.get("shape") {
            "linear" => Ok(RampShape::Linear),
            "cosine" => Ok(RampShape::Cosine),
            other => Err(Error::Config(format!("shape = `{other}` (expected linear or cosine)"))),
        }
    }

    fn format(&self) -> Result<Format> {
        match self.get("format") {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("format = `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Result of one command: a CSV table, a JSON report, and an optional
/// failure that is reported after the artifacts are written.
#[derive(Debug)]
pub struct Output {
    pub columns: &'static str,
    pub rows: Vec<String>,
    /// Extra deterministic `# key=value` lines for the CSV header.
    pub notes: Vec<(String, String)>,
    pub report: Value,
    pub failure: Option<Error>,
}

impl Output {
    fn new(columns: &'static str, rows: Vec<String>, report: Value) -> Self {
        Self { columns, rows, notes: Vec::new(), report, failure: None }
    }
}

fn sci(x: f64) -> String {
    format!("{x:.8e}")
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

/// Runs one configured command.
pub fn execute(cfg: &RunConfig) -> Result<Output> {
    cfg.format()?;
    match cfg.command.as_str() {
        "gap-table" => gap_table(cfg),
        "spectrum" => spectrum(cfg),
        "algebra-check" => algebra_check(cfg),
        "noise-sweep" => noise_sweep(cfg),
        "lifetime-table" => lifetime(cfg),
        "phonons-chain" => phonons_chain(cfg),
        "phonons-array" => phonons_array(cfg),
        "ms-verify" => ms_verify(cfg),
        "prepare" => prepare(cfg),
        "measure" => measure(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn scan_options(cfg: &RunConfig) -> Result<ScanOptions> {
    let lanczos = LanczosOptions { tol: cfg.f64("tol")?, seed: cfg.u64("seed")?, ..LanczosOptions::default() };
    Ok(ScanOptions { lanczos, ..ScanOptions::default() })
}

const LRI_REFERENCE: [f64; 4] = [0.84, 0.96, 0.92, 0.80];
const SRI_REFERENCE: [f64; 4] = [0.84, 0.58, 0.32, 0.20];
const REFERENCE_TOL: f64 = 0.02;

fn reference_gap(model: &str, n: usize) -> Option<f64> {
    let table = if model == "lri" { &LRI_REFERENCE } else { &SRI_REFERENCE };
    (2..=5).contains(&n).then(|| table[n - 2])
}

fn gap_table(cfg: &RunConfig) -> Result<Output> {
    let sizes = cfg.usize_list("sizes")?;
    let params = cfg.couplings()?;
    let opts = scan_options(cfg)?;
    let model_name = cfg.get("model");
    let models: Vec<(String, Model)> = match model_name {
        "lri" => vec![("na".into(), Model::Lri)],
        "sri" => {
            let boundary = cfg.boundary()?;
            let norms = match cfg.get("normalization") {
                "both" => vec![1.0, 2.0],
                _ => vec![cfg.f64("normalization")?],
            };
            norms.into_iter().map(|s| (format!("{s}"), Model::Sri { boundary, normalization: s })).collect()
        }
        other => return Err(Error::Config(format!("model = `{other}` (expected lri or sri)"))),
    };
    let mut rows = Vec::new();
    let mut report_rows = Vec::new();
    let mut matching = Vec::new();
    let mut monotone = true;
    for (label, model) in &models {
        let mut all_match = true;
        let mut previous = f64::INFINITY;
        for &n in &sizes {
            let row = gap_row(Lattice::new(n)?, params, *model, &opts)?;
            // LRI rows compare in pair-coupling units, SRI rows in units of Jx
            let table_value = if matches!(model, Model::Lri) { row.gap_pair_units } else { row.gap };
            let reference = reference_gap(model_name, n);
            let ok = reference.map(|r| (table_value - r).abs() <= REFERENCE_TOL);
            all_match &= ok.unwrap_or(true);
            monotone &= table_value < previous;
            previous = table_value;
            rows.push(format!(
                "{model_name},{label},{n},{},{},{},{},{},{},{}",
                sci(row.e0),
                row.ground_degeneracy,
                sci(row.gap),
                sci(row.gap_pair_units),
                sci(table_value),
                reference.map_or("nan".into(), sci),
                ok.map_or("na", |b| if b { "true" } else { "false" }),
            ));
            report_rows.push(json!({
                "model": model_name, "normalization": label, "row": to_value(&row),
                "table_value": table_value, "reference": reference, "match": ok,
            }));
        }
        if all_match {
            matching.push(label.clone());
        }
    }
    let matching_convention = if matching.is_empty() { "none".to_string() } else { matching.join("|") };
    let mut out = Output::new(
        "model,normalization,n,E0,degeneracy,gap_Jx,gap_pair_units,table_value,reference,match",
        rows,
        json!({ "rows": report_rows, "matching_convention": matching_convention, "monotone_decreasing": monotone }),
    );
    out.notes.push(("matching_convention".into(), matching_convention));
    out.notes.push(("monotone_decreasing".into(), monotone.to_string()));
    Ok(out)
}

fn spectrum(cfg: &RunConfig) -> Result<Output> {
    let lattice = cfg.lattice()?;
    let params = cfg.couplings()?;
    let model = match cfg.get("model") {
        "lri" => Model::Lri,
        "sri" => Model::Sri { boundary: cfg.boundary()?, normalization: cfg.f64("normalization")? },
        other => return Err(Error::Config(format!("model = `{other}` (expected lri or sri)"))),
    };
    let levels = cfg.usize("levels")?;
    let h = model.build(lattice, params)?;
    let (method, mut spec) = if lattice.n() <= 3 {
        ("dense", dense_spectrum(&h)?)
    } else {
        let opts = ScanOptions { deg_tol: Some(DEGENERACY_REL_TOL * params.max()), ..scan_options(cfg)? };
        ("sector-lanczos", sector_scan(&h, &opts)?.spectrum)
    };
    if method == "dense" {
        let tol = DEGENERACY_REL_TOL * params.max();
        let e0 = spec.eigenvalues[0];
        spec.ground_degeneracy = spec.eigenvalues.iter().take_while(|&&e| e - e0 <= tol).count();
        spec.gap = spec.eigenvalues.get(spec.ground_degeneracy).map_or(f64::NAN, |e| e - e0);
    }
    let rows: Vec<String> = spec.eigenvalues.iter().take(levels).enumerate().map(|(i, e)| format!("{i},{}", sci(*e))).collect();
    let report = json!({
        "method": method, "n": lattice.n(), "ground_energy": spec.ground_energy(),
        "ground_degeneracy": spec.ground_degeneracy, "gap": spec.gap,
        "eigenvalues": spec.eigenvalues.iter().take(levels).collect::<Vec<_>>(),
        "sector_labels": spec.sector_labels.as_ref().map(|l| l.iter().take(levels).map(|p| p.to_string()).collect::<Vec<_>>()),
    });
    Ok(Output::new("index,energy", rows, report))
}

fn algebra_check(cfg: &RunConfig) -> Result<Output> {
    let lattice = cfg.lattice()?;
    let h = Model::Lri.build(lattice, cfg.couplings()?)?;
    let report = verify_algebra_with(lattice, &h, cfg.u64("seed")?)?;
    let rows = report.checks.iter().map(|c| format!("{},{}", c.relation, sci(c.residual))).collect();
    let pass = report.max_residual < ALGEBRA_TOLERANCE;
    let mut value = to_value(&report);
    value["tolerance"] = json!(ALGEBRA_TOLERANCE);
    value["pass"] = json!(pass);
    let mut out = Output::new("relation,residual", rows, value);
    if !pass {
        let worst = report.checks.iter().max_by(|a, b| a.residual.total_cmp(&b.residual)).expect("checks present");
        out.failure = Some(Error::AlgebraViolation { check: worst.relation.clone(), residual: worst.residual });
    }
    Ok(out)
}

fn noise_sweep(cfg: &RunConfig) -> Result<Output> {
    let lattice = cfg.lattice()?;
    let params = cfg.couplings()?;
    let trials = cfg.usize("trials")?;
    let seed = cfg.u64("seed")?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for b in cfg.f64_list("b_max")? {
        let stats = doublet_splitting(lattice, params, b, trials, seed)?;
        rows.extend(stats.csv_rows());
        summaries.push(json!({
            "b_max": b, "trials": stats.trials, "median": stats.median, "mean": stats.mean,
            "min": stats.min, "max": stats.max,
        }));
    }
    Ok(Output::new(SPLITTING_CSV_HEADER, rows, json!({ "n": lattice.n(), "seed": seed, "sweeps": summaries })))
}

fn lifetime(cfg: &RunConfig) -> Result<Output> {
    let configs = reference_configs(cfg.f64("alpha_n")?, cfg.f64("gamma0")?, cfg.f64("b_max")?);
    let rows = lifetime_table(&configs)?;
    Ok(Output::new(LIFETIME_CSV_HEADER, lifetime_csv_rows(&rows), json!({ "rows": to_value(&rows) })))
}

fn phonons_chain(cfg: &RunConfig) -> Result<Output> {
    let sizes = cfg.usize_list("sizes")?;
    let ion = Ion::calcium40();
    let scaling = chain_gap_scaling(&sizes, cfg.f64("a_min")?, ion)?;
    let modes = sizes
        .iter()
        .map(|&n| chain_modes(n).map(|m| json!({ "n": n, "lowest": [m.mode_frequencies[0], m.mode_frequencies[1]] })))
        .collect::<Result<Vec<_>>>()?;
    let report = json!({
        "alpha_linear_size": scaling.alpha_linear_size,
        "alpha_ion_count": scaling.alpha_ion_count,
        "rows": to_value(&scaling.rows),
        "lowest_modes_over_nu": modes,
    });
    Ok(Output::new(CHAIN_CSV_HEADER, chain_csv_rows(&scaling), report))
}

fn phonons_array(cfg: &RunConfig) -> Result<Output> {
    let nu = cfg.f64("nu")?;
    let sweep = array_spacing_sweep(
        cfg.usize("n")?,
        nu,
        Ion::calcium40(),
        (cfg.f64("spacing_min")?, cfg.f64("spacing_max")?),
        cfg.usize("points")?,
        cfg.f64("target")?,
    )?;
    let rows = sweep
        .spacings
        .iter()
        .zip(&sweep.relative_gaps)
        .map(|(a, g)| format!("{},{}", sci(*a), if g.is_finite() { sci(*g) } else { "nan".into() }))
        .collect();
    let in_band: Vec<f64> = sweep
        .spacings
        .iter()
        .zip(&sweep.relative_gaps)
        .filter(|(_, g)| (0.03..=0.3).contains(*g))
        .map(|(a, _)| *a)
        .collect();
    let report = json!({
        "trap_frequency": nu,
        "target": sweep.target,
        "crossing": sweep.crossing,
        "closest": sweep.closest,
        "max_relative_gap": sweep.relative_gaps.iter().copied().filter(|g| g.is_finite()).fold(f64::NAN, f64::max),
        "spacings_in_band_0.03_0.3": in_band,
    });
    Ok(Output::new("spacing_m,gap_over_nu", rows, report))
}

fn ms_verify(cfg: &RunConfig) -> Result<Output> {
    let k = cfg.parse::<u32>("k")?;
    let p = MsParams {
        n_ions: cfg.usize("n_ions")?,
        eta: cfg.f64("eta")?,
        omega: cfg.f64("omega")?,
        delta: cfg.f64("delta")?,
        nu: cfg.f64("nu")?,
        k_return: k,
        n_max: cfg.usize("n_max")?,
        phase: cfg.f64("phase")?,
    };
    let ctrl = StepControl { tol: cfg.f64("tol")?, ..StepControl::default() };
    let r = ms_simulate_with(&p, cfg.usize("samples")?, &ctrl)?;
    let half = r.trajectory.iter().min_by(|a, b| (a.t - 0.5 * r.tau).abs().total_cmp(&(b.t - 0.5 * r.tau).abs())).expect("trajectory");
    let mut report = to_value(&r);
    report.as_object_mut().expect("object").remove("trajectory");
    report["purity_at_half_tau"] = json!(half.phonon_purity);
    let mut out = Output::new(MS_CSV_HEADER, ms_csv_rows(&r), report);
    out.notes.push(("convention".into(), r.convention.into()));
    Ok(out)
}

/// Schedule from `t_gap` (in units of 1/Δ of the long-range model).
fn schedule(cfg: &RunConfig, lattice: Lattice, params: CouplingParams) -> Result<(RampSchedule, f64)> {
    let gap = gap_row(lattice, params, Model::Lri, &ScanOptions::default())?.gap * params.jx;
    let sched = RampSchedule {
        total_time: cfg.f64("t_gap")? / gap,
        shape: cfg.shape()?,
        initial_strength: cfg.f64("strength")? * params.max(),
        sign: cfg.i32("sign")?,
    };
    Ok((sched, gap))
}

fn prepare(cfg: &RunConfig) -> Result<Output> {
    let lattice = cfg.lattice()?;
    let params = cfg.couplings()?;
    let (sched, gap) = schedule(cfg, lattice, params)?;
    let p = adiabatic_prepare(lattice, params, &sched, 0)?;
    let join = |v: &[f64]| v.iter().map(|x| sci(*x)).collect::<Vec<_>>().join(";");
    let row = format!(
        "{},{},{},{},{},{},{}",
        lattice.n(),
        sched.sign,
        sci(sched.total_time),
        sci(p.doublet_overlap),
        sci(p.q_drift),
        join(&p.q_start),
        join(&p.q_end)
    );
    let report = json!({ "gap": gap, "schedule": to_value(&sched), "result": to_value(&p) });
    Ok(Output::new("n,sign,total_time,doublet_overlap,q_drift,q_start,q_end", vec![row], report))
}

fn measure(cfg: &RunConfig) -> Result<Output> {
    let lattice = cfg.lattice()?;
    let params = cfg.couplings()?;
    let state: StateVector = match cfg.get("state") {
        "plus" => StateVector::x_polarized(lattice, 1),
        "minus" => StateVector::x_polarized(lattice, -1),
        which @ ("doublet0" | "doublet1") => {
            let d = ground_doublet(lattice, params, Model::Lri)?;
            let s = d.states[usize::from(which == "doublet1")].clone();
            if !s.is_full() {
                return Err(Error::InvalidParameter("doublet readout needs N <= 3".into()));
            }
            s.to_z_basis()
        }
        "prepared" => {
            let (sched, _) = schedule(cfg, lattice, params)?;
            adiabatic_prepare(lattice, params, &sched, 0)?.final_state
        }
        other => return Err(Error::Config(format!("state = `{other}` (expected plus, minus, doublet0, doublet1 or prepared)"))),
    };
    let basis = match cfg.get("basis") {
        "x" => Pauli::X,
        "y" => Pauli::Y,
        "z" => Pauli::Z,
        other => return Err(Error::Config(format!("basis = `{other}` (expected x, y or z)"))),
    };
    let shots = cfg.usize("shots")?;
    let outcomes = measure_sample(&state, basis, shots, cfg.u64("seed")?)?;
    let sites = lattice.site_count();
    let rows = outcomes
        .iter()
        .enumerate()
        .map(|(i, &b)| format!("{i},{}", (0..sites).map(|s| if b >> s & 1 == 1 { '1' } else { '0' }).collect::<String>()))
        .collect();
    let mut report = json!({ "n": lattice.n(), "basis": cfg.get("basis"), "shots": shots });
    if basis == Pauli::X {
        // column parities read off X outcomes estimate ⟨Q_j⟩
        let sym = SymmetrySet::new(lattice);
        let cols: Vec<Value> = (0..lattice.n())
            .map(|j| {
                let mask = lattice.column_mask(j);
                let mean = outcomes.iter().map(|&b| if (b & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 }).sum::<f64>() / shots as f64;
                let exact = apply_pauli_string(&state, &sym.q_ops[j]).and_then(|q| state.inner(&q)).map(|c| c.re).ok();
                let sigma = exact.map(|e| ((1.0 - e * e).max(0.0) / shots as f64).sqrt());
                json!({ "column": j, "sampled_q": mean, "exact_q": exact, "binomial_sigma": sigma })
            })
            .collect();
        report["column_parities"] = json!(cols);
    }
    Ok(Output::new("shot,outcome", rows, report))
}

/// Renders an [`Output`]: CSV with `#` header lines (effective config, notes,
/// timestamp) or a JSON document.
pub fn render(cfg: &RunConfig, out: &Output, timestamp: u64) -> Result<String> {
    match cfg.format()? {
        Format::Csv => {
            let mut s = String::new();
            s.push_str(&format!("# command={}\n", cfg.command));
            for (k, v) in &cfg.values {
                s.push_str(&format!("# {k}={v}\n"));
            }
            for (k, v) in &out.notes {
                s.push_str(&format!("# {k}={v}\n"));
            }
            s.push_str(&format!("# generated_unix={timestamp}\n"));
            s.push_str(out.columns);
            s.push('\n');
            for r in &out.rows {
                s.push_str(r);
                s.push('\n');
            }
            Ok(s)
        }
        Format::Json => {
            let doc = json!({
                "command": cfg.command,
                "config": cfg.values,
                "generated_unix": timestamp,
                "report": out.report,
            });
            Ok(serde_json::to_string_pretty(&doc).expect("json document") + "\n")
        }
    }
}

/// Data section of a rendered CSV: everything but the `#` header lines.
pub fn data_section(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// 1 for invalid input, 2 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

pub fn error_json(e: &Error) -> Value {
    json!({ "error": { "kind": e.kind(), "message": e.to_string(), "numerical": e.is_numerical(), "exit_code": exit_code(e) } })
}

pub fn cli() -> Command {
    let mut app = Command::new("topoguard")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Protected-doublet lattice engine: spectra, noise, phonons and dynamics")
        .subcommand_required(true)
        .arg(Arg::new("config").long("config").global(true).value_name("FILE").help("key = value config file with [command] sections"))
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help(format!("worker threads (default: ${THREADS_ENV} or all cores)")),
        );
    for spec in COMMANDS {
        let mut sub = Command::new(spec.name).about(spec.about);
        for k in all_keys(spec) {
            let default = if k.name == "format" { spec.default_format } else { k.default };
            sub = sub.arg(Arg::new(k.name).long(k.flag).value_name("VALUE").allow_negative_numbers(true).help(format!("{} [default: {default}]", k.help)));
        }
        app = app.subcommand(sub);
    }
    app
}

/// Resolves the configuration from parsed arguments.
pub fn config_from_matches(name: &str, sub: &ArgMatches, config_file: Option<&str>) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(name)?;
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
        cfg.apply_file_text(&text)?;
    }
    let spec = command_spec(name)?;
    for k in all_keys(spec) {
        if let Some(v) = sub.get_one::<String>(k.name) {
            cfg.set(k.name, v)?;
        }
    }
    Ok(cfg)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{THREADS_ENV} = `{v}` is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run_matches(m: &ArgMatches) -> Result<(RunConfig, Output)> {
    if let Some(n) = thread_count(m.get_one::<usize>("threads").copied())? {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = config_from_matches(name, sub, m.get_one::<String>("config").map(String::as_str))?;
    let out = execute(&cfg)?;
    Ok((cfg, out))
}

fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match cfg.get("output") {
        "-" => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
        path => Ok(std::fs::write(path, text)?),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let report_error = |e: &Error| {
        eprintln!("{}", error_json(e));
        exit_code(e)
    };
    let (cfg, out) = match run_matches(&matches) {
        Ok(x) => x,
        Err(e) => return report_error(&e),
    };
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let written = render(&cfg, &out, timestamp).and_then(|text| emit(&cfg, &text));
    if let Err(e) = written {
        return report_error(&e);
    }
    match &out.failure {
        Some(e) => report_error(e),
        None => 0,
    }
}
