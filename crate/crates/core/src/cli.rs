//! Run orchestration for the `elastica` binary: strict JSON configs, run
//! directories with a lock, a partial marker and a hashed manifest, and
//! long-form plot data.
//!
//! A config is one flat JSON object. `command`, `seed` and `out_dir` are
//! shared keys; every other key belongs to the command. Flags given on the
//! command line are written into the object before it is validated, so they
//! override the file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::codec;
use crate::elasticity::{self, DerivativeTable, ElasticityConfig, Estimator, InvariantReport};
use crate::error::{Error, Result};
use crate::mass::MassLaw;
use crate::token_tree::{self, Response, WeightedDataset};
use crate::toytrain::{self, Knob, ReboundSpec, ResistanceSpec};

pub const CONFIG_SCHEMA: u32 = 1;
pub const ARTIFACT: &str = concat!("elastica ", env!("CARGO_PKG_VERSION"));

pub const LOCK_FILE: &str = ".lock";
pub const PARTIAL_FILE: &str = ".partial";
pub const RECORD_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Codec,
    Sweep,
    Ratio,
    ToyResistance,
    ToyRebound,
    ToyFactor,
    Report,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Codec => "codec",
            Command::Sweep => "sweep",
            Command::Ratio => "ratio",
            Command::ToyResistance => "toy-resistance",
            Command::ToyRebound => "toy-rebound",
            Command::ToyFactor => "toy-factor",
            Command::Report => "report",
        }
    }

    /// Owning library module, used to label errors.
    pub fn module(self) -> &'static str {
        match self {
            Command::Codec => "codec",
            Command::Sweep | Command::Ratio | Command::Report => "elasticity",
            Command::ToyResistance | Command::ToyRebound | Command::ToyFactor => "toytrain",
        }
    }

    pub fn needs_seed(self) -> bool {
        !matches!(self, Command::Codec | Command::Report)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    #[default]
    Pareto,
    Degenerate,
}

fn default_alpha() -> f64 {
    3.0
}
fn default_l_grid() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1]
}
fn default_h() -> f64 {
    1e-4
}
fn default_sweep_samples() -> u64 {
    1_000_000
}
fn default_ratio_samples() -> u64 {
    10_000_000
}
fn default_k_list() -> Vec<f64> {
    vec![10.0, 100.0, 1000.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub k: f64,
    #[serde(default)]
    pub law: LawKind,
    /// Pareto tail index; ignored for the degenerate law.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_l_grid")]
    pub l_grid: Vec<f64>,
    #[serde(default = "default_sweep_samples")]
    pub n_samples: u64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub estimator: Estimator,
    /// Also run the finite-tree sweep with this many leaves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioParams {
    #[serde(default = "default_k_list")]
    pub k_list: Vec<f64>,
    #[serde(default)]
    pub law: LawKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_l_grid")]
    pub l_grid: Vec<f64>,
    #[serde(default = "default_ratio_samples")]
    pub n_samples: u64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    Encode,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecParams {
    pub mode: CodecMode,
    /// Dataset the token tree is built from.
    pub tree: PathBuf,
    pub depth: usize,
    /// Responses to encode, or a blob file to decode.
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportParams {
    /// Run directories holding a `derivatives.csv`.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorParams {
    pub knob: Knob,
    pub values: Vec<u64>,
    #[serde(flatten)]
    pub spec: ReboundSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Codec(CodecParams),
    Sweep(SweepParams),
    Ratio(RatioParams),
    ToyResistance(ResistanceSpec),
    ToyRebound(ReboundSpec),
    ToyFactor(FactorParams),
    Report(ReportParams),
}

impl Params {
    pub fn command(&self) -> Command {
        match self {
            Params::Codec(_) => Command::Codec,
            Params::Sweep(_) => Command::Sweep,
            Params::Ratio(_) => Command::Ratio,
            Params::ToyResistance(_) => Command::ToyResistance,
            Params::ToyRebound(_) => Command::ToyRebound,
            Params::ToyFactor(_) => Command::ToyFactor,
            Params::Report(_) => Command::Report,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub params: Params,
}

fn config_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config { path: path.into(), msg: msg.into() }
}

fn typed<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_err(path, e.into_inner().to_string())
    })
}

impl RunConfig {
    pub fn command(&self) -> Command {
        self.params.command()
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut obj) = value else {
            return Err(config_err(".", "config must be a JSON object"));
        };
        let command: Command = typed(obj.remove("command").ok_or_else(|| config_err("command", "missing key"))?)
            .map_err(|e| match e {
                Error::Config { msg, .. } => config_err("command", msg),
                other => other,
            })?;
        let seed = match obj.remove("seed") {
            None | Some(Value::Null) => None,
            Some(v) => Some(typed::<u64>(v).map_err(|e| match e {
                Error::Config { msg, .. } => config_err("seed", msg),
                other => other,
            })?),
        };
        let out_dir = match obj.remove("out_dir") {
            Some(Value::String(s)) if !s.is_empty() => PathBuf::from(s),
            Some(_) => return Err(config_err("out_dir", "expected a non-empty path string")),
            None => return Err(config_err("out_dir", "missing key (set it in the file or pass --out)")),
        };
        if command.needs_seed() && seed.is_none() {
            return Err(config_err("seed", format!("`{}` is stochastic and needs a seed", command.as_str())));
        }
        let rest = Value::Object(obj);
        let params = match command {
            Command::Codec => Params::Codec(typed(rest)?),
            Command::Sweep => Params::Sweep(typed(rest)?),
            Command::Ratio => Params::Ratio(typed(rest)?),
            Command::Report => Params::Report(typed(rest)?),
            Command::ToyResistance => {
                let mut spec: ResistanceSpec = typed(rest)?;
                spec.seed = seed.expect("checked");
                Params::ToyResistance(spec)
            }
            Command::ToyRebound => {
                let mut spec: ReboundSpec = typed(rest)?;
                spec.seed = seed.expect("checked");
                Params::ToyRebound(spec)
            }
            Command::ToyFactor => {
                let Value::Object(mut obj) = rest else { unreachable!() };
                let knob: Knob = typed(obj.remove("knob").ok_or_else(|| config_err("knob", "missing key"))?)
                    .map_err(|e| match e {
                        Error::Config { msg, .. } => config_err("knob", msg),
                        other => other,
                    })?;
                let values: Vec<u64> =
                    typed(obj.remove("values").ok_or_else(|| config_err("values", "missing key"))?).map_err(|e| match e {
                        Error::Config { path, msg } => config_err(format!("values{}", path.trim_start_matches('.')), msg),
                        other => other,
                    })?;
                let mut spec: ReboundSpec = typed(Value::Object(obj))?;
                spec.seed = seed.expect("checked");
                Params::ToyFactor(FactorParams { knob, values, spec })
            }
        };
        Ok(RunConfig { seed, out_dir, params })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| config_err(".", format!("invalid JSON: {e}")))?;
        Self::from_value(v)
    }

    /// Flat JSON object; `from_value(to_value(c)) == c`.
    pub fn to_value(&self) -> Value {
        let mut obj = self.params_value();
        obj.insert("out_dir".into(), Value::String(self.out_dir.to_string_lossy().into_owned()));
        Value::Object(obj)
    }

    /// The config without `out_dir`: what a run directory snapshots.
    pub fn snapshot(&self) -> Value {
        Value::Object(self.params_value())
    }

    fn params_value(&self) -> Map<String, Value> {
        let v = match &self.params {
            Params::Codec(p) => serde_json::to_value(p),
            Params::Sweep(p) => serde_json::to_value(p),
            Params::Ratio(p) => serde_json::to_value(p),
            Params::ToyResistance(p) => serde_json::to_value(p),
            Params::ToyRebound(p) => serde_json::to_value(p),
            Params::ToyFactor(p) => serde_json::to_value(p),
            Params::Report(p) => serde_json::to_value(p),
        };
        let Ok(Value::Object(mut obj)) = v else { unreachable!("params serialize to objects") };
        let mut out = Map::new();
        out.insert("command".into(), Value::String(self.command().as_str().into()));
        obj.remove("seed");
        if let Some(seed) = self.seed {
            out.insert("seed".into(), Value::from(seed));
        }
        out.extend(obj);
        out
    }
}

/// Writes `value` at a dotted `key` path, creating objects on the way.
pub fn set_key(obj: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = obj;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(config_err(key, "empty key segment"));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let next = cur.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        cur = next.as_object_mut().ok_or_else(|| config_err(key, format!("`{part}` is not an object")))?;
    }
    Ok(())
}

/// Parses `KEY=VALUE`. The value is read as JSON, falling back to a plain
/// string when it is not valid JSON.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_err(s, "expected KEY=VALUE"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Builds a config from an optional file plus overrides. When `command` is
/// given, the file's `command` (if any) must agree with it.
pub fn load_config(path: Option<&Path>, command: Option<Command>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut obj = match path {
        None => Map::new(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(".", format!("cannot read {}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(o)) => o,
                Ok(_) => return Err(config_err(".", "config must be a JSON object")),
                Err(e) => return Err(config_err(".", format!("invalid JSON in {}: {e}", p.display()))),
            }
        }
    };
    if let Some(cmd) = command {
        let name = Value::String(cmd.as_str().into());
        match obj.get("command") {
            Some(existing) if *existing != name => {
                return Err(config_err("command", format!("file says {existing}, subcommand is `{}`", cmd.as_str())));
            }
            _ => {
                obj.insert("command".into(), name);
            }
        }
    }
    for (k, v) in overrides {
        set_key(&mut obj, k, v.clone())?;
    }
    RunConfig::from_value(Value::Object(obj))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub artifact: String,
    pub config_schema: u32,
    pub command: Command,
    pub config: Value,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub files: Vec<FileEntry>,
}

impl RunRecord {
    pub fn read(run_dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(run_dir.join(RECORD_FILE))?)?)
    }

    /// Checks every manifest entry against the file on disk.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for f in &self.files {
            let bytes = fs::read(run_dir.join(&f.path))?;
            if bytes.len() as u64 != f.bytes || hex::encode(Sha256::digest(&bytes)) != f.sha256 {
                return Err(Error::RunDir(format!("{} does not match the manifest", f.path)));
            }
        }
        Ok(())
    }
}

/// An error with the module that raised it.
#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub error: Error,
}

impl Failure {
    pub fn new(module: &'static str, error: Error) -> Self {
        Failure { module, error }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.error.kind(), "module": self.module, "message": self.error.to_string() }
        })
        .to_string()
    }

    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::Config { .. } => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.module, self.error)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new("cli", e)
    }
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path, force: bool) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        let open = || fs::OpenOptions::new().write(true).create_new(true).open(&path);
        match open() {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                if !force {
                    return Err(Error::RunDir(format!("{} is locked by another run (pass --force to take it over)", dir.display())));
                }
                fs::remove_file(&path)?;
                open()?;
                Ok(DirLock(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Runs `cfg` into its output directory and returns the record written to
/// `run.json`. A failed or interrupted run leaves `.partial` behind, and a
/// directory with `.partial` or a finished run is refused unless `force`.
pub fn execute(cfg: &RunConfig, force: bool) -> std::result::Result<RunRecord, Failure> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(Error::from)?;
    let _lock = DirLock::acquire(dir, force)?;
    let partial = dir.join(PARTIAL_FILE);
    if !force {
        if partial.exists() {
            return Err(Error::RunDir(format!("{} holds an interrupted run; pass --force to rerun", dir.display())).into());
        }
        if dir.join(RECORD_FILE).exists() {
            return Err(Error::RunDir(format!("{} already holds a finished run; pass --force to overwrite", dir.display())).into());
        }
    }
    let started = unix_ms();
    fs::write(&partial, format!("{}\n", cfg.command().as_str())).map_err(Error::from)?;
    let _ = fs::remove_file(dir.join(RECORD_FILE));

    let mut files = produce(cfg).map_err(|e| Failure::new(cfg.command().module(), e))?;
    let snapshot = cfg.snapshot();
    let mut config_bytes = serde_json::to_vec_pretty(&snapshot).map_err(Error::from)?;
    config_bytes.push(b'\n');
    files.push((CONFIG_FILE.to_string(), config_bytes));

    let mut manifest = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes).map_err(Error::from)?;
        manifest.push(FileEntry { path: name.clone(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 });
    }
    let record = RunRecord {
        artifact: ARTIFACT.to_string(),
        config_schema: CONFIG_SCHEMA,
        command: cfg.command(),
        config: snapshot,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        files: manifest,
    };
    let mut rec_bytes = serde_json::to_vec_pretty(&record).map_err(Error::from)?;
    rec_bytes.push(b'\n');
    fs::write(dir.join(RECORD_FILE), rec_bytes).map_err(Error::from)?;
    fs::remove_file(&partial).map_err(Error::from)?;
    Ok(record)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn mass_law(law: LawKind, alpha: f64) -> Result<MassLaw> {
    match law {
        LawKind::Pareto => MassLaw::pareto(alpha),
        LawKind::Degenerate => Ok(MassLaw::Degenerate),
    }
}

fn summary_csv(rows: &[(&str, String)]) -> Result<Vec<u8>> {
    csv_bytes(|buf| {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
        w.write_record(["metric", "value"])?;
        for (k, v) in rows {
            w.write_record([*k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Computes a command's result files in memory, as `(name, bytes)`.
pub fn produce(cfg: &RunConfig) -> Result<Vec<(String, Vec<u8>)>> {
    let seed = cfg.seed.unwrap_or(0);
    let mut out = Vec::new();
    match &cfg.params {
        Params::Sweep(p) => {
            let ecfg = ElasticityConfig::new(p.k, p.l_grid.clone(), mass_law(p.law, p.alpha)?, p.n_samples, seed, p.h)?
                .with_estimator(p.estimator);
            let sweep = elasticity::sweep(&ecfg)?;
            out.push(("sweep.csv".into(), csv_bytes(|b| sweep.write_csv(b))?));
            let table = DerivativeTable::compute(&ecfg)?;
            out.push(("derivatives.csv".into(), csv_bytes(|b| table.write_csv(b))?));
            if let Some(m) = p.empirical_m {
                let emp = elasticity::empirical_sweep(m, &ecfg)?;
                out.push(("empirical.csv".into(), csv_bytes(|b| emp.write_csv(b))?));
            }
        }
        Params::Ratio(p) => {
            let k0 = *p.k_list.first().ok_or_else(|| config_err("k_list", "empty"))?;
            let ecfg = ElasticityConfig::new(k0.max(2.0), p.l_grid.clone(), mass_law(p.law, p.alpha)?, p.n_samples, seed, p.h)?
                .with_estimator(p.estimator);
            let tables = elasticity::ratio_tables(&p.k_list, &ecfg)?;
            let report = InvariantReport::from_tables(&tables)?;
            out.push(("derivatives.csv".into(), csv_bytes(|b| elasticity::write_derivative_tables(b, &tables))?));
            out.push(("report.csv".into(), csv_bytes(|b| report.write_csv(b))?));
        }
        Params::Report(p) => {
            if p.inputs.is_empty() {
                return Err(config_err("inputs", "no input run directories"));
            }
            let mut tables = Vec::new();
            for dir in &p.inputs {
                let path = dir.join("derivatives.csv");
                let f = fs::File::open(&path).map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))?;
                tables.extend(elasticity::read_derivative_tables(f)?);
            }
            let report = InvariantReport::from_tables(&tables)?;
            out.push(("report.csv".into(), csv_bytes(|b| report.write_csv(b))?));
        }
        Params::Codec(p) => out.extend(run_codec(p)?),
        Params::ToyResistance(spec) => {
            let report = toytrain::resistance_experiment(spec)?;
            out.push(("resistance.csv".into(), csv_bytes(|b| report.write_csv(b))?));
            out.push((
                "summary.csv".into(),
                summary_csv(&[("runs", report.rows.len().to_string()), ("inverse_wins", report.inverse_wins().to_string())])?,
            ));
        }
        Params::ToyRebound(spec) => {
            let report = toytrain::rebound_experiment(spec)?;
            out.push(("rebound.csv".into(), csv_bytes(|b| report.write_csv(b))?));
            out.push((
                "summary.csv".into(),
                summary_csv(&[
                    ("initial_scores_ordered", report.initial_scores_ordered().to_string()),
                    ("early_slope", report.early_slope().to_string()),
                    ("slope_correlation", report.slope_correlation().to_string()),
                    ("final_spread", report.final_spread().to_string()),
                    ("band", spec.band.to_string()),
                ])?,
            ));
        }
        Params::ToyFactor(p) => {
            let points = toytrain::factor_sweep(&p.spec, p.knob, &p.values)?;
            out.push(("factor.csv".into(), csv_bytes(|b| toytrain::write_factor_csv(b, p.knob, &points))?));
        }
    }
    Ok(out)
}

fn run_codec(p: &CodecParams) -> Result<Vec<(String, Vec<u8>)>> {
    let ds = WeightedDataset::read(&p.tree)?;
    let tree = token_tree::prune(&token_tree::build_tree(&ds)?, p.depth)?;
    let code = codec::huffman_build(&tree)?;
    let mut out = Vec::new();
    match p.mode {
        CodecMode::Encode => {
            let inputs = WeightedDataset::read(&p.input)?;
            let responses: Vec<&Response> =
                inputs.entries().iter().flat_map(|(r, c)| std::iter::repeat_n(r, *c as usize)).collect();
            let mut blobs = Vec::new();
            let mut stats = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            stats.write_record(["index", "response", "segments", "bits", "ideal_bits"])?;
            for (i, r) in responses.iter().enumerate() {
                let blob = codec::encode(&code, &tree, r)?;
                codec::write_blob(&mut blobs, &code, &blob)?;
                let shown = if r.is_empty() { "-".to_string() } else { r.bits() };
                stats.write_record([
                    i.to_string(),
                    shown,
                    blob.segment_count.to_string(),
                    blob.bits.len().to_string(),
                    codec::ideal_code_length(&tree, r.len()).to_string(),
                ])?;
            }
            let stats = stats.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            out.push(("tree.csv".into(), csv_bytes(|b| tree.write_csv(b))?));
            out.push(("code.csv".into(), code_table_csv(&tree, &code)?));
            out.push(("blobs.bin".into(), blobs));
            out.push(("codec.csv".into(), stats));
        }
        CodecMode::Decode => {
            let blobs = codec::read_blobs(fs::File::open(&p.input)?, &code)?;
            let mut text = String::new();
            for blob in &blobs {
                let r = codec::decode(&code, blob)?;
                text.push_str(if r.is_empty() { "-" } else { "" });
                text.push_str(&r.bits());
                text.push('\n');
            }
            out.push(("decoded.txt".into(), text.into_bytes()));
        }
    }
    Ok(out)
}

fn code_table_csv(tree: &token_tree::PrunedTree, code: &codec::HuffmanCode) -> Result<Vec<u8>> {
    csv_bytes(|buf| {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
        w.write_record(["prefix", "kind", "prob", "codeword"])?;
        for ((sym, cw), p) in code.alphabet().iter().zip(code.codewords()).zip(tree.probs()) {
            let bits: String = cw.iter().map(|&b| if b { '1' } else { '0' }).collect();
            w.write_record([sym.prefix.as_str(), sym.kind.as_str(), &p.to_string(), &bits])?;
        }
        w.flush()?;
        Ok(())
    })
}

pub const PLOT_HEADER: [&str; 4] = ["series", "x", "y", "y_err"];

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, file: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("{file} has no `{name}` column") })
}

/// Writes the run's reports as long-form `series,x,y,y_err` rows. Numbers
/// are copied verbatim from the source CSVs.
pub fn emit_plot_data<W: Write>(run_dir: &Path, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(PLOT_HEADER)?;
    let mut found = false;
    let path = |name: &str| run_dir.join(name);

    if path("sweep.csv").exists() {
        found = true;
        let (h, rows) = read_table(&path("sweep.csv"))?;
        let l = column(&h, "l", "sweep.csv")?;
        for comp in ["gamma_p", "gamma_a"] {
            let (y, e) = (column(&h, comp, "sweep.csv")?, column(&h, &format!("{comp}_se"), "sweep.csv")?);
            for r in &rows {
                out.write_record([comp, &r[l], &r[y], &r[e]])?;
            }
        }
    }
    if path("report.csv").exists() {
        found = true;
        let (h, rows) = read_table(&path("report.csv"))?;
        let k = column(&h, "k", "report.csv")?;
        for series in ["R", "elastic_p", "elastic_a"] {
            let y = column(&h, series, "report.csv")?;
            for r in &rows {
                out.write_record([series, &r[k], &r[y], ""])?;
            }
        }
    }
    if path("resistance.csv").exists() {
        found = true;
        let (h, rows) = read_table(&path("resistance.csv"))?;
        let (pair, seed) = (column(&h, "pair", "resistance.csv")?, column(&h, "seed", "resistance.csv")?);
        for dir in ["forward", "inverse"] {
            let y = column(&h, &format!("{dir}_loss"), "resistance.csv")?;
            for r in &rows {
                out.write_record([&format!("{dir}:{}", &r[pair]), &r[seed], &r[y], ""])?;
            }
        }
    }
    if path("rebound.csv").exists() {
        found = true;
        let (h, rows) = read_table(&path("rebound.csv"))?;
        let (np, nn, s) =
            (column(&h, "n_pos", "rebound.csv")?, column(&h, "n_neg", "rebound.csv")?, column(&h, "score", "rebound.csv")?);
        for r in &rows {
            out.write_record([&format!("n_pos={}", &r[np]), &r[nn], &r[s], ""])?;
        }
    }
    if path("factor.csv").exists() {
        found = true;
        let (h, rows) = read_table(&path("factor.csv"))?;
        let knob = h.first().cloned().ok_or_else(|| Error::Parse { line: 1, msg: "factor.csv has no header".into() })?;
        let slope = column(&h, "early_slope", "factor.csv")?;
        let mut last: Option<String> = None;
        for r in &rows {
            if last.as_deref() != Some(&r[0]) {
                out.write_record([&format!("early_slope:{knob}"), &r[0], &r[slope], ""])?;
                last = Some(r[0].to_string());
            }
        }
    }
    if !found {
        return Err(Error::RunDir(format!("no reports found in {}", run_dir.display())));
    }
    out.flush()?;
    Ok(())
}
