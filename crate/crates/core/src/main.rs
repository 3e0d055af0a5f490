use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use elastica::cli::{self, Command, Failure};
use elastica::error::Error;

#[derive(Parser)]
#[command(name = "elastica", version = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)"))]
#[command(about = "Token trees, prune-then-Huffman coding, elasticity sweeps and toy training runs")]
#[command(after_help = "ELASTICA_THREADS caps the worker count. Results do not depend on it.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

// Options shared by every command that writes a run directory.
#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config file; flags override its keys.
    #[arg(long, alias = "spec", value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output run directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Take over a locked, interrupted or finished run directory.
    #[arg(long)]
    force: bool,
    /// Set any config key, e.g. `--set n_samples=1000` or `--set class_mass.positive=0.3`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run whatever command a config file names.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Encode responses with a tree's Huffman code, or decode blobs.
    Codec {
        #[command(subcommand)]
        mode: CodecCmd,
    },
    /// Elasticity sweep of both normalized rates over l at one k
    /// (defaults: law pareto, alpha 3, l-grid 0.01,0.02,0.05,0.1, samples 1e6, h 1e-4).
    Sweep {
        #[arg(long)]
        k: Option<f64>,
        #[command(flatten)]
        law: LawArgs,
        /// Finite-tree cross-check with this many leaves.
        #[arg(long)]
        empirical_m: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Ratio law over several k (defaults: k-list 10,100,1000, samples 1e7).
    Ratio {
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<f64>>,
        #[command(flatten)]
        law: LawArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Verdict report from the derivatives of earlier sweep or ratio runs.
    Report {
        #[arg(long = "input", value_name = "DIR", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Desk-scale training experiments.
    Toy {
        #[command(subcommand)]
        exp: ToyCmd,
    },
    /// Long-form series,x,y,y_err CSV from a finished run directory.
    PlotData {
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Output file; stdout if omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct LawArgs {
    /// Mass law: pareto or degenerate.
    #[arg(long)]
    law: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    l_grid: Option<Vec<f64>>,
    #[arg(long, alias = "n-samples")]
    samples: Option<u64>,
    /// Finite-difference step.
    #[arg(long)]
    h: Option<f64>,
    /// plain or symmetrized.
    #[arg(long)]
    estimator: Option<String>,
}

#[derive(Args, Clone)]
struct CodecArgs {
    /// Dataset file the token tree is built from.
    #[arg(long, value_name = "FILE")]
    tree: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    /// Responses (encode) or blob file (decode).
    #[arg(long = "in", alias = "input", value_name = "FILE")]
    input: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum CodecCmd {
    /// Encode each response line of --in into blobs.bin.
    Encode(CodecArgs),
    /// Decode a blob file back into responses.
    Decode(CodecArgs),
}

#[derive(Subcommand)]
enum ToyCmd {
    /// Forward vs inverse alignment losses.
    Resistance {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Positive score under negative fine-tuning, per alignment volume.
    Rebound {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rebound early slope across a capacity or pre-training-volume grid.
    Factor {
        /// capacity_d or pretrain_volume.
        #[arg(long)]
        knob: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<u64>>,
        #[command(flatten)]
        run: RunArgs,
    },
}

type Overrides = Vec<(String, Value)>;

fn put(o: &mut Overrides, key: &str, v: Option<impl Into<Value>>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.into()));
    }
}

impl LawArgs {
    fn overrides(self, o: &mut Overrides) {
        put(o, "law", self.law);
        put(o, "alpha", self.alpha);
        put(o, "l_grid", self.l_grid);
        put(o, "n_samples", self.samples);
        put(o, "h", self.h);
        put(o, "estimator", self.estimator);
    }
}

fn launch(command: Option<Command>, run: RunArgs, mut o: Overrides) -> Result<(), Failure> {
    put(&mut o, "seed", run.seed);
    put(&mut o, "out_dir", run.out.map(|p| p.to_string_lossy().into_owned()));
    for s in &run.set {
        o.push(cli::parse_assignment(s)?);
    }
    let cfg = cli::load_config(run.config.as_deref(), command, &o)?;
    let record = cli::execute(&cfg, run.force)?;
    println!(
        "{}",
        serde_json::json!({ "out_dir": cfg.out_dir, "command": record.command, "files": record.files.len() })
    );
    Ok(())
}

fn path_value(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run { run } => launch(None, run, vec![]),
        Cmd::Codec { mode } => {
            let (name, a) = match mode {
                CodecCmd::Encode(a) => ("encode", a),
                CodecCmd::Decode(a) => ("decode", a),
            };
            let mut o = vec![("mode".to_string(), Value::from(name))];
            put(&mut o, "tree", path_value(a.tree));
            put(&mut o, "depth", a.depth);
            put(&mut o, "input", path_value(a.input));
            launch(Some(Command::Codec), a.run, o)
        }
        Cmd::Sweep { k, law, empirical_m, run } => {
            let mut o = vec![];
            put(&mut o, "k", k);
            law.overrides(&mut o);
            put(&mut o, "empirical_m", empirical_m);
            launch(Some(Command::Sweep), run, o)
        }
        Cmd::Ratio { k_list, law, run } => {
            let mut o = vec![];
            put(&mut o, "k_list", k_list);
            law.overrides(&mut o);
            launch(Some(Command::Ratio), run, o)
        }
        Cmd::Report { inputs, run } => {
            let mut o = vec![];
            if !inputs.is_empty() {
                let v: Vec<String> = inputs.into_iter().map(|p| p.to_string_lossy().into_owned()).collect();
                o.push(("inputs".to_string(), Value::from(v)));
            }
            launch(Some(Command::Report), run, o)
        }
        Cmd::Toy { exp } => match exp {
            ToyCmd::Resistance { run } => launch(Some(Command::ToyResistance), run, vec![]),
            ToyCmd::Rebound { run } => launch(Some(Command::ToyRebound), run, vec![]),
            ToyCmd::Factor { knob, values, run } => {
                let mut o = vec![];
                put(&mut o, "knob", knob);
                put(&mut o, "values", values);
                launch(Some(Command::ToyFactor), run, o)
            }
        },
        Cmd::PlotData { run, out } => {
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    cli::emit_plot_data(&run, &mut buf)?;
                    std::fs::write(path, buf).map_err(Error::from)?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    cli::emit_plot_data(&run, &mut lock)?;
                    lock.flush().map_err(Error::from)?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("ELASTICA_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
