//! `nncost` command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 input/parse error,
//! 3 audit found nonzero deltas, 4 no architecture satisfies the budget.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nncost::arch::{parse_spec, validate_network, BitwidthConfig, NetworkSpec};
use nncost::costmodel::{cost_report, Metric};
use nncost::interp::{audit, AuditRecord, ExecMode};
use nncost::quant::QuantScheme;
use nncost::search::{
    complexity_sweep, run_search, write_history_csv, write_sweep_csv, Constraint, SearchError, SearchOptions,
    SearchSpace, Task,
};

#[derive(Parser)]
#[command(
    name = "nncost",
    version,
    about = "Inference-complexity estimation and budgeted architecture search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer RM/BOP/NABS report for a network spec.
    Estimate {
        spec: PathBuf,
        #[command(flatten)]
        quant: QuantArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check analytic RM against the instrumented interpreter.
    Validate {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Float)]
        mode: Mode,
        /// Enable the ESN output-feedback path (not priced by RM).
        #[arg(long)]
        esn_feedback: bool,
        #[command(flatten)]
        quant: QuantArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Budgeted Bayesian search; writes the trial history CSV.
    Search {
        space: PathBuf,
        task: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// NABS budget (overrides the space's constraint).
        #[arg(long)]
        budget_nabs: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// One search per budget; writes the complexity-vs-score CSV.
    Sweep {
        space: PathBuf,
        task: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<u64>,
        #[arg(long, default_value = "nabs")]
        metric: Metric,
        #[command(flatten)]
        run: RunArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct QuantArgs {
    #[arg(long, default_value_t = 8)]
    bw: u32,
    #[arg(long, default_value_t = 8)]
    bi: u32,
    #[arg(long, default_value_t = 8)]
    ba: u32,
    /// float | uniform | pot | apot:K
    #[arg(long, default_value = "uniform")]
    scheme: String,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 15)]
    iters: usize,
    #[arg(long, default_value_t = 5)]
    init: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Float,
    Fixed,
}

enum Failure {
    Input(String),
    Internal(String),
    Delta,
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Input(_) => 2,
            Failure::Delta => 3,
            Failure::Infeasible(_) => 4,
        }
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::InfeasibleSpace { .. } => Failure::Infeasible(e.to_string()),
            SearchError::Space(_) | SearchError::Task(_) | SearchError::Arch(_) | SearchError::Domain(_) => {
                Failure::Input(e.to_string())
            }
            other => Failure::Internal(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_network(path: &Path) -> Result<NetworkSpec, Failure> {
    let net = parse_spec(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let violations = validate_network(&net);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Failure::Input(format!("{}: {}", path.display(), lines.join("; "))));
    }
    Ok(net)
}

impl QuantArgs {
    fn resolve(&self) -> Result<(BitwidthConfig, QuantScheme), Failure> {
        let bits = BitwidthConfig::new(self.bw, self.bi, self.ba).map_err(|e| Failure::Input(e.to_string()))?;
        let scheme = QuantScheme::from_cli(&self.scheme, self.bw).map_err(|e| Failure::Input(e.to_string()))?;
        Ok((bits, scheme))
    }
}

impl RunArgs {
    fn options(&self) -> Result<SearchOptions, Failure> {
        if self.iters == 0 || self.init == 0 {
            return Err(Failure::Input("--iters and --init must be >= 1".into()));
        }
        Ok(SearchOptions {
            iters: self.iters,
            n_init: self.init,
            seed: self.seed,
            eval_seed: self.seed,
            k: self.k,
        })
    }
}

/// Write to `path` via a sibling temp file and rename, or to stdout.
fn emit(output: Option<&Path>, bytes: &[u8]) -> Outcome {
    let internal = |e: io::Error| Failure::Internal(e.to_string());
    match output {
        None => io::stdout().lock().write_all(bytes).map_err(internal),
        Some(path) => {
            let name = path
                .file_name()
                .ok_or_else(|| Failure::Input(format!("bad output path {}", path.display())))?;
            let mut tmp_name = name.to_os_string();
            tmp_name.push(format!(".tmp{}", std::process::id()));
            let tmp = path.with_file_name(tmp_name);
            fs::write(&tmp, bytes).map_err(|e| Failure::Input(format!("{}: {e}", tmp.display())))?;
            fs::rename(&tmp, path).map_err(|e| {
                let _ = fs::remove_file(&tmp);
                Failure::Input(format!("{}: {e}", path.display()))
            })
        }
    }
}

fn load_search_inputs(space: &Path, task: &Path) -> Result<(SearchSpace, Task), Failure> {
    let s = SearchSpace::from_json(&read(space)?).map_err(|e| Failure::Input(format!("{}: {e}", space.display())))?;
    let t = Task::from_json(&read(task)?).map_err(|e| Failure::Input(format!("{}: {e}", task.display())))?;
    Ok((s, t))
}

fn delta_table(record: &AuditRecord) -> String {
    let mut s = format!(
        "{:>5}  {:<6} {:>12} {:>12} {:>10}\n",
        "layer", "type", "analytic", "measured", "delta"
    );
    for l in &record.per_layer {
        s += &format!(
            "{:>5}  {:<6} {:>12} {:>12} {:>10}\n",
            l.layer_index,
            l.layer_type,
            l.analytic.rm,
            l.measured.multiplicative(),
            l.delta
        );
    }
    s
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Estimate {
            spec,
            quant,
            format,
            output,
        } => {
            let net = load_network(&spec)?;
            let (bits, scheme) = quant.resolve()?;
            let report = cost_report(&net, &bits, &scheme).map_err(|e| Failure::Input(e.to_string()))?;
            let text = match format {
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json() + "\n",
            };
            emit(output.as_deref(), text.as_bytes())
        }
        Command::Validate {
            spec,
            seed,
            mode,
            esn_feedback,
            quant,
            output,
        } => {
            let net = load_network(&spec)?;
            let (bits, scheme) = quant.resolve()?;
            let exec = match mode {
                Mode::Float => ExecMode::Float,
                Mode::Fixed => ExecMode::Fixed { bits, scheme },
            };
            let record =
                audit(&net, &bits, &scheme, seed, &exec, esn_feedback).map_err(|e| Failure::Internal(e.to_string()))?;
            emit(output.as_deref(), (record.to_json() + "\n").as_bytes())?;
            if record.overflow_count > 0 {
                eprintln!("warning: {} accumulator saturations", record.overflow_count);
            }
            if record.is_exact() {
                Ok(())
            } else {
                eprint!("{}", delta_table(&record));
                Err(Failure::Delta)
            }
        }
        Command::Search {
            space,
            task,
            run,
            budget_nabs,
            output,
        } => {
            let (space, task) = load_search_inputs(&space, &task)?;
            let constraint = budget_nabs.map(|budget| Constraint {
                metric: Metric::Nabs,
                budget,
            });
            let result = run_search(&space, &task, constraint, &run.options()?)?;
            let mut buf = Vec::new();
            write_history_csv(&space, &result, &mut buf)?;
            emit(output.as_deref(), &buf)?;
            let best = &result.best;
            eprintln!(
                "best score {} at {} (rm {}, bop {}, nabs {})",
                best.score,
                serde_json::Value::Object(best.values.clone()),
                best.cost.rm,
                best.cost.bop,
                best.cost.nabs
            );
            Ok(())
        }
        Command::Sweep {
            space,
            task,
            budgets,
            metric,
            run,
            output,
        } => {
            let (space, task) = load_search_inputs(&space, &task)?;
            let points = complexity_sweep(&space, &task, &budgets, metric, &run.options()?)?;
            let mut buf = Vec::new();
            write_sweep_csv(&points, &mut buf)?;
            emit(output.as_deref(), &buf)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) | Failure::Internal(m) | Failure::Infeasible(m) => eprintln!("error: {m}"),
                Failure::Delta => eprintln!("error: analytic and measured multiplication counts differ"),
            }
            ExitCode::from(f.code())
        }
    }
}
