//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::agent::AgentModel;
use crate::env::ScriptedPolicy;
use crate::geometry::SceneGeometry;
use crate::nn::gradcheck::layer_suite;
use crate::rng;
use crate::scenegen::{Catalog, DataLevel, HoldoutFilter, HoldoutSet, ObjectPair, SampleRecord, SceneGenerator};
use crate::training::{
    baselines_table, cross_stage_matrix, evaluate, holdout_experiment, load_stage_models, train, EvalPolicy,
    EvalReport, EvalSpec, RunConfig, TrainError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "roep", version, about = "Active object existence prediction: simulator, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export generated samples as JSON lines.
    Gen {
        #[arg(long, value_parser = parse_level)]
        level: DataLevel,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the training curriculum.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or a comparison policy) on one level.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_parser = parse_level)]
        level: DataLevel,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, value_parser = parse_filter, default_value = "all")]
        filter: HoldoutFilter,
        /// ours, passive, random, exhaustive or oracle.
        #[arg(long, default_value = "ours")]
        policy: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Scripted baselines against the model on every level.
    Baselines {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Every stage checkpoint in a run directory on every level.
    Matrix {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train with object pairs held out and test on them.
    Holdout {
        #[arg(long)]
        per_pair: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Write the JSON report here as well as printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Rule agent on every level; it must be perfect.
    OracleCheck {
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn parse_level(s: &str) -> Result<DataLevel, String> {
    s.parse().map_err(|e: crate::scenegen::ScenegenError| e.to_string())
}

fn parse_filter(s: &str) -> Result<HoldoutFilter, String> {
    match s.replace('_', "-").as_str() {
        "all" => Ok(HoldoutFilter::All),
        "training-only" => Ok(HoldoutFilter::TrainingOnly),
        "holdout-only" => Ok(HoldoutFilter::HoldoutOnly),
        _ => Err(format!("unknown filter `{s}` (all, training-only, holdout-only)")),
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Verify(String),
    Train(TrainError),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Self::Train(e)
    }
}

impl From<crate::agent::AgentError> for Failure {
    fn from(e: crate::agent::AgentError) -> Self {
        Self::Train(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            EXIT_VERIFY
        }
        Err(Failure::Train(e)) => {
            eprintln!("error: {e}");
            match e {
                TrainError::Divergence { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn generator() -> SceneGenerator {
    SceneGenerator::new(Arc::new(Catalog::builtin()), SceneGeometry::default())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::desk(),
    };
    cfg.apply_env_seed()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<AgentModel, Failure> {
    if !path.exists() {
        return Err(TrainError::MissingCheckpoint(path.to_path_buf()).into());
    }
    Ok(AgentModel::load(path)?.0)
}

/// Reads the `holdout.txt` written next to a run's checkpoints, if any.
fn holdout_near(ckpt: &Path, catalog: &Catalog) -> Result<HoldoutSet, Failure> {
    let path = ckpt.parent().unwrap_or(Path::new(".")).join("holdout.txt");
    let Ok(text) = std::fs::read_to_string(&path) else { return Ok(HoldoutSet::empty()) };
    let mut pairs = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let ids: Option<Vec<usize>> = line.split(',').map(|n| catalog.id_of(n.trim())).collect();
        match ids.as_deref() {
            Some(&[a, b]) => pairs.push(ObjectPair::new(a, b)),
            _ => return Err(Failure::Usage(format!("{}: bad pair `{line}`", path.display()))),
        }
    }
    Ok(HoldoutSet::from_pairs(pairs))
}

fn print_table(rows: &[EvalReport]) {
    let Some(first) = rows.first() else { return };
    print!("{:<12}", "");
    for l in &first.levels {
        print!(" | {:^20}", l.level);
    }
    println!();
    for r in rows {
        print!("{:<12}", r.policy);
        for l in &r.levels {
            print!(" | {:>7.2}% {:>5.2} stp", 100.0 * l.accuracy, l.avg_steps);
        }
        println!();
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen { level, n, seed, out } => {
            let gen = generator();
            let mut buf = Vec::new();
            for i in 0..n {
                let s = rng::item_seed(seed, "gen", i);
                let sample = gen.generate(level, &mut rng::from_seed(s)).map_err(TrainError::from)?;
                let line = serde_json::to_string(&SampleRecord::new(&sample, gen.catalog(), s)).expect("serializable");
                buf.extend_from_slice(line.as_bytes());
                buf.push(b'\n');
            }
            match out {
                Some(p) => std::fs::write(&p, buf).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
                None => std::io::stdout().write_all(&buf).map_err(|e| Failure::Usage(e.to_string()))?,
            }
        }
        Command::Train { config, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            let outcome = train(&cfg)?;
            for row in &outcome.metrics {
                println!("{}", row.csv());
            }
            if let Some(dir) = &cfg.out_dir {
                println!("checkpoints written to {}", dir.display());
            }
        }
        Command::Eval { ckpt, level, n, filter, policy, seed, workers } => {
            let catalog = Catalog::builtin();
            let model = ckpt.as_deref().map(load_model).transpose()?;
            let holdout = match &ckpt {
                Some(c) => holdout_near(c, &catalog)?,
                None => HoldoutSet::empty(),
            };
            let gen = generator().with_holdout(holdout, filter);
            let need_model = || model.as_ref().ok_or_else(|| Failure::Usage(format!("policy `{policy}` needs --ckpt")));
            let p = match policy.as_str() {
                "ours" => EvalPolicy::Model(need_model()?),
                "passive" => EvalPolicy::Scripted(need_model()?, ScriptedPolicy::Passive),
                "random" => EvalPolicy::Scripted(need_model()?, ScriptedPolicy::Random),
                "exhaustive" => EvalPolicy::Scripted(need_model()?, ScriptedPolicy::Exhaustive),
                "oracle" => EvalPolicy::Oracle,
                other => return Err(Failure::Usage(format!("unknown policy `{other}`"))),
            };
            let report = evaluate(p, &gen, EvalSpec { level, filter }, n, seed, workers)?;
            println!("{}", json(&EvalReport { policy: p.name(), filter, levels: vec![report] }));
        }
        Command::Baselines { ckpt, n, seed, workers } => {
            let model = load_model(&ckpt)?;
            let rows = baselines_table(&model, &generator(), n, seed, workers)?;
            print_table(&rows);
        }
        Command::Matrix { dir, n, seed, workers } => {
            let models = load_stage_models(&dir)?;
            let rows = cross_stage_matrix(&models, &generator(), n, seed, workers)?;
            print_table(&rows);
        }
        Command::Holdout { per_pair, config, seeds, n, workers, out } => {
            if seeds.is_empty() {
                return Err(Failure::Usage("at least one seed is required".into()));
            }
            let cfg = load_config(config.as_deref())?;
            let report = holdout_experiment(&cfg, per_pair, &seeds, n, workers)?;
            let holdout_pairs = report.runs.first().map_or(0, |r| r.holdout_pairs);
            println!("{holdout_pairs} holdout pairs, mean over seeds {seeds:?}");
            for row in &report.mean {
                println!("  {row}");
            }
            if let Some(p) = out {
                std::fs::write(&p, json(&report)).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            }
        }
        Command::Gradcheck { instances, seed } => {
            let checks = layer_suite(seed, instances);
            let mut failed = Vec::new();
            for c in &checks {
                println!("{:<16} max rel error {:.3e}  {}", c.name, c.max_rel_error, if c.passed() { "ok" } else { "FAIL" });
                if !c.passed() {
                    failed.push(c.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Verify(failed.join(", ")));
            }
        }
        Command::OracleCheck { n, seed, workers } => {
            let gen = generator();
            let mut failed = Vec::new();
            for level in DataLevel::ALL {
                let r = evaluate(EvalPolicy::Oracle, &gen, EvalSpec { level, filter: HoldoutFilter::All }, n, seed, workers)?;
                println!("{r}");
                if r.accuracy < 1.0 {
                    failed.push(level.name());
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Verify(failed.join(", ")));
            }
        }
    }
    Ok(())
}
